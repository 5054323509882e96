//! Structured random sketching for overdetermined least-squares systems whose
//! columns are Kronecker products, `a_j = f_j ⊗ g_j`, as produced by
//! linearized PDE inverse problems.
//!
//! The numerical core is generic over the scalar type (any [`Real`], in
//! practice `f32` or `f64`). The experiment drivers ([`synthbench`], [`eit`])
//! work in `f64` and the most common instantiations are re-exported below as
//! type aliases.
//!
//! Module map:
//!
//! * [`tensor_core`]: Kronecker / Khatri-Rao kernels, matricization and the
//!   implicit [`KhatriRaoOperator`].
//! * [`sketch`]: Case 1 (`P ⊗ Q`), Case 2 (row-wise `p_iᵀ ⊗ q_iᵀ`) and a
//!   streamed dense Gaussian reference.
//! * [`lsq`]: QR / truncated-SVD least squares and the relative residual error.
//! * [`embedding`]: distortion measurements, embedding-dimension formulas and
//!   Monte Carlo checks of the bilinear Gaussian statistic `ζ = ξᵀΣη`.
//! * [`synthbench`]: synthetic problems and the `r` / `n` / `p` sweeps.
//! * [`eit`]: Q1 finite elements on the unit square and the linearized EIT
//!   system.

pub mod embedding;
pub mod eit;
pub mod error;
pub mod lsq;
pub mod output;
pub mod rng;
pub mod scalar;
pub mod sketch;
pub mod stats;
pub mod synthbench;
pub mod tensor_core;

pub use error::{Error, Result};
pub use scalar::Real;
pub use sketch::{Sketch, SketchedSystem, Strategy};
pub use tensor_core::{DenseMatrix, DenseVector, KhatriRaoOperator, TensorVector};

/// Double-precision Khatri-Rao operator.
pub type KhatriRaoOperatorF64 = KhatriRaoOperator<f64>;
/// Single-precision Khatri-Rao operator.
pub type KhatriRaoOperatorF32 = KhatriRaoOperator<f32>;
/// Double-precision sketch.
pub type SketchF64 = Sketch<f64>;
/// Single-precision sketch.
pub type SketchF32 = Sketch<f32>;
/// Double-precision least-squares solution.
pub type LsSolutionF64 = lsq::LsSolution<f64>;
/// Double-precision tensor vector.
pub type TensorVectorF64 = TensorVector<f64>;
