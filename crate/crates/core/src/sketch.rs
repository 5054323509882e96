//! Random sketches `S ∈ R^{r × n₁n₂}` and their structured application.
//!
//! Three strategies are provided:
//!
//! * **Case 1**: `S = P ⊗ Q` with `P = R/√r₁ ∈ R^{r₁×n₁}` and `Q = R'/√r₂ ∈ R^{r₂×n₂}`.
//!   Applied to a Khatri-Rao column through the mixed product
//!   `(P⊗Q)(f⊗g) = (Pf)⊗(Qg)`.
//! * **Case 2**: row `i` of `S` is `(1/√r)·p_iᵀ ⊗ q_iᵀ` with independent Gaussian
//!   `p_i, q_i`. Entry `(i, j)` of `SA` is `(1/√r)(p_iᵀf_j)(q_iᵀg_j)`.
//! * **Dense Gaussian**: unstructured `S = R/√r`. Rows are regenerated from
//!   `(seed, row)` on demand and never stored as a whole.
//!
//! All strategies satisfy `E‖Sy‖² = ‖y‖²`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::{fill_normal, gaussian_matrix, stream, stream_rng};
use crate::scalar::{cast, Real};
use crate::tensor_core::{kron, matricize, row_khatri_rao, vectorize, KhatriRaoOperator, TensorVector, DEFAULT_MATERIALIZE_CAP};

/// Target number of entries in one block of regenerated dense Gaussian rows.
const DENSE_BLOCK_ENTRIES: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Case1,
    Case2,
    DenseGaussian,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Case1, Strategy::Case2, Strategy::DenseGaussian];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Case1 => "case1",
            Strategy::Case2 => "case2",
            Strategy::DenseGaussian => "dense-gaussian",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "case1" | "case-1" | "kron" => Ok(Strategy::Case1),
            "case2" | "case-2" | "rowwise" => Ok(Strategy::Case2),
            "dense-gaussian" | "dense" | "gaussian" => Ok(Strategy::DenseGaussian),
            other => Err(Error::InvalidArgument(format!(
                "unknown strategy '{other}' (expected case1, case2 or dense-gaussian)"
            ))),
        }
    }
}

/// Number of sketch rows. Case 1 may be given an explicit `(r₁, r₂)` split.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SketchRows {
    Total(usize),
    Split(usize, usize),
}

impl SketchRows {
    pub fn total(self) -> usize {
        match self {
            SketchRows::Total(r) => r,
            SketchRows::Split(r1, r2) => r1 * r2,
        }
    }
}

/// Balanced Case 1 split: `r₁ = ⌊√r⌋`, `r₂ = ⌊r / r₁⌋`, so `r₁r₂ ≤ r` and
/// `r₁ = r₂ = √r` for perfect squares.
pub fn case1_split(r: usize) -> (usize, usize) {
    if r == 0 {
        return (0, 0);
    }
    let mut r1 = (r as f64).sqrt().floor() as usize;
    while r1 * r1 > r {
        r1 -= 1;
    }
    while (r1 + 1) * (r1 + 1) <= r {
        r1 += 1;
    }
    (r1, r / r1)
}

/// `S = P ⊗ Q` with both factors already scaled.
#[derive(Clone, Debug, PartialEq)]
pub struct Case1Sketch<T: Real> {
    pub p: DMatrix<T>,
    pub q: DMatrix<T>,
    pub seed: u64,
}

impl<T: Real> Case1Sketch<T> {
    pub fn generate(r1: usize, r2: usize, n1: usize, n2: usize, seed: u64) -> Result<Self> {
        nonzero(&[("r1", r1), ("r2", r2), ("n1", n1), ("n2", n2)])?;
        let p: DMatrix<T> = gaussian_matrix(&mut stream_rng(seed, stream::CASE1_LEFT), r1, n1);
        let q: DMatrix<T> = gaussian_matrix(&mut stream_rng(seed, stream::CASE1_RIGHT), r2, n2);
        Ok(Self {
            p: p * inv_sqrt::<T>(r1),
            q: q * inv_sqrt::<T>(r2),
            seed,
        })
    }

    /// Sketch from explicit (already scaled) factors.
    pub fn from_factors(p: DMatrix<T>, q: DMatrix<T>) -> Result<Self> {
        nonzero(&[("r1", p.nrows()), ("r2", q.nrows()), ("n1", p.ncols()), ("n2", q.ncols())])?;
        Ok(Self { p, q, seed: 0 })
    }

    pub fn r1(&self) -> usize {
        self.p.nrows()
    }

    pub fn r2(&self) -> usize {
        self.q.nrows()
    }
}

/// Row-wise Khatri-Rao sketch; `p_vecs`/`q_vecs` hold `p_iᵀ`/`q_iᵀ` as rows,
/// unscaled, and `scale` is the global factor (`1/√r` when generated).
#[derive(Clone, Debug, PartialEq)]
pub struct Case2Sketch<T: Real> {
    pub p_vecs: DMatrix<T>,
    pub q_vecs: DMatrix<T>,
    pub scale: T,
    pub seed: u64,
}

impl<T: Real> Case2Sketch<T> {
    pub fn generate(r: usize, n1: usize, n2: usize, seed: u64) -> Result<Self> {
        nonzero(&[("r", r), ("n1", n1), ("n2", n2)])?;
        Ok(Self {
            p_vecs: gaussian_matrix(&mut stream_rng(seed, stream::CASE2_LEFT), r, n1),
            q_vecs: gaussian_matrix(&mut stream_rng(seed, stream::CASE2_RIGHT), r, n2),
            scale: inv_sqrt(r),
            seed,
        })
    }

    pub fn from_vectors(p_vecs: DMatrix<T>, q_vecs: DMatrix<T>, scale: T) -> Result<Self> {
        check_dim("case2 row count", p_vecs.nrows(), q_vecs.nrows())?;
        nonzero(&[("r", p_vecs.nrows()), ("n1", p_vecs.ncols()), ("n2", q_vecs.ncols())])?;
        Ok(Self {
            p_vecs,
            q_vecs,
            scale,
            seed: 0,
        })
    }

    pub fn rows(&self) -> usize {
        self.p_vecs.nrows()
    }
}

/// Unstructured `S = R/√r`, streamed row by row. Row `i` is drawn from its own
/// generator `(seed, DENSE_ROW_BASE + i)`, so rows can be produced in any
/// order or in parallel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenseGaussianSketch {
    pub r: usize,
    pub n1: usize,
    pub n2: usize,
    pub seed: u64,
}

impl DenseGaussianSketch {
    pub fn new(r: usize, n1: usize, n2: usize, seed: u64) -> Result<Self> {
        nonzero(&[("r", r), ("n1", n1), ("n2", n2)])?;
        Ok(Self { r, n1, n2, seed })
    }

    pub fn ambient(&self) -> usize {
        self.n1 * self.n2
    }

    /// Writes row `i` (scaled) into `out`.
    pub fn fill_row<T: Real>(&self, i: usize, out: &mut [T]) {
        let mut rng = stream_rng(self.seed, stream::DENSE_ROW_BASE + i as u64);
        fill_normal(&mut rng, out);
        let s: T = inv_sqrt(self.r);
        for v in out.iter_mut() {
            *v *= s;
        }
    }

    /// Rows `start..start + len` as a `len × n` matrix.
    pub fn row_block<T: Real>(&self, start: usize, len: usize) -> DMatrix<T> {
        let n = self.ambient();
        // generated row-major then transposed into place
        let mut buf = vec![T::zero(); len * n];
        for (k, chunk) in buf.chunks_mut(n).enumerate() {
            self.fill_row(start + k, chunk);
        }
        DMatrix::from_row_slice(len, n, &buf)
    }

    fn block_rows(&self) -> usize {
        (DENSE_BLOCK_ENTRIES / self.ambient().max(1)).clamp(1, self.r)
    }

    /// `S·M` for a dense `n × k` matrix `M`, one block of rows at a time.
    pub fn apply_dense<T: Real>(&self, m: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_dim("dense Gaussian sketch ambient", self.ambient(), m.nrows())?;
        let block = self.block_rows();
        let starts: Vec<usize> = (0..self.r).step_by(block).collect();
        let blocks: Vec<DMatrix<T>> = starts
            .par_iter()
            .map(|&s| {
                let len = block.min(self.r - s);
                self.row_block::<T>(s, len) * m
            })
            .collect();
        let mut out = DMatrix::zeros(self.r, m.ncols());
        for (s, b) in starts.into_iter().zip(blocks) {
            out.rows_mut(s, b.nrows()).copy_from(&b);
        }
        Ok(out)
    }
}

/// A sketch given as an explicit dense matrix (e.g. the identity, or a
/// matrix built elsewhere).
#[derive(Clone, Debug, PartialEq)]
pub struct ExplicitSketch<T: Real> {
    pub matrix: DMatrix<T>,
    pub n1: usize,
    pub n2: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Sketch<T: Real> {
    Case1(Case1Sketch<T>),
    Case2(Case2Sketch<T>),
    DenseGaussian(DenseGaussianSketch),
    Explicit(ExplicitSketch<T>),
}

/// The reduced system `(SA, Sb)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SketchedSystem<T: Real> {
    pub sa: DMatrix<T>,
    pub sb: DVector<T>,
}

/// Right-hand side of a least-squares problem over `R^{n₁n₂}`.
#[derive(Clone, Debug, PartialEq)]
pub enum Rhs<T: Real> {
    Dense(DVector<T>),
    Tensor(TensorVector<T>),
}

impl<T: Real> Rhs<T> {
    pub fn len(&self) -> usize {
        match self {
            Rhs::Dense(v) => v.len(),
            Rhs::Tensor(t) => t.n1() * t.n2(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_dense(&self) -> DVector<T> {
        match self {
            Rhs::Dense(v) => v.clone(),
            Rhs::Tensor(t) => t.to_dense(),
        }
    }
}

impl<T: Real> Sketch<T> {
    /// Draws a sketch of the given strategy. `rows` may be a `Split` only for
    /// Case 1; a `Total(r)` for Case 1 uses [`case1_split`].
    pub fn generate(strategy: Strategy, rows: SketchRows, n1: usize, n2: usize, seed: u64) -> Result<Self> {
        match (strategy, rows) {
            (Strategy::Case1, SketchRows::Split(r1, r2)) => Case1Sketch::generate(r1, r2, n1, n2, seed).map(Sketch::Case1),
            (Strategy::Case1, SketchRows::Total(r)) => {
                let (r1, r2) = case1_split(r);
                Case1Sketch::generate(r1, r2, n1, n2, seed).map(Sketch::Case1)
            }
            (Strategy::Case2, SketchRows::Total(r)) => Case2Sketch::generate(r, n1, n2, seed).map(Sketch::Case2),
            (Strategy::DenseGaussian, SketchRows::Total(r)) => {
                DenseGaussianSketch::new(r, n1, n2, seed).map(Sketch::DenseGaussian)
            }
            (s, SketchRows::Split(..)) => Err(Error::InvalidArgument(format!(
                "an (r1, r2) split only applies to case1, not {s}"
            ))),
        }
    }

    pub fn explicit(matrix: DMatrix<T>, n1: usize, n2: usize) -> Result<Self> {
        check_dim("explicit sketch ambient", n1 * n2, matrix.ncols())?;
        Ok(Sketch::Explicit(ExplicitSketch { matrix, n1, n2 }))
    }

    /// `S = I` on `R^{n₁n₂}`.
    pub fn identity(n1: usize, n2: usize) -> Self {
        let n = n1 * n2;
        Sketch::Explicit(ExplicitSketch {
            matrix: DMatrix::identity(n, n),
            n1,
            n2,
        })
    }

    pub fn strategy(&self) -> Option<Strategy> {
        match self {
            Sketch::Case1(_) => Some(Strategy::Case1),
            Sketch::Case2(_) => Some(Strategy::Case2),
            Sketch::DenseGaussian(_) => Some(Strategy::DenseGaussian),
            Sketch::Explicit(_) => None,
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            Sketch::Case1(s) => s.r1() * s.r2(),
            Sketch::Case2(s) => s.rows(),
            Sketch::DenseGaussian(s) => s.r,
            Sketch::Explicit(s) => s.matrix.nrows(),
        }
    }

    /// `(r₁, r₂)` for Case 1.
    pub fn split(&self) -> Option<(usize, usize)> {
        match self {
            Sketch::Case1(s) => Some((s.r1(), s.r2())),
            _ => None,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            Sketch::Case1(s) => (s.p.ncols(), s.q.ncols()),
            Sketch::Case2(s) => (s.p_vecs.ncols(), s.q_vecs.ncols()),
            Sketch::DenseGaussian(s) => (s.n1, s.n2),
            Sketch::Explicit(s) => (s.n1, s.n2),
        }
    }

    pub fn ambient(&self) -> usize {
        let (n1, n2) = self.dims();
        n1 * n2
    }

    fn check_dims(&self, context: &'static str, n1: usize, n2: usize) -> Result<()> {
        let (s1, s2) = self.dims();
        check_dim(context, s1, n1)?;
        check_dim(context, s2, n2)
    }

    /// Dense `r × n₁n₂` matrix of the sketch (oracle path).
    pub fn to_dense(&self, cap: usize) -> Result<DMatrix<T>> {
        let requested = self.rows().saturating_mul(self.ambient());
        if requested > cap {
            return Err(Error::CapExceeded { requested, cap });
        }
        Ok(match self {
            Sketch::Case1(s) => kron(&s.p, &s.q),
            Sketch::Case2(s) => row_khatri_rao(&s.p_vecs, &s.q_vecs)? * s.scale,
            Sketch::DenseGaussian(s) => s.row_block(0, s.r),
            Sketch::Explicit(s) => s.matrix.clone(),
        })
    }

    /// `S·A` for a Khatri-Rao operator, without forming `A` for the
    /// structured strategies.
    pub fn apply_to_operator(&self, op: &KhatriRaoOperator<T>) -> Result<DMatrix<T>> {
        self.check_dims("sketch vs operator dims", op.n1(), op.n2())?;
        let p = op.ncols();
        match self {
            Sketch::Case1(s) => {
                let (r1, r2) = (s.r1(), s.r2());
                let mut out = DMatrix::zeros(r1 * r2, p);
                for t in op.terms() {
                    let pd = &s.p * &t.left;
                    let qe = &s.q * &t.right;
                    for j in 0..p {
                        let mut col = out.column_mut(j);
                        for a in 0..r1 {
                            let pa = pd[(a, j)];
                            for b in 0..r2 {
                                col[a * r2 + b] += pa * qe[(b, j)];
                            }
                        }
                    }
                }
                Ok(out)
            }
            Sketch::Case2(s) => {
                let mut out = DMatrix::zeros(s.rows(), p);
                for t in op.terms() {
                    let pd = &s.p_vecs * &t.left;
                    let qe = &s.q_vecs * &t.right;
                    out += pd.component_mul(&qe);
                }
                Ok(out * s.scale)
            }
            Sketch::DenseGaussian(s) => {
                let n = op.nrows();
                if n.saturating_mul(p) <= DEFAULT_MATERIALIZE_CAP {
                    return s.apply_dense(&op.materialize(DEFAULT_MATERIALIZE_CAP)?);
                }
                // Expand the operator a few columns at a time; the rows of S
                // are regenerated for each column block.
                let cols = (DEFAULT_MATERIALIZE_CAP / n).max(1);
                let mut out = DMatrix::zeros(s.r, p);
                for start in (0..p).step_by(cols) {
                    let len = cols.min(p - start);
                    let mut block = DMatrix::zeros(n, len);
                    for k in 0..len {
                        block.set_column(k, &op.column(start + k));
                    }
                    out.columns_mut(start, len).copy_from(&s.apply_dense(&block)?);
                }
                Ok(out)
            }
            Sketch::Explicit(s) => Ok(&s.matrix * op.materialize(usize::MAX)?),
        }
    }

    /// `S(f ⊗ g)`.
    pub fn apply_to_tensor_vec(&self, b: &TensorVector<T>) -> Result<DVector<T>> {
        self.check_dims("sketch vs tensor vector dims", b.n1(), b.n2())?;
        match self {
            Sketch::Case1(s) => {
                let pf = &s.p * &b.f;
                let qg = &s.q * &b.g;
                Ok(crate::tensor_core::kron_vec(pf.as_slice(), qg.as_slice()))
            }
            Sketch::Case2(s) => {
                let pf = &s.p_vecs * &b.f;
                let qg = &s.q_vecs * &b.g;
                Ok(pf.component_mul(&qg) * s.scale)
            }
            Sketch::DenseGaussian(_) | Sketch::Explicit(_) => self.apply_to_dense_vec(&b.to_dense()),
        }
    }

    /// `S y` for an arbitrary `y ∈ R^{n₁n₂}`, through `Mat(y)` for the
    /// structured strategies.
    pub fn apply_to_dense_vec(&self, y: &DVector<T>) -> Result<DVector<T>> {
        check_dim("sketch vs dense vector length", self.ambient(), y.len())?;
        let (n1, n2) = self.dims();
        match self {
            Sketch::Case1(s) => {
                let mat = matricize(y.as_slice(), n1, n2)?;
                Ok(vectorize(&(&s.q * mat * s.p.transpose())))
            }
            Sketch::Case2(s) => {
                let mat = matricize(y.as_slice(), n1, n2)?;
                // column i of M is Mat(y)·p_i
                let m = mat * s.p_vecs.transpose();
                let mut out = DVector::zeros(s.rows());
                for i in 0..s.rows() {
                    let mut acc = T::zero();
                    for k in 0..n2 {
                        acc += s.q_vecs[(i, k)] * m[(k, i)];
                    }
                    out[i] = acc * s.scale;
                }
                Ok(out)
            }
            Sketch::DenseGaussian(s) => {
                let m = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
                Ok(DVector::from_column_slice(s.apply_dense(&m)?.as_slice()))
            }
            Sketch::Explicit(s) => Ok(&s.matrix * y),
        }
    }

    /// `S` applied to a dense `n₁n₂ × k` matrix, column by column for the
    /// structured strategies.
    pub fn apply_to_dense_matrix(&self, m: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_dim("sketch vs dense matrix rows", self.ambient(), m.nrows())?;
        match self {
            Sketch::DenseGaussian(s) => s.apply_dense(m),
            Sketch::Explicit(s) => Ok(&s.matrix * m),
            _ => {
                let mut out = DMatrix::zeros(self.rows(), m.ncols());
                for (k, col) in m.column_iter().enumerate() {
                    out.set_column(k, &self.apply_to_dense_vec(&col.clone_owned())?);
                }
                Ok(out)
            }
        }
    }

    pub fn apply_to_rhs(&self, b: &Rhs<T>) -> Result<DVector<T>> {
        match b {
            Rhs::Dense(v) => self.apply_to_dense_vec(v),
            Rhs::Tensor(t) => self.apply_to_tensor_vec(t),
        }
    }

    /// Forms `(SA, Sb)`. The dense Gaussian strategy sketches `[A, b]` in a
    /// single pass over the rows of `S`.
    pub fn sketch_system(&self, op: &KhatriRaoOperator<T>, b: &Rhs<T>) -> Result<SketchedSystem<T>> {
        check_dim("right-hand side length", op.nrows(), b.len())?;
        let system = match self {
            Sketch::DenseGaussian(s) if op.nrows().saturating_mul(op.ncols() + 1) <= DEFAULT_MATERIALIZE_CAP => {
                self.check_dims("sketch vs operator dims", op.n1(), op.n2())?;
                let a = op.materialize(DEFAULT_MATERIALIZE_CAP)?;
                let aug = a.insert_column(op.ncols(), T::zero());
                let mut aug = aug;
                aug.set_column(op.ncols(), &b.to_dense());
                let sab = s.apply_dense(&aug)?;
                SketchedSystem {
                    sa: sab.columns(0, op.ncols()).into_owned(),
                    sb: sab.column(op.ncols()).into_owned(),
                }
            }
            _ => SketchedSystem {
                sa: self.apply_to_operator(op)?,
                sb: self.apply_to_rhs(b)?,
            },
        };
        if system.sa.nrows() < system.sa.ncols() {
            log::warn!(
                "sketched system has fewer rows ({}) than unknowns ({})",
                system.sa.nrows(),
                system.sa.ncols()
            );
        }
        Ok(system)
    }
}

fn inv_sqrt<T: Real>(r: usize) -> T {
    cast::<T>(1.0 / (r as f64).sqrt())
}

fn nonzero(dims: &[(&str, usize)]) -> Result<()> {
    match dims.iter().find(|(_, v)| *v == 0) {
        Some((name, _)) => Err(Error::InvalidArgument(format!("sketch dimension {name} must be at least 1"))),
        None => Ok(()),
    }
}
