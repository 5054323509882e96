//! Kronecker and Khatri-Rao kernels.
//!
//! Layout conventions, used by every other module:
//!
//! * [`kron_vec`]`(u, v)[i·n₂ + k] = u[i]·v[k]` (0-based), i.e. `v` varies
//!   fastest.
//! * [`matricize`] reshapes a length `n₁n₂` vector into the `n₂ × n₁` matrix
//!   whose column `i` is the block `x[i·n₂ .. (i+1)·n₂]`. With this layout
//!   `(pᵀ ⊗ qᵀ) x = qᵀ · Mat(x) · p` and `(P ⊗ Q) x = vec(Q · Mat(x) · Pᵀ)`.
//!   Since [`DenseMatrix`] is column-major, [`vectorize`] is the inverse.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

/// Column-major dense matrix.
pub type DenseMatrix<T> = DMatrix<T>;
/// Dense column vector.
pub type DenseVector<T> = DVector<T>;

/// Default limit on the number of entries a dense oracle may allocate.
pub const DEFAULT_MATERIALIZE_CAP: usize = 10_000_000;

/// `u ⊗ v`.
pub fn kron_vec<T: Real>(u: &[T], v: &[T]) -> DVector<T> {
    let mut out = DVector::zeros(u.len() * v.len());
    kron_vec_into(u, v, T::one(), out.as_mut_slice());
    out
}

/// `out += alpha · (u ⊗ v)`.
pub(crate) fn kron_vec_into<T: Real>(u: &[T], v: &[T], alpha: T, out: &mut [T]) {
    let n2 = v.len();
    for (i, &ui) in u.iter().enumerate() {
        let s = alpha * ui;
        for (o, &vk) in out[i * n2..(i + 1) * n2].iter_mut().zip(v) {
            *o += s * vk;
        }
    }
}

/// Reshapes `x` (length `n1·n2`) into the `n2 × n1` matrix described in the
/// module docs.
pub fn matricize<T: Real>(x: &[T], n1: usize, n2: usize) -> Result<DMatrix<T>> {
    check_dim("matricize", n1 * n2, x.len())?;
    Ok(DMatrix::from_column_slice(n2, n1, x))
}

/// Inverse of [`matricize`].
pub fn vectorize<T: Real>(m: &DMatrix<T>) -> DVector<T> {
    DVector::from_column_slice(m.as_slice())
}

/// Dense Kronecker product `A ⊗ B`.
pub fn kron<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    a.kronecker(b)
}

/// Row-wise Khatri-Rao (face-splitting) product: row `i` is `P[i,:] ⊗ Q[i,:]`.
pub fn row_khatri_rao<T: Real>(p: &DMatrix<T>, q: &DMatrix<T>) -> Result<DMatrix<T>> {
    check_dim("row_khatri_rao rows", p.nrows(), q.nrows())?;
    let (n1, n2) = (p.ncols(), q.ncols());
    let mut out = DMatrix::zeros(p.nrows(), n1 * n2);
    for i in 0..p.nrows() {
        for a in 0..n1 {
            let pa = p[(i, a)];
            for b in 0..n2 {
                out[(i, a * n2 + b)] = pa * q[(i, b)];
            }
        }
    }
    Ok(out)
}

/// Max-norm of `(A⊗B)(C⊗D) − (AC)⊗(BD)` on materialized matrices.
pub fn mixed_product_check<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    c: &DMatrix<T>,
    d: &DMatrix<T>,
) -> Result<T> {
    check_dim("mixed_product_check A·C", a.ncols(), c.nrows())?;
    check_dim("mixed_product_check B·D", b.ncols(), d.nrows())?;
    let lhs = kron(a, b) * kron(c, d);
    let rhs = kron(&(a * c), &(b * d));
    Ok((lhs - rhs).amax())
}

/// Rank-one tensor vector `b = f ⊗ g`.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorVector<T: Real> {
    pub f: DVector<T>,
    pub g: DVector<T>,
}

impl<T: Real> TensorVector<T> {
    pub fn new(f: DVector<T>, g: DVector<T>) -> Result<Self> {
        if f.is_empty() || g.is_empty() {
            return Err(Error::InvalidArgument("tensor vector factors must be nonempty".into()));
        }
        Ok(Self { f, g })
    }

    pub fn n1(&self) -> usize {
        self.f.len()
    }

    pub fn n2(&self) -> usize {
        self.g.len()
    }

    pub fn to_dense(&self) -> DVector<T> {
        kron_vec(self.f.as_slice(), self.g.as_slice())
    }

    /// `‖f ⊗ g‖² = ‖f‖²‖g‖²`.
    pub fn norm_squared(&self) -> T {
        self.f.norm_squared() * self.g.norm_squared()
    }
}

/// One factor pair `(D, E)` of a [`KhatriRaoOperator`]; column `j` of the
/// pair's contribution is `D[:,j] ⊗ E[:,j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct KhatriRaoTerm<T: Real> {
    pub left: DMatrix<T>,
    pub right: DMatrix<T>,
}

/// Implicit `n₁n₂ × p` matrix `Σ_ℓ D_ℓ ⊙ E_ℓ` (column-wise Khatri-Rao
/// products). For a single term this is `A = F ⊙ G` with `a_j = f_j ⊗ g_j`.
///
/// The full-height matrix is only formed by [`KhatriRaoOperator::materialize`],
/// which is meant for oracles and small problems.
#[derive(Clone, Debug, PartialEq)]
pub struct KhatriRaoOperator<T: Real> {
    n1: usize,
    n2: usize,
    p: usize,
    terms: Vec<KhatriRaoTerm<T>>,
}

impl<T: Real> KhatriRaoOperator<T> {
    /// Builds an operator from `(D_ℓ, E_ℓ)` pairs, all `n₁×p` and `n₂×p`.
    pub fn new(terms: Vec<(DMatrix<T>, DMatrix<T>)>) -> Result<Self> {
        let (d0, e0) = terms
            .first()
            .ok_or_else(|| Error::InvalidArgument("Khatri-Rao operator needs at least one term".into()))?;
        let (n1, n2, p) = (d0.nrows(), e0.nrows(), d0.ncols());
        if n1 == 0 || n2 == 0 || p == 0 {
            return Err(Error::InvalidArgument("Khatri-Rao factors must be nonempty".into()));
        }
        for (d, e) in &terms {
            check_dim("Khatri-Rao term n1", n1, d.nrows())?;
            check_dim("Khatri-Rao term n2", n2, e.nrows())?;
            check_dim("Khatri-Rao term p (left)", p, d.ncols())?;
            check_dim("Khatri-Rao term p (right)", p, e.ncols())?;
        }
        let terms = terms
            .into_iter()
            .map(|(left, right)| KhatriRaoTerm { left, right })
            .collect();
        Ok(Self { n1, n2, p, terms })
    }

    /// `A = F ⊙ G`.
    pub fn single(f: DMatrix<T>, g: DMatrix<T>) -> Result<Self> {
        Self::new(vec![(f, g)])
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    /// Ambient dimension `n₁n₂`.
    pub fn nrows(&self) -> usize {
        self.n1 * self.n2
    }

    /// Number of unknowns `p`.
    pub fn ncols(&self) -> usize {
        self.p
    }

    pub fn terms(&self) -> &[KhatriRaoTerm<T>] {
        &self.terms
    }

    pub fn scaled(&self, alpha: T) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| KhatriRaoTerm {
                left: &t.left * alpha,
                right: t.right.clone(),
            })
            .collect();
        Self {
            terms,
            ..self.clone()
        }
    }

    /// Column `j` as a dense vector.
    pub fn column(&self, j: usize) -> DVector<T> {
        let mut out = DVector::zeros(self.nrows());
        for t in &self.terms {
            kron_vec_into(
                t.left.column(j).as_slice(),
                t.right.column(j).as_slice(),
                T::one(),
                out.as_mut_slice(),
            );
        }
        out
    }

    /// Dense `n₁n₂ × p` matrix, refused when larger than `cap` entries.
    pub fn materialize(&self, cap: usize) -> Result<DMatrix<T>> {
        let requested = self.nrows().saturating_mul(self.p);
        if requested > cap {
            return Err(Error::CapExceeded { requested, cap });
        }
        let mut out = DMatrix::zeros(self.nrows(), self.p);
        for j in 0..self.p {
            out.set_column(j, &self.column(j));
        }
        Ok(out)
    }

    /// `A x`, computed as `Mat(Ax) = Σ_ℓ E_ℓ · diag(x) · D_ℓᵀ` without forming `A`.
    pub fn apply(&self, x: &[T]) -> Result<DVector<T>> {
        check_dim("Khatri-Rao apply", self.p, x.len())?;
        let mut mat = DMatrix::zeros(self.n2, self.n1);
        for t in &self.terms {
            let mut scaled = t.right.clone();
            for (j, &xj) in x.iter().enumerate() {
                scaled.column_mut(j).scale_mut(xj);
            }
            mat.gemm(T::one(), &scaled, &t.left.transpose(), T::one());
        }
        Ok(vectorize(&mat))
    }

    /// `A x` for a batch of coefficient vectors stored as columns of `xs`.
    pub fn apply_many(&self, xs: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_dim("Khatri-Rao apply_many", self.p, xs.nrows())?;
        let mut out = DMatrix::zeros(self.nrows(), xs.ncols());
        for (k, x) in xs.column_iter().enumerate() {
            let y = self.apply(x.clone_owned().as_slice())?;
            out.set_column(k, &y);
        }
        Ok(out)
    }

    /// `Aᵀ y`, with `(Aᵀy)_j = Σ_ℓ E_ℓ[:,j]ᵀ · Mat(y) · D_ℓ[:,j]`.
    pub fn apply_transpose(&self, y: &[T]) -> Result<DVector<T>> {
        check_dim("Khatri-Rao apply_transpose", self.nrows(), y.len())?;
        let mat = matricize(y, self.n1, self.n2)?;
        let mut out = DVector::zeros(self.p);
        for t in &self.terms {
            let md = &mat * &t.left;
            for j in 0..self.p {
                out[j] += t.right.column(j).dot(&md.column(j));
            }
        }
        Ok(out)
    }
}
