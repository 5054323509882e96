//! Subspace-embedding diagnostics.
//!
//! A sketch `S` is an `(ε, δ)` embedding of a subspace when, with probability
//! at least `1 − δ`, `|‖Sy‖² − ‖y‖²| ≤ ε‖y‖²` for every `y` in it. This
//! module measures that distortion (sampled over the unit sphere, or exactly
//! through the eigenvalues of `UᵀSᵀSU − I`), evaluates the sufficient row
//! counts for the Gaussian, Case 1 and Case 2 constructions, and simulates the
//! bilinear statistic `ζ = ξᵀΣη` whose squares govern the Case 2 norm.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::rng::{gaussian_matrix, normal, stream, stream_rng, trial_seed, unit_sphere};
use crate::scalar::{cast, to_f64, Real};
use crate::sketch::{Case2Sketch, Sketch};
use crate::stats::{ks_two_sample, mean, variance};
use crate::tensor_core::{matricize, vectorize};

/// `|‖Sy‖² − ‖y‖²| / ‖y‖²`.
pub fn distortion<T: Real>(sketch: &Sketch<T>, y: &DVector<T>) -> Result<T> {
    let ny = y.norm_squared();
    if ny <= T::zero() {
        return Err(Error::InvalidArgument("distortion of the zero vector is undefined".into()));
    }
    let sy = sketch.apply_to_dense_vec(y)?;
    Ok((sy.norm_squared() - ny).abs() / ny)
}

/// Orthonormal bases `U_F`, `U_G` of `Range(F)` and `Range(G)`;
/// `U_F ⊗ U_G` is then an orthonormal basis of `Range(F ⊗ G)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RangeBasis<T: Real> {
    pub u_f: DMatrix<T>,
    pub u_g: DMatrix<T>,
}

impl<T: Real> RangeBasis<T> {
    /// Checks `UᵀU = I` for both factors to within `tol` (max-norm).
    pub fn from_orthonormal(u_f: DMatrix<T>, u_g: DMatrix<T>, tol: f64) -> Result<Self> {
        for (name, u) in [("U_F", &u_f), ("U_G", &u_g)] {
            if u.ncols() == 0 || u.ncols() > u.nrows() {
                return Err(Error::InvalidArgument(format!("{name} must have between 1 and nrows columns")));
            }
            let gram = u.transpose() * u - DMatrix::identity(u.ncols(), u.ncols());
            if to_f64(gram.amax()) > tol {
                return Err(Error::InvalidArgument(format!("{name} columns are not orthonormal")));
            }
        }
        Ok(Self { u_f, u_g })
    }

    /// Left singular vectors of full-column-rank `F` and `G`.
    pub fn from_factors(f: &DMatrix<T>, g: &DMatrix<T>) -> Result<Self> {
        let u_f = orthonormal_basis(f, 1e-12)?;
        let u_g = orthonormal_basis(g, 1e-12)?;
        if u_f.ncols() < f.ncols() || u_g.ncols() < g.ncols() {
            return Err(Error::Degenerate("factor matrices must have full column rank".into()));
        }
        Ok(Self { u_f, u_g })
    }

    pub fn n1(&self) -> usize {
        self.u_f.nrows()
    }

    pub fn n2(&self) -> usize {
        self.u_g.nrows()
    }

    /// Dimension of the spanned subspace.
    pub fn dim(&self) -> usize {
        self.u_f.ncols() * self.u_g.ncols()
    }

    /// `(U_F ⊗ U_G) x`, computed as `vec(U_G · Mat(x) · U_Fᵀ)`.
    pub fn embed(&self, x: &DVector<T>) -> Result<DVector<T>> {
        check_dim("range basis coordinates", self.dim(), x.len())?;
        let mat = matricize(x.as_slice(), self.u_f.ncols(), self.u_g.ncols())?;
        Ok(vectorize(&(&self.u_g * mat * self.u_f.transpose())))
    }

    /// `U_F ⊗ U_G` as a dense `n₁n₂ × p_F p_G` matrix.
    pub fn to_dense(&self) -> DMatrix<T> {
        self.u_f.kronecker(&self.u_g)
    }
}

/// Orthonormal basis of `Range(M)` from the left singular vectors whose
/// singular values exceed `rcond·σ_max`.
pub fn orthonormal_basis<T: Real>(m: &DMatrix<T>, rcond: f64) -> Result<DMatrix<T>> {
    let svd = m
        .clone()
        .try_svd(true, false, T::default_epsilon(), 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.iter().cloned().fold(T::zero(), |a, b| a.max(b));
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > smax * cast::<T>(rcond) && svd.singular_values[k] > T::zero())
        .collect();
    if keep.is_empty() {
        return Err(Error::Degenerate("matrix has an empty range".into()));
    }
    Ok(DMatrix::from_columns(&keep.iter().map(|&k| u.column(k)).collect::<Vec<_>>()))
}

/// Empirical lower bound on `sup_{y ∈ Range} |‖Sy‖² − ‖y‖²|/‖y‖²` from
/// `n_samples` uniform directions `y = (U_F ⊗ U_G)x`, `x` on the unit sphere.
/// Samples for a given seed form a fixed sequence, so the value is
/// nondecreasing in `n_samples`.
pub fn sup_distortion_sampled<T: Real>(
    sketch: &Sketch<T>,
    basis: &RangeBasis<T>,
    n_samples: usize,
    seed: u64,
) -> Result<T> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    let mut rng = stream_rng(seed, stream::SPHERE);
    let mut worst = T::zero();
    for _ in 0..n_samples {
        let x: DVector<T> = unit_sphere(&mut rng, basis.dim());
        let d = distortion(sketch, &basis.embed(&x)?)?;
        worst = worst.max(d);
    }
    Ok(worst)
}

/// Exact `sup |‖Sy‖² − ‖y‖²|/‖y‖²` over `Range(U)` for `U` with orthonormal
/// columns: the largest `|λ|` of `(SU)ᵀ(SU) − I`.
pub fn sup_distortion_exact<T: Real>(sketch: &Sketch<T>, basis: &DMatrix<T>) -> Result<T> {
    let su = sketch.apply_to_dense_matrix(basis)?;
    let d = basis.ncols();
    let gram = su.transpose() * su - DMatrix::identity(d, d);
    let eig = SymmetricEigen::new(gram);
    Ok(eig.eigenvalues.iter().fold(T::zero(), |a, &l| a.max(l.abs())))
}

fn check_eps_delta(eps: f64, delta: f64, c: f64) -> Result<()> {
    // ε = δ = 1/2 is admitted as the closed end of the range.
    if !(eps > 0.0 && eps <= 0.5) {
        return Err(Error::InvalidArgument(format!("eps must lie in (0, 1/2], got {eps}")));
    }
    if !(delta > 0.0 && delta <= 0.5) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1/2], got {delta}")));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidArgument(format!("constant C must be positive, got {c}")));
    }
    Ok(())
}

fn ceil_count(v: f64) -> Result<usize> {
    if !v.is_finite() || v > usize::MAX as f64 {
        return Err(Error::InvalidArgument(format!("row count {v} is not representable")));
    }
    Ok(v.ceil() as usize)
}

/// Rows sufficient for a dense Gaussian `(ε, δ)` embedding of a
/// `p`-dimensional subspace: `⌈C/ε² (|ln δ| + p)⌉`.
pub fn embed_dim_gaussian(eps: f64, delta: f64, p: usize, c: f64) -> Result<usize> {
    check_eps_delta(eps, delta, c)?;
    ceil_count(c / (eps * eps) * (delta.ln().abs() + p as f64))
}

/// Case 1 factor row counts `r₁ = r₂ = ⌈C/ε² (|ln δ| + p)⌉`. For the
/// augmented system `[A, b]` pass `p + 1`.
pub fn embed_dim_case1(eps: f64, delta: f64, p: usize, c: f64) -> Result<(usize, usize)> {
    let r = embed_dim_gaussian(eps, delta, p, c)?;
    Ok((r, r))
}

/// Case 2 row count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Case2Dimension {
    pub r: usize,
    /// False when `p < 6`, outside the range the bound was established for.
    pub supported: bool,
}

/// Case 2 row count `⌈C · max{(|ln δ| + p²)³/ε, ε^{-5/2}}⌉`. For the
/// augmented system `[A, b]` pass `p + 1`.
pub fn embed_dim_case2(eps: f64, delta: f64, p: usize, c: f64) -> Result<Case2Dimension> {
    check_eps_delta(eps, delta, c)?;
    let pf = p as f64;
    let first = (delta.ln().abs() + pf * pf).powi(3) / eps;
    let second = eps.powf(-2.5);
    let supported = p >= 6;
    if !supported {
        log::warn!("case 2 row bound evaluated for p = {p} < 6, outside its supported range");
    }
    Ok(Case2Dimension {
        r: ceil_count(c * first.max(second))?,
        supported,
    })
}

/// Diagonal `Σ = diag(σ)` with nonincreasing `σ ≥ 0` and `Σσᵢ² = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaSpectrum {
    values: Vec<f64>,
}

impl SigmaSpectrum {
    /// Validates a spectrum that is already normalized (to within 1e-12).
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("spectrum must be nonempty".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("spectrum entries must be finite and nonnegative".into()));
        }
        let total: f64 = values.iter().map(|v| v * v).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("Σσ² = {total}, expected 1")));
        }
        values.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { values })
    }

    /// Rescales arbitrary nonnegative weights to unit trace of `Σ²`.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        let total: f64 = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(total > 0.0) {
            return Err(Error::InvalidArgument("spectrum must have a nonzero entry".into()));
        }
        let mut values: Vec<f64> = values.into_iter().map(|v| v.abs() / total).collect();
        let s: f64 = values.iter().map(|v| v * v).sum();
        // one more pass so the invariant holds to rounding
        values.iter_mut().for_each(|v| *v /= s.sqrt());
        Self::new(values)
    }

    /// `σ = e₁` in `R^p`.
    pub fn single(p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidArgument("p must be at least 1".into()));
        }
        let mut v = vec![0.0; p];
        v[0] = 1.0;
        Self::new(v)
    }

    /// `σᵢ = 1/√p`.
    pub fn uniform(p: usize) -> Result<Self> {
        Self::normalized(vec![1.0; p])
    }

    /// Random spectrum: absolute Gaussian weights, normalized.
    pub fn random<R: Rng + ?Sized>(p: usize, rng: &mut R) -> Result<Self> {
        let raw: Vec<f64> = (0..p).map(|_| normal::<f64, _>(rng).abs() + 1e-3).collect();
        Self::normalized(raw)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn p(&self) -> usize {
        self.values.len()
    }

    /// `E[ζ⁴] = 3 + 6Σσᵢ⁴` for this spectrum.
    pub fn exact_fourth_moment(&self) -> f64 {
        3.0 + 6.0 * self.values.iter().map(|v| v.powi(4)).sum::<f64>()
    }

    /// One draw of `ζ = Σ σᵢ ξᵢ ηᵢ`.
    pub fn draw_zeta<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.values
            .iter()
            .map(|&s| {
                let xi: f64 = normal(rng);
                let eta: f64 = normal(rng);
                s * xi * eta
            })
            .sum()
    }
}

/// `P(|ζ| > t)` bound for `t ≥ √p`; `None` below `√p` where none is stated.
pub fn zeta_tail_bound(t: f64, p: usize) -> Option<f64> {
    let sp = (p as f64).sqrt();
    if t < sp {
        None
    } else if t <= 2.0 * sp {
        Some(2.0 * (-(t - sp).powi(2) / (4.0 * sp)).exp())
    } else {
        Some(2.0 * (-(2.0 * t - 3.0 * sp) / 4.0).exp())
    }
}

/// Smallest `r` for which the sample-mean tail bound below applies:
/// `8·3^{3/2}·max{t^{-5/2}, p^{3/2}/t}`.
pub fn zeta_mean_min_rows(t: f64, p: usize) -> f64 {
    8.0 * 3f64.powf(1.5) * t.powf(-2.5).max((p as f64).powf(1.5) / t)
}

/// `P(|(1/r)Σ(ζᵢ² − 1)| > t) ≤ 5r·exp(¾√p)·exp(−½ r^{1/3} t^{1/3})`, for
/// `t ∈ (0, 1]` and `r` at least [`zeta_mean_min_rows`]. `None` outside that
/// regime.
pub fn zeta_mean_tail_bound(t: f64, p: usize, r: usize) -> Option<f64> {
    if !(t > 0.0 && t <= 1.0) || (r as f64) < zeta_mean_min_rows(t, p) {
        return None;
    }
    let rf = r as f64;
    Some(5.0 * rf * (0.75 * (p as f64).sqrt()).exp() * (-0.5 * rf.cbrt() * t.cbrt()).exp())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TailCount {
    pub t: f64,
    pub exceedances: usize,
    pub frequency: f64,
    /// Standard error of `frequency` as a Bernoulli mean.
    pub std_error: f64,
    pub bound: Option<f64>,
}

/// Moments and tail counts of a `ζ` sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ZetaStats {
    pub n_draws: usize,
    /// Sample mean of `ζ²`.
    pub m2: f64,
    /// Sample mean of `ζ⁴`.
    pub m4: f64,
    /// Sample variance of `ζ²`.
    pub var_zeta2: f64,
    /// Standard error of `m2`.
    pub se_m2: f64,
    /// Standard error of `m4` (from the sample variance of `ζ⁴`).
    pub se_m4: f64,
    /// Standard error of `var_zeta2`, from the fourth central moment of `ζ²`.
    pub se_var_zeta2: f64,
    pub tails: Vec<TailCount>,
}

/// Draws `n_draws` values of `ζ = ξᵀΣη` and summarizes them.
pub fn zeta_sample(sigma: &SigmaSpectrum, n_draws: usize, seed: u64, thresholds: &[f64]) -> Result<ZetaStats> {
    if n_draws == 0 {
        return Err(Error::InvalidArgument("n_draws must be at least 1".into()));
    }
    let mut rng = stream_rng(seed, stream::ZETA);
    let mut z2 = Vec::with_capacity(n_draws);
    let mut exceed = vec![0usize; thresholds.len()];
    for _ in 0..n_draws {
        let z = sigma.draw_zeta(&mut rng);
        for (c, &t) in exceed.iter_mut().zip(thresholds) {
            if z.abs() > t {
                *c += 1;
            }
        }
        z2.push(z * z);
    }
    let n = n_draws as f64;
    let m2 = mean(&z2);
    let z4: Vec<f64> = z2.iter().map(|v| v * v).collect();
    let m4 = mean(&z4);
    let var_zeta2 = variance(&z2);
    let mu4: f64 = z2.iter().map(|v| (v - m2).powi(4)).sum::<f64>() / n;
    let tails = thresholds
        .iter()
        .zip(exceed)
        .map(|(&t, c)| {
            let freq = c as f64 / n;
            TailCount {
                t,
                exceedances: c,
                frequency: freq,
                std_error: (freq * (1.0 - freq) / n).sqrt(),
                bound: zeta_tail_bound(t, sigma.p()),
            }
        })
        .collect();
    Ok(ZetaStats {
        n_draws,
        m2,
        m4,
        var_zeta2,
        se_m2: (var_zeta2 / n).sqrt(),
        se_m4: (variance(&z4) / n).sqrt(),
        se_var_zeta2: ((mu4 - var_zeta2 * var_zeta2).max(0.0) / n).sqrt(),
        tails,
    })
}

/// Two independent routes to the law of `‖Sy‖²` under Case 2.
#[derive(Clone, Debug, PartialEq)]
pub struct NormLawComparison {
    /// `‖Sy‖²` for independently drawn Case 2 sketches and a fixed unit `y`
    /// with `Mat(y) = U diag(σ) Vᵀ`.
    pub sketch_norms: Vec<f64>,
    /// `(1/r) Σ ζᵢ²` simulated directly.
    pub zeta_means: Vec<f64>,
    pub ks_distance: f64,
    pub mean_sketch: f64,
    pub mean_zeta: f64,
}

/// Samples `‖Sy‖²` through the Case 2 sketch and `(1/r)Σζᵢ²` directly and
/// compares the two empirical laws. The ambient factors have `n₁ = n₂ = p`
/// and random orthogonal `U`, `V`.
pub fn case2_norm_distribution_check(
    sigma: &SigmaSpectrum,
    r: usize,
    n_draws: usize,
    seed: u64,
) -> Result<NormLawComparison> {
    if r == 0 || n_draws == 0 {
        return Err(Error::InvalidArgument("r and n_draws must be at least 1".into()));
    }
    let p = sigma.p();
    let y = spectral_unit_vector(sigma, seed)?;
    let mut sketch_norms = Vec::with_capacity(n_draws);
    for k in 0..n_draws {
        let s = Sketch::Case2(Case2Sketch::<f64>::generate(r, p, p, trial_seed(seed, k))?);
        sketch_norms.push(s.apply_to_dense_vec(&y)?.norm_squared());
    }
    let mut rng = stream_rng(seed, stream::ZETA);
    let zeta_means: Vec<f64> = (0..n_draws)
        .map(|_| (0..r).map(|_| sigma.draw_zeta(&mut rng).powi(2)).sum::<f64>() / r as f64)
        .collect();
    Ok(NormLawComparison {
        ks_distance: ks_two_sample(&sketch_norms, &zeta_means),
        mean_sketch: mean(&sketch_norms),
        mean_zeta: mean(&zeta_means),
        sketch_norms,
        zeta_means,
    })
}

/// Unit `y ∈ R^{p²}` whose matricization has singular values `σ`.
pub fn spectral_unit_vector(sigma: &SigmaSpectrum, seed: u64) -> Result<DVector<f64>> {
    let p = sigma.p();
    let mut rng = stream_rng(seed, stream::PROBLEM);
    let u = gaussian_matrix::<f64, _>(&mut rng, p, p).qr().q();
    let v = gaussian_matrix::<f64, _>(&mut rng, p, p).qr().q();
    let s = DMatrix::from_diagonal(&DVector::from_column_slice(sigma.values()));
    Ok(vectorize(&(u * s * v.transpose())))
}
