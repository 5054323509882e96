//! Synthetic tensor-structured problems and the `r` / `n` / `p` sweeps.
//!
//! A problem is `A = F ⊙ G` with `F = U_F Σ_F V_Fᵀ`, `G = U_G Σ_G V_Gᵀ`, where
//! the orthonormal factors come from QR of Gaussian matrices and the singular
//! values are drawn from `N(1, 0.2²)`. The reference solution has entries from
//! `N(1, 0.5²)` and `b = A x_ref + noise·ξ`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsq::{relative_error, residual_sq_full, solve_ls, solve_sketched, DEFAULT_RCOND};
use crate::rng::{gaussian_matrix, gaussian_vector, stream, stream_rng, trial_seed};
use crate::sketch::{Rhs, Sketch, SketchRows, Strategy};
use crate::stats::median;
use crate::tensor_core::{KhatriRaoOperator, DEFAULT_MATERIALIZE_CAP};

pub const DEFAULT_NOISE: f64 = 1e-6;
/// Standard deviation of the factor singular values (variance 0.04).
pub const SINGULAR_VALUE_SD: f64 = 0.2;
/// Standard deviation of the reference solution entries (variance 0.25).
pub const X_REF_SD: f64 = 0.5;

/// Grids of the three synthetic experiments.
pub const R_GRID: [usize; 5] = [256, 1024, 4096, 16384, 65536];
pub const N_GRID: [usize; 5] = [50, 100, 150, 200, 250];
pub const N_SWEEP_ROWS: usize = 2209;
pub const P_GRID: [usize; 5] = [3, 6, 9, 12, 15];
pub const P_SWEEP_ROWS: usize = 4096;
pub const DEFAULT_TRIALS: usize = 10;

#[derive(Clone, Debug)]
pub struct SynthProblem {
    pub op: KhatriRaoOperator<f64>,
    pub x_ref: DVector<f64>,
    pub b: DVector<f64>,
    pub noise_level: f64,
    pub seed: u64,
    /// Orthonormal left factors `U_F`, `U_G`.
    pub u_f: DMatrix<f64>,
    pub u_g: DMatrix<f64>,
    /// Diagonals of `Σ_F`, `Σ_G`.
    pub sigma_f: Vec<f64>,
    pub sigma_g: Vec<f64>,
}

impl SynthProblem {
    pub fn f(&self) -> &DMatrix<f64> {
        &self.op.terms()[0].left
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.op.terms()[0].right
    }

    pub fn rhs(&self) -> Rhs<f64> {
        Rhs::Dense(self.b.clone())
    }
}

/// Draws a synthetic problem; everything is a function of `seed`.
pub fn gen_problem(n1: usize, n2: usize, p: usize, noise_level: f64, seed: u64) -> Result<SynthProblem> {
    if p == 0 || p > n1.min(n2) {
        return Err(Error::InvalidArgument(format!(
            "need 1 ≤ p ≤ min(n1, n2), got p = {p}, n1 = {n1}, n2 = {n2}"
        )));
    }
    if !(noise_level >= 0.0 && noise_level.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise level must be nonnegative, got {noise_level}")));
    }
    let mut rng = stream_rng(seed, stream::PROBLEM);
    let mut factor = |n: usize| {
        let u = gaussian_matrix::<f64, _>(&mut rng, n, p).qr().q();
        let v = gaussian_matrix::<f64, _>(&mut rng, p, p).qr().q();
        let s: DVector<f64> = gaussian_vector::<f64, _>(&mut rng, p).map(|z| 1.0 + SINGULAR_VALUE_SD * z);
        let m = &u * DMatrix::from_diagonal(&s) * v.transpose();
        (m, u, s.iter().cloned().collect::<Vec<_>>())
    };
    let (f, u_f, sigma_f) = factor(n1);
    let (g, u_g, sigma_g) = factor(n2);
    let x_ref = gaussian_vector::<f64, _>(&mut rng, p).map(|z| 1.0 + X_REF_SD * z);
    let op = KhatriRaoOperator::single(f, g)?;
    let mut b = op.apply(x_ref.as_slice())?;
    if noise_level > 0.0 {
        b += gaussian_vector::<f64, _>(&mut stream_rng(seed, stream::NOISE), b.len()) * noise_level;
    }
    Ok(SynthProblem {
        op,
        x_ref,
        b,
        noise_level,
        seed,
        u_f,
        u_g,
        sigma_f,
        sigma_g,
    })
}

/// A problem together with its full least-squares solution.
#[derive(Clone, Debug)]
pub struct PreparedProblem {
    pub problem: SynthProblem,
    pub x_star: DVector<f64>,
    /// `f(x*) = ‖Ax* − b‖²`.
    pub f_star: f64,
}

impl PreparedProblem {
    pub fn new(problem: SynthProblem, rcond: f64) -> Result<Self> {
        let a = problem.op.materialize(DEFAULT_MATERIALIZE_CAP)?;
        let full = solve_ls(&a, &problem.b, rcond)?;
        let f_star = residual_sq_full(&problem.op, &full.x, &problem.rhs())?;
        Ok(Self {
            problem,
            x_star: full.x,
            f_star,
        })
    }
}

/// One measurement: the relative residual error of one sketched solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub strategy: Strategy,
    pub r: usize,
    pub r1: Option<usize>,
    pub r2: Option<usize>,
    pub n1: usize,
    pub n2: usize,
    pub p: usize,
    pub trial: usize,
    pub rel_error: f64,
    pub wall_time_ms: f64,
}

/// Header line of the sweep CSV.
pub const SWEEP_CSV_HEADER: &str = "strategy,r,r1,r2,n1,n2,p,trial,rel_error,wall_time_ms";

/// Result of a sketched solve, shared by the synthetic and EIT drivers.
#[derive(Clone, Debug)]
pub struct TrialOutcome {
    pub record: SweepRecord,
    pub x_s: DVector<f64>,
}

/// Sketches `(A, b)`, solves, and scores `x_s` against `f(x*)`. The
/// strategy is only a label, so explicit sketches can be scored too.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sketched_trial(
    op: &KhatriRaoOperator<f64>,
    rhs: &Rhs<f64>,
    f_star: f64,
    sketch: &Sketch<f64>,
    strategy: Strategy,
    r_label: usize,
    trial: usize,
    rcond: f64,
    record_timing: bool,
) -> Result<TrialOutcome> {
    let start = Instant::now();
    let system = sketch.sketch_system(op, rhs)?;
    let sol = solve_sketched(&system, rcond)?;
    let f_xs = residual_sq_full(op, &sol.x, rhs)?;
    let err = relative_error(f_xs, f_star)?;
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    let (r1, r2) = match sketch.split() {
        Some((a, b)) => (Some(a), Some(b)),
        None => (None, None),
    };
    Ok(TrialOutcome {
        record: SweepRecord {
            strategy,
            r: r_label,
            r1,
            r2,
            n1: op.n1(),
            n2: op.n2(),
            p: op.ncols(),
            trial,
            rel_error: err.value,
            wall_time_ms: if record_timing { elapsed } else { 0.0 },
        },
        x_s: sol.x,
    })
}

/// Runs one sketched solve on a prepared problem.
pub fn run_trial(
    prepared: &PreparedProblem,
    strategy: Strategy,
    rows: SketchRows,
    trial: usize,
    seed: u64,
    rcond: f64,
    record_timing: bool,
) -> Result<SweepRecord> {
    let op = &prepared.problem.op;
    if rows.total() < op.ncols() {
        return Err(Error::InvalidArgument(format!(
            "sketch rows r = {} below the number of unknowns p = {}",
            rows.total(),
            op.ncols()
        )));
    }
    let sketch = Sketch::generate(strategy, rows, op.n1(), op.n2(), seed)?;
    sketched_trial(
        op,
        &prepared.problem.rhs(),
        prepared.f_star,
        &sketch,
        strategy,
        rows.total(),
        trial,
        rcond,
        record_timing,
    )
    .map(|o| o.record)
}

/// Common settings of the three sweeps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub strategies: Vec<Strategy>,
    pub n1: usize,
    pub n2: usize,
    pub p: usize,
    pub r: usize,
    pub trials: usize,
    pub master_seed: u64,
    pub noise_level: f64,
    pub rcond: f64,
    pub record_timing: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
            n1: 100,
            n2: 100,
            p: 10,
            r: N_SWEEP_ROWS,
            trials: DEFAULT_TRIALS,
            master_seed: 0,
            noise_level: DEFAULT_NOISE,
            rcond: DEFAULT_RCOND,
            record_timing: false,
        }
    }
}

impl SweepConfig {
    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trial count must be at least 1".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::InvalidArgument("at least one strategy is required".into()));
        }
        Ok(())
    }
}

/// One grid point of a sweep: problem dimensions and sketch size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct GridPoint {
    n1: usize,
    n2: usize,
    p: usize,
    r: usize,
}

/// Runs every `(strategy, grid point, trial)` and returns records ordered by
/// strategy, then grid point, then trial. The problem at each grid point is
/// drawn from the master seed; trial `t` uses seed `master + t`.
fn run_grid(cfg: &SweepConfig, points: &[GridPoint]) -> Result<Vec<SweepRecord>> {
    cfg.validate()?;
    if points.is_empty() {
        return Err(Error::InvalidArgument("sweep grid must be nonempty".into()));
    }
    let prepared: Vec<PreparedProblem> = points
        .iter()
        .map(|pt| PreparedProblem::new(gen_problem(pt.n1, pt.n2, pt.p, cfg.noise_level, cfg.master_seed)?, cfg.rcond))
        .collect::<Result<_>>()?;
    let jobs: Vec<(Strategy, usize, usize)> = cfg
        .strategies
        .iter()
        .flat_map(|&s| (0..points.len()).flat_map(move |g| (0..cfg.trials).map(move |t| (s, g, t))))
        .collect();
    jobs.par_iter()
        .map(|&(strategy, g, t)| {
            let rec = run_trial(
                &prepared[g],
                strategy,
                SketchRows::Total(points[g].r),
                t,
                trial_seed(cfg.master_seed, t),
                cfg.rcond,
                cfg.record_timing,
            );
            if t + 1 == cfg.trials {
                log::info!("{strategy} r={} n1={} p={} done", points[g].r, points[g].n1, points[g].p);
            }
            rec
        })
        .collect()
}

/// Error against the number of sketch rows, at fixed `(n1, n2, p)`.
pub fn sweep_r(cfg: &SweepConfig, r_grid: &[usize]) -> Result<Vec<SweepRecord>> {
    let points: Vec<GridPoint> = r_grid
        .iter()
        .map(|&r| GridPoint { n1: cfg.n1, n2: cfg.n2, p: cfg.p, r })
        .collect();
    run_grid(cfg, &points)
}

/// Error against the ambient size `n1 = n2 = n`, at fixed `r = cfg.r`.
pub fn sweep_n(cfg: &SweepConfig, n_grid: &[usize]) -> Result<Vec<SweepRecord>> {
    let points: Vec<GridPoint> = n_grid
        .iter()
        .map(|&n| GridPoint { n1: n, n2: n, p: cfg.p, r: cfg.r })
        .collect();
    run_grid(cfg, &points)
}

/// Error against the number of unknowns `p`, at fixed `r = cfg.r`.
pub fn sweep_p(cfg: &SweepConfig, p_grid: &[usize]) -> Result<Vec<SweepRecord>> {
    let points: Vec<GridPoint> = p_grid
        .iter()
        .map(|&p| GridPoint { n1: cfg.n1, n2: cfg.n2, p, r: cfg.r })
        .collect();
    run_grid(cfg, &points)
}

/// Median relative error over the trials of one `(strategy, grid point)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedianSummary {
    pub strategy: Strategy,
    pub r: usize,
    pub n1: usize,
    pub n2: usize,
    pub p: usize,
    pub trials: usize,
    pub median_rel_error: f64,
}

/// Groups records by `(strategy, r, n1, n2, p)` in first-seen order.
pub fn medians(records: &[SweepRecord]) -> Vec<MedianSummary> {
    let mut keys: Vec<(Strategy, usize, usize, usize, usize)> = Vec::new();
    for rec in records {
        let key = (rec.strategy, rec.r, rec.n1, rec.n2, rec.p);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(strategy, r, n1, n2, p)| {
            let errs: Vec<f64> = records
                .iter()
                .filter(|x| (x.strategy, x.r, x.n1, x.n2, x.p) == (strategy, r, n1, n2, p))
                .map(|x| x.rel_error)
                .collect();
            MedianSummary {
                strategy,
                r,
                n1,
                n2,
                p,
                trials: errs.len(),
                median_rel_error: median(&errs).expect("group is nonempty"),
            }
        })
        .collect()
}

/// Medians of one strategy, in grid order.
pub fn strategy_medians(summary: &[MedianSummary], strategy: Strategy) -> Vec<f64> {
    summary
        .iter()
        .filter(|m| m.strategy == strategy)
        .map(|m| m.median_rel_error)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lsq::SolveMethod;
    use crate::sketch::Rhs;

    #[test]
    fn problem_structure() {
        let prob = gen_problem(12, 9, 4, DEFAULT_NOISE, 3).unwrap();
        for u in [&prob.u_f, &prob.u_g] {
            assert!((u.transpose() * u - DMatrix::identity(4, 4)).amax() <= 1e-12);
        }
        let mut sv: Vec<f64> = prob.f().singular_values().iter().cloned().collect();
        let mut expect = prob.sigma_f.iter().map(|s| s.abs()).collect::<Vec<_>>();
        sv.sort_by(|a, b| a.total_cmp(b));
        expect.sort_by(|a, b| a.total_cmp(b));
        for (a, b) in sv.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let again = gen_problem(12, 9, 4, DEFAULT_NOISE, 3).unwrap();
        assert_eq!(prob.b, again.b);
        assert!(gen_problem(3, 9, 4, 0.0, 0).is_err());
        assert!(gen_problem(9, 9, 0, 0.0, 0).is_err());
        assert!(gen_problem(9, 9, 2, -1.0, 0).is_err());
    }

    #[test]
    fn noiseless_problem_is_consistent() {
        let prob = gen_problem(10, 10, 3, 0.0, 4).unwrap();
        let a = prob.op.materialize(1000).unwrap();
        let sol = solve_ls(&a, &prob.b, DEFAULT_RCOND).unwrap();
        assert_eq!(sol.method, SolveMethod::Qr);
        assert!((&sol.x - &prob.x_ref).norm() <= 1e-8 * prob.x_ref.norm());
    }

    #[test]
    fn singular_values_stay_in_band() {
        for seed in 0..100 {
            let prob = gen_problem(8, 8, 4, 0.0, seed).unwrap();
            for s in prob.sigma_f.iter().chain(&prob.sigma_g) {
                assert!((0.2..=1.8).contains(s), "seed {seed}: {s}");
            }
        }
    }

    #[test]
    fn full_solution_is_optimal_against_random_points() {
        let prepared = PreparedProblem::new(gen_problem(10, 12, 3, 1e-3, 6).unwrap(), DEFAULT_RCOND).unwrap();
        let mut rng = stream_rng(1, 2);
        let rhs = prepared.problem.rhs();
        for _ in 0..100 {
            let x = &prepared.x_star + gaussian_vector::<f64, _>(&mut rng, 3) * 0.1;
            assert!(residual_sq_full(&prepared.problem.op, &x, &rhs).unwrap() >= prepared.f_star);
        }
    }

    #[test]
    fn identity_sketch_gives_zero_error() {
        let prepared = PreparedProblem::new(gen_problem(6, 5, 2, 1e-3, 1).unwrap(), DEFAULT_RCOND).unwrap();
        let op = &prepared.problem.op;
        let id = Sketch::identity(6, 5);
        let system = id.sketch_system(op, &prepared.problem.rhs()).unwrap();
        let sol = solve_sketched(&system, DEFAULT_RCOND).unwrap();
        let f = residual_sq_full(op, &sol.x, &Rhs::Dense(prepared.problem.b.clone())).unwrap();
        let err = relative_error(f, prepared.f_star).unwrap();
        assert!(err.raw.abs() <= 1e-10, "{err:?}");
    }

    #[test]
    fn trial_rejects_short_sketch() {
        let prepared = PreparedProblem::new(gen_problem(6, 6, 4, 1e-3, 1).unwrap(), DEFAULT_RCOND).unwrap();
        assert!(run_trial(&prepared, Strategy::Case2, SketchRows::Total(3), 0, 0, DEFAULT_RCOND, false).is_err());
    }

    #[test]
    fn sweep_records_are_ordered_and_deterministic() {
        let cfg = SweepConfig {
            n1: 8,
            n2: 8,
            p: 3,
            trials: 3,
            master_seed: 5,
            ..SweepConfig::default()
        };
        let recs = sweep_r(&cfg, &[16, 36]).unwrap();
        assert_eq!(recs.len(), 3 * 2 * 3);
        assert_eq!(recs, sweep_r(&cfg, &[16, 36]).unwrap());
        let order: Vec<(Strategy, usize, usize)> = recs.iter().map(|r| (r.strategy, r.r, r.trial)).collect();
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(order, sorted);
        assert!(recs.iter().all(|r| r.rel_error >= -1e-12 && r.wall_time_ms == 0.0));
        let case1 = recs.iter().find(|r| r.strategy == Strategy::Case1).unwrap();
        assert_eq!((case1.r1, case1.r2), (Some(4), Some(4)));

        // one-point grids of the other sweeps reproduce the same records
        let n_cfg = SweepConfig { r: 36, ..cfg.clone() };
        let via_n = sweep_n(&n_cfg, &[8]).unwrap();
        let via_r: Vec<SweepRecord> = recs.iter().filter(|r| r.r == 36).cloned().collect();
        assert_eq!(via_n, via_r);
        let via_p = sweep_p(&n_cfg, &[3]).unwrap();
        assert_eq!(via_p, via_r);
    }

    #[test]
    fn sweep_validates_config() {
        let cfg = SweepConfig { trials: 0, ..SweepConfig::default() };
        assert!(sweep_r(&cfg, &[256]).is_err());
        let cfg = SweepConfig { strategies: vec![], ..SweepConfig::default() };
        assert!(sweep_r(&cfg, &[256]).is_err());
        assert!(sweep_r(&SweepConfig::default(), &[]).is_err());
    }

    #[test]
    fn median_grouping() {
        let rec = |s, r, e| SweepRecord {
            strategy: s,
            r,
            r1: None,
            r2: None,
            n1: 2,
            n2: 2,
            p: 1,
            trial: 0,
            rel_error: e,
            wall_time_ms: 0.0,
        };
        let recs = vec![
            rec(Strategy::Case2, 4, 3.0),
            rec(Strategy::Case2, 4, 1.0),
            rec(Strategy::Case2, 4, 2.0),
            rec(Strategy::Case2, 9, 0.5),
            rec(Strategy::Case1, 4, 7.0),
        ];
        let m = medians(&recs);
        assert_eq!(m.len(), 3);
        assert_eq!(m[0].median_rel_error, 2.0);
        assert_eq!(m[0].trials, 3);
        assert_eq!(strategy_medians(&m, Strategy::Case2), vec![2.0, 0.5]);
    }
}
