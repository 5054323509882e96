use std::path::{Path, PathBuf};

use krsketch::eit::{self, EitConfig, EitSweepConfig, Inclusion, Quadrature, SourceSet};
use krsketch::embedding::{
    embed_dim_case1, embed_dim_case2, embed_dim_gaussian, sup_distortion_exact, sup_distortion_sampled, zeta_sample, zeta_tail_bound, RangeBasis,
    SigmaSpectrum,
};
use krsketch::lsq::DEFAULT_RCOND;
use krsketch::output::{self, Summary, EIT_SCHEMA, GRID_SCHEMA, SWEEP_SCHEMA};
use krsketch::rng::{gaussian_matrix, stream, stream_rng, trial_seed};
use krsketch::sketch::{Sketch, SketchRows, Strategy};
use krsketch::synthbench::{self, medians, MedianSummary, SweepConfig, SweepRecord};
use serde::Serialize;

use crate::args::{CommonArgs, EitArgs, EmbedArgs, Format, SweepArgs, ZetaArgs};
use crate::config::{parse_list, ConfigMap};
use crate::CliError;

pub const CHECK_SCHEMA: &str = "krsketch-check/1";

/// Settings shared by all subcommands, after layering.
#[derive(Clone, Debug)]
pub struct Common {
    pub seed: u64,
    pub trials: usize,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub summary: Option<PathBuf>,
    pub rcond: f64,
    pub timing: bool,
}

impl Common {
    pub fn resolve(args: &CommonArgs, cfg: &ConfigMap) -> Result<Self, CliError> {
        let trials = cfg.resolve(args.trials, "trials", synthbench::DEFAULT_TRIALS)?;
        if trials == 0 {
            return Err(CliError::Usage("--trials must be at least 1".into()));
        }
        let rcond = cfg.resolve(args.rcond, "rcond", DEFAULT_RCOND)?;
        if !(rcond > 0.0 && rcond < 1.0) {
            return Err(CliError::Usage(format!("--rcond must lie in (0, 1), got {rcond}")));
        }
        Ok(Self {
            seed: cfg.resolve(args.seed, "seed", 0)?,
            trials,
            out: cfg.layer(args.out.clone(), "out")?,
            format: cfg.resolve(args.format, "format", Format::Csv)?,
            summary: cfg.layer(args.summary.clone(), "summary")?,
            rcond,
            timing: cfg.switch(args.timing, "timing")?,
        })
    }

    fn out_path(&self, stem: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| {
            PathBuf::from(match self.format {
                Format::Csv => format!("{stem}.csv"),
                Format::Json => format!("{stem}.json"),
            })
        })
    }
}

fn strategies(flag: &Option<String>, cfg: &ConfigMap) -> Result<Vec<Strategy>, CliError> {
    match cfg.layer(flag.clone(), "strategy")? {
        None => Ok(Strategy::ALL.to_vec()),
        Some(s) if s.trim() == "all" => Ok(Strategy::ALL.to_vec()),
        Some(s) => {
            let list: Vec<Strategy> = parse_list(&s, "strategy")?;
            let mut uniq: Vec<Strategy> = Vec::new();
            for st in list {
                if !uniq.contains(&st) {
                    uniq.push(st);
                }
            }
            Ok(uniq)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepKind {
    R,
    N,
    P,
}

impl SweepKind {
    fn name(self) -> &'static str {
        match self {
            SweepKind::R => "sweep_r",
            SweepKind::N => "sweep_n",
            SweepKind::P => "sweep_p",
        }
    }

    fn grid_key(self) -> &'static str {
        match self {
            SweepKind::R => "r-grid",
            SweepKind::N => "n-grid",
            SweepKind::P => "p-grid",
        }
    }
}

/// Records with medians, for `--format json`.
#[derive(Serialize)]
struct JsonReport<'a, R: Serialize> {
    schema: &'static str,
    kind: &'a str,
    master_seed: u64,
    trials: usize,
    medians: &'a [MedianSummary],
    records: &'a [R],
}

fn emit<R: Serialize>(
    common: &Common,
    kind: &str,
    schema: &'static str,
    path: &Path,
    records: &[R],
    meds: &[MedianSummary],
) -> Result<(), CliError> {
    match common.format {
        Format::Csv => output::write_csv(path, schema, records)?,
        Format::Json => output::write_json(
            path,
            &JsonReport {
                schema,
                kind,
                master_seed: common.seed,
                trials: common.trials,
                medians: meds,
                records,
            },
        )?,
    }
    if let Some(summary) = &common.summary {
        output::write_json(summary, &Summary::new(kind, common.seed, common.trials, meds.to_vec()))?;
    }
    Ok(())
}

fn print_medians(meds: &[MedianSummary]) {
    println!("{:<16}{:>8}{:>6}{:>6}{:>5}  median rel_error", "strategy", "r", "n1", "n2", "p");
    for m in meds {
        println!(
            "{:<16}{:>8}{:>6}{:>6}{:>5}  {:.6e}",
            m.strategy.as_str(),
            m.r,
            m.n1,
            m.n2,
            m.p,
            m.median_rel_error
        );
    }
}

pub fn sweep(kind: SweepKind, a: &SweepArgs, common: &Common, cfg: &ConfigMap) -> Result<(), CliError> {
    let own = match kind {
        SweepKind::R => &a.r_grid,
        SweepKind::N => &a.n_grid,
        SweepKind::P => &a.p_grid,
    };
    for (flag, name) in [(&a.r_grid, "--r-grid"), (&a.n_grid, "--n-grid"), (&a.p_grid, "--p-grid")] {
        if flag.is_some() && !std::ptr::eq(flag, own) {
            return Err(CliError::Usage(format!("{name} does not apply to {}", kind.name().replace('_', "-"))));
        }
    }
    if a.grid.is_some() && own.is_some() {
        return Err(CliError::Usage("give either --grid or the specific grid flag, not both".into()));
    }
    let own = if a.grid.is_some() { &a.grid } else { own };
    if kind == SweepKind::R && a.r.is_some() {
        return Err(CliError::Usage("--r does not apply to sweep-r; use --r-grid".into()));
    }
    let default_grid: Vec<usize> = match kind {
        SweepKind::R => synthbench::R_GRID.to_vec(),
        SweepKind::N => synthbench::N_GRID.to_vec(),
        SweepKind::P => synthbench::P_GRID.to_vec(),
    };
    let grid = match cfg.layer(own.clone(), kind.grid_key())? {
        Some(raw) => parse_list::<usize>(&raw, kind.grid_key())?,
        None => default_grid,
    };
    let default_r = match kind {
        SweepKind::P => synthbench::P_SWEEP_ROWS,
        _ => synthbench::N_SWEEP_ROWS,
    };
    let n1 = cfg.resolve(a.n1, "n1", 100)?;
    let sweep_cfg = SweepConfig {
        strategies: strategies(&a.strategy, cfg)?,
        n1,
        n2: cfg.resolve(a.n2, "n2", n1)?,
        p: cfg.resolve(a.p, "p", 10)?,
        r: if kind == SweepKind::R { default_r } else { cfg.resolve(a.r, "r", default_r)? },
        trials: common.trials,
        master_seed: common.seed,
        noise_level: cfg.resolve(a.noise, "noise", synthbench::DEFAULT_NOISE)?,
        rcond: common.rcond,
        record_timing: common.timing,
    };
    let records: Vec<SweepRecord> = match kind {
        SweepKind::R => synthbench::sweep_r(&sweep_cfg, &grid)?,
        SweepKind::N => synthbench::sweep_n(&sweep_cfg, &grid)?,
        SweepKind::P => synthbench::sweep_p(&sweep_cfg, &grid)?,
    };
    let meds = medians(&records);
    let path = common.out_path(kind.name());
    emit(common, kind.name(), SWEEP_SCHEMA, &path, &records, &meds)?;
    print_medians(&meds);
    println!("wrote {} records to {}", records.len(), path.display());
    Ok(())
}

fn parse_inclusions(raw: &str) -> Result<Vec<Inclusion>, CliError> {
    raw.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let parts: Vec<f64> = parse_list(&s.replace(':', ","), "inclusion")?;
            match parts[..] {
                [x0, y0, side, amplitude] => Ok(Inclusion { x0, y0, side, amplitude }),
                _ => Err(CliError::Usage(format!("inclusion `{s}` must be x0:y0:side:amplitude"))),
            }
        })
        .collect()
}

fn grid_path(dir: &Path, stem: &str, label: &str) -> PathBuf {
    dir.join(format!("{stem}_grid_{label}.csv"))
}

pub fn eit_cmd(a: &EitArgs, common: &Common, cfg: &ConfigMap) -> Result<(), CliError> {
    let defaults = EitConfig::default();
    let quadrature: Quadrature = match cfg.layer(a.quadrature.clone(), "quadrature")? {
        Some(q) => q.parse().map_err(|e: krsketch::Error| CliError::Usage(e.to_string()))?,
        None => defaults.quadrature,
    };
    let inclusions = match cfg.layer(a.inclusions.clone(), "inclusions")? {
        Some(raw) => parse_inclusions(&raw)?,
        None => defaults.inclusions.clone(),
    };
    let problem = EitConfig {
        nx: cfg.resolve(a.nx, "nx", defaults.nx)?,
        sigma_star: cfg.resolve(a.sigma_star, "sigma-star", defaults.sigma_star)?,
        inclusions,
        noise_sd: cfg.resolve(a.noise, "noise", defaults.noise_sd)?,
        quadrature,
        sources: if cfg.switch(a.exclude_corners, "exclude-corners")? {
            SourceSet::ExcludeCorners
        } else {
            SourceSet::AllBoundary
        },
        source_scale: cfg.resolve(a.source_scale, "source-scale", defaults.source_scale)?,
    };
    let r_grid = match cfg.layer(a.r_grid.clone(), "r-grid")? {
        Some(raw) => parse_list(&raw, "r-grid")?,
        None => eit::EIT_R_GRID.to_vec(),
    };
    let sweep_cfg = EitSweepConfig {
        problem,
        strategies: strategies(&a.strategy, cfg)?,
        r_grid,
        trials: common.trials,
        master_seed: common.seed,
        rcond: common.rcond,
        record_timing: common.timing,
    };
    let out = eit::eit_sweep(&sweep_cfg)?;
    let sweep: Vec<SweepRecord> = out.records.iter().map(|r| r.to_sweep()).collect();
    let meds = medians(&sweep);
    let path = common.out_path("eit");
    emit(common, "eit", EIT_SCHEMA, &path, &out.records, &meds)?;

    let dir = match cfg.layer(a.grid_dir.clone(), "grid-dir")? {
        Some(d) => d,
        None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("eit").to_string();
    let nx = out.system.mesh.nx();
    let truth = grid_path(&dir, &stem, "truth");
    output::write_grid_csv(&truth, nx, &out.system.sigma_true.values)?;
    let mut grids = vec![truth];
    for (strategy, field) in &out.reconstructions {
        let p = grid_path(&dir, &stem, strategy.as_str());
        output::write_grid_csv(&p, nx, &field.values)?;
        grids.push(p);
    }
    print_medians(&meds);
    println!("wrote {} records to {}", out.records.len(), path.display());
    for g in grids {
        println!("wrote grid ({GRID_SCHEMA}) {}", g.display());
    }
    Ok(())
}

/// One checked property of a Monte Carlo diagnostic.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRecord {
    pub property: String,
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
}

impl CheckRecord {
    fn at_most(property: impl Into<String>, measured: f64, bound: f64) -> Self {
        Self {
            property: property.into(),
            measured,
            bound,
            pass: measured <= bound,
        }
    }
}

/// Per-trial result of the embedding check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmbedTrial {
    pub strategy: Strategy,
    pub r: usize,
    pub trial: usize,
    pub sampled_distortion: f64,
    pub exact_distortion: f64,
}

#[derive(Serialize)]
struct CheckReport<'a, T: Serialize> {
    schema: &'static str,
    kind: &'a str,
    master_seed: u64,
    checks: &'a [CheckRecord],
    details: T,
}

fn emit_checks<T: Serialize>(
    common: &Common,
    kind: &str,
    checks: &[CheckRecord],
    details: T,
) -> Result<(), CliError> {
    let path = common.out_path(kind);
    match common.format {
        Format::Csv => output::write_csv(&path, CHECK_SCHEMA, checks)?,
        Format::Json => output::write_json(
            &path,
            &CheckReport {
                schema: CHECK_SCHEMA,
                kind,
                master_seed: common.seed,
                checks,
                details,
            },
        )?,
    }
    for c in checks {
        let status = if c.pass { "PASS" } else { "FAIL" };
        println!("{status} {:<28} measured {:.6e}  bound {:.6e}", c.property, c.measured, c.bound);
    }
    println!("wrote {} checks to {}", checks.len(), path.display());
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.property.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!("failed checks: {}", failed.join(", "))))
    }
}

pub fn embed_test(a: &EmbedArgs, common: &Common, cfg: &ConfigMap) -> Result<(), CliError> {
    let eps = cfg.resolve(a.eps, "eps", 0.5)?;
    let delta = cfg.resolve(a.delta, "delta", 0.1)?;
    let p = cfg.resolve(a.p, "p", 2)?;
    let n1 = cfg.resolve(a.n1, "n1", 10)?;
    let n2 = cfg.resolve(a.n2, "n2", n1)?;
    let c = cfg.resolve(a.c, "c", 16.0)?;
    let samples = cfg.resolve(a.samples, "samples", 200)?;
    if p == 0 || p > n1.min(n2) {
        return Err(CliError::Usage(format!("need 1 ≤ p ≤ min(n1, n2), got p = {p}")));
    }
    let fixed_r = cfg.layer(a.r, "r")?;
    let strategies = strategies(&a.strategy, cfg)?;
    let mut trials = Vec::new();
    let mut checks = Vec::new();
    for &strategy in &strategies {
        let rows = match (fixed_r, strategy) {
            (Some(r), _) => SketchRows::Total(r),
            (None, Strategy::Case1) => {
                let (r1, r2) = embed_dim_case1(eps, delta, p, c)?;
                SketchRows::Split(r1, r2)
            }
            (None, Strategy::Case2) => SketchRows::Total(embed_dim_case2(eps, delta, p, c)?.r),
            (None, Strategy::DenseGaussian) => SketchRows::Total(embed_dim_gaussian(eps, delta, p * p, c)?),
        };
        let r = rows.total();
        let mut exceed = 0usize;
        let mut worst_gap = f64::NEG_INFINITY;
        for t in 0..common.trials {
            let seed = trial_seed(common.seed, t);
            let mut rng = stream_rng(seed, stream::PROBLEM);
            let f = gaussian_matrix::<f64, _>(&mut rng, n1, p);
            let g = gaussian_matrix::<f64, _>(&mut rng, n2, p);
            let basis = RangeBasis::from_factors(&f, &g)?;
            let sketch = Sketch::<f64>::generate(strategy, rows, n1, n2, seed)?;
            let exact = sup_distortion_exact(&sketch, &basis.to_dense())?;
            let sampled = sup_distortion_sampled(&sketch, &basis, samples, seed)?;
            worst_gap = worst_gap.max(sampled - exact);
            if exact > eps {
                exceed += 1;
            }
            trials.push(EmbedTrial {
                strategy,
                r,
                trial: t,
                sampled_distortion: sampled,
                exact_distortion: exact,
            });
        }
        println!("{strategy}: r = {r}");
        checks.push(CheckRecord::at_most(format!("{strategy}.sampled_minus_exact"), worst_gap, 1e-10));
        checks.push(CheckRecord::at_most(
            format!("{strategy}.failure_rate"),
            exceed as f64 / common.trials as f64,
            delta,
        ));
    }
    println!("embedding check: eps {eps}, delta {delta}, subspace dim {}, {} trials", p * p, common.trials);
    emit_checks(common, "embed_test", &checks, trials)
}

#[derive(Serialize)]
struct ZetaDetails {
    p: usize,
    spectrum: Vec<f64>,
    n_draws: usize,
    m2: f64,
    m4: f64,
    var_zeta2: f64,
    exact_m4: f64,
}

pub fn zeta_test(a: &ZetaArgs, common: &Common, cfg: &ConfigMap) -> Result<(), CliError> {
    let p = cfg.resolve(a.p, "p", 16)?;
    let draws = cfg.resolve(a.draws, "draws", 1_000_000)?;
    let kind = cfg.resolve(a.spectrum.clone(), "spectrum", "uniform".to_string())?;
    let sigma = match kind.as_str() {
        "uniform" => SigmaSpectrum::uniform(p)?,
        "single" => SigmaSpectrum::single(p)?,
        "random" => SigmaSpectrum::random(p, &mut stream_rng(common.seed, stream::PROBLEM))?,
        other => return Err(CliError::Usage(format!("unknown spectrum `{other}`"))),
    };
    let sp = (p as f64).sqrt();
    let thresholds: Vec<f64> = [1.0, 1.5, 2.0, 3.0].iter().map(|k| k * sp).collect();
    let st = zeta_sample(&sigma, draws, common.seed, &thresholds)?;
    let band = 4.0 * (8.0 / draws as f64).sqrt();
    let mut checks = vec![
        CheckRecord::at_most("m2_deviation", (st.m2 - 1.0).abs(), band),
        CheckRecord::at_most("m4", st.m4, 9.0 + 4.0 * st.se_m4),
        CheckRecord::at_most(
            "m4_vs_exact",
            (st.m4 - sigma.exact_fourth_moment()).abs(),
            4.0 * st.se_m4,
        ),
        CheckRecord::at_most("var_zeta2", st.var_zeta2, 8.0 + 4.0 * st.se_var_zeta2),
    ];
    for tail in &st.tails {
        if let Some(bound) = tail.bound.or_else(|| zeta_tail_bound(tail.t, p)) {
            checks.push(CheckRecord::at_most(
                format!("tail_t{:.3}", tail.t),
                tail.frequency,
                bound + 4.0 * tail.std_error,
            ));
        }
    }
    let details = ZetaDetails {
        p,
        spectrum: sigma.values().to_vec(),
        n_draws: draws,
        m2: st.m2,
        m4: st.m4,
        var_zeta2: st.var_zeta2,
        exact_m4: sigma.exact_fourth_moment(),
    };
    println!("zeta check: p {p}, {kind} spectrum, {draws} draws");
    emit_checks(common, "zeta_test", &checks, details)
}
