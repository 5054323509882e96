use krsketch::embedding::{
    embed_dim_gaussian, orthonormal_basis, sup_distortion_exact, zeta_mean_tail_bound, zeta_sample,
    SigmaSpectrum,
};
use krsketch::output::{read_csv, write_csv, EIT_SCHEMA, SWEEP_SCHEMA};
use krsketch::rng::{gaussian_matrix, stream_rng};
use krsketch::sketch::SketchRows;
use krsketch::synthbench::{sweep_n, sweep_p, sweep_r, SweepConfig, SweepRecord};
use krsketch::{Sketch, Strategy};

const EPS: f64 = 0.5;
const DELTA: f64 = 0.1;
const DIM: usize = 4;
const N: usize = 10;

fn dense_success(c: f64, seeds: std::ops::Range<u64>) -> f64 {
    let r = embed_dim_gaussian(EPS, DELTA, DIM, c).unwrap();
    let total = seeds.end - seeds.start;
    let mut ok = 0;
    for seed in seeds {
        let mut rng = stream_rng(seed, 1000);
        let u = orthonormal_basis(&gaussian_matrix::<f64, _>(&mut rng, N * N, DIM), 1e-12).unwrap();
        let s = Sketch::<f64>::generate(Strategy::DenseGaussian, SketchRows::Total(r), N, N, seed).unwrap();
        if sup_distortion_exact(&s, &u).unwrap() <= EPS {
            ok += 1;
        }
    }
    ok as f64 / total as f64
}

#[test]
fn dense_gaussian_embedding_with_calibrated_constant() {
    // calibrate on one seed range, validate on a disjoint one
    let c0 = [0.5, 1.0, 2.0, 4.0, 8.0]
        .into_iter()
        .find(|&c| dense_success(c, 10_000..10_050) >= 0.96)
        .expect("some constant reaches the target");
    let rate = dense_success(c0, 0..200);
    eprintln!("calibrated C0 = {c0}, validation success {rate}");
    assert!(rate >= 1.0 - DELTA, "C0 = {c0}: success {rate}");
}

#[test]
fn zeta_tails_stay_below_the_bound() {
    let mut rng = stream_rng(11, 1001);
    for p in [1usize, 4, 9, 16] {
        let sp = (p as f64).sqrt();
        let thresholds: Vec<f64> = [1.0, 1.25, 1.5, 2.0, 2.5, 3.0].iter().map(|k| k * sp).collect();
        for sigma in [
            SigmaSpectrum::uniform(p).unwrap(),
            SigmaSpectrum::single(p).unwrap(),
            SigmaSpectrum::random(p, &mut rng).unwrap(),
        ] {
            let stats = zeta_sample(&sigma, 200_000, p as u64, &thresholds).unwrap();
            for tail in &stats.tails {
                let bound = tail.bound.expect("thresholds are at least sqrt(p)");
                assert!(
                    tail.frequency <= bound + 4.0 * tail.std_error + 1e-12,
                    "p = {p}, t = {}: {} > {bound}",
                    tail.t,
                    tail.frequency
                );
            }
        }
    }
}

#[test]
fn zeta_sample_mean_tail_respects_its_bound() {
    let p = 1;
    let t = 1.0;
    let r = krsketch::embedding::zeta_mean_min_rows(t, p).ceil() as usize;
    let bound = zeta_mean_tail_bound(t, p, r).unwrap();
    let sigma = SigmaSpectrum::single(p).unwrap();
    let reps = 400;
    let mut exceed = 0;
    for rep in 0..reps {
        let stats = zeta_sample(&sigma, r, 5000 + rep, &[]).unwrap();
        if (stats.m2 - 1.0).abs() > t {
            exceed += 1;
        }
    }
    let freq = exceed as f64 / reps as f64;
    assert!(freq <= bound.min(1.0), "{freq} > {bound}");
}

fn small_config() -> SweepConfig {
    SweepConfig { n1: 12, n2: 12, p: 3, trials: 3, master_seed: 99, r: 64, ..SweepConfig::default() }
}

#[test]
fn one_point_sweeps_agree_across_kinds() {
    let cfg = small_config();
    let by_r = sweep_r(&cfg, &[64]).unwrap();
    let by_n = sweep_n(&cfg, &[12]).unwrap();
    let by_p = sweep_p(&cfg, &[3]).unwrap();
    assert_eq!(by_r.len(), 3 * 3);
    assert_eq!(by_r, by_n);
    assert_eq!(by_r, by_p);
}

#[test]
fn sweep_csv_round_trips_and_checks_schema() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let records = sweep_r(&small_config(), &[36, 64]).unwrap();
    write_csv(&path, SWEEP_SCHEMA, &records).unwrap();
    let back: Vec<SweepRecord> = read_csv(&path, SWEEP_SCHEMA).unwrap();
    assert_eq!(back, records);
    assert!(read_csv::<SweepRecord>(&path, EIT_SCHEMA).is_err());
}
