//! Acceptance suite. Runs every criterion in order and prints one line per
//! criterion; exits non-zero if any fails.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{golden_section_dd, inner, random_vec, rel_err, small_scenario, Dd};
use nfmimo::forward::{materialize_dense, noise_sigma_for_snr, DEFAULT_DENSE_CAP};
use nfmimo::io;
use nfmimo::metrics::{psnr_vs_reference, spearman, sweep_against, SweepRecord};
use nfmimo::phantom::Phantom;
use nfmimo::solver::{full_gradient, pgm_solve, soft_threshold, solve};
use nfmimo::{
    BornOperator, ChannelSubset, Composition, ImagingScenario, MeasurementSet, MinibatchComposition,
    ReflectivityVolume, SolveReport, SolverConfig, Termination,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [1, 2, 3];
const SMALL_BATCH: MinibatchComposition = MinibatchComposition::new(4, 4, 3);

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Runner {
    failures: usize,
}

impl Runner {
    fn run<F: FnOnce() -> Outcome>(&mut self, id: u32, name: &str, limit: Duration, f: F) {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(format!("panicked: {msg}"))
            });
        let elapsed = start.elapsed();
        let in_time = elapsed <= limit;
        let (pass, detail) = match outcome {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        if !pass {
            self.failures += 1;
        }
        println!(
            "criterion {id:>2} {} {name}: {detail}; {:.1} s of {} s{}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs(),
            if in_time { "" } else { " (over time)" }
        );
    }
}

/// The shared paper-v setup: a 5-point phantom at 30 dB measurement SNR.
struct Paper {
    scenario: ImagingScenario,
    op: BornOperator,
    y: MeasurementSet,
}

impl Paper {
    fn new() -> Self {
        let scenario = ImagingScenario::paper_preset();
        let op = BornOperator::new(&scenario);
        let truth = Phantom::Points(5).generate(scenario.voxels(), 1).unwrap();
        let clean = op.simulate(&truth, 0.0, 0).unwrap();
        let sigma = noise_sigma_for_snr(clean.values(), 30.0);
        let y = op.simulate(&truth, sigma, 1).unwrap();
        Paper { scenario, op, y }
    }
}

struct FixedPoint {
    reference: SolveReport,
    spgm: Vec<SweepRecord>,
}

fn dimensions() -> Outcome {
    let s = ImagingScenario::paper_preset();
    let (m, n) = (s.num_channels(), s.num_voxels());
    check(m == 1584 && n == 78_141, format!("M={m} N={n}"))
}

fn operator_vs_dense() -> Outcome {
    let scenario = small_scenario([6, 6, 5]);
    let (m, n) = (scenario.num_channels(), scenario.num_voxels());
    let op = BornOperator::new(&scenario);
    let dense = materialize_dense(&scenario, DEFAULT_DENSE_CAP).map_err(|e| e.to_string())?;
    let all = ChannelSubset::all(m);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut fwd, mut adj, mut dot) = (0f64, 0f64, 0f64);
    for _ in 0..100 {
        let x = random_vec(&mut rng, n);
        let r = random_vec(&mut rng, m);
        let ax = op.forward_slice(&x, &all).unwrap();
        let ahr = op.adjoint(&r, &all).unwrap();
        fwd = fwd.max(rel_err(&ax, &dense.mul_vec(&x)));
        adj = adj.max(rel_err(&ahr, &dense.adjoint_mul_vec(&r)));
        let (lhs, rhs) = (inner(&r, &ax), inner(&ahr, &x));
        dot = dot.max((lhs - rhs).norm() / lhs.norm());
    }
    check(
        m <= 200 && n <= 200 && fwd < 1e-12 && adj < 1e-12 && dot < 1e-10,
        format!("M={m} N={n}, forward {fwd:.1e}, adjoint {adj:.1e}, dot-product {dot:.1e} over 100 trials"),
    )
}

fn gradient_vs_finite_differences() -> Outcome {
    let scenario = small_scenario([5, 5, 2]);
    let op = BornOperator::new(&scenario);
    let dense = materialize_dense(&scenario, DEFAULT_DENSE_CAP).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = scenario.num_voxels();
    let s = random_vec(&mut rng, n);
    let y = random_vec(&mut rng, scenario.num_channels());
    let g = full_gradient(&op, &s, &y).unwrap();
    let fidelity = |s: &[Complex64]| {
        let p = dense.mul_vec(s);
        0.5 * y.iter().zip(&p).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / y.len() as f64
    };
    let h = 1e-4;
    let mut worst = 0f64;
    for k in 0..n {
        for (dir, want) in [(Complex64::new(h, 0.0), g[k].re), (Complex64::new(0.0, h), g[k].im)] {
            let (mut up, mut down) = (s.clone(), s.clone());
            up[k] += dir;
            down[k] -= dir;
            let fd = (fidelity(&up) - fidelity(&down)) / (2.0 * h);
            worst = worst.max((fd - want).abs() / want.abs());
        }
    }
    check(n == 50 && worst < 1e-5, format!("{n} voxels, worst relative error {worst:.1e}"))
}

fn prox_vs_golden_section() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0f64;
    for _ in 0..1000 {
        let v = Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let alpha = rng.gen_range(0.0..2.0);
        let m = v.norm();
        let (md, ad) = (Dd::new(m), Dd::new(alpha));
        let r = golden_section_dd(
            |r| {
                let d = r.sub(md);
                d.mul(d).mul(Dd::new(0.5)).add(ad.mul(r))
            },
            0.0,
            m,
            200,
        );
        let want = v * (r / m);
        let got = soft_threshold(&[v], alpha).unwrap()[0];
        worst = worst.max((got - want).norm());
    }
    check(worst < 1e-9, format!("1000 cases, worst deviation {worst:.1e}"))
}

fn degeneracy(p: &Paper) -> Outcome {
    let base = SolverConfig { max_iters: 50, tol: 1e-300, seed: 5, ..Default::default() };
    let mut pgm_iterates = Vec::new();
    let pgm = solve(&p.op, p.y.values(), &base, |_, s| pgm_iterates.push(s.to_vec())).unwrap();
    let full = SolverConfig {
        composition: Composition::Minibatch(MinibatchComposition::full(&p.scenario)),
        ..base
    };
    let mut worst = 0f64;
    let mut k = 0;
    let spgm = solve(&p.op, p.y.values(), &full, |_, s| {
        for (a, b) in s.iter().zip(&pgm_iterates[k]) {
            worst = worst.max((a - b).norm());
        }
        k += 1;
    })
    .unwrap();
    check(
        pgm.iterations == 50 && spgm.iterations == 50 && worst <= 1e-12,
        format!("50 iterations, max iterate difference {worst:.1e}"),
    )
}

fn fixed_point(p: &Paper, out: &mut Option<FixedPoint>) -> Outcome {
    let base = SolverConfig::default();
    let reference = pgm_solve(&p.op, &p.y, &base).unwrap();
    let spgm = sweep_against(&p.op, &p.y, &reference.volume, &base, &[SMALL_BATCH], &SEEDS).unwrap();
    let detail = format!(
        "PGM reference {} iterations ({}) in {:.1} s; SPGM{SMALL_BATCH} {}",
        reference.iterations,
        reference.termination,
        reference.wall_time.as_secs_f64(),
        spgm.iter()
            .map(|r| format!("seed {}: {:.2} dB, {} it, {:.1} s", r.seed, r.psnr_db, r.iterations, r.runtime_s))
            .collect::<Vec<_>>()
            .join("; ")
    );
    let ok = reference.termination == Termination::ToleranceReached && spgm.iter().all(|r| r.psnr_db >= 40.0);
    *out = Some(FixedPoint { reference, spgm });
    check(ok, detail)
}

fn speedup(p: &Paper, fixed: Option<&FixedPoint>) -> Outcome {
    let fixed = fixed.ok_or("needs the criterion 6 reference")?;
    let compositions = [
        MinibatchComposition::new(2, 2, 2),
        SMALL_BATCH,
        MinibatchComposition::new(6, 8, 5),
        MinibatchComposition::new(8, 12, 7),
        MinibatchComposition::full(&p.scenario),
    ];
    let base = SolverConfig::default();
    let recs = sweep_against(&p.op, &p.y, &fixed.reference.volume, &base, &compositions, &[1]).unwrap();
    let per_iter = |r: &SweepRecord| r.runtime_s / r.iterations as f64;
    let ratio = per_iter(&recs[4]) / per_iter(&recs[1]);
    let b: Vec<f64> = recs.iter().map(|r| r.batch_size as f64).collect();
    let t: Vec<f64> = recs.iter().map(|r| r.runtime_s).collect();
    let rho = spearman(&b, &t).map_err(|e| e.to_string())?;
    let table = recs
        .iter()
        .map(|r| format!("B={} {:.1} s/{} it", r.batch_size, r.runtime_s, r.iterations))
        .collect::<Vec<_>>()
        .join(", ");
    check(
        ratio >= 5.0 && rho > 0.8,
        format!("per-iteration ratio {ratio:.1}x, Spearman {rho:.2} ({table})"),
    )
}

fn time_budget(p: &Paper, fixed: Option<&FixedPoint>) -> Outcome {
    let fixed = fixed.ok_or("needs the criterion 6 runs")?;
    let mut wins = 0;
    let mut parts = Vec::new();
    for rec in &fixed.spgm {
        let cfg = SolverConfig {
            time_budget: Some(Duration::from_secs_f64(rec.runtime_s)),
            ..Default::default()
        };
        let truncated = pgm_solve(&p.op, &p.y, &cfg).unwrap();
        let db = psnr_vs_reference(&truncated.volume, &fixed.reference.volume).unwrap().psnr_db;
        if db < rec.psnr_db {
            wins += 1;
        }
        parts.push(format!(
            "seed {}: PGM* {} it {:.2} dB vs SPGM {:.2} dB",
            rec.seed, truncated.iterations, db, rec.psnr_db
        ));
    }
    check(wins == 3, format!("{wins}/3 ({})", parts.join("; ")))
}

fn localization() -> Outcome {
    let scenario = ImagingScenario::paper_preset();
    let op = BornOperator::new(&scenario);
    let truth = Phantom::Points(1).generate(scenario.voxels(), 9).unwrap();
    let y = op.simulate(&truth, 0.0, 0).unwrap();
    let r = pgm_solve(&op, &y, &SolverConfig::default()).unwrap();
    let (want, got) = (truth.argmax_magnitude(), r.volume.argmax_magnitude());
    let coords = |n| scenario.voxels().coords(n).unwrap();
    check(
        want == got,
        format!("true voxel {:?}, argmax {:?} after {} iterations", coords(want), coords(got), r.iterations),
    )
}

fn io_roundtrips(p: &Paper, fixed: Option<&FixedPoint>) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let grid = *p.scenario.voxels();
    let volume = match fixed {
        Some(f) => f.reference.volume.clone(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(10);
            ReflectivityVolume::new(grid, random_vec(&mut rng, grid.len())).unwrap()
        }
    };
    let bits = |v: &[Complex64]| v.iter().map(|c| (c.re.to_bits(), c.im.to_bits())).collect::<Vec<_>>();

    let vp = dir.path().join("v.nfmv");
    io::write_volume(&volume, &vp).unwrap();
    let v_ok = bits(io::read_volume(&vp, grid).unwrap().values()) == bits(volume.values());
    let yp = dir.path().join("y.nfms");
    io::write_measurements(&p.y, &yp).unwrap();
    let y_ok = bits(io::read_measurements(&yp, Some(&p.scenario)).unwrap().values()) == bits(p.y.values());
    let sp = dir.path().join("s.json");
    io::write_scenario(&p.scenario, &sp).unwrap();
    let back = io::read_scenario(&sp).unwrap();
    let s_ok = back == p.scenario && back.fingerprint() == p.scenario.fingerprint();

    let originals = [io::encode_volume(&volume), io::encode_measurements(&p.y)];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut rejected, mut accepted, mut crashed) = (0, 0, 0);
    let fp = dir.path().join("fuzz.bin");
    for i in 0..1000 {
        let is_volume = i % 2 == 0;
        let src = &originals[i % 2];
        let mut b = src.clone();
        match rng.gen_range(0..4) {
            0 => {
                let k = rng.gen_range(0..b.len());
                b[k] ^= rng.gen_range(1..=255u8);
            }
            1 => b.truncate(rng.gen_range(0..b.len())),
            2 => b.extend((0..rng.gen_range(1..32)).map(|_| rng.gen::<u8>())),
            _ => {
                let len = rng.gen_range(0..=1 << 20);
                b = (0..len).map(|_| rng.gen()).collect();
                if len >= 4 {
                    b[..4].copy_from_slice(if is_volume { b"NFMV" } else { b"NFMS" });
                }
            }
        }
        std::fs::write(&fp, &b).unwrap();
        let result = panic::catch_unwind(|| {
            if is_volume {
                io::read_volume(&fp, grid).is_err()
            } else {
                io::read_measurements(&fp, Some(&p.scenario)).is_err()
            }
        });
        match result {
            Ok(true) => rejected += 1,
            Ok(false) => accepted += 1,
            Err(_) => crashed += 1,
        }
    }
    check(
        v_ok && y_ok && s_ok && rejected == 1000,
        format!(
            "volume {v_ok}, measurements {y_ok}, scenario {s_ok}; fuzz: {rejected} rejected, {accepted} accepted, {crashed} crashed"
        ),
    )
}

fn main() {
    let secs = Duration::from_secs;
    let mut runner = Runner { failures: 0 };
    runner.run(1, "paper-v dimensions", secs(1), dimensions);
    runner.run(2, "operator vs dense oracle", secs(10), operator_vs_dense);
    runner.run(3, "gradient vs finite differences", secs(30), gradient_vs_finite_differences);
    runner.run(4, "prox vs golden-section search", secs(10), prox_vs_golden_section);

    let start = Instant::now();
    let paper = Paper::new();
    println!(
        "setup: paper-v operator ({} cached) and 30 dB measurements, {:.1} s",
        if paper.op.is_cached() { "phasors" } else { "nothing" },
        start.elapsed().as_secs_f64()
    );
    let mut fixed = None;
    runner.run(5, "SPGM/PGM degeneracy", secs(300), || degeneracy(&paper));
    runner.run(6, "fixed-point agreement", secs(600), || fixed_point(&paper, &mut fixed));
    runner.run(7, "speedup trend", secs(600), || speedup(&paper, fixed.as_ref()));
    runner.run(8, "time-budget comparison", secs(600), || time_budget(&paper, fixed.as_ref()));
    runner.run(9, "end-to-end localization", secs(300), localization);
    runner.run(10, "io round-trips and fuzzing", secs(60), || io_roundtrips(&paper, fixed.as_ref()));

    println!("acceptance: {} of 10 criteria passed", 10 - runner.failures);
    if runner.failures > 0 {
        std::process::exit(1);
    }
}
