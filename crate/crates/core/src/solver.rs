//! l1-regularized reconstruction by proximal gradient iterations.
//!
//! The data term is `D(s) = 1/(2M) ||y - A s||^2`, the average of the
//! per-channel terms `D_m(s) = |y_m - (A s)_m|^2 / 2`. Its gradient is taken
//! in the conjugate (Wirtinger) sense, `g = 1/M A^H (A s - y)`, so that
//! `Re g_n = dD/d(Re s_n)` and `Im g_n = dD/d(Im s_n)`.
//!
//! Each iteration computes
//!
//! ```text
//! s <- soft_threshold(s - eta * g, alpha)
//! ```
//!
//! with `g` either the full gradient (PGM) or the average of the component
//! gradients over a random minibatch of channels (SPGM). Minibatches are the
//! Cartesian product of independently drawn frequency, transmitter and
//! receiver subsets.

use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward::{BornOperator, ChannelSubset, MeasurementSet, ReflectivityVolume};
use crate::geometry::ImagingScenario;

pub const DEFAULT_ETA: f64 = 1e-3;
pub const DEFAULT_ALPHA: f64 = 4e-5;
pub const DEFAULT_TOL: f64 = 1e-3;
pub const DEFAULT_MAX_ITERS: usize = 2000;

/// Guards the relative magnitude change against an all-zero iterate.
const TERMINATION_EPS: f64 = 1e-12;

/// Numbers of frequencies, transmitters and receivers drawn per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct MinibatchComposition {
    pub n_f: usize,
    pub n_tx: usize,
    pub n_rx: usize,
}

impl MinibatchComposition {
    pub const fn new(n_f: usize, n_tx: usize, n_rx: usize) -> Self {
        Self { n_f, n_tx, n_rx }
    }

    /// The composition that covers every channel of `scenario`.
    pub fn full(scenario: &ImagingScenario) -> Self {
        Self::new(scenario.n_freq(), scenario.n_tx(), scenario.n_rx())
    }

    pub fn batch_size(&self) -> usize {
        self.n_f * self.n_tx * self.n_rx
    }

    pub fn validate(&self, scenario: &ImagingScenario) -> Result<()> {
        let axes = [
            ("frequencies", self.n_f, scenario.n_freq()),
            ("transmitters", self.n_tx, scenario.n_tx()),
            ("receivers", self.n_rx, scenario.n_rx()),
        ];
        for (name, want, have) in axes {
            if want == 0 || want > have {
                return Err(Error::param(format!(
                    "composition asks for {want} {name}, scenario has {have}"
                )));
            }
        }
        Ok(())
    }
}

impl std::fmt::Display for MinibatchComposition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{})", self.n_f, self.n_tx, self.n_rx)
    }
}

impl std::str::FromStr for MinibatchComposition {
    type Err = Error;

    /// Parses `"f,tx,rx"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<_> = s
            .trim()
            .trim_start_matches('(')
            .trim_end_matches(')')
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect();
        match parts.as_slice() {
            [Ok(f), Ok(t), Ok(r)] => Ok(Self::new(*f, *t, *r)),
            _ => Err(Error::param(format!(
                "composition must look like `f,tx,rx`, got `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Composition {
    /// Deterministic full gradient every iteration.
    Full,
    Minibatch(MinibatchComposition),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Gradient step size.
    pub eta: f64,
    /// Soft-threshold level per iteration (regularization weight times `eta`).
    pub alpha: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    pub composition: Composition,
    /// Checked between iterations; at least one iteration always runs.
    pub time_budget: Option<Duration>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eta: DEFAULT_ETA,
            alpha: DEFAULT_ALPHA,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            seed: 0,
            composition: Composition::Full,
            time_budget: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, scenario: &ImagingScenario) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::param(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::param(format!(
                "alpha must be non-negative, got {}",
                self.alpha
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::param(format!("tol must be positive, got {}", self.tol)));
        }
        if let Composition::Minibatch(c) = self.composition {
            c.validate(scenario)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ToleranceReached,
    MaxIters,
    TimeBudget,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Termination::ToleranceReached => "tolerance_reached",
            Termination::MaxIters => "max_iters",
            Termination::TimeBudget => "time_budget",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub magnitude_change: f64,
    pub elapsed_seconds: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub volume: ReflectivityVolume,
    pub iterations: usize,
    pub wall_time: Duration,
    pub per_iteration: Vec<IterationRecord>,
    pub termination: Termination,
}

impl SolveReport {
    /// Mean wall time per iteration, in seconds.
    pub fn seconds_per_iteration(&self) -> f64 {
        self.wall_time.as_secs_f64() / self.iterations.max(1) as f64
    }
}

fn check_measurements(op: &BornOperator, y: &[Complex64]) -> Result<()> {
    if y.len() != op.num_channels() {
        return Err(Error::shape(format!(
            "{} measurements for {} channels",
            y.len(),
            op.num_channels()
        )));
    }
    Ok(())
}

/// `1/(2B) sum_{m in subset} |y_m - (A s)_m|^2`; with the full subset this
/// is `1/(2M) ||y - A s||^2`.
pub fn data_fidelity(
    op: &BornOperator,
    s: &[Complex64],
    y: &[Complex64],
    subset: &ChannelSubset,
) -> Result<f64> {
    check_measurements(op, y)?;
    let pred = op.forward_slice(s, subset)?;
    let sum: f64 = subset
        .indices()
        .iter()
        .zip(&pred)
        .map(|(&m, p)| (y[m] - p).norm_sqr())
        .sum();
    Ok(0.5 * sum / subset.len() as f64)
}

/// `1/B A_sub^H (A_sub s - y_sub)`.
pub fn minibatch_gradient(
    op: &BornOperator,
    s: &[Complex64],
    y: &[Complex64],
    subset: &ChannelSubset,
) -> Result<Vec<Complex64>> {
    check_measurements(op, y)?;
    if subset.is_empty() {
        return Err(Error::param("minibatch must not be empty"));
    }
    let mut residual = op.forward_slice(s, subset)?;
    for (r, &m) in residual.iter_mut().zip(subset.indices()) {
        *r -= y[m];
    }
    let mut g = op.adjoint(&residual, subset)?;
    let inv_b = 1.0 / subset.len() as f64;
    for v in g.iter_mut() {
        *v *= inv_b;
    }
    Ok(g)
}

/// `1/M A^H (A s - y)`.
pub fn full_gradient(op: &BornOperator, s: &[Complex64], y: &[Complex64]) -> Result<Vec<Complex64>> {
    minibatch_gradient(op, s, y, &ChannelSubset::all(op.num_channels()))
}

/// Draws `n_f` frequencies, `n_tx` transmitters and `n_rx` receivers, each
/// uniformly without replacement, and returns the product channels in
/// canonical (sorted) order.
pub fn sample_minibatch<R: Rng + ?Sized>(
    composition: &MinibatchComposition,
    scenario: &ImagingScenario,
    rng: &mut R,
) -> Result<ChannelSubset> {
    composition.validate(scenario)?;
    let draw = |rng: &mut R, len: usize, amount: usize| {
        let mut v = index::sample(rng, len, amount).into_vec();
        v.sort_unstable();
        v
    };
    let freqs = draw(rng, scenario.n_freq(), composition.n_f);
    let txs = draw(rng, scenario.n_tx(), composition.n_tx);
    let rxs = draw(rng, scenario.n_rx(), composition.n_rx);

    let (n_tx, n_rx) = (scenario.n_tx(), scenario.n_rx());
    let mut indices = Vec::with_capacity(composition.batch_size());
    for &f in &freqs {
        for &t in &txs {
            for &r in &rxs {
                indices.push(r + n_rx * (t + n_tx * f));
            }
        }
    }
    ChannelSubset::new(indices, scenario.num_channels())
}

/// Independent generator for iteration `iter` of a run seeded with `seed`.
pub fn minibatch_rng(seed: u64, iter: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iter as u64);
    rng
}

/// Proximal map of `alpha * ||.||_1` on complex vectors: shrinks each
/// magnitude by `alpha` and keeps the phase.
pub fn soft_threshold(v: &[Complex64], alpha: f64) -> Result<Vec<Complex64>> {
    let mut out = v.to_vec();
    soft_threshold_in_place(&mut out, alpha)?;
    Ok(out)
}

pub fn soft_threshold_in_place(v: &mut [Complex64], alpha: f64) -> Result<()> {
    if !(alpha >= 0.0) {
        return Err(Error::param(format!("alpha must be non-negative, got {alpha}")));
    }
    if alpha == 0.0 {
        return Ok(());
    }
    for x in v.iter_mut() {
        let mag = x.norm();
        *x = if mag > alpha {
            *x * ((mag - alpha) / mag)
        } else {
            Complex64::new(0.0, 0.0)
        };
    }
    Ok(())
}

/// `|| |next| - |prev| ||_2 / max(|| |prev| ||_2, eps)`.
pub fn magnitude_change(prev: &[Complex64], next: &[Complex64]) -> Result<f64> {
    if prev.len() != next.len() {
        return Err(Error::shape(format!(
            "iterates differ in length: {} vs {}",
            prev.len(),
            next.len()
        )));
    }
    let (mut diff, mut base) = (0.0, 0.0);
    for (p, n) in prev.iter().zip(next) {
        let (a, b) = (p.norm(), n.norm());
        diff += (b - a) * (b - a);
        base += a * a;
    }
    Ok(diff.sqrt() / base.sqrt().max(TERMINATION_EPS))
}

pub fn check_termination(prev: &[Complex64], next: &[Complex64], tol: f64) -> Result<bool> {
    Ok(magnitude_change(prev, next)? < tol)
}

/// Full-gradient proximal gradient method from `s = 0`.
pub fn pgm_solve(op: &BornOperator, y: &MeasurementSet, config: &SolverConfig) -> Result<SolveReport> {
    let config = SolverConfig {
        composition: Composition::Full,
        ..*config
    };
    solve(op, y.values(), &config, |_, _| {})
}

/// Stochastic proximal gradient with a fresh minibatch every iteration.
/// [`Composition::Full`] degenerates to [`pgm_solve`].
pub fn spgm_solve(op: &BornOperator, y: &MeasurementSet, config: &SolverConfig) -> Result<SolveReport> {
    solve(op, y.values(), config, |_, _| {})
}

/// Runs the iteration, calling `observer` with each record and the new
/// iterate. The observer runs on the solver thread.
pub fn solve<F>(
    op: &BornOperator,
    y: &[Complex64],
    config: &SolverConfig,
    mut observer: F,
) -> Result<SolveReport>
where
    F: FnMut(&IterationRecord, &[Complex64]),
{
    let scenario = op.scenario();
    config.validate(scenario)?;
    check_measurements(op, y)?;

    let full = ChannelSubset::all(op.num_channels());
    let mut s = vec![Complex64::new(0.0, 0.0); op.num_voxels()];
    let mut records = Vec::new();
    let start = Instant::now();
    let mut termination = Termination::MaxIters;

    for iter in 1..=config.max_iters {
        let sampled;
        let subset = match config.composition {
            Composition::Full => &full,
            Composition::Minibatch(c) => {
                sampled = sample_minibatch(&c, scenario, &mut minibatch_rng(config.seed, iter))?;
                &sampled
            }
        };
        let grad = minibatch_gradient(op, &s, y, subset)?;
        let mut next: Vec<Complex64> = s
            .iter()
            .zip(&grad)
            .map(|(v, g)| v - g * config.eta)
            .collect();
        soft_threshold_in_place(&mut next, config.alpha)?;

        let change = magnitude_change(&s, &next)?;
        let elapsed = start.elapsed();
        let record = IterationRecord {
            iter,
            magnitude_change: change,
            elapsed_seconds: elapsed.as_secs_f64(),
            batch_size: subset.len(),
        };
        s = next;
        observer(&record, &s);
        records.push(record);

        if change < config.tol {
            termination = Termination::ToleranceReached;
            break;
        }
        if config.time_budget.is_some_and(|b| elapsed >= b) {
            termination = Termination::TimeBudget;
            break;
        }
    }

    Ok(SolveReport {
        volume: ReflectivityVolume::new(*scenario.voxels(), s)?,
        iterations: records.len(),
        wall_time: start.elapsed(),
        per_iteration: records,
        termination,
    })
}

/// Power-iteration estimate of the largest eigenvalue of `1/M A^H A`, the
/// Lipschitz constant of the full gradient. Step sizes below `1/L` make the
/// unregularized iteration monotone.
pub fn estimate_lipschitz(op: &BornOperator, iters: usize, seed: u64) -> Result<f64> {
    let full = ChannelSubset::all(op.num_channels());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<Complex64> = (0..op.num_voxels())
        .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
        .collect();
    let inv_m = 1.0 / op.num_channels() as f64;
    let mut lambda = 0.0;
    for _ in 0..iters.max(1) {
        let norm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v.iter_mut().for_each(|x| *x /= norm);
        let av = op.forward_slice(&v, &full)?;
        lambda = av.iter().map(|x| x.norm_sqr()).sum::<f64>() * inv_m;
        v = op.adjoint(&av, &full)?;
        v.iter_mut().for_each(|x| *x *= inv_m);
    }
    Ok(lambda)
}
