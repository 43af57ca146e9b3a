//! Matrix-free Born observation operator.
//!
//! The element linking channel `m = (f, tx, rx)` to voxel `n` is
//!
//! ```text
//! A[m, n] = p(f) * exp(-j k (d_T + d_R)) / (4 pi d_T d_R),   k = 2 pi f / c
//! ```
//!
//! which factors into a transmitter term `exp(-j k d_T) / d_T` and a receiver
//! term `exp(-j k d_R) / (4 pi d_R)`. [`BornOperator`] evaluates those
//! per-antenna phasors (optionally caching them, which costs
//! `F * (Tx + Rx) * N` complex values instead of the `M * N` of the dense
//! matrix) and combines them on the fly.
//!
//! Voxels are processed in fixed-size chunks. Forward partial sums are
//! reduced in chunk order and every channel is computed independently of the
//! other channels in the request, so results are bit-identical across thread
//! counts and across channel subsets.

use std::f64::consts::PI;
use std::ops::Range;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{ImagingScenario, Vec3, VoxelGrid};
use crate::io::Fingerprint;
use crate::kernels::{self, CxBuf, CxSlice};

const CHUNK: usize = 2048;
const FOUR_PI: f64 = 4.0 * PI;

/// Default ceiling on the phasor cache, in bytes.
pub const DEFAULT_CACHE_LIMIT: usize = 1 << 30;

/// Default ceiling on `M * N` for [`materialize_dense`].
pub const DEFAULT_DENSE_CAP: usize = 10_000_000;

/// Complex reflectivity `s` over a voxel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectivityVolume {
    values: Vec<Complex64>,
    grid: VoxelGrid,
}

impl ReflectivityVolume {
    pub fn new(grid: VoxelGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::shape(format!(
                "volume has {} values, grid has {} voxels",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(format!("volume entry {i} is not finite")));
        }
        Ok(Self { values, grid })
    }

    pub fn zeros(grid: VoxelGrid) -> Self {
        Self {
            values: vec![Complex64::new(0.0, 0.0); grid.len()],
            grid,
        }
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Entrywise magnitudes.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }

    /// Flat index of the voxel with the largest magnitude.
    pub fn argmax_magnitude(&self) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, v) in self.values.iter().enumerate() {
            let a = v.norm();
            if a > best.1 {
                best = (i, a);
            }
        }
        best.0
    }
}

/// Measured (or simulated) channel vector `y`, tagged with the fingerprint
/// of the scenario it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    values: Vec<Complex64>,
    fingerprint: Fingerprint,
    noise_sigma: Option<f64>,
}

impl MeasurementSet {
    pub fn new(
        scenario: &ImagingScenario,
        values: Vec<Complex64>,
        noise_sigma: Option<f64>,
    ) -> Result<Self> {
        if values.len() != scenario.num_channels() {
            return Err(Error::shape(format!(
                "{} measurements for a scenario with {} channels",
                values.len(),
                scenario.num_channels()
            )));
        }
        Ok(Self {
            values,
            fingerprint: scenario.fingerprint(),
            noise_sigma,
        })
    }

    /// Assembles a measurement set without a scenario at hand (file loading).
    pub fn from_parts(values: Vec<Complex64>, fingerprint: Fingerprint) -> Self {
        Self {
            values,
            fingerprint,
            noise_sigma: None,
        }
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn fingerprint(&self) -> &Fingerprint {
        &self.fingerprint
    }

    pub fn noise_sigma(&self) -> Option<f64> {
        self.noise_sigma
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Fails unless the set has the scenario's channel count and fingerprint.
    pub fn check_scenario(&self, scenario: &ImagingScenario) -> Result<()> {
        if self.values.len() != scenario.num_channels() {
            return Err(Error::shape(format!(
                "{} measurements for a scenario with {} channels",
                self.values.len(),
                scenario.num_channels()
            )));
        }
        if self.fingerprint != scenario.fingerprint() {
            return Err(Error::FingerprintMismatch);
        }
        Ok(())
    }
}

/// Ordered, duplicate-free list of flat channel indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelSubset {
    indices: Vec<usize>,
}

impl ChannelSubset {
    pub fn new(indices: Vec<usize>, num_channels: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::param("channel subset must not be empty"));
        }
        let mut seen = vec![false; num_channels];
        for &m in &indices {
            if m >= num_channels {
                return Err(Error::Index {
                    what: "channel",
                    index: m,
                    len: num_channels,
                });
            }
            if std::mem::replace(&mut seen[m], true) {
                return Err(Error::param(format!("channel {m} listed twice")));
            }
        }
        Ok(Self { indices })
    }

    /// Every channel, in canonical order.
    pub fn all(num_channels: usize) -> Self {
        Self {
            indices: (0..num_channels).collect(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Direct evaluation of a single matrix element.
pub fn matrix_element(scenario: &ImagingScenario, m: usize, n: usize) -> Result<Complex64> {
    let ch = scenario.channel_of(m)?;
    let r_n = scenario.voxels().voxel_center(n)?;
    let f = scenario.frequencies().frequency(ch.fi);
    let p = scenario
        .pulse()
        .at(f)
        .ok_or_else(|| Error::param(format!("pulse undefined at {f} Hz")))?;
    let d_t = scenario.array().transmitters()[ch.ti].distance(&r_n);
    let d_r = scenario.array().receivers()[ch.ri].distance(&r_n);
    if d_t == 0.0 || d_r == 0.0 {
        return Err(Error::Singularity {
            voxel: n,
            antenna: if d_t == 0.0 {
                format!("transmitter {}", ch.ti)
            } else {
                format!("receiver {}", ch.ri)
            },
        });
    }
    let phase = -2.0 * PI / scenario.speed_of_light() * f * (d_t + d_r);
    Ok(p * Complex64::from_polar(1.0, phase) / (FOUR_PI * d_t * d_r))
}

/// `exp(-j k d) / (scale * d)`
#[inline]
fn phasor(k: f64, antenna: &Vec3, voxel: &Vec3, scale: f64) -> Complex64 {
    let d = antenna.distance(voxel);
    let (sin, cos) = (k * d).sin_cos();
    Complex64::new(cos, -sin) / (scale * d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Tx,
    Rx,
}

impl Side {
    fn scale(self) -> f64 {
        match self {
            Side::Tx => 1.0,
            Side::Rx => FOUR_PI,
        }
    }
}

/// Cached phasors, row `(antenna * F + fi)` holds all `N` voxels.
struct PhasorTables {
    tx: CxBuf,
    rx: CxBuf,
}

#[derive(Debug, Clone, Copy)]
pub struct OperatorOptions {
    /// Cache per-antenna phasors when they fit under this many bytes.
    pub cache_limit_bytes: usize,
}

impl Default for OperatorOptions {
    fn default() -> Self {
        Self {
            cache_limit_bytes: DEFAULT_CACHE_LIMIT,
        }
    }
}

/// Channels of a request grouped by frequency, then transmitter.
struct Plan {
    groups: Vec<FreqGroup>,
}

struct FreqGroup {
    fi: usize,
    rx_used: Vec<usize>,
    tx: Vec<TxGroup>,
}

struct TxGroup {
    ti: usize,
    /// (slot into `rx_used`, position of the channel in the request)
    entries: Vec<(usize, usize)>,
}

impl Plan {
    fn new(scenario: &ImagingScenario, subset: &ChannelSubset) -> Self {
        let mut chans: Vec<(usize, usize, usize, usize)> = subset
            .indices()
            .iter()
            .enumerate()
            .map(|(k, &m)| {
                let ch = scenario.channel_of(m).expect("subset validated");
                (ch.fi, ch.ti, ch.ri, k)
            })
            .collect();
        chans.sort_unstable();

        let mut groups: Vec<FreqGroup> = Vec::new();
        for (fi, ti, ri, k) in chans {
            if groups.last().map_or(true, |g| g.fi != fi) {
                groups.push(FreqGroup {
                    fi,
                    rx_used: Vec::new(),
                    tx: Vec::new(),
                });
            }
            let g = groups.last_mut().unwrap();
            let slot = match g.rx_used.iter().position(|&r| r == ri) {
                Some(s) => s,
                None => {
                    g.rx_used.push(ri);
                    g.rx_used.len() - 1
                }
            };
            if g.tx.last().map_or(true, |t| t.ti != ti) {
                g.tx.push(TxGroup {
                    ti,
                    entries: Vec::new(),
                });
            }
            g.tx.last_mut().unwrap().entries.push((slot, k));
        }
        Plan { groups }
    }
}

/// Per-chunk working memory.
#[derive(Default)]
struct Scratch {
    tx: CxBuf,
    rx: Vec<CxBuf>,
    work: CxBuf,
    acc: CxBuf,
}

/// Matrix-free observation operator for one scenario.
pub struct BornOperator {
    scenario: ImagingScenario,
    centers: Vec<Vec3>,
    wavenumbers: Vec<f64>,
    pulse: Vec<Complex64>,
    tables: Option<PhasorTables>,
}

impl std::fmt::Debug for BornOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BornOperator")
            .field("channels", &self.num_channels())
            .field("voxels", &self.num_voxels())
            .field("cached", &self.tables.is_some())
            .finish()
    }
}

impl BornOperator {
    pub fn new(scenario: &ImagingScenario) -> Self {
        Self::with_options(scenario, OperatorOptions::default())
    }

    pub fn with_options(scenario: &ImagingScenario, options: OperatorOptions) -> Self {
        let c = scenario.speed_of_light();
        let mut op = Self {
            scenario: scenario.clone(),
            centers: scenario.voxels().centers(),
            wavenumbers: scenario
                .frequencies()
                .iter()
                .map(|f| 2.0 * PI * f / c)
                .collect(),
            pulse: scenario.pulse_values(),
            tables: None,
        };
        let rows = scenario.n_freq() * (scenario.n_tx() + scenario.n_rx());
        let bytes = rows
            .saturating_mul(scenario.num_voxels())
            .saturating_mul(std::mem::size_of::<Complex64>());
        if bytes <= options.cache_limit_bytes {
            op.tables = Some(PhasorTables {
                tx: op.build_table(Side::Tx),
                rx: op.build_table(Side::Rx),
            });
        }
        op
    }

    fn antennas(&self, side: Side) -> &[Vec3] {
        match side {
            Side::Tx => self.scenario.array().transmitters(),
            Side::Rx => self.scenario.array().receivers(),
        }
    }

    fn build_table(&self, side: Side) -> CxBuf {
        let n = self.num_voxels();
        let n_f = self.wavenumbers.len();
        let antennas = self.antennas(side);
        let mut table = CxBuf::zeros(antennas.len() * n_f * n);
        table
            .re
            .par_chunks_mut(n)
            .zip(table.im.par_chunks_mut(n))
            .enumerate()
            .for_each(|(row, (re, im))| {
                let (a, fi) = (row / n_f, row % n_f);
                let k = self.wavenumbers[fi];
                for ((r, i), c) in re.iter_mut().zip(im.iter_mut()).zip(&self.centers) {
                    let p = phasor(k, &antennas[a], c, side.scale());
                    *r = p.re;
                    *i = p.im;
                }
            });
        table
    }

    pub fn scenario(&self) -> &ImagingScenario {
        &self.scenario
    }

    pub fn num_channels(&self) -> usize {
        self.scenario.num_channels()
    }

    pub fn num_voxels(&self) -> usize {
        self.scenario.num_voxels()
    }

    pub fn is_cached(&self) -> bool {
        self.tables.is_some()
    }

    /// Cached phasor row segment, if the tables exist.
    fn cached(&self, side: Side, antenna: usize, fi: usize, range: Range<usize>) -> Option<CxSlice<'_>> {
        let t = self.tables.as_ref()?;
        let table = match side {
            Side::Tx => &t.tx,
            Side::Rx => &t.rx,
        };
        let row = (antenna * self.wavenumbers.len() + fi) * self.num_voxels();
        Some(table.view().range(row + range.start..row + range.end))
    }

    fn compute_phasors(&self, side: Side, antenna: usize, fi: usize, range: Range<usize>, out: &mut CxBuf) {
        let k = self.wavenumbers[fi];
        let pos = &self.antennas(side)[antenna];
        out.clear();
        for c in &self.centers[range] {
            out.push(phasor(k, pos, c, side.scale()));
        }
    }

    /// Receiver phasors of one frequency group over a voxel range.
    fn rx_phasors<'a>(&'a self, g: &FreqGroup, range: &Range<usize>, bufs: &'a mut Vec<CxBuf>) -> Vec<CxSlice<'a>> {
        if self.tables.is_none() {
            bufs.resize_with(bufs.len().max(g.rx_used.len()), CxBuf::default);
            for (&ri, buf) in g.rx_used.iter().zip(bufs.iter_mut()) {
                self.compute_phasors(Side::Rx, ri, g.fi, range.clone(), buf);
            }
            return bufs[..g.rx_used.len()].iter().map(|b| b.view()).collect();
        }
        g.rx_used
            .iter()
            .map(|&ri| self.cached(Side::Rx, ri, g.fi, range.clone()).unwrap())
            .collect()
    }

    fn tx_phasors<'a>(&'a self, ti: usize, fi: usize, range: &Range<usize>, buf: &'a mut CxBuf) -> CxSlice<'a> {
        match self.cached(Side::Tx, ti, fi, range.clone()) {
            Some(s) => s,
            None => {
                self.compute_phasors(Side::Tx, ti, fi, range.clone(), buf);
                buf.view()
            }
        }
    }

    fn check_volume(&self, s: &[Complex64]) -> Result<()> {
        if s.len() != self.num_voxels() {
            return Err(Error::shape(format!(
                "volume has {} voxels, scenario has {}",
                s.len(),
                self.num_voxels()
            )));
        }
        Ok(())
    }

    /// `A_sub s`, one entry per channel of `subset` in the subset's order.
    pub fn forward(&self, s: &ReflectivityVolume, subset: &ChannelSubset) -> Result<Vec<Complex64>> {
        if s.grid() != self.scenario.voxels() {
            return Err(Error::shape("volume grid differs from scenario grid"));
        }
        self.forward_slice(s.values(), subset)
    }

    /// [`BornOperator::forward`] on a raw voxel vector.
    pub fn forward_slice(&self, s: &[Complex64], subset: &ChannelSubset) -> Result<Vec<Complex64>> {
        self.check_volume(s)?;
        self.check_subset(subset)?;
        let plan = Plan::new(&self.scenario, subset);
        let b = subset.len();
        let n = self.num_voxels();
        let s = CxBuf::from_complex(s);

        let partials: Vec<Vec<Complex64>> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map_init(Scratch::default, |scratch, c| {
                let range = c * CHUNK..((c + 1) * CHUNK).min(n);
                self.forward_chunk(&plan, s.view(), range, b, scratch)
            })
            .collect();

        let mut out = vec![Complex64::new(0.0, 0.0); b];
        for part in &partials {
            for (o, p) in out.iter_mut().zip(part) {
                *o += p;
            }
        }
        for g in &plan.groups {
            let p = self.pulse[g.fi];
            for t in &g.tx {
                for &(_, k) in &t.entries {
                    out[k] *= p;
                }
            }
        }
        Ok(out)
    }

    fn forward_chunk(
        &self,
        plan: &Plan,
        s: CxSlice<'_>,
        range: Range<usize>,
        b: usize,
        scratch: &mut Scratch,
    ) -> Vec<Complex64> {
        let s = s.range(range.clone());
        let mut out = vec![Complex64::new(0.0, 0.0); b];
        let Scratch { tx, rx, work, .. } = scratch;
        work.re.resize(range.len(), 0.0);
        work.im.resize(range.len(), 0.0);

        for g in &plan.groups {
            let rx = self.rx_phasors(g, &range, rx);
            for t in &g.tx {
                let tx = self.tx_phasors(t.ti, g.fi, &range, tx);
                kernels::mul(tx, s, work);
                for &(slot, k) in &t.entries {
                    out[k] = kernels::dot(rx[slot], work.view());
                }
            }
        }
        out
    }

    /// `A_sub^H r`, a full voxel vector.
    pub fn adjoint(&self, r: &[Complex64], subset: &ChannelSubset) -> Result<Vec<Complex64>> {
        self.check_subset(subset)?;
        if r.len() != subset.len() {
            return Err(Error::shape(format!(
                "residual has {} entries, subset has {} channels",
                r.len(),
                subset.len()
            )));
        }
        let plan = Plan::new(&self.scenario, subset);
        let mut weighted = r.to_vec();
        for g in &plan.groups {
            let p = self.pulse[g.fi].conj();
            for t in &g.tx {
                for &(_, k) in &t.entries {
                    weighted[k] *= p;
                }
            }
        }

        let mut out = vec![Complex64::new(0.0, 0.0); self.num_voxels()];
        out.par_chunks_mut(CHUNK)
            .enumerate()
            .for_each_init(Scratch::default, |scratch, (c, out)| {
                let start = c * CHUNK;
                self.adjoint_chunk(&plan, &weighted, start..start + out.len(), out, scratch);
            });
        Ok(out)
    }

    fn adjoint_chunk(
        &self,
        plan: &Plan,
        r: &[Complex64],
        range: Range<usize>,
        out: &mut [Complex64],
        scratch: &mut Scratch,
    ) {
        let Scratch { tx, rx, work, acc } = scratch;
        *acc = CxBuf::zeros(range.len());
        *work = CxBuf::zeros(range.len());

        for g in &plan.groups {
            let rx = self.rx_phasors(g, &range, rx);
            for t in &g.tx {
                work.fill_zero();
                for &(slot, k) in &t.entries {
                    kernels::conj_axpy(rx[slot], r[k], work);
                }
                let tx = self.tx_phasors(t.ti, g.fi, &range, tx);
                kernels::conj_mul_acc(tx, work.view(), acc);
            }
        }
        for ((o, re), im) in out.iter_mut().zip(&acc.re).zip(&acc.im) {
            *o = Complex64::new(*re, *im);
        }
    }

    fn check_subset(&self, subset: &ChannelSubset) -> Result<()> {
        match subset.indices().iter().find(|&&m| m >= self.num_channels()) {
            Some(&m) => Err(Error::Index {
                what: "channel",
                index: m,
                len: self.num_channels(),
            }),
            None => Ok(()),
        }
    }

    /// `A s + w` with circularly-symmetric complex Gaussian noise of
    /// per-entry standard deviation `noise_sigma` (`E|w|^2 = sigma^2`).
    pub fn simulate(&self, s: &ReflectivityVolume, noise_sigma: f64, seed: u64) -> Result<MeasurementSet> {
        if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
            return Err(Error::param(format!(
                "noise sigma must be non-negative, got {noise_sigma}"
            )));
        }
        let mut y = self.forward(s, &ChannelSubset::all(self.num_channels()))?;
        if noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scale = noise_sigma / 2f64.sqrt();
            for v in y.iter_mut() {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                *v += Complex64::new(re, im) * scale;
            }
        }
        MeasurementSet::new(&self.scenario, y, Some(noise_sigma))
    }
}

/// Noise sigma giving the requested measurement SNR (in dB) relative to the
/// mean power of `clean`.
pub fn noise_sigma_for_snr(clean: &[Complex64], snr_db: f64) -> f64 {
    let power = clean.iter().map(|v| v.norm_sqr()).sum::<f64>() / clean.len().max(1) as f64;
    (power / 10f64.powf(snr_db / 10.0)).sqrt()
}

/// Row-major dense copy of `A`. Only meant as a test oracle.
#[derive(Debug, Clone)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl DenseMatrix {
    pub fn get(&self, m: usize, n: usize) -> Complex64 {
        self.data[m * self.cols + n]
    }

    pub fn mul_vec(&self, s: &[Complex64]) -> Vec<Complex64> {
        (0..self.rows)
            .map(|m| {
                self.data[m * self.cols..(m + 1) * self.cols]
                    .iter()
                    .zip(s)
                    .map(|(a, v)| a * v)
                    .sum()
            })
            .collect()
    }

    pub fn adjoint_mul_vec(&self, r: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.cols];
        for (m, rm) in r.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(&self.data[m * self.cols..(m + 1) * self.cols]) {
                *o += a.conj() * rm;
            }
        }
        out
    }
}

/// Builds `A` entry by entry from [`matrix_element`], refusing when
/// `M * N` exceeds `cap`.
pub fn materialize_dense(scenario: &ImagingScenario, cap: usize) -> Result<DenseMatrix> {
    let (rows, cols) = (scenario.num_channels(), scenario.num_voxels());
    let entries = rows
        .checked_mul(cols)
        .filter(|&e| e <= cap)
        .ok_or_else(|| {
            Error::Resource(format!("dense matrix {rows}x{cols} exceeds cap of {cap} entries"))
        })?;
    let mut data = Vec::with_capacity(entries);
    for m in 0..rows {
        for n in 0..cols {
            data.push(matrix_element(scenario, m, n)?);
        }
    }
    Ok(DenseMatrix { rows, cols, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ArrayGeometry, FrequencyGrid, PulseSpectrum, SPEED_OF_LIGHT};
    use approx::assert_abs_diff_eq;

    fn single(voxel_z: f64, f: f64, tx: Vec3, rx: Vec3) -> ImagingScenario {
        ImagingScenario::new(
            ArrayGeometry::new(vec![tx], vec![rx]).unwrap(),
            FrequencyGrid::new(f, f, 1).unwrap(),
            VoxelGrid::new(Vec3::new(0.0, 0.0, voxel_z), [0.0; 3], [1, 1, 1]).unwrap(),
            PulseSpectrum::default(),
            SPEED_OF_LIGHT,
        )
        .unwrap()
    }

    #[test]
    fn element_full_wavelength() {
        let o = Vec3::default();
        let s = single(0.5, SPEED_OF_LIGHT, o, o);
        let v = matrix_element(&s, 0, 0).unwrap();
        assert_abs_diff_eq!(v.re, 1.0 / PI, epsilon = 1e-12);
        assert_abs_diff_eq!(v.im, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn element_quarter_wave() {
        let o = Vec3::default();
        let s = single(0.5, SPEED_OF_LIGHT / 4.0, o, o);
        let v = matrix_element(&s, 0, 0).unwrap();
        assert_abs_diff_eq!(v.re, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v.im, -1.0 / PI, epsilon = 1e-12);
    }

    #[test]
    fn element_golden_bistatic() {
        // Frozen from a 40-digit evaluation of the element formula.
        let s = single(0.4, 10e9, Vec3::new(0.1, 0.0, 0.0), Vec3::new(-0.1, 0.0, 0.0));
        let v = matrix_element(&s, 0, 0).unwrap();
        assert_abs_diff_eq!(v.re, -0.467_724_361_393_509_86, epsilon = 1e-13);
        assert_abs_diff_eq!(v.im, 0.018_818_304_865_187_815, epsilon = 1e-13);
        // The operator path agrees.
        let op = BornOperator::new(&s);
        let vol = ReflectivityVolume::new(*s.voxels(), vec![Complex64::new(1.0, 0.0)]).unwrap();
        let y = op.forward(&vol, &ChannelSubset::all(1)).unwrap();
        assert_abs_diff_eq!((y[0] - v).norm(), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn element_magnitude_is_spreading_loss() {
        let s = ImagingScenario::paper_preset();
        for (m, n) in [(0, 0), (17, 5000), (1583, 78_140), (700, 39_000)] {
            let ch = s.channel_of(m).unwrap();
            let r = s.voxels().voxel_center(n).unwrap();
            let dt = s.array().transmitters()[ch.ti].distance(&r);
            let dr = s.array().receivers()[ch.ri].distance(&r);
            let v = matrix_element(&s, m, n).unwrap();
            assert_abs_diff_eq!(v.norm(), 1.0 / (FOUR_PI * dt * dr), epsilon = 1e-14);
        }
    }

    #[test]
    fn subset_validation() {
        assert!(ChannelSubset::new(vec![], 4).is_err());
        assert!(ChannelSubset::new(vec![1, 1], 4).is_err());
        assert!(matches!(ChannelSubset::new(vec![4], 4), Err(Error::Index { .. })));
        assert_eq!(ChannelSubset::new(vec![3, 0], 4).unwrap().len(), 2);
    }

    #[test]
    fn shape_errors() {
        let s = single(0.5, 1e9, Vec3::default(), Vec3::new(0.1, 0.0, 0.0));
        let op = BornOperator::new(&s);
        assert!(matches!(
            op.forward_slice(&[Complex64::default(); 2], &ChannelSubset::all(1)),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            op.adjoint(&[Complex64::default(); 2], &ChannelSubset::all(1)),
            Err(Error::Shape(_))
        ));
        let vol = ReflectivityVolume::zeros(*s.voxels());
        assert!(matches!(op.simulate(&vol, -1.0, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn dense_cap() {
        let s = ImagingScenario::paper_preset();
        assert!(matches!(
            materialize_dense(&s, DEFAULT_DENSE_CAP),
            Err(Error::Resource(_))
        ));
        let one = single(0.5, 1e9, Vec3::default(), Vec3::new(0.1, 0.0, 0.0));
        let d = materialize_dense(&one, DEFAULT_DENSE_CAP).unwrap();
        assert_eq!((d.rows, d.cols), (1, 1));
        assert_eq!(d.get(0, 0), matrix_element(&one, 0, 0).unwrap());
    }

    #[test]
    fn volume_validation() {
        let g = VoxelGrid::new(Vec3::default(), [0.0; 3], [1, 1, 1]).unwrap();
        assert!(ReflectivityVolume::new(g, vec![]).is_err());
        assert!(ReflectivityVolume::new(g, vec![Complex64::new(f64::NAN, 0.0)]).is_err());
    }
}
