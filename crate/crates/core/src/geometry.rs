//! Antenna arrays, frequency sweeps, voxel grids and the imaging scenario
//! that ties them together.
//!
//! Flat measurement indices are receiver-fastest, frequency-slowest:
//! `m = ri + n_rx * (ti + n_tx * fi)`. Flat voxel indices are x-fastest:
//! `n = ix + nx * (iy + ny * iz)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Exact SI speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance(&self, other: &Vec3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

/// Planar MIMO aperture: all antennas sit in the z = 0 plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    transmitters: Vec<Vec3>,
    receivers: Vec<Vec3>,
}

impl ArrayGeometry {
    pub fn new(transmitters: Vec<Vec3>, receivers: Vec<Vec3>) -> Result<Self> {
        check_antennas("transmitters", &transmitters)?;
        check_antennas("receivers", &receivers)?;
        Ok(Self {
            transmitters,
            receivers,
        })
    }

    pub fn transmitters(&self) -> &[Vec3] {
        &self.transmitters
    }

    pub fn receivers(&self) -> &[Vec3] {
        &self.receivers
    }
}

fn check_antennas(what: &str, list: &[Vec3]) -> Result<()> {
    if list.is_empty() {
        return Err(Error::param(format!("{what}: list must not be empty")));
    }
    for (i, p) in list.iter().enumerate() {
        if !p.is_finite() {
            return Err(Error::param(format!("{what}[{i}]: non-finite position")));
        }
        if p.z != 0.0 {
            return Err(Error::param(format!(
                "{what}[{i}]: antennas must lie in the z = 0 plane (z = {})",
                p.z
            )));
        }
        if list[..i].contains(p) {
            return Err(Error::param(format!("{what}[{i}]: duplicate position")));
        }
    }
    Ok(())
}

/// Deterministic spiral layout: transmitters on an outer spiral arm,
/// receivers on an inner one. This is a generic stand-in, not a
/// reproduction of any particular measured array.
pub fn make_spiral_array(n_tx: usize, n_rx: usize, radius: f64, seed: u64) -> Result<ArrayGeometry> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::param(format!("spiral radius must be positive, got {radius}")));
    }
    if n_tx == 0 || n_rx == 0 {
        return Err(Error::param("spiral array needs at least one Tx and one Rx"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let golden = PI * (3.0 - 5f64.sqrt());

    let arm = |count: usize, r_min: f64, r_max: f64, phase: f64| -> Vec<Vec3> {
        (0..count)
            .map(|i| {
                let t = (i + 1) as f64 / count as f64;
                let r = radius * (r_min + (r_max - r_min) * t);
                let theta = phase + golden * i as f64;
                Vec3::new(r * theta.cos(), r * theta.sin(), 0.0)
            })
            .collect()
    };
    let tx_phase = rng.gen_range(0.0..2.0 * PI);
    let rx_phase = rng.gen_range(0.0..2.0 * PI);
    // Radii strictly increase along each arm, and the arms occupy disjoint
    // annuli, so no two antennas coincide.
    let transmitters = arm(n_tx, 0.55, 1.0, tx_phase);
    let receivers = arm(n_rx, 0.05, 0.45, rx_phase);
    ArrayGeometry::new(transmitters, receivers)
}

/// Equally spaced frequency sweep including both endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyGrid {
    start_hz: f64,
    stop_hz: f64,
    count: usize,
}

impl FrequencyGrid {
    pub fn new(start_hz: f64, stop_hz: f64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::param("frequency count must be at least 1"));
        }
        if !(start_hz > 0.0) || !start_hz.is_finite() || !stop_hz.is_finite() {
            return Err(Error::param(format!("invalid start frequency {start_hz}")));
        }
        if stop_hz < start_hz {
            return Err(Error::param(format!(
                "stop frequency {stop_hz} below start {start_hz}"
            )));
        }
        if count == 1 && stop_hz != start_hz {
            return Err(Error::param("a single-point grid needs start == stop"));
        }
        Ok(Self {
            start_hz,
            stop_hz,
            count,
        })
    }

    pub fn start_hz(&self) -> f64 {
        self.start_hz
    }

    pub fn stop_hz(&self) -> f64 {
        self.stop_hz
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn spacing(&self) -> f64 {
        if self.count == 1 {
            0.0
        } else {
            (self.stop_hz - self.start_hz) / (self.count - 1) as f64
        }
    }

    pub fn frequency(&self, i: usize) -> f64 {
        if i + 1 == self.count {
            self.stop_hz
        } else {
            self.start_hz + i as f64 * self.spacing()
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(|i| self.frequency(i))
    }
}

/// Regular 3D voxel lattice described by its center, full extent and
/// per-axis voxel counts. Spacing along an axis is `extent / (dims - 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelGrid {
    center: Vec3,
    extent: [f64; 3],
    dims: [usize; 3],
}

impl VoxelGrid {
    pub fn new(center: Vec3, extent: [f64; 3], dims: [usize; 3]) -> Result<Self> {
        if !center.is_finite() {
            return Err(Error::param("voxel grid center must be finite"));
        }
        for axis in 0..3 {
            let (e, d) = (extent[axis], dims[axis]);
            if d == 0 {
                return Err(Error::param(format!("voxel dims[{axis}] must be positive")));
            }
            if !e.is_finite() || e < 0.0 {
                return Err(Error::param(format!("voxel extent[{axis}] = {e} is invalid")));
            }
            if d == 1 && e != 0.0 {
                return Err(Error::param(format!(
                    "voxel axis {axis} has a single sample and needs extent 0"
                )));
            }
            if d > 1 && e == 0.0 {
                return Err(Error::param(format!(
                    "voxel axis {axis} has {d} samples but zero extent"
                )));
            }
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= u32::MAX as usize)
            .ok_or_else(|| Error::param("voxel count overflows"))?;
        Ok(Self {
            center,
            extent,
            dims,
        })
    }

    pub fn center(&self) -> Vec3 {
        self.center
    }

    pub fn extent(&self) -> [f64; 3] {
        self.extent
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> [f64; 3] {
        let mut s = [0.0; 3];
        for axis in 0..3 {
            if self.dims[axis] > 1 {
                s[axis] = self.extent[axis] / (self.dims[axis] - 1) as f64;
            }
        }
        s
    }

    pub fn flat_index(&self, ix: usize, iy: usize, iz: usize) -> Result<usize> {
        let [nx, ny, nz] = self.dims;
        if ix >= nx || iy >= ny || iz >= nz {
            return Err(Error::Index {
                what: "voxel coordinate",
                index: ix.max(iy).max(iz),
                len: nx.min(ny).min(nz),
            });
        }
        Ok(ix + nx * (iy + ny * iz))
    }

    pub fn coords(&self, n: usize) -> Result<[usize; 3]> {
        if n >= self.len() {
            return Err(Error::Index {
                what: "voxel",
                index: n,
                len: self.len(),
            });
        }
        let [nx, ny, _] = self.dims;
        Ok([n % nx, (n / nx) % ny, n / (nx * ny)])
    }

    pub fn voxel_center(&self, n: usize) -> Result<Vec3> {
        let [ix, iy, iz] = self.coords(n)?;
        Ok(self.center_unchecked(ix, iy, iz))
    }

    fn center_unchecked(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        let d = self.spacing();
        Vec3::new(
            self.center.x - self.extent[0] / 2.0 + ix as f64 * d[0],
            self.center.y - self.extent[1] / 2.0 + iy as f64 * d[1],
            self.center.z - self.extent[2] / 2.0 + iz as f64 * d[2],
        )
    }

    /// All voxel centers in flat-index order.
    pub fn centers(&self) -> Vec<Vec3> {
        let [nx, ny, nz] = self.dims;
        let mut out = Vec::with_capacity(self.len());
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    out.push(self.center_unchecked(ix, iy, iz));
                }
            }
        }
        out
    }
}

/// Structured form of a flat measurement index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChannelIndex {
    pub fi: usize,
    pub ti: usize,
    pub ri: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseKnot {
    pub hz: f64,
    pub value: Complex64,
}

/// Spectrum `p(f)` of the transmitted pulse.
#[derive(Debug, Clone, PartialEq)]
pub enum PulseSpectrum {
    Constant(Complex64),
    /// Linear interpolation between knots with strictly increasing frequency.
    Tabulated(Vec<PulseKnot>),
}

impl Default for PulseSpectrum {
    fn default() -> Self {
        PulseSpectrum::Constant(Complex64::new(1.0, 0.0))
    }
}

impl PulseSpectrum {
    pub fn tabulated(knots: Vec<PulseKnot>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::param("tabulated pulse needs at least one knot"));
        }
        for (i, k) in knots.iter().enumerate() {
            if !k.hz.is_finite() || !k.value.re.is_finite() || !k.value.im.is_finite() {
                return Err(Error::param(format!("pulse knot {i} is not finite")));
            }
            if i > 0 && k.hz <= knots[i - 1].hz {
                return Err(Error::param(format!(
                    "pulse knot {i}: frequencies must be strictly increasing"
                )));
            }
        }
        Ok(PulseSpectrum::Tabulated(knots))
    }

    /// Evaluates `p(f)`. Tabulated spectra return `None` outside the knot range.
    pub fn at(&self, hz: f64) -> Option<Complex64> {
        match self {
            PulseSpectrum::Constant(v) => Some(*v),
            PulseSpectrum::Tabulated(knots) => {
                let first = knots.first()?;
                let last = knots.last()?;
                if hz < first.hz || hz > last.hz {
                    return None;
                }
                let upper = knots.partition_point(|k| k.hz < hz);
                if upper == 0 {
                    return Some(first.value);
                }
                let (a, b) = (&knots[upper - 1], &knots[upper]);
                let t = (hz - a.hz) / (b.hz - a.hz);
                Some(a.value + (b.value - a.value) * t)
            }
        }
    }
}

/// Everything that defines the observation operator.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagingScenario {
    array: ArrayGeometry,
    frequencies: FrequencyGrid,
    voxels: VoxelGrid,
    pulse: PulseSpectrum,
    speed_of_light: f64,
}

impl ImagingScenario {
    pub fn new(
        array: ArrayGeometry,
        frequencies: FrequencyGrid,
        voxels: VoxelGrid,
        pulse: PulseSpectrum,
        speed_of_light: f64,
    ) -> Result<Self> {
        if !(speed_of_light > 0.0) || !speed_of_light.is_finite() {
            return Err(Error::param(format!(
                "speed of light must be positive, got {speed_of_light}"
            )));
        }
        for f in frequencies.iter() {
            if pulse.at(f).is_none() {
                return Err(Error::param(format!(
                    "pulse spectrum does not cover frequency {f} Hz"
                )));
            }
        }
        let scenario = Self {
            array,
            frequencies,
            voxels,
            pulse,
            speed_of_light,
        };
        scenario.check_singularities()?;
        Ok(scenario)
    }

    fn check_singularities(&self) -> Result<()> {
        let antennas = self
            .array
            .transmitters
            .iter()
            .enumerate()
            .map(|(i, p)| (format!("transmitter {i}"), p))
            .chain(
                self.array
                    .receivers
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (format!("receiver {i}"), p)),
            )
            .collect::<Vec<_>>();
        for (n, c) in self.voxels.centers().iter().enumerate() {
            // Antennas sit at z = 0.
            if c.z != 0.0 {
                continue;
            }
            if let Some((name, _)) = antennas.iter().find(|(_, p)| p.distance(c) == 0.0) {
                return Err(Error::Singularity {
                    voxel: n,
                    antenna: name.clone(),
                });
            }
        }
        Ok(())
    }

    /// Default desk-scale reproduction of the published experimental setup:
    /// 16 Tx / 9 Rx (spiral stand-in), 11 frequencies over 4-16 GHz,
    /// a 30 x 30 x 10 cm scene centred 50 cm from the array at 0.5 cm
    /// sampling (61 x 61 x 21 voxels), flat pulse spectrum.
    pub fn paper_preset() -> Self {
        let array = make_spiral_array(16, 9, PRESET_ARRAY_RADIUS, PRESET_ARRAY_SEED)
            .expect("preset array is valid");
        let frequencies = FrequencyGrid::new(4e9, 16e9, 11).expect("preset sweep is valid");
        let voxels = VoxelGrid::new(Vec3::new(0.0, 0.0, 0.5), [0.3, 0.3, 0.1], [61, 61, 21])
            .expect("preset grid is valid");
        ImagingScenario::new(
            array,
            frequencies,
            voxels,
            PulseSpectrum::default(),
            SPEED_OF_LIGHT,
        )
        .expect("preset scenario is valid")
    }

    pub fn array(&self) -> &ArrayGeometry {
        &self.array
    }

    pub fn frequencies(&self) -> &FrequencyGrid {
        &self.frequencies
    }

    pub fn voxels(&self) -> &VoxelGrid {
        &self.voxels
    }

    pub fn pulse(&self) -> &PulseSpectrum {
        &self.pulse
    }

    pub fn speed_of_light(&self) -> f64 {
        self.speed_of_light
    }

    pub fn n_freq(&self) -> usize {
        self.frequencies.len()
    }

    pub fn n_tx(&self) -> usize {
        self.array.transmitters.len()
    }

    pub fn n_rx(&self) -> usize {
        self.array.receivers.len()
    }

    /// Number of measurement channels `M`.
    pub fn num_channels(&self) -> usize {
        self.n_freq() * self.n_tx() * self.n_rx()
    }

    /// Number of voxels `N`.
    pub fn num_voxels(&self) -> usize {
        self.voxels.len()
    }

    pub fn channel_of(&self, m: usize) -> Result<ChannelIndex> {
        if m >= self.num_channels() {
            return Err(Error::Index {
                what: "channel",
                index: m,
                len: self.num_channels(),
            });
        }
        let (n_tx, n_rx) = (self.n_tx(), self.n_rx());
        Ok(ChannelIndex {
            fi: m / (n_tx * n_rx),
            ti: (m / n_rx) % n_tx,
            ri: m % n_rx,
        })
    }

    pub fn flat_channel(&self, ch: ChannelIndex) -> Result<usize> {
        if ch.fi >= self.n_freq() || ch.ti >= self.n_tx() || ch.ri >= self.n_rx() {
            return Err(Error::Index {
                what: "channel component",
                index: ch.fi.max(ch.ti).max(ch.ri),
                len: self.num_channels(),
            });
        }
        Ok(ch.ri + self.n_rx() * (ch.ti + self.n_tx() * ch.fi))
    }

    /// Pulse value at every grid frequency.
    pub fn pulse_values(&self) -> Vec<Complex64> {
        self.frequencies
            .iter()
            .map(|f| self.pulse.at(f).expect("coverage checked at construction"))
            .collect()
    }
}

pub const PRESET_ARRAY_RADIUS: f64 = 0.25;
pub const PRESET_ARRAY_SEED: u64 = 7;
