//! File formats.
//!
//! * Volume file: `b"NFMV"`, u16 version, u32 nx, ny, nz, then `N` complex
//!   values as little-endian `(re, im)` f64 pairs in flat-index order, then a
//!   u64 checksum (wrapping sum of the payload bytes).
//! * Measurement file: `b"NFMS"`, u16 version, u32 `M`, 32-byte scenario
//!   fingerprint, `M` complex values, u64 checksum.
//! * Scenario document: JSON, unknown keys rejected.
//! * Slice export: one CSV per z plane of peak-normalized magnitudes.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forward::{MeasurementSet, ReflectivityVolume};
use crate::geometry::{
    ArrayGeometry, FrequencyGrid, ImagingScenario, PulseKnot, PulseSpectrum, Vec3, VoxelGrid,
};

pub const VOLUME_MAGIC: [u8; 4] = *b"NFMV";
pub const MEASUREMENT_MAGIC: [u8; 4] = *b"NFMS";
pub const FORMAT_VERSION: u16 = 1;

const VOLUME_HEADER: usize = 4 + 2 + 3 * 4;
const MEASUREMENT_HEADER: usize = 4 + 2 + 4 + 32;

/// SHA-256 of a scenario's canonical JSON document.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fingerprint(pub [u8; 32]);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({self})")
    }
}

impl ImagingScenario {
    pub fn fingerprint(&self) -> Fingerprint {
        let canonical = serde_json::to_vec(&ScenarioDocument::from(self))
            .expect("scenario document serializes");
        Fingerprint(Sha256::digest(&canonical).into())
    }
}

// ---------------------------------------------------------------------------
// Scenario JSON

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub speed_of_light: f64,
    pub frequencies: FrequencyDoc,
    pub voxels: VoxelDoc,
    pub pulse: PulseDoc,
    pub transmitters: Vec<[f64; 3]>,
    pub receivers: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyDoc {
    pub start_hz: f64,
    pub stop_hz: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoxelDoc {
    pub center: [f64; 3],
    pub extent: [f64; 3],
    pub dims: [usize; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum PulseDoc {
    Constant { re: f64, im: f64 },
    Tabulated { knots: Vec<KnotDoc> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnotDoc {
    pub hz: f64,
    pub re: f64,
    pub im: f64,
}

impl From<&ImagingScenario> for ScenarioDocument {
    fn from(s: &ImagingScenario) -> Self {
        let f = s.frequencies();
        let v = s.voxels();
        let pulse = match s.pulse() {
            PulseSpectrum::Constant(c) => PulseDoc::Constant { re: c.re, im: c.im },
            PulseSpectrum::Tabulated(knots) => PulseDoc::Tabulated {
                knots: knots
                    .iter()
                    .map(|k| KnotDoc {
                        hz: k.hz,
                        re: k.value.re,
                        im: k.value.im,
                    })
                    .collect(),
            },
        };
        ScenarioDocument {
            speed_of_light: s.speed_of_light(),
            frequencies: FrequencyDoc {
                start_hz: f.start_hz(),
                stop_hz: f.stop_hz(),
                count: f.len(),
            },
            voxels: VoxelDoc {
                center: v.center().to_array(),
                extent: v.extent(),
                dims: v.dims(),
            },
            pulse,
            transmitters: s.array().transmitters().iter().map(|p| p.to_array()).collect(),
            receivers: s.array().receivers().iter().map(|p| p.to_array()).collect(),
        }
    }
}

fn schema(path: &str, e: Error) -> Error {
    let message = match e {
        Error::Parameter(m) | Error::Shape(m) => m,
        other => other.to_string(),
    };
    Error::Schema {
        path: path.to_string(),
        message,
    }
}

impl TryFrom<ScenarioDocument> for ImagingScenario {
    type Error = Error;

    fn try_from(doc: ScenarioDocument) -> Result<Self> {
        let frequencies = FrequencyGrid::new(
            doc.frequencies.start_hz,
            doc.frequencies.stop_hz,
            doc.frequencies.count,
        )
        .map_err(|e| schema("frequencies", e))?;
        let voxels = VoxelGrid::new(doc.voxels.center.into(), doc.voxels.extent, doc.voxels.dims)
            .map_err(|e| schema("voxels", e))?;
        let pulse = match doc.pulse {
            PulseDoc::Constant { re, im } => {
                if !re.is_finite() || !im.is_finite() {
                    return Err(schema("pulse", Error::param("non-finite value")));
                }
                PulseSpectrum::Constant(Complex64::new(re, im))
            }
            PulseDoc::Tabulated { knots } => PulseSpectrum::tabulated(
                knots
                    .into_iter()
                    .map(|k| PulseKnot {
                        hz: k.hz,
                        value: Complex64::new(k.re, k.im),
                    })
                    .collect(),
            )
            .map_err(|e| schema("pulse.knots", e))?,
        };
        let to_vecs = |v: Vec<[f64; 3]>| v.into_iter().map(Vec3::from).collect::<Vec<_>>();
        let array = ArrayGeometry::new(to_vecs(doc.transmitters), to_vecs(doc.receivers))
            .map_err(|e| schema("transmitters/receivers", e))?;
        ImagingScenario::new(array, frequencies, voxels, pulse, doc.speed_of_light)
            .map_err(|e| match e {
                Error::Singularity { .. } => e,
                other => schema("scenario", other),
            })
    }
}

pub fn scenario_to_json(scenario: &ImagingScenario) -> String {
    serde_json::to_string_pretty(&ScenarioDocument::from(scenario))
        .expect("scenario document serializes")
}

pub fn scenario_from_json(text: &str) -> Result<ImagingScenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: ScenarioDocument = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let message = inner.to_string();
        // Missing keys are reported by serde against the parent; pull the
        // key name into the path so callers see e.g. `receivers`.
        let path = match message.strip_prefix("missing field `") {
            Some(rest) => {
                let key = rest.split('`').next().unwrap_or_default();
                if path == "." || path.is_empty() {
                    key.to_string()
                } else {
                    format!("{path}.{key}")
                }
            }
            None => path,
        };
        Error::Schema { path, message }
    })?;
    ImagingScenario::try_from(doc)
}

pub fn write_scenario(scenario: &ImagingScenario, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, scenario_to_json(scenario)).map_err(|e| Error::io(path, e))
}

pub fn read_scenario(path: impl AsRef<Path>) -> Result<ImagingScenario> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    scenario_from_json(&text)
}

// ---------------------------------------------------------------------------
// Binary formats

fn checksum(payload: &[u8]) -> u64 {
    payload.iter().fold(0u64, |acc, &b| acc.wrapping_add(b as u64))
}

fn push_complex(buf: &mut Vec<u8>, values: &[Complex64]) {
    for v in values {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
}

fn read_complex(payload: &[u8]) -> Vec<Complex64> {
    payload
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            Complex64::new(re, im)
        })
        .collect()
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes(b[at..at + 2].try_into().unwrap())
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn truncated(needed: usize, actual: usize) -> Error {
    Error::Truncated {
        needed: needed as u64,
        actual: actual as u64,
    }
}

/// Validates magic and version, returning nothing but errors.
fn check_preamble(bytes: &[u8], magic: [u8; 4], header: usize) -> Result<()> {
    if bytes.len() < 4 {
        return Err(truncated(header, bytes.len()));
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != magic {
        return Err(Error::BadMagic {
            expected: magic,
            found,
        });
    }
    if bytes.len() < header {
        return Err(truncated(header, bytes.len()));
    }
    let version = u16_at(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    Ok(())
}

/// Splits `header | payload | checksum`, checking the total length against
/// the declared element count before anything is allocated.
fn split_payload(bytes: &[u8], header: usize, count: u64) -> Result<&[u8]> {
    let payload_len = count
        .checked_mul(16)
        .ok_or_else(|| truncated(usize::MAX, bytes.len()))?;
    let needed = (header as u64)
        .checked_add(payload_len)
        .and_then(|v| v.checked_add(8))
        .ok_or_else(|| truncated(usize::MAX, bytes.len()))?;
    let actual = bytes.len() as u64;
    if actual < needed {
        return Err(Error::Truncated { needed, actual });
    }
    if actual > needed {
        return Err(Error::TrailingBytes(actual - needed));
    }
    let end = header + payload_len as usize;
    let payload = &bytes[header..end];
    let stored = u64::from_le_bytes(bytes[end..end + 8].try_into().unwrap());
    let computed = checksum(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    Ok(payload)
}

pub fn encode_volume(v: &ReflectivityVolume) -> Vec<u8> {
    let mut buf = Vec::with_capacity(VOLUME_HEADER + 16 * v.len() + 8);
    buf.extend_from_slice(&VOLUME_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for d in v.grid().dims() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    push_complex(&mut buf, v.values());
    let sum = checksum(&buf[VOLUME_HEADER..]);
    buf.extend_from_slice(&sum.to_le_bytes());
    buf
}

/// Decoded volume file. Only the grid dimensions are stored on disk, so the
/// caller supplies geometry via [`VolumeData::into_volume`].
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeData {
    pub dims: [usize; 3],
    pub values: Vec<Complex64>,
}

impl VolumeData {
    /// Attaches a grid, which must have matching dimensions.
    pub fn into_volume(self, grid: VoxelGrid) -> Result<ReflectivityVolume> {
        if grid.dims() != self.dims {
            return Err(Error::shape(format!(
                "volume dims {:?} do not match grid dims {:?}",
                self.dims,
                grid.dims()
            )));
        }
        ReflectivityVolume::new(grid, self.values)
    }

    /// Grid with unit spacing centred at the origin, for scenario-less use.
    pub fn index_grid(&self) -> VoxelGrid {
        let extent = self.dims.map(|d| (d.saturating_sub(1)) as f64);
        VoxelGrid::new(Vec3::default(), extent, self.dims).expect("dims validated on decode")
    }
}

pub fn decode_volume(bytes: &[u8]) -> Result<VolumeData> {
    check_preamble(bytes, VOLUME_MAGIC, VOLUME_HEADER)?;
    let dims = [u32_at(bytes, 6), u32_at(bytes, 10), u32_at(bytes, 14)].map(|d| d as usize);
    if dims.contains(&0) {
        return Err(Error::shape(format!("volume has zero dimension {dims:?}")));
    }
    let count = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
        .ok_or_else(|| truncated(usize::MAX, bytes.len()))?;
    let payload = split_payload(bytes, VOLUME_HEADER, count)?;
    Ok(VolumeData {
        dims,
        values: read_complex(payload),
    })
}

pub fn write_volume(v: &ReflectivityVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_volume(v)).map_err(|e| Error::io(path, e))
}

/// Reads a volume file and attaches `grid`.
pub fn read_volume(path: impl AsRef<Path>, grid: VoxelGrid) -> Result<ReflectivityVolume> {
    read_volume_data(path)?.into_volume(grid)
}

pub fn read_volume_data(path: impl AsRef<Path>) -> Result<VolumeData> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_volume(&bytes)
}

pub fn encode_measurements(y: &MeasurementSet) -> Vec<u8> {
    let mut buf = Vec::with_capacity(MEASUREMENT_HEADER + 16 * y.len() + 8);
    buf.extend_from_slice(&MEASUREMENT_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(y.len() as u32).to_le_bytes());
    buf.extend_from_slice(&y.fingerprint().0);
    push_complex(&mut buf, y.values());
    let sum = checksum(&buf[MEASUREMENT_HEADER..]);
    buf.extend_from_slice(&sum.to_le_bytes());
    buf
}

pub fn decode_measurements(bytes: &[u8]) -> Result<MeasurementSet> {
    check_preamble(bytes, MEASUREMENT_MAGIC, MEASUREMENT_HEADER)?;
    let count = u32_at(bytes, 6) as u64;
    if count == 0 {
        return Err(Error::shape("measurement file declares zero channels"));
    }
    let fingerprint = Fingerprint(bytes[10..42].try_into().unwrap());
    let payload = split_payload(bytes, MEASUREMENT_HEADER, count)?;
    Ok(MeasurementSet::from_parts(read_complex(payload), fingerprint))
}

pub fn write_measurements(y: &MeasurementSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_measurements(y)).map_err(|e| Error::io(path, e))
}

/// Reads a measurement file; when `scenario` is given its fingerprint and
/// channel count must match.
pub fn read_measurements(
    path: impl AsRef<Path>,
    scenario: Option<&ImagingScenario>,
) -> Result<MeasurementSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let y = decode_measurements(&bytes)?;
    if let Some(s) = scenario {
        y.check_scenario(s)?;
    }
    Ok(y)
}

// ---------------------------------------------------------------------------
// Slice export

/// Writes `<prefix>_z<k>.csv` for every z plane: rows are y, columns are x,
/// cells are magnitudes normalized to the volume-wide peak.
pub fn export_slices_csv(v: &ReflectivityVolume, prefix: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let prefix = prefix.as_ref();
    let [nx, ny, nz] = v.grid().dims();
    let mags = v.magnitudes();
    let peak = mags.iter().cloned().fold(0.0, f64::max);
    let scale = if peak > 0.0 { 1.0 / peak } else { 0.0 };

    let stem = prefix
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut written = Vec::with_capacity(nz);
    for iz in 0..nz {
        let path = prefix.with_file_name(format!("{stem}_z{iz}.csv"));
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(&path)
            .map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(&path, io),
                other => Error::Schema {
                    path: path.display().to_string(),
                    message: format!("{other:?}"),
                },
            })?;
        for iy in 0..ny {
            let row = (0..nx).map(|ix| format!("{:?}", mags[ix + nx * (iy + ny * iz)] * scale));
            w.write_record(row)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
