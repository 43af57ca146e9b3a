//! Reconstruction quality and runtime bookkeeping.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::forward::{BornOperator, MeasurementSet, ReflectivityVolume};
use crate::solver::{self, Composition, MinibatchComposition, SolveReport, SolverConfig};

/// PSNR between peak-normalized magnitude volumes. `psnr_db` is `+inf`
/// exactly when `rmse == 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsnrResult {
    pub psnr_db: f64,
    pub rmse: f64,
}

impl fmt::Display for PsnrResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "psnr_db={} rmse={:e}", format_db(self.psnr_db), self.rmse)
    }
}

/// Decibel value as text, with `+inf` spelled `inf`.
pub fn format_db(db: f64) -> String {
    if db == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{db}")
    }
}

fn serialize_db<S: Serializer>(db: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if db.is_finite() {
        s.serialize_f64(*db)
    } else {
        s.serialize_str(&format_db(*db))
    }
}

fn normalized_magnitudes(v: &ReflectivityVolume, what: &str) -> Result<Vec<f64>> {
    let mags = v.magnitudes();
    let peak = mags.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::param(format!(
            "{what} volume is identically zero; peak normalization undefined"
        )));
    }
    Ok(mags.into_iter().map(|m| m / peak).collect())
}

/// Normalizes both volumes to unit peak magnitude, then
/// `rmse = ||a - b||_2 / sqrt(N)` and `psnr = 20 log10(1 / rmse)`.
pub fn psnr_vs_reference(recon: &ReflectivityVolume, reference: &ReflectivityVolume) -> Result<PsnrResult> {
    if recon.grid() != reference.grid() {
        return Err(Error::shape("reconstruction and reference grids differ"));
    }
    let b = normalized_magnitudes(reference, "reference")?;
    let a = normalized_magnitudes(recon, "reconstruction")?;
    let sq: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    let rmse = (sq / a.len() as f64).sqrt();
    let psnr_db = if rmse == 0.0 {
        f64::INFINITY
    } else {
        -20.0 * rmse.log10()
    };
    Ok(PsnrResult { psnr_db, rmse })
}

/// One (composition, seed) run of a sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRecord {
    #[serde(rename = "composition_f")]
    pub n_f: usize,
    #[serde(rename = "composition_tx")]
    pub n_tx: usize,
    #[serde(rename = "composition_rx")]
    pub n_rx: usize,
    #[serde(rename = "B")]
    pub batch_size: usize,
    pub seed: u64,
    pub iterations: usize,
    pub runtime_s: f64,
    #[serde(serialize_with = "serialize_db")]
    pub psnr_db: f64,
}

impl SweepRecord {
    pub fn composition(&self) -> MinibatchComposition {
        MinibatchComposition::new(self.n_f, self.n_tx, self.n_rx)
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub reference: SolveReport,
    pub records: Vec<SweepRecord>,
}

/// Solves PGM once as the reference, then SPGM for every
/// (composition, seed) pair. Runs are serial; timing covers the solve only.
pub fn run_sweep(
    op: &BornOperator,
    y: &MeasurementSet,
    base: &SolverConfig,
    compositions: &[MinibatchComposition],
    seeds: &[u64],
) -> Result<SweepOutput> {
    for c in compositions {
        c.validate(op.scenario())?;
    }
    let reference = solver::pgm_solve(op, y, base)?;
    let records = sweep_against(op, y, &reference.volume, base, compositions, seeds)?;
    Ok(SweepOutput { reference, records })
}

/// [`run_sweep`] against an already converged reference.
pub fn sweep_against(
    op: &BornOperator,
    y: &MeasurementSet,
    reference: &ReflectivityVolume,
    base: &SolverConfig,
    compositions: &[MinibatchComposition],
    seeds: &[u64],
) -> Result<Vec<SweepRecord>> {
    for c in compositions {
        c.validate(op.scenario())?;
    }
    let mut records = Vec::with_capacity(compositions.len() * seeds.len());
    for c in compositions {
        for &seed in seeds {
            let config = SolverConfig {
                composition: Composition::Minibatch(*c),
                seed,
                ..*base
            };
            let start = Instant::now();
            let report = solver::spgm_solve(op, y, &config)?;
            let runtime_s = start.elapsed().as_secs_f64();
            let psnr = psnr_vs_reference(&report.volume, reference)?;
            records.push(SweepRecord {
                n_f: c.n_f,
                n_tx: c.n_tx,
                n_rx: c.n_rx,
                batch_size: c.batch_size(),
                seed,
                iterations: report.iterations,
                runtime_s,
                psnr_db: psnr.psnr_db,
            });
        }
    }
    Ok(records)
}

pub fn write_sweep_csv(records: &[SweepRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    if records.is_empty() {
        w.write_record([
            "composition_f",
            "composition_tx",
            "composition_rx",
            "B",
            "seed",
            "iterations",
            "runtime_s",
            "psnr_db",
        ])?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Average ranks, ties sharing the mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson correlation of the ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::shape("spearman needs two equal-length series of length >= 2"));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::param("spearman undefined for a constant series"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::shape("linear fit needs two equal-length series of length >= 2"));
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::param("linear fit needs distinct x values"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Vec3, VoxelGrid};
    use num_complex::Complex64;

    fn grid4() -> VoxelGrid {
        VoxelGrid::new(Vec3::default(), [1.0, 1.0, 0.0], [2, 2, 1]).unwrap()
    }

    fn vol(vals: &[f64]) -> ReflectivityVolume {
        ReflectivityVolume::new(grid4(), vals.iter().map(|&v| Complex64::new(v, 0.0)).collect())
            .unwrap()
    }

    #[test]
    fn identical_is_infinite() {
        let a = vol(&[1.0, 0.5, 0.0, 0.25]);
        let r = psnr_vs_reference(&a, &a).unwrap();
        assert_eq!(r.psnr_db, f64::INFINITY);
        assert_eq!(r.rmse, 0.0);
        assert_eq!(format_db(r.psnr_db), "inf");
    }

    #[test]
    fn hand_computed_forty_db() {
        // Differences (0.02, 0, 0, 0) over 4 voxels: rmse = 0.02 / 2 = 0.01.
        let reference = vol(&[1.0, 0.5, 0.3, 0.1]);
        let recon = vol(&[1.0, 0.52, 0.3, 0.1]);
        let r = psnr_vs_reference(&recon, &reference).unwrap();
        assert!((r.rmse - 0.01).abs() < 1e-15);
        assert!((r.psnr_db - 40.0).abs() < 1e-9);
    }

    #[test]
    fn errors() {
        let zero = vol(&[0.0; 4]);
        let a = vol(&[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(psnr_vs_reference(&a, &zero), Err(Error::Parameter(_))));
        let other = ReflectivityVolume::zeros(
            VoxelGrid::new(Vec3::default(), [0.0; 3], [1, 1, 1]).unwrap(),
        );
        assert!(matches!(psnr_vs_reference(&other, &a), Err(Error::Shape(_))));
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 25.0, 100.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
        assert!(spearman(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn linear_fit_exact() {
        let (m, b) = linear_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert!((m - 2.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_header_and_inf() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let rec = SweepRecord {
            n_f: 4,
            n_tx: 4,
            n_rx: 3,
            batch_size: 48,
            seed: 1,
            iterations: 10,
            runtime_s: 0.5,
            psnr_db: f64::INFINITY,
        };
        write_sweep_csv(&[rec], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "composition_f,composition_tx,composition_rx,B,seed,iterations,runtime_s,psnr_db"
        );
        assert_eq!(lines.next().unwrap(), "4,4,3,48,1,10,0.5,inf");

        write_sweep_csv(&[], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
    }
}
