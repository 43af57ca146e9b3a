//! Simple synthetic scenes for simulation.

use std::path::PathBuf;
use std::str::FromStr;

use num_complex::Complex64;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::forward::ReflectivityVolume;
use crate::geometry::VoxelGrid;
use crate::io;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Phantom {
    /// `k` unit-magnitude scatterers with random phase at distinct random voxels.
    Points(usize),
    /// Line along x through the middle of the scene.
    Bar,
    /// Two perpendicular bars in the central z plane.
    Cross,
    /// A volume file with the scenario's dimensions.
    File(PathBuf),
}

impl FromStr for Phantom {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some(("points", k)) => k
                .parse()
                .ok()
                .filter(|&k: &usize| k > 0)
                .map(Phantom::Points)
                .ok_or_else(|| Error::param(format!("bad point count in `{s}`"))),
            Some(("file", path)) if !path.is_empty() => Ok(Phantom::File(path.into())),
            None if s == "bar" => Ok(Phantom::Bar),
            None if s == "cross" => Ok(Phantom::Cross),
            _ => Err(Error::param(format!(
                "unknown phantom `{s}` (expected points:k, bar, cross or file:path)"
            ))),
        }
    }
}

impl Phantom {
    pub fn generate(&self, grid: &VoxelGrid, seed: u64) -> Result<ReflectivityVolume> {
        let [nx, ny, nz] = grid.dims();
        let mut v = ReflectivityVolume::zeros(*grid);
        let one = Complex64::new(1.0, 0.0);
        match self {
            Phantom::Points(k) => {
                if *k > grid.len() {
                    return Err(Error::param(format!(
                        "{k} points do not fit in a grid of {} voxels",
                        grid.len()
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut picks = index::sample(&mut rng, grid.len(), *k).into_vec();
                picks.sort_unstable();
                let vals = v.values_mut();
                for n in picks {
                    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                    vals[n] = Complex64::from_polar(1.0, phase);
                }
            }
            Phantom::Bar | Phantom::Cross => {
                let (iy, iz) = (ny / 2, nz / 2);
                let vals = v.values_mut();
                for ix in nx / 4..=(3 * nx / 4).min(nx - 1) {
                    vals[grid.flat_index(ix, iy, iz)?] = one;
                }
                if *self == Phantom::Cross {
                    let ix = nx / 2;
                    for iy in ny / 4..=(3 * ny / 4).min(ny - 1) {
                        vals[grid.flat_index(ix, iy, iz)?] = one;
                    }
                }
            }
            Phantom::File(path) => {
                let data = io::read_volume_data(path)?;
                if data.dims != grid.dims() {
                    return Err(Error::param(format!(
                        "phantom file dims {:?} lie outside the scenario grid {:?}",
                        data.dims,
                        grid.dims()
                    )));
                }
                v = data.into_volume(*grid)?;
            }
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn grid() -> VoxelGrid {
        VoxelGrid::new(Vec3::new(0.0, 0.0, 0.5), [0.1, 0.1, 0.02], [9, 9, 3]).unwrap()
    }

    #[test]
    fn parse() {
        assert_eq!("points:5".parse::<Phantom>().unwrap(), Phantom::Points(5));
        assert_eq!("bar".parse::<Phantom>().unwrap(), Phantom::Bar);
        assert_eq!("cross".parse::<Phantom>().unwrap(), Phantom::Cross);
        assert_eq!(
            "file:a/b.nfmv".parse::<Phantom>().unwrap(),
            Phantom::File("a/b.nfmv".into())
        );
        for bad in ["points:0", "points:x", "blob", "file:", ""] {
            assert!(bad.parse::<Phantom>().is_err(), "{bad}");
        }
    }

    #[test]
    fn points_are_unit_and_seeded() {
        let a = Phantom::Points(4).generate(&grid(), 3).unwrap();
        let nz: Vec<_> = a.values().iter().filter(|v| v.norm() > 0.0).collect();
        assert_eq!(nz.len(), 4);
        assert!(nz.iter().all(|v| (v.norm() - 1.0).abs() < 1e-15));
        assert_eq!(a, Phantom::Points(4).generate(&grid(), 3).unwrap());
        assert!(Phantom::Points(1000).generate(&grid(), 3).is_err());
    }

    #[test]
    fn bar_and_cross() {
        let count = |p: Phantom| {
            p.generate(&grid(), 0)
                .unwrap()
                .values()
                .iter()
                .filter(|v| v.norm() > 0.0)
                .count()
        };
        assert_eq!(count(Phantom::Bar), 5);
        assert_eq!(count(Phantom::Cross), 9);
    }

    #[test]
    fn file_dims_must_match() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.nfmv");
        let small = VoxelGrid::new(Vec3::default(), [0.0; 3], [1, 1, 1]).unwrap();
        io::write_volume(&ReflectivityVolume::zeros(small), &path).unwrap();
        assert!(Phantom::File(path.clone()).generate(&grid(), 0).is_err());
        assert!(Phantom::File(path).generate(&small, 0).is_ok());
    }
}
