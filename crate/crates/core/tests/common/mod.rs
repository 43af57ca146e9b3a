#![allow(dead_code)]

use nfmimo::geometry::{make_spiral_array, FrequencyGrid, PulseKnot, PulseSpectrum, SPEED_OF_LIGHT};
use nfmimo::{ImagingScenario, Vec3, VoxelGrid};
use num_complex::Complex64;
use rand::Rng;

/// 3 frequencies, 4 Tx, 3 Rx (M = 36) over a grid of `dims`, with a
/// non-trivial tabulated pulse.
pub fn small_scenario(dims: [usize; 3]) -> ImagingScenario {
    let extent = [0.12, 0.1, 0.04];
    let extent = std::array::from_fn(|i| if dims[i] == 1 { 0.0 } else { extent[i] });
    let pulse = PulseSpectrum::tabulated(vec![
        PulseKnot { hz: 3e9, value: Complex64::new(1.0, 0.0) },
        PulseKnot { hz: 10e9, value: Complex64::new(0.5, 0.5) },
        PulseKnot { hz: 17e9, value: Complex64::new(0.2, -0.3) },
    ])
    .unwrap();
    ImagingScenario::new(
        make_spiral_array(4, 3, 0.25, 11).unwrap(),
        FrequencyGrid::new(4e9, 16e9, 3).unwrap(),
        VoxelGrid::new(Vec3::new(0.01, -0.02, 0.45), extent, dims).unwrap(),
        pulse,
        SPEED_OF_LIGHT,
    )
    .unwrap()
}

pub fn random_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect()
}

pub fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// `||a - b|| / ||b||`
pub fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let d: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&d) / norm(b)
}

pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Double-double number `hi + lo`, about 32 significant digits.
#[derive(Debug, Clone, Copy)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

impl Dd {
    pub fn new(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }

    fn quick(a: f64, b: f64) -> Self {
        let s = a + b;
        Dd { hi: s, lo: b - (s - a) }
    }

    pub fn add(self, o: Dd) -> Dd {
        let s = self.hi + o.hi;
        let bb = s - self.hi;
        let e = (self.hi - (s - bb)) + (o.hi - bb) + self.lo + o.lo;
        Dd::quick(s, e)
    }

    pub fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    pub fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p) + (self.hi * o.lo + self.lo * o.hi);
        Dd::quick(p, e)
    }

    pub fn lt(self, o: Dd) -> bool {
        self.sub(o).hi < 0.0
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

/// Golden-section minimization of a unimodal `f` on `[lo, hi]`, carried out
/// in double-double so that a smooth minimum is located far below f64
/// resolution. Both probes are recomputed every step, which keeps the
/// bracket well ordered at any depth.
pub fn golden_section_dd<F: Fn(Dd) -> Dd>(f: F, lo: f64, hi: f64, iters: usize) -> f64 {
    let ratio = Dd::new((5f64.sqrt() - 1.0) / 2.0);
    let (mut lo, mut hi) = (Dd::new(lo), Dd::new(hi));
    for _ in 0..iters {
        let width = hi.sub(lo);
        let c = hi.sub(width.mul(ratio));
        let d = lo.add(width.mul(ratio));
        if f(c).lt(f(d)) {
            hi = d;
        } else {
            lo = c;
        }
    }
    lo.add(hi).mul(Dd::new(0.5)).to_f64()
}
