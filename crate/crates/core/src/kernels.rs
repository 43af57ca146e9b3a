//! Split-complex inner loops used by the operator.
//!
//! Reductions run over a fixed number of lanes and are folded in a fixed
//! order, so results depend only on the input length, never on the vector
//! width the code was compiled for. The AVX2 copies use no FMA, so they
//! round exactly like the portable loops.

use num_complex::Complex64;

const LANES: usize = 8;

#[derive(Clone, Copy)]
pub(crate) struct CxSlice<'a> {
    pub re: &'a [f64],
    pub im: &'a [f64],
}

impl<'a> CxSlice<'a> {
    pub fn range(self, r: std::ops::Range<usize>) -> CxSlice<'a> {
        CxSlice {
            re: &self.re[r.clone()],
            im: &self.im[r],
        }
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }
}

#[derive(Default, Clone)]
pub(crate) struct CxBuf {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl CxBuf {
    pub fn zeros(len: usize) -> Self {
        Self {
            re: vec![0.0; len],
            im: vec![0.0; len],
        }
    }

    pub fn from_complex(v: &[Complex64]) -> Self {
        Self {
            re: v.iter().map(|c| c.re).collect(),
            im: v.iter().map(|c| c.im).collect(),
        }
    }

    pub fn view(&self) -> CxSlice<'_> {
        CxSlice {
            re: &self.re,
            im: &self.im,
        }
    }

    pub fn clear(&mut self) {
        self.re.clear();
        self.im.clear();
    }

    pub fn push(&mut self, v: Complex64) {
        self.re.push(v.re);
        self.im.push(v.im);
    }

    pub fn fill_zero(&mut self) {
        self.re.fill(0.0);
        self.im.fill(0.0);
    }
}

#[cfg(target_arch = "x86_64")]
fn has_avx2() -> bool {
    std::is_x86_feature_detected!("avx2")
}

macro_rules! dispatch {
    ($(#[$m:meta])* fn $name:ident / $avx:ident / $imp:ident ($($arg:ident : $ty:ty),*) $(-> $ret:ty)?) => {
        $(#[$m])*
        pub(crate) fn $name($($arg: $ty),*) $(-> $ret)? {
            #[cfg(target_arch = "x86_64")]
            if has_avx2() {
                // SAFETY: the CPU supports AVX2, checked just above.
                return unsafe { avx::$avx($($arg),*) };
            }
            $imp($($arg),*)
        }
    };
}

dispatch! {
    /// `sum_i a_i * w_i`
    fn dot / dot / dot_impl (a: CxSlice<'_>, w: CxSlice<'_>) -> Complex64
}

dispatch! {
    /// `out_i = a_i * s_i`
    fn mul / mul / mul_impl (a: CxSlice<'_>, s: CxSlice<'_>, out: &mut CxBuf)
}

dispatch! {
    /// `acc_i += conj(a_i) * k`
    fn conj_axpy / conj_axpy / conj_axpy_impl (a: CxSlice<'_>, k: Complex64, acc: &mut CxBuf)
}

dispatch! {
    /// `acc_i += conj(a_i) * v_i`
    fn conj_mul_acc / conj_mul_acc / conj_mul_acc_impl (a: CxSlice<'_>, v: CxSlice<'_>, acc: &mut CxBuf)
}

/// Hand-written AVX2 versions. Each performs the same multiplies and adds,
/// in the same order, as the portable loop below it, so the two agree bit for
/// bit.
#[cfg(target_arch = "x86_64")]
mod avx {
    use super::{fold, CxBuf, CxSlice, LANES};
    use num_complex::Complex64;
    use std::arch::x86_64::*;

    #[inline(always)]
    unsafe fn ld(s: &[f64], i: usize) -> __m256d {
        _mm256_loadu_pd(s.as_ptr().add(i))
    }

    #[target_feature(enable = "avx2")]
    pub unsafe fn dot(a: CxSlice<'_>, w: CxSlice<'_>) -> Complex64 {
        let n = a.len();
        let (ar, ai, wr, wi) = (&a.re[..n], &a.im[..n], &w.re[..n], &w.im[..n]);
        let body = n - n % LANES;
        let z = _mm256_setzero_pd();
        let mut sr = [z; 2];
        let mut si = [z; 2];
        let mut k = 0;
        while k < body {
            for h in 0..2 {
                let j = k + 4 * h;
                let (xr, xi, yr, yi) = (ld(ar, j), ld(ai, j), ld(wr, j), ld(wi, j));
                let re = _mm256_sub_pd(_mm256_mul_pd(xr, yr), _mm256_mul_pd(xi, yi));
                let im = _mm256_add_pd(_mm256_mul_pd(xr, yi), _mm256_mul_pd(xi, yr));
                sr[h] = _mm256_add_pd(sr[h], re);
                si[h] = _mm256_add_pd(si[h], im);
            }
            k += LANES;
        }
        let mut lr = [0.0f64; LANES];
        let mut li = [0.0f64; LANES];
        for h in 0..2 {
            _mm256_storeu_pd(lr.as_mut_ptr().add(4 * h), sr[h]);
            _mm256_storeu_pd(li.as_mut_ptr().add(4 * h), si[h]);
        }
        for i in body..n {
            let l = i - body;
            lr[l] += ar[i] * wr[i] - ai[i] * wi[i];
            li[l] += ar[i] * wi[i] + ai[i] * wr[i];
        }
        Complex64::new(fold(lr), fold(li))
    }

    #[target_feature(enable = "avx2")]
    pub unsafe fn mul(a: CxSlice<'_>, s: CxSlice<'_>, out: &mut CxBuf) {
        let n = a.len();
        let (ar, ai, sr, si) = (&a.re[..n], &a.im[..n], &s.re[..n], &s.im[..n]);
        let (or, oi) = (&mut out.re[..n], &mut out.im[..n]);
        let body = n - n % 4;
        let mut k = 0;
        while k < body {
            let (xr, xi, yr, yi) = (ld(ar, k), ld(ai, k), ld(sr, k), ld(si, k));
            let re = _mm256_sub_pd(_mm256_mul_pd(xr, yr), _mm256_mul_pd(xi, yi));
            let im = _mm256_add_pd(_mm256_mul_pd(xr, yi), _mm256_mul_pd(xi, yr));
            _mm256_storeu_pd(or.as_mut_ptr().add(k), re);
            _mm256_storeu_pd(oi.as_mut_ptr().add(k), im);
            k += 4;
        }
        for i in body..n {
            or[i] = ar[i] * sr[i] - ai[i] * si[i];
            oi[i] = ar[i] * si[i] + ai[i] * sr[i];
        }
    }

    #[target_feature(enable = "avx2")]
    pub unsafe fn conj_axpy(a: CxSlice<'_>, k: Complex64, acc: &mut CxBuf) {
        let n = a.len();
        let (ar, ai) = (&a.re[..n], &a.im[..n]);
        let (cr, ci) = (&mut acc.re[..n], &mut acc.im[..n]);
        let (kr, ki) = (_mm256_set1_pd(k.re), _mm256_set1_pd(k.im));
        let body = n - n % 4;
        let mut j = 0;
        while j < body {
            let (xr, xi) = (ld(ar, j), ld(ai, j));
            let re = _mm256_add_pd(_mm256_mul_pd(xr, kr), _mm256_mul_pd(xi, ki));
            let im = _mm256_sub_pd(_mm256_mul_pd(xr, ki), _mm256_mul_pd(xi, kr));
            _mm256_storeu_pd(cr.as_mut_ptr().add(j), _mm256_add_pd(ld(cr, j), re));
            _mm256_storeu_pd(ci.as_mut_ptr().add(j), _mm256_add_pd(ld(ci, j), im));
            j += 4;
        }
        for i in body..n {
            cr[i] += ar[i] * k.re + ai[i] * k.im;
            ci[i] += ar[i] * k.im - ai[i] * k.re;
        }
    }

    #[target_feature(enable = "avx2")]
    pub unsafe fn conj_mul_acc(a: CxSlice<'_>, v: CxSlice<'_>, acc: &mut CxBuf) {
        let n = a.len();
        let (ar, ai, vr, vi) = (&a.re[..n], &a.im[..n], &v.re[..n], &v.im[..n]);
        let (cr, ci) = (&mut acc.re[..n], &mut acc.im[..n]);
        let body = n - n % 4;
        let mut j = 0;
        while j < body {
            let (xr, xi, yr, yi) = (ld(ar, j), ld(ai, j), ld(vr, j), ld(vi, j));
            let re = _mm256_add_pd(_mm256_mul_pd(xr, yr), _mm256_mul_pd(xi, yi));
            let im = _mm256_sub_pd(_mm256_mul_pd(xr, yi), _mm256_mul_pd(xi, yr));
            _mm256_storeu_pd(cr.as_mut_ptr().add(j), _mm256_add_pd(ld(cr, j), re));
            _mm256_storeu_pd(ci.as_mut_ptr().add(j), _mm256_add_pd(ld(ci, j), im));
            j += 4;
        }
        for i in body..n {
            cr[i] += ar[i] * vr[i] + ai[i] * vi[i];
            ci[i] += ar[i] * vi[i] - ai[i] * vr[i];
        }
    }
}

#[inline(always)]
fn dot_impl(a: CxSlice<'_>, w: CxSlice<'_>) -> Complex64 {
    let n = a.len();
    let (ar, ai, wr, wi) = (&a.re[..n], &a.im[..n], &w.re[..n], &w.im[..n]);
    let body = n - n % LANES;
    let mut sr = [0.0f64; LANES];
    let mut si = [0.0f64; LANES];
    for (((ar, ai), wr), wi) in ar[..body]
        .chunks_exact(LANES)
        .zip(ai[..body].chunks_exact(LANES))
        .zip(wr[..body].chunks_exact(LANES))
        .zip(wi[..body].chunks_exact(LANES))
    {
        for l in 0..LANES {
            sr[l] += ar[l] * wr[l] - ai[l] * wi[l];
            si[l] += ar[l] * wi[l] + ai[l] * wr[l];
        }
    }
    for i in body..n {
        let l = i - body;
        sr[l] += ar[i] * wr[i] - ai[i] * wi[i];
        si[l] += ar[i] * wi[i] + ai[i] * wr[i];
    }
    Complex64::new(fold(sr), fold(si))
}

#[inline(always)]
fn fold(v: [f64; LANES]) -> f64 {
    ((v[0] + v[4]) + (v[2] + v[6])) + ((v[1] + v[5]) + (v[3] + v[7]))
}

#[inline(always)]
fn mul_impl(a: CxSlice<'_>, s: CxSlice<'_>, out: &mut CxBuf) {
    let n = a.len();
    let (ar, ai, sr, si) = (&a.re[..n], &a.im[..n], &s.re[..n], &s.im[..n]);
    let (or, oi) = (&mut out.re[..n], &mut out.im[..n]);
    for i in 0..n {
        or[i] = ar[i] * sr[i] - ai[i] * si[i];
        oi[i] = ar[i] * si[i] + ai[i] * sr[i];
    }
}

#[inline(always)]
fn conj_axpy_impl(a: CxSlice<'_>, k: Complex64, acc: &mut CxBuf) {
    let n = a.len();
    let (ar, ai) = (&a.re[..n], &a.im[..n]);
    let (cr, ci) = (&mut acc.re[..n], &mut acc.im[..n]);
    for i in 0..n {
        cr[i] += ar[i] * k.re + ai[i] * k.im;
        ci[i] += ar[i] * k.im - ai[i] * k.re;
    }
}

#[inline(always)]
fn conj_mul_acc_impl(a: CxSlice<'_>, v: CxSlice<'_>, acc: &mut CxBuf) {
    let n = a.len();
    let (ar, ai, vr, vi) = (&a.re[..n], &a.im[..n], &v.re[..n], &v.im[..n]);
    let (cr, ci) = (&mut acc.re[..n], &mut acc.im[..n]);
    for i in 0..n {
        cr[i] += ar[i] * vr[i] + ai[i] * vi[i];
        ci[i] += ar[i] * vi[i] - ai[i] * vr[i];
    }
}
