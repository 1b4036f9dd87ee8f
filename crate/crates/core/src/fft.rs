//! Zero-padded multidimensional FFT used for linear (non-wrapping)
//! convolution on the `(2n)^d` grid.
//!
//! Internally every array is laid out as `[d0][m][m]` with `d0 = m` in three
//! dimensions and `d0 = 1` in two, so one code path serves both.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::GridSpec;

pub(crate) struct PaddedFft {
    n: usize,
    m: usize,
    d0: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl PaddedFft {
    pub fn new(spec: &GridSpec) -> Self {
        let n = spec.n();
        let m = 2 * n;
        let mut planner = FftPlanner::new();
        Self {
            n,
            m,
            d0: if spec.dim() == 3 { m } else { 1 },
            fwd: planner.plan_fft_forward(m),
            inv: planner.plan_fft_inverse(m),
        }
    }

    pub fn padded_len(&self) -> usize {
        self.d0 * self.m * self.m
    }

    /// Multi-index on the padded grid to its signed offset (for kernel tables).
    pub fn signed_offsets(&self, idx: usize) -> [i64; 3] {
        let m = self.m;
        let wrap = |k: usize| if k < m / 2 { k as i64 } else { k as i64 - m as i64 };
        let c = idx % m;
        let b = (idx / m) % m;
        let a = idx / (m * m);
        if self.d0 == 1 {
            [wrap(b), wrap(c), 0]
        } else {
            [wrap(a), wrap(b), wrap(c)]
        }
    }

    /// Whether a padded index maps to a difference vector that can occur
    /// between two cells (|offset| < n on every axis).
    pub fn in_difference_range(&self, idx: usize) -> bool {
        let o = self.signed_offsets(idx);
        o.iter().all(|&k| k.unsigned_abs() < self.n as u64)
    }

    fn axis(&self, buf: &mut [Complex64], ax: usize, lim: [usize; 3], fft: &dyn Fft<f64>, scratch: &mut Vec<Complex64>) {
        let m = self.m;
        let mut work = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        match ax {
            2 => {
                for a in 0..lim[0] {
                    let start = a * m * m;
                    fft.process_with_scratch(&mut buf[start..start + lim[1] * m], &mut work);
                }
            }
            1 => {
                scratch.resize(lim[2] * m, Complex64::default());
                for a in 0..lim[0] {
                    let plane = &mut buf[a * m * m..(a + 1) * m * m];
                    for b in 0..m {
                        let row = &plane[b * m..b * m + lim[2]];
                        for (c, x) in row.iter().enumerate() {
                            scratch[c * m + b] = *x;
                        }
                    }
                    fft.process_with_scratch(scratch, &mut work);
                    for b in 0..m {
                        let row = &mut plane[b * m..b * m + lim[2]];
                        for (c, x) in row.iter_mut().enumerate() {
                            *x = scratch[c * m + b];
                        }
                    }
                }
            }
            _ => {
                scratch.resize(lim[2] * m, Complex64::default());
                for b in 0..lim[1] {
                    for a in 0..m {
                        let row = &buf[(a * m + b) * m..(a * m + b) * m + lim[2]];
                        for (c, x) in row.iter().enumerate() {
                            scratch[c * m + a] = *x;
                        }
                    }
                    fft.process_with_scratch(scratch, &mut work);
                    for a in 0..m {
                        let row = &mut buf[(a * m + b) * m..(a * m + b) * m + lim[2]];
                        for (c, x) in row.iter_mut().enumerate() {
                            *x = scratch[c * m + a];
                        }
                    }
                }
            }
        }
    }

    /// Full forward transform of a padded table.
    pub fn forward_full(&self, buf: &mut [Complex64]) {
        let m = self.m;
        let mut scratch = Vec::new();
        self.axis(buf, 2, [self.d0, m, m], &*self.fwd, &mut scratch);
        self.axis(buf, 1, [self.d0, m, m], &*self.fwd, &mut scratch);
        if self.d0 > 1 {
            self.axis(buf, 0, [m, m, m], &*self.fwd, &mut scratch);
        }
    }

    /// Embeds cell data in the low corner of the padded grid and transforms,
    /// skipping lines that are identically zero.
    pub fn forward_cells(&self, values: &[f64]) -> Vec<Complex64> {
        self.forward_embedded(|i| Complex64::new(values[i], 0.0))
    }

    /// Transforms of two real cell arrays from one complex transform.
    pub fn forward_cells_pair(&self, x: &[f64], y: &[f64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let z = self.forward_embedded(|i| Complex64::new(x[i], y[i]));
        let m = self.m;
        let neg = |k: usize| if k == 0 { 0 } else { m - k };
        let mut xs = vec![Complex64::default(); z.len()];
        let mut ys = vec![Complex64::default(); z.len()];
        let half = Complex64::new(0.0, -0.5);
        for a in 0..self.d0 {
            let a2 = if self.d0 == 1 { 0 } else { neg(a) };
            for b in 0..m {
                let row = (a * m + b) * m;
                let mirror = (a2 * m + neg(b)) * m;
                for c in 0..m {
                    let zk = z[row + c];
                    let zc = z[mirror + neg(c)].conj();
                    xs[row + c] = (zk + zc) * 0.5;
                    ys[row + c] = (zk - zc) * half;
                }
            }
        }
        (xs, ys)
    }

    fn forward_embedded(&self, value: impl Fn(usize) -> Complex64) -> Vec<Complex64> {
        let (n, m) = (self.n, self.m);
        let mut buf = vec![Complex64::default(); self.padded_len()];
        let lim0 = self.d0.min(n);
        for a in 0..lim0 {
            for b in 0..n {
                let src = (a * n + b) * n;
                let dst = &mut buf[(a * m + b) * m..(a * m + b) * m + n];
                for (c, o) in dst.iter_mut().enumerate() {
                    *o = value(src + c);
                }
            }
        }
        let mut scratch = Vec::new();
        self.axis(&mut buf, 2, [lim0, n, m], &*self.fwd, &mut scratch);
        self.axis(&mut buf, 1, [lim0, m, m], &*self.fwd, &mut scratch);
        if self.d0 > 1 {
            self.axis(&mut buf, 0, [m, m, m], &*self.fwd, &mut scratch);
        }
        buf
    }

    /// Inverse transform restricted to the cell block; returns real and
    /// imaginary parts of the cropped result, each multiplied by `scale`.
    pub fn inverse_cells(&self, mut buf: Vec<Complex64>, scale: f64) -> (Vec<f64>, Vec<f64>) {
        let (n, m) = (self.n, self.m);
        let lim0 = self.d0.min(n);
        let mut scratch = Vec::new();
        if self.d0 > 1 {
            self.axis(&mut buf, 0, [m, m, m], &*self.inv, &mut scratch);
        }
        self.axis(&mut buf, 1, [lim0, m, m], &*self.inv, &mut scratch);
        self.axis(&mut buf, 2, [lim0, n, m], &*self.inv, &mut scratch);
        let norm = scale / self.padded_len() as f64;
        let cells = lim0 * n * n;
        let mut re = Vec::with_capacity(cells);
        let mut im = Vec::with_capacity(cells);
        for a in 0..lim0 {
            for b in 0..n {
                for x in &buf[(a * m + b) * m..(a * m + b) * m + n] {
                    re.push(x.re * norm);
                    im.push(x.im * norm);
                }
            }
        }
        (re, im)
    }
}

/// Pointwise `fhat * (k1 + i k2)` for packing two real convolutions.
pub(crate) fn packed_product(fhat: &[Complex64], k1: &[Complex64], k2: Option<&[Complex64]>) -> Vec<Complex64> {
    match k2 {
        Some(k2) => fhat
            .iter()
            .zip(k1.iter().zip(k2))
            .map(|(f, (a, b))| f * (a + Complex64::new(-b.im, b.re)))
            .collect(),
        None => fhat.iter().zip(k1).map(|(f, a)| f * a).collect(),
    }
}

