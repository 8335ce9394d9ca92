use num_complex::Complex64;
use rayon::prelude::*;

use super::fft3::Fft3;

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Six real scalar fields in Mandel ordering `(11, 22, 33, √2·23, √2·13, √2·12)`.
pub(crate) type MandelField = [Vec<f64>; 6];

pub(crate) fn mandel_zeros(len: usize) -> MandelField {
    std::array::from_fn(|_| vec![0.0; len])
}

/// Orthogonal projection onto compatible, zero-mean symmetric strain fields.
///
/// At a nonzero frequency with unit direction `d` the projection of a
/// symmetric tensor `τ` is `d⊗a + a⊗d − (d·a) d⊗d` with `a = τ d`, which is
/// the closest field of the form `sym(d ⊗ u)`. The zero mode maps to zero.
#[derive(Debug, Clone)]
pub struct ProjectionOperator {
    n: usize,
    fft: Fft3,
    /// Unit frequency direction per mode, zero for the mean mode and for
    /// modes whose only nonzero component sits on a Nyquist row.
    dirs: Vec<[f64; 3]>,
    /// Index of the mode `-k`.
    neg: Vec<u32>,
}

/// Signed integer frequency of DFT index `i`; the even-n Nyquist index maps to 0.
fn frequency(i: usize, n: usize) -> i64 {
    if n % 2 == 0 && i == n / 2 {
        0
    } else if 2 * i < n {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

impl ProjectionOperator {
    pub fn new(n: usize) -> Self {
        let len = n * n * n;
        let mut dirs = vec![[0.0; 3]; len];
        let mut neg = vec![0u32; len];
        let two_pi = 2.0 * std::f64::consts::PI;
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let idx = x + n * (y + n * z);
                    let xi = [
                        two_pi * frequency(x, n) as f64,
                        two_pi * frequency(y, n) as f64,
                        two_pi * frequency(z, n) as f64,
                    ];
                    let norm = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
                    if norm > 0.0 {
                        dirs[idx] = [xi[0] / norm, xi[1] / norm, xi[2] / norm];
                    }
                    let (nx, ny, nz) = ((n - x) % n, (n - y) % n, (n - z) % n);
                    neg[idx] = (nx + n * (ny + n * nz)) as u32;
                }
            }
        }
        ProjectionOperator {
            n,
            fft: Fft3::new(n),
            dirs,
            neg,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Unit frequency direction of mode `(x, y, z)`, or zero when the mode is annihilated.
    pub fn direction(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        self.dirs[x + self.n * (y + self.n * z)]
    }

    /// Applies the projection to six Mandel component fields.
    ///
    /// Components are packed in pairs into three complex transforms; the
    /// spectra of the two real fields in a pair are separated with the
    /// conjugate-symmetry identity before the projection mixes components.
    pub(crate) fn apply(&self, input: &MandelField, out: &mut MandelField) {
        let len = self.n * self.n * self.n;
        let mut packed: Vec<Vec<Complex64>> = (0..3)
            .map(|p| {
                input[2 * p]
                    .iter()
                    .zip(input[2 * p + 1].iter())
                    .map(|(&a, &b)| Complex64::new(a, b))
                    .collect()
            })
            .collect();
        packed.par_iter_mut().for_each(|buf| {
            let mut scratch = vec![Complex64::new(0.0, 0.0); len];
            self.fft.forward(buf, &mut scratch);
        });

        let half = Complex64::new(0.5, 0.0);
        let minus_half_i = Complex64::new(0.0, -0.5);
        let i_unit = Complex64::new(0.0, 1.0);
        for k in 0..len {
            let mk = self.neg[k] as usize;
            if mk < k {
                continue;
            }
            let d = self.dirs[k];
            if d == [0.0, 0.0, 0.0] {
                for buf in packed.iter_mut() {
                    buf[k] = Complex64::new(0.0, 0.0);
                    buf[mk] = Complex64::new(0.0, 0.0);
                }
                continue;
            }
            let mut f = [Complex64::new(0.0, 0.0); 6];
            for p in 0..3 {
                let zk = packed[p][k];
                let zc = packed[p][mk].conj();
                f[2 * p] = (zk + zc) * half;
                f[2 * p + 1] = (zk - zc) * minus_half_i;
            }
            let g = project_mode(&f, d);
            for p in 0..3 {
                packed[p][k] = g[2 * p] + i_unit * g[2 * p + 1];
                if mk != k {
                    packed[p][mk] = g[2 * p].conj() + i_unit * g[2 * p + 1].conj();
                }
            }
        }

        let scale = 1.0 / len as f64;
        packed.par_iter_mut().for_each(|buf| {
            let mut scratch = vec![Complex64::new(0.0, 0.0); len];
            self.fft.inverse(buf, &mut scratch);
        });
        for p in 0..3 {
            let (lo, hi) = out.split_at_mut(2 * p + 1);
            let a = &mut lo[2 * p];
            let b = &mut hi[0];
            for (i, v) in packed[p].iter().enumerate() {
                a[i] = v.re * scale;
                b[i] = v.im * scale;
            }
        }
    }
}

/// Projection of one Fourier mode in Mandel components.
#[inline]
fn project_mode(m: &[Complex64; 6], d: [f64; 3]) -> [Complex64; 6] {
    let t11 = m[0];
    let t22 = m[1];
    let t33 = m[2];
    let t23 = m[3] / SQRT2;
    let t13 = m[4] / SQRT2;
    let t12 = m[5] / SQRT2;
    let a = [
        t11 * d[0] + t12 * d[1] + t13 * d[2],
        t12 * d[0] + t22 * d[1] + t23 * d[2],
        t13 * d[0] + t23 * d[1] + t33 * d[2],
    ];
    let s = a[0] * d[0] + a[1] * d[1] + a[2] * d[2];
    let p = |i: usize, j: usize| a[j] * d[i] + a[i] * d[j] - s * (d[i] * d[j]);
    [
        p(0, 0),
        p(1, 1),
        p(2, 2),
        p(1, 2) * SQRT2,
        p(0, 2) * SQRT2,
        p(0, 1) * SQRT2,
    ]
}
