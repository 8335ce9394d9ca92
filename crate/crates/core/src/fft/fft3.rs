use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// In-place 3D FFT on an `n³` cube stored x-fastest.
///
/// Each pass transforms the contiguous axis and then rotates the layout so the
/// next axis becomes contiguous; three passes restore the original layout.
#[derive(Clone)]
pub(crate) struct Fft3 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft3").field("n", &self.n).finish()
    }
}

impl Fft3 {
    pub(crate) fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft3 {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub(crate) fn forward(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.run(&self.forward, buf, scratch);
    }

    /// Unnormalized inverse transform.
    pub(crate) fn inverse(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.run(&self.inverse, buf, scratch);
    }

    fn run(&self, plan: &Arc<dyn Fft<f64>>, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.n * self.n * self.n);
        for _ in 0..3 {
            plan.process(buf);
            rotate(self.n, buf, scratch);
            buf.copy_from_slice(scratch);
        }
    }
}

/// `out[b + n (c + n a)] = inp[a + n (b + n c)]`.
fn rotate(n: usize, inp: &[Complex64], out: &mut [Complex64]) {
    for c in 0..n {
        for b in 0..n {
            let row = &inp[n * (b + n * c)..n * (b + n * c) + n];
            for (a, v) in row.iter().enumerate() {
                out[b + n * (c + n * a)] = *v;
            }
        }
    }
}
