use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Smallest integer `>= n` whose prime factors are all in {2, 3, 5, 7}.
pub fn smooth_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5, 7] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Planned 2-D complex transform on a row-major `n1 x n2` buffer.
pub struct Fft2 {
    pub n1: usize,
    pub n2: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(n1: usize, n2: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            n1,
            n2,
            row_fwd: planner.plan_fft_forward(n2),
            row_inv: planner.plan_fft_inverse(n2),
            col_fwd: planner.plan_fft_forward(n1),
            col_inv: planner.plan_fft_inverse(n1),
        }
    }

    fn run(&self, buf: &mut [Complex64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        let (n1, n2) = (self.n1, self.n2);
        assert_eq!(buf.len(), n1 * n2);
        let mut scratch = vec![
            Complex64::default();
            rows.get_inplace_scratch_len()
                .max(cols.get_inplace_scratch_len())
        ];
        rows.process_with_scratch(buf, &mut scratch);
        let mut t = vec![Complex64::default(); n1 * n2];
        transpose(buf, &mut t, n1, n2);
        cols.process_with_scratch(&mut t, &mut scratch);
        transpose(&t, buf, n2, n1);
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.row_fwd, &self.col_fwd);
    }

    /// Inverse transform including the `1 / (n1 n2)` normalisation.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.row_inv, &self.col_inv);
        let s = 1.0 / (self.n1 * self.n2) as f64;
        for z in buf.iter_mut() {
            *z *= s;
        }
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], n1: usize, n2: usize) {
    const B: usize = 32;
    for i0 in (0..n1).step_by(B) {
        for j0 in (0..n2).step_by(B) {
            for i in i0..(i0 + B).min(n1) {
                for j in j0..(j0 + B).min(n2) {
                    dst[j * n1 + i] = src[i * n2 + j];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_sizes() {
        assert_eq!(smooth_size(1), 1);
        assert_eq!(smooth_size(11), 12);
        assert_eq!(smooth_size(97), 98);
        assert_eq!(smooth_size(768), 768);
    }

    #[test]
    fn roundtrip() {
        let (n1, n2) = (6, 10);
        let f = Fft2::new(n1, n2);
        let orig: Vec<Complex64> = (0..n1 * n2)
            .map(|k| Complex64::new((k as f64).sin(), (k as f64 * 0.3).cos()))
            .collect();
        let mut b = orig.clone();
        f.forward(&mut b);
        f.inverse(&mut b);
        for (x, y) in b.iter().zip(&orig) {
            assert!((x - y).norm() < 1e-13);
        }
    }
}
