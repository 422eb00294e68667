//! Small numerical toolkit shared by the model modules.

pub mod fft2;
pub mod philox;
pub mod quad;
pub mod sum;

pub use sum::{csum, Neumaier};

/// Ordinary least squares fit of `y = a + b x`; returns `(a, b, se_b, r2, residuals)`.
pub fn ols(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64, Vec<f64>) {
    let n = x.len() as f64;
    let mx = csum(x.iter().copied()) / n;
    let my = csum(y.iter().copied()) / n;
    let sxx = csum(x.iter().map(|&a| (a - mx) * (a - mx)));
    let sxy = csum(x.iter().zip(y).map(|(&a, &b)| (a - mx) * (b - my)));
    let syy = csum(y.iter().map(|&b| (b - my) * (b - my)));
    let b = sxy / sxx;
    let a = my - b * mx;
    let res: Vec<f64> = x.iter().zip(y).map(|(&xi, &yi)| yi - a - b * xi).collect();
    let sse = csum(res.iter().map(|r| r * r));
    let se = if x.len() > 2 {
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    (a, b, se, r2, res)
}
