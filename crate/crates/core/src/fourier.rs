//! Periodic sample sets on `[0, 1)`: spectral differentiation and
//! trigonometric interpolation.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::CVector;

/// Signed frequency of FFT bin `k` for `n` samples. The Nyquist bin of an
/// even `n` maps to `n / 2`.
fn frequency(k: usize, n: usize) -> i64 {
    if 2 * k <= n {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// Fourier coefficients `c_k` with `x_j = sum_k c_k exp(2 pi i k j / n)`,
/// one coefficient vector per bin.
fn forward(samples: &[CVector]) -> Vec<CVector> {
    let n = samples.len();
    let dim = samples.first().map_or(0, |v| v.len());
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut out = vec![CVector::zeros(dim); n];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for c in 0..dim {
        for (j, s) in samples.iter().enumerate() {
            buf[j] = s[c];
        }
        fft.process(&mut buf);
        for (k, v) in buf.iter().enumerate() {
            out[k][c] = *v / n as f64;
        }
    }
    out
}

fn inverse(coeffs: &[CVector]) -> Vec<CVector> {
    let n = coeffs.len();
    let dim = coeffs.first().map_or(0, |v| v.len());
    let fft = FftPlanner::new().plan_fft_inverse(n);
    let mut out = vec![CVector::zeros(dim); n];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for c in 0..dim {
        for (k, v) in coeffs.iter().enumerate() {
            buf[k] = v[c];
        }
        fft.process(&mut buf);
        for (j, v) in buf.iter().enumerate() {
            out[j][c] = *v;
        }
    }
    out
}

/// Derivative of the trigonometric interpolant at the sample points. The
/// Nyquist mode of an even sample count is dropped.
pub fn differentiate(samples: &[CVector]) -> Vec<CVector> {
    let n = samples.len();
    let mut c = forward(samples);
    for (k, v) in c.iter_mut().enumerate() {
        let m = frequency(k, n);
        if n % 2 == 0 && 2 * k == n {
            v.fill(Complex64::new(0.0, 0.0));
        } else {
            *v *= Complex64::new(0.0, 2.0 * PI * m as f64);
        }
    }
    inverse(&c)
}

/// Spectral differentiation matrix for `n` equispaced points on `[0, 1)`.
pub fn differentiation_matrix(n: usize) -> DMatrix<f64> {
    let h = 2.0 * PI / n as f64;
    DMatrix::from_fn(n, n, |j, k| {
        if j == k {
            return 0.0;
        }
        let d = j as f64 - k as f64;
        let sign = if (j + k) % 2 == 0 { 1.0 } else { -1.0 };
        let x = 0.5 * d * h;
        let v = if n % 2 == 1 { 0.5 * sign / x.sin() } else { 0.5 * sign / x.tan() };
        2.0 * PI * v
    })
}

/// Trigonometric interpolant of a periodic vector-valued sample set.
#[derive(Clone, Debug)]
pub struct TrigInterpolant {
    coeffs: Vec<(i64, CVector)>,
}

impl TrigInterpolant {
    pub fn new(samples: &[CVector]) -> Self {
        let n = samples.len();
        let c = forward(samples);
        let mut coeffs = Vec::with_capacity(n + 1);
        for (k, v) in c.into_iter().enumerate() {
            if n % 2 == 0 && 2 * k == n {
                // Split the Nyquist mode symmetrically so the interpolant of
                // real data stays real.
                let half = v * Complex64::new(0.5, 0.0);
                coeffs.push((k as i64, half.clone()));
                coeffs.push((-(k as i64), half));
            } else {
                coeffs.push((frequency(k, n), v));
            }
        }
        Self { coeffs }
    }

    pub fn eval(&self, t: f64) -> CVector {
        let dim = self.coeffs.first().map_or(0, |c| c.1.len());
        let mut out = CVector::zeros(dim);
        let t = t.rem_euclid(1.0);
        for (m, c) in &self.coeffs {
            let (s, co) = (2.0 * PI * *m as f64 * t).sin_cos();
            out += c * Complex64::new(co, s);
        }
        out
    }

    pub fn derivative(&self, t: f64) -> CVector {
        let dim = self.coeffs.first().map_or(0, |c| c.1.len());
        let mut out = CVector::zeros(dim);
        let t = t.rem_euclid(1.0);
        for (m, c) in &self.coeffs {
            let w = 2.0 * PI * *m as f64;
            let (s, co) = (w * t).sin_cos();
            out += c * Complex64::new(-w * s, w * co);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(n: usize, f: impl Fn(f64) -> f64) -> Vec<CVector> {
        (0..n)
            .map(|j| CVector::from_element(1, Complex64::new(f(j as f64 / n as f64), 0.0)))
            .collect()
    }

    #[test]
    fn derivative_of_trig() {
        let s = samples(32, |t| (2.0 * PI * t).sin() + 0.5 * (6.0 * PI * t).cos());
        let d = differentiate(&s);
        for (j, v) in d.iter().enumerate() {
            let t = j as f64 / 32.0;
            let exact = 2.0 * PI * (2.0 * PI * t).cos() - 3.0 * PI * (6.0 * PI * t).sin();
            assert!((v[0].re - exact).abs() < 1e-11);
        }
    }

    #[test]
    fn matrix_matches_fft() {
        for n in [15usize, 16] {
            let s = samples(n, |t| (2.0 * PI * t).cos() + (4.0 * PI * t).sin());
            let d = differentiate(&s);
            let m = differentiation_matrix(n);
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += m[(j, k)] * s[k][0].re;
                }
                assert!((acc - d[j][0].re).abs() < 1e-10, "n = {n}");
            }
        }
    }

    #[test]
    fn interpolant_between_points() {
        let s = samples(16, |t| 1.0 + (2.0 * PI * t).cos() - 0.25 * (10.0 * PI * t).sin());
        let p = TrigInterpolant::new(&s);
        let t = 0.3721;
        let exact = 1.0 + (2.0 * PI * t).cos() - 0.25 * (10.0 * PI * t).sin();
        let v = p.eval(t);
        assert!((v[0].re - exact).abs() < 1e-13);
        assert!(v[0].im.abs() < 1e-14);
    }
}
