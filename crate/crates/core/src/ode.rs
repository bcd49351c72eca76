//! Fixed-step classical Runge–Kutta integration.
//!
//! States are slices of any scalar that supports `+` and scaling by `f64`,
//! so the same integrator serves the real Riccati systems and the complex
//! characteristic-function ODEs.

use std::ops::{Add, Mul};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Default upper bound on the step size.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Any component exceeding this magnitude aborts integration.
pub const BLOW_UP: f64 = 1e8;

pub trait Scalar: Copy + Add<Output = Self> + Mul<f64, Output = Self> {
    fn magnitude(&self) -> f64;
    fn zero() -> Self;
}

impl Scalar for f64 {
    fn magnitude(&self) -> f64 {
        self.abs()
    }
    fn zero() -> Self {
        0.0
    }
}

impl Scalar for Complex64 {
    fn magnitude(&self) -> f64 {
        self.norm()
    }
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
}

/// Number of equal steps of size at most `max_step` covering `span`.
pub fn step_count(span: f64, max_step: f64) -> usize {
    ((span.abs() / max_step).ceil() as usize).max(1)
}

struct Workspace<S> {
    k1: Vec<S>,
    k2: Vec<S>,
    k3: Vec<S>,
    k4: Vec<S>,
    tmp: Vec<S>,
}

impl<S: Scalar> Workspace<S> {
    fn new(n: usize) -> Self {
        Self {
            k1: vec![S::zero(); n],
            k2: vec![S::zero(); n],
            k3: vec![S::zero(); n],
            k4: vec![S::zero(); n],
            tmp: vec![S::zero(); n],
        }
    }

    fn step<F>(&mut self, f: &mut F, t: f64, h: f64, y: &mut [S])
    where
        F: FnMut(f64, &[S], &mut [S]),
    {
        let n = y.len();
        f(t, y, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = y[i] + self.k1[i] * (0.5 * h);
        }
        f(t + 0.5 * h, &self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = y[i] + self.k2[i] * (0.5 * h);
        }
        f(t + 0.5 * h, &self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = y[i] + self.k3[i] * h;
        }
        f(t + h, &self.tmp, &mut self.k4);
        for i in 0..n {
            y[i] = y[i] + (self.k1[i] + self.k2[i] * 2.0 + self.k3[i] * 2.0 + self.k4[i]) * (h / 6.0);
        }
    }
}

fn check_blow_up<S: Scalar>(t: f64, y: &[S]) -> Result<()> {
    let m = y.iter().map(Scalar::magnitude).fold(0.0, f64::max);
    if !(m <= BLOW_UP) {
        return Err(Error::BlowUp { tau: t, magnitude: m });
    }
    Ok(())
}

/// Integrates `y' = f(t, y)` from `t0` to `t1` (either direction) and returns `y(t1)`.
pub fn integrate<S, F>(mut f: F, y0: &[S], t0: f64, t1: f64, max_step: f64) -> Result<Vec<S>>
where
    S: Scalar,
    F: FnMut(f64, &[S], &mut [S]),
{
    let n = step_count(t1 - t0, max_step);
    let h = (t1 - t0) / n as f64;
    let mut y = y0.to_vec();
    let mut ws = Workspace::new(y.len());
    for k in 0..n {
        let t = t0 + k as f64 * h;
        ws.step(&mut f, t, h, &mut y);
        check_blow_up(t + h, &y)?;
    }
    Ok(y)
}

/// Like [`integrate`] but keeps every node: returns `(t_k, y_k)` for `k = 0..=n`.
pub fn integrate_path<S, F>(mut f: F, y0: &[S], t0: f64, t1: f64, max_step: f64) -> Result<(Vec<f64>, Vec<Vec<S>>)>
where
    S: Scalar,
    F: FnMut(f64, &[S], &mut [S]),
{
    let n = step_count(t1 - t0, max_step);
    let h = (t1 - t0) / n as f64;
    let mut y = y0.to_vec();
    let mut ws = Workspace::new(y.len());
    let mut ts = Vec::with_capacity(n + 1);
    let mut ys = Vec::with_capacity(n + 1);
    ts.push(t0);
    ys.push(y.clone());
    for k in 0..n {
        let t = t0 + k as f64 * h;
        ws.step(&mut f, t, h, &mut y);
        check_blow_up(t + h, &y)?;
        ts.push(if k + 1 == n { t1 } else { t + h });
        ys.push(y.clone());
    }
    Ok((ts, ys))
}

/// Final value together with a Richardson error estimate (max over components),
/// comparing step `h` against `h/2`. The returned value is the `h/2` solution.
pub fn integrate_with_error<F>(mut f: F, y0: &[f64], t0: f64, t1: f64, max_step: f64) -> Result<(Vec<f64>, f64)>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let coarse = integrate(&mut f, y0, t0, t1, max_step)?;
    let fine = integrate(&mut f, y0, t0, t1, 0.5 * max_step)?;
    let err = coarse
        .iter()
        .zip(&fine)
        .map(|(a, b)| (a - b).abs() / 15.0)
        .fold(0.0, f64::max);
    Ok((fine, err))
}

/// Real trajectory on a uniform grid with cubic Hermite interpolation.
#[derive(Debug, Clone)]
pub struct DenseGrid {
    ts: Vec<f64>,
    ys: Vec<Vec<f64>>,
    dys: Vec<Vec<f64>>,
}

impl DenseGrid {
    /// Integrates on `[t0, t1]`, `t0 < t1`, storing states and slopes.
    pub fn solve<F>(mut f: F, y0: &[f64], t0: f64, t1: f64, max_step: f64) -> Result<Self>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        assert!(t1 > t0, "DenseGrid expects an increasing interval");
        let (ts, ys) = integrate_path(&mut f, y0, t0, t1, max_step)?;
        let dys = ts
            .iter()
            .zip(&ys)
            .map(|(&t, y)| {
                let mut d = vec![0.0; y.len()];
                f(t, y, &mut d);
                d
            })
            .collect();
        Ok(Self { ts, ys, dys })
    }

    pub fn t_min(&self) -> f64 {
        self.ts[0]
    }

    pub fn t_max(&self) -> f64 {
        *self.ts.last().unwrap()
    }

    pub fn dim(&self) -> usize {
        self.ys[0].len()
    }

    pub fn nodes(&self) -> (&[f64], &[Vec<f64>]) {
        (&self.ts, &self.ys)
    }

    /// Interpolated state; `t` is clamped to the grid.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(t, &mut out);
        out
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let n = self.ts.len() - 1;
        let t = t.clamp(self.t_min(), self.t_max());
        let h = (self.t_max() - self.t_min()) / n as f64;
        let k = (((t - self.t_min()) / h).floor() as usize).min(n - 1);
        let (ta, tb) = (self.ts[k], self.ts[k + 1]);
        let dt = tb - ta;
        let s = (t - ta) / dt;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        for i in 0..out.len() {
            out[i] = h00 * self.ys[k][i]
                + h10 * dt * self.dys[k][i]
                + h01 * self.ys[k + 1][i]
                + h11 * dt * self.dys[k + 1][i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_decay_to_one() {
        // H' = -H + 1, H(0) = 0
        let y = integrate(|_, y: &[f64], d: &mut [f64]| d[0] = 1.0 - y[0], &[0.0], 0.0, 1.0, 1e-3).unwrap();
        assert!((y[0] - 0.6321).abs() < 1e-4);
        assert!((y[0] - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn backward_integration() {
        let y = integrate(|_, y: &[f64], d: &mut [f64]| d[0] = y[0], &[1.0], 1.0, 0.0, 1e-3).unwrap();
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn complex_rotation() {
        let i = Complex64::new(0.0, 1.0);
        let y = integrate(|_, y: &[Complex64], d: &mut [Complex64]| d[0] = i * y[0], &[Complex64::new(1.0, 0.0)], 0.0, 2.0, 1e-3)
            .unwrap();
        let exact = (i * 2.0).exp();
        assert!((y[0] - exact).norm() < 1e-12);
    }

    #[test]
    fn richardson_estimate_tracks_error() {
        let (y, err) =
            integrate_with_error(|_, y: &[f64], d: &mut [f64]| d[0] = -5.0 * y[0], &[1.0], 0.0, 1.0, 0.05).unwrap();
        let true_err = (y[0] - (-5.0f64).exp()).abs();
        assert!(err > 0.1 * true_err && err < 10.0 * true_err, "{err} vs {true_err}");
    }

    #[test]
    fn blow_up_is_reported() {
        let r = integrate(|_, y: &[f64], d: &mut [f64]| d[0] = y[0] * y[0], &[1.0], 0.0, 2.0, 1e-3);
        match r {
            Err(Error::BlowUp { tau, .. }) => assert!(tau > 0.99 && tau < 1.01),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dense_grid_interpolates() {
        let g = DenseGrid::solve(|t, _y: &[f64], d: &mut [f64]| d[0] = t.cos(), &[0.0], 0.0, 3.0, 0.01).unwrap();
        for &t in &[0.0, 0.123, 1.0, 2.9999, 3.0] {
            assert!((g.eval(t)[0] - t.sin()).abs() < 1e-9, "t = {t}");
        }
    }
}
