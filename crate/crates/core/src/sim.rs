//! Monte Carlo oracle for factors, wealth, penalties and log-likelihood ratios.
//!
//! Every path (or antithetic pair) draws from its own ChaCha8 stream keyed by
//! `(seed, path index)`, and per-path results are reduced in index order, so
//! reports are bit-identical for any thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;
use std::io::Write;

use crate::correlated::CirTransitionParams;
use crate::detection::DistortionLoadings;
use crate::error::{Error, Result};
use crate::model::{FactorParams, ScenarioConfig};
use crate::riccati::ValueCoefficients;
use crate::strategy::{self, Loadings};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    Reference,
    WorstCase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Euler with `V⁺ = max(V, 0)` in drift and diffusion.
    FullTruncation,
    /// Draws from the scaled noncentral χ² transition law.
    ExactTransition,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::FullTruncation => "full-truncation",
            Scheme::ExactTransition => "exact-transition",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSpec {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub measure: Measure,
    pub scheme: Scheme,
    /// Pair each path with its sign-flipped twin (normal-driven schemes only).
    pub antithetic: bool,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            dt: 1.0 / 500.0,
            seed: 0,
            measure: Measure::Reference,
            scheme: Scheme::FullTruncation,
            antithetic: true,
        }
    }
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::param("n_paths", "must be >= 1"));
        }
        if !(self.dt > 0.0 && self.dt <= 0.01) {
            return Err(Error::param("dt", "must lie in (0, 0.01]"));
        }
        if self.antithetic && self.scheme == Scheme::FullTruncation && self.n_paths % 2 != 0 {
            return Err(Error::param("n_paths", "antithetic sampling needs an even path count"));
        }
        Ok(())
    }

    fn steps(&self, horizon: f64) -> (usize, f64) {
        let n = (horizon / self.dt).round().max(1.0) as usize;
        (n, horizon / n as f64)
    }

    fn pairs(&self) -> bool {
        self.antithetic && self.scheme == Scheme::FullTruncation
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub quantity: String,
    pub estimate: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub scheme: Scheme,
    /// Paths discarded for non-positive or non-finite wealth.
    pub flagged: usize,
}

impl SimReport {
    /// True if `target` lies within `k` standard errors of the estimate.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.estimate - target).abs() <= k * self.stderr
    }
}

pub const REPORT_CSV_HEADER: [&str; 7] = ["quantity", "estimate", "stderr", "n_paths", "dt", "seed", "scheme"];

pub fn write_report_csv<W: Write>(out: W, reports: &[SimReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(REPORT_CSV_HEADER).map_err(io)?;
    for r in reports {
        w.write_record([
            r.quantity.clone(),
            format!("{:.12e}", r.estimate),
            format!("{:.6e}", r.stderr),
            r.n_paths.to_string(),
            format!("{}", r.dt),
            r.seed.to_string(),
            r.scheme.name().to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

fn stream(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Sample mean and standard error, accumulated in order.
fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0) / n).sqrt())
}

/// One draw of `V(t + dt)` given `V(t) = v` from the CIR transition law.
pub fn sample_cir_exact<R: Rng>(f: &FactorParams, v: f64, dt: f64, rng: &mut R) -> f64 {
    if f.sigma_v == 0.0 {
        return f.theta + (v - f.theta) * (-f.kappa * dt).exp();
    }
    let mut g = *f;
    g.v0 = v;
    let p = CirTransitionParams::new(&g, dt).expect("dt > 0 and sigma > 0");
    let n = if p.noncentrality > 0.0 {
        Poisson::new(0.5 * p.noncentrality).expect("positive mean").sample(rng)
    } else {
        0.0
    };
    let shape = 0.5 * p.dof + n;
    let x: f64 = Gamma::new(shape, 2.0).expect("positive shape").sample(rng);
    p.c_t * x
}

/// Correlated normals for `(W_1, W_2, Z_1, Z_2)`.
fn noises<R: Rng>(rng: &mut R, rho_w: f64) -> [f64; 4] {
    let z: [f64; 4] = [0; 4].map(|_| rng.sample(StandardNormal));
    [z[0], rho_w * z[0] + (1.0 - rho_w * rho_w).sqrt() * z[1], z[2], z[3]]
}

fn flip(z: [f64; 4], sign: f64) -> [f64; 4] {
    z.map(|x| sign * x)
}

/// One full-truncation step of both factors; `drift_shift[j]` is added to the drift.
fn step_factors(s: &ScenarioConfig, v: &mut [f64; 2], dt: f64, z: &[f64; 4], drift_shift: [f64; 2]) {
    let sq = dt.sqrt();
    for j in 0..2 {
        let f = &s.factors[j];
        let vp = v[j].max(0.0);
        let dw = f.rho * z[j] + f.rho_bar() * z[2 + j];
        v[j] += (f.kappa * (f.theta - vp) + drift_shift[j]) * dt + f.sigma_v * vp.sqrt() * sq * dw;
    }
}

fn rho_w(s: &ScenarioConfig) -> f64 {
    s.correlation.map_or(0.0, |c| c.rho_w)
}

/// Terminal `(V_1, V_2)` per path under the reference measure.
pub fn simulate_factors(s: &ScenarioConfig, spec: &SimSpec, horizon: f64) -> Result<Vec<[f64; 2]>> {
    spec.validate()?;
    if spec.scheme == Scheme::ExactTransition && rho_w(s) != 0.0 {
        return Err(Error::Configuration("exact transitions cannot carry correlated factors".into()));
    }
    let (n, dt) = spec.steps(horizon);
    let v0 = [s.factors[0].v0, s.factors[1].v0];
    let rw = rho_w(s);
    let per_unit: Vec<Vec<[f64; 2]>> = if spec.pairs() {
        (0..spec.n_paths / 2)
            .into_par_iter()
            .map(|p| {
                let mut rng = stream(spec.seed, p);
                let mut a = v0;
                let mut b = v0;
                for _ in 0..n {
                    let z = noises(&mut rng, rw);
                    step_factors(s, &mut a, dt, &z, [0.0; 2]);
                    step_factors(s, &mut b, dt, &flip(z, -1.0), [0.0; 2]);
                }
                vec![a, b]
            })
            .collect()
    } else {
        (0..spec.n_paths)
            .into_par_iter()
            .map(|p| {
                let mut rng = stream(spec.seed, p);
                let mut v = v0;
                for _ in 0..n {
                    match spec.scheme {
                        Scheme::ExactTransition => {
                            for j in 0..2 {
                                v[j] = sample_cir_exact(&s.factors[j], v[j], dt, &mut rng);
                            }
                        }
                        Scheme::FullTruncation => step_factors(s, &mut v, dt, &noises(&mut rng, rw), [0.0; 2]),
                    }
                }
                vec![v]
            })
            .collect()
    };
    Ok(per_unit.into_iter().flatten().collect())
}

/// Mean and variance of `√V(t)` from `n_draws` exact one-step transitions out of `V(0)`.
pub fn sqrt_moments_mc(f: &FactorParams, t: f64, n_draws: usize, seed: u64) -> Result<(SimReport, SimReport)> {
    if n_draws < 2 {
        return Err(Error::param("n_draws", "must be >= 2"));
    }
    if !(t > 0.0) {
        return Err(Error::Domain(format!("t = {t} must be > 0")));
    }
    // fixed-size blocks keep the stream layout independent of thread count
    const BLOCK: usize = 4096;
    let blocks = n_draws.div_ceil(BLOCK);
    let draws: Vec<f64> = (0..blocks)
        .into_par_iter()
        .flat_map_iter(|b| {
            let mut rng = stream(seed, b);
            let len = BLOCK.min(n_draws - b * BLOCK);
            (0..len).map(move |_| sample_cir_exact(f, f.v0, t, &mut rng).sqrt()).collect::<Vec<_>>()
        })
        .collect();
    let (mean, se_mean) = mean_stderr(&draws);
    let dev: Vec<f64> = draws.iter().map(|x| (x - mean) * (x - mean)).collect();
    let (var, se_var) = mean_stderr(&dev);
    let nf = n_draws as f64;
    let report = |quantity: &str, estimate: f64, stderr: f64| SimReport {
        quantity: quantity.into(),
        estimate,
        stderr,
        n_paths: n_draws,
        dt: t,
        seed,
        scheme: Scheme::ExactTransition,
        flagged: 0,
    };
    Ok((
        report("sqrt_v_mean", mean, se_mean),
        report("sqrt_v_var", var * nf / (nf - 1.0), se_var),
    ))
}

/// Per-step inputs shared by all paths: optimal exposures, worst-case
/// loadings and value coefficients at `t_n = n·dt`.
struct StepTable {
    beta: Vec<[f64; 4]>,
    q: Vec<Loadings>,
    hh: Vec<[f64; 2]>,
    h: Vec<f64>,
}

fn step_table(vc: &ValueCoefficients, n: usize, dt: f64) -> Result<StepTable> {
    let s = vc.scenario();
    let horizon = s.market.horizon;
    let mut t = StepTable {
        beta: Vec::with_capacity(n + 1),
        q: Vec::with_capacity(n + 1),
        hh: Vec::with_capacity(n + 1),
        h: Vec::with_capacity(n + 1),
    };
    for k in 0..=n {
        let tau = (horizon - k as f64 * dt).max(0.0);
        let (hh, h) = vc.eval(tau)?;
        let e = strategy::exposures_from_h(s, hh);
        t.beta.push([e.beta_s[0], e.beta_s[1], e.beta_v[0], e.beta_v[1]]);
        t.q.push(strategy::loadings_from_h(s, hh));
        t.hh.push(hh);
        t.h.push(h);
    }
    Ok(t)
}

fn jump_free(s: &ScenarioConfig, what: &str) -> Result<()> {
    if s.jumps.is_some() {
        return Err(Error::Configuration(format!("{what} simulates the jump-free model only")));
    }
    if rho_w(s) != 0.0 {
        return Err(Error::Configuration(format!("{what} needs independent factors")));
    }
    Ok(())
}

/// Robust objective `E^e[X_T^{1−γ}/(1−γ) + ∫ Σ e²/(2Ψ) dt]` of the optimal
/// complete-market investor from `x = 1`, `V(0)`, under the worst-case measure
/// (or the reference measure, which drops the distortion from the dynamics
/// but keeps the penalty). Wealth uses a log-Euler step.
pub fn mc_objective(s: &ScenarioConfig, spec: &SimSpec) -> Result<SimReport> {
    spec.validate()?;
    jump_free(s, "mc_objective")?;
    if spec.scheme != Scheme::FullTruncation {
        return Err(Error::Configuration("wealth simulation uses the full-truncation scheme".into()));
    }
    let vc = ValueCoefficients::complete(s)?;
    let horizon = s.market.horizon;
    let (n, dt) = spec.steps(horizon);
    let table = step_table(&vc, n, dt)?;
    let g1 = 1.0 - s.prefs.gamma;
    let phi = [s.prefs.phi_s[0], s.prefs.phi_s[1], s.prefs.phi_v[0], s.prefs.phi_v[1]];
    let prem = [
        s.factors[0].lambda_risk,
        s.factors[1].lambda_risk,
        s.factors[0].mu_risk,
        s.factors[1].mu_risk,
    ];
    let distort = spec.measure == Measure::WorstCase;
    let sq = dt.sqrt();
    let path = |rng_z: &mut dyn FnMut() -> [f64; 4]| -> Option<f64> {
        let mut v = [s.factors[0].v0, s.factors[1].v0];
        let mut lx = 0.0f64;
        let mut penalty = 0.0;
        for k in 0..n {
            let z = rng_z();
            let vp = [v[0].max(0.0), v[1].max(0.0)];
            let sv = [vp[0].sqrt(), vp[1].sqrt()];
            let q = &table.q[k];
            let e = [q.q_s[0] * sv[0], q.q_s[1] * sv[1], q.q_v[0] * sv[0], q.q_v[1] * sv[1]];
            let b = &table.beta[k];
            // penalty Σ e²(1−γ)J/(2φ) with J at the current state
            let j_now = (g1 * lx).exp() / g1 * (table.hh[k][0] * vp[0] + table.hh[k][1] * vp[1] + table.h[k]).exp();
            for l in 0..4 {
                if phi[l] > 0.0 {
                    penalty += e[l] * e[l] * g1 * j_now / (2.0 * phi[l]) * dt;
                }
            }
            let mut drift = s.market.r;
            let mut diff = 0.0;
            let mut var = 0.0;
            for l in 0..4 {
                let vj = vp[l % 2];
                drift += b[l] * prem[l] * vj;
                if distort {
                    drift -= b[l] * sv[l % 2] * e[l];
                }
                diff += b[l] * sv[l % 2] * z[l];
                var += b[l] * b[l] * vj;
            }
            lx += (drift - 0.5 * var) * dt + diff * sq;
            let shift = if distort {
                [0, 1].map(|j| {
                    let f = &s.factors[j];
                    -f.sigma_v * sv[j] * (f.rho * e[j] + f.rho_bar() * e[2 + j])
                })
            } else {
                [0.0; 2]
            };
            step_factors(s, &mut v, dt, &z, shift);
        }
        let terminal = (g1 * lx).exp() / g1;
        let out = terminal + penalty;
        out.is_finite().then_some(out)
    };
    let units: Vec<(f64, usize)> = if spec.pairs() {
        (0..spec.n_paths / 2)
            .into_par_iter()
            .map(|p| {
                let mut rng = stream(spec.seed, p);
                let mut draws = Vec::with_capacity(n);
                let a = path(&mut || {
                    let z = noises(&mut rng, 0.0);
                    draws.push(z);
                    z
                });
                let mut it = draws.into_iter();
                let b = path(&mut || flip(it.next().expect("one draw per step"), -1.0));
                match (a, b) {
                    (Some(a), Some(b)) => (0.5 * (a + b), 0),
                    (Some(x), None) | (None, Some(x)) => (x, 1),
                    (None, None) => (f64::NAN, 2),
                }
            })
            .collect()
    } else {
        (0..spec.n_paths)
            .into_par_iter()
            .map(|p| {
                let mut rng = stream(spec.seed, p);
                match path(&mut || noises(&mut rng, 0.0)) {
                    Some(x) => (x, 0),
                    None => (f64::NAN, 1),
                }
            })
            .collect()
    };
    let flagged: usize = units.iter().map(|u| u.1).sum();
    if flagged as f64 > 1e-3 * spec.n_paths as f64 {
        return Err(Error::WealthExhausted {
            flagged,
            total: spec.n_paths,
        });
    }
    let values: Vec<f64> = units.iter().map(|u| u.0).filter(|x| x.is_finite()).collect();
    let (estimate, stderr) = mean_stderr(&values);
    Ok(SimReport {
        quantity: "objective".into(),
        estimate,
        stderr,
        n_paths: spec.n_paths,
        dt,
        seed: spec.seed,
        scheme: spec.scheme,
        flagged,
    })
}

/// `ξ_1(T) = ln dP^e/dP` on one path, simulated under `P` (`worst = false`)
/// or under `P^e`.
fn log_ratio_path(
    s: &ScenarioConfig,
    loadings: &DistortionLoadings,
    n: usize,
    dt: f64,
    worst: bool,
    next: &mut dyn FnMut() -> [f64; 4],
) -> f64 {
    let horizon = s.market.horizon;
    let sq = dt.sqrt();
    let mut v = [s.factors[0].v0, s.factors[1].v0];
    let mut xi = 0.0;
    for k in 0..n {
        let z = next();
        let q = loadings.at(horizon - k as f64 * dt);
        let sv = [v[0].max(0.0).sqrt(), v[1].max(0.0).sqrt()];
        let e = [q.q_s[0] * sv[0], q.q_s[1] * sv[1], q.q_v[0] * sv[0], q.q_v[1] * sv[1]];
        let e2: f64 = e.iter().map(|x| x * x).sum();
        let dw: f64 = (0..4).map(|l| e[l] * z[l]).sum::<f64>() * sq;
        // under P: dξ = −e·dW − ½|e|²dt; under P^e: dξ = −e·dW̃ + ½|e|²dt
        let sign = if worst { 1.0 } else { -1.0 };
        xi += -dw + sign * 0.5 * e2 * dt;
        let shift = if worst {
            [0, 1].map(|j| {
                let f = &s.factors[j];
                -f.sigma_v * sv[j] * (f.rho * e[j] + f.rho_bar() * e[2 + j])
            })
        } else {
            [0.0; 2]
        };
        step_factors(s, &mut v, dt, &z, shift);
    }
    xi
}

/// `½P̂(ξ_1 > 0 | P) + ½P̂(ξ_1 < 0 | P^e)` with ties counted as ½.
pub fn mc_detection_error(s: &ScenarioConfig, loadings: &DistortionLoadings, spec: &SimSpec) -> Result<SimReport> {
    spec.validate()?;
    jump_free(s, "mc_detection_error")?;
    if spec.scheme != Scheme::FullTruncation {
        return Err(Error::Configuration("log-ratio simulation uses the full-truncation scheme".into()));
    }
    let (n, dt) = spec.steps(s.market.horizon);
    let score = |xi: f64, worst: bool| -> f64 {
        let wrong = if worst { xi < 0.0 } else { xi > 0.0 };
        if xi == 0.0 {
            0.5
        } else if wrong {
            1.0
        } else {
            0.0
        }
    };
    // stream 2p under P, 2p + 1 under P^e
    let unit = |p: usize, worst: bool| -> f64 {
        let mut rng = stream(spec.seed, 2 * p + worst as usize);
        if spec.pairs() {
            let mut draws = Vec::with_capacity(n);
            let a = log_ratio_path(s, loadings, n, dt, worst, &mut || {
                let z = noises(&mut rng, 0.0);
                draws.push(z);
                z
            });
            let mut it = draws.into_iter();
            let b = log_ratio_path(s, loadings, n, dt, worst, &mut || flip(it.next().expect("one draw per step"), -1.0));
            0.5 * (score(a, worst) + score(b, worst))
        } else {
            score(log_ratio_path(s, loadings, n, dt, worst, &mut || noises(&mut rng, 0.0)), worst)
        }
    };
    let units = if spec.pairs() { spec.n_paths / 2 } else { spec.n_paths };
    let under_p: Vec<f64> = (0..units).into_par_iter().map(|p| unit(p, false)).collect();
    let under_e: Vec<f64> = (0..units).into_par_iter().map(|p| unit(p, true)).collect();
    let (a, sa) = mean_stderr(&under_p);
    let (b, sb) = mean_stderr(&under_e);
    Ok(SimReport {
        quantity: "detection_error".into(),
        estimate: 0.5 * (a + b),
        stderr: 0.5 * (sa * sa + sb * sb).sqrt(),
        n_paths: spec.n_paths,
        dt,
        seed: spec.seed,
        scheme: spec.scheme,
        flagged: 0,
    })
}

/// Sample mean of `Z^e_T = dP^e/dP` simulated under `P`.
pub fn mc_density_mean(s: &ScenarioConfig, loadings: &DistortionLoadings, spec: &SimSpec) -> Result<SimReport> {
    spec.validate()?;
    jump_free(s, "mc_density_mean")?;
    let (n, dt) = spec.steps(s.market.horizon);
    let values: Vec<f64> = (0..spec.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = stream(spec.seed, p);
            log_ratio_path(s, loadings, n, dt, false, &mut || noises(&mut rng, 0.0)).exp()
        })
        .collect();
    let (estimate, stderr) = mean_stderr(&values);
    Ok(SimReport {
        quantity: "density_mean".into(),
        estimate,
        stderr,
        n_paths: spec.n_paths,
        dt,
        seed: spec.seed,
        scheme: Scheme::FullTruncation,
        flagged: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlated::cir_sqrt_moments;
    use crate::detection::{self, DetectionOptions, LoadingMode, MarketRegime};

    fn baseline() -> ScenarioConfig {
        ScenarioConfig::from_toml_str(include_str!("../fixtures/baseline.toml")).unwrap().0
    }

    fn spec(n_paths: usize, dt: f64) -> SimSpec {
        SimSpec {
            n_paths,
            dt,
            seed: 7,
            ..SimSpec::default()
        }
    }

    #[test]
    fn spec_validation() {
        assert!(spec(0, 0.01).validate().is_err());
        assert!(spec(10, 0.02).validate().is_err());
        assert!(spec(11, 0.01).validate().is_err());
        let mut odd = spec(11, 0.01);
        odd.antithetic = false;
        assert!(odd.validate().is_ok());
    }

    #[test]
    fn deterministic_factor_paths() {
        let mut s = baseline();
        for f in &mut s.factors {
            f.sigma_v = 0.0;
        }
        let v = simulate_factors(&s, &spec(4, 1e-3), 2.0).unwrap();
        for j in 0..2 {
            let f = &s.factors[j];
            // Euler on a linear ODE: relative error O(κ dt)
            let exact = f.theta + (f.v0 - f.theta) * (-2.0 * f.kappa).exp();
            assert!((v[0][j] - exact).abs() < 1e-5, "{} {exact}", v[0][j]);
        }
        let mut sp = spec(4, 0.01);
        sp.scheme = Scheme::ExactTransition;
        let v = simulate_factors(&s, &sp, 2.0).unwrap();
        for j in 0..2 {
            let f = &s.factors[j];
            assert!((v[0][j] - f.mean_variance(2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_scheme_mean() {
        let s = baseline();
        let mut sp = spec(20_000, 0.01);
        sp.scheme = Scheme::ExactTransition;
        let v = simulate_factors(&s, &sp, 1.0).unwrap();
        let xs: Vec<f64> = v.iter().map(|p| p[1]).collect();
        let (m, se) = mean_stderr(&xs);
        let target = s.factors[1].mean_variance(1.0);
        assert!((m - target).abs() < 3.0 * se, "{m} {target} {se}");
    }

    #[test]
    fn same_seed_same_ensemble_any_thread_count() {
        let s = baseline();
        let sp = spec(64, 0.01);
        let a = simulate_factors(&s, &sp, 0.5).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| simulate_factors(&s, &sp, 0.5).unwrap());
        assert_eq!(a, b);
        let mut other = sp;
        other.seed = 8;
        assert_ne!(a, simulate_factors(&s, &other, 0.5).unwrap());
    }

    #[test]
    fn cash_only_objective() {
        let mut s = baseline().with_phi([0.0; 2], [0.0; 2]);
        s.market.horizon = 1.0;
        for f in &mut s.factors {
            f.lambda_risk = 0.0;
            f.mu_risk = 0.0;
        }
        let r = mc_objective(&s, &spec(200, 0.01)).unwrap();
        let g1 = 1.0 - s.prefs.gamma;
        let exact = (g1 * s.market.r).exp() / g1;
        assert!((r.estimate - exact).abs() < 1e-12);
    }

    #[test]
    fn objective_matches_value_function_small() {
        let mut s = baseline();
        s.market.horizon = 1.0;
        let mut sp = spec(20_000, 1.0 / 500.0);
        sp.measure = Measure::WorstCase;
        let r = mc_objective(&s, &sp).unwrap();
        let j = ValueCoefficients::complete(&s).unwrap().value(1.0, 1.0, [s.factors[0].v0, s.factors[1].v0]).unwrap();
        assert!(r.within(j, 3.0), "{} ± {} vs {j}", r.estimate, r.stderr);
    }

    #[test]
    fn sqrt_moments_against_series() {
        let s = baseline();
        for f in &s.factors {
            let (m, v) = sqrt_moments_mc(f, 1.0, 100_000, 3).unwrap();
            let (em, ev) = cir_sqrt_moments(f, 1.0).unwrap();
            assert!(m.within(em, 3.0), "{m:?} {em}");
            assert!(v.within(ev, 3.0), "{v:?} {ev}");
        }
    }

    #[test]
    fn zero_distortion_detection_is_half() {
        let s = baseline();
        let zero = DistortionLoadings::Constant(Loadings {
            q_s: [0.0; 2],
            q_v: [0.0; 2],
        });
        let r = mc_detection_error(&s, &zero, &spec(100, 0.01)).unwrap();
        assert_eq!(r.estimate, 0.5);
    }

    #[test]
    fn detection_mc_agrees_with_fourier_small() {
        let s = baseline().with_phi([1.0, 0.0], [1.0, 0.0]);
        let opts = DetectionOptions::default();
        let l = detection::worst_case_loadings(&s, MarketRegime::Complete, LoadingMode::TimeDependent, opts.step).unwrap();
        let fourier = detection::detection_error_with(&s, &l, &opts).unwrap().epsilon;
        let r = mc_detection_error(&s, &l, &spec(10_000, 0.01)).unwrap();
        assert!((r.estimate - fourier).abs() < 0.02, "{} {fourier}", r.estimate);
    }

    #[test]
    fn density_is_a_martingale() {
        let s = baseline().with_phi([1.0, 0.0], [1.0, 0.0]);
        let l = detection::worst_case_loadings(&s, MarketRegime::Complete, LoadingMode::TimeDependent, 1e-3).unwrap();
        let mut sp = spec(20_000, 0.01);
        sp.antithetic = false;
        let r = mc_density_mean(&s, &l, &sp).unwrap();
        assert!(r.within(1.0, 3.0), "{r:?}");
    }

    #[test]
    fn report_csv_layout() {
        let r = SimReport {
            quantity: "objective".into(),
            estimate: -0.25,
            stderr: 1e-4,
            n_paths: 10,
            dt: 0.002,
            seed: 1,
            scheme: Scheme::FullTruncation,
            flagged: 0,
        };
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("quantity,estimate,stderr,n_paths,dt,seed,scheme\nobjective,"));
        assert!(text.trim_end().ends_with(",10,0.002,1,full-truncation"));
    }
}
