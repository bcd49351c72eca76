//! Correlated volatility factors: moment-matched `√V` dynamics and the
//! extended affine value function.
//!
//! `U_j` approximates `√V_j` with deterministic drift `μ^U_j(t)` and
//! volatility `ψ^U_j(t)` chosen so that `E[U_j] = E[√V_j]` and
//! `E[U_j²] = E[V_j]`. The value function is
//! `x^{1−γ}/(1−γ) exp(Σ H^V_j v_j + H^U_j u_j + H^Y u_1u_2 + ĥ)`.
//! Diffusion loadings use `u_j` in place of `√v_j`; after the optimal
//! controls are substituted the HJB is a polynomial in `(v, u)` whose `u_j²`
//! terms are collected with `v_j`, so the ansatz is exact on `u_j² = v_j`.

use nalgebra::{Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::model::{FactorParams, ScenarioConfig};
use crate::ode::{self, DenseGrid, DEFAULT_STEP};
use crate::special::{self, ln_gamma, ln_gamma_ratio, ln_poisson_pmf};
use crate::strategy::{Exposures, WorstCase};

/// `V(t) = c_t · χ²(dof, noncentrality)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CirTransitionParams {
    pub c_t: f64,
    pub dof: f64,
    pub noncentrality: f64,
}

impl CirTransitionParams {
    pub fn new(f: &FactorParams, t: f64) -> Result<Self> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("transition needs t > 0, got {t}")));
        }
        if !(f.sigma_v > 0.0) {
            return Err(Error::Domain("transition law needs sigma > 0".into()));
        }
        let s2 = f.sigma_v * f.sigma_v;
        let em = -(-f.kappa * t).exp_m1();
        Ok(Self {
            c_t: s2 * em / (4.0 * f.kappa),
            dof: 4.0 * f.kappa * f.theta / s2,
            noncentrality: 4.0 * f.kappa * (-f.kappa * t).exp() * f.v0 / (s2 * em),
        })
    }

    pub fn mean(&self) -> f64 {
        self.c_t * (self.dof + self.noncentrality)
    }
}

/// `E[√V(t)]` and `Var[√V(t)]` from the Poisson-mixture series
/// `√(2c) Σ_k Poisson(k; λ/2) Γ((d+1)/2 + k)/Γ(d/2 + k)`.
pub fn cir_sqrt_moments(f: &FactorParams, t: f64) -> Result<(f64, f64)> {
    if t == 0.0 {
        return Ok((f.v0.sqrt(), 0.0));
    }
    if f.sigma_v == 0.0 {
        return Ok((f.mean_variance(t).sqrt(), 0.0));
    }
    let p = CirTransitionParams::new(f, t)?;
    let half = 0.5 * p.noncentrality;
    let hd = 0.5 * p.dof;
    let ln_term = |k: usize| ln_poisson_pmf(k, half) + ln_gamma_ratio(hd + k as f64, 0.5);
    let ratio = |k: usize| {
        let kf = k as f64;
        half / (kf + 1.0) * (hd + 0.5 + kf) / (hd + kf)
    };
    let (ln_mode, sum) = special::sum_positive_series(ln_term, ratio, half.floor() as usize)?;
    let mean = (2.0 * p.c_t).sqrt() * (ln_mode + sum.ln()).exp();
    let var = (p.mean() - mean * mean).max(0.0);
    Ok((mean, var))
}

/// `E[√V(t)] = √(2c) Γ((d+1)/2) F̃(−½, d/2, −λ/2)`.
pub fn sqrt_mean_kummer(f: &FactorParams, t: f64) -> Result<f64> {
    let p = CirTransitionParams::new(f, t)?;
    let lg = ln_gamma(0.5 * (p.dof + 1.0));
    Ok((2.0 * p.c_t).sqrt() * special::hyp1f1_regularized_scaled(-0.5, 0.5 * p.dof, -0.5 * p.noncentrality, lg)?)
}

/// One point of the `U_j` schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftVol {
    pub mu_u: f64,
    pub psi_u: f64,
}

/// What to do when the variance of `√V_j` decreases, so that no real `ψ^U_j`
/// matches both moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PsiPolicy {
    /// Model-breakdown error.
    #[default]
    Strict,
    /// Use `ψ^U_j = 0`; the second moment is then no longer matched.
    Clamp,
}

/// `μ^U_j(t) = d/dt E[√V_j(t)]` and `ψ^U_j(t)² = d/dt E[V_j] − 2 E[√V_j] μ^U_j`.
pub fn drift_vol(f: &FactorParams, t: f64) -> Result<DriftVol> {
    drift_vol_with(f, t, PsiPolicy::Strict)
}

pub fn drift_vol_with(f: &FactorParams, t: f64, policy: PsiPolicy) -> Result<DriftVol> {
    if !(f.v0 > 0.0) {
        return Err(Error::param("v0", "the sqrt-variance approximation needs v0 > 0"));
    }
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("t = {t} must be >= 0")));
    }
    let s2 = f.sigma_v * f.sigma_v;
    // beyond λ ≈ 1e8 the ψ² difference cancels to noise; the t → 0 limit is
    // accurate there to about 1e-5
    let tiny = f.sigma_v > 0.0 && t > 0.0 && CirTransitionParams::new(f, t)?.noncentrality > 1e8;
    if t == 0.0 || tiny {
        // Itô drift and volatility of √V at the initial state
        return Ok(DriftVol {
            mu_u: (f.kappa * (f.theta - f.v0) - 0.25 * s2) / (2.0 * f.v0.sqrt()),
            psi_u: 0.5 * f.sigma_v,
        });
    }
    let dmean_v = f.kappa * (f.theta - f.mean_variance(t));
    if f.sigma_v == 0.0 {
        let m = f.mean_variance(t);
        return Ok(DriftVol {
            mu_u: dmean_v / (2.0 * m.sqrt()),
            psi_u: 0.0,
        });
    }
    let p = CirTransitionParams::new(f, t)?;
    let lg = ln_gamma(0.5 * (p.dof + 1.0));
    let z = -0.5 * p.noncentrality;
    let f1 = special::hyp1f1_regularized_scaled(-0.5, 0.5 * p.dof, z, lg)?;
    let f2 = special::hyp1f1_regularized_scaled(0.5, 0.5 * p.dof + 1.0, z, lg)?;
    let ekt = (-f.kappa * t).exp();
    let em = -(-f.kappa * t).exp_m1();
    let sc = (2.0 * p.c_t).sqrt();
    let mu_u = s2 * ekt / (4.0 * sc) * f1 - sc * f.kappa * f.kappa * f.v0 * ekt / (s2 * em * em) * f2;
    let mean = sc * f1;
    let psi2 = dmean_v - 2.0 * mean * mu_u;
    if psi2 < -1e-12 && policy == PsiPolicy::Strict {
        return Err(Error::ModelBreakdown { t, value: psi2 });
    }
    Ok(DriftVol {
        mu_u,
        psi_u: psi2.max(0.0).sqrt(),
    })
}

/// `(μ^U, ψ^U)` for both factors sampled at `t = k·spacing`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftVolSchedule {
    pub spacing: f64,
    pub points: Vec<[DriftVol; 2]>,
    /// Per factor, the first sampled time at which `ψ²` was clamped.
    pub clamped_from: [Option<f64>; 2],
}

impl DriftVolSchedule {
    pub fn build(s: &ScenarioConfig, horizon: f64, spacing_hint: f64, policy: PsiPolicy) -> Result<Self> {
        let n = ode::step_count(horizon, spacing_hint);
        let spacing = horizon / n as f64;
        let mut clamped_from = [None; 2];
        let mut points = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let t = (k as f64 * spacing).min(horizon);
            let mut pair = [DriftVol { mu_u: 0.0, psi_u: 0.0 }; 2];
            for j in 0..2 {
                pair[j] = drift_vol_with(&s.factors[j], t, policy)?;
                if clamped_from[j].is_none() && pair[j].psi_u == 0.0 && drift_vol(&s.factors[j], t).is_err() {
                    clamped_from[j] = Some(t);
                }
            }
            points.push(pair);
        }
        Ok(Self {
            spacing,
            points,
            clamped_from,
        })
    }

    pub fn at(&self, t: f64) -> [DriftVol; 2] {
        let x = (t / self.spacing).clamp(0.0, (self.points.len() - 1) as f64);
        let i = (x.floor() as usize).min(self.points.len() - 2);
        let w = x - i as f64;
        let (a, b) = (&self.points[i], &self.points[i + 1]);
        let mix = |p: f64, q: f64| p + w * (q - p);
        [0, 1].map(|j| DriftVol {
            mu_u: mix(a[j].mu_u, b[j].mu_u),
            psi_u: mix(a[j].psi_u, b[j].psi_u),
        })
    }
}

/// Linear polynomial `c0 + c1 u1 + c2 u2`.
type Lin = [f64; 3];
/// Quadratic polynomial over `[1, u1, u2, u1², u1u2, u2²]`.
type Quad = [f64; 6];

fn lin_mul(a: &Lin, b: &Lin) -> Quad {
    [
        a[0] * b[0],
        a[0] * b[1] + a[1] * b[0],
        a[0] * b[2] + a[2] * b[0],
        a[1] * b[1],
        a[1] * b[2] + a[2] * b[1],
        a[2] * b[2],
    ]
}

fn quad_add(acc: &mut Quad, q: &Quad, scale: f64) {
    for i in 0..6 {
        acc[i] += scale * q[i];
    }
}

fn lin_eval(a: &Lin, u: [f64; 2]) -> f64 {
    a[0] + a[1] * u[0] + a[2] * u[1]
}

/// Noise order: `W_1, W_2, Z_1, Z_2`.
fn noise_correlation(rho_w: f64) -> Matrix4<f64> {
    let mut q = Matrix4::identity();
    q[(0, 1)] = rho_w;
    q[(1, 0)] = rho_w;
    q
}

/// Optimal wealth loadings `w = (γQ + Φ)^{-1}[m + (Q − Φ/(1−γ))k]` and worst
/// case `e = Φ(w + k/(1−γ))` on each noise, as linear polynomials in `u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlPolys {
    pub w: [Lin; 4],
    pub e: [Lin; 4],
    /// State-sensitivity loadings `k` (per unit `J`).
    pub k: [Lin; 4],
    /// Premium loadings `m`.
    pub m: [Lin; 4],
}

#[derive(Debug, Clone)]
struct Structure {
    q: Matrix4<f64>,
    phi: [f64; 4],
    solve: Matrix4<f64>,
    g: f64,
    g1: f64,
}

impl Structure {
    fn new(s: &ScenarioConfig, rho_w: f64) -> Result<Self> {
        let q = noise_correlation(rho_w);
        let p = &s.prefs;
        let phi = [p.phi_s[0], p.phi_s[1], p.phi_v[0], p.phi_v[1]];
        let a = q * p.gamma + Matrix4::from_diagonal(&Vector4::from(phi));
        let solve = a
            .try_inverse()
            .ok_or_else(|| Error::Numeric("γQ + Φ is singular".into()))?;
        Ok(Self {
            q,
            phi,
            solve,
            g: p.gamma,
            g1: 1.0 - p.gamma,
        })
    }
}

/// Coefficient state `[H^V_1, H^V_2, H^U_1, H^U_2, H^Y, ĥ]`.
fn control_polys(s: &ScenarioConfig, st: &Structure, y: &[f64], dv: &[DriftVol; 2]) -> ControlPolys {
    let (hv, hu, hy) = ([y[0], y[1]], [y[2], y[3]], y[4]);
    let mut m = [[0.0; 3]; 4];
    let mut k = [[0.0; 3]; 4];
    for j in 0..2 {
        let f = &s.factors[j];
        let other = 1 - j;
        // K_j = ∂_{u_j} exponent = H^U_j + H^Y u_other
        let mut kj: Lin = [hu[j], 0.0, 0.0];
        kj[1 + other] = hy;
        let rb = f.rho_bar();
        for (noise, load, prem) in [(j, f.rho, f.lambda_risk), (2 + j, rb, f.mu_risk)] {
            m[noise][1 + j] = prem;
            k[noise][1 + j] += f.sigma_v * load * hv[j];
            for i in 0..3 {
                k[noise][i] += dv[j].psi_u * load * kj[i];
            }
        }
    }
    let mut w = [[0.0; 3]; 4];
    let mut e = [[0.0; 3]; 4];
    for i in 0..3 {
        let mv = Vector4::from([m[0][i], m[1][i], m[2][i], m[3][i]]);
        let kv = Vector4::from([k[0][i], k[1][i], k[2][i], k[3][i]]);
        let phi_k = Vector4::from([0, 1, 2, 3].map(|l| st.phi[l] * kv[l] / st.g1));
        let wv = st.solve * (mv + st.q * kv - phi_k);
        for l in 0..4 {
            w[l][i] = wv[l];
            e[l][i] = st.phi[l] * (wv[l] + kv[l] / st.g1);
        }
    }
    ControlPolys { w, e, k, m }
}

/// `d/dτ` of the coefficient state at calendar time `t`.
fn affine_rhs(s: &ScenarioConfig, st: &Structure, rho_w: f64, y: &[f64], dv: &[DriftVol; 2], out: &mut [f64]) {
    let c = control_polys(s, st, y, dv);
    let (g, g1) = (st.g, st.g1);
    let (hv, hu, hy) = ([y[0], y[1]], [y[2], y[3]], y[4]);
    let mut p: Quad = [0.0; 6];
    p[0] += g1 * s.market.r;
    let mut pv = [0.0; 2];
    for j in 0..2 {
        let f = &s.factors[j];
        p[0] += f.kappa * f.theta * hv[j];
        pv[j] -= f.kappa * hv[j];
        // μ^U_j (H^U_j + H^Y u_other)
        p[0] += dv[j].mu_u * hu[j];
        p[1 + (1 - j)] += dv[j].mu_u * hy;
    }
    // ½ kᵀQk + H^Y cov(U_1, U_2)
    for a in 0..4 {
        for b in 0..4 {
            let qab = st.q[(a, b)];
            if qab != 0.0 {
                quad_add(&mut p, &lin_mul(&c.k[a], &c.k[b]), 0.5 * qab);
            }
        }
    }
    let rho_u = rho_w * s.factors[0].rho * s.factors[1].rho;
    p[0] += hy * dv[0].psi_u * dv[1].psi_u * rho_u;
    // g1 m·w − g1 w·e − ½ g1 γ wᵀQw + g1 wᵀQk − k·e + g1 Σ e²/(2φ)
    for a in 0..4 {
        quad_add(&mut p, &lin_mul(&c.m[a], &c.w[a]), g1);
        quad_add(&mut p, &lin_mul(&c.w[a], &c.e[a]), -g1);
        quad_add(&mut p, &lin_mul(&c.k[a], &c.e[a]), -1.0);
        if st.phi[a] > 0.0 {
            quad_add(&mut p, &lin_mul(&c.e[a], &c.e[a]), g1 / (2.0 * st.phi[a]));
        }
        for b in 0..4 {
            let qab = st.q[(a, b)];
            if qab != 0.0 {
                quad_add(&mut p, &lin_mul(&c.w[a], &c.w[b]), -0.5 * g1 * g * qab);
                quad_add(&mut p, &lin_mul(&c.w[a], &c.k[b]), g1 * qab);
            }
        }
    }
    out[0] = pv[0] + p[3];
    out[1] = pv[1] + p[5];
    out[2] = p[1];
    out[3] = p[2];
    out[4] = p[4];
    out[5] = p[0];
}

/// Coefficients `H^V_j`, `H^U_j`, `H^Y`, `ĥ` on `τ ∈ [0, T]`.
#[derive(Debug, Clone)]
pub struct AffineCoeffs {
    scenario: ScenarioConfig,
    rho_w: f64,
    structure: Structure,
    schedule: DriftVolSchedule,
    grid: DenseGrid,
    pub warnings: Vec<String>,
}

pub fn solve_affine_system(s: &ScenarioConfig) -> Result<AffineCoeffs> {
    solve_affine_system_with(s, DEFAULT_STEP, PsiPolicy::Strict)
}

pub fn solve_affine_system_with(s: &ScenarioConfig, step: f64, policy: PsiPolicy) -> Result<AffineCoeffs> {
    let rho_w = s
        .correlation
        .ok_or_else(|| Error::Configuration("correlated factors need a [correlation] section".into()))?
        .rho_w;
    let report = s.validate()?;
    let horizon = s.market.horizon;
    let structure = Structure::new(s, rho_w)?;
    let schedule = DriftVolSchedule::build(s, horizon, 0.5 * step, policy)?;
    let mut warnings = report.warnings;
    for (j, t) in schedule.clamped_from.iter().enumerate() {
        if let Some(t) = t {
            warnings.push(format!("factor {}: variance of sqrt(V) decreases from t = {t:.4}; psi clamped at 0", j + 1));
        }
    }
    let grid = DenseGrid::solve(
        |tau, y: &[f64], d: &mut [f64]| {
            let dv = schedule.at(horizon - tau);
            affine_rhs(s, &structure, rho_w, y, &dv, d)
        },
        &[0.0; 6],
        0.0,
        horizon,
        step,
    )?;
    Ok(AffineCoeffs {
        scenario: *s,
        rho_w,
        structure,
        schedule,
        grid,
        warnings,
    })
}

impl AffineCoeffs {
    pub fn scenario(&self) -> &ScenarioConfig {
        &self.scenario
    }

    pub fn rho_w(&self) -> f64 {
        self.rho_w
    }

    pub fn schedule(&self) -> &DriftVolSchedule {
        &self.schedule
    }

    fn state(&self, tau: f64) -> Result<[f64; 6]> {
        let horizon = self.scenario.market.horizon;
        if !(tau >= 0.0 && tau <= horizon * (1.0 + 1e-12)) {
            return Err(Error::Domain(format!("tau = {tau} outside [0, {horizon}]")));
        }
        let mut y = [0.0; 6];
        if tau > 0.0 {
            self.grid.eval_into(tau.min(horizon), &mut y);
        }
        Ok(y)
    }

    /// `(H^V, H^U, H^Y, ĥ)` at τ.
    pub fn eval(&self, tau: f64) -> Result<([f64; 2], [f64; 2], f64, f64)> {
        let y = self.state(tau)?;
        Ok(([y[0], y[1]], [y[2], y[3]], y[4], y[5]))
    }

    pub fn exponent(&self, tau: f64, v: [f64; 2], u: [f64; 2]) -> Result<f64> {
        let (hv, hu, hy, h) = self.eval(tau)?;
        Ok(hv[0] * v[0] + hv[1] * v[1] + hu[0] * u[0] + hu[1] * u[1] + hy * u[0] * u[1] + h)
    }

    pub fn value(&self, t: f64, x: f64, v: [f64; 2], u: [f64; 2]) -> Result<f64> {
        if !(x > 0.0) {
            return Err(Error::Domain(format!("wealth must be positive, got {x}")));
        }
        let g1 = 1.0 - self.scenario.prefs.gamma;
        Ok(x.powf(g1) / g1 * self.exponent(self.scenario.market.horizon - t, v, u)?.exp())
    }

    /// Control polynomials at calendar time `t`.
    pub fn control_polys(&self, t: f64) -> Result<ControlPolys> {
        let y = self.state(self.scenario.market.horizon - t)?;
        Ok(control_polys(&self.scenario, &self.structure, &y, &self.schedule.at(t)))
    }
}

/// Exposure and worst-case coefficient triples at one time:
/// `β^S_j = a^j_1 + a^j_2/u_j + a^j_3 u_other/u_j`, likewise `b` for `β^V_j`;
/// `e^S_j = g^j_1 u_1 + g^j_2 u_2 + g^j_3`, likewise `k` for `e^V_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxControls {
    pub a: [[f64; 3]; 2],
    pub b: [[f64; 3]; 2],
    pub g: [[f64; 3]; 2],
    pub k: [[f64; 3]; 2],
}

impl ApproxControls {
    pub fn from_polys(c: &ControlPolys) -> Self {
        let ratio = |p: &Lin, j: usize| [p[1 + j], p[0], p[1 + (1 - j)]];
        let affine = |p: &Lin| [p[1], p[2], p[0]];
        Self {
            a: [ratio(&c.w[0], 0), ratio(&c.w[1], 1)],
            b: [ratio(&c.w[2], 0), ratio(&c.w[3], 1)],
            g: [affine(&c.e[0]), affine(&c.e[1])],
            k: [affine(&c.e[2]), affine(&c.e[3])],
        }
    }

    pub fn exposures(&self, u: [f64; 2]) -> Exposures {
        let beta = |t: &[f64; 3], j: usize| t[0] + t[1] / u[j] + t[2] * u[1 - j] / u[j];
        Exposures {
            beta_s: [beta(&self.a[0], 0), beta(&self.a[1], 1)],
            beta_v: [beta(&self.b[0], 0), beta(&self.b[1], 1)],
            beta_n: None,
        }
    }

    pub fn worst_case(&self, u: [f64; 2]) -> WorstCase {
        let e = |t: &[f64; 3]| t[0] * u[0] + t[1] * u[1] + t[2];
        WorstCase {
            e_s: [e(&self.g[0]), e(&self.g[1])],
            e_v: [e(&self.k[0]), e(&self.k[1])],
            v: [u[0] * u[0], u[1] * u[1]],
        }
    }
}

/// Approximate optimal exposures and worst case at `(t, u_1, u_2)`.
pub fn approx_controls(affine: &AffineCoeffs, t: f64, u: [f64; 2]) -> Result<(Exposures, WorstCase)> {
    if !(u[0] > 0.0 && u[1] > 0.0) {
        return Err(Error::Domain(format!("u must be positive, got ({}, {})", u[0], u[1])));
    }
    let c = ApproxControls::from_polys(&affine.control_polys(t)?);
    Ok((c.exposures(u), c.worst_case(u)))
}

/// Wealth and worst-case loadings evaluated at `u` (per noise `W_1, W_2, Z_1, Z_2`).
pub fn loadings_at(c: &ControlPolys, u: [f64; 2]) -> ([f64; 4], [f64; 4]) {
    ([0, 1, 2, 3].map(|l| lin_eval(&c.w[l], u)), [0, 1, 2, 3].map(|l| lin_eval(&c.e[l], u)))
}

pub mod oracle {
    //! Finite-difference HJB for the correlated model in the state
    //! `(x, v_1, v_2, u_1, u_2)`, written term by term from the dynamics.

    use super::*;

    const W1: [f64; 4] = [1.0 / 12.0, -2.0 / 3.0, 2.0 / 3.0, -1.0 / 12.0];
    const W2: [f64; 5] = [-1.0 / 12.0, 4.0 / 3.0, -5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0];
    const O1: [f64; 4] = [-2.0, -1.0, 1.0, 2.0];

    /// Controls: `β` and `e` per noise `W_1, W_2, Z_1, Z_2`.
    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct Controls {
        pub beta: [f64; 4],
        pub e: [f64; 4],
    }

    pub struct Point {
        pub t: f64,
        pub x: f64,
        pub v: [f64; 2],
        pub u: [f64; 2],
    }

    struct Derivs {
        j: f64,
        j_t: f64,
        grad: [f64; 5],
        hess: [[f64; 5]; 5],
    }

    fn derivs(a: &AffineCoeffs, p: &Point) -> Derivs {
        let f = |t: f64, z: [f64; 5]| a.value(t, z[0], [z[1], z[2]], [z[3], z[4]]).unwrap_or(f64::NAN);
        let z0 = [p.x, p.v[0], p.v[1], p.u[0], p.u[1]];
        let hs = [1e-3 * p.x, 1e-3 * p.v[0], 1e-3 * p.v[1], 1e-3 * p.u[0], 1e-3 * p.u[1]];
        let shift = |z: [f64; 5], i: usize, d: f64| {
            let mut z = z;
            z[i] += d;
            z
        };
        let d1 = |g: &dyn Fn(f64) -> f64, h: f64| O1.iter().zip(W1).map(|(&o, w)| w * g(o * h)).sum::<f64>() / h;
        let d2 = |g: &dyn Fn(f64) -> f64, h: f64| {
            (-2..=2).zip(W2).map(|(o, w)| w * g(o as f64 * h)).sum::<f64>() / (h * h)
        };
        let mut grad = [0.0; 5];
        let mut hess = [[0.0; 5]; 5];
        for i in 0..5 {
            grad[i] = d1(&|d| f(p.t, shift(z0, i, d)), hs[i]);
            hess[i][i] = d2(&|d| f(p.t, shift(z0, i, d)), hs[i]);
            for k in 0..i {
                let v = d1(&|di| d1(&|dk| f(p.t, shift(shift(z0, i, di), k, dk)), hs[k]), hs[i]);
                hess[i][k] = v;
                hess[k][i] = v;
            }
        }
        let ht = 1e-3;
        Derivs {
            j: f(p.t, z0),
            j_t: d1(&|d| f(p.t + d, z0), ht),
            grad,
            hess,
        }
    }

    fn terms(a: &AffineCoeffs, p: &Point, d: &Derivs, c: &Controls) -> Vec<f64> {
        let s = a.scenario();
        let g1 = 1.0 - s.prefs.gamma;
        let q = noise_correlation(a.rho_w());
        let dv = a.schedule().at(p.t);
        let sv = [p.v[0].sqrt(), p.v[1].sqrt()];
        let sqrt_v = |l: usize| sv[l % 2];
        let f = &s.factors;
        let phi = [s.prefs.phi_s[0], s.prefs.phi_s[1], s.prefs.phi_v[0], s.prefs.phi_v[1]];
        let prem = [f[0].lambda_risk, f[1].lambda_risk, f[0].mu_risk, f[1].mu_risk];
        let load = |l: usize| if l < 2 { f[l].rho } else { f[l - 2].rho_bar() };
        // diffusion loadings of each state on each noise
        let mut lmat = [[0.0; 4]; 5];
        for l in 0..4 {
            let j = l % 2;
            lmat[0][l] = p.x * c.beta[l] * sqrt_v(l);
            lmat[1 + j][l] = f[j].sigma_v * load(l) * sv[j];
            lmat[3 + j][l] = dv[j].psi_u * load(l);
        }
        let mut out = vec![d.j_t, p.x * s.market.r * d.grad[0]];
        for l in 0..4 {
            let j = l % 2;
            out.push(p.x * c.beta[l] * (prem[l] * p.v[j] - c.e[l] * sqrt_v(l)) * d.grad[0]);
            out.push(-f[j].sigma_v * load(l) * sv[j] * c.e[l] * d.grad[1 + j]);
            out.push(-dv[j].psi_u * load(l) * c.e[l] * d.grad[3 + j]);
            out.push(if phi[l] > 0.0 { g1 * d.j * c.e[l] * c.e[l] / (2.0 * phi[l]) } else { 0.0 });
        }
        for j in 0..2 {
            out.push(f[j].kappa * (f[j].theta - p.v[j]) * d.grad[1 + j]);
            out.push(dv[j].mu_u * d.grad[3 + j]);
        }
        for i in 0..5 {
            for k in 0..5 {
                let mut cov = 0.0;
                for l in 0..4 {
                    for m in 0..4 {
                        cov += lmat[i][l] * q[(l, m)] * lmat[k][m];
                    }
                }
                if cov != 0.0 {
                    out.push(0.5 * cov * d.hess[i][k]);
                }
            }
        }
        out
    }

    /// `|Σ terms| / Σ |terms|` with the approximate optimal controls.
    pub fn relative_residual(a: &AffineCoeffs, p: &Point) -> Result<f64> {
        let c = optimal(a, p)?;
        let d = derivs(a, p);
        let t = terms(a, p, &d, &c);
        Ok(t.iter().sum::<f64>().abs() / t.iter().map(|x| x.abs()).sum::<f64>())
    }

    /// Optimal controls at the point, per noise.
    pub fn optimal(a: &AffineCoeffs, p: &Point) -> Result<Controls> {
        let (e, w) = approx_controls(a, p.t, p.u)?;
        Ok(Controls {
            beta: [e.beta_s[0], e.beta_s[1], e.beta_v[0], e.beta_v[1]],
            e: [w.e_s[0], w.e_s[1], w.e_v[0], w.e_v[1]],
        })
    }

    /// Relative central-difference gradient with respect to every `β` and
    /// every `e` whose ambiguity parameter is positive.
    pub fn foc_gradient(a: &AffineCoeffs, p: &Point) -> Result<Vec<f64>> {
        let c = optimal(a, p)?;
        let d = derivs(a, p);
        let base = terms(a, p, &d, &c);
        let scale: f64 = base.iter().map(|x| x.abs()).sum();
        let s = a.scenario();
        let phi = [s.prefs.phi_s[0], s.prefs.phi_s[1], s.prefs.phi_v[0], s.prefs.phi_v[1]];
        let h = 1e-5;
        let mut out = Vec::new();
        for idx in 0..8 {
            if idx >= 4 && !(phi[idx - 4] > 0.0) {
                continue;
            }
            let at = |sign: f64| {
                let mut cc = c;
                if idx < 4 {
                    cc.beta[idx] += sign * h;
                } else {
                    cc.e[idx - 4] += sign * h;
                }
                terms(a, p, &d, &cc).iter().sum::<f64>()
            };
            out.push((at(1.0) - at(-1.0)) / (2.0 * h) / scale);
        }
        Ok(out)
    }

    /// Deterministic sample of `n³` states on `u_j = √v_j`.
    pub fn manifold_states(s: &ScenarioConfig, n: usize) -> Vec<Point> {
        let horizon = s.market.horizon;
        let ts: Vec<f64> = (0..n).map(|k| horizon * (0.05 + 0.85 * k as f64 / (n - 1).max(1) as f64)).collect();
        let vs: Vec<f64> = (0..n).map(|k| 0.005 + 0.1 * k as f64 / (n - 1).max(1) as f64).collect();
        let mut out = Vec::new();
        for &t in &ts {
            for &a in &vs {
                for &b in &vs {
                    out.push(Point {
                        t,
                        x: 1.0,
                        v: [a, b],
                        u: [a.sqrt(), b.sqrt()],
                    });
                }
            }
        }
        out
    }
}
