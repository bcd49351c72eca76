//! Riccati coefficients and the exponential-affine value function.
//!
//! In every regime the indirect utility has the form
//!
//! ```text
//! J(t, x, v1, v2) = x^{1−γ}/(1−γ) · exp(H1(τ) v1 + H2(τ) v2 + h(τ)),   τ = T − t
//! ```
//!
//! where each `H_j` solves a scalar Riccati equation `H' = aH + bH² + c`,
//! `H(0) = 0`, and `h' = κ1θ1 H1 + κ2θ2 H2 + (1−γ) r`, `h(0) = 0`.

use crate::error::{Error, Result};
use crate::model::{FactorParams, ScenarioConfig};
use crate::ode::{self, DenseGrid, DEFAULT_STEP};
use crate::quad;

/// Coefficients of `H' = aH + bH² + c` together with `d = √(a² − 4bc)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl RiccatiCoeffs {
    /// Fails with an explosive-solution error when `a² − 4bc < 0`.
    /// `factor` is 0-based and only used for the error message.
    pub fn new(a: f64, b: f64, c: f64, factor: usize) -> Result<Self> {
        let disc = a * a - 4.0 * b * c;
        if disc < 0.0 {
            // tolerate round-off around a double root
            if disc > -1e-14 * (a * a).max((4.0 * b * c).abs()) {
                return Ok(Self { a, b, c, d: 0.0 });
            }
            return Err(Error::ExplosiveSolution {
                factor: factor + 1,
                discriminant: disc,
            });
        }
        Ok(Self { a, b, c, d: disc.sqrt() })
    }

    pub fn discriminant(&self) -> f64 {
        self.a * self.a - 4.0 * self.b * self.c
    }

    pub fn rhs(&self, h: f64) -> f64 {
        self.a * h + self.b * h * h + self.c
    }
}

/// `(1 − e^{−dτ})/d`, continuous at `d = 0`.
fn decay_integral(d: f64, tau: f64) -> f64 {
    let x = d * tau;
    if x.abs() < 1e-8 {
        tau * (1.0 - 0.5 * x)
    } else {
        -(-x).exp_m1() / d
    }
}

/// Closed-form Riccati solution `2c(1−e^{−dτ}) / (2d + (a+d)(e^{−dτ}−1))`.
#[allow(non_snake_case)]
pub fn closed_form_H(k: &RiccatiCoeffs, tau: f64) -> Result<f64> {
    if tau == 0.0 || k.c == 0.0 {
        return Ok(0.0);
    }
    let e = decay_integral(k.d, tau);
    let den = 2.0 - (k.a + k.d) * e;
    if den < 1e-14 {
        return Err(Error::RiccatiPole { tau });
    }
    Ok(2.0 * k.c * e / den)
}

/// `∫_0^τ H` from the logarithmic antiderivative. Only a cross-check for the
/// quadrature; `None` when `b` or `d` is too small for the formula.
#[allow(non_snake_case)]
pub fn log_integral_H(k: &RiccatiCoeffs, tau: f64) -> Option<f64> {
    if k.b.abs() < 1e-12 || k.d < 1e-12 {
        return None;
    }
    let arg = ((k.a + k.d) * (-k.d * tau).exp() - k.a + k.d) / (2.0 * k.d);
    if arg <= 0.0 {
        return None;
    }
    Some(-(k.a + k.d) * tau / (2.0 * k.b) - arg.ln() / k.b)
}

/// Per-factor complete-market coefficients for a given pair of ambiguity parameters.
pub fn complete_coeffs_factor(f: &FactorParams, gamma: f64, phi_s: f64, phi_v: f64) -> (f64, f64, f64) {
    let g1 = 1.0 - gamma;
    let ls = f.sigma_v * f.rho;
    let lv = f.sigma_v * f.rho_bar();
    let quad_term = |phi: f64| (g1 - phi).powi(2) / (2.0 * g1 * (gamma + phi)) - phi / (2.0 * g1);
    let a = -f.kappa + f.lambda_risk * ls * (g1 - phi_s) / (gamma + phi_s) + f.mu_risk * lv * (g1 - phi_v) / (gamma + phi_v);
    let b = 0.5 * f.sigma_v * f.sigma_v + ls * ls * quad_term(phi_s) + lv * lv * quad_term(phi_v);
    let c = g1 * f.lambda_risk.powi(2) / (2.0 * (gamma + phi_s)) + g1 * f.mu_risk.powi(2) / (2.0 * (gamma + phi_v));
    (a, b, c)
}

/// Complete-market coefficients `(a_j, b_j, c_j, d_j)` for both factors.
pub fn derive_complete_coeffs(s: &ScenarioConfig) -> Result<[RiccatiCoeffs; 2]> {
    let mut out = [RiccatiCoeffs { a: 0.0, b: 0.0, c: 0.0, d: 0.0 }; 2];
    for j in 0..2 {
        let (a, b, c) = complete_coeffs_factor(&s.factors[j], s.prefs.gamma, s.prefs.phi_s[j], s.prefs.phi_v[j]);
        out[j] = RiccatiCoeffs::new(a, b, c, j)?;
    }
    Ok(out)
}

/// Ratio `(ν^P/ν^Q)^{1/γ}` = 1 + optimal relative wealth jump.
pub fn jump_wealth_ratio(s: &ScenarioConfig) -> Result<f64> {
    let jp = s
        .jumps
        .ok_or_else(|| Error::Configuration("scenario has no [jumps] section".into()))?;
    if !(jp.nu_q > 0.0) {
        return Err(Error::param("jumps.nu_q", "must be > 0"));
    }
    Ok((jp.nu_p / jp.nu_q).powf(1.0 / s.prefs.gamma))
}

/// Increment of `c_j` from optimally priced jump risk:
/// `(ν^P/ν^Q)^{1/γ} γ ν^Q − (γ−1) ν^Q − ν^P ≤ 0`.
pub fn jump_increment(s: &ScenarioConfig) -> Result<f64> {
    let z = jump_wealth_ratio(s)?;
    let jp = s.jumps.unwrap();
    let g = s.prefs.gamma;
    Ok(z * g * jp.nu_q - (g - 1.0) * jp.nu_q - jp.nu_p)
}

/// Jump-regime coefficients: `a_j`, `b_j` as without jumps, `c_j` shifted by
/// [`jump_increment`].
pub fn derive_jump_coeffs(s: &ScenarioConfig) -> Result<[RiccatiCoeffs; 2]> {
    let inc = jump_increment(s)?;
    let mut out = [RiccatiCoeffs { a: 0.0, b: 0.0, c: 0.0, d: 0.0 }; 2];
    for j in 0..2 {
        let (a, b, c) = complete_coeffs_factor(&s.factors[j], s.prefs.gamma, s.prefs.phi_s[j], s.prefs.phi_v[j]);
        out[j] = RiccatiCoeffs::new(a, b, c + inc, j)?;
    }
    Ok(out)
}

/// `∫_0^τ H` by adaptive Gauss–Kronrod quadrature of the closed form.
#[allow(non_snake_case)]
fn integral_H(k: &RiccatiCoeffs, tau: f64) -> Result<f64> {
    if tau == 0.0 || k.c == 0.0 {
        return Ok(0.0);
    }
    // surface a pole before handing the integrand to the quadrature
    closed_form_H(k, tau)?;
    let (v, _) = quad::adaptive(|s| closed_form_H(k, s).unwrap_or(f64::NAN), 0.0, tau, 1e-14, 1e-13)?;
    Ok(v)
}

/// `h(τ)` for the complete-market scenario by quadrature of `h'`.
pub fn closed_form_h(s: &ScenarioConfig, tau: f64) -> Result<f64> {
    let k = derive_complete_coeffs(s)?;
    h_from_coeffs(s, &k, tau)
}

fn h_from_coeffs(s: &ScenarioConfig, k: &[RiccatiCoeffs; 2], tau: f64) -> Result<f64> {
    let mut h = (1.0 - s.prefs.gamma) * s.market.r * tau;
    for j in 0..2 {
        let f = &s.factors[j];
        h += f.kappa * f.theta * integral_H(&k[j], tau)?;
    }
    Ok(h)
}

/// Samples of a numerically integrated solution.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolution {
    pub taus: Vec<f64>,
    pub values: Vec<f64>,
    pub step: f64,
    /// Richardson estimate of the global error, accumulated along the grid.
    pub error_estimate: f64,
}

/// RK4 integration of `H' = aH + bH² + c` from `H(0) = initial` over an
/// increasing grid starting at 0, with step at most 1e-3.
pub fn solve_riccati_numeric(k: &RiccatiCoeffs, tau_grid: &[f64], initial: f64) -> Result<OdeSolution> {
    if tau_grid.first() != Some(&0.0) || tau_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("tau grid must start at 0 and increase strictly".into()));
    }
    let rhs = |_: f64, y: &[f64], d: &mut [f64]| d[0] = k.rhs(y[0]);
    let mut values = vec![initial];
    let mut err: f64 = 0.0;
    let mut y = initial;
    for w in tau_grid.windows(2) {
        let (next, e) = ode::integrate_with_error(rhs, &[y], w[0], w[1], DEFAULT_STEP)?;
        // errors accumulate along the grid
        err += e;
        y = next[0];
        values.push(y);
    }
    Ok(OdeSolution {
        taus: tau_grid.to_vec(),
        values,
        step: DEFAULT_STEP,
        error_estimate: err,
    })
}

/// Regime a set of value coefficients belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Complete,
    Incomplete,
    Jump,
    Suboptimal,
}

#[derive(Debug, Clone)]
enum Repr {
    Closed([RiccatiCoeffs; 2]),
    /// Components `[H1, H2, h]` on a uniform τ grid.
    Grid(DenseGrid),
}

/// `H1(τ)`, `H2(τ)`, `h(τ)` for one regime.
#[derive(Debug, Clone)]
pub struct ValueCoefficients {
    pub regime: Regime,
    scenario: ScenarioConfig,
    repr: Repr,
}

impl ValueCoefficients {
    /// Closed-form complete-market coefficients.
    pub fn complete(s: &ScenarioConfig) -> Result<Self> {
        Ok(Self {
            regime: Regime::Complete,
            scenario: *s,
            repr: Repr::Closed(derive_complete_coeffs(s)?),
        })
    }

    /// Closed-form jump-regime coefficients (`C_j`, `c`).
    pub fn jump(s: &ScenarioConfig) -> Result<Self> {
        Ok(Self {
            regime: Regime::Jump,
            scenario: *s,
            repr: Repr::Closed(derive_jump_coeffs(s)?),
        })
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.scenario
    }

    /// Riccati coefficients, when the representation is closed form.
    pub fn coeffs(&self) -> Option<&[RiccatiCoeffs; 2]> {
        match &self.repr {
            Repr::Closed(k) => Some(k),
            Repr::Grid(_) => None,
        }
    }

    /// Largest τ at which the coefficients are defined.
    pub fn tau_max(&self) -> f64 {
        match &self.repr {
            Repr::Closed(_) => f64::INFINITY,
            Repr::Grid(g) => g.t_max(),
        }
    }

    fn check_tau(&self, tau: f64) -> Result<()> {
        if !(tau >= 0.0 && tau <= self.tau_max() * (1.0 + 1e-12)) {
            return Err(Error::Domain(format!("tau = {tau} outside [0, {}]", self.tau_max())));
        }
        Ok(())
    }

    /// `H_j(τ)` for `j ∈ {0, 1}`.
    #[allow(non_snake_case)]
    pub fn H(&self, j: usize, tau: f64) -> Result<f64> {
        self.check_tau(tau)?;
        match &self.repr {
            Repr::Closed(k) => closed_form_H(&k[j], tau),
            Repr::Grid(g) => Ok(if tau == 0.0 { 0.0 } else { g.eval(tau)[j] }),
        }
    }

    /// `h(τ)`.
    pub fn h(&self, tau: f64) -> Result<f64> {
        self.check_tau(tau)?;
        match &self.repr {
            Repr::Closed(k) => h_from_coeffs(&self.scenario, k, tau),
            Repr::Grid(g) => Ok(if tau == 0.0 { 0.0 } else { g.eval(tau)[2] }),
        }
    }

    /// `(H1, H2, h)` at τ.
    pub fn eval(&self, tau: f64) -> Result<([f64; 2], f64)> {
        Ok(([self.H(0, tau)?, self.H(1, tau)?], self.h(tau)?))
    }

    /// `H1 v1 + H2 v2 + h` at τ, the exponent of the value function.
    pub fn exponent(&self, tau: f64, v: [f64; 2]) -> Result<f64> {
        let (hh, h) = self.eval(tau)?;
        Ok(hh[0] * v[0] + hh[1] * v[1] + h)
    }

    /// Value function `x^{1−γ}/(1−γ) · exp(H1 v1 + H2 v2 + h)` at `τ = T − t`.
    pub fn value(&self, tau: f64, x: f64, v: [f64; 2]) -> Result<f64> {
        if !(x > 0.0) {
            return Err(Error::Domain(format!("wealth must be positive, got {x}")));
        }
        let g1 = 1.0 - self.scenario.prefs.gamma;
        Ok(x.powf(g1) / g1 * self.exponent(tau, v)?.exp())
    }

    /// Evaluates `[H1, H2, h]` on every τ in `taus`, reusing one quadrature
    /// sweep for the closed-form `h`.
    pub fn tabulate(&self, taus: &[f64]) -> Result<Vec<[f64; 3]>> {
        match &self.repr {
            Repr::Grid(_) => taus
                .iter()
                .map(|&t| {
                    let (hh, h) = self.eval(t)?;
                    Ok([hh[0], hh[1], h])
                })
                .collect(),
            Repr::Closed(k) => {
                let s = &self.scenario;
                let drift = (1.0 - s.prefs.gamma) * s.market.r;
                let kt = [s.factors[0].kappa * s.factors[0].theta, s.factors[1].kappa * s.factors[1].theta];
                let mut order: Vec<usize> = (0..taus.len()).collect();
                order.sort_by(|&i, &j| taus[i].total_cmp(&taus[j]));
                let mut out = vec![[0.0; 3]; taus.len()];
                let mut prev = 0.0;
                let mut acc = [0.0; 2];
                for i in order {
                    let t = taus[i];
                    self.check_tau(t)?;
                    for j in 0..2 {
                        if t > prev && k[j].c != 0.0 {
                            closed_form_H(&k[j], t)?;
                            let (v, _) = quad::adaptive(|u| closed_form_H(&k[j], u).unwrap_or(f64::NAN), prev, t, 1e-15, 1e-13)?;
                            acc[j] += v;
                        }
                    }
                    prev = t;
                    out[i] = [
                        closed_form_H(&k[0], t)?,
                        closed_form_H(&k[1], t)?,
                        kt[0] * acc[0] + kt[1] * acc[1] + drift * t,
                    ];
                }
                Ok(out)
            }
        }
    }
}

/// Integrates `[H1, H2, h]` on `[0, T]` for per-factor right-hand sides.
fn integrate_value<F>(s: &ScenarioConfig, regime: Regime, mut rhs_h: F) -> Result<ValueCoefficients>
where
    F: FnMut(usize, f64, f64) -> f64,
{
    let drift = (1.0 - s.prefs.gamma) * s.market.r;
    let kt = [s.factors[0].kappa * s.factors[0].theta, s.factors[1].kappa * s.factors[1].theta];
    let grid = DenseGrid::solve(
        |tau, y: &[f64], d: &mut [f64]| {
            d[0] = rhs_h(0, tau, y[0]);
            d[1] = rhs_h(1, tau, y[1]);
            d[2] = kt[0] * y[0] + kt[1] * y[1] + drift;
        },
        &[0.0; 3],
        0.0,
        s.market.horizon,
        DEFAULT_STEP,
    )?;
    Ok(ValueCoefficients {
        regime,
        scenario: *s,
        repr: Repr::Grid(grid),
    })
}

/// Stock weight `π_j(H̄) = λ_j/(γ+φ^S_j) + (1−γ−φ^S_j) σ_j ρ_j H̄ / ((1−γ)(γ+φ^S_j))`
/// of an investor who only trades the stock and faces factor `j` alone.
pub fn incomplete_pi(s: &ScenarioConfig, j: usize, hbar: f64) -> f64 {
    let f = &s.factors[j];
    let g = s.prefs.gamma;
    let ps = s.prefs.phi_s[j];
    f.lambda_risk / (g + ps) + (1.0 - g - ps) * f.sigma_v * f.rho * hbar / ((1.0 - g) * (g + ps))
}

/// Right-hand side of the incomplete-market equation for `H̄_j`.
pub fn incomplete_rhs(s: &ScenarioConfig, j: usize, hbar: f64) -> f64 {
    let f = &s.factors[j];
    let g = s.prefs.gamma;
    let g1 = 1.0 - g;
    let ps = s.prefs.phi_s[j];
    let pv = s.prefs.phi_v[j];
    let pi = incomplete_pi(s, j, hbar);
    let sr = f.sigma_v * f.rho;
    let rb2 = 1.0 - f.rho * f.rho;
    g1 * pi * f.lambda_risk - 0.5 * g * g1 * pi * pi - f.kappa * hbar
        + 0.5 * f.sigma_v * f.sigma_v * hbar * hbar
        + g1 * sr * hbar * pi
        - 0.5 * g1 * ps * (pi * pi + 2.0 * pi * sr * hbar / g1 + sr * sr * hbar * hbar / (g1 * g1))
        - 0.5 * g1 * pv * rb2 * f.sigma_v * f.sigma_v * hbar * hbar / (g1 * g1)
}

/// Incomplete-market (stock-only) coefficients `H̄_1`, `H̄_2`, `h̄`.
///
/// Each `H̄_j` is the solution for an investor facing factor `j` alone.
/// For two distinct active factors the true stock weight is state dependent,
/// see [`crate::strategy::general_pi_s_pointwise`].
pub fn solve_incomplete_system(s: &ScenarioConfig) -> Result<ValueCoefficients> {
    integrate_value(s, Regime::Incomplete, |j, _, h| incomplete_rhs(s, j, h))
}

/// Exposures of a fixed (possibly suboptimal) strategy as functions of τ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StrategyExposures {
    /// Constant `β^S_j`, `β^V_j`.
    Constant { beta_s: [f64; 2], beta_v: [f64; 2] },
    /// `β^S_j = p^S_{j,0} + p^S_{j,1} Ĥ_j(τ)` and likewise for `β^V_j`,
    /// with `Ĥ_j` the closed-form solution for `hat[j]`.
    Affine {
        p_s: [[f64; 2]; 2],
        p_v: [[f64; 2]; 2],
        hat: [RiccatiCoeffs; 2],
    },
}

impl StrategyExposures {
    /// The optimal complete-market exposures for the given scenario, in
    /// affine form. Used to build strategies that solve a different
    /// (e.g. ambiguity-neutral) problem than the one they are evaluated in.
    pub fn optimal_for(s: &ScenarioConfig) -> Result<Self> {
        Self::affine_for(s, derive_complete_coeffs(s)?)
    }

    /// Optimal exposure rule with jump-regime coefficients.
    pub fn optimal_jump_for(s: &ScenarioConfig) -> Result<Self> {
        Self::affine_for(s, derive_jump_coeffs(s)?)
    }

    fn affine_for(s: &ScenarioConfig, hat: [RiccatiCoeffs; 2]) -> Result<Self> {
        let g = s.prefs.gamma;
        let g1 = 1.0 - g;
        let mut p_s = [[0.0; 2]; 2];
        let mut p_v = [[0.0; 2]; 2];
        for j in 0..2 {
            let f = &s.factors[j];
            let (ps, pv) = (s.prefs.phi_s[j], s.prefs.phi_v[j]);
            p_s[j] = [f.lambda_risk / (g + ps), (g1 - ps) * f.sigma_v * f.rho / (g1 * (g + ps))];
            p_v[j] = [f.mu_risk / (g + pv), (g1 - pv) * f.sigma_v * f.rho_bar() / (g1 * (g + pv))];
        }
        Ok(Self::Affine { p_s, p_v, hat })
    }

    /// `(β^S_j(τ), β^V_j(τ))`.
    pub fn at(&self, j: usize, tau: f64) -> Result<(f64, f64)> {
        match self {
            Self::Constant { beta_s, beta_v } => Ok((beta_s[j], beta_v[j])),
            Self::Affine { p_s, p_v, hat } => {
                let hh = closed_form_H(&hat[j], tau)?;
                Ok((p_s[j][0] + p_s[j][1] * hh, p_v[j][0] + p_v[j][1] * hh))
            }
        }
    }
}

/// Ambiguity parameters used when evaluating a strategy, if different from
/// the scenario's.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiOverride {
    pub phi_s: [f64; 2],
    pub phi_v: [f64; 2],
}

/// Suboptimal-strategy coefficients at fixed exposures:
/// `(a^Π_j, b^Π_j, c^Π_j)` for `H^Π_j`, before any jump term.
pub fn suboptimal_coeffs(f: &FactorParams, gamma: f64, phi_s: f64, phi_v: f64, beta_s: f64, beta_v: f64) -> (f64, f64, f64) {
    let g1 = 1.0 - gamma;
    let ls = f.sigma_v * f.rho;
    let lv = f.sigma_v * f.rho_bar();
    let a = -f.kappa + ls * beta_s * (g1 - phi_s) + lv * beta_v * (g1 - phi_v);
    let b = 0.5 * f.sigma_v * f.sigma_v - (phi_s * ls * ls + phi_v * lv * lv) / (2.0 * g1);
    let c = g1 * (beta_s * f.lambda_risk + beta_v * f.mu_risk)
        - 0.5 * gamma * g1 * (beta_s * beta_s + beta_v * beta_v)
        - 0.5 * g1 * phi_s * beta_s * beta_s
        - 0.5 * g1 * phi_v * beta_v * beta_v;
    (a, b, c)
}

/// Contribution of a jump exposure `β^N` to `c^Π_j`:
/// `−(1−γ) β^N j^S ν^Q + ν^P((1 + β^N j^S)^{1−γ} − 1)`.
pub fn jump_strategy_term(s: &ScenarioConfig, beta_n: f64) -> Result<f64> {
    let jp = s
        .jumps
        .ok_or_else(|| Error::Configuration("scenario has no [jumps] section".into()))?;
    let g1 = 1.0 - s.prefs.gamma;
    let y = beta_n * jp.jump_size;
    if y <= -1.0 {
        return Err(Error::Domain(format!("jump exposure {beta_n} wipes out wealth on a jump")));
    }
    Ok(-g1 * y * jp.nu_q + jp.nu_p * ((1.0 + y).powf(g1) - 1.0))
}

/// Value coefficients of a fixed strategy, with nature choosing the worst case
/// against it. `phi` overrides the ambiguity parameters of the evaluation;
/// `beta_n` adds a jump exposure (requires a `[jumps]` section, and is ignored
/// as `None` when the scenario has no jumps).
pub fn solve_suboptimal_system(
    s: &ScenarioConfig,
    strategy: &StrategyExposures,
    phi: Option<PhiOverride>,
    beta_n: Option<f64>,
) -> Result<ValueCoefficients> {
    let (phi_s, phi_v) = match phi {
        Some(p) => (p.phi_s, p.phi_v),
        None => (s.prefs.phi_s, s.prefs.phi_v),
    };
    let jump = match beta_n {
        Some(bn) => jump_strategy_term(s, bn)?,
        None if s.jumps.is_some() => jump_strategy_term(s, 0.0)?,
        None => 0.0,
    };
    // validate the strategy on the whole horizon before integrating
    for j in 0..2 {
        strategy.at(j, s.market.horizon)?;
    }
    let g = s.prefs.gamma;
    integrate_value(s, Regime::Suboptimal, |j, tau, h| {
        let (bs, bv) = strategy.at(j, tau).unwrap_or((f64::NAN, f64::NAN));
        let (a, b, c) = suboptimal_coeffs(&s.factors[j], g, phi_s[j], phi_v[j], bs, bv);
        a * h + b * h * h + c + jump
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn baseline() -> ScenarioConfig {
        ScenarioConfig::from_toml_str(include_str!("../fixtures/baseline.toml")).unwrap().0
    }

    /// Coefficients obtained by collecting terms of the HJB with the optimal
    /// controls substituted, written out channel by channel.
    fn oracle_coeffs(f: &FactorParams, g: f64, ps: f64, pv: f64) -> (f64, f64, f64) {
        // β = (premium + ℓH(1−γ−φ)/(1−γ))/(γ+φ) is affine in H: β = β0 + β1 H.
        // G/J per unit v is quadratic in H; read off its coefficients exactly by
        // evaluating at three points.
        let g1 = 1.0 - g;
        let eval = |h: f64| {
            let mut total = 0.5 * f.sigma_v.powi(2) * h * h - f.kappa * h;
            for (prem, l, phi) in [(f.lambda_risk, f.sigma_v * f.rho, ps), (f.mu_risk, f.sigma_v * f.rho_bar(), pv)] {
                let beta = (prem + l * h * (g1 - phi) / g1) / (g + phi);
                let e = phi * (beta + l * h / g1);
                // penalty (1−γ) e²/(2φ) written without dividing by φ
                let penalty = 0.5 * g1 * phi * (beta + l * h / g1).powi(2);
                total += g1 * (prem * beta - beta * e) - 0.5 * g * g1 * beta * beta + g1 * beta * l * h - e * l * h + penalty;
            }
            total
        };
        let (y0, y1, ym) = (eval(0.0), eval(1.0), eval(-1.0));
        (0.5 * (y1 - ym), 0.5 * (y1 + ym) - y0, y0)
    }

    #[test]
    fn complete_coeffs_match_collected_hjb_terms() {
        let s = baseline();
        for &(ps, pv) in &[(0.0, 0.0), (0.5, 0.5), (1.0, 0.25), (2.0, 3.0)] {
            for f in &s.factors {
                let (a, b, c) = complete_coeffs_factor(f, 4.0, ps, pv);
                let (oa, ob, oc) = oracle_coeffs(f, 4.0, ps, pv);
                assert!((a - oa).abs() < 1e-12 && (b - ob).abs() < 1e-12 && (c - oc).abs() < 1e-12, "{ps} {pv}");
            }
        }
    }

    #[test]
    fn non_robust_uncorrelated_coefficients() {
        let f = FactorParams {
            kappa: 2.0,
            theta: 0.04,
            sigma_v: 0.3,
            rho: 0.0,
            lambda_risk: 1.5,
            mu_risk: 0.0,
            v0: 0.04,
        };
        let (a, b, c) = complete_coeffs_factor(&f, 3.0, 0.0, 0.0);
        assert!((a + 2.0).abs() < 1e-15);
        // only the private-noise channel carries σ: b = σ²/2 + σ²(1−γ)/(2γ) = σ²/(2γ)
        assert!((b - 0.09 / 6.0).abs() < 1e-15);
        assert!((c - (-2.0 * 2.25 / 6.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_premia_give_zero_value_coefficients() {
        let mut s = baseline().with_phi([0.0; 2], [0.0; 2]);
        for f in &mut s.factors {
            f.lambda_risk = 0.0;
            f.mu_risk = 0.0;
        }
        let k = derive_complete_coeffs(&s).unwrap();
        assert_eq!(k[0].c, 0.0);
        assert_eq!(closed_form_H(&k[0], 7.0).unwrap(), 0.0);
        let h = closed_form_h(&s, 3.0).unwrap();
        assert!((h - (1.0 - 4.0) * 0.05 * 3.0).abs() < 1e-15);
    }

    #[test]
    fn boundary_values_are_exact_zero() {
        let s = baseline();
        let k = derive_complete_coeffs(&s).unwrap();
        assert_eq!(closed_form_H(&k[0], 0.0).unwrap(), 0.0);
        assert_eq!(closed_form_h(&s, 0.0).unwrap(), 0.0);
        let inc = solve_incomplete_system(&s).unwrap();
        assert_eq!(inc.eval(0.0).unwrap(), ([0.0, 0.0], 0.0));
    }

    #[test]
    fn closed_form_agrees_with_rk4() {
        let s = baseline();
        let k = derive_complete_coeffs(&s).unwrap();
        let grid: Vec<f64> = (0..=100).map(|i| 0.1 * i as f64).collect();
        for kj in &k {
            let sol = solve_riccati_numeric(kj, &grid, 0.0).unwrap();
            assert!(sol.error_estimate < 1e-10);
            for (t, v) in grid.iter().zip(&sol.values) {
                assert!((closed_form_H(kj, *t).unwrap() - v).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn linear_test_equation() {
        let k = RiccatiCoeffs { a: -1.0, b: 0.0, c: 1.0, d: 1.0 };
        let sol = solve_riccati_numeric(&k, &[0.0, 0.5, 1.0], 0.0).unwrap();
        assert!((sol.values[2] - 0.6321).abs() < 1e-4);
        assert!((sol.values[2] - (1.0 - (-1.0f64).exp())).abs() < 1e-8);
        assert!((closed_form_H(&k, 1.0).unwrap() - sol.values[2]).abs() < 1e-12);
        let zero = RiccatiCoeffs { a: 0.0, b: 0.0, c: 0.0, d: 0.0 };
        assert!(solve_riccati_numeric(&zero, &[0.0, 3.0], 0.0).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn h_quadrature_matches_log_antiderivative_and_joint_rk4() {
        let s = baseline();
        let k = derive_complete_coeffs(&s).unwrap();
        let tau = 10.0;
        let quad = closed_form_h(&s, tau).unwrap();
        let mut via_log = (1.0 - 4.0) * 0.05 * tau;
        for j in 0..2 {
            via_log += s.factors[j].kappa * s.factors[j].theta * log_integral_H(&k[j], tau).unwrap();
        }
        assert!((quad - via_log).abs() < 1e-10, "{quad} vs {via_log}");
        let kt: Vec<f64> = s.factors.iter().map(|f| f.kappa * f.theta).collect();
        let joint = ode::integrate(
            |_, y: &[f64], d: &mut [f64]| {
                d[0] = k[0].rhs(y[0]);
                d[1] = k[1].rhs(y[1]);
                d[2] = kt[0] * y[0] + kt[1] * y[1] + (1.0 - 4.0) * 0.05;
            },
            &[0.0; 3],
            0.0,
            tau,
            1e-3,
        )
        .unwrap();
        assert!((quad - joint[2]).abs() < 1e-8);
    }

    #[test]
    fn tabulate_matches_pointwise() {
        let s = baseline();
        let v = ValueCoefficients::complete(&s).unwrap();
        let taus = [3.0, 0.0, 0.5, 10.0];
        let tab = v.tabulate(&taus).unwrap();
        for (t, row) in taus.iter().zip(&tab) {
            let (hh, h) = v.eval(*t).unwrap();
            assert!((row[0] - hh[0]).abs() < 1e-15 && (row[1] - hh[1]).abs() < 1e-15);
            assert!((row[2] - h).abs() < 1e-12);
        }
    }

    #[test]
    fn explosive_parameters_are_rejected() {
        // b c > 0 with small a: H' = H² + 1 blows up in finite time
        assert!(matches!(RiccatiCoeffs::new(0.0, 1.0, 1.0, 0), Err(Error::ExplosiveSolution { factor: 1, .. })));
        assert!(matches!(RiccatiCoeffs::new(0.5, 2.0, 1.0, 1), Err(Error::ExplosiveSolution { factor: 2, .. })));
    }

    #[test]
    fn pole_is_reported() {
        // real roots of the same sign as b c > 0: the solution still escapes
        let k = RiccatiCoeffs::new(3.0, 1.0, 1.0, 0).unwrap();
        assert!(closed_form_H(&k, 0.1).is_ok());
        assert!(matches!(closed_form_H(&k, 50.0), Err(Error::RiccatiPole { .. })));
    }

    #[test]
    fn jump_coefficients() {
        let mut s = baseline();
        s.jumps = Some(crate::model::JumpParams {
            jump_size: -0.15,
            nu_p: 0.1,
            nu_q: 0.3,
        });
        let inc = jump_increment(&s).unwrap();
        assert!((inc - (-0.0882)).abs() < 5e-5, "{inc}");
        let z = (1.0f64 / 3.0).powf(0.25);
        assert!((inc - (z * 4.0 * 0.3 - 3.0 * 0.3 - 0.1)).abs() < 1e-15);
        let kj = derive_jump_coeffs(&s).unwrap();
        let kc = derive_complete_coeffs(&s).unwrap();
        assert_eq!(kj[0].a, kc[0].a);
        assert_eq!(kj[1].b, kc[1].b);
        assert!((kj[1].c - kc[1].c - inc).abs() < 1e-15);

        s.jumps.as_mut().unwrap().nu_p = 0.3;
        assert!(jump_increment(&s).unwrap().abs() < 1e-15);

        s.jumps = None;
        assert!(matches!(derive_jump_coeffs(&s), Err(Error::Configuration(_))));
    }

    #[test]
    fn incomplete_system_matches_equivalent_riccati() {
        // Substituting π_j(H̄) leaves a Riccati equation with constant
        // coefficients; its closed form is an independent check of the RK4 grid.
        let s = baseline();
        let inc = solve_incomplete_system(&s).unwrap();
        let g = 4.0;
        let g1 = 1.0 - g;
        for j in 0..2 {
            let f = &s.factors[j];
            let (ps, pv) = (s.prefs.phi_s[j], s.prefs.phi_v[j]);
            let (sr, sb) = (f.sigma_v * f.rho, f.sigma_v * f.rho_bar());
            let a = -f.kappa + f.lambda_risk * sr * (g1 - ps) / (g + ps);
            let b = 0.5 * f.sigma_v.powi(2) + sr * sr * ((g1 - ps).powi(2) / (2.0 * g1 * (g + ps)) - ps / (2.0 * g1))
                - pv * sb * sb / (2.0 * g1);
            let c = g1 * f.lambda_risk.powi(2) / (2.0 * (g + ps));
            let k = RiccatiCoeffs::new(a, b, c, j).unwrap();
            for i in 0..=1000 {
                let t = 0.01 * i as f64;
                assert!((inc.H(j, t).unwrap() - closed_form_H(&k, t).unwrap()).abs() < 1e-9, "j = {j}, t = {t}");
            }
        }
    }

    #[test]
    fn incomplete_tends_to_complete_without_vol_of_vol() {
        let mut s = baseline();
        for f in &mut s.factors {
            f.mu_risk = 0.0;
            f.sigma_v = 1e-7;
        }
        let inc = solve_incomplete_system(&s).unwrap();
        let com = ValueCoefficients::complete(&s).unwrap();
        for &t in &[0.5, 5.0, 10.0] {
            for j in 0..2 {
                let (a, b) = (inc.H(j, t).unwrap(), com.H(j, t).unwrap());
                assert!((a - b).abs() < 1e-8 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn optimal_strategy_reproduces_optimal_value() {
        let s = baseline();
        let strat = StrategyExposures::optimal_for(&s).unwrap();
        let sub = solve_suboptimal_system(&s, &strat, None, None).unwrap();
        let opt = ValueCoefficients::complete(&s).unwrap();
        for &t in &[0.25, 1.0, 4.0, 10.0] {
            let (a, ha) = sub.eval(t).unwrap();
            let (b, hb) = opt.eval(t).unwrap();
            for j in 0..2 {
                assert!((a[j] - b[j]).abs() < 1e-10);
            }
            assert!((ha - hb).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_exposure_strategy_is_pure_drift() {
        let s = baseline();
        let strat = StrategyExposures::Constant {
            beta_s: [0.0; 2],
            beta_v: [0.0; 2],
        };
        let sub = solve_suboptimal_system(&s, &strat, None, None).unwrap();
        for j in 0..2 {
            let (a, b, c) = suboptimal_coeffs(&s.factors[j], 4.0, 0.5, 0.5, 0.0, 0.0);
            assert_eq!(c, 0.0);
            assert_eq!(a, -s.factors[j].kappa);
            assert!(b.is_finite());
            assert_eq!(sub.H(j, 10.0).unwrap(), 0.0);
        }
        assert!((sub.h(10.0).unwrap() - (-3.0 * 0.05 * 10.0)).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn closed_form_solves_the_ode(
                phi_s in 0.0f64..3.0,
                phi_v in 0.0f64..3.0,
                tau in 0.01f64..10.0,
            ) {
                let s = baseline().with_phi([phi_s; 2], [phi_v; 2]);
                let k = derive_complete_coeffs(&s).unwrap();
                for kj in &k {
                    let d2 = kj.d * kj.d;
                    prop_assert!((d2 - kj.discriminant()).abs() <= 1e-12 * kj.discriminant().abs().max(1e-300));
                    let h = 1e-3;
                    let f = |t: f64| closed_form_H(kj, t).unwrap();
                    let deriv = (-f(tau + 2.0 * h) + 8.0 * f(tau + h) - 8.0 * f(tau - h) + f(tau - 2.0 * h)) / (12.0 * h);
                    let hv = f(tau);
                    prop_assert!((deriv - kj.rhs(hv)).abs() < 1e-8);
                }
            }

            #[test]
            fn optimal_h_is_nonpositive_and_decreasing(phi in 0.0f64..3.0, tau in 0.0f64..10.0) {
                let s = baseline().with_phi([phi; 2], [phi; 2]);
                let v = ValueCoefficients::complete(&s).unwrap();
                for j in 0..2 {
                    let a = v.H(j, tau).unwrap();
                    let b = v.H(j, tau + 0.1).unwrap();
                    prop_assert!(a <= 0.0 && b <= a);
                }
            }
        }
    }
}
