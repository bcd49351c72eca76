//! Finite-difference evaluation of the robust HJB operator.
//!
//! Used as an independent check of closed-form value functions and optimal
//! controls: derivatives of `J` come from difference stencils, never from the
//! Riccati structure.

use crate::error::{Error, Result};
use crate::model::ScenarioConfig;
use crate::riccati::ValueCoefficients;
use crate::strategy;

/// Derivatives of `J` at one state. `j_t` is the calendar-time derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivs {
    pub j: f64,
    pub j_t: f64,
    pub j_x: f64,
    pub j_xx: f64,
    pub j_v: [f64; 2],
    pub j_vv: [f64; 2],
    pub j_xv: [f64; 2],
}

const W1: [f64; 4] = [1.0 / 12.0, -2.0 / 3.0, 2.0 / 3.0, -1.0 / 12.0];
const W2: [f64; 5] = [-1.0 / 12.0, 4.0 / 3.0, -5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0];
const O1: [f64; 4] = [-2.0, -1.0, 1.0, 2.0];

fn d1<F: FnMut(f64) -> f64>(mut f: F, h: f64) -> f64 {
    O1.iter().zip(W1).map(|(&o, w)| w * f(o * h)).sum::<f64>() / h
}

fn d2<F: FnMut(f64) -> f64>(mut f: F, h: f64) -> f64 {
    (-2..=2).zip(W2).map(|(o, w)| w * f(o as f64 * h)).sum::<f64>() / (h * h)
}

/// Five-point stencils in every direction; the mixed derivative nests two
/// first-derivative stencils. `j(τ, x, v)`.
pub fn derivatives<F: Fn(f64, f64, [f64; 2]) -> f64>(j: F, tau: f64, x: f64, v: [f64; 2]) -> Derivs {
    let hx = 1e-3 * x;
    let ht = 1e-3;
    let hv = |vj: f64| 1e-3 * vj.max(1e-3);
    let mut out = Derivs {
        j: j(tau, x, v),
        j_t: -d1(|d| j(tau + d, x, v), ht),
        j_x: d1(|d| j(tau, x + d, v), hx),
        j_xx: d2(|d| j(tau, x + d, v), hx),
        j_v: [0.0; 2],
        j_vv: [0.0; 2],
        j_xv: [0.0; 2],
    };
    for k in 0..2 {
        let at = |d: f64, xx: f64| {
            let mut vv = v;
            vv[k] += d;
            j(tau, xx, vv)
        };
        out.j_v[k] = d1(|d| at(d, x), hv(v[k]));
        out.j_vv[k] = d2(|d| at(d, x), hv(v[k]));
        out.j_xv[k] = d1(|dv| d1(|dx| at(dv, x + dx), hx), hv(v[k]));
    }
    out
}

/// Value function of closed-form or grid coefficients as a plain closure,
/// without the domain checks of [`ValueCoefficients::value`] so stencils may
/// step slightly outside `v ≥ 0`.
pub fn value_closure(vc: &ValueCoefficients) -> impl Fn(f64, f64, [f64; 2]) -> f64 + '_ {
    let g1 = 1.0 - vc.scenario().prefs.gamma;
    move |tau, x, v| match vc.eval(tau) {
        Ok((hh, h)) => x.powf(g1) / g1 * (hh[0] * v[0] + hh[1] * v[1] + h).exp(),
        Err(_) => f64::NAN,
    }
}

/// Investor and nature controls. `beta_n` is ignored without jumps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Controls {
    pub beta_s: [f64; 2],
    pub beta_v: [f64; 2],
    pub beta_n: f64,
    pub e_s: [f64; 2],
    pub e_v: [f64; 2],
}

impl Controls {
    const DIM: usize = 9;

    fn to_vec(self) -> [f64; 9] {
        [
            self.beta_s[0], self.beta_s[1], self.beta_v[0], self.beta_v[1], self.e_s[0], self.e_s[1], self.e_v[0],
            self.e_v[1], self.beta_n,
        ]
    }

    fn from_vec(u: [f64; 9]) -> Self {
        Self {
            beta_s: [u[0], u[1]],
            beta_v: [u[2], u[3]],
            e_s: [u[4], u[5]],
            e_v: [u[6], u[7]],
            beta_n: u[8],
        }
    }
}

/// Which control coordinates the investor chooses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlSet {
    /// `β^S_j`, `β^V_j` free.
    Complete,
    /// `β^S_j`, `β^V_j` and `β^N` free.
    Jump,
    /// Stock only: `β^S_1 = β^S_2 = π^S`, `β^V_j = 0`.
    StockOnly,
}

/// HJB objective `J_t + 𝓛J + penalty (+ jump term)` split into its terms.
pub fn objective_terms<F: Fn(f64, f64, [f64; 2]) -> f64>(
    s: &ScenarioConfig,
    jf: &F,
    d: &Derivs,
    tau: f64,
    x: f64,
    v: [f64; 2],
    c: &Controls,
) -> Vec<f64> {
    let g1 = 1.0 - s.prefs.gamma;
    let mut t = vec![d.j_t, x * d.j_x * s.market.r];
    for k in 0..2 {
        let f = &s.factors[k];
        let rv = v[k].sqrt();
        let (bs, bv, es, ev) = (c.beta_s[k], c.beta_v[k], c.e_s[k], c.e_v[k]);
        let rb = f.rho_bar();
        t.push(x * d.j_x * bs * (f.lambda_risk * v[k] - es * rv));
        t.push(x * d.j_x * bv * (f.mu_risk * v[k] - ev * rv));
        t.push(0.5 * x * x * d.j_xx * (bs * bs + bv * bv) * v[k]);
        t.push(d.j_v[k] * f.kappa * (f.theta - v[k]));
        t.push(-d.j_v[k] * f.sigma_v * (f.rho * es + rb * ev) * rv);
        t.push(0.5 * f.sigma_v * f.sigma_v * v[k] * d.j_vv[k]);
        t.push(x * d.j_xv[k] * f.sigma_v * v[k] * (f.rho * bs + rb * bv));
        for (e, phi) in [(es, s.prefs.phi_s[k]), (ev, s.prefs.phi_v[k])] {
            // e²/(2Ψ) with Ψ = φ/((1−γ)J); φ = 0 forces e = 0
            t.push(if phi > 0.0 { g1 * d.j * e * e / (2.0 * phi) } else { 0.0 });
        }
    }
    if let Some(jp) = s.jumps {
        let total_v = v[0] + v[1];
        let y = c.beta_n * jp.jump_size;
        t.push(-x * d.j_x * y * jp.nu_q * total_v);
        t.push(jp.nu_p * total_v * (jf(tau, x * (1.0 + y), v) - d.j));
    }
    t
}

fn rel(terms: &[f64]) -> (f64, f64) {
    let sum: f64 = terms.iter().sum();
    let scale: f64 = terms.iter().map(|t| t.abs()).sum();
    (sum, scale)
}

/// `|Σ terms| / Σ |terms|` at the given controls.
pub fn relative_residual<F: Fn(f64, f64, [f64; 2]) -> f64>(
    s: &ScenarioConfig,
    jf: &F,
    tau: f64,
    x: f64,
    v: [f64; 2],
    c: &Controls,
) -> f64 {
    let d = derivatives(jf, tau, x, v);
    let (sum, scale) = rel(&objective_terms(s, jf, &d, tau, x, v, c));
    sum.abs() / scale
}

/// Central-difference gradient of the objective with respect to each free
/// control coordinate, divided by the objective's term scale.
pub fn foc_gradient<F: Fn(f64, f64, [f64; 2]) -> f64>(
    s: &ScenarioConfig,
    jf: &F,
    tau: f64,
    x: f64,
    v: [f64; 2],
    c: &Controls,
    set: ControlSet,
) -> Vec<f64> {
    let d = derivatives(jf, tau, x, v);
    let (_, scale) = rel(&objective_terms(s, jf, &d, tau, x, v, c));
    let g = |u: [f64; 9]| rel(&objective_terms(s, jf, &d, tau, x, v, &Controls::from_vec(u))).0;
    let base = c.to_vec();
    let h = 1e-5;
    let mut dirs: Vec<[f64; 9]> = Vec::new();
    let unit = |i: usize| {
        let mut e = [0.0; Controls::DIM];
        e[i] = 1.0;
        e
    };
    match set {
        ControlSet::Complete => dirs.extend((0..4).map(unit)),
        ControlSet::Jump => {
            dirs.extend((0..4).map(unit));
            dirs.push(unit(8));
        }
        ControlSet::StockOnly => {
            let mut e = [0.0; Controls::DIM];
            e[0] = 1.0;
            e[1] = 1.0;
            dirs.push(e);
        }
    }
    for k in 0..2 {
        if s.prefs.phi_s[k] > 0.0 {
            dirs.push(unit(4 + k));
        }
        if s.prefs.phi_v[k] > 0.0 {
            dirs.push(unit(6 + k));
        }
    }
    dirs.iter()
        .map(|dir| {
            let shifted = |sign: f64| {
                let mut u = base;
                for i in 0..Controls::DIM {
                    u[i] += sign * h * dir[i];
                }
                g(u)
            };
            (shifted(1.0) - shifted(-1.0)) / (2.0 * h) / scale
        })
        .collect()
}

/// Optimal controls at a state for closed-form complete or jump coefficients.
pub fn optimal_controls(vc: &ValueCoefficients, tau: f64, v: [f64; 2]) -> Result<Controls> {
    let e = strategy::optimal_exposures(vc, tau)?;
    let w = strategy::worst_case(vc, tau, v)?;
    Ok(Controls {
        beta_s: e.beta_s,
        beta_v: e.beta_v,
        beta_n: e.beta_n.unwrap_or(0.0),
        e_s: w.e_s,
        e_v: w.e_v,
    })
}

/// Optimal stock-only controls under the identical-factor reduction.
pub fn optimal_controls_incomplete(vc: &ValueCoefficients, tau: f64, v: [f64; 2]) -> Result<Controls> {
    let pi = strategy::optimal_stock_weight_incomplete(vc, tau, strategy::Reduction::IdenticalFactors)?;
    let w = strategy::worst_case_incomplete(vc, tau, v)?;
    Ok(Controls {
        beta_s: [pi; 2],
        beta_v: [0.0; 2],
        beta_n: 0.0,
        e_s: w.e_s,
        e_v: w.e_v,
    })
}

/// Deterministic 5×5×5 grid over `(τ, v_1, v_2)` at unit wealth.
pub fn state_grid_125(s: &ScenarioConfig) -> Vec<(f64, f64, [f64; 2])> {
    let taus = [0.5, 2.0, 4.5, 7.0, s.market.horizon];
    let vs = [0.005, 0.02, 0.04, 0.08, 0.15];
    let mut out = Vec::with_capacity(125);
    for &t in &taus {
        for &a in &vs {
            for &b in &vs {
                out.push((t, 1.0, [a, b]));
            }
        }
    }
    out
}

/// 27 sampled states: 3 τ × 3 wealth levels × 3 variance pairs.
pub fn state_grid_27(s: &ScenarioConfig) -> Vec<(f64, f64, [f64; 2])> {
    let mut out = Vec::with_capacity(27);
    for &t in &[1.0, 5.0, s.market.horizon] {
        for &x in &[0.5, 1.0, 3.0] {
            for v in [[0.01, 0.03], [0.04, 0.01], [0.09, 0.06]] {
                out.push((t, x, v));
            }
        }
    }
    out
}

/// Largest relative residual of closed-form coefficients with their optimal
/// controls over a state set.
pub fn max_residual(vc: &ValueCoefficients, states: &[(f64, f64, [f64; 2])]) -> Result<f64> {
    let jf = value_closure(vc);
    let mut worst: f64 = 0.0;
    for &(tau, x, v) in states {
        let c = optimal_controls(vc, tau, v)?;
        let r = relative_residual(vc.scenario(), &jf, tau, x, v, &c);
        if !r.is_finite() {
            return Err(Error::Numeric(format!("non-finite HJB residual at tau = {tau}")));
        }
        worst = worst.max(r);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::JumpParams;
    use crate::riccati;

    fn baseline() -> ScenarioConfig {
        ScenarioConfig::from_toml_str(include_str!("../fixtures/baseline.toml")).unwrap().0
    }

    #[test]
    fn stencils_on_polynomial() {
        let j = |t: f64, x: f64, v: [f64; 2]| t * t * t + x * x * v[0] + v[1] * v[1] * x;
        let d = derivatives(j, 2.0, 1.5, [0.3, 0.2]);
        assert!((d.j_t + 12.0).abs() < 1e-9);
        assert!((d.j_x - (3.0 * 0.3 + 0.04)).abs() < 1e-9);
        assert!((d.j_xx - 0.6).abs() < 1e-7);
        assert!((d.j_v[0] - 2.25).abs() < 1e-9);
        assert!((d.j_vv[1] - 3.0).abs() < 1e-6);
        assert!((d.j_xv[0] - 3.0).abs() < 1e-8);
        assert!((d.j_xv[1] - 0.4).abs() < 1e-8);
    }

    #[test]
    fn complete_market_residual_small() {
        let s = baseline();
        let vc = ValueCoefficients::complete(&s).unwrap();
        let states: Vec<_> = state_grid_125(&s).into_iter().step_by(7).collect();
        let r = max_residual(&vc, &states).unwrap();
        assert!(r < 1e-6, "{r}");
    }

    #[test]
    fn wrong_value_function_has_large_residual() {
        let s = baseline();
        let vc = ValueCoefficients::complete(&s).unwrap();
        let jf = value_closure(&vc);
        let bad = |tau: f64, x: f64, v: [f64; 2]| jf(tau, x, v) * (1.0 + 0.1 * v[0]);
        let c = optimal_controls(&vc, 3.0, [0.04, 0.02]).unwrap();
        assert!(relative_residual(&s, &bad, 3.0, 1.0, [0.04, 0.02], &c) > 1e-4);
    }

    #[test]
    fn jump_residual_small() {
        let mut s = baseline();
        s.jumps = Some(JumpParams {
            jump_size: -0.15,
            nu_p: 0.1,
            nu_q: 0.3,
        });
        let vc = ValueCoefficients::jump(&s).unwrap();
        let states: Vec<_> = state_grid_125(&s).into_iter().step_by(11).collect();
        assert!(max_residual(&vc, &states).unwrap() < 1e-6);
        // dropping β^N breaks optimality
        let jf = value_closure(&vc);
        let mut c = optimal_controls(&vc, 4.0, [0.04, 0.02]).unwrap();
        c.beta_n = 0.0;
        let g = foc_gradient(&s, &jf, 4.0, 1.0, [0.04, 0.02], &c, ControlSet::Jump);
        assert!(g[4].abs() > 1e-4);
    }

    #[test]
    fn foc_at_complete_optimum() {
        let s = baseline();
        let vc = ValueCoefficients::complete(&s).unwrap();
        let jf = value_closure(&vc);
        for &(tau, x, v) in state_grid_27(&s).iter().step_by(5) {
            let c = optimal_controls(&vc, tau, v).unwrap();
            let g = foc_gradient(&s, &jf, tau, x, v, &c, ControlSet::Complete);
            assert_eq!(g.len(), 8);
            assert!(g.iter().all(|d| d.abs() < 1e-5), "{g:?}");
        }
    }

    #[test]
    fn foc_at_incomplete_optimum() {
        let mut s = baseline();
        s.factors[1] = s.factors[0];
        let vc = riccati::solve_incomplete_system(&s).unwrap();
        let jf = value_closure(&vc);
        let (tau, x, v) = (5.0, 1.0, [0.04, 0.02]);
        let c = optimal_controls_incomplete(&vc, tau, v).unwrap();
        let g = foc_gradient(&s, &jf, tau, x, v, &c, ControlSet::StockOnly);
        assert!(g.iter().all(|d| d.abs() < 1e-5), "{g:?}");
        let mut off = c;
        off.beta_s = [c.beta_s[0] + 0.05; 2];
        let g = foc_gradient(&s, &jf, tau, x, v, &off, ControlSet::StockOnly);
        assert!(g[0].abs() > 1e-4);
    }
}
