//! Optimal exposures, worst-case distortions and portfolio weights.
//!
//! Exposures are wealth loadings on the noises: `β^S_j` on `W_j`, `β^V_j` on
//! `Z_j` and `β^N` on the price jump. The worst-case drift distortions `e`
//! scale with `√v_j`.

use nalgebra::DMatrix;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::ScenarioConfig;
use crate::riccati::{self, Regime, ValueCoefficients};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exposures {
    pub beta_s: [f64; 2],
    pub beta_v: [f64; 2],
    pub beta_n: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorstCase {
    pub e_s: [f64; 2],
    pub e_v: [f64; 2],
    pub v: [f64; 2],
}

/// Distortions per unit `√v_j`, i.e. `e_j/√v_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Loadings {
    pub q_s: [f64; 2],
    pub q_v: [f64; 2],
}

impl Loadings {
    pub fn at(&self, v: [f64; 2]) -> Result<WorstCase> {
        check_variance(v)?;
        let r = [v[0].sqrt(), v[1].sqrt()];
        Ok(WorstCase {
            e_s: [self.q_s[0] * r[0], self.q_s[1] * r[1]],
            e_v: [self.q_v[0] * r[0], self.q_v[1] * r[1]],
            v,
        })
    }
}

fn check_variance(v: [f64; 2]) -> Result<()> {
    if !(v[0] >= 0.0 && v[1] >= 0.0) {
        return Err(Error::Domain(format!("variances must be >= 0, got ({}, {})", v[0], v[1])));
    }
    Ok(())
}

/// Optimal `β^S_j`, `β^V_j` given the value coefficients `H_j(τ)`.
pub fn exposures_from_h(s: &ScenarioConfig, hh: [f64; 2]) -> Exposures {
    let g = s.prefs.gamma;
    let g1 = 1.0 - g;
    let mut out = Exposures {
        beta_s: [0.0; 2],
        beta_v: [0.0; 2],
        beta_n: None,
    };
    for j in 0..2 {
        let f = &s.factors[j];
        let (ps, pv) = (s.prefs.phi_s[j], s.prefs.phi_v[j]);
        out.beta_s[j] = f.lambda_risk / (g + ps) + (g1 - ps) * f.sigma_v * f.rho * hh[j] / (g1 * (g + ps));
        out.beta_v[j] = f.mu_risk / (g + pv) + (g1 - pv) * f.sigma_v * f.rho_bar() * hh[j] / (g1 * (g + pv));
    }
    out
}

/// Worst-case loadings `q = e/√v` given `H_j(τ)`.
pub fn loadings_from_h(s: &ScenarioConfig, hh: [f64; 2]) -> Loadings {
    let g = s.prefs.gamma;
    let g1 = 1.0 - g;
    let mut out = Loadings {
        q_s: [0.0; 2],
        q_v: [0.0; 2],
    };
    for j in 0..2 {
        let f = &s.factors[j];
        let (ps, pv) = (s.prefs.phi_s[j], s.prefs.phi_v[j]);
        out.q_s[j] = (f.lambda_risk / (g + ps) + f.sigma_v * f.rho * hh[j] / (g1 * (g + ps))) * ps;
        out.q_v[j] = (f.mu_risk / (g + pv) + f.sigma_v * f.rho_bar() * hh[j] / (g1 * (g + pv))) * pv;
    }
    out
}

/// Incomplete-market loadings given `H̄_j(τ)`: no volatility premium is earned.
pub fn incomplete_loadings_from_h(s: &ScenarioConfig, hh: [f64; 2]) -> Loadings {
    let g = s.prefs.gamma;
    let g1 = 1.0 - g;
    let mut out = Loadings {
        q_s: [0.0; 2],
        q_v: [0.0; 2],
    };
    for j in 0..2 {
        let f = &s.factors[j];
        let (ps, pv) = (s.prefs.phi_s[j], s.prefs.phi_v[j]);
        out.q_s[j] = (f.lambda_risk / (g + ps) + f.sigma_v * f.rho * hh[j] / (g1 * (g + ps))) * ps;
        out.q_v[j] = f.sigma_v * f.rho_bar() * hh[j] / g1 * pv;
    }
    out
}

fn h_pair(vc: &ValueCoefficients, tau: f64) -> Result<[f64; 2]> {
    Ok([vc.H(0, tau)?, vc.H(1, tau)?])
}

/// Optimal exposures for complete-market or jump-regime coefficients.
pub fn optimal_exposures(vc: &ValueCoefficients, tau: f64) -> Result<Exposures> {
    let s = vc.scenario();
    let mut out = exposures_from_h(s, h_pair(vc, tau)?);
    match vc.regime {
        Regime::Complete => {}
        Regime::Jump => out.beta_n = Some(jump_exposure(s)?),
        other => return Err(Error::Configuration(format!("optimal exposures need a complete-market regime, got {other:?}"))),
    }
    Ok(out)
}

pub fn optimal_exposures_complete(s: &ScenarioConfig, tau: f64) -> Result<Exposures> {
    optimal_exposures(&ValueCoefficients::complete(s)?, tau)
}

/// Worst-case distortions for complete-market or jump-regime coefficients.
pub fn worst_case(vc: &ValueCoefficients, tau: f64, v: [f64; 2]) -> Result<WorstCase> {
    check_variance(v)?;
    if !matches!(vc.regime, Regime::Complete | Regime::Jump) {
        return Err(Error::Configuration(format!("worst case needs a complete-market regime, got {:?}", vc.regime)));
    }
    loadings_from_h(vc.scenario(), h_pair(vc, tau)?).at(v)
}

pub fn worst_case_complete(s: &ScenarioConfig, tau: f64, v1: f64, v2: f64) -> Result<WorstCase> {
    worst_case(&ValueCoefficients::complete(s)?, tau, [v1, v2])
}

/// `β^N = ((ν^P/ν^Q)^{1/γ} − 1)/j^S`.
pub fn jump_exposure(s: &ScenarioConfig) -> Result<f64> {
    let z = riccati::jump_wealth_ratio(s)?;
    let js = s.jumps.unwrap().jump_size;
    if js == 0.0 {
        return Err(Error::param("jumps.j_s", "must be non-zero to hedge jump risk"));
    }
    Ok((z - 1.0) / js)
}

pub fn jump_exposures(s: &ScenarioConfig, tau: f64) -> Result<Exposures> {
    optimal_exposures(&ValueCoefficients::jump(s)?, tau)
}

/// Conditions under which the stock-only investor's weight is affine in `H̄_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    /// Only factor `j` (0-based) drives the stock.
    SingleFactor(usize),
    /// Both factors have identical parameters and ambiguity preferences.
    IdenticalFactors,
}

impl Reduction {
    pub fn check(&self, s: &ScenarioConfig) -> Result<()> {
        match *self {
            Reduction::SingleFactor(j) if j < 2 => Ok(()),
            Reduction::SingleFactor(j) => Err(Error::Configuration(format!("factor index {j} out of range"))),
            Reduction::IdenticalFactors => {
                let p = &s.prefs;
                if s.factors[0] == s.factors[1] && p.phi_s[0] == p.phi_s[1] && p.phi_v[0] == p.phi_v[1] {
                    Ok(())
                } else {
                    Err(Error::Configuration(
                        "factors differ: the stock weight is state dependent (use the pointwise evaluator)".into(),
                    ))
                }
            }
        }
    }

    fn factor(&self) -> usize {
        match *self {
            Reduction::SingleFactor(j) => j,
            Reduction::IdenticalFactors => 0,
        }
    }
}

/// Stock weight of the stock-only investor under a reduction:
/// `π^S = π_j(H̄_j(τ))`. `incomplete` must come from
/// [`riccati::solve_incomplete_system`].
pub fn optimal_stock_weight_incomplete(incomplete: &ValueCoefficients, tau: f64, reduction: Reduction) -> Result<f64> {
    if incomplete.regime != Regime::Incomplete {
        return Err(Error::Configuration("stock weight needs incomplete-market coefficients".into()));
    }
    let s = incomplete.scenario();
    reduction.check(s)?;
    let j = reduction.factor();
    Ok(riccati::incomplete_pi(s, j, incomplete.H(j, tau)?))
}

/// General state-dependent stock weight
/// `Σ_j v_j[(1−γ)(λ_j + ρ_jσ_jH̄_j) − φ^S_j ρ_jσ_j H̄_j] / Σ_j (1−γ) v_j (γ + φ^S_j)`.
/// A pointwise evaluation only; it does not come with a value function.
pub fn general_pi_s_pointwise(s: &ScenarioConfig, hbar: [f64; 2], v1: f64, v2: f64) -> Result<f64> {
    check_variance([v1, v2])?;
    if v1 + v2 == 0.0 {
        return Err(Error::Domain("v1 + v2 = 0 leaves the stock weight undefined".into()));
    }
    let g = s.prefs.gamma;
    let g1 = 1.0 - g;
    let v = [v1, v2];
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..2 {
        let f = &s.factors[j];
        let sr = f.sigma_v * f.rho;
        let ps = s.prefs.phi_s[j];
        num += g1 * v[j] * (f.lambda_risk + sr * hbar[j]) - ps * sr * v[j] * hbar[j];
        den += g1 * v[j] * (g + ps);
    }
    Ok(num / den)
}

/// Worst case for the stock-only investor.
pub fn worst_case_incomplete(incomplete: &ValueCoefficients, tau: f64, v: [f64; 2]) -> Result<WorstCase> {
    check_variance(v)?;
    if incomplete.regime != Regime::Incomplete {
        return Err(Error::Configuration("worst case needs incomplete-market coefficients".into()));
    }
    incomplete_loadings_from_h(incomplete.scenario(), h_pair(incomplete, tau)?).at(v)
}

/// Partial derivatives of a value function at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueDerivatives {
    pub x: f64,
    pub j: f64,
    pub j_x: f64,
    pub j_v: [f64; 2],
}

/// Worst case against arbitrary exposures:
/// `e^S_j = Ψ^S_j (xβ^S_j J_x + ρ_jσ_j J_{v_j}) √v_j`,
/// `e^V_j = Ψ^V_j (xβ^V_j J_x + √(1−ρ_j²)σ_j J_{v_j}) √v_j`, with
/// `Ψ = φ/((1−γ)J)`.
pub fn general_suboptimal_worst_case(
    s: &ScenarioConfig,
    jd: &ValueDerivatives,
    exposures: &Exposures,
    v: [f64; 2],
    phi_s: [f64; 2],
    phi_v: [f64; 2],
) -> Result<WorstCase> {
    check_variance(v)?;
    if jd.j == 0.0 || !jd.j.is_finite() {
        return Err(Error::Domain("value function must be finite and non-zero".into()));
    }
    let g1 = 1.0 - s.prefs.gamma;
    let mut out = WorstCase {
        e_s: [0.0; 2],
        e_v: [0.0; 2],
        v,
    };
    for j in 0..2 {
        let f = &s.factors[j];
        let rv = v[j].sqrt();
        let psi_s = phi_s[j] / (g1 * jd.j);
        let psi_v = phi_v[j] / (g1 * jd.j);
        out.e_s[j] = psi_s * (jd.x * exposures.beta_s[j] * jd.j_x + f.rho * f.sigma_v * jd.j_v[j]) * rv;
        out.e_v[j] = psi_v * (jd.x * exposures.beta_v[j] * jd.j_x + f.rho_bar() * f.sigma_v * jd.j_v[j]) * rv;
    }
    Ok(out)
}

/// One traded option: price, dollar delta `S·∂g/∂S`, vegas `∂g/∂V_j` and,
/// in the jump regime, the price change on a jump.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct OptionGreeks {
    pub price: f64,
    pub delta: f64,
    pub vega1: f64,
    pub vega2: f64,
    pub jump_delta: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct GreeksRow {
    #[allow(dead_code)]
    option: String,
    price: f64,
    delta: f64,
    vega1: f64,
    vega2: f64,
    #[serde(default)]
    jump_delta: Option<f64>,
}

/// Parses `option,price,delta,vega1,vega2[,jump_delta]` CSV text.
pub fn parse_greeks_csv(text: &str) -> Result<Vec<OptionGreeks>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<GreeksRow>().enumerate() {
        let row = row.map_err(|e| Error::Schema(format!("greeks row {}: {e}", i + 1)))?;
        if !(row.price > 0.0) {
            return Err(Error::param(format!("greeks[{i}].price"), "must be > 0"));
        }
        out.push(OptionGreeks {
            price: row.price,
            delta: row.delta,
            vega1: row.vega1,
            vega2: row.vega2,
            jump_delta: row.jump_delta,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioWeights {
    pub pi_s: f64,
    pub pi_o: Vec<f64>,
    pub cash: f64,
}

/// Loading matrix mapping `(π^S, π^1, …)` to the exposures
/// `(β^S_1, β^S_2, β^V_1, β^V_2[, β^N])`.
pub fn exposure_matrix(s: &ScenarioConfig, greeks: &[OptionGreeks], with_jumps: bool) -> Result<DMatrix<f64>> {
    let n = if with_jumps { 5 } else { 4 };
    if greeks.len() != n - 1 {
        return Err(Error::Configuration(format!(
            "{} options supplied, the {} regime needs {}",
            greeks.len(),
            if with_jumps { "jump" } else { "complete" },
            n - 1
        )));
    }
    let mut a = DMatrix::zeros(n, n);
    a[(0, 0)] = 1.0;
    a[(1, 0)] = 1.0;
    for (i, o) in greeks.iter().enumerate() {
        if !(o.price > 0.0) {
            return Err(Error::param(format!("greeks[{i}].price"), "must be > 0"));
        }
        let vega = [o.vega1, o.vega2];
        for j in 0..2 {
            let f = &s.factors[j];
            a[(j, i + 1)] = (o.delta + f.sigma_v * f.rho * vega[j]) / o.price;
            a[(2 + j, i + 1)] = f.sigma_v * f.rho_bar() * vega[j] / o.price;
        }
    }
    if with_jumps {
        let js = s
            .jumps
            .ok_or_else(|| Error::Configuration("jump weights need a [jumps] section".into()))?
            .jump_size;
        if js == 0.0 {
            return Err(Error::param("jumps.j_s", "must be non-zero"));
        }
        a[(4, 0)] = 1.0;
        for (i, o) in greeks.iter().enumerate() {
            let dg = o
                .jump_delta
                .ok_or_else(|| Error::Schema(format!("greeks row {}: jump_delta required in the jump regime", i + 1)))?;
            a[(4, i + 1)] = dg / (js * o.price);
        }
    }
    Ok(a)
}

fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Solves `A π = β` for `π` with an LU factorization; rejects matrices whose
/// 1-norm condition number exceeds 1e12.
pub fn solve_weights(a: &DMatrix<f64>, beta: &[f64]) -> Result<Vec<f64>> {
    let lu = a.clone().lu();
    let inv = lu.try_inverse().ok_or(Error::MarketIncompleteness { condition: f64::INFINITY })?;
    let condition = norm1(a) * norm1(&inv);
    if !(condition <= 1e12) {
        return Err(Error::MarketIncompleteness { condition });
    }
    let rhs = nalgebra::DVector::from_column_slice(beta);
    let x = lu_solve(a, &rhs)?;
    Ok(x.iter().copied().collect())
}

fn lu_solve(a: &DMatrix<f64>, rhs: &nalgebra::DVector<f64>) -> Result<nalgebra::DVector<f64>> {
    a.clone()
        .lu()
        .solve(rhs)
        .ok_or(Error::MarketIncompleteness { condition: f64::INFINITY })
}

/// `β^S_1 − (ρ_1/ρ̄_1)β^V_1 − β^S_2 + (ρ_2/ρ̄_2)β^V_2`.
///
/// Stock and options priced off `(S, V_1, V_2)` load on the two stock noises
/// only through a common delta, so every traded portfolio has zero defect and
/// the loading matrix has rank at most three. Exposures with a non-zero defect
/// cannot be replicated, whatever greeks are supplied.
pub fn spanning_defect(s: &ScenarioConfig, e: &Exposures) -> f64 {
    let k = |j: usize| s.factors[j].rho / s.factors[j].rho_bar();
    e.beta_s[0] - k(0) * e.beta_v[0] - e.beta_s[1] + k(1) * e.beta_v[1]
}

/// Portfolio weights implementing the exposures with the stock and the options.
pub fn exposures_to_weights(exposures: &Exposures, greeks: &[OptionGreeks], s: &ScenarioConfig) -> Result<PortfolioWeights> {
    let with_jumps = exposures.beta_n.is_some();
    let a = exposure_matrix(s, greeks, with_jumps)?;
    let mut beta = vec![exposures.beta_s[0], exposures.beta_s[1], exposures.beta_v[0], exposures.beta_v[1]];
    if let Some(bn) = exposures.beta_n {
        beta.push(bn);
    }
    let pi = solve_weights(&a, &beta)?;
    let pi_o = pi[1..].to_vec();
    let cash = 1.0 - pi[0] - pi_o.iter().sum::<f64>();
    Ok(PortfolioWeights { pi_s: pi[0], pi_o, cash })
}
