//! Indirect utilities and wealth-equivalent utility losses.

use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};
use crate::model::ScenarioConfig;
use crate::riccati::{self, PhiOverride, Regime, StrategyExposures, ValueCoefficients};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndirectUtilitySample {
    pub t: f64,
    pub x: f64,
    pub v1: f64,
    pub v2: f64,
    pub value: f64,
}

/// `J(t, x, v) = x^{1−γ}/(1−γ) · exp(H_1 v_1 + H_2 v_2 + h)` at `τ = T − t`.
pub fn indirect_utility(vc: &ValueCoefficients, t: f64, x: f64, v1: f64, v2: f64) -> Result<IndirectUtilitySample> {
    let tau = vc.scenario().market.horizon - t;
    if !(tau >= 0.0) {
        return Err(Error::Domain(format!("t = {t} lies beyond the horizon")));
    }
    let value = vc.value(tau, x, [v1, v2])?;
    Ok(IndirectUtilitySample { t, x, v1, v2, value })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategyTag {
    /// Ignores ambiguity about the second factor.
    Pi1,
    /// Ignores ambiguity about the first factor.
    Pi2,
    /// Trades the stock only.
    Pi3,
    /// Ignores the jump risk.
    JumpIgnore,
}

impl StrategyTag {
    pub const ALL: [StrategyTag; 4] = [StrategyTag::Pi1, StrategyTag::Pi2, StrategyTag::Pi3, StrategyTag::JumpIgnore];

    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "pi1" => Ok(Self::Pi1),
            "pi2" => Ok(Self::Pi2),
            "pi3" => Ok(Self::Pi3),
            "jump-ignore" | "jump_ignore" => Ok(Self::JumpIgnore),
            _ => Err(Error::Configuration(format!("unknown strategy `{name}` (pi1, pi2, pi3, jump-ignore)"))),
        }
    }
}

impl fmt::Display for StrategyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pi1 => "pi1",
            Self::Pi2 => "pi2",
            Self::Pi3 => "pi3",
            Self::JumpIgnore => "jump-ignore",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityLossReport {
    pub strategy: StrategyTag,
    pub tau: f64,
    pub v: [f64; 2],
    pub d_h: [f64; 2],
    pub d_small_h: f64,
    pub loss: f64,
}

/// `L = 1 − exp{(ΔH_1 v_1 + ΔH_2 v_2 + Δh)/(1−γ)}`.
pub fn wealth_equivalent_loss(gamma: f64, d_h: [f64; 2], d_small_h: f64, v: [f64; 2]) -> f64 {
    -((d_h[0] * v[0] + d_h[1] * v[1] + d_small_h) / (1.0 - gamma)).exp_m1()
}

/// Optimal and suboptimal coefficients compared by a loss report.
#[derive(Debug, Clone)]
pub struct LossPair {
    pub strategy: StrategyTag,
    pub optimal: ValueCoefficients,
    pub suboptimal: ValueCoefficients,
}

impl LossPair {
    pub fn new(s: &ScenarioConfig, tag: StrategyTag) -> Result<Self> {
        let (optimal, suboptimal) = match tag {
            StrategyTag::Pi1 | StrategyTag::Pi2 => {
                if s.jumps.is_some() {
                    // TODO: ambiguity-ignoring strategies with jumps need the jump-regime optimum as reference
                    return Err(Error::Configuration(format!("{tag} is defined for the jump-free market")));
                }
                let k = if tag == StrategyTag::Pi1 { 1 } else { 0 };
                let mut naive = *s;
                naive.prefs.phi_s[k] = 0.0;
                naive.prefs.phi_v[k] = 0.0;
                let strategy = StrategyExposures::optimal_for(&naive)?;
                (
                    ValueCoefficients::complete(s)?,
                    riccati::solve_suboptimal_system(s, &strategy, None, None)?,
                )
            }
            StrategyTag::Pi3 => {
                if s.jumps.is_some() {
                    return Err(Error::Configuration("pi3 is defined for the jump-free market".into()));
                }
                (ValueCoefficients::complete(s)?, riccati::solve_incomplete_system(s)?)
            }
            StrategyTag::JumpIgnore => {
                if s.jumps.is_none() {
                    return Err(Error::Configuration("jump-ignore loss needs a [jumps] section".into()));
                }
                let strategy = StrategyExposures::optimal_for(s)?;
                (
                    ValueCoefficients::jump(s)?,
                    riccati::solve_suboptimal_system(s, &strategy, None, Some(0.0))?,
                )
            }
        };
        Ok(Self {
            strategy: tag,
            optimal,
            suboptimal,
        })
    }

    pub fn report(&self, tau: f64, v: [f64; 2]) -> Result<UtilityLossReport> {
        if !(v[0] >= 0.0 && v[1] >= 0.0) {
            return Err(Error::Domain(format!("variances must be >= 0, got ({}, {})", v[0], v[1])));
        }
        let (h_opt, s_opt) = self.optimal.eval(tau)?;
        let (h_sub, s_sub) = self.suboptimal.eval(tau)?;
        let d_h = [h_sub[0] - h_opt[0], h_sub[1] - h_opt[1]];
        let d_small_h = s_sub - s_opt;
        Ok(UtilityLossReport {
            strategy: self.strategy,
            tau,
            v,
            d_h,
            d_small_h,
            loss: wealth_equivalent_loss(self.optimal.scenario().prefs.gamma, d_h, d_small_h, v),
        })
    }
}

/// Loss at `τ = T` and `v = V(0)`.
pub fn utility_loss(s: &ScenarioConfig, tag: StrategyTag) -> Result<UtilityLossReport> {
    if tag == StrategyTag::JumpIgnore {
        return jump_ignore_loss(s);
    }
    LossPair::new(s, tag)?.report(s.market.horizon, [s.factors[0].v0, s.factors[1].v0])
}

pub fn jump_ignore_loss(s: &ScenarioConfig) -> Result<UtilityLossReport> {
    LossPair::new(s, StrategyTag::JumpIgnore)?.report(s.market.horizon, [s.factors[0].v0, s.factors[1].v0])
}

/// Loss of the literal reading in which the ignored factor's φ is zeroed both
/// in the strategy and in the evaluation. This compares the optimum of a
/// less ambiguous problem with the true optimum, so it is not a welfare loss.
pub fn literal_ignore_loss(s: &ScenarioConfig, tag: StrategyTag) -> Result<UtilityLossReport> {
    let k = match tag {
        StrategyTag::Pi1 => 1,
        StrategyTag::Pi2 => 0,
        _ => return Err(Error::Configuration(format!("{tag} does not ignore a factor's ambiguity"))),
    };
    let mut naive = *s;
    naive.prefs.phi_s[k] = 0.0;
    naive.prefs.phi_v[k] = 0.0;
    let strategy = StrategyExposures::optimal_for(&naive)?;
    let phi = PhiOverride {
        phi_s: naive.prefs.phi_s,
        phi_v: naive.prefs.phi_v,
    };
    let pair = LossPair {
        strategy: tag,
        optimal: ValueCoefficients::complete(s)?,
        suboptimal: riccati::solve_suboptimal_system(s, &strategy, Some(phi), None)?,
    };
    pair.report(s.market.horizon, [s.factors[0].v0, s.factors[1].v0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositivityAudit {
    pub holds: bool,
    /// Smallest `H^Π_j(τ) − H_j(τ)` per factor over the grid.
    pub min_gap: [f64; 2],
    /// τ at which each minimum occurs.
    pub argmin: [f64; 2],
}

/// Checks `H^Π_j(τ) ≥ H_j(τ)` on a uniform 1,000-point grid over `[0, T]`.
pub fn positivity_audit(pair: &LossPair) -> Result<PositivityAudit> {
    const N: usize = 1000;
    const SLACK: f64 = 1e-12;
    let horizon = pair.optimal.scenario().market.horizon;
    let mut min_gap = [f64::INFINITY; 2];
    let mut argmin = [0.0; 2];
    for i in 0..N {
        let tau = horizon * i as f64 / (N - 1) as f64;
        let (ho, _) = pair.optimal.eval(tau)?;
        let (hs, _) = pair.suboptimal.eval(tau)?;
        for j in 0..2 {
            let gap = hs[j] - ho[j];
            if gap < min_gap[j] {
                min_gap[j] = gap;
                argmin[j] = tau;
            }
        }
    }
    Ok(PositivityAudit {
        holds: min_gap.iter().all(|&g| g >= -SLACK),
        min_gap,
        argmin,
    })
}

pub const LOSS_CSV_HEADER: [&str; 8] = ["strategy", "tau", "v1", "v2", "dH1", "dH2", "dh", "loss"];

pub fn write_loss_csv<W: Write>(out: W, rows: &[UtilityLossReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(LOSS_CSV_HEADER).map_err(io)?;
    for r in rows {
        w.write_record([
            r.strategy.to_string(),
            r.tau.to_string(),
            r.v[0].to_string(),
            r.v[1].to_string(),
            r.d_h[0].to_string(),
            r.d_h[1].to_string(),
            r.d_small_h.to_string(),
            r.loss.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Whether the coefficients were produced for the given regime.
pub fn expect_regime(vc: &ValueCoefficients, regime: Regime) -> Result<()> {
    if vc.regime != regime {
        return Err(Error::Configuration(format!("expected {regime:?} coefficients, got {:?}", vc.regime)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::JumpParams;

    fn baseline() -> ScenarioConfig {
        ScenarioConfig::from_toml_str(include_str!("../fixtures/baseline.toml")).unwrap().0
    }

    fn with_jumps(nu_p: f64, nu_q: f64) -> ScenarioConfig {
        let mut s = baseline();
        s.jumps = Some(JumpParams {
            jump_size: -0.15,
            nu_p,
            nu_q,
        });
        s
    }

    #[test]
    fn terminal_utility() {
        let s = baseline();
        let vc = ValueCoefficients::complete(&s).unwrap();
        let j = indirect_utility(&vc, s.market.horizon, 1.0, 0.04, 0.01).unwrap();
        assert!((j.value + 1.0 / 3.0).abs() < 1e-15);
        let j = indirect_utility(&vc, s.market.horizon, 2.0, 0.04, 0.01).unwrap();
        assert!((j.value - 2f64.powf(-3.0) / -3.0).abs() < 1e-15);
        assert!(matches!(indirect_utility(&vc, 0.0, 0.0, 0.04, 0.01), Err(Error::Domain(_))));
    }

    #[test]
    fn homogeneity_and_sign() {
        let s = baseline();
        let vc = ValueCoefficients::complete(&s).unwrap();
        let a = indirect_utility(&vc, 2.0, 1.3, 0.04, 0.01).unwrap().value;
        let b = indirect_utility(&vc, 2.0, 2.6, 0.04, 0.01).unwrap().value;
        assert!(a < 0.0);
        assert!((b / a - 2f64.powf(-3.0)).abs() < 1e-13);
    }

    #[test]
    fn zero_difference_zero_loss() {
        assert_eq!(wealth_equivalent_loss(4.0, [0.0; 2], 0.0, [0.04, 0.01]), 0.0);
        // exp(−3·ln 0.9) = 0.9^{−3}: H^Π exponent equal to (1−γ)ln(1−L)
        let l = wealth_equivalent_loss(4.0, [0.0; 2], -3.0 * 0.9f64.ln(), [0.0; 2]);
        assert!((l - 0.1).abs() < 1e-15);
    }

    #[test]
    fn baseline_losses_positive() {
        let s = baseline();
        for tag in [StrategyTag::Pi1, StrategyTag::Pi2, StrategyTag::Pi3] {
            let r = utility_loss(&s, tag).unwrap();
            assert!(r.loss > 0.0 && r.loss < 1.0, "{tag}: {}", r.loss);
        }
    }

    #[test]
    fn ignored_factor_only_moves_its_own_coefficient() {
        let s = baseline();
        let r = utility_loss(&s, StrategyTag::Pi1).unwrap();
        assert!(r.d_h[0].abs() < 1e-9);
        assert!(r.d_h[1] > 0.0);
    }

    #[test]
    fn literal_reading_is_a_gain() {
        let s = baseline();
        let r = literal_ignore_loss(&s, StrategyTag::Pi1).unwrap();
        assert!(r.loss < 0.0);
    }

    #[test]
    fn no_ambiguity_means_no_pi1_loss() {
        let s = baseline().with_phi([0.0; 2], [0.0; 2]);
        let pair = LossPair::new(&s, StrategyTag::Pi1).unwrap();
        let audit = positivity_audit(&pair).unwrap();
        assert!(audit.holds);
        assert!(audit.min_gap[1].abs() < 1e-10);
        assert!(pair.report(10.0, [0.04, 1e-4]).unwrap().loss.abs() < 1e-10);
    }

    #[test]
    fn audits_hold_on_baseline() {
        let s = baseline();
        for tag in [StrategyTag::Pi1, StrategyTag::Pi3] {
            let pair = LossPair::new(&s, tag).unwrap();
            let audit = positivity_audit(&pair).unwrap();
            assert!(audit.holds, "{tag}: {audit:?}");
        }
        let pair = LossPair::new(&s, StrategyTag::Pi1).unwrap();
        let (h_o, _) = pair.optimal.eval(1.0).unwrap();
        let (h_s, _) = pair.suboptimal.eval(1.0).unwrap();
        assert!(h_s[1] - h_o[1] > 0.0);
    }

    #[test]
    fn jump_ignore_loss_vanishes_without_premium() {
        let r = jump_ignore_loss(&with_jumps(0.2, 0.2)).unwrap();
        assert!(r.loss.abs() < 1e-10, "{}", r.loss);
        let r = jump_ignore_loss(&with_jumps(0.2, 0.2).with_phi([1.0; 2], [1.5; 2])).unwrap();
        assert!(r.loss.abs() < 1e-10);
        assert!(jump_ignore_loss(&with_jumps(0.1, 0.3)).unwrap().loss > 0.0);
        assert!(jump_ignore_loss(&with_jumps(0.3, 0.1)).unwrap().loss > 0.0);
        assert!(matches!(jump_ignore_loss(&baseline()), Err(Error::Configuration(_))));
    }

    #[test]
    fn loss_csv_layout() {
        let s = baseline();
        let rows = vec![utility_loss(&s, StrategyTag::Pi3).unwrap()];
        let mut buf = Vec::new();
        write_loss_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("strategy,tau,v1,v2,dH1,dH2,dh,loss\npi3,10,"));
    }

    #[test]
    fn tags_round_trip() {
        for t in StrategyTag::ALL {
            assert_eq!(StrategyTag::parse(&t.to_string()).unwrap(), t);
        }
        assert!(StrategyTag::parse("pi4").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            #[test]
            fn losses_in_unit_interval(
                phi_s in 0.0f64..1.5,
                phi_v in 0.0f64..1.5,
                v1 in 0.0f64..0.2,
                v2 in 0.0f64..0.2,
                tau in 0.5f64..10.0,
            ) {
                let s = baseline().with_phi([phi_s, phi_s], [phi_v, phi_v]);
                for tag in [StrategyTag::Pi1, StrategyTag::Pi2, StrategyTag::Pi3] {
                    let l = LossPair::new(&s, tag).unwrap().report(tau, [v1, v2]).unwrap().loss;
                    prop_assert!((-1e-10..1.0).contains(&l), "{} {}", tag, l);
                }
            }
        }
    }
}
