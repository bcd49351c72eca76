//! Market, volatility-factor and preference parameters.
//!
//! The stock carries two variance factors `V_j` with CIR dynamics
//!
//! ```text
//! dS/S  = (r + λ1 V1 + λ2 V2) dt + √V1 dW1 + √V2 dW2
//! dV_j  = κ_j (θ_j − V_j) dt + σ_j √V_j (ρ_j dW_j + √(1−ρ_j²) dZ_j)
//! ```
//!
//! and the investor has CRRA utility with risk aversion `γ > 1` plus
//! ambiguity aversion `φ^S_j`, `φ^V_j` towards the stock and volatility noise.
//! A [`ScenarioConfig`] bundles everything and is immutable once built.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of one CIR variance factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorParams {
    /// Mean-reversion speed κ (1/years).
    pub kappa: f64,
    /// Long-run variance θ.
    pub theta: f64,
    /// Volatility of variance σ. Zero gives a deterministic variance path.
    pub sigma_v: f64,
    /// Correlation ρ between the stock noise and the factor.
    pub rho: f64,
    /// Stock risk premium coefficient λ.
    pub lambda_risk: f64,
    /// Volatility risk premium coefficient μ.
    pub mu_risk: f64,
    /// Initial variance V(0).
    pub v0: f64,
}

impl FactorParams {
    /// √(1 − ρ²), the loading of the factor on its private noise.
    pub fn rho_bar(&self) -> f64 {
        (1.0 - self.rho * self.rho).max(0.0).sqrt()
    }

    /// Mean of V(t): θ + (V0 − θ) e^{−κt}.
    pub fn mean_variance(&self, t: f64) -> f64 {
        self.theta + (self.v0 - self.theta) * (-self.kappa * t).exp()
    }

    fn check(&self, prefix: &str) -> Result<()> {
        let finite = [
            ("kappa", self.kappa),
            ("theta", self.theta),
            ("sigma", self.sigma_v),
            ("rho", self.rho),
            ("lambda", self.lambda_risk),
            ("mu", self.mu_risk),
            ("v0", self.v0),
        ];
        for (name, value) in finite {
            if !value.is_finite() {
                return Err(Error::param(format!("{prefix}.{name}"), "must be finite"));
            }
        }
        if self.kappa <= 0.0 {
            return Err(Error::param(format!("{prefix}.kappa"), "must be > 0"));
        }
        if self.theta <= 0.0 {
            return Err(Error::param(format!("{prefix}.theta"), "must be > 0"));
        }
        if self.sigma_v < 0.0 {
            return Err(Error::param(format!("{prefix}.sigma"), "must be >= 0"));
        }
        if self.rho.abs() > 1.0 {
            return Err(Error::param(format!("{prefix}.rho"), "must lie in [-1, 1]"));
        }
        if self.v0 < 0.0 {
            return Err(Error::param(format!("{prefix}.v0"), "must be >= 0"));
        }
        Ok(())
    }
}

/// Money-market rate and investment horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub r: f64,
    pub horizon: f64,
}

/// Risk aversion and the four ambiguity-aversion parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityPrefs {
    pub gamma: f64,
    /// φ^S_1, φ^S_2.
    pub phi_s: [f64; 2],
    /// φ^V_1, φ^V_2.
    pub phi_v: [f64; 2],
}

impl AmbiguityPrefs {
    pub fn non_robust(gamma: f64) -> Self {
        Self {
            gamma,
            phi_s: [0.0; 2],
            phi_v: [0.0; 2],
        }
    }

    pub fn is_non_robust(&self) -> bool {
        self.phi_s.iter().chain(self.phi_v.iter()).all(|&p| p == 0.0)
    }
}

/// Price jumps of constant relative size with intensity ν(V1 + V2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpParams {
    /// Relative jump size j^S (> −1).
    pub jump_size: f64,
    /// Physical intensity coefficient ν^P.
    pub nu_p: f64,
    /// Risk-neutral intensity coefficient ν^Q.
    pub nu_q: f64,
}

/// Correlation between the two stock Brownian motions W1 and W2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSpec {
    pub rho_w: f64,
}

/// Fully validated parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub market: MarketParams,
    pub factors: [FactorParams; 2],
    pub prefs: AmbiguityPrefs,
    pub jumps: Option<JumpParams>,
    pub correlation: Option<CorrelationSpec>,
}

/// Non-fatal admissibility diagnostics attached to a scenario.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub feller: [bool; 2],
    pub novikov: [bool; 2],
    pub warnings: Vec<String>,
}

/// 2κθ ≥ σ²: the variance factor stays strictly positive.
pub fn validate_feller(factor: &FactorParams) -> bool {
    2.0 * factor.kappa * factor.theta >= factor.sigma_v * factor.sigma_v
}

/// Sufficient condition for the worst-case density to be a true martingale,
/// checked per factor.
pub fn validate_novikov(scenario: &ScenarioConfig) -> [bool; 2] {
    let gamma = scenario.prefs.gamma;
    std::array::from_fn(|j| {
        let f = &scenario.factors[j];
        let ps = scenario.prefs.phi_s[j];
        let pv = scenario.prefs.phi_v[j];
        let s2 = f.sigma_v * f.sigma_v;
        let lhs = (ps * f.lambda_risk).powi(2) * s2 / (gamma + ps).powi(2)
            + (pv * f.mu_risk).powi(2) * s2 / (gamma + pv).powi(2);
        lhs <= f.kappa * f.kappa
    })
}

impl ScenarioConfig {
    /// Checks the hard invariants and returns the warning report.
    pub fn validate(&self) -> Result<ValidationReport> {
        let m = &self.market;
        if !m.r.is_finite() {
            return Err(Error::param("market.r", "must be finite"));
        }
        if !(m.horizon.is_finite() && m.horizon > 0.0) {
            return Err(Error::param("market.T", "must be > 0"));
        }
        for (j, f) in self.factors.iter().enumerate() {
            f.check(&format!("factors[{j}]"))?;
        }
        let p = &self.prefs;
        if !(p.gamma.is_finite() && p.gamma > 1.0) {
            return Err(Error::param("prefs.gamma", "must be > 1"));
        }
        for j in 0..2 {
            if !(p.phi_s[j].is_finite() && p.phi_s[j] >= 0.0) {
                return Err(Error::param(format!("prefs.phi_s{}", j + 1), "must be >= 0"));
            }
            if !(p.phi_v[j].is_finite() && p.phi_v[j] >= 0.0) {
                return Err(Error::param(format!("prefs.phi_v{}", j + 1), "must be >= 0"));
            }
        }
        if let Some(jp) = &self.jumps {
            if !(jp.jump_size.is_finite() && jp.jump_size > -1.0) {
                return Err(Error::param("jumps.j_s", "must be > -1"));
            }
            if !(jp.nu_p.is_finite() && jp.nu_p >= 0.0) {
                return Err(Error::param("jumps.nu_p", "must be >= 0"));
            }
            if !(jp.nu_q.is_finite() && jp.nu_q > 0.0) {
                return Err(Error::param("jumps.nu_q", "must be > 0"));
            }
        }
        if let Some(c) = &self.correlation {
            if !(c.rho_w.is_finite() && c.rho_w.abs() < 1.0) {
                return Err(Error::param("correlation.rho_w", "must lie in (-1, 1)"));
            }
        }

        let feller = [validate_feller(&self.factors[0]), validate_feller(&self.factors[1])];
        let novikov = validate_novikov(self);
        let mut warnings = Vec::new();
        for j in 0..2 {
            let f = &self.factors[j];
            if !feller[j] {
                warnings.push(format!(
                    "factor{}: Feller condition violated (2*kappa*theta = {} < sigma^2 = {})",
                    j + 1,
                    2.0 * f.kappa * f.theta,
                    f.sigma_v * f.sigma_v
                ));
            }
            if !novikov[j] {
                warnings.push(format!(
                    "factor{}: Novikov bound violated; worst-case density may not be a martingale",
                    j + 1
                ));
            }
        }
        Ok(ValidationReport {
            feller,
            novikov,
            warnings,
        })
    }

    /// Parses and validates a scenario document.
    pub fn from_toml_str(text: &str) -> Result<(Self, ValidationReport)> {
        let doc: ScenarioDocument = toml::from_str(text).map_err(|e| Error::Schema(e.message().to_string()))?;
        let scenario = doc.into_scenario();
        let report = scenario.validate()?;
        Ok((scenario, report))
    }

    /// Serializes back to the document schema.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(&ScenarioDocument::from(self)).expect("scenario document serializes")
    }

    pub fn gamma(&self) -> f64 {
        self.prefs.gamma
    }

    pub fn horizon(&self) -> f64 {
        self.market.horizon
    }

    /// Copy with all ambiguity parameters replaced.
    pub fn with_phi(&self, phi_s: [f64; 2], phi_v: [f64; 2]) -> Self {
        let mut s = *self;
        s.prefs.phi_s = phi_s;
        s.prefs.phi_v = phi_v;
        s
    }

    /// Copy with the two factor parameter blocks (and their φ's) exchanged.
    pub fn swapped_factors(&self) -> Self {
        let mut s = *self;
        s.factors.swap(0, 1);
        s.prefs.phi_s.swap(0, 1);
        s.prefs.phi_v.swap(0, 1);
        s
    }

    /// Names accepted by [`ScenarioConfig::set_param`].
    pub const PARAM_NAMES: &'static [&'static str] = &[
        "r", "T", "gamma", "phi_s1", "phi_s2", "phi_v1", "phi_v2", "kappa1", "theta1", "sigma1",
        "rho1", "lambda1", "mu1", "v01", "kappa2", "theta2", "sigma2", "rho2", "lambda2", "mu2",
        "v02", "j_s", "nu_p", "nu_q", "rho_w",
    ];

    /// Reads a scalar parameter by its flat name (`phi_s1`, `kappa2`, `rho_w`, ...).
    pub fn get_param(&self, name: &str) -> Result<f64> {
        let mut copy = *self;
        copy.param_slot(name).map(|slot| *slot)
    }

    /// Overwrites a scalar parameter by its flat name. The result is not
    /// re-validated; call [`ScenarioConfig::validate`] afterwards.
    pub fn set_param(&mut self, name: &str, value: f64) -> Result<()> {
        *self.param_slot(name)? = value;
        Ok(())
    }

    fn param_slot(&mut self, name: &str) -> Result<&mut f64> {
        let unknown = || Error::Configuration(format!("unknown parameter `{name}`"));
        let slot = match name {
            "r" => &mut self.market.r,
            "T" => &mut self.market.horizon,
            "gamma" => &mut self.prefs.gamma,
            "phi_s1" => &mut self.prefs.phi_s[0],
            "phi_s2" => &mut self.prefs.phi_s[1],
            "phi_v1" => &mut self.prefs.phi_v[0],
            "phi_v2" => &mut self.prefs.phi_v[1],
            "j_s" | "nu_p" | "nu_q" => {
                let jp = self
                    .jumps
                    .as_mut()
                    .ok_or_else(|| Error::Configuration(format!("`{name}` needs a [jumps] section")))?;
                match name {
                    "j_s" => &mut jp.jump_size,
                    "nu_p" => &mut jp.nu_p,
                    _ => &mut jp.nu_q,
                }
            }
            "rho_w" => {
                &mut self
                    .correlation
                    .as_mut()
                    .ok_or_else(|| Error::Configuration("`rho_w` needs a [correlation] section".into()))?
                    .rho_w
            }
            _ => {
                let (stem, idx) = name.split_at(name.len().saturating_sub(1));
                let j = match idx {
                    "1" => 0,
                    "2" => 1,
                    _ => return Err(unknown()),
                };
                let f = &mut self.factors[j];
                match stem {
                    "kappa" => &mut f.kappa,
                    "theta" => &mut f.theta,
                    "sigma" => &mut f.sigma_v,
                    "rho" => &mut f.rho,
                    "lambda" => &mut f.lambda_risk,
                    "mu" => &mut f.mu_risk,
                    "v0" => &mut f.v0,
                    _ => return Err(unknown()),
                }
            }
        };
        Ok(slot)
    }
}

// On-disk layout of a scenario document.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDocument {
    market: MarketSection,
    factor1: FactorSection,
    factor2: FactorSection,
    prefs: PrefsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    jumps: Option<JumpsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    correlation: Option<CorrelationSection>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MarketSection {
    r: f64,
    #[serde(rename = "T")]
    horizon: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FactorSection {
    kappa: f64,
    theta: f64,
    sigma: f64,
    rho: f64,
    lambda: f64,
    mu: f64,
    v0: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrefsSection {
    gamma: f64,
    phi_s1: f64,
    phi_s2: f64,
    phi_v1: f64,
    phi_v2: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JumpsSection {
    j_s: f64,
    nu_p: f64,
    nu_q: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorrelationSection {
    rho_w: f64,
}

impl FactorSection {
    fn params(&self) -> FactorParams {
        FactorParams {
            kappa: self.kappa,
            theta: self.theta,
            sigma_v: self.sigma,
            rho: self.rho,
            lambda_risk: self.lambda,
            mu_risk: self.mu,
            v0: self.v0,
        }
    }

    fn from_params(f: &FactorParams) -> Self {
        Self {
            kappa: f.kappa,
            theta: f.theta,
            sigma: f.sigma_v,
            rho: f.rho,
            lambda: f.lambda_risk,
            mu: f.mu_risk,
            v0: f.v0,
        }
    }
}

impl ScenarioDocument {
    fn into_scenario(self) -> ScenarioConfig {
        ScenarioConfig {
            market: MarketParams {
                r: self.market.r,
                horizon: self.market.horizon,
            },
            factors: [self.factor1.params(), self.factor2.params()],
            prefs: AmbiguityPrefs {
                gamma: self.prefs.gamma,
                phi_s: [self.prefs.phi_s1, self.prefs.phi_s2],
                phi_v: [self.prefs.phi_v1, self.prefs.phi_v2],
            },
            jumps: self.jumps.map(|j| JumpParams {
                jump_size: j.j_s,
                nu_p: j.nu_p,
                nu_q: j.nu_q,
            }),
            correlation: self.correlation.map(|c| CorrelationSpec { rho_w: c.rho_w }),
        }
    }
}

impl From<&ScenarioConfig> for ScenarioDocument {
    fn from(s: &ScenarioConfig) -> Self {
        Self {
            market: MarketSection {
                r: s.market.r,
                horizon: s.market.horizon,
            },
            factor1: FactorSection::from_params(&s.factors[0]),
            factor2: FactorSection::from_params(&s.factors[1]),
            prefs: PrefsSection {
                gamma: s.prefs.gamma,
                phi_s1: s.prefs.phi_s[0],
                phi_s2: s.prefs.phi_s[1],
                phi_v1: s.prefs.phi_v[0],
                phi_v2: s.prefs.phi_v[1],
            },
            jumps: s.jumps.map(|j| JumpsSection {
                j_s: j.jump_size,
                nu_p: j.nu_p,
                nu_q: j.nu_q,
            }),
            correlation: s.correlation.map(|c| CorrelationSection { rho_w: c.rho_w }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const BASELINE: &str = include_str!("../fixtures/baseline.toml");

    fn factor(kappa: f64, theta: f64, sigma_v: f64) -> FactorParams {
        FactorParams {
            kappa,
            theta,
            sigma_v,
            rho: -0.5,
            lambda_risk: 1.0,
            mu_risk: -1.0,
            v0: 0.04,
        }
    }

    #[test]
    fn feller_examples() {
        assert!(validate_feller(&factor(3.5, 0.04, 0.01)));
        assert!(validate_feller(&factor(3.0, 0.01, 0.0)));
        assert!(!validate_feller(&factor(3.0, 0.01, 0.25)));
    }

    #[test]
    fn novikov_examples() {
        let (base, _) = ScenarioConfig::from_toml_str(BASELINE).unwrap();
        assert_eq!(validate_novikov(&base.with_phi([0.0; 2], [0.0; 2])), [true, true]);

        let s = base.with_phi([1.0, 0.0], [1.0, 0.0]);
        let f = &s.factors[0];
        let lhs = 9.0 * f.sigma_v.powi(2) / 25.0 * 2.0;
        assert!((lhs - 0.045).abs() < 1e-15);
        assert!(validate_novikov(&s)[0]);

        let mut bad = base.with_phi([1e6, 0.0], [0.0; 2]);
        bad.factors[0] = FactorParams {
            kappa: 1.0,
            sigma_v: 2.0,
            lambda_risk: 3.0,
            mu_risk: 0.0,
            ..bad.factors[0]
        };
        assert!(!validate_novikov(&bad)[0]);
    }

    #[test]
    fn baseline_document_parses_with_feller_warning() {
        let (s, report) = ScenarioConfig::from_toml_str(BASELINE).unwrap();
        assert_eq!(s.market.r, 0.05);
        assert_eq!(s.market.horizon, 10.0);
        assert_eq!(s.prefs.gamma, 4.0);
        assert_eq!(report.feller, [false, true]);
        assert_eq!(report.warnings.len(), 1);
        assert!(report.warnings[0].contains("factor1"));
    }

    #[test]
    fn gamma_one_is_rejected() {
        let text = BASELINE.replace("gamma = 4.0", "gamma = 1.0");
        match ScenarioConfig::from_toml_str(&text) {
            Err(Error::InvalidParameter { path, .. }) => assert_eq!(path, "prefs.gamma"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rho_out_of_range_is_rejected() {
        let text = BASELINE.replace("rho = -0.7", "rho = -1.5");
        match ScenarioConfig::from_toml_str(&text) {
            Err(Error::InvalidParameter { path, .. }) => assert_eq!(path, "factors[0].rho"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn schema_errors_name_the_field() {
        let text = BASELINE.replace("kappa = 3.5", "kappa = \"fast\"");
        match ScenarioConfig::from_toml_str(&text) {
            Err(Error::Schema(msg)) => assert!(msg.contains("invalid type"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        let text = BASELINE.replace("[market]", "[market]\nextra = 1.0");
        assert!(matches!(ScenarioConfig::from_toml_str(&text), Err(Error::Schema(_))));
    }

    #[test]
    fn optional_sections() {
        let (s, _) = ScenarioConfig::from_toml_str(BASELINE).unwrap();
        assert!(s.jumps.is_none() && s.correlation.is_none());
        let text = format!("{BASELINE}\n[jumps]\nj_s = -0.15\nnu_p = 0.1\nnu_q = 0.3\n\n[correlation]\nrho_w = 0.5\n");
        let (s, _) = ScenarioConfig::from_toml_str(&text).unwrap();
        assert_eq!(s.jumps.unwrap().nu_q, 0.3);
        assert_eq!(s.correlation.unwrap().rho_w, 0.5);
        let back = ScenarioConfig::from_toml_str(&s.to_toml_string()).unwrap().0;
        assert_eq!(back, s);
    }

    #[test]
    fn params_by_name() {
        let (mut s, _) = ScenarioConfig::from_toml_str(BASELINE).unwrap();
        s.set_param("phi_v2", 1.25).unwrap();
        assert_eq!(s.prefs.phi_v[1], 1.25);
        assert_eq!(s.get_param("kappa2").unwrap(), 3.5);
        assert!(s.set_param("nu_p", 0.1).is_err());
        assert!(s.get_param("kappa3").is_err());
        for name in ScenarioConfig::PARAM_NAMES {
            if !matches!(*name, "j_s" | "nu_p" | "nu_q" | "rho_w") {
                s.get_param(name).unwrap();
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn novikov_is_monotone_in_phi(
                phi in 0.0f64..50.0,
                bump in 0.0f64..50.0,
                which in 0usize..4,
                sigma in 0.01f64..3.0,
                kappa in 0.1f64..5.0,
            ) {
                let (mut s, _) = ScenarioConfig::from_toml_str(BASELINE).unwrap();
                s.factors[0].sigma_v = sigma;
                s.factors[0].kappa = kappa;
                let lo = s.with_phi([phi; 2], [phi; 2]);
                let mut hi = lo;
                match which {
                    0 => hi.prefs.phi_s[0] += bump,
                    1 => hi.prefs.phi_v[0] += bump,
                    2 => hi.prefs.phi_s[1] += bump,
                    _ => hi.prefs.phi_v[1] += bump,
                }
                lo.validate().unwrap();
                let (a, b) = (validate_novikov(&lo), validate_novikov(&hi));
                for j in 0..2 {
                    prop_assert!(!( !a[j] && b[j] ));
                }
            }

            #[test]
            fn feller_holds_without_vol_of_vol(kappa in 1e-6f64..100.0, theta in 1e-8f64..10.0) {
                let f = FactorParams { kappa, theta, sigma_v: 0.0, rho: 0.0, lambda_risk: 0.0, mu_risk: 0.0, v0: 0.0 };
                prop_assert!(validate_feller(&f));
            }

            #[test]
            fn parsing_is_deterministic(g in 1.01f64..20.0, phi in 0.0f64..5.0) {
                let text = BASELINE
                    .replace("gamma = 4.0", &format!("gamma = {g:?}"))
                    .replace("phi_s1 = 0.5", &format!("phi_s1 = {phi:?}"));
                let a = ScenarioConfig::from_toml_str(&text).unwrap();
                let b = ScenarioConfig::from_toml_str(&text).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}
