//! Detection-error probabilities by Fourier inversion of the log-likelihood
//! ratio's characteristic function.

use std::io::Write;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::ScenarioConfig;
use crate::ode;
use crate::quad;
use crate::riccati::{self, ValueCoefficients};
use crate::strategy::{self, Loadings};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadingMode {
    /// Loadings frozen at `t = 0`.
    ConstantAtT0,
    /// Loadings follow `H_j(T − t)`.
    TimeDependent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarketRegime {
    Complete,
    Incomplete,
}

impl MarketRegime {
    pub fn name(self) -> &'static str {
        match self {
            Self::Complete => "complete",
            Self::Incomplete => "incomplete",
        }
    }
}

/// Worst-case loadings `q = e/√v` along `τ ∈ [0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub enum DistortionLoadings {
    Constant(Loadings),
    /// Samples at `τ = k·spacing`.
    Table { spacing: f64, values: Vec<Loadings> },
}

impl DistortionLoadings {
    pub fn at(&self, tau: f64) -> Loadings {
        match self {
            Self::Constant(l) => *l,
            Self::Table { spacing, values } => {
                let x = (tau / spacing).clamp(0.0, (values.len() - 1) as f64);
                let i = (x.floor() as usize).min(values.len() - 2);
                let w = x - i as f64;
                let (a, b) = (&values[i], &values[i + 1]);
                let mix = |p: [f64; 2], q: [f64; 2]| [p[0] + w * (q[0] - p[0]), p[1] + w * (q[1] - p[1])];
                Loadings {
                    q_s: mix(a.q_s, b.q_s),
                    q_v: mix(a.q_v, b.q_v),
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        let zero = |l: &Loadings| l.q_s == [0.0; 2] && l.q_v == [0.0; 2];
        match self {
            Self::Constant(l) => zero(l),
            Self::Table { values, .. } => values.iter().all(zero),
        }
    }
}

/// Worst-case loadings of the optimal investor in the given market.
///
/// The table is sampled at half the RK4 step so every stage of the
/// characteristic-function integration hits a node exactly.
pub fn worst_case_loadings(
    s: &ScenarioConfig,
    regime: MarketRegime,
    mode: LoadingMode,
    step: f64,
) -> Result<DistortionLoadings> {
    let horizon = s.market.horizon;
    let (vc, from_h): (ValueCoefficients, fn(&ScenarioConfig, [f64; 2]) -> Loadings) = match regime {
        MarketRegime::Complete => (ValueCoefficients::complete(s)?, strategy::loadings_from_h),
        MarketRegime::Incomplete => (riccati::solve_incomplete_system(s)?, strategy::incomplete_loadings_from_h),
    };
    let at = |tau: f64| -> Result<Loadings> { Ok(from_h(s, [vc.H(0, tau)?, vc.H(1, tau)?])) };
    match mode {
        LoadingMode::ConstantAtT0 => Ok(DistortionLoadings::Constant(at(horizon)?)),
        LoadingMode::TimeDependent => {
            let n = 2 * ode::step_count(horizon, step);
            let spacing = horizon / n as f64;
            let values = (0..=n)
                .map(|k| at((k as f64 * spacing).min(horizon)))
                .collect::<Result<Vec<_>>>()?;
            Ok(DistortionLoadings::Table { spacing, values })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Characteristic function of `ξ_1(T)` under the reference measure.
    F1,
    /// Characteristic function of `ξ_1(T)` under the worst-case measure.
    F2,
}

/// Coefficients at `t = 0` of `f = exp(C_1 v_1 + C_2 v_2 + D)` (with `ξ_1(0) = 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharFnCoeffs {
    pub variant: Variant,
    pub omega: f64,
    pub c: [Complex64; 2],
    pub d: Complex64,
}

impl CharFnCoeffs {
    pub fn value(&self, v: [f64; 2]) -> Complex64 {
        (self.c[0] * v[0] + self.c[1] * v[1] + self.d).exp()
    }
}

fn exponent_of(variant: Variant, omega: f64) -> Complex64 {
    match variant {
        Variant::F1 => Complex64::new(0.0, omega),
        Variant::F2 => Complex64::new(1.0, omega),
    }
}

/// Right-hand side in `τ = T − t` for `[C_1, C_2, D]` with exponent `u`:
/// `dC_j/dτ = −κ_j C_j + ½u(u−1)(q^S_j² + q^V_j²) + ½σ_j² C_j² − u σ_j (ρ_j q^S_j + ρ̄_j q^V_j) C_j`,
/// `dD/dτ = κ_1θ_1 C_1 + κ_2θ_2 C_2`.
fn rhs(s: &ScenarioConfig, q: &Loadings, u: Complex64, y: &[Complex64], out: &mut [Complex64]) {
    let quad = u * (u - 1.0) * 0.5;
    let mut dd = Complex64::new(0.0, 0.0);
    for j in 0..2 {
        let f = &s.factors[j];
        let c = y[j];
        let q2 = q.q_s[j] * q.q_s[j] + q.q_v[j] * q.q_v[j];
        let m = f.sigma_v * (f.rho * q.q_s[j] + f.rho_bar() * q.q_v[j]);
        out[j] = c * (-f.kappa) + quad * q2 + c * c * (0.5 * f.sigma_v * f.sigma_v) - u * c * m;
        dd += c * (f.kappa * f.theta);
    }
    out[2] = dd;
}

/// Integrates one variant from `t = T` back to `t = 0`.
pub fn char_fn(
    s: &ScenarioConfig,
    loadings: &DistortionLoadings,
    omega: f64,
    variant: Variant,
    step: f64,
) -> Result<CharFnCoeffs> {
    let u = exponent_of(variant, omega);
    let y = ode::integrate(
        |tau, y: &[Complex64], out: &mut [Complex64]| rhs(s, &loadings.at(tau), u, y, out),
        &[Complex64::new(0.0, 0.0); 3],
        0.0,
        s.market.horizon,
        step,
    )?;
    Ok(CharFnCoeffs {
        variant,
        omega,
        c: [y[0], y[1]],
        d: y[2],
    })
}

/// Both variants in one pass: returns `(f_1(ω), f_2(ω))` at `v`.
pub fn char_fn_pair(
    s: &ScenarioConfig,
    loadings: &DistortionLoadings,
    omega: f64,
    v: [f64; 2],
    step: f64,
) -> Result<(Complex64, Complex64)> {
    let u1 = exponent_of(Variant::F1, omega);
    let u2 = exponent_of(Variant::F2, omega);
    let y = ode::integrate(
        |tau, y: &[Complex64], out: &mut [Complex64]| {
            let q = loadings.at(tau);
            rhs(s, &q, u1, &y[..3], &mut out[..3]);
            rhs(s, &q, u2, &y[3..], &mut out[3..]);
        },
        &[Complex64::new(0.0, 0.0); 6],
        0.0,
        s.market.horizon,
        step,
    )?;
    let f = |c: &[Complex64]| (c[0] * v[0] + c[1] * v[1] + c[2]).exp();
    Ok((f(&y[..3]), f(&y[3..])))
}

/// RK4 step for the characteristic-function ODEs; ε agrees with step 1e-3
/// to about 1e-14 on the reference scenario at a quarter of the cost.
pub const DETECTION_STEP: f64 = 4e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionOptions {
    pub regime: MarketRegime,
    pub mode: LoadingMode,
    pub step: f64,
    pub omega_min: f64,
    pub omega_cap: f64,
    pub tail_tol: f64,
    pub abs_tol: f64,
}

impl Default for DetectionOptions {
    fn default() -> Self {
        Self {
            regime: MarketRegime::Complete,
            mode: LoadingMode::TimeDependent,
            step: DETECTION_STEP,
            omega_min: 1e-6,
            omega_cap: 1e4,
            tail_tol: 1e-6,
            abs_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionResult {
    pub epsilon: f64,
    /// Amount removed by clamping to `[0, 0.5]`.
    pub clamped: f64,
    pub omega_max: f64,
    pub evaluations: usize,
    /// Contribution of the last panel, an estimate of the truncated tail.
    pub tail_estimate: f64,
    pub mc_estimate: Option<f64>,
}

/// `ε = ½ + (1/2π) ∫_0^∞ (Im f_1(ω) − Im f_2(ω))/ω dω`, evaluated at `v = V(0)`.
pub fn detection_error(s: &ScenarioConfig, opts: &DetectionOptions) -> Result<DetectionResult> {
    let loadings = worst_case_loadings(s, opts.regime, opts.mode, opts.step)?;
    detection_error_with(s, &loadings, opts)
}

pub fn detection_error_with(
    s: &ScenarioConfig,
    loadings: &DistortionLoadings,
    opts: &DetectionOptions,
) -> Result<DetectionResult> {
    let v = [s.factors[0].v0, s.factors[1].v0];
    if loadings.is_zero() {
        return Ok(DetectionResult {
            epsilon: 0.5,
            clamped: 0.0,
            omega_max: 0.0,
            evaluations: 0,
            tail_estimate: 0.0,
            mc_estimate: None,
        });
    }
    let mut evaluations = 0usize;
    let failure: std::cell::RefCell<Option<Error>> = Default::default();
    let mut integrand = |w: f64| -> f64 {
        evaluations += 1;
        match char_fn_pair(s, loadings, w, v, opts.step) {
            Ok((f1, f2)) => (f1.im - f2.im) / w,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        }
    };
    // the integrand is even in ω, so g(ω) = g(ω_min) + O(ω²) on [0, ω_min]
    let mut total = opts.omega_min * integrand(opts.omega_min);
    let mut lo = opts.omega_min;
    let mut hi = 1.0;
    let mut last;
    loop {
        let r = quad::adaptive(&mut integrand, lo, hi, opts.abs_tol, 1e-10);
        if let Some(e) = failure.borrow_mut().take() {
            return Err(e);
        }
        let (panel, _) = r?;
        total += panel;
        last = panel;
        if panel.abs() < opts.tail_tol && hi >= 2.0 {
            break;
        }
        if hi >= opts.omega_cap {
            return Err(Error::Quadrature(format!(
                "detection integrand tail still {panel:e} at omega = {hi}"
            )));
        }
        lo = hi;
        hi *= 2.0;
    }
    let raw = 0.5 + total / (2.0 * std::f64::consts::PI);
    let epsilon = raw.clamp(0.0, 0.5);
    Ok(DetectionResult {
        epsilon,
        clamped: raw - epsilon,
        omega_max: hi,
        evaluations,
        tail_estimate: last.abs(),
        mc_estimate: None,
    })
}

/// Grid axes over one factor's `(φ^S_j, φ^V_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiGrid {
    pub factor: usize,
    pub phi_s: Vec<f64>,
    pub phi_v: Vec<f64>,
}

impl PhiGrid {
    pub fn uniform(factor: usize, lo: f64, hi: f64, n: usize) -> Self {
        let axis: Vec<f64> = (0..n)
            .map(|k| if n == 1 { lo } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 })
            .collect();
        Self {
            factor,
            phi_s: axis.clone(),
            phi_v: axis,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub phi_s: f64,
    pub phi_v: f64,
    pub regime: MarketRegime,
    pub result: std::result::Result<DetectionResult, String>,
}

/// ε over the grid, φ^S-major. Cells that fail keep their error message.
pub fn detection_error_grid(s: &ScenarioConfig, grid: &PhiGrid, opts: &DetectionOptions) -> Result<Vec<GridCell>> {
    use rayon::prelude::*;
    if grid.factor > 1 {
        return Err(Error::Configuration(format!("factor index {} out of range", grid.factor)));
    }
    if grid.phi_s.iter().chain(&grid.phi_v).any(|p| !(*p >= 0.0)) {
        return Err(Error::param("grid", "ambiguity parameters must be >= 0"));
    }
    let cells: Vec<(f64, f64)> = grid
        .phi_s
        .iter()
        .flat_map(|&a| grid.phi_v.iter().map(move |&b| (a, b)))
        .collect();
    Ok(cells
        .par_iter()
        .map(|&(ps, pv)| {
            let mut t = *s;
            t.prefs.phi_s[grid.factor] = ps;
            t.prefs.phi_v[grid.factor] = pv;
            GridCell {
                phi_s: ps,
                phi_v: pv,
                regime: opts.regime,
                result: detection_error(&t, opts).map_err(|e| e.to_string()),
            }
        })
        .collect())
}

pub const GRID_CSV_HEADER: [&str; 6] = ["phi_s", "phi_v", "regime", "epsilon", "clamped", "omega_max_used"];

pub fn write_grid_csv<W: Write>(out: W, cells: &[GridCell]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(GRID_CSV_HEADER).map_err(io)?;
    for c in cells {
        let (eps, clamped, wmax) = match &c.result {
            Ok(r) => (r.epsilon.to_string(), r.clamped.to_string(), r.omega_max.to_string()),
            Err(_) => ("failed".into(), String::new(), String::new()),
        };
        w.write_record([c.phi_s.to_string(), c.phi_v.to_string(), c.regime.name().into(), eps, clamped, wmax])
            .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::DEFAULT_STEP;

    fn baseline() -> ScenarioConfig {
        ScenarioConfig::from_toml_str(include_str!("../fixtures/baseline.toml")).unwrap().0
    }

    fn loadings(s: &ScenarioConfig) -> DistortionLoadings {
        worst_case_loadings(s, MarketRegime::Complete, LoadingMode::TimeDependent, DEFAULT_STEP).unwrap()
    }

    #[test]
    fn loadings_match_worst_case() {
        let s = baseline();
        let l = loadings(&s);
        let w = strategy::worst_case_complete(&s, s.market.horizon, 0.04, 0.01).unwrap();
        let q = l.at(s.market.horizon);
        assert!((q.q_s[0] - w.e_s[0] / 0.2).abs() < 1e-14);
        assert!((q.q_v[1] - w.e_v[1] / 0.1).abs() < 1e-14);
        let q0 = l.at(0.0);
        assert!((q0.q_s[0] - 0.5 * 3.0 / 4.5).abs() < 1e-15);
        let zero = loadings(&s.with_phi([0.0; 2], [0.0; 2]));
        assert!(zero.is_zero());
    }

    #[test]
    fn trivial_characteristic_functions() {
        let s = baseline();
        let l = loadings(&s);
        let c = char_fn(&s, &l, 0.0, Variant::F1, DEFAULT_STEP).unwrap();
        assert_eq!(c.c, [Complex64::new(0.0, 0.0); 2]);
        assert_eq!(c.d, Complex64::new(0.0, 0.0));
        // u = 1 is the density itself, a martingale
        let c = char_fn(&s, &l, 0.0, Variant::F2, DEFAULT_STEP).unwrap();
        assert!(c.value([0.04, 1e-4]).re - 1.0 < 1e-15);
        let z = loadings(&s.with_phi([0.0; 2], [0.0; 2]));
        let c = char_fn(&s, &z, 3.0, Variant::F1, DEFAULT_STEP).unwrap();
        assert_eq!(c.value([0.04, 1e-4]), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn step_halving_reference() {
        let s = baseline();
        let l = loadings(&s);
        let coarse = char_fn(&s, &l, 1.0, Variant::F1, DEFAULT_STEP).unwrap();
        let fine = char_fn(&s, &l, 1.0, Variant::F1, DEFAULT_STEP / 4.0).unwrap();
        for j in 0..2 {
            assert!((coarse.c[j] - fine.c[j]).norm() < 1e-8);
        }
        assert!((coarse.d - fine.d).norm() < 1e-8);
    }

    #[test]
    fn gaussian_limit_without_vol_of_vol() {
        // σ = 0 and constant q: ξ is Gaussian with variance Q = ∫Σq²v dt and mean −Q/2
        let mut s = baseline();
        for f in &mut s.factors {
            f.sigma_v = 0.0;
            f.v0 = f.theta;
        }
        let l = DistortionLoadings::Constant(Loadings {
            q_s: [0.3, 0.1],
            q_v: [-0.2, 0.0],
        });
        let q = (0.13 * s.factors[0].theta + 0.01 * s.factors[1].theta) * s.market.horizon;
        for w in [0.5, 2.0, 7.0] {
            let (f1, f2) = char_fn_pair(&s, &l, w, [s.factors[0].v0, s.factors[1].v0], DEFAULT_STEP).unwrap();
            let e1 = Complex64::new(-0.5 * w * w * q, -0.5 * w * q).exp();
            let e2 = Complex64::new(-0.5 * w * w * q, 0.5 * w * q).exp();
            assert!((f1 - e1).norm() < 1e-12, "{f1} {e1}");
            assert!((f2 - e2).norm() < 1e-12);
        }
        // ε = Φ(−√Q/2)
        let r = detection_error_with(&s, &l, &DetectionOptions::default()).unwrap();
        let exact = 0.5 * libm::erfc(q.sqrt() / 2.0 / std::f64::consts::SQRT_2);
        assert!((r.epsilon - exact).abs() < 1e-7, "{} {exact}", r.epsilon);
    }

    #[test]
    fn reference_characteristic_function_bounded() {
        let s = baseline().with_phi([1.0; 2], [1.0; 2]);
        let l = loadings(&s);
        for w in [0.1, 1.0, 5.0, 20.0] {
            let (f1, _) = char_fn_pair(&s, &l, w, [0.04, 1e-4], DEFAULT_STEP).unwrap();
            assert!(f1.norm() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn no_ambiguity_is_a_coin_flip() {
        let s = baseline().with_phi([0.0; 2], [0.0; 2]);
        let r = detection_error(&s, &DetectionOptions::default()).unwrap();
        assert!((r.epsilon - 0.5).abs() < 1e-8);
    }

    #[test]
    fn epsilon_falls_with_ambiguity() {
        let opts = DetectionOptions::default();
        let mut prev = 0.5;
        for p in [0.25, 0.5, 1.0] {
            let s = baseline().with_phi([p, 0.0], [0.0; 2]);
            let e = detection_error(&s, &opts).unwrap().epsilon;
            assert!(e < prev && e > 0.0, "{p}: {e}");
            prev = e;
        }
    }

    #[test]
    fn grid_csv_and_failures() {
        let s = baseline();
        let cells = detection_error_grid(&s, &PhiGrid::uniform(0, 0.0, 0.0, 1), &DetectionOptions::default()).unwrap();
        assert_eq!(cells.len(), 1);
        let mut buf = Vec::new();
        write_grid_csv(&mut buf, &cells).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("phi_s,phi_v,regime,epsilon,clamped,omega_max_used\n0,0,complete,"));
    }
}
