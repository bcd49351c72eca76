//! Batch front end: one verb per invocation, CSV plus a gnuplot script per table.
//!
//! Exit codes: 0 success, 1 usage/validation/configuration error, 2 numerical failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::correlated::{self, PsiPolicy};
use crate::detection::{self, DetectionOptions, GridCell, LoadingMode, MarketRegime};
use crate::error::{Error, Result};
use crate::model::{CorrelationSpec, ScenarioConfig};
use crate::riccati::ValueCoefficients;
use crate::sim::{self, Measure, Scheme, SimSpec};
use crate::strategy;
use crate::welfare::{self, StrategyTag};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "ROBUSTVOL_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "robustvol", version, about = "Robust portfolio choice under two-factor stochastic volatility")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario document (TOML).
    #[arg(long, short)]
    pub scenario: PathBuf,
    /// Output CSV; defaults to `<verb>.csv` in $ROBUSTVOL_OUT_DIR or the working directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TauGrid {
    /// Single time-to-horizon; omit for an even grid over [0, T].
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, default_value_t = 101)]
    pub points: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExposureRegime {
    Complete,
    Jump,
    Incomplete,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RegimeArg {
    Complete,
    Incomplete,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Constant,
    TimeDependent,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    Strict,
    Clamp,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SimQuantity {
    Objective,
    Detection,
    Moments,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MeasureArg {
    Reference,
    WorstCase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepQuantity {
    Detection,
    Exposures,
    WorstCase,
    Loss,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a scenario document and print admissibility warnings.
    Validate {
        #[arg(long, short)]
        scenario: PathBuf,
    },
    /// Optimal exposures along τ.
    Exposures {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: TauGrid,
        #[arg(long, value_enum, default_value = "complete")]
        regime: ExposureRegime,
    },
    /// Worst-case drift distortions along τ at fixed variances.
    WorstCase {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: TauGrid,
        #[arg(long)]
        v1: Option<f64>,
        #[arg(long)]
        v2: Option<f64>,
    },
    /// Wealth-equivalent utility losses of the suboptimal strategies.
    Loss {
        #[command(flatten)]
        common: Common,
        /// pi1, pi2, pi3, jump-ignore or all.
        #[arg(long, default_value = "all")]
        strategy: String,
    },
    /// Detection-error probability at the scenario's ambiguity parameters.
    Detect {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "complete")]
        regime: RegimeArg,
        #[arg(long, value_enum, default_value = "time-dependent")]
        mode: ModeArg,
        #[arg(long, default_value_t = detection::DETECTION_STEP)]
        step: f64,
    },
    /// Approximate exposures and worst case with correlated factors, at u = E[√V(t)].
    Correlated {
        #[command(flatten)]
        common: Common,
        /// Overrides the scenario's correlation section.
        #[arg(long)]
        rho_w: Option<f64>,
        #[arg(long, value_enum, default_value = "strict")]
        psi_policy: PolicyArg,
        #[arg(long, default_value_t = 101)]
        points: usize,
    },
    /// Monte Carlo estimates.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        quantity: SimQuantity,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        #[arg(long, default_value_t = 0.002)]
        dt: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "worst-case")]
        measure: MeasureArg,
        #[arg(long)]
        no_antithetic: bool,
        /// Sample times for `moments`.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.25, 1.0, 5.0])]
        times: Vec<f64>,
    },
    /// Evaluate a quantity over a grid of two scenario parameters.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `name:lo..hi:n,name:lo..hi:n`, e.g. `phi_s1:0..2:21,phi_v1:0..2:21`.
        #[arg(long)]
        grid: String,
        #[arg(long, value_enum)]
        quantity: SweepQuantity,
        /// τ for exposure and worst-case sweeps; defaults to T.
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long, default_value_t = detection::DETECTION_STEP)]
        step: f64,
    },
}

/// Parses `argv` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

pub fn execute(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Validate { scenario } => {
            let (s, report) = load(scenario)?;
            println!("valid scenario (hash {})", scenario_hash(&s));
            for w in &report.warnings {
                println!("warning: {w}");
            }
            Ok(())
        }
        Command::Exposures { common, grid, regime } => exposures(common, grid, *regime),
        Command::WorstCase { common, grid, v1, v2 } => worst_case(common, grid, *v1, *v2),
        Command::Loss { common, strategy } => loss(common, strategy),
        Command::Detect {
            common,
            regime,
            mode,
            step,
        } => detect(common, *regime, *mode, *step),
        Command::Correlated {
            common,
            rho_w,
            psi_policy,
            points,
        } => correlated_cmd(common, *rho_w, *psi_policy, *points),
        Command::Simulate {
            common,
            quantity,
            paths,
            dt,
            seed,
            measure,
            no_antithetic,
            times,
        } => {
            let spec = SimSpec {
                n_paths: *paths,
                dt: *dt,
                seed: *seed,
                measure: match measure {
                    MeasureArg::Reference => Measure::Reference,
                    MeasureArg::WorstCase => Measure::WorstCase,
                },
                scheme: Scheme::FullTruncation,
                antithetic: !no_antithetic,
            };
            simulate(common, *quantity, &spec, times)
        }
        Command::Sweep {
            common,
            grid,
            quantity,
            tau,
            step,
        } => sweep(common, grid, *quantity, *tau, *step),
    }
}

fn load(path: &Path) -> Result<(ScenarioConfig, crate::ValidationReport)> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    ScenarioConfig::from_toml_str(&text)
}

/// SHA-256 of the canonical scenario document.
pub fn scenario_hash(s: &ScenarioConfig) -> String {
    format!("{:x}", Sha256::digest(s.to_toml_string().as_bytes()))
}

fn output_path(common: &Common, verb: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| {
        let dir = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_default();
        dir.join(format!("{verb}.csv"))
    })
}

/// A CSV table with its plot description.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    /// Column used as x axis and the columns plotted against it.
    x: usize,
    ys: Vec<usize>,
    /// Splot over the first two columns instead of lines.
    surface: bool,
}

fn num(x: f64) -> String {
    format!("{x:.12e}")
}

fn write_table(path: &Path, s: &ScenarioConfig, t: &Table) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut buf = Vec::new();
    writeln!(
        buf,
        "# scenario_hash={} version={}",
        scenario_hash(s),
        env!("CARGO_PKG_VERSION")
    )?;
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(&t.header).map_err(io)?;
        for r in &t.rows {
            w.write_record(r).map_err(io)?;
        }
        w.flush()?;
    }
    fs::write(path, buf)?;
    fs::write(path.with_extension("gp"), plot_script(path, t))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn plot_script(csv_path: &Path, t: &Table) -> String {
    let name = csv_path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let stem = csv_path.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let mut out = String::new();
    out.push_str("set datafile separator ','\nset key autotitle columnhead\n");
    out.push_str(&format!("set terminal pngcairo size 900,600\nset output '{stem}.png'\n"));
    out.push_str(&format!("set xlabel '{}'\n", t.header[t.x]));
    if t.surface {
        out.push_str(&format!("set ylabel '{}'\nset dgrid3d\nset hidden3d\n", t.header[1]));
        let z = t.ys[0];
        out.push_str(&format!("splot '{name}' using 1:2:{} with lines\n", z + 1));
    } else {
        let series: Vec<String> = t
            .ys
            .iter()
            .map(|&y| format!("'{name}' using {}:{} with lines", t.x + 1, y + 1))
            .collect();
        out.push_str(&format!("plot {}\n", series.join(", \\\n     ")));
    }
    out
}

fn tau_points(s: &ScenarioConfig, g: &TauGrid) -> Result<Vec<f64>> {
    if let Some(t) = g.tau {
        return Ok(vec![t]);
    }
    if g.points < 2 {
        return Err(Error::param("points", "must be >= 2"));
    }
    let h = s.market.horizon;
    Ok((0..g.points).map(|k| h * k as f64 / (g.points - 1) as f64).collect())
}

fn exposures(common: &Common, grid: &TauGrid, regime: ExposureRegime) -> Result<()> {
    let (s, _) = load(&common.scenario)?;
    let taus = tau_points(&s, grid)?;
    let mut rows = Vec::new();
    let header: Vec<String>;
    match regime {
        ExposureRegime::Incomplete => {
            let reduction = if s.factors[0] == s.factors[1] && s.prefs.phi_s[0] == s.prefs.phi_s[1] {
                strategy::Reduction::IdenticalFactors
            } else {
                return Err(Error::Configuration(
                    "incomplete-market stock weight needs identical factors; see general_pi_s_pointwise".into(),
                ));
            };
            let vc = crate::riccati::solve_incomplete_system(&s)?;
            header = vec!["tau".into(), "pi_s".into()];
            for &t in &taus {
                rows.push(vec![num(t), num(strategy::optimal_stock_weight_incomplete(&vc, t, reduction)?)]);
            }
        }
        _ => {
            let vc = match regime {
                ExposureRegime::Jump => ValueCoefficients::jump(&s)?,
                _ => ValueCoefficients::complete(&s)?,
            };
            header = ["tau", "beta_s1", "beta_s2", "beta_v1", "beta_v2", "beta_n"].map(String::from).to_vec();
            for &t in &taus {
                let e = strategy::optimal_exposures(&vc, t)?;
                rows.push(vec![
                    num(t),
                    num(e.beta_s[0]),
                    num(e.beta_s[1]),
                    num(e.beta_v[0]),
                    num(e.beta_v[1]),
                    e.beta_n.map(num).unwrap_or_default(),
                ]);
            }
        }
    }
    let ys = (1..header.len()).filter(|&i| header[i] != "beta_n").collect();
    let table = Table {
        header,
        rows,
        x: 0,
        ys,
        surface: false,
    };
    write_table(&output_path(common, "exposures"), &s, &table)
}

fn worst_case(common: &Common, grid: &TauGrid, v1: Option<f64>, v2: Option<f64>) -> Result<()> {
    let (s, _) = load(&common.scenario)?;
    let v = [v1.unwrap_or(s.factors[0].v0), v2.unwrap_or(s.factors[1].v0)];
    let vc = ValueCoefficients::complete(&s)?;
    let mut rows = Vec::new();
    for t in tau_points(&s, grid)? {
        let w = strategy::worst_case(&vc, t, v)?;
        rows.push(vec![
            num(t),
            num(v[0]),
            num(v[1]),
            num(w.e_s[0]),
            num(w.e_s[1]),
            num(w.e_v[0]),
            num(w.e_v[1]),
        ]);
    }
    let table = Table {
        header: ["tau", "v1", "v2", "e_s1", "e_s2", "e_v1", "e_v2"].map(String::from).to_vec(),
        rows,
        x: 0,
        ys: vec![3, 4, 5, 6],
        surface: false,
    };
    write_table(&output_path(common, "worst-case"), &s, &table)
}

fn loss(common: &Common, which: &str) -> Result<()> {
    let (s, _) = load(&common.scenario)?;
    let tags = if which == "all" {
        let mut t = Vec::new();
        if s.jumps.is_some() {
            t.push(StrategyTag::JumpIgnore);
        } else {
            t.extend([StrategyTag::Pi1, StrategyTag::Pi2, StrategyTag::Pi3]);
        }
        t
    } else {
        which.split(',').map(|n| StrategyTag::parse(n.trim())).collect::<Result<_>>()?
    };
    let reports = tags
        .into_iter()
        .map(|t| welfare::utility_loss(&s, t))
        .collect::<Result<Vec<_>>>()?;
    let rows = reports
        .iter()
        .map(|r| {
            vec![
                r.strategy.to_string(),
                num(r.tau),
                num(r.v[0]),
                num(r.v[1]),
                num(r.d_h[0]),
                num(r.d_h[1]),
                num(r.d_small_h),
                num(r.loss),
            ]
        })
        .collect();
    let table = Table {
        header: welfare::LOSS_CSV_HEADER.map(String::from).to_vec(),
        rows,
        x: 0,
        ys: vec![7],
        surface: false,
    };
    write_table(&output_path(common, "loss"), &s, &table)
}

fn detection_opts(regime: RegimeArg, mode: ModeArg, step: f64) -> DetectionOptions {
    DetectionOptions {
        regime: match regime {
            RegimeArg::Complete => MarketRegime::Complete,
            RegimeArg::Incomplete => MarketRegime::Incomplete,
        },
        mode: match mode {
            ModeArg::Constant => LoadingMode::ConstantAtT0,
            ModeArg::TimeDependent => LoadingMode::TimeDependent,
        },
        step,
        ..DetectionOptions::default()
    }
}

fn cell_row(c: &GridCell) -> Result<Vec<String>> {
    let r = c.result.as_ref().map_err(|e| Error::Quadrature(e.clone()))?;
    Ok(vec![
        num(c.phi_s),
        num(c.phi_v),
        c.regime.name().into(),
        num(r.epsilon),
        num(r.clamped),
        num(r.omega_max),
    ])
}

fn detect(common: &Common, regime: RegimeArg, mode: ModeArg, step: f64) -> Result<()> {
    let (s, _) = load(&common.scenario)?;
    let opts = detection_opts(regime, mode, step);
    let r = detection::detection_error(&s, &opts)?;
    let cell = GridCell {
        phi_s: s.prefs.phi_s[0],
        phi_v: s.prefs.phi_v[0],
        regime: opts.regime,
        result: Ok(r),
    };
    let table = Table {
        header: detection::GRID_CSV_HEADER.map(String::from).to_vec(),
        rows: vec![cell_row(&cell)?],
        x: 0,
        ys: vec![3],
        surface: false,
    };
    println!("epsilon = {:.10}", r.epsilon);
    write_table(&output_path(common, "detect"), &s, &table)
}

fn correlated_cmd(common: &Common, rho_w: Option<f64>, policy: PolicyArg, points: usize) -> Result<()> {
    let (mut s, _) = load(&common.scenario)?;
    if let Some(r) = rho_w {
        s.correlation = Some(CorrelationSpec { rho_w: r });
    }
    if points < 2 {
        return Err(Error::param("points", "must be >= 2"));
    }
    let policy = match policy {
        PolicyArg::Strict => PsiPolicy::Strict,
        PolicyArg::Clamp => PsiPolicy::Clamp,
    };
    let a = correlated::solve_affine_system_with(&s, crate::ode::DEFAULT_STEP, policy)?;
    for w in &a.warnings {
        eprintln!("warning: {w}");
    }
    let horizon = s.market.horizon;
    let mut rows = Vec::new();
    for k in 0..points {
        let t = horizon * k as f64 / (points - 1) as f64;
        let u = [
            correlated::cir_sqrt_moments(&s.factors[0], t)?.0,
            correlated::cir_sqrt_moments(&s.factors[1], t)?.0,
        ];
        let (e, w) = correlated::approx_controls(&a, t, u)?;
        let mut row = vec![num(t), num(u[0]), num(u[1])];
        row.extend([e.beta_s[0], e.beta_s[1], e.beta_v[0], e.beta_v[1]].map(num));
        row.extend([w.e_s[0], w.e_s[1], w.e_v[0], w.e_v[1]].map(num));
        rows.push(row);
    }
    let table = Table {
        header: [
            "t", "u1", "u2", "beta_s1", "beta_s2", "beta_v1", "beta_v2", "e_s1", "e_s2", "e_v1", "e_v2",
        ]
        .map(String::from)
        .to_vec(),
        rows,
        x: 0,
        ys: vec![3, 4, 5, 6],
        surface: false,
    };
    write_table(&output_path(common, "correlated"), &s, &table)
}

fn simulate(common: &Common, quantity: SimQuantity, spec: &SimSpec, times: &[f64]) -> Result<()> {
    let (s, _) = load(&common.scenario)?;
    let reports = match quantity {
        SimQuantity::Objective => vec![sim::mc_objective(&s, spec)?],
        SimQuantity::Detection => {
            let opts = DetectionOptions::default();
            let l = detection::worst_case_loadings(&s, opts.regime, opts.mode, opts.step)?;
            vec![sim::mc_detection_error(&s, &l, spec)?]
        }
        SimQuantity::Moments => {
            let mut out = Vec::new();
            for (j, f) in s.factors.iter().enumerate() {
                for &t in times {
                    let (m, v) = sim::sqrt_moments_mc(f, t, spec.n_paths, spec.seed)?;
                    for mut r in [m, v] {
                        r.quantity = format!("{}_factor{}_t{t}", r.quantity, j + 1);
                        out.push(r);
                    }
                }
            }
            out
        }
    };
    let rows = reports
        .iter()
        .map(|r| {
            vec![
                r.quantity.clone(),
                num(r.estimate),
                num(r.stderr),
                r.n_paths.to_string(),
                format!("{}", r.dt),
                r.seed.to_string(),
                r.scheme.name().into(),
            ]
        })
        .collect();
    let table = Table {
        header: sim::REPORT_CSV_HEADER.map(String::from).to_vec(),
        rows,
        x: 0,
        ys: vec![1],
        surface: false,
    };
    write_table(&output_path(common, "simulate"), &s, &table)
}

/// One sweep axis: `name:lo..hi:n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub name: String,
    pub values: Vec<f64>,
}

pub fn parse_grid(spec: &str) -> Result<[Axis; 2]> {
    let bad = |m: &str| Error::Configuration(format!("bad grid `{spec}`: {m}"));
    let axes = spec
        .split(',')
        .map(|part| {
            let mut it = part.trim().split(':');
            let (Some(name), Some(range), Some(n), None) = (it.next(), it.next(), it.next(), it.next()) else {
                return Err(bad("expected name:lo..hi:n"));
            };
            let (lo, hi) = range.split_once("..").ok_or_else(|| bad("range must be lo..hi"))?;
            let lo: f64 = lo.parse().map_err(|_| bad("lower bound"))?;
            let hi: f64 = hi.parse().map_err(|_| bad("upper bound"))?;
            let n: usize = n.parse().map_err(|_| bad("point count"))?;
            if n < 2 || !(hi > lo) {
                return Err(bad("need n >= 2 and hi > lo"));
            }
            Ok(Axis {
                name: name.to_string(),
                values: (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let [a, b]: [Axis; 2] = axes.try_into().map_err(|_| bad("exactly two axes"))?;
    if a.name == b.name {
        return Err(bad("axes must differ"));
    }
    Ok([a, b])
}

fn sweep_cell(s: &ScenarioConfig, q: SweepQuantity, tau: f64, opts: &DetectionOptions) -> Result<Vec<f64>> {
    s.validate()?;
    match q {
        SweepQuantity::Detection => {
            let r = detection::detection_error(s, opts)?;
            Ok(vec![r.epsilon, r.clamped, r.omega_max])
        }
        SweepQuantity::Exposures => {
            let e = strategy::optimal_exposures_complete(s, tau)?;
            Ok(vec![e.beta_s[0], e.beta_s[1], e.beta_v[0], e.beta_v[1]])
        }
        SweepQuantity::WorstCase => {
            let vc = ValueCoefficients::complete(s)?;
            let l = strategy::loadings_from_h(s, [vc.H(0, tau)?, vc.H(1, tau)?]);
            Ok(vec![l.q_s[0], l.q_s[1], l.q_v[0], l.q_v[1]])
        }
        SweepQuantity::Loss => [StrategyTag::Pi1, StrategyTag::Pi2, StrategyTag::Pi3]
            .into_iter()
            .map(|t| Ok(welfare::utility_loss(s, t)?.loss))
            .collect(),
    }
}

fn sweep(common: &Common, grid: &str, quantity: SweepQuantity, tau: Option<f64>, step: f64) -> Result<()> {
    let (s, _) = load(&common.scenario)?;
    let [a, b] = parse_grid(grid)?;
    s.get_param(&a.name)?;
    s.get_param(&b.name)?;
    let tau = tau.unwrap_or(s.market.horizon);
    let opts = DetectionOptions {
        step,
        ..DetectionOptions::default()
    };
    let cells: Vec<(f64, f64)> = a
        .values
        .iter()
        .flat_map(|&x| b.values.iter().map(move |&y| (x, y)))
        .collect();
    let results: Vec<Result<Vec<f64>>> = cells
        .par_iter()
        .map(|&(x, y)| {
            let mut c = s;
            c.set_param(&a.name, x)?;
            c.set_param(&b.name, y)?;
            sweep_cell(&c, quantity, tau, &opts)
        })
        .collect();
    let value_cols: &[&str] = match quantity {
        SweepQuantity::Detection => &["epsilon", "clamped", "omega_max_used"],
        SweepQuantity::Exposures => &["beta_s1", "beta_s2", "beta_v1", "beta_v2"],
        SweepQuantity::WorstCase => &["q_s1", "q_s2", "q_v1", "q_v2"],
        SweepQuantity::Loss => &["loss_pi1", "loss_pi2", "loss_pi3"],
    };
    let mut header = vec![a.name.clone(), b.name.clone()];
    if quantity == SweepQuantity::Detection {
        header.push("regime".into());
    }
    header.extend(value_cols.iter().map(|c| c.to_string()));
    let mut rows = Vec::with_capacity(cells.len());
    for (&(x, y), r) in cells.iter().zip(results) {
        let mut row = vec![num(x), num(y)];
        if quantity == SweepQuantity::Detection {
            row.push(opts.regime.name().into());
        }
        row.extend(r?.into_iter().map(num));
        rows.push(row);
    }
    let first_value = if quantity == SweepQuantity::Detection { 3 } else { 2 };
    let table = Table {
        header,
        rows,
        x: 0,
        ys: vec![first_value],
        surface: true,
    };
    write_table(&output_path(common, "sweep"), &s, &table)
}
