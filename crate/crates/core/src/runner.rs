//! Comparison sweeps, convergence studies and simulation runs driven by a
//! [`RunConfig`], with CSV and manifest output.
//!
//! Points are evaluated in parallel and collected in sweep order; nothing
//! depends on the worker count.

use rayon::prelude::*;
use serde::Serialize;

use crate::approx::Expansion;
use crate::config::{spaced, Axis, Command, RunConfig, Spacing, StrategyName, SweepVariable};
use crate::error::{Error, Result};
use crate::exact::{benchmark_for, Benchmark, HestonBenchmark};
use crate::mc::{simulate_expected_utility, SimConfig};
use crate::model::ModelSpec;

pub const COMPARE_HEADER: [&str; 15] = [
    "t",
    "x",
    "y",
    "w",
    "sigma",
    "order",
    "value",
    "strategy",
    "implied_sharpe",
    "exact_value",
    "exact_strategy",
    "exact_sharpe",
    "abs_err_value",
    "displacement",
    "flag",
];
pub const SHARPE_HEADER: [&str; 10] =
    ["t", "x", "y", "w", "sigma", "order", "implied_sharpe", "exact_sharpe", "abs_err_sharpe", "flag"];
pub const CONVERGENCE_HEADER: [&str; 4] = ["tau", "order", "sup_abs_err", "y_at_sup"];
pub const SIMULATE_HEADER: [&str; 6] = ["strategy_name", "paths", "steps", "mean_utility", "stderr", "bankruptcies"];

/// One evaluation state of a sweep, with the utility exponent and horizon in force there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub horizon: f64,
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub sigma: Option<f64>,
    pub order: usize,
    pub value: Option<f64>,
    pub strategy: Option<f64>,
    pub implied_sharpe: Option<f64>,
    pub exact_value: Option<f64>,
    pub exact_strategy: Option<f64>,
    pub exact_sharpe: Option<f64>,
    pub abs_err_value: Option<f64>,
    pub displacement: Option<f64>,
    pub flag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub tau: f64,
    pub order: usize,
    pub sup_abs_err: f64,
    pub y_at_sup: f64,
}

/// Least-squares fit of `log error` against `log τ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub order: usize,
    pub slope: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateRow {
    pub strategy_name: String,
    pub paths: usize,
    pub steps: usize,
    pub mean_utility: f64,
    pub stderr: f64,
    pub bankruptcies: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunOutput {
    Compare(Vec<CompareRow>),
    ImpliedSharpe(Vec<CompareRow>),
    Convergence { rows: Vec<ConvergenceRow>, fits: Vec<RateFit> },
    Simulate { rows: Vec<SimulateRow>, exact_value: Option<f64> },
}

/// Sweep states in sweep order. A point outside the model domain is kept as
/// an error so that it can be reported and skipped.
pub fn sweep_points(cfg: &RunConfig, model: &ModelSpec) -> Result<Vec<Result<SweepPoint>>> {
    let s = &cfg.state;
    let base = SweepPoint { t: s.t, x: s.x, y: s.y, w: s.w, horizon: s.horizon.unwrap_or(f64::NAN), gamma: cfg.utility.power_gamma() };
    let Some(sweep) = &cfg.sweep else {
        return Ok(vec![Ok(base)]);
    };
    Ok(sweep
        .values()?
        .into_iter()
        .map(|v| match sweep.variable {
            SweepVariable::Sigma => {
                let (x, y) = model.state_for_sigma(v, s.x, s.y)?;
                model.check_state(x, y)?;
                Ok(SweepPoint { x, y, ..base })
            }
            SweepVariable::Gamma => Ok(SweepPoint { gamma: Some(v), ..base }),
            SweepVariable::Tau => Ok(SweepPoint { horizon: s.t + v, ..base }),
        })
        .collect())
}

fn expansion_at(cfg: &RunConfig, model: &ModelSpec, p: &SweepPoint) -> Result<Expansion> {
    let center = cfg.state.center.map_or((p.x, p.y), |[cx, cy]| (cx, cy));
    match p.gamma {
        Some(g) => Expansion::power(model, g, center, p.horizon),
        None => Expansion::new(model, cfg.utility.build()?, center, p.horizon, cfg.utility.grid(p.w)),
    }
}

fn note(flags: &mut Vec<String>, what: &str, e: &Error) {
    flags.push(format!("{what}: {e}"));
}

fn compare_point(cfg: &RunConfig, model: &ModelSpec, point: &Result<SweepPoint>) -> Vec<CompareRow> {
    let skipped = |p: Option<&SweepPoint>, e: &Error| -> Vec<CompareRow> {
        cfg.orders
            .iter()
            .map(|&order| CompareRow {
                t: p.map_or(cfg.state.t, |p| p.t),
                x: p.map_or(f64::NAN, |p| p.x),
                y: p.map_or(f64::NAN, |p| p.y),
                w: cfg.state.w,
                sigma: None,
                order,
                value: None,
                strategy: None,
                implied_sharpe: None,
                exact_value: None,
                exact_strategy: None,
                exact_sharpe: None,
                abs_err_value: None,
                displacement: None,
                flag: format!("skipped: {e}"),
            })
            .collect()
    };
    let p = match point {
        Ok(p) => p,
        Err(e) => return skipped(None, e),
    };
    let exp = match expansion_at(cfg, model, p) {
        Ok(e) => e,
        Err(e) => return skipped(Some(p), &e),
    };
    let (t, x, y, w) = (p.t, p.x, p.y, p.w);
    let mut base_flags = Vec::new();
    let bench: Option<Box<dyn Benchmark>> = match p.gamma.map(|g| benchmark_for(model, g, p.horizon)) {
        Some(Ok(b)) => b,
        Some(Err(e)) => {
            note(&mut base_flags, "exact", &e);
            None
        }
        None => None,
    };
    let exact = |f: &dyn Fn(&dyn Benchmark) -> Result<f64>, what: &str, flags: &mut Vec<String>| {
        bench.as_deref().and_then(|b| f(b).map_err(|e| note(flags, what, &e)).ok())
    };
    let exact_value = exact(&|b| b.value(t, x, y, w), "exact value", &mut base_flags);
    let exact_strategy = exact(&|b| b.strategy(t, x, y, w), "exact strategy", &mut base_flags);
    let exact_sharpe = exact(&|b| b.implied_sharpe(t, x, y, w), "exact sharpe", &mut base_flags);
    let c = exp.terms.center;
    let displacement = (x - c.0).hypot(y - c.1);
    cfg.orders
        .iter()
        .map(|&order| {
            let mut flags = base_flags.clone();
            let value = exp.value(order, t, x, y, w).map_err(|e| note(&mut flags, "value", &e)).ok();
            let strategy = match exp.strategy(order, t, x, y, w) {
                Ok(s) => Some(s),
                Err(Error::Capability(_)) if order == 2 && exp.operators().is_some() => {
                    flags.push("experimental-strategy".into());
                    exp.strategy_order2_experimental(t, x, y, w).map_err(|e| note(&mut flags, "strategy", &e)).ok()
                }
                Err(e) => {
                    note(&mut flags, "strategy", &e);
                    None
                }
            };
            let implied_sharpe =
                exp.implied_sharpe(order, t, x, y, w).map_err(|e| note(&mut flags, "implied sharpe", &e)).ok();
            CompareRow {
                t,
                x,
                y,
                w,
                sigma: Some(model.sigma.evaluate(x, y)),
                order,
                value,
                strategy,
                implied_sharpe,
                exact_value,
                exact_strategy,
                exact_sharpe,
                abs_err_value: value.zip(exact_value).map(|(a, b)| (a - b).abs()),
                displacement: Some(displacement),
                flag: flags.join("; "),
            }
        })
        .collect()
}

pub fn run_compare(cfg: &RunConfig) -> Result<Vec<CompareRow>> {
    let model = cfg.build_model()?;
    let points = sweep_points(cfg, &model)?;
    let rows: Vec<Vec<CompareRow>> = points.par_iter().map(|p| compare_point(cfg, &model, p)).collect();
    Ok(rows.into_iter().flatten().collect())
}

/// Least-squares slope and R² of `log e` against `log τ`.
pub fn fit_rate(taus: &[f64], errors: &[f64]) -> Result<(f64, f64)> {
    if taus.len() < 3 || taus.len() != errors.len() {
        return Err(Error::InvalidInput("rate fit needs at least 3 (tau, error) pairs".into()));
    }
    if errors.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::Numerical("rate fit needs positive finite errors".into()));
    }
    let lx: Vec<f64> = taus.iter().map(|t| t.ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = ly.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((slope, r2))
}

pub fn run_convergence(cfg: &RunConfig) -> Result<(Vec<ConvergenceRow>, Vec<RateFit>)> {
    if cfg.command != Command::Convergence {
        return Err(Error::InvalidInput("not a convergence config".into()));
    }
    let model = cfg.build_model()?;
    let gamma = cfg.utility.power_gamma().ok_or_else(|| Error::InvalidInput("power utility required".into()))?;
    let taus = cfg.sweep.as_ref().ok_or_else(|| Error::InvalidInput("tau sweep required".into()))?.values()?;
    let s = &cfg.state;
    let ys: Vec<f64> = match &cfg.convergence {
        None => vec![s.y],
        Some(c) => spaced(c.from, c.to, c.points, Spacing::Linear)
            .into_iter()
            .map(|v| match c.axis {
                Axis::Sigma => model.state_for_sigma(v, s.x, s.y).map(|p| p.1),
                Axis::Y => Ok(v),
            })
            .collect::<Result<_>>()?,
    };
    let per_tau: Vec<Result<Vec<ConvergenceRow>>> = taus
        .par_iter()
        .map(|&tau| {
            let horizon = s.t + tau;
            let bench = HestonBenchmark::from_model(&model, gamma, horizon)?;
            let mut sup = vec![(0.0_f64, f64::NAN); cfg.orders.len()];
            for &y in &ys {
                let exact = bench.value(s.t, s.x, y, s.w)?;
                let center = s.center.map_or((s.x, y), |[cx, cy]| (cx, cy));
                let exp = Expansion::power(&model, gamma, center, horizon)?;
                for (k, &order) in cfg.orders.iter().enumerate() {
                    let err = (exp.value(order, s.t, s.x, y, s.w)? - exact).abs();
                    if !(err <= sup[k].0) {
                        sup[k] = (err, y);
                    }
                }
            }
            Ok(cfg
                .orders
                .iter()
                .zip(sup)
                .map(|(&order, (e, y))| ConvergenceRow { tau, order, sup_abs_err: e, y_at_sup: y })
                .collect())
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_tau {
        rows.extend(r?);
    }
    let fits = cfg
        .orders
        .iter()
        .map(|&order| {
            let errs: Vec<f64> = rows.iter().filter(|r| r.order == order).map(|r| r.sup_abs_err).collect();
            let (slope, r_squared) = fit_rate(&taus, &errs).unwrap_or((f64::NAN, f64::NAN));
            RateFit { order, slope, r_squared }
        })
        .collect();
    Ok((rows, fits))
}

pub fn run_simulate(cfg: &RunConfig) -> Result<(Vec<SimulateRow>, Option<f64>)> {
    let sim = cfg.simulate.as_ref().ok_or_else(|| Error::InvalidInput("[simulate] section required".into()))?;
    let model = cfg.build_model()?;
    let utility = cfg.utility.build()?;
    let s = &cfg.state;
    let horizon = s.horizon.ok_or_else(|| Error::InvalidInput("state needs `horizon`".into()))?;
    let t0 = s.t;
    let mc = SimConfig {
        antithetic: sim.antithetic,
        ..SimConfig::new(sim.paths, sim.steps_per_year, cfg.seed, (s.x, s.y, s.w), horizon - t0)
    };
    let gamma = cfg.utility.power_gamma();
    let bench = match gamma {
        Some(g) => benchmark_for(&model, g, horizon)?,
        None => None,
    };
    let exact_value = bench.as_ref().map(|b| b.value(t0, s.x, s.y, s.w)).transpose()?;
    let center = s.center.map_or((s.x, s.y), |[cx, cy]| (cx, cy));
    let need_gamma = || gamma.ok_or_else(|| Error::InvalidInput("strategy needs power utility".into()));
    let mut rows = Vec::new();
    for &name in &sim.strategies {
        let r = match name {
            StrategyName::Zero => simulate_expected_utility(&model, &|_, _, _, _| 0.0, &utility, &mc)?,
            StrategyName::Exact => {
                let b = bench
                    .as_deref()
                    .ok_or_else(|| Error::Capability("no exact strategy for this model".into()))?;
                let f = |t: f64, x: f64, y: f64, w: f64| b.strategy(t0 + t, x, y, w).unwrap_or(0.0);
                simulate_expected_utility(&model, &f, &utility, &mc)?
            }
            StrategyName::Order0 | StrategyName::Order1 => {
                let exp = Expansion::power(&model, need_gamma()?, center, horizon)?;
                let fb = exp.feedback(if name == StrategyName::Order0 { 0 } else { 1 })?;
                let f = |t: f64, x: f64, y: f64, w: f64| fb(t0 + t, x, y, w);
                simulate_expected_utility(&model, &f, &utility, &mc)?
            }
        };
        rows.push(SimulateRow {
            strategy_name: name.label().into(),
            paths: r.paths,
            steps: r.steps,
            mean_utility: r.mean_utility,
            stderr: r.stderr,
            bankruptcies: r.bankruptcies,
        });
    }
    Ok((rows, exact_value))
}

pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    Ok(match cfg.command {
        Command::Compare => RunOutput::Compare(run_compare(cfg)?),
        Command::ImpliedSharpe => RunOutput::ImpliedSharpe(run_compare(cfg)?),
        Command::Convergence => {
            let (rows, fits) = run_convergence(cfg)?;
            RunOutput::Convergence { rows, fits }
        }
        Command::Simulate => {
            let (rows, exact_value) = run_simulate(cfg)?;
            RunOutput::Simulate { rows, exact_value }
        }
    })
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, num)
}

fn write_csv<const N: usize>(header: [&str; N], records: impl Iterator<Item = Vec<String>>) -> Result<String> {
    let io = |e: csv::Error| Error::Numerical(format!("csv output: {e}"));
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    w.write_record(header).map_err(io)?;
    for r in records {
        w.write_record(r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Numerical(format!("csv output: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

impl RunOutput {
    /// Count of rows carrying a flag.
    pub fn flagged(&self) -> usize {
        match self {
            Self::Compare(r) | Self::ImpliedSharpe(r) => r.iter().filter(|r| !r.flag.is_empty()).count(),
            _ => 0,
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        match self {
            Self::Compare(rows) => write_csv(
                COMPARE_HEADER,
                rows.iter().map(|r| {
                    vec![
                        num(r.t),
                        num(r.x),
                        num(r.y),
                        num(r.w),
                        opt(r.sigma),
                        r.order.to_string(),
                        opt(r.value),
                        opt(r.strategy),
                        opt(r.implied_sharpe),
                        opt(r.exact_value),
                        opt(r.exact_strategy),
                        opt(r.exact_sharpe),
                        opt(r.abs_err_value),
                        opt(r.displacement),
                        r.flag.clone(),
                    ]
                }),
            ),
            Self::ImpliedSharpe(rows) => write_csv(
                SHARPE_HEADER,
                rows.iter().map(|r| {
                    vec![
                        num(r.t),
                        num(r.x),
                        num(r.y),
                        num(r.w),
                        opt(r.sigma),
                        r.order.to_string(),
                        opt(r.implied_sharpe),
                        opt(r.exact_sharpe),
                        opt(r.implied_sharpe.zip(r.exact_sharpe).map(|(a, b)| (a - b).abs())),
                        r.flag.clone(),
                    ]
                }),
            ),
            Self::Convergence { rows, .. } => write_csv(
                CONVERGENCE_HEADER,
                rows.iter().map(|r| vec![num(r.tau), r.order.to_string(), num(r.sup_abs_err), num(r.y_at_sup)]),
            ),
            Self::Simulate { rows, .. } => write_csv(
                SIMULATE_HEADER,
                rows.iter().map(|r| {
                    vec![
                        r.strategy_name.clone(),
                        r.paths.to_string(),
                        r.steps.to_string(),
                        num(r.mean_utility),
                        num(r.stderr),
                        r.bankruptcies.to_string(),
                    ]
                }),
            ),
        }
    }

    /// Run manifest: program version, seed, output file, results summary and
    /// the full configuration echo.
    pub fn manifest(&self, cfg: &RunConfig, csv_path: Option<&str>) -> String {
        #[derive(Serialize)]
        struct Manifest<'a> {
            program: &'static str,
            version: &'static str,
            seed: u64,
            #[serde(skip_serializing_if = "Option::is_none")]
            csv: Option<&'a str>,
            rows: usize,
            flagged_rows: usize,
            #[serde(skip_serializing_if = "Option::is_none")]
            exact_value: Option<f64>,
            #[serde(skip_serializing_if = "Vec::is_empty")]
            fits: Vec<RateFit>,
            config: &'a RunConfig,
        }
        let (rows, exact_value, fits) = match self {
            Self::Compare(r) | Self::ImpliedSharpe(r) => (r.len(), None, Vec::new()),
            Self::Convergence { rows, fits } => (rows.len(), None, fits.clone()),
            Self::Simulate { rows, exact_value } => (rows.len(), *exact_value, Vec::new()),
        };
        let m = Manifest {
            program: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            seed: cfg.seed,
            csv: csv_path,
            rows,
            flagged_rows: self.flagged(),
            exact_value,
            fits,
            config: cfg,
        };
        toml::to_string(&m).expect("manifest serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> RunConfig {
        RunConfig::parse(text).unwrap()
    }

    #[test]
    fn constant_model_single_point_is_exact() {
        let c = cfg(r#"
command = "compare"
[model]
kind = "constant"
mu = 0.2
sigma = 0.25
[utility]
gamma = 3.0
[state]
horizon = 2.0
w = 1.5
"#);
        let rows = run_compare(&c).unwrap();
        assert_eq!(rows.len(), 3);
        for r in &rows {
            assert_eq!(r.flag, "");
            assert!(r.abs_err_value.unwrap() <= 1e-15 * r.exact_value.unwrap().abs());
            assert!((r.strategy.unwrap() - r.exact_strategy.unwrap()).abs() < 1e-14);
            assert!((r.implied_sharpe.unwrap() - 0.8).abs() < 1e-14);
        }
    }

    #[test]
    fn rate_fit_recovers_power_law() {
        let taus = [0.05, 0.1, 0.2, 0.4];
        let errs: Vec<f64> = taus.iter().map(|t: &f64| 3.0 * t.powf(2.5)).collect();
        let (s, r2) = fit_rate(&taus, &errs).unwrap();
        assert!((s - 2.5).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
        assert!(fit_rate(&taus[..2], &errs[..2]).is_err());
    }

    #[test]
    fn tau_sweep_writes_csv_and_manifest() {
        let c = cfg(r#"
command = "compare"
orders = [0, 1]
[model]
kind = "constant"
mu = 0.2
sigma = 0.25
[utility]
gamma = 3.0
[state]
w = 1.0
[sweep]
variable = "tau"
values = [0.5, 1.0]
"#);
        let out = run(&c).unwrap();
        let csv = out.to_csv().unwrap();
        assert!(csv.starts_with("t,x,y,w,sigma,order,value"));
        assert_eq!(out.flagged(), 0);
        let manifest = out.manifest(&c, Some("out.csv"));
        assert!(manifest.contains("seed = 0") && manifest.contains("[config.model]"));
    }

    #[test]
    fn missing_oracle_is_flagged_not_fatal() {
        let c = cfg(r#"
command = "compare"
[model]
kind = "heston"
kappa = 0.3
theta = 0.1
delta = 0.3
rho = -0.5
mu = 0.3
[utility]
gamma = 3.0
[state]
horizon = 1.0
[sweep]
variable = "sigma"
values = [0.2, 0.3]
"#);
        let out = run(&c).unwrap();
        assert_eq!(out.flagged(), 6);
        if let RunOutput::Compare(rows) = &out {
            assert!(rows.iter().all(|r| r.value.is_some() && r.exact_value.is_none()));
            assert!(rows[0].flag.starts_with("exact:"));
        }
    }

    #[test]
    fn simulate_zero_strategy_row() {
        let c = cfg(r#"
command = "simulate"
seed = 5
[model]
kind = "constant"
mu = 0.2
sigma = 0.2
[utility]
gamma = 3.0
[state]
horizon = 1.0
w = 2.0
[simulate]
paths = 100
steps_per_year = 10
strategies = ["zero"]
"#);
        let (rows, exact) = run_simulate(&c).unwrap();
        assert_eq!(rows[0].mean_utility, 2.0_f64.powi(-2) / -2.0);
        assert_eq!(rows[0].stderr, 0.0);
        assert!(exact.is_some());
    }
}
