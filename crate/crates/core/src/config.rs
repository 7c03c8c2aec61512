//! Run configuration: TOML text with `key = value` sections.
//!
//! Parsing goes through a span-carrying raw layer so that every rejection,
//! syntactic or semantic, names the line it came from.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::error::{Error, Result};
use crate::merton::{GridSpec, Utility};
use crate::model::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Compare,
    Convergence,
    Simulate,
    ImpliedSharpe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelName {
    Heston,
    ExpLv,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelName,
    pub mu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

impl ModelSection {
    pub fn build(&self) -> Result<ModelSpec> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::InvalidInput(format!("model parameter `{name}` is required for this kind")))
        };
        let allowed: &[&str] = match self.kind {
            ModelName::Heston => &["kappa", "theta", "delta", "rho"],
            ModelName::ExpLv => &["delta", "eta"],
            ModelName::Constant => &["sigma"],
        };
        let given = [
            ("kappa", self.kappa),
            ("theta", self.theta),
            ("delta", self.delta),
            ("rho", self.rho),
            ("eta", self.eta),
            ("sigma", self.sigma),
        ];
        if let Some((name, _)) = given.iter().find(|(n, v)| v.is_some() && !allowed.contains(n)) {
            return Err(Error::InvalidInput(format!("model parameter `{name}` does not apply to this kind")));
        }
        match self.kind {
            ModelName::Heston => ModelSpec::heston_sv(
                need(self.kappa, "kappa")?,
                need(self.theta, "theta")?,
                need(self.delta, "delta")?,
                need(self.rho, "rho")?,
                self.mu,
            ),
            ModelName::ExpLv => ModelSpec::exp_lv(self.mu, need(self.delta, "delta")?, need(self.eta, "eta")?),
            ModelName::Constant => ModelSpec::constant(self.mu, need(self.sigma, "sigma")?),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum UtilityName {
    #[default]
    Power,
    Mixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilitySection {
    #[serde(default)]
    pub kind: UtilityName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gammas: Option<Vec<f64>>,
    /// Wealth range for the numerical Merton solver (non-power utilities).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_max: Option<f64>,
}

impl UtilitySection {
    /// Power-utility exponent, if this is a power utility.
    pub fn power_gamma(&self) -> Option<f64> {
        match self.kind {
            UtilityName::Power => self.gamma,
            UtilityName::Mixture => None,
        }
    }

    pub fn build(&self) -> Result<Utility> {
        match self.kind {
            UtilityName::Power => {
                if self.weights.is_some() || self.gammas.is_some() {
                    return Err(Error::InvalidInput("`weights`/`gammas` apply to mixture utilities only".into()));
                }
                let g = self.gamma.ok_or_else(|| Error::InvalidInput("power utility needs `gamma`".into()))?;
                Utility::power(g)
            }
            UtilityName::Mixture => {
                if self.gamma.is_some() {
                    return Err(Error::InvalidInput("mixture utility takes `gammas`, not `gamma`".into()));
                }
                let w = self.weights.clone().ok_or_else(|| Error::InvalidInput("mixture needs `weights`".into()))?;
                let g = self.gammas.clone().ok_or_else(|| Error::InvalidInput("mixture needs `gammas`".into()))?;
                Utility::mixture(w, g)
            }
        }
    }

    pub fn grid(&self, w: f64) -> GridSpec {
        GridSpec::new(self.w_min.unwrap_or(0.05 * w), self.w_max.unwrap_or(20.0 * w))
    }
}

fn zero() -> f64 {
    0.0
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSection {
    #[serde(default = "zero")]
    pub t: f64,
    /// Terminal time `T`; not needed for a `tau` sweep, which sets `T = t + τ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default = "zero")]
    pub x: f64,
    #[serde(default = "one")]
    pub y: f64,
    #[serde(default = "one")]
    pub w: f64,
    /// Fixed expansion point `(x̄, ȳ)`; by default each evaluation state is its own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepVariable {
    Sigma,
    Gamma,
    Tau,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Spacing {
    #[default]
    Linear,
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub variable: SweepVariable,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(default)]
    pub spacing: Spacing,
    /// Explicit values, instead of `from`/`to`/`points`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

/// Evenly spaced points, endpoints included.
pub fn spaced(from: f64, to: f64, points: usize, spacing: Spacing) -> Vec<f64> {
    if points == 1 {
        return vec![from];
    }
    let n = (points - 1) as f64;
    (0..points)
        .map(|i| {
            let s = i as f64 / n;
            match spacing {
                Spacing::Linear => from + (to - from) * s,
                Spacing::Geometric => from * (to / from).powf(s),
            }
        })
        .collect()
}

impl SweepSection {
    pub fn values(&self) -> Result<Vec<f64>> {
        if let Some(v) = &self.values {
            if self.from.is_some() || self.to.is_some() || self.points.is_some() {
                return Err(Error::InvalidInput("give either `values` or `from`/`to`/`points`, not both".into()));
            }
            if v.is_empty() {
                return Err(Error::InvalidInput("sweep `values` is empty".into()));
            }
            return Ok(v.clone());
        }
        let (Some(from), Some(to), Some(points)) = (self.from, self.to, self.points) else {
            return Err(Error::InvalidInput("sweep needs `from`, `to` and `points` (or `values`)".into()));
        };
        if points == 0 {
            return Err(Error::InvalidInput("sweep `points` must be at least 1".into()));
        }
        if !(from.is_finite() && to.is_finite()) || (points > 1 && from > to) {
            return Err(Error::InvalidInput(format!("sweep range [{from}, {to}] is empty")));
        }
        if self.spacing == Spacing::Geometric && !(from > 0.0) {
            return Err(Error::InvalidInput("geometric spacing needs a positive range".into()));
        }
        Ok(spaced(from, to, points, self.spacing))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyName {
    Zero,
    Exact,
    Order0,
    Order1,
}

impl StrategyName {
    pub fn label(self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::Exact => "exact",
            Self::Order0 => "order0",
            Self::Order1 => "order1",
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub paths: usize,
    pub steps_per_year: usize,
    pub strategies: Vec<StrategyName>,
    #[serde(default = "yes")]
    pub antithetic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    #[default]
    Sigma,
    Y,
}

/// Cross-section over which the convergence study takes the supremum of the error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSection {
    #[serde(default)]
    pub axis: Axis,
    pub from: f64,
    pub to: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    command: Spanned<Command>,
    orders: Option<Spanned<Vec<usize>>>,
    seed: Option<u64>,
    model: Spanned<ModelSection>,
    utility: Spanned<UtilitySection>,
    state: Spanned<StateSection>,
    sweep: Option<Spanned<SweepSection>>,
    simulate: Option<Spanned<SimulateSection>>,
    convergence: Option<Spanned<ConvergenceSection>>,
    output: Option<OutputSection>,
}

/// Validated run configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub orders: Vec<usize>,
    pub seed: u64,
    pub model: ModelSection,
    pub utility: UtilitySection,
    pub state: StateSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceSection>,
    pub output: OutputSection,
}

/// 1-based line of a byte offset.
fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn at(src: &str, span: Range<usize>, e: Error) -> Error {
    let message = match e {
        Error::InvalidInput(m) | Error::Capability(m) | Error::Range(m) | Error::Numerical(m) | Error::Consistency(m) => m,
        Error::Config { message, .. } => message,
    };
    let line = key_line(src, &span, &message).unwrap_or_else(|| line_of(src, span.start));
    Error::Config { line, message }
}

/// Line of the first key quoted in `message` (as `` `key` ``) within the span.
fn key_line(src: &str, span: &Range<usize>, message: &str) -> Option<usize> {
    let key = message.split('`').nth(1)?;
    let section = src.get(span.clone())?;
    let mut offset = span.start;
    for l in section.split_inclusive('\n') {
        let rest = l.trim_start().strip_prefix(key);
        if rest.is_some_and(|r| r.trim_start().starts_with('=')) {
            return Some(line_of(src, offset));
        }
        offset += l.len();
    }
    None
}

pub fn check_orders(orders: &[usize]) -> Result<Vec<usize>> {
    if orders.is_empty() {
        return Err(Error::InvalidInput("at least one order is required".into()));
    }
    let mut out: Vec<usize> = Vec::new();
    for &o in orders {
        if o > 2 {
            return Err(Error::InvalidInput(format!("order {o} is not one of 0, 1, 2")));
        }
        if !out.contains(&o) {
            out.push(o);
        }
    }
    Ok(out)
}

impl RunConfig {
    /// Parses and validates configuration text.
    pub fn parse(src: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(src).map_err(|e| Error::Config {
            line: e.span().map_or(1, |s| line_of(src, s.start)),
            message: e.message().trim().to_string(),
        })?;
        let orders = match &raw.orders {
            Some(o) => check_orders(o.get_ref()).map_err(|e| at(src, o.span(), e))?,
            None => vec![0, 1, 2],
        };
        let cfg = Self {
            command: *raw.command.get_ref(),
            orders,
            seed: raw.seed.unwrap_or(0),
            model: raw.model.get_ref().clone(),
            utility: raw.utility.get_ref().clone(),
            state: raw.state.get_ref().clone(),
            sweep: raw.sweep.as_ref().map(|s| s.get_ref().clone()),
            simulate: raw.simulate.as_ref().map(|s| s.get_ref().clone()),
            convergence: raw.convergence.as_ref().map(|s| s.get_ref().clone()),
            output: raw.output.unwrap_or_default(),
        };
        let model = cfg.model.build().map_err(|e| at(src, raw.model.span(), e))?;
        cfg.utility.build().map_err(|e| at(src, raw.utility.span(), e))?;
        cfg.check_state(&model).map_err(|e| at(src, raw.state.span(), e))?;
        if let Some(s) = &raw.sweep {
            cfg.check_sweep(&model).map_err(|e| at(src, s.span(), e))?;
        }
        let command_span = raw.command.span();
        match cfg.command {
            Command::Compare | Command::ImpliedSharpe => {}
            Command::Convergence => {
                cfg.check_convergence(&model).map_err(|e| {
                    let span = raw.convergence.as_ref().map_or(command_span.clone(), |c| c.span());
                    at(src, span, e)
                })?;
            }
            Command::Simulate => {
                let s = raw
                    .simulate
                    .as_ref()
                    .ok_or_else(|| at(src, command_span.clone(), Error::InvalidInput("simulate needs a [simulate] section".into())))?;
                cfg.check_simulate().map_err(|e| at(src, s.span(), e))?;
            }
        }
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&src)
    }

    pub fn build_model(&self) -> Result<ModelSpec> {
        self.model.build()
    }

    fn sweep_variable(&self) -> Option<SweepVariable> {
        self.sweep.as_ref().map(|s| s.variable)
    }

    fn check_state(&self, model: &ModelSpec) -> Result<()> {
        let s = &self.state;
        if !(s.t >= 0.0 && s.t.is_finite()) {
            return Err(Error::InvalidInput(format!("state time t = {} must be nonnegative", s.t)));
        }
        crate::error::ensure_positive(s.w, "wealth w")?;
        match (self.sweep_variable(), s.horizon) {
            (Some(SweepVariable::Tau), Some(_)) => {
                return Err(Error::InvalidInput("a tau sweep sets the horizon; drop `horizon`".into()));
            }
            (Some(SweepVariable::Tau), None) => {}
            (_, None) => return Err(Error::InvalidInput("state needs `horizon`".into())),
            (_, Some(h)) => {
                if !(h > s.t && h.is_finite()) {
                    return Err(Error::InvalidInput(format!("horizon {h} must exceed t = {}", s.t)));
                }
            }
        }
        if self.sweep_variable() != Some(SweepVariable::Sigma) {
            model.check_state(s.x, s.y)?;
        }
        if let Some([cx, cy]) = s.center {
            model.check_state(cx, cy)?;
        }
        Ok(())
    }

    fn check_sweep(&self, model: &ModelSpec) -> Result<()> {
        let sweep = self.sweep.as_ref().expect("caller checked");
        let values = sweep.values()?;
        match sweep.variable {
            SweepVariable::Sigma => {
                for &v in &values {
                    let (x, y) = model.state_for_sigma(v, self.state.x, self.state.y)?;
                    model.check_state(x, y)?;
                }
            }
            SweepVariable::Gamma => {
                if self.utility.power_gamma().is_none() {
                    return Err(Error::InvalidInput("gamma sweeps need power utility".into()));
                }
                if let Some(g) = values.iter().find(|&&g| !(g > 0.0 && g != 1.0 && g.is_finite())) {
                    return Err(Error::InvalidInput(format!("gamma {g} outside (0, 1) ∪ (1, ∞)")));
                }
            }
            SweepVariable::Tau => {
                if let Some(t) = values.iter().find(|&&t| !(t > 0.0 && t.is_finite())) {
                    return Err(Error::InvalidInput(format!("tau {t} must be positive")));
                }
            }
        }
        Ok(())
    }

    fn check_convergence(&self, model: &ModelSpec) -> Result<()> {
        let sweep = self
            .sweep
            .as_ref()
            .filter(|s| s.variable == SweepVariable::Tau)
            .ok_or_else(|| Error::InvalidInput("convergence needs a tau sweep".into()))?;
        if sweep.values()?.len() < 3 {
            return Err(Error::InvalidInput("convergence needs at least 3 tau points".into()));
        }
        if !matches!(self.model.kind, ModelName::Heston) || self.utility.power_gamma().is_none() {
            return Err(Error::InvalidInput("convergence needs the stochastic-volatility benchmark with power utility".into()));
        }
        if let Some(c) = &self.convergence {
            if c.points == 0 || !(c.from <= c.to) {
                return Err(Error::InvalidInput("convergence cross-section is empty".into()));
            }
            for v in spaced(c.from, c.to, c.points, Spacing::Linear) {
                let (x, y) = match c.axis {
                    Axis::Sigma => model.state_for_sigma(v, self.state.x, self.state.y)?,
                    Axis::Y => (self.state.x, v),
                };
                model.check_state(x, y)?;
            }
        }
        Ok(())
    }

    fn check_simulate(&self) -> Result<()> {
        let s = self.simulate.as_ref().expect("caller checked");
        if s.paths == 0 || s.steps_per_year == 0 {
            return Err(Error::InvalidInput("simulation needs paths >= 1 and steps_per_year >= 1".into()));
        }
        if s.strategies.is_empty() {
            return Err(Error::InvalidInput("simulation needs at least one strategy".into()));
        }
        if self.sweep.is_some() {
            return Err(Error::InvalidInput("simulate runs at the configured state; remove [sweep]".into()));
        }
        if self.utility.power_gamma().is_none()
            && s.strategies.iter().any(|&n| matches!(n, StrategyName::Exact | StrategyName::Order0 | StrategyName::Order1))
        {
            return Err(Error::InvalidInput("simulated strategies other than `zero` need power utility".into()));
        }
        Ok(())
    }

    /// Configuration echo for the run manifest.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
