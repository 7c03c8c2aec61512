//! Order 0, 1 and 2 approximations of the value function, optimal strategy
//! and implied Sharpe ratio around an expansion point `(x̄, ȳ)`.
//!
//! Orders 0 and 1 hold for any utility with a Merton core; order 2 needs the
//! exponential base of power utility.

pub mod psi;

use crate::error::{ensure_positive, invalid, Error, Result};
use crate::merton::{GridSpec, MertonCore, MertonDerivs, Utility};
use crate::model::{build_taylor_table, lambda_zero, ModelSpec, Product, TaylorTable};
use crate::opalg::{ExpState, OperatorExpansion, SourceVariant};

/// Coefficients of the first-order correction.
///
/// `A(τ, x, y) = λ₁₀[u + ½τ b₀] + λ₀₁[v + ½τ c₀]` and `B = λ₁₀ μ₀ + λ₀₁ (ρβλ)₀`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstOrderTerms {
    pub center: (f64, f64),
    pub lambda0: f64,
    pub lambda10: f64,
    pub lambda01: f64,
    pub b0: f64,
    pub c0: f64,
    pub big_b: f64,
}

impl FirstOrderTerms {
    pub fn new(table: &TaylorTable) -> Self {
        let lambda10 = table.get(Product::Lambda, 1, 0);
        let lambda01 = table.get(Product::Lambda, 0, 1);
        Self {
            center: table.center,
            lambda0: lambda_zero(table),
            lambda10,
            lambda01,
            b0: table.b(0, 0),
            c0: table.at_center(Product::C),
            big_b: lambda10 * table.at_center(Product::Mu) + lambda01 * table.at_center(Product::RhoBetaLambda),
        }
    }

    pub fn a(&self, tau: f64, x: f64, y: f64) -> f64 {
        let (u, v) = (x - self.center.0, y - self.center.1);
        self.lambda10 * (u + 0.5 * tau * self.b0) + self.lambda01 * (v + 0.5 * tau * self.c0)
    }

    /// First-order Sharpe shift `Λ⁽¹⁾ = A + ½τB(R_w − 1)`.
    pub fn sharpe_shift(&self, tau: f64, x: f64, y: f64, r_w: f64) -> f64 {
        self.a(tau, x, y) + 0.5 * tau * self.big_b * (r_w - 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApproxReport {
    pub order: usize,
    pub value: f64,
    pub strategy: f64,
    pub implied_sharpe: f64,
    pub state: (f64, f64, f64, f64),
    pub exact_value: Option<f64>,
    pub exact_strategy: Option<f64>,
    pub exact_sharpe: Option<f64>,
    /// Distance of `(x, y)` from the expansion point.
    pub displacement: f64,
}

/// Everything needed to evaluate the approximations around one expansion point.
#[derive(Debug, Clone)]
pub struct Expansion {
    pub model: ModelSpec,
    pub table: TaylorTable,
    pub core: MertonCore,
    pub terms: FirstOrderTerms,
    ops: Option<OperatorExpansion>,
}

impl Expansion {
    /// Expansion for any utility; order 2 becomes available for power utility.
    pub fn new(model: &ModelSpec, utility: Utility, center: (f64, f64), horizon: f64, grid: GridSpec) -> Result<Self> {
        let table = build_taylor_table(model, center, 2)?;
        let lambda0 = lambda_zero(&table);
        let core = crate::merton::solve_general_merton(utility, lambda0, horizon, grid)?;
        Self::from_parts(model, table, core)
    }

    pub fn power(model: &ModelSpec, gamma: f64, center: (f64, f64), horizon: f64) -> Result<Self> {
        let table = build_taylor_table(model, center, 2)?;
        let core = MertonCore::power(gamma, lambda_zero(&table), horizon)?;
        Self::from_parts(model, table, core)
    }

    fn from_parts(model: &ModelSpec, table: TaylorTable, core: MertonCore) -> Result<Self> {
        let ops = match ExpState::from_core(&core) {
            Ok(base) => Some(OperatorExpansion::new(&table, base, SourceVariant::Complete)?),
            Err(_) => None,
        };
        Ok(Self { model: model.clone(), terms: FirstOrderTerms::new(&table), table, core, ops })
    }

    pub fn operators(&self) -> Option<&OperatorExpansion> {
        self.ops.as_ref()
    }

    pub fn lambda0(&self) -> f64 {
        self.terms.lambda0
    }

    fn tau(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0 && t <= self.core.horizon) {
            return Err(invalid(format!("time {t} outside [0, {}]", self.core.horizon)));
        }
        Ok(self.core.horizon - t)
    }

    fn check(&self, t: f64, x: f64, y: f64, w: f64) -> Result<f64> {
        self.model.check_state(x, y)?;
        ensure_positive(w, "wealth")?;
        self.tau(t)
    }

    fn ops_or_capability(&self) -> Result<&OperatorExpansion> {
        self.ops.as_ref().ok_or_else(|| {
            Error::Capability(
                "order-2 corrections need an exponential base solution, available for power utility only".into(),
            )
        })
    }

    fn check_order(order: usize) -> Result<()> {
        if order > 2 {
            return Err(Error::Capability(format!("approximation order {order} (supported: 0, 1, 2)")));
        }
        Ok(())
    }

    fn base_derivs(&self, t: f64, w: f64) -> Result<MertonDerivs> {
        self.core.derivs(t, w, self.terms.lambda0)
    }

    /// `V̄ₙ(t, x, y, w)`.
    pub fn value(&self, order: usize, t: f64, x: f64, y: f64, w: f64) -> Result<f64> {
        Self::check_order(order)?;
        let tau = self.check(t, x, y, w)?;
        let d = self.base_derivs(t, w)?;
        let l0 = self.terms.lambda0;
        match order {
            0 => Ok(d.value),
            1 => {
                let a = self.terms.a(tau, x, y);
                Ok(d.value + tau * l0 * a * d.d1() + 0.5 * tau * tau * l0 * self.terms.big_b * d.d1_squared())
            }
            _ => {
                let ops = self.ops_or_capability()?;
                let (u, v) = self.displacement_uv(x, y);
                let p1 = ops.correction_ratio(1, tau, u, v)?;
                let p2 = ops.correction_ratio(2, tau, u, v)?;
                Ok(d.value * (1.0 + p1 + p2))
            }
        }
    }

    fn displacement_uv(&self, x: f64, y: f64) -> (f64, f64) {
        (x - self.terms.center.0, y - self.terms.center.1)
    }

    /// Implied Sharpe ratio as a series `λ₀ + Λ₁ + Λ₂`. Order 2 (power utility)
    /// matches `M(λ₀ + Λ₁ + Λ₂) = V̄₂` through second order:
    /// `Λ₂ = (P₂ − ½P₁²)/(cτλ₀) − Λ₁²/(2λ₀)` with `Λ₁ = P₁/(cτλ₀)`.
    pub fn implied_sharpe(&self, order: usize, t: f64, x: f64, y: f64, w: f64) -> Result<f64> {
        Self::check_order(order)?;
        let tau = self.check(t, x, y, w)?;
        let l0 = self.terms.lambda0;
        match order {
            0 => Ok(l0),
            1 => {
                let r_w = self.base_derivs(t, w)?.r[1];
                Ok(l0 + self.terms.sharpe_shift(tau, x, y, r_w))
            }
            _ => {
                let gamma = self.power_gamma()?;
                let first = self.implied_sharpe(1, t, x, y, w)?;
                if tau == 0.0 {
                    return Ok(first);
                }
                if l0 == 0.0 {
                    return Err(Error::Numerical("second-order Sharpe series needs a nonzero base Sharpe ratio".into()));
                }
                let ops = self.ops_or_capability()?;
                let (u, v) = self.displacement_uv(x, y);
                let p1 = ops.correction_ratio(1, tau, u, v)?;
                let p2 = ops.correction_ratio(2, tau, u, v)?;
                let scale = (1.0 - gamma) / gamma * tau * l0;
                let l1 = first - l0;
                Ok(first + (p2 - 0.5 * p1 * p1) / scale - l1 * l1 / (2.0 * l0))
            }
        }
    }

    fn power_gamma(&self) -> Result<f64> {
        self.ops_or_capability()?;
        self.core
            .utility
            .gamma()
            .ok_or_else(|| Error::Capability("power utility required".into()))
    }

    /// Approximate optimal strategy `π̄ₙ` in currency units.
    ///
    /// Order 2 is available at the expansion point only; see
    /// [`Expansion::strategy_order2_experimental`] for other states.
    pub fn strategy(&self, order: usize, t: f64, x: f64, y: f64, w: f64) -> Result<f64> {
        Self::check_order(order)?;
        let tau = self.check(t, x, y, w)?;
        let m = &self.model;
        let mu = m.mu.evaluate(x, y);
        let sigma = m.sigma.evaluate(x, y);
        let beta = m.beta.evaluate(x, y);
        let mu_over_s2 = mu / (sigma * sigma);
        let l0 = self.terms.lambda0;
        let d = self.base_derivs(t, w)?;
        let [r, r_w, r_ww, r_www] = d.r;
        match order {
            0 => Ok(mu_over_s2 * r),
            1 => {
                let shift = self.terms.sharpe_shift(tau, x, y, r_w);
                let r_shifted = if self.core.is_closed_form() {
                    r
                } else {
                    self.core.derivs(t, w, (l0 + shift).abs())?.r[0]
                };
                let curvature = 0.5 * tau * tau * self.terms.big_b * l0 * r * r * (r * r_www + r_w * r_ww);
                let hedge = tau * l0 * r * (r_w - 1.0) * (m.rho * beta / sigma * self.terms.lambda01 + self.terms.lambda10);
                Ok(mu_over_s2 * (r_shifted + curvature) + hedge)
            }
            _ => {
                let (u, v) = self.displacement_uv(x, y);
                let scale = 1.0 + self.terms.center.0.abs().max(self.terms.center.1.abs());
                if u.abs().max(v.abs()) > 1e-12 * scale {
                    return Err(Error::Capability(
                        "order-2 strategy is available at the expansion point only \
                         (use the experimental finite-difference route elsewhere)"
                            .into(),
                    ));
                }
                Ok(self.strategy(1, t, x, y, w)? + self.strategy_order2_correction(t, w)?)
            }
        }
    }

    /// Second-order strategy correction `π₂` at the expansion point.
    pub fn strategy_order2_correction(&self, t: f64, w: f64) -> Result<f64> {
        let tau = self.tau(t)?;
        let gamma = self.power_gamma()?;
        let ops = self.ops_or_capability()?;
        let p1 = ops.correction_ratio(1, tau, 0.0, 0.0)?;
        let (p1u, p1v) = ops.correction_gradient(1, tau, 0.0, 0.0)?;
        let (p2u, p2v) = ops.correction_gradient(2, tau, 0.0, 0.0)?;
        let t0 = &self.table;
        let hedge_ratio = t0.at_center(Product::RhoSigmaBeta) / t0.at_center(Product::Sigma2);
        Ok(w / gamma * ((p2u - p1u * p1) + hedge_ratio * (p2v - p1v * p1)))
    }

    /// Order-2 strategy at any state from the feedback formula applied to `V̄₂`
    /// with central differences in `(x, y, w)`. Experimental: no reference
    /// formula exists away from the expansion point.
    pub fn strategy_order2_experimental(&self, t: f64, x: f64, y: f64, w: f64) -> Result<f64> {
        self.check(t, x, y, w)?;
        let v = |x: f64, y: f64, w: f64| self.value(2, t, x, y, w);
        let hx = 1e-4 * x.abs().max(1.0);
        let hy = 1e-4 * y.abs().max(1.0);
        let hw = 1e-3 * w;
        let vw = |x: f64, y: f64| -> Result<f64> { Ok((v(x, y, w + hw)? - v(x, y, w - hw)?) / (2.0 * hw)) };
        let v_w = vw(x, y)?;
        let v_ww = (v(x, y, w + hw)? - 2.0 * v(x, y, w)? + v(x, y, w - hw)?) / (hw * hw);
        let v_xw = (vw(x + hx, y)? - vw(x - hx, y)?) / (2.0 * hx);
        let v_yw = match self.model.kind {
            crate::model::ModelKind::PureLv => 0.0,
            _ => (vw(x, y + hy)? - vw(x, y - hy)?) / (2.0 * hy),
        };
        let m = &self.model;
        feedback_strategy(
            m.mu.evaluate(x, y),
            m.sigma.evaluate(x, y),
            m.beta.evaluate(x, y),
            m.rho,
            [v_w, v_ww, v_xw, v_yw],
        )
    }

    pub fn report(&self, order: usize, t: f64, x: f64, y: f64, w: f64) -> Result<ApproxReport> {
        let (u, v) = self.displacement_uv(x, y);
        Ok(ApproxReport {
            order,
            value: self.value(order, t, x, y, w)?,
            strategy: self.strategy(order, t, x, y, w)?,
            implied_sharpe: self.implied_sharpe(order, t, x, y, w)?,
            state: (t, x, y, w),
            exact_value: None,
            exact_strategy: None,
            exact_sharpe: None,
            displacement: u.hypot(v),
        })
    }

    /// Cheap feedback map for simulation: the order-0 or order-1 strategy with
    /// the expansion point held fixed. Power utility only.
    pub fn feedback(&self, order: usize) -> Result<impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + '_> {
        if order > 1 {
            return Err(Error::Capability("simulation feedback is provided for orders 0 and 1".into()));
        }
        let gamma = self
            .core
            .utility
            .gamma()
            .filter(|_| self.core.is_closed_form())
            .ok_or_else(|| Error::Capability("simulation feedback needs power utility".into()))?;
        let c = (1.0 - gamma) / gamma;
        let l0 = self.terms.lambda0;
        let (l10, l01) = (self.terms.lambda10, self.terms.lambda01);
        let horizon = self.core.horizon;
        let m = &self.model;
        let first = if order == 1 { 1.0 } else { 0.0 };
        Ok(move |t: f64, x: f64, y: f64, w: f64| {
            let mu = m.mu.evaluate(x, y);
            let sigma = m.sigma.evaluate(x, y);
            let tau = (horizon - t).max(0.0);
            let mut p = mu / (sigma * sigma);
            if first != 0.0 {
                let beta = m.beta.evaluate(x, y);
                p += tau * l0 * c * (m.rho * beta / sigma * l01 + l10);
            }
            w / gamma * p
        })
    }
}

/// `−(σ²V_xw + ρσβV_yw + μV_w) / (σ²V_ww)` from `[V_w, V_ww, V_xw, V_yw]`.
pub fn feedback_strategy(mu: f64, sigma: f64, beta: f64, rho: f64, d: [f64; 4]) -> Result<f64> {
    let [v_w, v_ww, v_xw, v_yw] = d;
    if v_ww == 0.0 || !v_ww.is_finite() {
        return Err(Error::Numerical("feedback strategy is singular: V_ww vanishes".into()));
    }
    Ok(-(sigma * sigma * v_xw + rho * sigma * beta * v_yw + mu * v_w) / (sigma * sigma * v_ww))
}

/// Constant Sharpe ratio whose power-utility Merton value equals `value`:
/// `sqrt(log(value / U(w)) · 2γ / ((1−γ)τ))`.
pub fn implied_sharpe_exact_power(value: f64, w: f64, tau: f64, gamma: f64) -> Result<f64> {
    ensure_positive(w, "wealth")?;
    ensure_positive(gamma, "gamma")?;
    if gamma == 1.0 {
        return Err(invalid("power utility needs gamma != 1"));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(invalid(format!("implied Sharpe ratio is undefined at time to maturity {tau}")));
    }
    let u = w.powf(1.0 - gamma) / (1.0 - gamma);
    let ratio = value / u;
    if !(ratio > 0.0) {
        return Err(Error::Range(format!("value {value} and utility {u} differ in sign")));
    }
    let radicand = ratio.ln() * 2.0 * gamma / ((1.0 - gamma) * tau);
    if radicand < 0.0 {
        return Err(Error::Range(format!(
            "value {value} is below U(w) = {u}; no Sharpe ratio reproduces it"
        )));
    }
    Ok(radicand.sqrt())
}
