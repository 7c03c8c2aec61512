//! Closed-form value functions for power utility in two benchmark models,
//! used as oracles for the approximations.

use crate::approx::feedback_strategy;
use crate::approx::psi::distortion_exponent;
use crate::error::{ensure_positive, invalid, Error, Result};
use crate::model::{BuiltinModel, ModelSpec};

/// Exact value, strategy and implied Sharpe ratio at `(t, x, y, w)`.
pub trait Benchmark: Send + Sync {
    fn horizon(&self) -> f64;
    fn gamma(&self) -> f64;
    fn value(&self, t: f64, x: f64, y: f64, w: f64) -> Result<f64>;
    fn strategy(&self, t: f64, x: f64, y: f64, w: f64) -> Result<f64>;
    fn implied_sharpe(&self, t: f64, x: f64, y: f64, w: f64) -> Result<f64>;
}

fn check_power(gamma: f64) -> Result<()> {
    ensure_positive(gamma, "gamma")?;
    if gamma == 1.0 {
        return Err(invalid("power utility needs gamma != 1"));
    }
    Ok(())
}

fn tau_of(horizon: f64, t: f64) -> Result<f64> {
    if !(t >= 0.0 && t <= horizon) {
        return Err(invalid(format!("time {t} outside [0, {horizon}]")));
    }
    Ok(horizon - t)
}

fn power_u(w: f64, gamma: f64) -> f64 {
    w.powf(1.0 - gamma) / (1.0 - gamma)
}

/// Sharpe ratio from `log(V/U)`: `sqrt(log(V/U) · 2γ / ((1−γ)τ))`.
fn sharpe_from_log_ratio(log_ratio: f64, gamma: f64, tau: f64) -> Result<f64> {
    let radicand = log_ratio * 2.0 * gamma / ((1.0 - gamma) * tau);
    if radicand < 0.0 {
        return Err(Error::Range(format!("value below U(w): no Sharpe ratio reproduces it (radicand {radicand})")));
    }
    Ok(radicand.sqrt())
}

/// Stochastic-volatility benchmark: `σ = 1/√y`, `c = κ(θ − y)`, `β = δ√y`, `μ` constant.
///
/// `V = U(w) exp(η(A(τ) y + B(τ)))` with `A' = pA² + qA + r`, `B' = κθA`,
/// `A(0) = B(0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct HestonBenchmark {
    pub kappa: f64,
    pub theta: f64,
    pub delta: f64,
    pub rho: f64,
    pub mu: f64,
    pub gamma: f64,
    pub horizon: f64,
    pub eta: f64,
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub alpha: f64,
    pub a_plus: f64,
    pub a_minus: f64,
}

impl HestonBenchmark {
    #[allow(clippy::too_many_arguments)]
    pub fn new(kappa: f64, theta: f64, delta: f64, rho: f64, mu: f64, gamma: f64, horizon: f64) -> Result<Self> {
        ensure_positive(kappa, "kappa")?;
        ensure_positive(theta, "theta")?;
        ensure_positive(delta, "delta")?;
        check_power(gamma)?;
        if !(rho > -1.0 && rho < 1.0) || !mu.is_finite() || !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(invalid("need rho in (-1, 1), finite mu and a finite nonnegative horizon"));
        }
        if 2.0 * kappa * theta < delta * delta {
            return Err(invalid(format!(
                "Feller condition fails: 2 kappa theta = {} < delta^2 = {}",
                2.0 * kappa * theta,
                delta * delta
            )));
        }
        let eta = distortion_exponent(gamma, rho)?;
        let c = (1.0 - gamma) / gamma;
        let p = 0.5 * delta * delta;
        let q = delta * c * mu * rho - kappa;
        let r = 0.5 * c / eta * mu * mu;
        let disc = q * q - 4.0 * p * r;
        if disc < 0.0 {
            return Err(invalid(format!("discriminant q^2 - 4pr = {disc} is negative")));
        }
        let alpha = disc.sqrt();
        Ok(Self {
            kappa,
            theta,
            delta,
            rho,
            mu,
            gamma,
            horizon,
            eta,
            p,
            q,
            r,
            alpha,
            a_plus: (-q + alpha) / (2.0 * p),
            a_minus: (-q - alpha) / (2.0 * p),
        })
    }

    pub fn from_model(model: &ModelSpec, gamma: f64, horizon: f64) -> Result<Self> {
        match model.builtin {
            Some(BuiltinModel::HestonSv { kappa, theta, delta, rho, mu }) => {
                Self::new(kappa, theta, delta, rho, mu, gamma, horizon)
            }
            _ => Err(Error::Capability("Heston benchmark needs the built-in stochastic-volatility model".into())),
        }
    }

    /// `(1 − e^{−ατ})/α`, equal to `τ` at `α = 0`, and `e^{−ατ}`.
    fn decay(&self, tau: f64) -> (f64, f64) {
        let e = (-self.alpha * tau).exp();
        let f = if self.alpha * tau < 1e-300 { tau } else { -(-self.alpha * tau).exp_m1() / self.alpha };
        (f, e)
    }

    /// `A(τ) = a₋(1 − e^{−ατ}) / (1 − (a₋/a₊)e^{−ατ})`, in a form that stays finite
    /// for `a₊ = 0` and `α = 0`.
    pub fn a_coef(&self, tau: f64) -> Result<f64> {
        if self.mu == 0.0 {
            return Ok(0.0);
        }
        let (f, e) = self.decay(tau);
        let den = (1.0 + e) - self.q * f;
        if !(den > 0.0) {
            return Err(Error::Numerical(format!("Riccati solution blows up before tau = {tau}")));
        }
        Ok(2.0 * self.r * f / den)
    }

    /// `B(τ) = κθ(a₋τ − (2/δ²) log((1 − g e^{−ατ})/(1 − g)))`, `g = a₋/a₊`.
    pub fn b_coef(&self, tau: f64) -> Result<f64> {
        if self.mu == 0.0 {
            return Ok(0.0);
        }
        let (f, e) = self.decay(tau);
        let den = (1.0 + e) - self.q * f;
        if !(den > 0.0) {
            return Err(Error::Numerical(format!("Riccati solution blows up before tau = {tau}")));
        }
        Ok(self.kappa * self.theta * (self.a_minus * tau - (0.5 * den).ln() / self.p))
    }

    fn log_ratio(&self, tau: f64, y: f64) -> Result<f64> {
        Ok(self.eta * (self.a_coef(tau)? * y + self.b_coef(tau)?))
    }

    fn check_state(&self, y: f64, w: f64) -> Result<()> {
        ensure_positive(y, "y")?;
        ensure_positive(w, "wealth")
    }

    /// `ψ = e^{A y + B}` and the residual of `(∂t + Â)ψ`, with the time
    /// derivative a central difference of step `h` (one-sided near the ends).
    pub fn pde_residual(&self, t: f64, y: f64, h: f64) -> Result<f64> {
        let tau = tau_of(self.horizon, t)?;
        ensure_positive(y, "y")?;
        let psi = |tau: f64| -> Result<f64> { Ok((self.a_coef(tau)? * y + self.b_coef(tau)?).exp()) };
        let (lo, hi) = ((tau - h).max(0.0), tau + h);
        let psi_tau = (psi(hi)? - psi(lo)?) / (hi - lo);
        let a = self.a_coef(tau)?;
        let value = psi(tau)?;
        let c = (1.0 - self.gamma) / self.gamma;
        let drift = self.kappa * (self.theta - y) + c * self.rho * self.delta * self.mu * y;
        Ok(-psi_tau + (self.p * y * a * a + drift * a + self.r * y) * value)
    }
}

impl Benchmark for HestonBenchmark {
    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn value(&self, t: f64, _x: f64, y: f64, w: f64) -> Result<f64> {
        let tau = tau_of(self.horizon, t)?;
        self.check_state(y, w)?;
        if self.mu == 0.0 {
            return Ok(power_u(w, self.gamma));
        }
        Ok(power_u(w, self.gamma) * self.log_ratio(tau, y)?.exp())
    }

    /// Feedback formula with analytic derivatives: `V_w = (1−γ)V/w`,
    /// `V_ww = −γ(1−γ)V/w²`, `V_yw = ηA V_w`; reduces to `(w/γ)(μy + ρδy ηA)`.
    fn strategy(&self, t: f64, x: f64, y: f64, w: f64) -> Result<f64> {
        let tau = tau_of(self.horizon, t)?;
        let v = self.value(t, x, y, w)?;
        let g = self.gamma;
        let v_w = (1.0 - g) * v / w;
        let v_ww = -g * (1.0 - g) * v / (w * w);
        let v_yw = self.eta * self.a_coef(tau)? * v_w;
        feedback_strategy(self.mu, 1.0 / y.sqrt(), self.delta * y.sqrt(), self.rho, [v_w, v_ww, 0.0, v_yw])
    }

    fn implied_sharpe(&self, t: f64, _x: f64, y: f64, w: f64) -> Result<f64> {
        let tau = tau_of(self.horizon, t)?;
        self.check_state(y, w)?;
        if tau == 0.0 {
            return Ok(self.mu.abs() * y.sqrt());
        }
        sharpe_from_log_ratio(self.log_ratio(tau, y)?, self.gamma, tau)
    }
}

/// Local-volatility benchmark `σ = δ e^{ηx}`, `μ` constant:
/// `V = U(w) f^γ`, `f = A(τ) e^{B(τ) d}`, `d = e^{−2ηx}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CevBenchmark {
    pub mu: f64,
    pub delta: f64,
    /// Local-volatility exponent.
    pub eta_lv: f64,
    pub gamma: f64,
    pub horizon: f64,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
}

impl CevBenchmark {
    pub fn new(mu: f64, delta: f64, eta_lv: f64, gamma: f64, horizon: f64) -> Result<Self> {
        ensure_positive(delta, "delta")?;
        check_power(gamma)?;
        if !mu.is_finite() || !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(invalid("need finite mu and a finite nonnegative horizon"));
        }
        if eta_lv == 0.0 || !eta_lv.is_finite() {
            return Err(invalid("local-volatility exponent must be finite and nonzero"));
        }
        let root = (gamma * mu * mu).sqrt();
        Ok(Self {
            mu,
            delta,
            eta_lv,
            gamma,
            horizon,
            lambda_plus: (mu + root) / (2.0 * eta_lv * gamma),
            lambda_minus: (mu - root) / (2.0 * eta_lv * gamma),
        })
    }

    pub fn from_model(model: &ModelSpec, gamma: f64, horizon: f64) -> Result<Self> {
        match model.builtin {
            Some(BuiltinModel::ExpLv { mu, delta, eta }) => Self::new(mu, delta, eta, gamma, horizon),
            _ => Err(Error::Capability("CEV benchmark needs the built-in local-volatility model".into())),
        }
    }

    fn rate(&self) -> f64 {
        2.0 * self.eta_lv * self.eta_lv * (self.lambda_plus - self.lambda_minus)
    }

    /// `(log A(τ), B(τ))`
    pub fn coefficients(&self, tau: f64) -> Result<(f64, f64)> {
        if self.mu == 0.0 {
            return Ok((0.0, 0.0));
        }
        let (lp, lm, n) = (self.lambda_plus, self.lambda_minus, self.eta_lv);
        let em1 = (self.rate() * tau).exp_m1();
        let gap = lm - lp;
        let den = gap - lp * em1;
        if den == 0.0 || !(den / gap > 0.0) {
            return Err(Error::Numerical(format!("closed form is singular at tau = {tau}")));
        }
        let i = -lp * lm * em1 / den;
        let log_a = lp * n * (2.0 * n + 1.0) * tau - (2.0 * n + 1.0) / (2.0 * n) * (-lp * em1 / gap).ln_1p();
        Ok((log_a, i / (self.delta * self.delta)))
    }

    fn log_ratio(&self, tau: f64, x: f64) -> Result<f64> {
        let (log_a, b) = self.coefficients(tau)?;
        Ok(self.gamma * (log_a + b * (-2.0 * self.eta_lv * x).exp()))
    }
}

impl Benchmark for CevBenchmark {
    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn value(&self, t: f64, x: f64, _y: f64, w: f64) -> Result<f64> {
        let tau = tau_of(self.horizon, t)?;
        ensure_positive(w, "wealth")?;
        Ok(power_u(w, self.gamma) * self.log_ratio(tau, x)?.exp())
    }

    /// Feedback formula with `V_xw = −2ηγ B d V_w`; reduces to `(w/γ)(μd/δ² − 2ηγBd)`.
    fn strategy(&self, t: f64, x: f64, y: f64, w: f64) -> Result<f64> {
        let tau = tau_of(self.horizon, t)?;
        let v = self.value(t, x, y, w)?;
        let g = self.gamma;
        let d = (-2.0 * self.eta_lv * x).exp();
        let (_, b) = self.coefficients(tau)?;
        let v_w = (1.0 - g) * v / w;
        let v_ww = -g * (1.0 - g) * v / (w * w);
        let v_xw = -2.0 * self.eta_lv * g * b * d * v_w;
        feedback_strategy(self.mu, self.delta * (self.eta_lv * x).exp(), 0.0, 0.0, [v_w, v_ww, v_xw, 0.0])
    }

    fn implied_sharpe(&self, t: f64, x: f64, _y: f64, w: f64) -> Result<f64> {
        let tau = tau_of(self.horizon, t)?;
        ensure_positive(w, "wealth")?;
        if tau == 0.0 {
            return Ok(self.mu.abs() / self.delta * (-self.eta_lv * x).exp());
        }
        sharpe_from_log_ratio(self.log_ratio(tau, x)?, self.gamma, tau)
    }
}

/// Constant coefficients: the Merton solution itself.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantBenchmark {
    pub mu: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub horizon: f64,
}

impl ConstantBenchmark {
    pub fn new(mu: f64, sigma: f64, gamma: f64, horizon: f64) -> Result<Self> {
        ensure_positive(sigma, "sigma")?;
        check_power(gamma)?;
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(invalid("horizon must be finite and nonnegative"));
        }
        Ok(Self { mu, sigma, gamma, horizon })
    }
}

impl Benchmark for ConstantBenchmark {
    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn value(&self, t: f64, _x: f64, _y: f64, w: f64) -> Result<f64> {
        let tau = tau_of(self.horizon, t)?;
        ensure_positive(w, "wealth")?;
        let l = self.mu / self.sigma;
        let g = self.gamma;
        Ok(power_u(w, g) * (0.5 * (1.0 - g) / g * l * l * tau).exp())
    }

    fn strategy(&self, t: f64, _x: f64, _y: f64, w: f64) -> Result<f64> {
        tau_of(self.horizon, t)?;
        ensure_positive(w, "wealth")?;
        Ok(self.mu * w / (self.gamma * self.sigma * self.sigma))
    }

    fn implied_sharpe(&self, t: f64, _x: f64, _y: f64, w: f64) -> Result<f64> {
        tau_of(self.horizon, t)?;
        ensure_positive(w, "wealth")?;
        Ok((self.mu / self.sigma).abs())
    }
}

/// Exact solution for a built-in model, if one exists.
pub fn benchmark_for(model: &ModelSpec, gamma: f64, horizon: f64) -> Result<Option<Box<dyn Benchmark>>> {
    Ok(match model.builtin {
        Some(BuiltinModel::HestonSv { .. }) => Some(Box::new(HestonBenchmark::from_model(model, gamma, horizon)?)),
        Some(BuiltinModel::ExpLv { .. }) => Some(Box::new(CevBenchmark::from_model(model, gamma, horizon)?)),
        Some(BuiltinModel::Constant { mu, sigma }) => Some(Box::new(ConstantBenchmark::new(mu, sigma, gamma, horizon)?)),
        None => None,
    })
}

/// Residual of the nonlinear value-function equation
/// `V_t + 𝒜V − (μV_w + σ²V_xw + ρσβV_yw)² / (2σ²V_ww)`
/// with every derivative a central difference of relative step `h`.
pub fn hjb_residual(
    model: &ModelSpec,
    v: &dyn Fn(f64, f64, f64, f64) -> f64,
    t: f64,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
) -> f64 {
    let (ht, hx, hy, hw) = (h, h * x.abs().max(1.0), h * y.abs().max(1.0), h * w);
    let f = |dt: f64, dx: f64, dy: f64, dw: f64| v(t + dt, x + dx, y + dy, w + dw);
    let v0 = f(0.0, 0.0, 0.0, 0.0);
    let d1 = |a: [f64; 4]| (f(a[0], a[1], a[2], a[3]) - f(-a[0], -a[1], -a[2], -a[3])) / 2.0;
    let d2 = |a: [f64; 4]| f(a[0], a[1], a[2], a[3]) - 2.0 * v0 + f(-a[0], -a[1], -a[2], -a[3]);
    let mixed = |a: [f64; 4], b: [f64; 4]| {
        let p = |s: f64, r: f64| f(s * a[0] + r * b[0], s * a[1] + r * b[1], s * a[2] + r * b[2], s * a[3] + r * b[3]);
        (p(1.0, 1.0) - p(1.0, -1.0) - p(-1.0, 1.0) + p(-1.0, -1.0)) / 4.0
    };
    let (et, ex, ey, ew) = ([ht, 0.0, 0.0, 0.0], [0.0, hx, 0.0, 0.0], [0.0, 0.0, hy, 0.0], [0.0, 0.0, 0.0, hw]);
    let v_t = d1(et) / ht;
    let v_x = d1(ex) / hx;
    let v_y = d1(ey) / hy;
    let v_w = d1(ew) / hw;
    let v_xx = d2(ex) / (hx * hx);
    let v_yy = d2(ey) / (hy * hy);
    let v_ww = d2(ew) / (hw * hw);
    let v_xy = mixed(ex, ey) / (hx * hy);
    let v_xw = mixed(ex, ew) / (hx * hw);
    let v_yw = mixed(ey, ew) / (hy * hw);
    let mu = model.mu.evaluate(x, y);
    let s = model.sigma.evaluate(x, y);
    let b = model.beta.evaluate(x, y);
    let c = model.c.evaluate(x, y);
    let rho = model.rho;
    let gen = 0.5 * s * s * v_xx + rho * s * b * v_xy + 0.5 * b * b * v_yy + (mu - 0.5 * s * s) * v_x + c * v_y;
    let control = mu * v_w + s * s * v_xw + rho * s * b * v_yw;
    v_t + gen - control * control / (2.0 * s * s * v_ww)
}
