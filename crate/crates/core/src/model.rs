//! Local-stochastic volatility dynamics and Taylor coefficients of the model
//! coefficients around an expansion point.
//!
//! The log-price `X` and the volatility factor `Y` follow
//!
//! ```text
//! dX = (μ − σ²/2) dt + σ dB¹
//! dY = c dt + β dB²,      d⟨B¹, B²⟩ = ρ dt
//! ```
//!
//! with every coefficient a function of `(x, y)`. The expansion consumes
//! Taylor coefficients `χ_{i,j} = ∂x^i ∂y^j χ(x̄, ȳ) / (i! j!)` of a fixed set of
//! coefficient products, see [`Product`].

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use crate::error::{invalid, Error, Result};

/// Value and partial derivatives up to total order two of a function of `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet2 {
    pub v: f64,
    pub x: f64,
    pub y: f64,
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Jet2 {
    pub fn constant(v: f64) -> Self {
        Self { v, ..Self::default() }
    }

    /// The coordinate function `x`.
    pub fn var_x(x: f64) -> Self {
        Self { v: x, x: 1.0, ..Self::default() }
    }

    /// The coordinate function `y`.
    pub fn var_y(y: f64) -> Self {
        Self { v: y, y: 1.0, ..Self::default() }
    }

    /// Composition `g ∘ self` given `g, g', g''` at `self.v`.
    pub fn chain(self, g: f64, g1: f64, g2: f64) -> Self {
        Self {
            v: g,
            x: g1 * self.x,
            y: g1 * self.y,
            xx: g1 * self.xx + g2 * self.x * self.x,
            xy: g1 * self.xy + g2 * self.x * self.y,
            yy: g1 * self.yy + g2 * self.y * self.y,
        }
    }

    pub fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e)
    }

    pub fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * self.v))
    }

    pub fn recip(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(r, -r * r, 2.0 * r * r * r)
    }

    pub fn scale(self, s: f64) -> Self {
        Self {
            v: s * self.v,
            x: s * self.x,
            y: s * self.y,
            xx: s * self.xx,
            xy: s * self.xy,
            yy: s * self.yy,
        }
    }

    /// `∂x^i ∂y^j` for `i + j ≤ 2`.
    pub fn partial(&self, i: usize, j: usize) -> Option<f64> {
        match (i, j) {
            (0, 0) => Some(self.v),
            (1, 0) => Some(self.x),
            (0, 1) => Some(self.y),
            (2, 0) => Some(self.xx),
            (1, 1) => Some(self.xy),
            (0, 2) => Some(self.yy),
            _ => None,
        }
    }
}

impl Add for Jet2 {
    type Output = Jet2;
    fn add(self, o: Jet2) -> Jet2 {
        Jet2 {
            v: self.v + o.v,
            x: self.x + o.x,
            y: self.y + o.y,
            xx: self.xx + o.xx,
            xy: self.xy + o.xy,
            yy: self.yy + o.yy,
        }
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    fn sub(self, o: Jet2) -> Jet2 {
        self + o.scale(-1.0)
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    fn neg(self) -> Jet2 {
        self.scale(-1.0)
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    fn mul(self, o: Jet2) -> Jet2 {
        Jet2 {
            v: self.v * o.v,
            x: self.x * o.v + self.v * o.x,
            y: self.y * o.v + self.v * o.y,
            xx: self.xx * o.v + 2.0 * self.x * o.x + self.v * o.xx,
            xy: self.xy * o.v + self.x * o.y + self.y * o.x + self.v * o.xy,
            yy: self.yy * o.v + 2.0 * self.y * o.y + self.v * o.yy,
        }
    }
}

/// How a [`CoefficientField`] produces its derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Analytic,
    FiniteDifference,
}

type JetFn = dyn Fn(f64, f64) -> Jet2 + Send + Sync;
type ValueFn = dyn Fn(f64, f64) -> f64 + Send + Sync;

#[derive(Clone)]
enum Repr {
    Jet(Arc<JetFn>),
    Value(Arc<ValueFn>),
}

/// A smooth coefficient function of `(x, y)` with access to its partial
/// derivatives up to total order two.
#[derive(Clone)]
pub struct CoefficientField {
    repr: Repr,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("provenance", &self.provenance())
            .finish()
    }
}

/// Central-difference step for a coordinate.
pub fn fd_step(coord: f64) -> f64 {
    1e-4_f64.max(1e-4 * coord.abs())
}

impl CoefficientField {
    /// Field with analytic derivatives supplied as a [`Jet2`].
    pub fn analytic(f: impl Fn(f64, f64) -> Jet2 + Send + Sync + 'static) -> Self {
        Self { repr: Repr::Jet(Arc::new(f)) }
    }

    /// Field known only through its values; derivatives by central differences.
    pub fn from_values(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { repr: Repr::Value(Arc::new(f)) }
    }

    pub fn constant(c: f64) -> Self {
        Self::analytic(move |_, _| Jet2::constant(c))
    }

    pub fn provenance(&self) -> Provenance {
        match self.repr {
            Repr::Jet(_) => Provenance::Analytic,
            Repr::Value(_) => Provenance::FiniteDifference,
        }
    }

    pub fn evaluate(&self, x: f64, y: f64) -> f64 {
        match &self.repr {
            Repr::Jet(f) => f(x, y).v,
            Repr::Value(f) => f(x, y),
        }
    }

    /// The same function with derivatives taken by finite differences.
    pub fn finite_difference(&self) -> Self {
        let this = self.clone();
        Self::from_values(move |x, y| this.evaluate(x, y))
    }

    /// `∂x^i ∂y^j` at `(x, y)`, for `i + j ≤ 2`.
    pub fn derivative(&self, i: usize, j: usize, x: f64, y: f64) -> Result<f64> {
        if i + j > 2 {
            return Err(Error::Capability(format!(
                "derivative order ({i},{j}) exceeds the supported total order 2"
            )));
        }
        match &self.repr {
            Repr::Jet(f) => Ok(f(x, y).partial(i, j).expect("order checked above")),
            Repr::Value(f) => Ok(central_difference(f.as_ref(), i, j, x, y)),
        }
    }

    fn jet(&self, x: f64, y: f64) -> Jet2 {
        match &self.repr {
            Repr::Jet(f) => f(x, y),
            Repr::Value(f) => Jet2::constant(f(x, y)),
        }
    }

    fn combine(&self, other: &Self, op: fn(Jet2, Jet2) -> Jet2) -> Self {
        let (a, b) = (self.clone(), other.clone());
        match (&self.repr, &other.repr) {
            (Repr::Jet(_), Repr::Jet(_)) => Self::analytic(move |x, y| op(a.jet(x, y), b.jet(x, y))),
            _ => Self::from_values(move |x, y| op(a.jet(x, y), b.jet(x, y)).v),
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        self.combine(other, |a, b| a * b)
    }

    pub fn div(&self, other: &Self) -> Self {
        self.combine(other, |a, b| a * b.recip())
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.combine(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.combine(&Self::constant(s), |a, b| a * b)
    }
}

fn central_difference(f: &ValueFn, i: usize, j: usize, x: f64, y: f64) -> f64 {
    let hx = fd_step(x);
    let hy = fd_step(y);
    match (i, j) {
        (0, 0) => f(x, y),
        (1, 0) => (f(x + hx, y) - f(x - hx, y)) / (2.0 * hx),
        (0, 1) => (f(x, y + hy) - f(x, y - hy)) / (2.0 * hy),
        (2, 0) => (f(x + hx, y) - 2.0 * f(x, y) + f(x - hx, y)) / (hx * hx),
        (0, 2) => (f(x, y + hy) - 2.0 * f(x, y) + f(x, y - hy)) / (hy * hy),
        (1, 1) => {
            (f(x + hx, y + hy) - f(x + hx, y - hy) - f(x - hx, y + hy) + f(x - hx, y - hy))
                / (4.0 * hx * hy)
        }
        _ => unreachable!("order checked by caller"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    GeneralLsv,
    /// Coefficients independent of `x`.
    PureSv,
    /// Coefficients independent of `y`, with `β ≡ 0`.
    PureLv,
}

/// Built-in parametric families, kept so that benchmarks and reports can
/// recover the parameters a model was built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BuiltinModel {
    Constant { mu: f64, sigma: f64 },
    /// `μ` constant, `σ = 1/√y`, `c = κ(θ − y)`, `β = δ√y`.
    HestonSv { kappa: f64, theta: f64, delta: f64, rho: f64, mu: f64 },
    /// `μ` constant, `σ = δ e^{ηx}`.
    ExpLv { mu: f64, delta: f64, eta: f64 },
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub mu: CoefficientField,
    pub sigma: CoefficientField,
    pub c: CoefficientField,
    pub beta: CoefficientField,
    pub rho: f64,
    pub kind: ModelKind,
    /// Lower boundary of the `y` domain, if any (square-root type factors).
    pub y_floor: Option<f64>,
    pub builtin: Option<BuiltinModel>,
}

impl ModelSpec {
    pub fn new(
        mu: CoefficientField,
        sigma: CoefficientField,
        c: CoefficientField,
        beta: CoefficientField,
        rho: f64,
        kind: ModelKind,
    ) -> Result<Self> {
        if !(rho > -1.0 && rho < 1.0) {
            return Err(invalid(format!("correlation must lie in (-1, 1), got {rho}")));
        }
        Ok(Self { mu, sigma, c, beta, rho, kind, y_floor: None, builtin: None })
    }

    /// Geometric Brownian motion: constant drift and volatility.
    pub fn constant(mu: f64, sigma: f64) -> Result<Self> {
        crate::error::ensure_positive(sigma, "sigma")?;
        let mut m = Self::new(
            CoefficientField::constant(mu),
            CoefficientField::constant(sigma),
            CoefficientField::constant(0.0),
            CoefficientField::constant(0.0),
            0.0,
            ModelKind::PureLv,
        )?;
        m.builtin = Some(BuiltinModel::Constant { mu, sigma });
        Ok(m)
    }

    /// Stochastic volatility with `σ(y) = 1/√y`, `c = κ(θ − y)`, `β = δ√y`.
    pub fn heston_sv(kappa: f64, theta: f64, delta: f64, rho: f64, mu: f64) -> Result<Self> {
        crate::error::ensure_positive(kappa, "kappa")?;
        crate::error::ensure_positive(theta, "theta")?;
        crate::error::ensure_positive(delta, "delta")?;
        let sigma = CoefficientField::analytic(|_, y| Jet2::var_y(y).sqrt().recip());
        let c = CoefficientField::analytic(move |_, y| {
            (Jet2::constant(theta) - Jet2::var_y(y)).scale(kappa)
        });
        let beta = CoefficientField::analytic(move |_, y| Jet2::var_y(y).sqrt().scale(delta));
        let mut m = Self::new(CoefficientField::constant(mu), sigma, c, beta, rho, ModelKind::PureSv)?;
        m.y_floor = Some(0.0);
        m.builtin = Some(BuiltinModel::HestonSv { kappa, theta, delta, rho, mu });
        Ok(m)
    }

    /// Local volatility `σ(x) = δ e^{ηx}` with constant drift.
    pub fn exp_lv(mu: f64, delta: f64, eta: f64) -> Result<Self> {
        crate::error::ensure_positive(delta, "delta")?;
        let sigma = CoefficientField::analytic(move |x, _| Jet2::var_x(x).scale(eta).exp().scale(delta));
        let mut m = Self::new(
            CoefficientField::constant(mu),
            sigma,
            CoefficientField::constant(0.0),
            CoefficientField::constant(0.0),
            0.0,
            ModelKind::PureLv,
        )?;
        m.builtin = Some(BuiltinModel::ExpLv { mu, delta, eta });
        Ok(m)
    }

    /// Copy of the model whose coefficient derivatives come from finite differences.
    pub fn with_finite_differences(&self) -> Self {
        Self {
            mu: self.mu.finite_difference(),
            sigma: self.sigma.finite_difference(),
            c: self.c.finite_difference(),
            beta: self.beta.finite_difference(),
            ..self.clone()
        }
    }

    /// Drift of the log-price, `b = μ − σ²/2`.
    pub fn b(&self) -> CoefficientField {
        self.mu.sub(&self.product(Product::Sigma2).scale(0.5))
    }

    /// Sharpe ratio `λ = μ/σ`.
    pub fn lambda(&self) -> CoefficientField {
        self.mu.div(&self.sigma)
    }

    pub fn product(&self, p: Product) -> CoefficientField {
        let rho = self.rho;
        match p {
            Product::Mu => self.mu.clone(),
            Product::Sigma => self.sigma.clone(),
            Product::C => self.c.clone(),
            Product::Lambda => self.lambda(),
            Product::Sigma2 => self.sigma.mul(&self.sigma),
            Product::Beta2 => self.beta.mul(&self.beta),
            Product::Lambda2 => self.lambda().mul(&self.lambda()),
            Product::SigmaBeta => self.sigma.mul(&self.beta),
            Product::BetaLambda => self.beta.mul(&self.lambda()),
            Product::RhoBetaLambda => self.beta.mul(&self.lambda()).scale(rho),
            Product::RhoSigmaBeta => self.sigma.mul(&self.beta).scale(rho),
            Product::HalfLambda2 => self.lambda().mul(&self.lambda()).scale(0.5),
        }
    }

    /// Checks that `(x, y)` lies in the working domain.
    pub fn check_state(&self, x: f64, y: f64) -> Result<()> {
        if !x.is_finite() || !y.is_finite() {
            return Err(invalid(format!("state ({x}, {y}) is not finite")));
        }
        if let Some(floor) = self.y_floor {
            if y <= floor {
                return Err(invalid(format!("y = {y} is outside the model domain (y > {floor})")));
            }
        }
        let s = self.sigma.evaluate(x, y);
        if !(s > 0.0 && s.is_finite()) {
            return Err(invalid(format!("sigma({x}, {y}) = {s} is not strictly positive")));
        }
        Ok(())
    }

    /// Maps a volatility level to the native state `(x, y)`, keeping the
    /// other coordinate at the supplied default.
    pub fn state_for_sigma(&self, sigma: f64, x_default: f64, y_default: f64) -> Result<(f64, f64)> {
        crate::error::ensure_positive(sigma, "sigma")?;
        match self.builtin {
            Some(BuiltinModel::HestonSv { .. }) => Ok((x_default, 1.0 / (sigma * sigma))),
            Some(BuiltinModel::ExpLv { delta, eta, .. }) => {
                if eta == 0.0 {
                    return Err(invalid("sigma sweep needs a nonzero local-vol exponent"));
                }
                Ok(((sigma / delta).ln() / eta, y_default))
            }
            Some(BuiltinModel::Constant { sigma: s, .. }) => {
                if (s - sigma).abs() > 1e-12 * s {
                    return Err(invalid(format!("constant model has sigma = {s}, cannot reach {sigma}")));
                }
                Ok((x_default, y_default))
            }
            None => Err(Error::Capability("sigma sweep needs a built-in model".into())),
        }
    }
}

/// Coefficient products tabulated for the expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Product {
    Mu,
    Sigma,
    C,
    Lambda,
    Sigma2,
    Beta2,
    Lambda2,
    SigmaBeta,
    BetaLambda,
    RhoBetaLambda,
    RhoSigmaBeta,
    HalfLambda2,
}

impl Product {
    pub const ALL: [Product; 12] = [
        Product::Mu,
        Product::Sigma,
        Product::C,
        Product::Lambda,
        Product::Sigma2,
        Product::Beta2,
        Product::Lambda2,
        Product::SigmaBeta,
        Product::BetaLambda,
        Product::RhoBetaLambda,
        Product::RhoSigmaBeta,
        Product::HalfLambda2,
    ];
}

/// Taylor coefficients `χ_{i,j}` of every product in [`Product::ALL`] around `(x̄, ȳ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorTable {
    pub center: (f64, f64),
    pub order: usize,
    pub rho: f64,
    entries: BTreeMap<Product, [[f64; 3]; 3]>,
}

const FACTORIAL: [f64; 3] = [1.0, 1.0, 2.0];

pub fn build_taylor_table(model: &ModelSpec, center: (f64, f64), order: usize) -> Result<TaylorTable> {
    if order > 2 {
        return Err(Error::Capability(format!("Taylor order {order} exceeds the supported order 2")));
    }
    let (xb, yb) = center;
    model.check_state(xb, yb)?;
    let mut entries = BTreeMap::new();
    for p in Product::ALL {
        let field = model.product(p);
        let mut e = [[0.0; 3]; 3];
        for n in 0..=order {
            for k in 0..=n {
                let (i, j) = (n - k, k);
                let d = field.derivative(i, j, xb, yb)?;
                if !d.is_finite() {
                    return Err(Error::Numerical(format!("{p:?} derivative ({i},{j}) not finite at center")));
                }
                e[i][j] = d / (FACTORIAL[i] * FACTORIAL[j]);
            }
        }
        entries.insert(p, e);
    }
    Ok(TaylorTable { center, order, rho: model.rho, entries })
}

impl TaylorTable {
    /// `χ_{i,j}`; zero when `i + j` exceeds the table order.
    pub fn get(&self, p: Product, i: usize, j: usize) -> f64 {
        if i + j > self.order {
            return 0.0;
        }
        self.entries[&p][i][j]
    }

    /// `χ_0 = χ(x̄, ȳ)`.
    pub fn at_center(&self, p: Product) -> f64 {
        self.get(p, 0, 0)
    }

    /// Drift of the log-price, `b_{i,j} = μ_{i,j} − (σ²)_{i,j}/2`.
    pub fn b(&self, i: usize, j: usize) -> f64 {
        self.get(Product::Mu, i, j) - 0.5 * self.get(Product::Sigma2, i, j)
    }

    /// Evaluates the truncated Taylor polynomial of `p` at `(x, y)`.
    pub fn polynomial(&self, p: Product, x: f64, y: f64) -> f64 {
        let (u, v) = (x - self.center.0, y - self.center.1);
        let mut s = 0.0;
        for n in 0..=self.order {
            for k in 0..=n {
                s += self.get(p, n - k, k) * u.powi((n - k) as i32) * v.powi(k as i32);
            }
        }
        s
    }
}

/// Sharpe ratio at the expansion point.
pub fn lambda_zero(table: &TaylorTable) -> f64 {
    table.at_center(Product::Lambda)
}
