//! Operator algebra for the expansion in transformed coordinates `(t, x, y, z)`.
//!
//! Every correction solves `(∂t + A₀ + C₀) qⁿ + Qₙ = 0` with zero terminal data,
//! where `A₀ + C₀` has constant coefficients. Sources that are polynomial in
//! `u = x − x̄`, `v = y − ȳ`, `τ = T − t` times a homogeneous solution are
//! integrated in closed form through the operators
//! `M_X(r) = u + r L_X`, `M_Y(r) = v + r L_Y`, with `L_X`, `L_Y` the commutators
//! of `A₀ + C₀` with multiplication by `u` and `v`.

mod diffop;

pub use diffop::{DiffOp, Monomial, PRUNE_RELATIVE};

use crate::error::{Error, Result};
use crate::merton::MertonCore;
use crate::model::{Product, TaylorTable};
use crate::poly::Poly;

/// Base solution `q⁰(t, z) = a · exp(b(τ) + c z)` of the heat equation.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpState {
    pub a: f64,
    /// Exponent as a polynomial in `τ = T − t`.
    pub b: Poly,
    pub c: f64,
}

impl ExpState {
    /// `q⁰` for power utility: `a = 1/(1−γ)`, `c = (1−γ)/γ`, `b(τ) = ½ c² λ₀² τ`.
    pub fn power(gamma: f64, lambda0: f64) -> Self {
        let c = (1.0 - gamma) / gamma;
        Self { a: 1.0 / (1.0 - gamma), b: Poly::monomial(0.5 * c * c * lambda0 * lambda0, 1), c }
    }

    /// Exponential base of a Merton core; only power utility has one.
    pub fn from_core(core: &MertonCore) -> Result<Self> {
        match core.utility.gamma() {
            Some(g) if core.is_closed_form() => Ok(Self::power(g, core.lambda0)),
            _ => Err(Error::Capability(
                "second-order corrections need an exponential base q0(t,z) = a exp(b + cz), \
                 which holds for power utility only"
                    .into(),
            )),
        }
    }

    pub fn value(&self, tau: f64, z: f64) -> f64 {
        self.a * (self.b.eval(tau) + self.c * z).exp()
    }

    /// `∂t q⁰ / q⁰`
    pub fn time_log_derivative(&self, tau: f64) -> f64 {
        -self.b.derivative().eval(tau)
    }
}

fn half(table: &TaylorTable, p: Product, i: usize, j: usize) -> f64 {
    0.5 * table.get(p, i, j)
}

fn b_entry(table: &TaylorTable, i: usize, j: usize) -> f64 {
    table.b(i, j)
}

/// `χ_{1,0} u + χ_{0,1} v` as a multiplier.
fn first_order_multiplier(coef: impl Fn(usize, usize) -> f64) -> DiffOp {
    DiffOp::constant_term(coef(1, 0), [1, 0, 0, 0, 0]).add(&DiffOp::constant_term(coef(0, 1), [0, 1, 0, 0, 0]))
}

/// `χ_{2,0} u² + χ_{1,1} uv + χ_{0,2} v²` as a multiplier.
fn second_order_multiplier(coef: impl Fn(usize, usize) -> f64) -> DiffOp {
    DiffOp::constant_term(coef(2, 0), [2, 0, 0, 0, 0])
        .add(&DiffOp::constant_term(coef(1, 1), [1, 1, 0, 0, 0]))
        .add(&DiffOp::constant_term(coef(0, 2), [0, 2, 0, 0, 0]))
}

/// `L_X = (μ₀ − ½σ₀²) I + σ₀² ∂x + ρσ₀β₀ ∂y + μ₀ ∂z`
pub fn build_lx(table: &TaylorTable) -> DiffOp {
    DiffOp::scalar(b_entry(table, 0, 0))
        .add(&DiffOp::constant_term(table.get(Product::Sigma2, 0, 0), [0, 0, 1, 0, 0]))
        .add(&DiffOp::constant_term(table.get(Product::RhoSigmaBeta, 0, 0), [0, 0, 0, 1, 0]))
        .add(&DiffOp::constant_term(table.get(Product::Mu, 0, 0), [0, 0, 0, 0, 1]))
}

/// `L_Y = c₀ I + β₀² ∂y + ρσ₀β₀ ∂x + ρβ₀λ₀ ∂z`
pub fn build_ly(table: &TaylorTable) -> DiffOp {
    DiffOp::scalar(table.get(Product::C, 0, 0))
        .add(&DiffOp::constant_term(table.get(Product::Beta2, 0, 0), [0, 0, 0, 1, 0]))
        .add(&DiffOp::constant_term(table.get(Product::RhoSigmaBeta, 0, 0), [0, 0, 1, 0, 0]))
        .add(&DiffOp::constant_term(table.get(Product::RhoBetaLambda, 0, 0), [0, 0, 0, 0, 1]))
}

/// Spatial part `A₀ + C₀` of the constant-coefficient operator `∂t + A₀ + C₀`.
pub fn build_generator(table: &TaylorTable) -> DiffOp {
    let t = table;
    [
        (half(t, Product::Sigma2, 0, 0), [0, 0, 2, 0, 0]),
        (t.get(Product::RhoSigmaBeta, 0, 0), [0, 0, 1, 1, 0]),
        (half(t, Product::Beta2, 0, 0), [0, 0, 0, 2, 0]),
        (b_entry(t, 0, 0), [0, 0, 1, 0, 0]),
        (t.get(Product::C, 0, 0), [0, 0, 0, 1, 0]),
        (half(t, Product::Lambda2, 0, 0), [0, 0, 0, 0, 2]),
        (t.get(Product::RhoBetaLambda, 0, 0), [0, 0, 0, 1, 1]),
        (t.get(Product::Mu, 0, 0), [0, 0, 1, 0, 1]),
    ]
    .into_iter()
    .fold(DiffOp::zero(), |acc, (c, m)| acc.add(&DiffOp::constant_term(c, m)))
}

/// First-order part of the `(x, y)` generator:
/// `(½σ²)₁∂xx + (ρσβ)₁∂xy + (½β²)₁∂yy + b₁∂x + c₁∂y`.
pub fn build_a1(table: &TaylorTable) -> DiffOp {
    let t = table;
    let parts: [(DiffOp, Monomial); 5] = [
        (first_order_multiplier(|i, j| half(t, Product::Sigma2, i, j)), [0, 0, 2, 0, 0]),
        (first_order_multiplier(|i, j| t.get(Product::RhoSigmaBeta, i, j)), [0, 0, 1, 1, 0]),
        (first_order_multiplier(|i, j| half(t, Product::Beta2, i, j)), [0, 0, 0, 2, 0]),
        (first_order_multiplier(|i, j| b_entry(t, i, j)), [0, 0, 1, 0, 0]),
        (first_order_multiplier(|i, j| t.get(Product::C, i, j)), [0, 0, 0, 1, 0]),
    ];
    parts
        .iter()
        .fold(DiffOp::zero(), |acc, (mult, d)| acc.add(&mult.compose(&DiffOp::constant_term(1.0, *d))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    X,
    Y,
}

/// `[H, (x − x̄) I]` (resp. `y`), asserted equal to `L_X` (resp. `L_Y`).
/// The time derivative in `H` commutes with both multiplications and is omitted.
pub fn commutator_check(generator: &DiffOp, table: &TaylorTable, factor: Factor) -> Result<DiffOp> {
    let (mult, expected) = match factor {
        Factor::X => (DiffOp::mul_u(), build_lx(table)),
        Factor::Y => (DiffOp::mul_v(), build_ly(table)),
    };
    let comm = generator.commutator(&mult);
    let diff = comm.sub(&expected);
    let scale = expected.max_abs().max(1.0);
    if diff.max_abs() > 1e-14 * scale {
        return Err(Error::Consistency(format!("commutator with {factor:?} differs from its closed form:\n{diff}")));
    }
    Ok(comm)
}

/// `Q̂₁ = (½λ²)₁(x, y) ∂z`
pub fn build_q1(table: &TaylorTable) -> DiffOp {
    first_order_multiplier(|i, j| table.get(Product::HalfLambda2, i, j)).compose(&DiffOp::dz())
}

/// Solution operator of `Hq + Q q⁰ = 0`, `q(T) = 0`.
///
/// Each term `p(τ) u^a v^b ∂^{(c,d,e)}` of `Q` contributes
/// `Σ_n p_n ∫₀^τ (τ − r)^n M_X(r)^a M_Y(r)^b dr ∘ ∂^{(c,d,e)}`.
pub fn integrate_source(source: &DiffOp, table: &TaylorTable) -> DiffOp {
    let r = Poly::monomial(1.0, 1);
    let mx = DiffOp::mul_u().add(&build_lx(table).mul_poly(&r));
    let my = DiffOp::mul_v().add(&build_ly(table).mul_poly(&r));
    let mut cache = std::collections::HashMap::new();
    let mut out = DiffOp::zero();
    for (m, p) in source.terms() {
        let (a, b) = (m[0] as usize, m[1] as usize);
        let product = cache
            .entry((a, b))
            .or_insert_with(|| mx.pow(a).compose(&my.pow(b)))
            .clone();
        let derivative = DiffOp::constant_term(1.0, [0, 0, m[2], m[3], m[4]]);
        for (n, &pn) in p.coeffs().iter().enumerate() {
            if pn != 0.0 {
                out = out.add(&product.duhamel_integral(n).compose(&derivative).scale(pn));
            }
        }
    }
    out
}

/// Which second-order source to assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceVariant {
    /// Includes the time-derivative term `−z_t q¹_z` produced by rewriting
    /// `B₀V¹` in transformed coordinates.
    Complete,
    /// The transcription without that term, kept for comparison.
    WithoutTimeTerm,
}

/// Second-order source operator `Q̂₂` for an exponential base, with every
/// ratio `q¹_{·z} / q⁰_z` reduced to a polynomial multiplier.
pub fn assemble_q2(l1: &DiffOp, base: &ExpState, table: &TaylorTable, variant: SourceVariant) -> Result<DiffOp> {
    if table.order < 2 {
        return Err(Error::Capability("second-order source needs a Taylor table of order 2".into()));
    }
    let t = table;
    let kappa = base.c;
    let identity = DiffOp::identity();
    // q¹_{α z} / q⁰_z for α ∈ {·, y, x}
    let ratio = |op: &DiffOp| op.compose(l1).apply_to_exponential(&identity, kappa).scale(1.0 / kappa);
    let dz = DiffOp::dz();
    let dydz = DiffOp::dy().compose(&dz);
    let dxdz = DiffOp::dx().compose(&dz);
    let r_z = ratio(&dz);
    let r_yz = ratio(&dydz);
    let r_xz = ratio(&dxdz);
    let r_zz = ratio(&dz.pow(2));
    // V¹_ww / V⁰_ww = −q¹_zz/q⁰_z + (q⁰_z + q⁰_zz) q¹_z / (q⁰_z)²
    let ww_ratio = r_z.scale(1.0 + kappa).sub(&r_zz);
    // z_t = ½λ₀²(R_w − 2) with R_w = (q⁰_z + q⁰_zz)/q⁰_z = 1 + κ
    let z_t = 0.5 * t.get(Product::Lambda2, 0, 0) * (kappa - 1.0);

    let dz_l1 = dz.compose(l1);
    let dydz_l1 = dydz.compose(l1);
    let dxdz_l1 = dxdz.compose(l1);
    let generator_c0 = DiffOp::constant_term(half(t, Product::Lambda2, 0, 0), [0, 0, 0, 0, 2])
        .add(&DiffOp::constant_term(t.get(Product::RhoBetaLambda, 0, 0), [0, 0, 0, 1, 1]))
        .add(&DiffOp::constant_term(t.get(Product::Mu, 0, 0), [0, 0, 1, 0, 1]));

    let mut bracket = build_q1(t).add(&generator_c0.compose(l1));
    if variant == SourceVariant::Complete {
        bracket = bracket.sub(&dz_l1.scale(z_t));
    }
    let first = |f: fn(usize, usize, &TaylorTable) -> f64| first_order_multiplier(|i, j| f(i, j, t));
    let hl1 = first(|i, j, t| t.get(Product::HalfLambda2, i, j));
    let rbl1 = first(|i, j, t| t.get(Product::RhoBetaLambda, i, j));
    let mu1 = first(|i, j, t| t.get(Product::Mu, i, j));
    let hl2 = second_order_multiplier(|i, j| t.get(Product::HalfLambda2, i, j));
    let half_rho2_beta2 = 0.5 * t.rho * t.rho * t.get(Product::Beta2, 0, 0);

    let terms = [
        hl2.compose(&dz),
        ww_ratio.compose(&bracket).scale(-1.0),
        build_a1(t).compose(l1),
        r_z.compose(&dz_l1).scale(t.get(Product::HalfLambda2, 0, 0)),
        hl1.compose(&dz_l1).scale(2.0),
        r_yz.compose(&dz_l1).scale(t.get(Product::RhoBetaLambda, 0, 0)),
        rbl1.compose(&dydz_l1),
        r_yz.compose(&dydz_l1).scale(half_rho2_beta2),
        r_xz.compose(&dz_l1).scale(t.get(Product::Mu, 0, 0)),
        mu1.compose(&dxdz_l1),
        r_xz.compose(&dydz_l1).scale(t.get(Product::RhoSigmaBeta, 0, 0)),
        r_xz.compose(&dxdz_l1).scale(half(t, Product::Sigma2, 0, 0)),
    ];
    Ok(terms.iter().fold(DiffOp::zero(), |acc, op| acc.add(op)))
}

/// Multiplier of `H(P q⁰) + S q⁰` where `P q⁰` and `S q⁰` have multipliers
/// `p` and `s` (time variable `τ`). Zero when `P q⁰` solves the corrected PDE.
pub fn pde_residual(generator: &DiffOp, base: &ExpState, p: &DiffOp, source_multiplier: &DiffOp) -> DiffOp {
    let dt_log = base.b.derivative().scale(-1.0);
    p.time_derivative()
        .scale(-1.0)
        .add(&p.mul_poly(&dt_log))
        .add(&generator.apply_to_exponential(p, base.c))
        .add(source_multiplier)
}

/// Operators of the expansion around one point, for an exponential base.
#[derive(Debug, Clone)]
pub struct OperatorExpansion {
    pub base: ExpState,
    pub generator: DiffOp,
    pub lx: DiffOp,
    pub ly: DiffOp,
    pub q1: DiffOp,
    pub l1: DiffOp,
    pub q2: Option<DiffOp>,
    pub l2: Option<DiffOp>,
    /// `q¹ = P₁ q⁰`, `q² = P₂ q⁰`; the same multipliers give `Vⁿ = Pₙ V⁰`.
    pub p1: DiffOp,
    pub p2: Option<DiffOp>,
}

impl OperatorExpansion {
    pub fn new(table: &TaylorTable, base: ExpState, variant: SourceVariant) -> Result<Self> {
        let generator = build_generator(table);
        let q1 = build_q1(table);
        let l1 = integrate_source(&q1, table);
        let identity = DiffOp::identity();
        let p1 = l1.apply_to_exponential(&identity, base.c);
        let (q2, l2, p2) = if table.order >= 2 {
            let q2 = assemble_q2(&l1, &base, table, variant)?;
            let l2 = integrate_source(&q2, table);
            let p2 = l2.apply_to_exponential(&identity, base.c);
            (Some(q2), Some(l2), Some(p2))
        } else {
            (None, None, None)
        };
        Ok(Self { base, generator, lx: build_lx(table), ly: build_ly(table), q1, l1, q2, l2, p1, p2 })
    }

    /// `Vⁿ / V⁰` at `(τ, u, v)` for `n ∈ {1, 2}`.
    pub fn correction_ratio(&self, n: usize, tau: f64, u: f64, v: f64) -> Result<f64> {
        match n {
            1 => Ok(self.p1.eval_multiplier(tau, u, v)),
            2 => self
                .p2
                .as_ref()
                .map(|p| p.eval_multiplier(tau, u, v))
                .ok_or_else(|| Error::Capability("second-order operators need a Taylor table of order 2".into())),
            _ => Err(Error::Capability(format!("correction of order {n}"))),
        }
    }

    /// Partial derivatives `(∂u, ∂v)` of `Pₙ` at `(τ, u, v)`.
    pub fn correction_gradient(&self, n: usize, tau: f64, u: f64, v: f64) -> Result<(f64, f64)> {
        let p = match n {
            1 => &self.p1,
            2 => self
                .p2
                .as_ref()
                .ok_or_else(|| Error::Capability("second-order operators need a Taylor table of order 2".into()))?,
            _ => return Err(Error::Capability(format!("correction of order {n}"))),
        };
        let id = DiffOp::identity();
        let du = DiffOp::dx().compose(p).apply_to_exponential(&id, 0.0);
        let dv = DiffOp::dy().compose(p).apply_to_exponential(&id, 0.0);
        Ok((du.eval_multiplier(tau, u, v), dv.eval_multiplier(tau, u, v)))
    }
}
