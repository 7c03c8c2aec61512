//! Pure stochastic-volatility route for power utility.
//!
//! With `V = U(w) ψ^η`, `η = γ / (γ + (1−γ)ρ²)`, the value function reduces to
//! the linear problem `ψ_t + Āψ = 0`, `ψ(T) = 1`, where
//! `Ā = ½β² ∂yy + (c + c_γ ρβλ) ∂y + (c_γ/η) ½λ²` and `c_γ = (1−γ)/γ`.
//! Expanding the coefficients of `Ā` around `ȳ` gives `ψ = ψ₀(1 + Ψ₁ + Ψ₂ + …)`,
//! with every `Ψₙ` a polynomial in `(v, τ)` computed by exact integration.
//!
//! This path shares nothing with the operator algebra in `opalg` and serves
//! as an independent check of it.

use std::collections::BTreeMap;

use crate::error::{ensure_positive, invalid, Error, Result};
use crate::model::{build_taylor_table, BuiltinModel, ModelKind, ModelSpec, Product};

const V: usize = 0;
const TAU: usize = 1;
const R1: usize = 2;
const R2: usize = 3;

/// Polynomial in `(v, τ, r₁, r₂)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MPoly {
    terms: BTreeMap<[u8; 4], f64>,
}

impl MPoly {
    pub fn constant(c: f64) -> Self {
        Self::monomial(c, [0; 4])
    }

    pub fn monomial(c: f64, exps: [u8; 4]) -> Self {
        let mut terms = BTreeMap::new();
        if c != 0.0 {
            terms.insert(exps, c);
        }
        Self { terms }
    }

    fn push(&mut self, exps: [u8; 4], c: f64) {
        if c == 0.0 {
            return;
        }
        let e = self.terms.entry(exps).or_insert(0.0);
        *e += c;
        if *e == 0.0 {
            self.terms.remove(&exps);
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.push(*e, *c);
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = Self::default();
        for (e, c) in &self.terms {
            out.push(*e, c * s);
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::default();
        for (e1, c1) in &self.terms {
            for (e2, c2) in &other.terms {
                out.push([e1[0] + e2[0], e1[1] + e2[1], e1[2] + e2[2], e1[3] + e2[3]], c1 * c2);
            }
        }
        out
    }

    pub fn derivative(&self, var: usize) -> Self {
        let mut out = Self::default();
        for (e, c) in &self.terms {
            if e[var] > 0 {
                let mut f = *e;
                f[var] -= 1;
                out.push(f, c * e[var] as f64);
            }
        }
        out
    }

    /// Substitutes `var ← target` where `target` is another variable, or zero if `None`.
    fn substitute(&self, var: usize, target: Option<usize>) -> Self {
        let mut out = Self::default();
        for (e, c) in &self.terms {
            let mut f = *e;
            let k = f[var];
            f[var] = 0;
            match target {
                Some(t) => {
                    f[t] += k;
                    out.push(f, *c);
                }
                None if k == 0 => out.push(f, *c),
                None => {}
            }
        }
        out
    }

    /// `∫_{lower}^{upper} p d(var)`, bounds given as variables (`None` is 0).
    pub fn integrate(&self, var: usize, lower: Option<usize>, upper: usize) -> Self {
        let mut anti = Self::default();
        for (e, c) in &self.terms {
            let mut f = *e;
            f[var] += 1;
            anti.push(f, c / f[var] as f64);
        }
        anti.substitute(var, Some(upper)).add(&anti.substitute(var, lower).scale(-1.0))
    }

    pub fn eval(&self, v: f64, tau: f64) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| {
                debug_assert!(e[R1] == 0 && e[R2] == 0);
                c * v.powi(e[V] as i32) * tau.powi(e[TAU] as i32)
            })
            .sum()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }
}

/// `η = γ / (γ + (1−γ)ρ²)`, rejected near its pole.
pub fn distortion_exponent(gamma: f64, rho: f64) -> Result<f64> {
    let den = gamma + (1.0 - gamma) * rho * rho;
    if den.abs() < 1e-8 {
        return Err(invalid(format!("distortion exponent is singular for gamma = {gamma}, rho = {rho}")));
    }
    Ok(gamma / den)
}

#[derive(Debug, Clone)]
pub struct PsiExpansion {
    pub gamma: f64,
    pub eta: f64,
    pub horizon: f64,
    pub center_y: f64,
    /// `(½β²)_{0,i}`, `c_{0,i} + c_γ(ρβλ)_{0,i}`, `(c_γ/η)(½λ²)_{0,i}` for `i = 0, 1, 2`.
    pub diffusion: [f64; 3],
    pub drift: [f64; 3],
    pub potential: [f64; 3],
    pub psi1: MPoly,
    pub psi2: MPoly,
}

impl PsiExpansion {
    pub fn new(model: &ModelSpec, gamma: f64, center_y: f64, horizon: f64) -> Result<Self> {
        if model.kind != ModelKind::PureSv {
            return Err(Error::Capability("the linearized route needs a pure stochastic-volatility model".into()));
        }
        if !(gamma > 1.0 && gamma.is_finite()) {
            return Err(invalid(format!("the linearized route needs gamma > 1, got {gamma}")));
        }
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(invalid(format!("horizon must be finite and nonnegative, got {horizon}")));
        }
        if let Some(BuiltinModel::HestonSv { kappa, theta, delta, .. }) = model.builtin {
            if 2.0 * kappa * theta < delta * delta {
                return Err(invalid("Feller condition 2 kappa theta >= delta^2 fails"));
            }
        }
        let eta = distortion_exponent(gamma, model.rho)?;
        let cg = (1.0 - gamma) / gamma;
        let table = build_taylor_table(model, (0.0, center_y), 2)?;
        let mut diffusion = [0.0; 3];
        let mut drift = [0.0; 3];
        let mut potential = [0.0; 3];
        for i in 0..3 {
            diffusion[i] = 0.5 * table.get(Product::Beta2, 0, i);
            drift[i] = table.get(Product::C, 0, i) + cg * table.get(Product::RhoBetaLambda, 0, i);
            potential[i] = cg / eta * table.get(Product::HalfLambda2, 0, i);
        }
        let mut e = Self {
            gamma,
            eta,
            horizon,
            center_y,
            diffusion,
            drift,
            potential,
            psi1: MPoly::default(),
            psi2: MPoly::default(),
        };
        let one = MPoly::constant(1.0);
        // Ψ₁ = ∫₀^τ Ĝ₁(r₁)1 dr₁
        e.psi1 = e.g(1, R1, &one).integrate(R1, None, TAU);
        // Ψ₂ = ∫₀^τ Ĝ₂(r₁)1 dr₁ + ∫₀^τ dr₁ ∫_{r₁}^τ dr₂ Ĝ₁(r₁)Ĝ₁(r₂)1
        let single = e.g(2, R1, &one).integrate(R1, None, TAU);
        let nested = e
            .g(1, R1, &e.g(1, R2, &one))
            .integrate(R2, Some(R1), TAU)
            .integrate(R1, None, TAU);
        e.psi2 = single.add(&nested);
        Ok(e)
    }

    /// `Ŷ(r) f = (v + r m₀) f + 2 r a₀ ∂v f`, the image of `v` under conjugation
    /// by the constant-coefficient semigroup.
    fn y_hat(&self, r: usize, f: &MPoly) -> MPoly {
        let shift = MPoly::monomial(1.0, [1, 0, 0, 0]).add(&rvar(r).scale(self.drift[0]));
        shift.mul(f).add(&rvar(r).scale(2.0 * self.diffusion[0]).mul(&f.derivative(V)))
    }

    /// `Ĝᵢ(r) f = Ŷ(r)^i [aᵢ f'' + mᵢ f' + kᵢ f]`
    fn g(&self, i: usize, r: usize, f: &MPoly) -> MPoly {
        let inner = f
            .derivative(V)
            .derivative(V)
            .scale(self.diffusion[i])
            .add(&f.derivative(V).scale(self.drift[i]))
            .add(&f.scale(self.potential[i]));
        (0..i).fold(inner, |acc, _| self.y_hat(r, &acc))
    }

    fn tau(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0 && t <= self.horizon) {
            return Err(invalid(format!("time {t} outside [0, {}]", self.horizon)));
        }
        Ok(self.horizon - t)
    }

    /// `V̄ₙ(t, y, w)` for `n ∈ {0, 1, 2}`.
    pub fn value(&self, n: usize, t: f64, y: f64, w: f64) -> Result<f64> {
        ensure_positive(w, "wealth")?;
        if n > 2 {
            return Err(Error::Capability(format!("linearized route order {n} (supported: 0, 1, 2)")));
        }
        let tau = self.tau(t)?;
        let v = y - self.center_y;
        let g = self.gamma;
        let u = w.powf(1.0 - g) / (1.0 - g);
        let psi0_eta = (self.eta * tau * self.potential[0]).exp();
        let p1 = self.psi1.eval(v, tau);
        let bracket = match n {
            0 => 1.0,
            1 => 1.0 + self.eta * p1,
            _ => {
                let p2 = self.psi2.eval(v, tau);
                1.0 + self.eta * p1 + self.eta * p2 + 0.5 * self.eta * (self.eta - 1.0) * p1 * p1
            }
        };
        Ok(u * psi0_eta * bracket)
    }
}

fn rvar(r: usize) -> MPoly {
    let mut e = [0u8; 4];
    e[r] = 1;
    MPoly::monomial(1.0, e)
}

/// `V̄ₙ` through the linearized route, expanded at the evaluation point itself.
pub fn value_psi_order(model: &ModelSpec, gamma: f64, n: usize, horizon: f64, t: f64, y: f64, w: f64) -> Result<f64> {
    PsiExpansion::new(model, gamma, y, horizon)?.value(n, t, y, w)
}
