use std::collections::BTreeMap;
use std::fmt;

use crate::poly::Poly;

/// Exponents `[a, b, c, d, e]` of `u^a v^b ∂x^c ∂y^d ∂z^e`, where
/// `u = x − x̄` and `v = y − ȳ`.
pub type Monomial = [u8; 5];

const U: usize = 0;
const V: usize = 1;
const DX: usize = 2;
const DY: usize = 3;
const DZ: usize = 4;

/// Relative magnitude below which coefficients are dropped after each operation.
pub const PRUNE_RELATIVE: f64 = 1e-14;

/// Differential operator with coefficients polynomial in `u`, `v` and one
/// scalar time variable, kept in normal order (multiplications left of
/// derivatives).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiffOp {
    terms: BTreeMap<Monomial, Poly>,
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn falling(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64)
}

impl DiffOp {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn identity() -> Self {
        Self::term(Poly::constant(1.0), [0; 5])
    }

    pub fn term(coeff: Poly, monomial: Monomial) -> Self {
        let mut op = Self::zero();
        if !coeff.is_zero() {
            op.terms.insert(monomial, coeff);
        }
        op
    }

    /// `c · u^a v^b ∂x^c ∂y^d ∂z^e` with a constant coefficient.
    pub fn constant_term(c: f64, monomial: Monomial) -> Self {
        Self::term(Poly::constant(c), monomial)
    }

    pub fn scalar(c: f64) -> Self {
        Self::constant_term(c, [0; 5])
    }

    pub fn mul_u() -> Self {
        Self::constant_term(1.0, [1, 0, 0, 0, 0])
    }

    pub fn mul_v() -> Self {
        Self::constant_term(1.0, [0, 1, 0, 0, 0])
    }

    pub fn dx() -> Self {
        Self::constant_term(1.0, [0, 0, 1, 0, 0])
    }

    pub fn dy() -> Self {
        Self::constant_term(1.0, [0, 0, 0, 1, 0])
    }

    pub fn dz() -> Self {
        Self::constant_term(1.0, [0, 0, 0, 0, 1])
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Poly)> {
        self.terms.iter()
    }

    pub fn coeff(&self, monomial: Monomial) -> Poly {
        self.terms.get(&monomial).cloned().unwrap_or_default()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.terms.values().fold(0.0, |m, p| m.max(p.max_abs()))
    }

    fn insert_add(&mut self, monomial: Monomial, coeff: &Poly) {
        let entry = self.terms.entry(monomial).or_default();
        *entry += coeff;
        if entry.is_zero() {
            self.terms.remove(&monomial);
        }
    }

    /// Drops coefficient entries below `PRUNE_RELATIVE` times the largest one.
    pub fn pruned(mut self) -> Self {
        let tol = PRUNE_RELATIVE * self.max_abs();
        for p in self.terms.values_mut() {
            p.prune(tol);
        }
        self.terms.retain(|_, p| !p.is_zero());
        self
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (m, p) in &other.terms {
            out.insert_add(*m, p);
        }
        out.pruned()
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = Self::zero();
        if s == 0.0 {
            return out;
        }
        for (m, p) in &self.terms {
            out.terms.insert(*m, p.scale(s));
        }
        out
    }

    /// Multiplies every coefficient by a polynomial in the time variable.
    pub fn mul_poly(&self, q: &Poly) -> Self {
        let mut out = Self::zero();
        for (m, p) in &self.terms {
            out.insert_add(*m, &(p * q));
        }
        out
    }

    /// Composition `self ∘ other`, normal ordered through
    /// `∂x^c u^a = Σ_k C(c,k) a!/(a−k)! u^{a−k} ∂x^{c−k}` (same in `y`).
    pub fn compose(&self, other: &Self) -> Self {
        let mut out = Self::zero();
        for (m1, p1) in &self.terms {
            for (m2, p2) in &other.terms {
                let coeff = p1 * p2;
                let (c1, a2) = (m1[DX] as u32, m2[U] as u32);
                let (d1, b2) = (m1[DY] as u32, m2[V] as u32);
                for k in 0..=c1.min(a2) {
                    let kx = binomial(c1, k) * falling(a2, k);
                    for l in 0..=d1.min(b2) {
                        let ky = binomial(d1, l) * falling(b2, l);
                        let m = [
                            m1[U] + m2[U] - k as u8,
                            m1[V] + m2[V] - l as u8,
                            m1[DX] + m2[DX] - k as u8,
                            m1[DY] + m2[DY] - l as u8,
                            m1[DZ] + m2[DZ],
                        ];
                        out.insert_add(m, &coeff.scale(kx * ky));
                    }
                }
            }
        }
        out.pruned()
    }

    /// `self^k`
    pub fn pow(&self, k: usize) -> Self {
        (0..k).fold(Self::identity(), |acc, _| acc.compose(self))
    }

    /// `[self, other] = self ∘ other − other ∘ self`
    pub fn commutator(&self, other: &Self) -> Self {
        self.compose(other).sub(&other.compose(self))
    }

    /// Maps every coefficient `p(r)` to `∫₀^τ (τ − r)^n p(r) dr`.
    pub fn duhamel_integral(&self, n: usize) -> Self {
        let mut out = Self::zero();
        for (m, p) in &self.terms {
            out.insert_add(*m, &p.duhamel_integral(n));
        }
        out
    }

    /// Derivative of every coefficient in the time variable.
    pub fn time_derivative(&self) -> Self {
        let mut out = Self::zero();
        for (m, p) in &self.terms {
            out.insert_add(*m, &p.derivative());
        }
        out
    }

    /// True when the operator has no derivative parts, i.e. is a multiplier.
    pub fn is_multiplier(&self) -> bool {
        self.terms.keys().all(|m| m[DX] == 0 && m[DY] == 0 && m[DZ] == 0)
    }

    /// True when every coefficient vanishes at time variable 0.
    pub fn vanishes_at_zero(&self) -> bool {
        self.terms.values().all(|p| p.coeff(0) == 0.0)
    }

    /// Operator with its time variable fixed at `tau`.
    pub fn at_time(&self, tau: f64) -> Self {
        let mut out = Self::zero();
        for (m, p) in &self.terms {
            out.insert_add(*m, &Poly::constant(p.eval(tau)));
        }
        out
    }

    /// Evaluates a multiplier at `(τ, u, v)`; derivative terms are ignored.
    pub fn eval_multiplier(&self, tau: f64, u: f64, v: f64) -> f64 {
        self.terms
            .iter()
            .filter(|(m, _)| m[DX] == 0 && m[DY] == 0 && m[DZ] == 0)
            .map(|(m, p)| p.eval(tau) * u.powi(m[U] as i32) * v.powi(m[V] as i32))
            .sum()
    }

    /// Applies the operator to `f(u, v, z) = P(u, v) e^{κ z}` where `P` is a
    /// multiplier; the result is again of this form and its multiplier is
    /// returned.
    pub fn apply_to_exponential(&self, multiplier: &Self, kappa: f64) -> Self {
        let mut out = Self::zero();
        for (m, p) in self.compose(multiplier).terms {
            if m[DX] == 0 && m[DY] == 0 {
                out.insert_add([m[U], m[V], 0, 0, 0], &p.scale(kappa.powi(m[DZ] as i32)));
            }
        }
        out
    }

    /// Maximal total exponent over `(u, v)` and over derivatives.
    pub fn degrees(&self) -> (u8, u8) {
        self.terms
            .keys()
            .fold((0, 0), |(a, b), m| (a.max(m[U] + m[V]), b.max(m[DX] + m[DY] + m[DZ])))
    }
}

impl fmt::Display for DiffOp {
    /// One term per line: `(coefficient) u^a v^b ∂x^c ∂y^d ∂z^e`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return writeln!(f, "0");
        }
        const NAMES: [&str; 5] = ["u", "v", "∂x", "∂y", "∂z"];
        for (m, p) in &self.terms {
            write!(f, "({p})")?;
            for (k, &e) in m.iter().enumerate() {
                match e {
                    0 => {}
                    1 => write!(f, " {}", NAMES[k])?,
                    _ => write!(f, " {}^{}", NAMES[k], e)?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
