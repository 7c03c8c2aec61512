//! Constant-parameter Merton problem: utilities, value function `M(t, w; λ)`,
//! risk tolerance `R = −M_w / M_ww` and the operators `D_k = R^k ∂_w^k`.
//!
//! Power utility is solved in closed form. Any other utility goes through the
//! transformed variable `z = −log M_w + ½λ²(T − t)`, in which the value solves
//! the backward heat equation `q_t + ½λ² q_zz = 0`; wealth is recovered from
//! `w_z = q_z e^{z − ½λ²τ}`.

use std::fmt;
use std::sync::Arc;

use crate::error::{ensure_positive, invalid, Error, Result};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, PartialEq)]
pub enum UtilityKind {
    Power { gamma: f64 },
    /// `U(w) = Σ a_i w^{1−γ_i} / (1 − γ_i)`
    Mixture { weights: Vec<f64>, gammas: Vec<f64> },
    Custom,
}

#[derive(Clone)]
pub struct Utility {
    pub kind: UtilityKind,
    u: ScalarFn,
    u_prime: ScalarFn,
    u_prime_inverse: ScalarFn,
    u_double_prime: ScalarFn,
}

impl fmt::Debug for Utility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Utility").field("kind", &self.kind).finish()
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    ensure_positive(gamma, "gamma")?;
    if (gamma - 1.0).abs() < 1e-12 {
        return Err(invalid("gamma = 1 (log utility) is not supported"));
    }
    Ok(())
}

impl Utility {
    /// `U(w) = w^{1−γ} / (1 − γ)`.
    pub fn power(gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(Self {
            kind: UtilityKind::Power { gamma },
            u: Arc::new(move |w| w.powf(1.0 - gamma) / (1.0 - gamma)),
            u_prime: Arc::new(move |w| w.powf(-gamma)),
            u_prime_inverse: Arc::new(move |m| m.powf(-1.0 / gamma)),
            u_double_prime: Arc::new(move |w| -gamma * w.powf(-gamma - 1.0)),
        })
    }

    pub fn mixture(weights: Vec<f64>, gammas: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != gammas.len() {
            return Err(invalid("mixture utility needs matching nonempty weights and exponents"));
        }
        for (&a, &g) in weights.iter().zip(&gammas) {
            ensure_positive(a, "mixture weight")?;
            check_gamma(g)?;
        }
        let (a, g) = (Arc::new(weights.clone()), Arc::new(gammas.clone()));
        let (a1, g1, a2, g2, a3, g3, a4, g4) =
            (a.clone(), g.clone(), a.clone(), g.clone(), a.clone(), g.clone(), a, g);
        let utility = Self {
            kind: UtilityKind::Mixture { weights, gammas },
            u: Arc::new(move |w| {
                a1.iter().zip(g1.iter()).map(|(a, g)| a * w.powf(1.0 - g) / (1.0 - g)).sum()
            }),
            u_prime: Arc::new(move |w| a2.iter().zip(g2.iter()).map(|(a, g)| a * w.powf(-g)).sum()),
            u_prime_inverse: Arc::new(move |m| mixture_marginal_inverse(&a3, &g3, m)),
            u_double_prime: Arc::new(move |w| {
                -a4.iter().zip(g4.iter()).map(|(a, g)| a * g * w.powf(-g - 1.0)).sum::<f64>()
            }),
        };
        utility.check_shape()?;
        Ok(utility)
    }

    /// User-supplied utility; rejected unless the shape and Inada spot checks pass.
    pub fn custom(
        u: impl Fn(f64) -> f64 + Send + Sync + 'static,
        u_prime: impl Fn(f64) -> f64 + Send + Sync + 'static,
        u_prime_inverse: impl Fn(f64) -> f64 + Send + Sync + 'static,
        u_double_prime: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let utility = Self {
            kind: UtilityKind::Custom,
            u: Arc::new(u),
            u_prime: Arc::new(u_prime),
            u_prime_inverse: Arc::new(u_prime_inverse),
            u_double_prime: Arc::new(u_double_prime),
        };
        utility.check_shape()?;
        Ok(utility)
    }

    pub fn u(&self, w: f64) -> f64 {
        (self.u)(w)
    }

    pub fn u_prime(&self, w: f64) -> f64 {
        (self.u_prime)(w)
    }

    pub fn u_prime_inverse(&self, m: f64) -> f64 {
        (self.u_prime_inverse)(m)
    }

    pub fn u_double_prime(&self, w: f64) -> f64 {
        (self.u_double_prime)(w)
    }

    /// Relative risk aversion for power utility.
    pub fn gamma(&self) -> Option<f64> {
        match self.kind {
            UtilityKind::Power { gamma } => Some(gamma),
            _ => None,
        }
    }

    /// Spot checks of monotonicity, concavity, inverse round trip and the
    /// Inada trend on a logarithmic wealth grid.
    pub fn check_shape(&self) -> Result<()> {
        let grid: Vec<f64> = (-30..=30).map(|k| 10f64.powf(k as f64 / 5.0)).collect();
        let mut prev_u = f64::NEG_INFINITY;
        let mut prev_up = f64::INFINITY;
        for &w in &grid {
            let (u, up, upp) = (self.u(w), self.u_prime(w), self.u_double_prime(w));
            if !(u.is_finite() && up.is_finite() && upp.is_finite()) {
                return Err(invalid(format!("utility not finite at w = {w}")));
            }
            if !(u > prev_u) || !(up > 0.0) {
                return Err(invalid(format!("utility not strictly increasing at w = {w}")));
            }
            if !(upp < 0.0) || !(up < prev_up) {
                return Err(invalid(format!("utility not strictly concave at w = {w}")));
            }
            let back = self.u_prime_inverse(up);
            if !((back - w).abs() <= 1e-10 * w) {
                return Err(invalid(format!(
                    "marginal utility inverse fails round trip at w = {w} (got {back})"
                )));
            }
            prev_u = u;
            prev_up = up;
        }
        let (lo, hi) = (self.u_prime(grid[0]), self.u_prime(grid[grid.len() - 1]));
        if !(lo > 1e3 && hi < 1e-3) {
            return Err(invalid("marginal utility does not follow the Inada trend"));
        }
        Ok(())
    }
}

/// Solves `Σ a_i w^{−γ_i} = m` for `w`. Newton in `s = log w` on the convex,
/// decreasing `log Σ a_i e^{−γ_i s}`, started left of the root so that the
/// iterates increase monotonically.
fn mixture_marginal_inverse(a: &[f64], g: &[f64], m: f64) -> f64 {
    let target = m.ln();
    let mut s = a
        .iter()
        .zip(g)
        .map(|(a, g)| (a.ln() - target) / g)
        .fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        // log-sum-exp with its derivative
        let exps: Vec<f64> = a.iter().zip(g).map(|(a, g)| a.ln() - g * s).collect();
        let top = exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let mut dsum = 0.0;
        for (e, g) in exps.iter().zip(g) {
            let t = (e - top).exp();
            sum += t;
            dsum -= g * t;
        }
        let h = top + sum.ln() - target;
        let dh = dsum / sum;
        let step = h / dh;
        s -= step;
        if step.abs() <= 1e-15 * s.abs().max(1.0) {
            break;
        }
    }
    s.exp()
}

/// Uniform z-grid for the numerical Merton solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub w_min: f64,
    pub w_max: f64,
    pub nodes: usize,
    /// Padding beyond the wealth range's image, in terminal-kernel standard deviations.
    pub pad_sd: f64,
}

impl GridSpec {
    pub fn new(w_min: f64, w_max: f64) -> Self {
        Self { w_min, w_max, nodes: 2048, pad_sd: 6.0 }
    }
}

#[derive(Debug, Clone)]
pub enum Representation {
    ClosedFormPower { gamma: f64 },
    Grid { z_lo: f64, h: f64, nodes: usize },
}

/// Solution of the constant-parameter Merton problem for one utility, Sharpe
/// ratio `λ₀` and horizon `T`. Time arguments are calendar times in `[0, T]`.
#[derive(Debug, Clone)]
pub struct MertonCore {
    pub lambda0: f64,
    pub horizon: f64,
    pub utility: Utility,
    pub representation: Representation,
}

/// `M` and its wealth derivatives, plus `R` and its wealth derivatives, at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MertonDerivs {
    pub value: f64,
    pub m_w: f64,
    pub m_ww: f64,
    pub m_www: f64,
    /// `[R, R_w, R_ww, R_www]`
    pub r: [f64; 4],
}

impl MertonDerivs {
    /// `D₁M = R M_w`
    pub fn d1(&self) -> f64 {
        self.r[0] * self.m_w
    }

    /// `D₁²M = R ∂_w (R M_w) = R M_w (R_w − 1)`
    pub fn d1_squared(&self) -> f64 {
        self.r[0] * self.m_w * (self.r[1] - 1.0)
    }

    /// `D₂M = R² M_ww`
    pub fn d2(&self) -> f64 {
        self.r[0] * self.r[0] * self.m_ww
    }
}

impl MertonCore {
    pub fn power(gamma: f64, lambda0: f64, horizon: f64) -> Result<Self> {
        let utility = Utility::power(gamma)?;
        Self::closed_form(utility, lambda0, horizon)
    }

    fn closed_form(utility: Utility, lambda0: f64, horizon: f64) -> Result<Self> {
        let gamma = utility
            .gamma()
            .ok_or_else(|| Error::Capability("closed form needs power utility".into()))?;
        check_lambda(lambda0)?;
        check_horizon(horizon)?;
        Ok(Self { lambda0, horizon, utility, representation: Representation::ClosedFormPower { gamma } })
    }

    pub fn is_closed_form(&self) -> bool {
        matches!(self.representation, Representation::ClosedFormPower { .. })
    }

    fn check_time(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0 && t <= self.horizon) {
            return Err(invalid(format!("time {t} outside [0, {}]", self.horizon)));
        }
        Ok(self.horizon - t)
    }

    /// Solution at calendar time `t` for Sharpe ratio `lambda`.
    pub fn slice(&self, t: f64, lambda: f64) -> Result<MertonSlice> {
        let tau = self.check_time(t)?;
        check_lambda(lambda)?;
        let inner = match self.representation {
            Representation::ClosedFormPower { gamma } => SliceRepr::Power { gamma },
            Representation::Grid { z_lo, h, nodes } => {
                SliceRepr::Grid(Box::new(GridSlice::build(&self.utility, lambda, tau, z_lo, h, nodes)?))
            }
        };
        Ok(MertonSlice { tau, lambda, inner })
    }

    pub fn derivs(&self, t: f64, w: f64, lambda: f64) -> Result<MertonDerivs> {
        self.slice(t, lambda)?.derivs(w)
    }

    /// `∂M/∂λ`; analytic for power utility, central difference in `λ` on grids.
    pub fn m_lambda(&self, t: f64, w: f64, lambda: f64) -> Result<f64> {
        match self.representation {
            Representation::ClosedFormPower { gamma } => {
                let tau = self.check_time(t)?;
                let m = merton_value(self, t, w, lambda)?;
                Ok((1.0 - gamma) / gamma * lambda * tau * m)
            }
            Representation::Grid { .. } => {
                let h = 1e-3 * lambda.max(1.0);
                let up = merton_value(self, t, w, lambda + h)?;
                if lambda >= h {
                    let down = merton_value(self, t, w, lambda - h)?;
                    Ok((up - down) / (2.0 * h))
                } else {
                    let mid = merton_value(self, t, w, lambda)?;
                    let up2 = merton_value(self, t, w, lambda + 2.0 * h)?;
                    Ok((-3.0 * mid + 4.0 * up - up2) / (2.0 * h))
                }
            }
        }
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("Sharpe ratio must be finite and nonnegative, got {lambda}")));
    }
    Ok(())
}

fn check_horizon(horizon: f64) -> Result<()> {
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(invalid(format!("horizon must be finite and nonnegative, got {horizon}")));
    }
    Ok(())
}

#[derive(Debug, Clone)]
enum SliceRepr {
    Power { gamma: f64 },
    Grid(Box<GridSlice>),
}

/// The Merton solution at one `(t, λ)`, ready for repeated wealth queries.
#[derive(Debug, Clone)]
pub struct MertonSlice {
    pub tau: f64,
    pub lambda: f64,
    inner: SliceRepr,
}

impl MertonSlice {
    pub fn value(&self, w: f64) -> Result<f64> {
        ensure_positive(w, "wealth")?;
        match &self.inner {
            SliceRepr::Power { gamma } => {
                let g = *gamma;
                Ok(w.powf(1.0 - g) / (1.0 - g) * (0.5 * (1.0 - g) / g * self.lambda.powi(2) * self.tau).exp())
            }
            SliceRepr::Grid(grid) => grid.value(w),
        }
    }

    pub fn derivs(&self, w: f64) -> Result<MertonDerivs> {
        ensure_positive(w, "wealth")?;
        match &self.inner {
            SliceRepr::Power { gamma } => {
                let g = *gamma;
                let e = (0.5 * (1.0 - g) / g * self.lambda.powi(2) * self.tau).exp();
                let m_w = w.powf(-g) * e;
                Ok(MertonDerivs {
                    value: w * m_w / (1.0 - g),
                    m_w,
                    m_ww: -g * m_w / w,
                    m_www: g * (g + 1.0) * m_w / (w * w),
                    r: [w / g, 1.0 / g, 0.0, 0.0],
                })
            }
            SliceRepr::Grid(grid) => grid.derivs(w),
        }
    }

    /// Transformed variable `z(t, w)`.
    pub fn z_of_w(&self, w: f64) -> Result<f64> {
        let d = self.derivs(w)?;
        Ok(-d.m_w.ln() + 0.5 * self.lambda * self.lambda * self.tau)
    }
}

pub fn merton_value(core: &MertonCore, t: f64, w: f64, lambda: f64) -> Result<f64> {
    core.slice(t, lambda)?.value(w)
}

/// `∂_w^deriv R` for `deriv ∈ {0, 1, 2, 3}`.
pub fn risk_tolerance(core: &MertonCore, t: f64, w: f64, lambda: f64, deriv: usize) -> Result<f64> {
    if deriv > 3 {
        return Err(Error::Capability(format!("risk tolerance derivative of order {deriv}")));
    }
    Ok(core.derivs(t, w, lambda)?.r[deriv])
}

/// `D_k f = R^k ∂_w^k f` at `(t, w)` with `R` taken at `λ₀`; the derivative of
/// `f` is a central difference.
pub fn apply_dk(core: &MertonCore, k: usize, f: &dyn Fn(f64) -> f64, t: f64, w: f64) -> Result<f64> {
    let r = risk_tolerance(core, t, w, core.lambda0, 0)?;
    let h = 1e-4 * w;
    let df = match k {
        1 => (f(w + h) - f(w - h)) / (2.0 * h),
        2 => (f(w + h) - 2.0 * f(w) + f(w - h)) / (h * h),
        _ => return Err(Error::Capability(format!("D_k is provided for k in {{1, 2}}, got {k}"))),
    };
    Ok(r.powi(k as i32) * df)
}

/// `M_λ + (T − t) λ D₂M`, zero by the Vega-Gamma relation.
pub fn vega_gamma_residual(core: &MertonCore, t: f64, w: f64, lambda: f64) -> Result<f64> {
    let tau = core.check_time(t)?;
    let d = core.derivs(t, w, lambda)?;
    Ok(core.m_lambda(t, w, lambda)? + tau * lambda * d.d2())
}

/// Merton core for any utility: closed form for power utility, otherwise the
/// heat-equation grid solver.
pub fn solve_general_merton(utility: Utility, lambda0: f64, horizon: f64, grid: GridSpec) -> Result<MertonCore> {
    if utility.gamma().is_some() {
        return MertonCore::closed_form(utility, lambda0, horizon);
    }
    solve_on_grid(utility, lambda0, horizon, grid)
}

/// Heat-equation grid solver, used for every utility including power (the
/// latter as a validation path).
pub fn solve_on_grid(utility: Utility, lambda0: f64, horizon: f64, grid: GridSpec) -> Result<MertonCore> {
    check_lambda(lambda0)?;
    check_horizon(horizon)?;
    ensure_positive(grid.w_min, "grid w_min")?;
    if !(grid.w_max > grid.w_min) || grid.nodes < 16 || !(grid.pad_sd >= 0.0) {
        return Err(invalid("grid needs w_min < w_max, at least 16 nodes and nonnegative padding"));
    }
    let z_of = |w: f64| -utility.u_prime(w).ln();
    let pad = grid.pad_sd * lambda0 * horizon.sqrt();
    let z_lo = z_of(grid.w_min) - pad;
    let z_hi = z_of(grid.w_max) + pad;
    if !(z_hi > z_lo) || !z_lo.is_finite() || !z_hi.is_finite() {
        return Err(invalid("wealth range has a degenerate image under −log U'"));
    }
    let h = (z_hi - z_lo) / (grid.nodes - 1) as f64;
    for i in 0..grid.nodes {
        let (q, _, w) = terminal(&utility, z_lo + i as f64 * h);
        if !(q.is_finite() && w.is_finite()) {
            return Err(invalid(format!("terminal data not finite at z = {}", z_lo + i as f64 * h)));
        }
    }
    Ok(MertonCore { lambda0, horizon, utility, representation: Representation::Grid { z_lo, h, nodes: grid.nodes } })
}

/// Terminal data at `z`: `(q_T, q_T', w_T)` with `w_T = (U')⁻¹(e^{−z})`,
/// `q_T = U(w_T)` and `q_T' = e^{−z} R_U(w_T)`.
fn terminal(u: &Utility, z: f64) -> (f64, f64, f64) {
    let m = (-z).exp();
    let w = u.u_prime_inverse(m);
    (u.u(w), -m * m / u.u_double_prime(w), w)
}

/// Trapezoid Gaussian quadrature stencil: offsets and normalized weights.
fn stencil(sd: f64, pad_sd: f64) -> (Vec<f64>, Vec<f64>) {
    let step = (sd / 8.0).min(0.1);
    let k = (pad_sd * sd / step).ceil() as i64;
    let offsets: Vec<f64> = (-k..=k).map(|j| j as f64 * step).collect();
    let mut weights: Vec<f64> = offsets.iter().map(|o| (-0.5 * (o / sd).powi(2)).exp()).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    (offsets, weights)
}

const QUADRATURE_PAD_SD: f64 = 8.0;

#[derive(Debug, Clone)]
struct GridSlice {
    tau: f64,
    lambda: f64,
    z_lo: f64,
    h: f64,
    q: Vec<f64>,
    qz: Vec<f64>,
    w: Vec<f64>,
    /// `R` and its first three wealth derivatives at the nodes.
    r: [Vec<f64>; 4],
}

impl GridSlice {
    fn build(u: &Utility, lambda: f64, tau: f64, z_lo: f64, h: f64, n: usize) -> Result<Self> {
        let sd = lambda * tau.sqrt();
        let zs: Vec<f64> = (0..n).map(|i| z_lo + i as f64 * h).collect();
        let (mut q, mut qz) = (vec![0.0; n], vec![0.0; n]);
        let w0;
        if sd == 0.0 {
            for (i, &z) in zs.iter().enumerate() {
                let (a, b, _) = terminal(u, z);
                q[i] = a;
                qz[i] = b;
            }
            w0 = terminal(u, zs[0]).2;
        } else {
            let (offsets, weights) = stencil(sd, QUADRATURE_PAD_SD);
            for (i, &z) in zs.iter().enumerate() {
                let (mut a, mut b) = (0.0, 0.0);
                for (o, wt) in offsets.iter().zip(&weights) {
                    let (qt, qzt, _) = terminal(u, z + o);
                    a += wt * qt;
                    b += wt * qzt;
                }
                q[i] = a;
                qz[i] = b;
            }
            // w solves w_t + ½λ² w_zz − λ² w_z = 0: drifted Gaussian average
            let shift = zs[0] - lambda * lambda * tau;
            w0 = offsets.iter().zip(&weights).map(|(o, wt)| wt * terminal(u, shift + o).2).sum();
        }
        let half_var = 0.5 * lambda * lambda * tau;
        let wz: Vec<f64> = zs.iter().zip(&qz).map(|(z, qz)| qz * (z - half_var).exp()).collect();
        if wz.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Numerical("reconstructed wealth map is not increasing".into()));
        }
        let mut w = vec![w0; n];
        for i in 1..n {
            w[i] = w[i - 1] + cell_integral(&wz, i, h);
            if !(w[i] > w[i - 1]) {
                return Err(Error::Numerical("reconstructed wealth map is not increasing".into()));
            }
        }
        // R = w_z; further wealth derivatives via ∂_w = R⁻¹ ∂_z
        let r0 = wz;
        let r1: Vec<f64> = grid_derivative(&r0, h).iter().zip(&r0).map(|(d, r)| d / r).collect();
        let r2: Vec<f64> = grid_derivative(&r1, h).iter().zip(&r0).map(|(d, r)| d / r).collect();
        let r3: Vec<f64> = grid_derivative(&r2, h).iter().zip(&r0).map(|(d, r)| d / r).collect();
        Ok(Self { tau, lambda, z_lo, h, q, qz, w, r: [r0, r1, r2, r3] })
    }

    /// Locates wealth `w`: node index `i` and fraction `s ∈ [0, 1]` in cell `[i, i+1]`.
    fn locate(&self, w: f64) -> Result<(usize, f64)> {
        let n = self.w.len();
        if !(w >= self.w[0] && w <= self.w[n - 1]) {
            return Err(Error::Range(format!(
                "wealth {w} outside the grid range [{}, {}]",
                self.w[0],
                self.w[n - 1]
            )));
        }
        let i = match self.w.partition_point(|&v| v <= w) {
            0 => 0,
            p => (p - 1).min(n - 2),
        };
        let (w0, w1) = (self.w[i], self.w[i + 1]);
        let (d0, d1) = (self.r[0][i] * self.h, self.r[0][i + 1] * self.h);
        // Newton on the Hermite cubic, safeguarded by bisection
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut s = ((w - w0) / (w1 - w0)).clamp(0.0, 1.0);
        for _ in 0..60 {
            let (f, df) = hermite(w0, w1, d0, d1, s);
            let g = f - w;
            if g > 0.0 {
                hi = s;
            } else {
                lo = s;
            }
            let mut next = s - g / df;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - s).abs() < 1e-16 {
                s = next;
                break;
            }
            s = next;
        }
        Ok((i, s))
    }

    fn value(&self, w: f64) -> Result<f64> {
        let (i, s) = self.locate(w)?;
        Ok(hermite(self.q[i], self.q[i + 1], self.qz[i] * self.h, self.qz[i + 1] * self.h, s).0)
    }

    fn derivs(&self, w: f64) -> Result<MertonDerivs> {
        let (i, s) = self.locate(w)?;
        let value = hermite(self.q[i], self.q[i + 1], self.qz[i] * self.h, self.qz[i + 1] * self.h, s).0;
        let z = self.z_lo + (i as f64 + s) * self.h;
        let r = [0, 1, 2, 3].map(|k| lagrange4(&self.r[k], i, s));
        let m_w = (-z + 0.5 * self.lambda * self.lambda * self.tau).exp();
        Ok(MertonDerivs {
            value,
            m_w,
            m_ww: -m_w / r[0],
            m_www: (r[1] + 1.0) * m_w / (r[0] * r[0]),
            r,
        })
    }
}

/// Cubic Hermite interpolant on `[0, 1]` with end slopes already scaled by the
/// cell width; returns value and derivative in `s`.
fn hermite(f0: f64, f1: f64, d0: f64, d1: f64, s: f64) -> (f64, f64) {
    let s2 = s * s;
    let s3 = s2 * s;
    let v = (2.0 * s3 - 3.0 * s2 + 1.0) * f0 + (s3 - 2.0 * s2 + s) * d0 + (-2.0 * s3 + 3.0 * s2) * f1 + (s3 - s2) * d1;
    let dv = (6.0 * s2 - 6.0 * s) * f0 + (3.0 * s2 - 4.0 * s + 1.0) * d0 + (-6.0 * s2 + 6.0 * s) * f1 + (3.0 * s2 - 2.0 * s) * d1;
    (v, dv)
}

/// Four-point Lagrange interpolation at fraction `s` of cell `[i, i+1]`.
fn lagrange4(f: &[f64], i: usize, s: f64) -> f64 {
    let n = f.len();
    let base = i.saturating_sub(1).min(n - 4);
    let x = (i - base) as f64 + s;
    let mut total = 0.0;
    for j in 0..4 {
        let mut l = 1.0;
        for k in 0..4 {
            if k != j {
                l *= (x - k as f64) / (j as f64 - k as f64);
            }
        }
        total += l * f[base + j];
    }
    total
}

/// `∫` of a node-sampled function over cell `[i−1, i]`; fourth order inside,
/// trapezoid at the edges.
fn cell_integral(f: &[f64], i: usize, h: f64) -> f64 {
    if i >= 2 && i + 1 < f.len() {
        h / 24.0 * (-f[i - 2] + 13.0 * f[i - 1] + 13.0 * f[i] - f[i + 1])
    } else {
        0.5 * h * (f[i - 1] + f[i])
    }
}

/// Fourth-order central differences, one-sided second order at the edges.
fn grid_derivative(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    (0..n)
        .map(|i| {
            if i >= 2 && i + 2 < n {
                (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) / (12.0 * h)
            } else if i == 0 {
                (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h)
            } else if i == n - 1 {
                (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h)
            } else {
                (f[i + 1] - f[i - 1]) / (2.0 * h)
            }
        })
        .collect()
}
