//! Monte Carlo estimate of expected terminal utility under a feedback strategy.
//!
//! Euler scheme on `(X, Y, W)` with `W` in levels. Paths run in antithetic
//! pairs; batches draw from independent ChaCha streams keyed by the batch
//! index and are merged in batch order, so results do not depend on the
//! number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{ensure_positive, invalid, Result};
use crate::merton::Utility;
use crate::model::ModelSpec;

/// Offset above the lower boundary of `y` at which paths are reflected.
pub const Y_REFLECT_EPS: f64 = 1e-8;
/// Wealth floor relative to initial wealth; paths reaching it stop trading.
pub const WEALTH_FLOOR: f64 = 1e-10;
const PAIRS_PER_BATCH: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub paths: usize,
    pub steps_per_year: usize,
    pub seed: u64,
    pub x0: f64,
    pub y0: f64,
    pub w0: f64,
    pub horizon: f64,
    pub antithetic: bool,
}

impl SimConfig {
    pub fn new(paths: usize, steps_per_year: usize, seed: u64, state: (f64, f64, f64), horizon: f64) -> Self {
        Self { paths, steps_per_year, seed, x0: state.0, y0: state.1, w0: state.2, horizon, antithetic: true }
    }

    /// Number of time steps covering the horizon.
    pub fn steps(&self) -> usize {
        ((self.steps_per_year as f64 * self.horizon).ceil() as usize).max(1)
    }

    fn validate(&self) -> Result<()> {
        if self.paths == 0 || self.steps_per_year == 0 {
            return Err(invalid("simulation needs at least one path and one step per year"));
        }
        ensure_positive(self.w0, "initial wealth")?;
        ensure_positive(self.horizon, "horizon")?;
        if !self.x0.is_finite() || !self.y0.is_finite() {
            return Err(invalid("initial state must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub mean_utility: f64,
    pub stderr: f64,
    pub bankruptcies: usize,
    /// Paths simulated (rounded up to whole antithetic pairs).
    pub paths: usize,
    pub steps: usize,
}

/// Running mean and sum of squared deviations of the sample units (pair means
/// when antithetic).
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
    bankruptcies: usize,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    /// Pairwise combination of two partial summaries.
    fn merge(self, o: Self) -> Self {
        if self.n == 0.0 {
            return o;
        }
        if o.n == 0.0 {
            return self;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        Self {
            n,
            mean: self.mean + d * o.n / n,
            m2: self.m2 + o.m2 + d * d * self.n * o.n / n,
            bankruptcies: self.bankruptcies + o.bankruptcies,
        }
    }
}

struct PathRunner<'a, F> {
    model: &'a ModelSpec,
    strategy: &'a F,
    utility: &'a Utility,
    cfg: &'a SimConfig,
    steps: usize,
    dt: f64,
    y_min: Option<f64>,
    floor: f64,
}

impl<F: Fn(f64, f64, f64, f64) -> f64 + Sync> PathRunner<'_, F> {
    /// Terminal utility of one path driven by the normals in `z`, and
    /// whether it reached the wealth floor.
    fn run(&self, z: &[(f64, f64)], sign: f64) -> (f64, bool) {
        let m = self.model;
        let (rho, rho_c) = (m.rho, (1.0 - m.rho * m.rho).sqrt());
        let sq = self.dt.sqrt();
        let (mut x, mut y, mut w) = (self.cfg.x0, self.cfg.y0, self.cfg.w0);
        let mut frozen = false;
        for (k, &(z1, z2)) in z.iter().enumerate().take(self.steps) {
            let t = k as f64 * self.dt;
            let db1 = sign * sq * z1;
            let db2 = sign * sq * (rho * z1 + rho_c * z2);
            let mu = m.mu.evaluate(x, y);
            let sigma = m.sigma.evaluate(x, y);
            if !frozen {
                let pi = (self.strategy)(t, x, y, w);
                w += pi * (mu * self.dt + sigma * db1);
                if !(w > self.floor) {
                    w = self.floor;
                    frozen = true;
                }
            }
            let c = m.c.evaluate(x, y);
            let beta = m.beta.evaluate(x, y);
            x += (mu - 0.5 * sigma * sigma) * self.dt + sigma * db1;
            y += c * self.dt + beta * db2;
            if let Some(lo) = self.y_min {
                if y < lo {
                    y = 2.0 * lo - y;
                }
            }
        }
        (self.utility.u(w), frozen)
    }
}

/// Estimates `E[U(W_T)]` from `(x₀, y₀, w₀)` under the feedback map
/// `strategy(t, x, y, w)` (currency amount in the risky asset).
pub fn simulate_expected_utility<F>(model: &ModelSpec, strategy: &F, utility: &Utility, cfg: &SimConfig) -> Result<SimResult>
where
    F: Fn(f64, f64, f64, f64) -> f64 + Sync,
{
    cfg.validate()?;
    model.check_state(cfg.x0, cfg.y0)?;
    let steps = cfg.steps();
    let runner = PathRunner {
        model,
        strategy,
        utility,
        cfg,
        steps,
        dt: cfg.horizon / steps as f64,
        y_min: model.y_floor.map(|f| f + Y_REFLECT_EPS),
        floor: WEALTH_FLOOR * cfg.w0,
    };
    let per_unit = if cfg.antithetic { 2 } else { 1 };
    let units = cfg.paths.div_ceil(per_unit);
    let batches = units.div_ceil(PAIRS_PER_BATCH);
    let partial: Vec<Moments> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(b as u64);
            let count = PAIRS_PER_BATCH.min(units - b * PAIRS_PER_BATCH);
            let mut z = vec![(0.0, 0.0); steps];
            let mut acc = Moments::default();
            for _ in 0..count {
                for s in z.iter_mut() {
                    *s = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
                }
                let (u1, f1) = runner.run(&z, 1.0);
                let sample = if cfg.antithetic {
                    let (u2, f2) = runner.run(&z, -1.0);
                    acc.bankruptcies += f2 as usize;
                    0.5 * (u1 + u2)
                } else {
                    u1
                };
                acc.bankruptcies += f1 as usize;
                acc.push(sample);
            }
            acc
        })
        .collect();
    let total = partial.into_iter().fold(Moments::default(), Moments::merge);
    let stderr = if total.n > 1.0 { (total.m2 / (total.n - 1.0) / total.n).sqrt() } else { 0.0 };
    Ok(SimResult {
        mean_utility: total.mean,
        stderr,
        bankruptcies: total.bankruptcies,
        paths: units * per_unit,
        steps,
    })
}
