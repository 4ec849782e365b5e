//! Scalar Gaussian autoregression `Z_{t+1} = a Z_t + eps_t`, `eps_t ~ N(0, sigma^2)`.
//!
//! If `Z_0` is Gaussian (or a point) under each hypothesis, `Z_t` stays
//! Gaussian with mean `a^t m` and variance `a^{2t} v + sigma^2 (1 - a^{2t}) / (1 - a^2)`,
//! so the advantage trace has a closed form. The Monte-Carlo simulator
//! estimates the same quantity by running the Bayes-optimal test on sampled
//! paths.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use super::fit::TracePoint;
use super::StochasticMatrix;
use crate::error::{Error, Result};
use crate::seed;
use crate::stats::normal_cdf;

/// Uniform grid used to discretise the autoregression into a finite kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub cells: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { lo: -8.0, hi: 8.0, cells: 801 }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::invalid(format!("grid bounds [{}, {}] invalid", self.lo, self.hi)));
        }
        if self.cells < 2 {
            return Err(Error::invalid("grid needs at least two cells"));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.cells as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width()
    }

    /// Lower boundary of cell `i`; the outer boundaries are infinite.
    fn boundary(&self, i: usize) -> f64 {
        if i == 0 {
            f64::NEG_INFINITY
        } else if i >= self.cells {
            f64::INFINITY
        } else {
            self.lo + i as f64 * self.width()
        }
    }

    pub fn cell_of(&self, z: f64) -> usize {
        let i = ((z - self.lo) / self.width()).floor();
        (i.max(0.0) as usize).min(self.cells - 1)
    }

    /// Cell probabilities of a Gaussian law (point masses land in one cell).
    pub fn discretize_law(&self, law: &GaussianLaw) -> Vec<f64> {
        let mut out = vec![0.0; self.cells];
        if law.var == 0.0 {
            out[self.cell_of(law.mean)] = 1.0;
            return out;
        }
        let sd = law.var.sqrt();
        let mut prev = 0.0;
        for (i, o) in out.iter_mut().enumerate() {
            let upper = self.boundary(i + 1);
            let c = if upper.is_infinite() { 1.0 } else { normal_cdf((upper - law.mean) / sd) };
            *o = (c - prev).max(0.0);
            prev = c;
        }
        out
    }
}

/// Normal law; `var == 0` is a point mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianLaw {
    pub mean: f64,
    pub var: f64,
}

impl GaussianLaw {
    pub fn point(mean: f64) -> Self {
        Self { mean, var: 0.0 }
    }

    fn log_density(&self, z: f64) -> f64 {
        let d = z - self.mean;
        -0.5 * (d * d / self.var + (2.0 * std::f64::consts::PI * self.var).ln())
    }
}

fn same_variance(a: &GaussianLaw, b: &GaussianLaw) -> bool {
    (a.var - b.var).abs() <= 1e-12 * a.var.max(b.var)
}

/// Exact TV distance between two normal laws.
///
/// Equal variances use `erf(|dm| / (2 sqrt(2 v)))`. Otherwise the densities
/// cross at the (at most two) roots of a quadratic and the distance is
/// `P1(A) - P0(A)` with `A = {f1 > f0}`, evaluated with the normal CDF.
pub fn gaussian_tv(a: &GaussianLaw, b: &GaussianLaw) -> f64 {
    match (a.var == 0.0, b.var == 0.0) {
        (true, true) => return if a.mean == b.mean { 0.0 } else { 1.0 },
        (true, false) | (false, true) => return 1.0,
        _ => {}
    }
    if same_variance(a, b) {
        let v = 0.5 * (a.var + b.var);
        return erf((a.mean - b.mean).abs() / (2.0 * (2.0 * v).sqrt()));
    }
    // log f_a - log f_b = qa z^2 + qb z + qc
    let qa = 0.5 / b.var - 0.5 / a.var;
    let qb = a.mean / a.var - b.mean / b.var;
    let qc = 0.5 * b.mean * b.mean / b.var - 0.5 * a.mean * a.mean / a.var
        - 0.5 * (a.var / b.var).ln();
    let disc = qb * qb - 4.0 * qa * qc;
    if disc <= 0.0 {
        return 0.0;
    }
    let sq = disc.sqrt();
    // Numerically stable roots.
    let k = -0.5 * (qb + qb.signum() * sq);
    let (mut r1, mut r2) = (k / qa, qc / k);
    if r1 > r2 {
        std::mem::swap(&mut r1, &mut r2);
    }
    let mass = |law: &GaussianLaw| {
        let sd = law.var.sqrt();
        normal_cdf((r2 - law.mean) / sd) - normal_cdf((r1 - law.mean) / sd)
    };
    // qa > 0: f_a > f_b outside the roots; qa < 0: between them.
    let between = mass(a) - mass(b);
    let tv = if qa > 0.0 { -between } else { between };
    tv.clamp(0.0, 1.0)
}

/// Bayes-optimal acceptance region `{z : f1(z) > f0(z)}` for two normal laws.
#[derive(Debug, Clone, Copy)]
enum DecisionRule {
    Never,
    Above(f64),
    Below(f64),
    Likelihood(GaussianLaw, GaussianLaw),
}

impl DecisionRule {
    fn new(l1: GaussianLaw, l0: GaussianLaw) -> Self {
        if same_variance(&l1, &l0) {
            let mid = 0.5 * (l1.mean + l0.mean);
            if l1.mean > l0.mean {
                DecisionRule::Above(mid)
            } else if l1.mean < l0.mean {
                DecisionRule::Below(mid)
            } else {
                DecisionRule::Never
            }
        } else {
            DecisionRule::Likelihood(l1, l0)
        }
    }

    fn accepts(&self, z: f64) -> bool {
        match *self {
            DecisionRule::Never => false,
            DecisionRule::Above(c) => z > c,
            DecisionRule::Below(c) => z < c,
            DecisionRule::Likelihood(l1, l0) => {
                if l1.var == 0.0 {
                    z == l1.mean
                } else if l0.var == 0.0 {
                    z != l0.mean
                } else {
                    l1.log_density(z) > l0.log_density(z)
                }
            }
        }
    }
}

/// Scalar Gaussian autoregressive kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianAr {
    pub coefficient: f64,
    pub noise_sigma: f64,
    #[serde(default)]
    pub grid: GridSpec,
}

impl GaussianAr {
    pub fn new(coefficient: f64, noise_sigma: f64, grid: GridSpec) -> Result<Self> {
        let ar = Self { coefficient, noise_sigma, grid };
        ar.validate()?;
        Ok(ar)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.coefficient.abs() < 1.0) {
            return Err(Error::invalid(format!(
                "autoregression coefficient |a| = {} must be below 1",
                self.coefficient.abs()
            )));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid(format!("noise sigma {} must be positive", self.noise_sigma)));
        }
        self.grid.validate()
    }

    /// Law of `Z_t` given the law of `Z_0`.
    pub fn law_at(&self, init: &GaussianLaw, t: usize) -> GaussianLaw {
        let a = self.coefficient;
        let a2t = (a * a).powi(t as i32);
        let s2 = self.noise_sigma * self.noise_sigma;
        GaussianLaw {
            mean: a.powi(t as i32) * init.mean,
            var: a2t * init.var + s2 * (1.0 - a2t) / (1.0 - a * a),
        }
    }

    /// Closed-form advantage trace `rho_0..rho_horizon`.
    pub fn exact_trace(&self, init: (GaussianLaw, GaussianLaw), horizon: usize) -> Vec<TracePoint> {
        (0..=horizon)
            .map(|t| TracePoint::exact(t, gaussian_tv(&self.law_at(&init.0, t), &self.law_at(&init.1, t))))
            .collect()
    }

    /// Finite kernel on the grid cells: from the centre of cell `i`, the mass
    /// of `N(a c_i, sigma^2)` over each cell, tails folded into the end cells.
    pub fn discretize(&self) -> StochasticMatrix {
        let g = &self.grid;
        let rows = (0..g.cells)
            .map(|i| {
                g.discretize_law(&GaussianLaw {
                    mean: self.coefficient * g.center(i),
                    var: self.noise_sigma * self.noise_sigma,
                })
            })
            .collect();
        StochasticMatrix::new(rows).expect("discretised Gaussian rows are stochastic")
    }
}

/// Monte-Carlo advantage estimate for the autoregression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArSimulation {
    pub trials: u64,
    pub trace: Vec<TracePoint>,
}

const BATCH: u64 = 4096;

/// Estimate `rho_t` for `t = 0..=horizon` by simulation.
///
/// Each trial draws one noise path and runs it under both hypotheses (common
/// random numbers); at every step the Bayes-optimal test for the known
/// conditional laws is applied to both endpoints. The per-trial difference of
/// the two acceptance indicators is an unbiased estimate of `P1(A) - P0(A)`,
/// which is the TV distance. Trials are batched onto fixed streams and
/// reduced in batch order, so the result does not depend on thread count.
pub fn simulate_ar_chain(
    ar: &GaussianAr,
    init: (GaussianLaw, GaussianLaw),
    horizon: usize,
    trials: u64,
    seed: u64,
) -> Result<ArSimulation> {
    ar.validate()?;
    if horizon < 1 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    if trials < 1 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    if init.0.var < 0.0 || init.1.var < 0.0 {
        return Err(Error::invalid("initial variance must be non-negative"));
    }
    let rules: Vec<DecisionRule> = (0..=horizon)
        .map(|t| DecisionRule::new(ar.law_at(&init.0, t), ar.law_at(&init.1, t)))
        .collect();
    let batches = trials.div_ceil(BATCH);
    let partials: Vec<(Vec<i64>, Vec<u64>)> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = seed::stream(seed, "kernel/ar-chain", b);
            let n = BATCH.min(trials - b * BATCH);
            let mut sum = vec![0i64; horizon + 1];
            let mut sum_sq = vec![0u64; horizon + 1];
            for _ in 0..n {
                let xi: f64 = rng.sample(StandardNormal);
                let mut z1 = init.0.mean + init.0.var.sqrt() * xi;
                let mut z0 = init.1.mean + init.1.var.sqrt() * xi;
                for (t, rule) in rules.iter().enumerate() {
                    if t > 0 {
                        let eps: f64 = ar.noise_sigma * rng.sample::<f64, _>(StandardNormal);
                        z1 = ar.coefficient * z1 + eps;
                        z0 = ar.coefficient * z0 + eps;
                    }
                    let d = rule.accepts(z1) as i64 - rule.accepts(z0) as i64;
                    sum[t] += d;
                    sum_sq[t] += (d * d) as u64;
                }
            }
            (sum, sum_sq)
        })
        .collect();

    let mut sum = vec![0i64; horizon + 1];
    let mut sum_sq = vec![0u64; horizon + 1];
    for (s, sq) in &partials {
        for t in 0..=horizon {
            sum[t] += s[t];
            sum_sq[t] += sq[t];
        }
    }
    let n = trials as f64;
    let trace = (0..=horizon)
        .map(|t| {
            let m = sum[t] as f64 / n;
            let var = if trials > 1 {
                ((sum_sq[t] as f64 / n - m * m) * n / (n - 1.0)).max(0.0)
            } else {
                0.0
            };
            TracePoint { t, rho: m, stderr: Some((var / n).sqrt()) }
        })
        .collect();
    Ok(ArSimulation { trials, trace })
}
