//! Stochastic transition kernels and the distinguishability quantities they
//! act on.
//!
//! Two hypotheses about a binary goal variable `G` induce two laws over the
//! execution state, `P_t = L(Z_t | G = 1)` and `Q_t = L(Z_t | G = 0)`. One
//! kernel step pushes both forward. The total-variation distance between
//! them is the Bayes-optimal decision advantage under balanced priors, and a
//! kernel with Dobrushin coefficient `eta < 1` shrinks it by at least that
//! factor per step.

mod fit;
mod gaussian;

pub use fit::{
    critical_length, first_crossing, fit_exponential_decay, DecayFit, FitOptions, FitWindow,
    TracePoint,
};
pub use gaussian::{
    gaussian_tv, simulate_ar_chain, ArSimulation, GaussianAr, GaussianLaw, GridSpec,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row sums and distribution normalisation.
pub const NORMALIZATION_TOL: f64 = 1e-9;

pub(crate) fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::invalid(format!("{what} is empty")));
    }
    if let Some(x) = p.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::invalid(format!("{what} has invalid entry {x}")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::invalid(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

/// Row-stochastic `n x n` transition matrix: `rows[i][j] = K(j | i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct StochasticMatrix {
    rows: Vec<Vec<f64>>,
}

impl StochasticMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::invalid("transition matrix has no rows"));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::invalid(format!(
                    "transition matrix row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            check_distribution(row, &format!("transition matrix row {i}"))?;
        }
        Ok(Self { rows })
    }

    pub fn identity(n: usize) -> Self {
        let rows = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self { rows }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Push a distribution (row vector) through one step: `mu K`.
    pub fn push_forward(&self, mu: &[f64]) -> Result<Vec<f64>> {
        if mu.len() != self.dim() {
            return Err(Error::DimensionMismatch(mu.len(), self.dim()));
        }
        let mut out = vec![0.0; self.dim()];
        for (w, row) in mu.iter().zip(&self.rows) {
            if *w == 0.0 {
                continue;
            }
            for (o, k) in out.iter_mut().zip(row) {
                *o += w * k;
            }
        }
        Ok(out)
    }
}

impl TryFrom<Vec<Vec<f64>>> for StochasticMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<StochasticMatrix> for Vec<Vec<f64>> {
    fn from(m: StochasticMatrix) -> Self {
        m.rows
    }
}

/// A transition kernel: either an explicit finite matrix or a scalar
/// Gaussian autoregression `Z' = a Z + N(0, sigma^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum KernelSpec {
    FiniteMatrix { matrix: StochasticMatrix },
    GaussianAr(GaussianAr),
}

impl KernelSpec {
    pub fn finite(rows: Vec<Vec<f64>>) -> Result<Self> {
        Ok(KernelSpec::FiniteMatrix { matrix: StochasticMatrix::new(rows)? })
    }

    /// The finite matrix this kernel acts through. Gaussian kernels are
    /// discretised on their grid.
    pub fn to_matrix(&self) -> StochasticMatrix {
        match self {
            KernelSpec::FiniteMatrix { matrix } => matrix.clone(),
            KernelSpec::GaussianAr(ar) => ar.discretize(),
        }
    }
}

/// Conditional state laws under the two goal hypotheses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisPair {
    /// Law of the state given `G = 1`.
    pub p: Vec<f64>,
    /// Law of the state given `G = 0`.
    pub q: Vec<f64>,
}

impl HypothesisPair {
    pub fn new(p: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        if p.len() != q.len() {
            return Err(Error::DimensionMismatch(p.len(), q.len()));
        }
        check_distribution(&p, "p")?;
        check_distribution(&q, "q")?;
        Ok(Self { p, q })
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }
}

/// Total-variation distance `(1/2) sum |p_i - q_i|`.
pub fn tv(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch(p.len(), q.len()));
    }
    let s: f64 = p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum();
    Ok((0.5 * s).clamp(0.0, 1.0))
}

pub fn tv_distance(pair: &HypothesisPair) -> f64 {
    tv(&pair.p, &pair.q).expect("pair dimensions checked at construction")
}

/// Bayes-optimal testing advantage `1 - 2 P_e` under balanced priors, which
/// equals the TV distance between the two conditional laws.
pub fn decision_advantage(pair: &HypothesisPair) -> f64 {
    tv_distance(pair)
}

/// Dobrushin coefficient: the largest TV distance between two rows. It is
/// the tightest `eta` with `TV(mu K, nu K) <= eta TV(mu, nu)` for all inputs.
pub fn dobrushin_coefficient(matrix: &StochasticMatrix) -> f64 {
    let rows = matrix.rows();
    let mut eta: f64 = 0.0;
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            eta = eta.max(tv(&rows[i], &rows[j]).expect("square matrix"));
        }
    }
    eta
}

/// Dobrushin coefficient, rejecting kernels that do not strictly contract.
pub fn contraction_coefficient(matrix: &StochasticMatrix) -> Result<f64> {
    let eta = dobrushin_coefficient(matrix);
    if eta >= 1.0 - 1e-12 {
        return Err(Error::ContractViolation(format!(
            "Dobrushin coefficient {eta} is not below 1; the kernel does not contract"
        )));
    }
    Ok(eta)
}

/// Push a hypothesis pair through `steps` kernel steps, returning the pairs
/// for `t = 0..=steps`.
pub fn propagate(
    kernel: &KernelSpec,
    pair: &HypothesisPair,
    steps: usize,
) -> Result<Vec<HypothesisPair>> {
    let matrix = kernel.to_matrix();
    if pair.dim() != matrix.dim() {
        return Err(Error::DimensionMismatch(pair.dim(), matrix.dim()));
    }
    let mut out = Vec::with_capacity(steps + 1);
    out.push(pair.clone());
    for _ in 0..steps {
        let last = out.last().expect("non-empty");
        let p = matrix.push_forward(&last.p)?;
        let q = matrix.push_forward(&last.q)?;
        out.push(HypothesisPair { p, q });
    }
    Ok(out)
}

/// Advantage trace of a propagated sequence.
pub fn advantage_trace(pairs: &[HypothesisPair]) -> Vec<TracePoint> {
    pairs
        .iter()
        .enumerate()
        .map(|(t, pair)| TracePoint::exact(t, decision_advantage(pair)))
        .collect()
}

/// Joint law of a finite variable (rows) and a finite state (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDistribution {
    table: Vec<Vec<f64>>,
}

impl JointDistribution {
    pub fn new(table: Vec<Vec<f64>>) -> Result<Self> {
        let cols = table.first().map(Vec::len).unwrap_or(0);
        if table.is_empty() || cols == 0 {
            return Err(Error::invalid("joint table is empty"));
        }
        if let Some(r) = table.iter().find(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch(r.len(), cols));
        }
        let flat: Vec<f64> = table.iter().flatten().copied().collect();
        check_distribution(&flat, "joint table")?;
        Ok(Self { table })
    }

    /// Joint of `(G, Z)` with `P(G = 1) = prior_goal`; row 0 is `G = 0`.
    pub fn from_pair(pair: &HypothesisPair, prior_goal: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&prior_goal) {
            return Err(Error::invalid(format!("prior {prior_goal} outside [0, 1]")));
        }
        let row0 = pair.q.iter().map(|x| x * (1.0 - prior_goal)).collect();
        let row1 = pair.p.iter().map(|x| x * prior_goal).collect();
        Self::new(vec![row0, row1])
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.table
    }

    /// Apply a kernel to the state coordinate of every row.
    pub fn push_forward(&self, matrix: &StochasticMatrix) -> Result<Self> {
        let table = self
            .table
            .iter()
            .map(|row| matrix.push_forward(row))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { table })
    }
}

/// Mutual information in nats between the row and column variables.
pub fn mutual_information(joint: &JointDistribution) -> f64 {
    let t = joint.table();
    let row_m: Vec<f64> = t.iter().map(|r| r.iter().sum()).collect();
    let col_m: Vec<f64> = (0..t[0].len()).map(|j| t.iter().map(|r| r[j]).sum()).collect();
    let mut mi = 0.0;
    for (i, row) in t.iter().enumerate() {
        for (j, &pij) in row.iter().enumerate() {
            if pij > 0.0 {
                mi += pij * (pij / (row_m[i] * col_m[j])).ln();
            }
        }
    }
    mi.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> KernelSpec {
        KernelSpec::finite(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap()
    }

    #[test]
    fn tv_examples() {
        let same = HypothesisPair::new(vec![0.3, 0.7], vec![0.3, 0.7]).unwrap();
        assert_eq!(tv_distance(&same), 0.0);
        let disjoint = HypothesisPair::new(vec![1.0, 0.0], vec![0.0, 1.0]).unwrap();
        assert_eq!(tv_distance(&disjoint), 1.0);
        let mid = HypothesisPair::new(vec![0.6, 0.4], vec![0.4, 0.6]).unwrap();
        assert!((tv_distance(&mid) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn pair_rejects_mismatched_or_unnormalised() {
        assert_eq!(
            HypothesisPair::new(vec![1.0], vec![0.5, 0.5]),
            Err(Error::DimensionMismatch(1, 2))
        );
        assert!(HypothesisPair::new(vec![0.5, 0.6], vec![0.5, 0.5]).is_err());
        assert!(tv(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn dobrushin_examples() {
        let mixing = StochasticMatrix::new(vec![vec![0.3, 0.7]; 2]).unwrap();
        assert_eq!(dobrushin_coefficient(&mixing), 0.0);
        let id = StochasticMatrix::identity(3);
        assert_eq!(dobrushin_coefficient(&id), 1.0);
        assert!(matches!(contraction_coefficient(&id), Err(Error::ContractViolation(_))));
        let m = two_state().to_matrix();
        assert!((dobrushin_coefficient(&m) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn matrix_rejects_non_stochastic() {
        assert!(StochasticMatrix::new(vec![vec![0.5, 0.4], vec![0.5, 0.5]]).is_err());
        assert!(StochasticMatrix::new(vec![vec![1.2, -0.2], vec![0.5, 0.5]]).is_err());
        assert!(StochasticMatrix::new(vec![vec![1.0]; 2]).is_err());
    }

    #[test]
    fn propagate_zero_steps_is_identity() {
        let pair = HypothesisPair::new(vec![1.0, 0.0], vec![0.0, 1.0]).unwrap();
        let out = propagate(&two_state(), &pair, 0).unwrap();
        assert_eq!(out, vec![pair]);
    }

    #[test]
    fn propagate_full_mixing_kills_advantage() {
        let k = KernelSpec::finite(vec![vec![0.25, 0.75]; 2]).unwrap();
        let pair = HypothesisPair::new(vec![1.0, 0.0], vec![0.0, 1.0]).unwrap();
        let out = propagate(&k, &pair, 1).unwrap();
        assert_eq!(tv_distance(&out[1]), 0.0);
    }

    #[test]
    fn mutual_information_examples() {
        let indep = JointDistribution::new(vec![vec![0.1, 0.4], vec![0.1, 0.4]]).unwrap();
        assert!(mutual_information(&indep).abs() < 1e-15);
        let determined = JointDistribution::new(vec![vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
        assert!((mutual_information(&determined) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
