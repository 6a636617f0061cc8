//! Discrete information measures (in bits) and the composite captioning
//! objective built from them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InfoError {
    #[error("distribution is empty")]
    Empty,
    #[error("probability {index} is negative or not finite: {value}")]
    BadProbability { index: usize, value: f64 },
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("joint rows have inconsistent lengths")]
    Ragged,
    #[error("outcome sets differ")]
    OutcomeMismatch,
    #[error("{0} must be strictly positive, got {1}")]
    NonPositiveWeight(&'static str, f64),
    #[error("{0} must be non-negative, got {1}")]
    Negative(&'static str, f64),
    #[error("label count {labels} does not match outcome count {outcomes}")]
    LabelCount { labels: usize, outcomes: usize },
}

pub type Result<T> = std::result::Result<T, InfoError>;

fn validate(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(InfoError::Empty);
    }
    for (index, &value) in p.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(InfoError::BadProbability { index, value });
        }
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SUM_TOLERANCE {
        return Err(InfoError::NotNormalized(s));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    probabilities: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
}

impl DiscreteDistribution {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        validate(&probabilities)?;
        Ok(Self {
            probabilities,
            labels: None,
        })
    }

    pub fn with_labels(probabilities: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        if labels.len() != probabilities.len() {
            return Err(InfoError::LabelCount {
                labels: labels.len(),
                outcomes: probabilities.len(),
            });
        }
        validate(&probabilities)?;
        Ok(Self {
            probabilities,
            labels: Some(labels),
        })
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(InfoError::Empty);
        }
        Self::new(vec![1.0 / k as f64; k])
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(InfoError::NotNormalized(total));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    fn same_outcomes(&self, other: &Self) -> bool {
        if self.len() != other.len() {
            return false;
        }
        match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => a == b,
            _ => true,
        }
    }
}

/// Joint distribution `p(a, b)` stored row-major, rows indexed by `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDistribution {
    rows: usize,
    cols: usize,
    cells: Vec<f64>,
}

impl JointDistribution {
    pub fn new(matrix: Vec<Vec<f64>>) -> Result<Self> {
        let rows = matrix.len();
        let cols = matrix.first().map_or(0, Vec::len);
        if matrix.iter().any(|r| r.len() != cols) {
            return Err(InfoError::Ragged);
        }
        Self::from_flat(rows, cols, matrix.into_iter().flatten().collect())
    }

    pub fn from_flat(rows: usize, cols: usize, cells: Vec<f64>) -> Result<Self> {
        if rows * cols != cells.len() {
            return Err(InfoError::Ragged);
        }
        validate(&cells)?;
        Ok(Self { rows, cols, cells })
    }

    pub fn product(a: &DiscreteDistribution, b: &DiscreteDistribution) -> Result<Self> {
        let cells = a
            .probabilities()
            .iter()
            .flat_map(|pa| b.probabilities().iter().map(move |pb| pa * pb))
            .collect();
        Self::from_flat(a.len(), b.len(), cells)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.cells[a * self.cols + b]
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn marginal_a(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|a| (0..self.cols).map(|b| self.get(a, b)).sum())
            .collect()
    }

    pub fn marginal_b(&self) -> Vec<f64> {
        (0..self.cols)
            .map(|b| (0..self.rows).map(|a| self.get(a, b)).sum())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut cells = Vec::with_capacity(self.cells.len());
        for b in 0..self.cols {
            for a in 0..self.rows {
                cells.push(self.get(a, b));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            cells,
        }
    }

    /// The joint viewed as a single distribution over `k_A * k_B` outcomes.
    pub fn flattened(&self) -> DiscreteDistribution {
        DiscreteDistribution {
            probabilities: self.cells.clone(),
            labels: None,
        }
    }
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.log2()
    } else {
        0.0
    }
}

pub fn entropy(d: &DiscreteDistribution) -> f64 {
    let h = -d.probabilities().iter().copied().map(plogp).sum::<f64>();
    // -0.0 for point masses
    h.max(0.0)
}

pub fn mutual_information(j: &JointDistribution) -> f64 {
    let pa = j.marginal_a();
    let pb = j.marginal_b();
    let mut total = 0.0;
    for (a, &ma) in pa.iter().enumerate() {
        for (b, &mb) in pb.iter().enumerate() {
            let p = j.get(a, b);
            if p > 0.0 {
                total += p * (p / (ma * mb)).log2();
            }
        }
    }
    total.max(0.0)
}

/// KL divergence that stays finite or is flagged infinite when absolute
/// continuity fails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "bits")]
pub enum Divergence {
    Finite(f64),
    Infinite,
}

impl Divergence {
    pub fn is_infinite(self) -> bool {
        matches!(self, Divergence::Infinite)
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Divergence::Finite(v) => v,
            Divergence::Infinite => f64::INFINITY,
        }
    }
}

pub fn kl_divergence(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<Divergence> {
    if !p.same_outcomes(q) {
        return Err(InfoError::OutcomeMismatch);
    }
    let mut total = 0.0;
    for (&pi, &qi) in p.probabilities().iter().zip(q.probabilities()) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Ok(Divergence::Infinite);
        }
        total += pi * (pi / qi).log2();
    }
    Ok(Divergence::Finite(total.max(0.0)))
}

/// Information-bottleneck value `I(Y;T) - beta * H(Y)` for a deterministic
/// captioner.
pub fn ib_objective(i_yt: f64, h_y: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(InfoError::NonPositiveWeight("beta", beta));
    }
    if i_yt < 0.0 {
        return Err(InfoError::Negative("i_yt", i_yt));
    }
    if h_y < 0.0 {
        return Err(InfoError::Negative("h_y", h_y));
    }
    Ok(i_yt - beta * h_y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    beta: f64,
    gamma: f64,
}

impl ObjectiveWeights {
    pub fn new(beta: f64, gamma: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(InfoError::NonPositiveWeight("beta", beta));
        }
        if !(gamma > 0.0) {
            return Err(InfoError::NonPositiveWeight("gamma", gamma));
        }
        Ok(Self { beta, gamma })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub j_suf: f64,
    pub j_min: f64,
    pub j_int: f64,
    pub j_total: f64,
}

/// Sufficiency minus weighted redundancy and incomprehensibility penalties:
/// `j_total = j_suf + beta * (-H) + gamma * (-D)`.
pub fn objective(
    j_suf: f64,
    h_y: f64,
    d_lang: f64,
    w: ObjectiveWeights,
) -> Result<ObjectiveReport> {
    if h_y < 0.0 || h_y.is_nan() {
        return Err(InfoError::Negative("h_y", h_y));
    }
    if d_lang < 0.0 || d_lang.is_nan() {
        return Err(InfoError::Negative("d_lang", d_lang));
    }
    let j_min = -h_y;
    let j_int = -d_lang;
    Ok(ObjectiveReport {
        j_suf,
        j_min,
        j_int,
        j_total: j_suf + w.beta * j_min + w.gamma * j_int,
    })
}
