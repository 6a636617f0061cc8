use rand::Rng;
use serde::{Deserialize, Serialize};

use super::error_model::ErrorMagnitude;
use super::{Result, TheoryError};
use crate::semantic::{ErrorVector, Norm, SemanticPoint};

/// Convex weights of the `m` patches in the global semantics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SplitSpec {
    alpha: Vec<f64>,
}

impl TryFrom<Vec<f64>> for SplitSpec {
    type Error = TheoryError;
    fn try_from(alpha: Vec<f64>) -> Result<Self> {
        Self::new(alpha)
    }
}

impl From<SplitSpec> for Vec<f64> {
    fn from(s: SplitSpec) -> Self {
        s.alpha
    }
}

impl SplitSpec {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(TheoryError::NoPatches);
        }
        let sum: f64 = alpha.iter().sum();
        if alpha.iter().any(|a| !(*a >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
            return Err(TheoryError::BadAlpha(sum));
        }
        Ok(Self { alpha })
    }

    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(TheoryError::NoPatches);
        }
        Self::new(vec![1.0 / m as f64; m])
    }

    /// Symmetric Dirichlet(1) draw via normalized exponentials.
    pub fn sample_dirichlet<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Result<Self> {
        if m == 0 {
            return Err(TheoryError::NoPatches);
        }
        let draws: Vec<f64> = (0..m).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let total: f64 = draws.iter().sum();
        Self::new(draws.iter().map(|d| d / total).collect())
    }

    pub fn m(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct MergeSpec {
    eta: f64,
}

impl TryFrom<f64> for MergeSpec {
    type Error = TheoryError;
    fn try_from(eta: f64) -> Result<Self> {
        Self::new(eta)
    }
}

impl From<MergeSpec> for f64 {
    fn from(m: MergeSpec) -> f64 {
        m.eta
    }
}

impl MergeSpec {
    pub fn new(eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(TheoryError::BadEta(eta));
        }
        Ok(Self { eta })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }
}

fn weighted_sum(points: &[&[f64]], weights: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| points.iter().zip(weights).map(|(p, w)| w * p[i]).sum())
        .collect()
}

fn check_dims<'a>(n: usize, vs: impl IntoIterator<Item = &'a [f64]>) -> Result<()> {
    for v in vs {
        if v.len() != n {
            return Err(TheoryError::DimensionMismatch {
                expected: n,
                actual: v.len(),
            });
        }
    }
    Ok(())
}

/// Draws `m` local points uniformly from the unit cube and builds the global
/// point as their `alpha`-weighted combination.
pub fn sample_split<R: Rng + ?Sized>(
    spec: &SplitSpec,
    n: usize,
    rng: &mut R,
) -> (Vec<SemanticPoint>, SemanticPoint) {
    let locals: Vec<SemanticPoint> = (0..spec.m())
        .map(|_| SemanticPoint::unchecked((0..n).map(|_| rng.random::<f64>()).collect()))
        .collect();
    let global = global_from_locals(&locals, spec);
    (locals, global)
}

pub(crate) fn global_from_locals(locals: &[SemanticPoint], spec: &SplitSpec) -> SemanticPoint {
    let n = locals.first().map_or(0, SemanticPoint::len);
    let refs: Vec<&[f64]> = locals.iter().map(SemanticPoint::values).collect();
    SemanticPoint::unchecked(weighted_sum(&refs, spec.alpha(), n))
}

/// `eta * Y + (1 - eta) * sum_j alpha_j Y^[j]`, without range checks.
pub fn merge_semantics(
    y_global: &SemanticPoint,
    y_locals: &[SemanticPoint],
    spec: &SplitSpec,
    merge: &MergeSpec,
) -> Result<SemanticPoint> {
    if y_locals.len() != spec.m() {
        return Err(TheoryError::DimensionMismatch {
            expected: spec.m(),
            actual: y_locals.len(),
        });
    }
    let n = y_global.len();
    check_dims(n, y_locals.iter().map(SemanticPoint::values))?;
    let refs: Vec<&[f64]> = y_locals.iter().map(SemanticPoint::values).collect();
    let local = weighted_sum(&refs, spec.alpha(), n);
    let eta = merge.eta();
    Ok(SemanticPoint::unchecked(
        y_global
            .values()
            .iter()
            .zip(&local)
            .map(|(g, l)| eta * g + (1.0 - eta) * l)
            .collect(),
    ))
}

/// Per-unit `phi(sum_j alpha_j x_j) - sum_j alpha_j phi(x_j)`; non-negative
/// for concave `phi`.
pub fn jensen_gap<M: ErrorMagnitude + ?Sized>(
    x_locals: &[SemanticPoint],
    spec: &SplitSpec,
    model: &M,
) -> Result<Vec<f64>> {
    if x_locals.len() != spec.m() {
        return Err(TheoryError::DimensionMismatch {
            expected: spec.m(),
            actual: x_locals.len(),
        });
    }
    let n = x_locals[0].len();
    check_dims(n, x_locals.iter().map(SemanticPoint::values))?;
    let alpha = spec.alpha();
    Ok((0..n)
        .map(|i| {
            // A convex combination stays inside the hull of its inputs.
            let (lo, hi) = x_locals
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                    (lo.min(x.values()[i]), hi.max(x.values()[i]))
                });
            let mixed: f64 = x_locals
                .iter()
                .zip(alpha)
                .map(|(x, a)| a * x.values()[i])
                .sum::<f64>()
                .clamp(lo, hi);
            let averaged: f64 = x_locals
                .iter()
                .zip(alpha)
                .map(|(x, a)| a * model.magnitude(x.values()[i]))
                .sum();
            model.magnitude(mixed) - averaged
        })
        .collect())
}

/// `eta * z_global + (1 - eta) * sum_j alpha_j z_locals[j]`: the merged error
/// reconstructed from the component errors alone.
pub fn reconstruct_merged_error(
    z_global: &ErrorVector,
    z_locals: &[ErrorVector],
    spec: &SplitSpec,
    merge: &MergeSpec,
) -> Result<ErrorVector> {
    let n = z_global.len();
    check_dims(n, z_locals.iter().map(ErrorVector::values))?;
    let refs: Vec<&[f64]> = z_locals.iter().map(ErrorVector::values).collect();
    let local = weighted_sum(&refs, spec.alpha(), n);
    let eta = merge.eta();
    Ok(ErrorVector::unchecked(
        z_global
            .values()
            .iter()
            .zip(&local)
            .map(|(g, l)| eta * g + (1.0 - eta) * l)
            .collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormTriple {
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
}

impl NormTriple {
    pub fn of(z: &ErrorVector) -> Self {
        Self {
            l1: z.norm(Norm::L1),
            l2: z.norm(Norm::L2),
            linf: z.norm(Norm::Linf),
        }
    }

    pub fn get(&self, norm: Norm) -> f64 {
        match norm {
            Norm::L1 => self.l1,
            Norm::L2 => self.l2,
            Norm::Linf => self.linf,
        }
    }
}

/// One simulated local-global merge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub alpha: SplitSpec,
    pub eta: MergeSpec,
    pub x_global: SemanticPoint,
    pub x_locals: Vec<SemanticPoint>,
    pub y_global: SemanticPoint,
    pub y_locals: Vec<SemanticPoint>,
    pub y_merged: SemanticPoint,
    pub z_global: ErrorVector,
    pub z_locals: Vec<ErrorVector>,
    pub z_merged: ErrorVector,
    pub per_unit_gap: Vec<f64>,
    pub per_unit_lower_bound: Vec<f64>,
    pub norms_global: NormTriple,
    pub norms_merged: NormTriple,
}

/// `(|z_global_i| - |z_merged_i|, (1 - eta) * jensen_gap_i)` for every unit.
pub fn theorem_gap<M: ErrorMagnitude + ?Sized>(
    record: &TrialRecord,
    model: &M,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let gap = record
        .z_global
        .values()
        .iter()
        .zip(record.z_merged.values())
        .map(|(g, m)| g.abs() - m.abs())
        .collect();
    let scale = 1.0 - record.eta.eta();
    let bound = jensen_gap(&record.x_locals, &record.alpha, model)?
        .into_iter()
        .map(|j| scale * j)
        .collect();
    Ok((gap, bound))
}
