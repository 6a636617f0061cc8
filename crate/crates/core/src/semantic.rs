//! Latent semantic space: points in `[0,1]^n`, importance weights, and the
//! signed error between source and recovered semantics.
//!
//! Two arithmetic modes exist. The checked constructors (`new`) enforce the
//! unit ranges; `unchecked` skips them so that pure vector algebra (used by
//! the bound verifier) can leave the unit cube without tripping errors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemanticError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("semantic space must have at least one unit")]
    EmptySpace,
    #[error("component {index} = {value} is outside [{lo}, {hi}]")]
    OutOfRange {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("labels must be unique and match n = {n}")]
    BadLabels { n: usize },
    #[error("tolerance must be non-negative, got {0}")]
    NegativeTolerance(f64),
}

pub type Result<T> = std::result::Result<T, SemanticError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticSpace {
    n: usize,
    labels: Option<Vec<String>>,
}

impl SemanticSpace {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(SemanticError::EmptySpace);
        }
        Ok(Self { n, labels: None })
    }

    pub fn with_labels(labels: Vec<String>) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(SemanticError::EmptySpace);
        }
        let mut sorted: Vec<&String> = labels.iter().collect();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != n {
            return Err(SemanticError::BadLabels { n });
        }
        Ok(Self {
            n,
            labels: Some(labels),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn label(&self, i: usize) -> Option<&str> {
        self.labels
            .as_ref()
            .and_then(|l| l.get(i))
            .map(String::as_str)
    }
}

fn check_range(values: &[f64], lo: f64, hi: f64) -> Result<()> {
    for (index, &value) in values.iter().enumerate() {
        if !(lo..=hi).contains(&value) {
            return Err(SemanticError::OutOfRange {
                index,
                value,
                lo,
                hi,
            });
        }
    }
    Ok(())
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(SemanticError::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Presence probabilities of each semantic unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SemanticPoint(Vec<f64>);

impl SemanticPoint {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_range(&values, 0.0, 1.0)?;
        Ok(Self(values))
    }

    /// Unconstrained-algebra mode: no range check.
    pub fn unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn in_space(values: Vec<f64>, space: &SemanticSpace) -> Result<Self> {
        check_len(space.dim(), values.len())?;
        Self::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_valid(&self) -> bool {
        check_range(&self.0, 0.0, 1.0).is_ok()
    }

    /// `self + z`, i.e. the recovered semantics `Y = X + Z`. Unconstrained.
    pub fn offset(&self, z: &ErrorVector) -> Result<SemanticPoint> {
        check_len(self.len(), z.len())?;
        Ok(SemanticPoint(
            self.0.iter().zip(z.values()).map(|(x, e)| x + e).collect(),
        ))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImportanceVector(Vec<f64>);

impl ImportanceVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_range(&values, 0.0, 1.0)?;
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Signed semantic error `Z = Y - X`. Negative components are
/// undercoverage, positive ones hallucination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ErrorVector(Vec<f64>);

impl ErrorVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_range(&values, -1.0, 1.0)?;
        Ok(Self(values))
    }

    pub fn unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_valid(&self) -> bool {
        check_range(&self.0, -1.0, 1.0).is_ok()
    }

    pub fn norm(&self, kind: Norm) -> f64 {
        error_norm(self, kind)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// `T = A ⊙ X`, the task-relevant semantics.
pub fn hadamard(a: &ImportanceVector, x: &SemanticPoint) -> Result<SemanticPoint> {
    check_len(a.len(), x.len())?;
    Ok(SemanticPoint(
        a.values()
            .iter()
            .zip(x.values())
            .map(|(a, x)| a * x)
            .collect(),
    ))
}

pub fn semantic_error(y: &SemanticPoint, x: &SemanticPoint) -> Result<ErrorVector> {
    check_len(x.len(), y.len())?;
    Ok(ErrorVector(
        y.values()
            .iter()
            .zip(x.values())
            .map(|(y, x)| y - x)
            .collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorLabel {
    Undercoverage,
    Correct,
    Hallucination,
}

pub fn classify_error(z: &ErrorVector, tol: f64) -> Result<Vec<ErrorLabel>> {
    if tol < 0.0 || tol.is_nan() {
        return Err(SemanticError::NegativeTolerance(tol));
    }
    Ok(z.values()
        .iter()
        .map(|&v| {
            if v < -tol {
                ErrorLabel::Undercoverage
            } else if v > tol {
                ErrorLabel::Hallucination
            } else {
                ErrorLabel::Correct
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Norm {
    #[default]
    L1,
    L2,
    Linf,
}

impl Norm {
    pub const ALL: [Norm; 3] = [Norm::L1, Norm::L2, Norm::Linf];

    pub fn apply(self, v: &[f64]) -> f64 {
        match self {
            Norm::L1 => v.iter().map(|x| x.abs()).sum(),
            Norm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Norm::Linf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }
}

pub fn error_norm(z: &ErrorVector, kind: Norm) -> f64 {
    kind.apply(z.values())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(v: &[f64]) -> SemanticPoint {
        SemanticPoint::new(v.to_vec()).unwrap()
    }

    #[test]
    fn hadamard_cases() {
        let x = pt(&[0.1, 0.7, 1.0]);
        let ones = ImportanceVector::new(vec![1.0; 3]).unwrap();
        let zeros = ImportanceVector::new(vec![0.0; 3]).unwrap();
        assert_eq!(hadamard(&ones, &x).unwrap(), x);
        assert_eq!(hadamard(&zeros, &x).unwrap(), SemanticPoint::zeros(3));
        let half = ImportanceVector::new(vec![0.5]).unwrap();
        assert_eq!(hadamard(&half, &pt(&[0.8])).unwrap().values(), &[0.4]);
        assert!(matches!(
            hadamard(&half, &x),
            Err(SemanticError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn error_extremes() {
        let x = pt(&[0.3, 0.9]);
        assert_eq!(semantic_error(&x, &x).unwrap(), ErrorVector::zeros(2));
        assert_eq!(
            semantic_error(&pt(&[1.0]), &pt(&[0.0])).unwrap().values(),
            &[1.0]
        );
        assert_eq!(
            semantic_error(&pt(&[0.0]), &pt(&[1.0])).unwrap().values(),
            &[-1.0]
        );
    }

    #[test]
    fn classify() {
        let labels = |v: f64| classify_error(&ErrorVector::new(vec![v]).unwrap(), 0.1).unwrap()[0];
        assert_eq!(labels(-0.5), ErrorLabel::Undercoverage);
        assert_eq!(labels(0.5), ErrorLabel::Hallucination);
        assert_eq!(labels(0.05), ErrorLabel::Correct);
        assert!(classify_error(&ErrorVector::zeros(1), -0.1).is_err());
    }

    #[test]
    fn norms() {
        let z = ErrorVector::new(vec![0.3, -0.4]).unwrap();
        assert!((error_norm(&z, Norm::L1) - 0.7).abs() < 1e-12);
        assert!((error_norm(&z, Norm::L2) - 0.5).abs() < 1e-12);
        assert!((error_norm(&z, Norm::Linf) - 0.4).abs() < 1e-12);
        for k in Norm::ALL {
            assert_eq!(error_norm(&ErrorVector::zeros(4), k), 0.0);
        }
    }

    #[test]
    fn range_checks() {
        assert!(SemanticPoint::new(vec![1.2]).is_err());
        assert!(ErrorVector::new(vec![-1.5]).is_err());
        assert!(!SemanticPoint::unchecked(vec![1.2]).is_valid());
        assert!(SemanticSpace::new(0).is_err());
        assert!(SemanticSpace::with_labels(vec!["a".into(), "a".into()]).is_err());
        let space = SemanticSpace::with_labels(vec!["dog".into(), "cat".into()]).unwrap();
        assert_eq!(space.label(1), Some("cat"));
        assert!(SemanticPoint::in_space(vec![0.5], &space).is_err());
    }

    fn unit_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..=1.0, n)
    }

    proptest! {
        #[test]
        fn hadamard_bounded_by_min(pair in (1usize..16).prop_flat_map(|n| (unit_vec(n), unit_vec(n)))) {
            let (a, x) = pair;
            let t = hadamard(&ImportanceVector::new(a.clone()).unwrap(), &pt(&x)).unwrap();
            for i in 0..a.len() {
                prop_assert!(t.values()[i] <= a[i].min(x[i]));
            }
        }

        #[test]
        fn error_adds_back(pair in (1usize..16).prop_flat_map(|n| (unit_vec(n), unit_vec(n)))) {
            let (y, x) = pair;
            let (y, x) = (pt(&y), pt(&x));
            let z = semantic_error(&y, &x).unwrap();
            let back = x.offset(&z).unwrap();
            for (b, y) in back.values().iter().zip(y.values()) {
                prop_assert!((b - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn norm_axioms(
            pair in (1usize..16).prop_flat_map(|n| (
                proptest::collection::vec(-1.0f64..=1.0, n),
                proptest::collection::vec(-1.0f64..=1.0, n),
            )),
            s in -3.0f64..3.0,
        ) {
            let (a, b) = pair;
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let scaled: Vec<f64> = a.iter().map(|x| s * x).collect();
            for k in Norm::ALL {
                prop_assert!(k.apply(&sum) <= k.apply(&a) + k.apply(&b) + 1e-12);
                prop_assert!((k.apply(&scaled) - s.abs() * k.apply(&a)).abs() <= 1e-9);
            }
        }

        #[test]
        fn norms_agree_on_single_component(n in 1usize..16, idx in 0usize..16, v in -1.0f64..=1.0) {
            let mut z = vec![0.0; n];
            z[idx % n] = v;
            for k in Norm::ALL {
                prop_assert!((k.apply(&z) - v.abs()).abs() <= 1e-12);
            }
        }
    }
}
