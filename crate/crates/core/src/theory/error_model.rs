use serde::{Deserialize, Serialize};

use super::sign::SignPolicy;
use super::{Result, TheoryError};
use crate::semantic::{ErrorVector, SemanticPoint};

const GRID_POINTS: usize = 101;

/// Shape of the concave error magnitude `phi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiKind {
    /// `c * x * (1 - x)`
    Parabolic,
    /// `c * min(x, 1 - x)`
    Tent,
    /// `c * sqrt(x * (1 - x))`
    SqrtParabolic,
}

impl PhiKind {
    pub const ALL: [PhiKind; 3] = [PhiKind::Parabolic, PhiKind::Tent, PhiKind::SqrtParabolic];

    pub fn name(self) -> &'static str {
        match self {
            PhiKind::Parabolic => "parabolic",
            PhiKind::Tent => "tent",
            PhiKind::SqrtParabolic => "sqrt_parabolic",
        }
    }

    fn unit(self, x: f64) -> f64 {
        match self {
            PhiKind::Parabolic => x * (1.0 - x),
            PhiKind::Tent => x.min(1.0 - x),
            PhiKind::SqrtParabolic => (x * (1.0 - x)).max(0.0).sqrt(),
        }
    }
}

/// Maps a presence probability to the magnitude of the captioner's error on
/// that unit.
pub trait ErrorMagnitude: Send + Sync {
    fn magnitude(&self, x: f64) -> f64;
}

/// Midpoint concavity of `f` on a uniform 101-point grid over `[0,1]`.
pub fn midpoint_concave(f: impl Fn(f64) -> f64) -> bool {
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| i as f64 / (GRID_POINTS - 1) as f64)
        .collect();
    let values: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    for (i, &a) in grid.iter().enumerate() {
        for (j, &b) in grid.iter().enumerate().skip(i) {
            if f((a + b) / 2.0) < (values[i] + values[j]) / 2.0 - 1e-9 {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct ConcaveErrorModel {
    kind: PhiKind,
    scale: f64,
}

#[derive(Serialize, Deserialize)]
struct RawModel {
    kind: PhiKind,
    scale: f64,
}

impl TryFrom<RawModel> for ConcaveErrorModel {
    type Error = TheoryError;
    fn try_from(r: RawModel) -> Result<Self> {
        Self::new(r.kind, r.scale)
    }
}

impl From<ConcaveErrorModel> for RawModel {
    fn from(m: ConcaveErrorModel) -> Self {
        RawModel {
            kind: m.kind,
            scale: m.scale,
        }
    }
}

impl ConcaveErrorModel {
    pub fn new(kind: PhiKind, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(TheoryError::BadScale(scale));
        }
        let model = Self { kind, scale };
        let non_negative = (0..GRID_POINTS).all(|i| model.phi(i as f64 / 100.0) >= 0.0);
        if !non_negative || !midpoint_concave(|x| model.phi(x)) {
            return Err(TheoryError::NotConcave);
        }
        Ok(model)
    }

    pub fn kind(&self) -> PhiKind {
        self.kind
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn phi(&self, x: f64) -> f64 {
        self.scale * self.kind.unit(x)
    }

    /// True when `phi(x) <= min(x, 1 - x)` on `[0,1]`, so `X + Z` stays a
    /// valid semantic point whatever the error sign.
    pub fn preserves_semantics(&self) -> bool {
        match self.kind {
            PhiKind::Parabolic | PhiKind::Tent => self.scale <= 1.0,
            // c * sqrt(x(1-x)) > x as x -> 0 for every c > 0
            PhiKind::SqrtParabolic => false,
        }
    }
}

impl ErrorMagnitude for ConcaveErrorModel {
    fn magnitude(&self, x: f64) -> f64 {
        self.phi(x)
    }
}

/// `c * x^2`: deliberately convex, only used by the violation study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexErrorModel {
    pub scale: f64,
}

impl ErrorMagnitude for ConvexErrorModel {
    fn magnitude(&self, x: f64) -> f64 {
        self.scale * x * x
    }
}

/// `|z_i| = phi(x_i)` with the sign chosen by `sign`. `source` distinguishes
/// the global caption (0) from the local captions (1..=m) within one trial.
pub fn apply_error_model<M: ErrorMagnitude + ?Sized>(
    x: &SemanticPoint,
    model: &M,
    sign: &SignPolicy,
    trial: u64,
    source: u64,
) -> ErrorVector {
    ErrorVector::unchecked(
        x.values()
            .iter()
            .enumerate()
            .map(|(i, &xi)| sign.sign(trial, source, i as u64) * model.magnitude(xi))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_vanish() {
        for kind in [PhiKind::Parabolic, PhiKind::Tent] {
            let m = ConcaveErrorModel::new(kind, 1.0).unwrap();
            let x = SemanticPoint::new(vec![0.0, 1.0]).unwrap();
            let z = apply_error_model(&x, &m, &SignPolicy::AllPositive, 0, 0);
            assert_eq!(z.values(), &[0.0, 0.0]);
        }
    }

    #[test]
    fn parabolic_midpoint() {
        let m = ConcaveErrorModel::new(PhiKind::Parabolic, 1.0).unwrap();
        let x = SemanticPoint::new(vec![0.5]).unwrap();
        assert_eq!(
            apply_error_model(&x, &m, &SignPolicy::AllPositive, 0, 0).values(),
            &[0.25]
        );
        assert_eq!(
            apply_error_model(&x, &m, &SignPolicy::AllNegative, 0, 0).values(),
            &[-0.25]
        );
    }

    #[test]
    fn magnitude_is_exact_under_random_signs() {
        let m = ConcaveErrorModel::new(PhiKind::SqrtParabolic, 0.7).unwrap();
        let x = SemanticPoint::new((0..20).map(|i| i as f64 / 19.0).collect()).unwrap();
        let z = apply_error_model(&x, &m, &SignPolicy::SeededRandom { seed: 9 }, 3, 1);
        for (zi, xi) in z.values().iter().zip(x.values()) {
            assert_eq!(zi.abs(), m.phi(*xi));
        }
    }

    #[test]
    fn all_kinds_construct() {
        for kind in PhiKind::ALL {
            for c in [0.1, 1.0, 3.0] {
                ConcaveErrorModel::new(kind, c).unwrap();
            }
        }
        assert_eq!(
            ConcaveErrorModel::new(PhiKind::Tent, 0.0),
            Err(TheoryError::BadScale(0.0))
        );
        assert!(!midpoint_concave(
            |x| ConvexErrorModel { scale: 1.0 }.magnitude(x)
        ));
    }

    #[test]
    fn semantics_preserving_models_keep_y_in_range() {
        for kind in [PhiKind::Parabolic, PhiKind::Tent] {
            let m = ConcaveErrorModel::new(kind, 1.0).unwrap();
            assert!(m.preserves_semantics());
            for i in 0..=100 {
                let x = i as f64 / 100.0;
                assert!(m.phi(x) <= x.min(1.0 - x) + 1e-15);
            }
        }
        assert!(!ConcaveErrorModel::new(PhiKind::Tent, 1.5)
            .unwrap()
            .preserves_semantics());
        assert!(!ConcaveErrorModel::new(PhiKind::SqrtParabolic, 0.1)
            .unwrap()
            .preserves_semantics());
    }

    #[test]
    fn serde_rejects_bad_scale() {
        let ok: ConcaveErrorModel = serde_json::from_str(r#"{"kind":"tent","scale":0.5}"#).unwrap();
        assert_eq!(ok.kind(), PhiKind::Tent);
        assert!(
            serde_json::from_str::<ConcaveErrorModel>(r#"{"kind":"tent","scale":-1}"#).is_err()
        );
    }
}
