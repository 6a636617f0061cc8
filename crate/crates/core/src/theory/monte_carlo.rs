use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::algebra::{
    merge_semantics, reconstruct_merged_error, sample_split, theorem_gap, MergeSpec, NormTriple,
    SplitSpec, TrialRecord,
};
use super::error_model::{apply_error_model, ConcaveErrorModel, ConvexErrorModel, ErrorMagnitude};
use super::sign::SignPolicy;
use super::{Result, TheoryError, INEQUALITY_TOL};
use crate::semantic::{semantic_error, ErrorVector, Norm, SemanticPoint};

const PERTURBATION_SALT: u64 = 0x7065_7274_7572_6221;
const HISTOGRAM_BINS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EtaSource {
    Fixed {
        value: MergeSpec,
    },
    /// Uniform on the open interval (0, 1).
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlphaSource {
    Fixed {
        weights: SplitSpec,
    },
    /// Symmetric Dirichlet(1), i.e. uniform on the simplex.
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub n: usize,
    pub m: usize,
    pub trials: u64,
    pub seed: u64,
    pub phi: ConcaveErrorModel,
    pub sign: SignPolicy,
    pub eta: EtaSource,
    pub alpha: AlphaSource,
    /// Reject error models that can leave `[0,1]` and count trials whose
    /// recovered semantics fall outside it.
    #[serde(default)]
    pub valid_semantics: bool,
    /// Worker count; `None` uses the global rayon pool. Never affects results.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl MonteCarloConfig {
    pub fn new(n: usize, m: usize, trials: u64, seed: u64, phi: ConcaveErrorModel) -> Self {
        Self {
            n,
            m,
            trials,
            seed,
            phi,
            sign: SignPolicy::SeededRandom { seed },
            eta: EtaSource::Uniform,
            alpha: AlphaSource::Dirichlet,
            valid_semantics: false,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(TheoryError::ZeroCount("trials"));
        }
        if self.n == 0 {
            return Err(TheoryError::ZeroCount("n"));
        }
        if self.m == 0 {
            return Err(TheoryError::ZeroCount("m"));
        }
        if let AlphaSource::Fixed { weights } = &self.alpha {
            if weights.m() != self.m {
                return Err(TheoryError::AlphaLength {
                    expected: self.m,
                    actual: weights.m(),
                });
            }
        }
        if self.threads == Some(0) {
            return Err(TheoryError::ZeroCount("threads"));
        }
        if self.valid_semantics && !self.phi.preserves_semantics() {
            return Err(TheoryError::NotSemanticsPreserving);
        }
        Ok(())
    }
}

/// Deliberate departures from the assumptions, for the violation study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Perturbation {
    /// Replace `phi` with `scale * x^2`.
    ConvexPhi { scale: f64 },
    /// Add uniform noise in `[-magnitude, magnitude]` to each merged unit.
    MergeNoise { magnitude: f64 },
    /// Shift each global unit by uniform noise in `[-magnitude, magnitude]`
    /// and clamp to `[0,1]`, breaking the linear local-global relation.
    NonlinearGlobal { magnitude: f64 },
}

impl Perturbation {
    fn magnitude(&self) -> f64 {
        match *self {
            Perturbation::ConvexPhi { scale } => scale,
            Perturbation::MergeNoise { magnitude }
            | Perturbation::NonlinearGlobal { magnitude } => magnitude,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolationCounts {
    /// Units with `|z_i| - |z_merged_i| < -tol`.
    pub per_unit_gap: u64,
    /// Units where the gap falls below the Jensen lower bound.
    pub gap_below_bound: u64,
    /// Units with a negative Jensen lower bound.
    pub negative_bound: u64,
    pub norm_l1: u64,
    pub norm_l2: u64,
    pub norm_linf: u64,
    pub trials_with_violation: u64,
}

impl ViolationCounts {
    pub fn total(&self) -> u64 {
        self.per_unit_gap
            + self.gap_below_bound
            + self.negative_bound
            + self.norm_l1
            + self.norm_l2
            + self.norm_linf
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub p01: f64,
    pub p50: f64,
    pub p99: f64,
    pub max: f64,
}

impl Quantiles {
    fn of_sorted(sorted: &[f64]) -> Self {
        let at = |q: f64| sorted[((sorted.len() - 1) as f64 * q).round() as usize];
        Self {
            min: sorted[0],
            p01: at(0.01),
            p50: at(0.5),
            p99: at(0.99),
            max: sorted[sorted.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormPairStats {
    pub norm: Norm,
    pub mean_global: f64,
    pub mean_merged: f64,
    /// Largest `||z_merged|| - ||z_global||` seen.
    pub max_excess: f64,
    pub merged_not_larger: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    fn of_sorted(sorted: &[f64]) -> Self {
        let lo = sorted[0];
        let hi = sorted[sorted.len() - 1];
        let bins = if hi > lo { HISTOGRAM_BINS } else { 1 };
        let mut counts = vec![0u64; bins];
        let width = (hi - lo) / bins as f64;
        for &v in sorted {
            let idx = if width > 0.0 {
                (((v - lo) / width) as usize).min(bins - 1)
            } else {
                0
            };
            counts[idx] += 1;
        }
        Self { lo, hi, counts }
    }

    /// `(bin_lo, bin_hi, count)` rows.
    pub fn rows(&self) -> Vec<(f64, f64, u64)> {
        let width = (self.hi - self.lo) / self.counts.len() as f64;
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let a = self.lo + width * i as f64;
                let b = if i + 1 == self.counts.len() {
                    self.hi
                } else {
                    self.lo + width * (i + 1) as f64
                };
                (a, b, c)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub phi: String,
    pub config: MonteCarloConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<Perturbation>,
    pub trials: u64,
    pub units_checked: u64,
    pub violations: ViolationCounts,
    /// Fraction of units whose gap is negative.
    pub violation_frequency: f64,
    pub trial_violation_frequency: f64,
    pub gap_quantiles: Quantiles,
    pub max_reconstruction_error: f64,
    pub norms: Vec<NormPairStats>,
    pub invalid_semantics_trials: u64,
    pub histogram: Histogram,
}

impl MonteCarloSummary {
    /// No inequality of the proof chain failed on any trial.
    pub fn holds(&self) -> bool {
        self.violations.total() == 0 && self.invalid_semantics_trials == 0
    }
}

struct TrialOutcome {
    gaps: Vec<f64>,
    gap_violations: u64,
    bound_violations: u64,
    negative_bounds: u64,
    reconstruction_error: f64,
    norms_global: NormTriple,
    norms_merged: NormTriple,
    semantics_valid: bool,
}

fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

fn symmetric<R: Rng>(rng: &mut R, magnitude: f64) -> f64 {
    magnitude * (2.0 * rng.random::<f64>() - 1.0)
}

/// One trial under the assumptions. Randomness is drawn from substream
/// `trial` of the configured seed only.
pub fn run_trial(cfg: &MonteCarloConfig, trial: u64) -> Result<TrialRecord> {
    simulate_trial(cfg, trial, None)
}

fn simulate_trial(
    cfg: &MonteCarloConfig,
    trial: u64,
    perturbation: Option<&Perturbation>,
) -> Result<TrialRecord> {
    let mut rng = trial_rng(cfg.seed, trial);
    let alpha = match &cfg.alpha {
        AlphaSource::Fixed { weights } => weights.clone(),
        AlphaSource::Dirichlet => SplitSpec::sample_dirichlet(cfg.m, &mut rng)?,
    };
    let eta = match cfg.eta {
        EtaSource::Fixed { value } => value,
        EtaSource::Uniform => loop {
            let u: f64 = rng.random();
            if u > 0.0 {
                break MergeSpec::new(u)?;
            }
        },
    };
    let (x_locals, mut x_global) = sample_split(&alpha, cfg.n, &mut rng);

    let mut noise = trial_rng(cfg.seed ^ PERTURBATION_SALT, trial);
    let convex;
    let model: &dyn ErrorMagnitude = match perturbation {
        Some(Perturbation::ConvexPhi { scale }) => {
            convex = ConvexErrorModel { scale: *scale };
            &convex
        }
        _ => &cfg.phi,
    };
    if let Some(Perturbation::NonlinearGlobal { magnitude }) = perturbation {
        x_global = SemanticPoint::unchecked(
            x_global
                .values()
                .iter()
                .map(|x| (x + symmetric(&mut noise, *magnitude)).clamp(0.0, 1.0))
                .collect(),
        );
    }

    let z_global = apply_error_model(&x_global, model, &cfg.sign, trial, 0);
    let z_locals: Vec<ErrorVector> = x_locals
        .iter()
        .enumerate()
        .map(|(j, x)| apply_error_model(x, model, &cfg.sign, trial, j as u64 + 1))
        .collect();
    let y_global = offset(&x_global, &z_global);
    let y_locals: Vec<SemanticPoint> = x_locals
        .iter()
        .zip(&z_locals)
        .map(|(x, z)| offset(x, z))
        .collect();
    let mut y_merged = merge_semantics(&y_global, &y_locals, &alpha, &eta)?;
    if let Some(Perturbation::MergeNoise { magnitude }) = perturbation {
        y_merged = SemanticPoint::unchecked(
            y_merged
                .values()
                .iter()
                .map(|y| y + symmetric(&mut noise, *magnitude))
                .collect(),
        );
    }
    let z_merged =
        semantic_error(&y_merged, &x_global).map_err(|_| TheoryError::DimensionMismatch {
            expected: x_global.len(),
            actual: y_merged.len(),
        })?;

    let mut record = TrialRecord {
        trial,
        alpha,
        eta,
        norms_global: NormTriple::of(&z_global),
        norms_merged: NormTriple::of(&z_merged),
        x_global,
        x_locals,
        y_global,
        y_locals,
        y_merged,
        z_global,
        z_locals,
        z_merged,
        per_unit_gap: Vec::new(),
        per_unit_lower_bound: Vec::new(),
    };
    let (gap, bound) = theorem_gap(&record, model)?;
    record.per_unit_gap = gap;
    record.per_unit_lower_bound = bound;
    Ok(record)
}

fn offset(x: &SemanticPoint, z: &ErrorVector) -> SemanticPoint {
    SemanticPoint::unchecked(
        x.values()
            .iter()
            .zip(z.values())
            .map(|(a, b)| a + b)
            .collect(),
    )
}

fn outcome(record: TrialRecord) -> Result<TrialOutcome> {
    let rebuilt = reconstruct_merged_error(
        &record.z_global,
        &record.z_locals,
        &record.alpha,
        &record.eta,
    )?;
    let reconstruction_error = rebuilt
        .values()
        .iter()
        .zip(record.z_merged.values())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let mut gap_violations = 0;
    let mut bound_violations = 0;
    let mut negative_bounds = 0;
    for (g, b) in record.per_unit_gap.iter().zip(&record.per_unit_lower_bound) {
        if *g < -INEQUALITY_TOL {
            gap_violations += 1;
        }
        if *g < b - INEQUALITY_TOL {
            bound_violations += 1;
        }
        if *b < -INEQUALITY_TOL {
            negative_bounds += 1;
        }
    }
    let semantics_valid = record.y_global.is_valid()
        && record.y_merged.is_valid()
        && record.y_locals.iter().all(SemanticPoint::is_valid);
    Ok(TrialOutcome {
        gaps: record.per_unit_gap,
        gap_violations,
        bound_violations,
        negative_bounds,
        reconstruction_error,
        norms_global: record.norms_global,
        norms_merged: record.norms_merged,
        semantics_valid,
    })
}

fn execute(
    cfg: &MonteCarloConfig,
    perturbation: Option<&Perturbation>,
) -> Result<MonteCarloSummary> {
    cfg.validate()?;
    if let Some(p) = perturbation {
        let mag = p.magnitude();
        if !(mag >= 0.0 && mag.is_finite()) {
            return Err(TheoryError::BadPerturbation(mag));
        }
    }
    let work = || -> Result<Vec<TrialOutcome>> {
        (0..cfg.trials)
            .into_par_iter()
            .map(|t| simulate_trial(cfg, t, perturbation).and_then(outcome))
            .collect()
    };
    let outcomes = match cfg.threads {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| TheoryError::ThreadPool(e.to_string()))?
            .install(work)?,
        None => work()?,
    };
    Ok(aggregate(cfg, perturbation, outcomes))
}

fn aggregate(
    cfg: &MonteCarloConfig,
    perturbation: Option<&Perturbation>,
    outcomes: Vec<TrialOutcome>,
) -> MonteCarloSummary {
    let mut violations = ViolationCounts::default();
    let mut gaps = Vec::with_capacity(outcomes.len() * cfg.n);
    let mut max_reconstruction_error = 0.0f64;
    let mut invalid_semantics_trials = 0;
    let mut norm_sums = [(0.0f64, 0.0f64, f64::NEG_INFINITY, 0u64); 3];

    for o in &outcomes {
        violations.per_unit_gap += o.gap_violations;
        violations.gap_below_bound += o.bound_violations;
        violations.negative_bound += o.negative_bounds;
        let mut norm_failed = false;
        for (k, norm) in Norm::ALL.iter().enumerate() {
            let g = o.norms_global.get(*norm);
            let m = o.norms_merged.get(*norm);
            let acc = &mut norm_sums[k];
            acc.0 += g;
            acc.1 += m;
            acc.2 = acc.2.max(m - g);
            if m <= g + INEQUALITY_TOL {
                acc.3 += 1;
            } else {
                norm_failed = true;
                match norm {
                    Norm::L1 => violations.norm_l1 += 1,
                    Norm::L2 => violations.norm_l2 += 1,
                    Norm::Linf => violations.norm_linf += 1,
                }
            }
        }
        if norm_failed || o.gap_violations + o.bound_violations + o.negative_bounds > 0 {
            violations.trials_with_violation += 1;
        }
        if cfg.valid_semantics && !o.semantics_valid {
            invalid_semantics_trials += 1;
        }
        max_reconstruction_error = max_reconstruction_error.max(o.reconstruction_error);
        gaps.extend_from_slice(&o.gaps);
    }
    gaps.sort_by(f64::total_cmp);

    let trials = outcomes.len() as u64;
    let units_checked = gaps.len() as u64;
    let norms = Norm::ALL
        .iter()
        .zip(norm_sums)
        .map(|(norm, (g, m, excess, ok))| NormPairStats {
            norm: *norm,
            mean_global: g / trials as f64,
            mean_merged: m / trials as f64,
            max_excess: excess,
            merged_not_larger: ok,
        })
        .collect();
    let phi = match perturbation {
        Some(Perturbation::ConvexPhi { .. }) => "convex_square".to_string(),
        _ => cfg.phi.kind().name().to_string(),
    };
    let mut config = cfg.clone();
    config.threads = None;

    MonteCarloSummary {
        phi,
        config,
        perturbation: perturbation.copied(),
        trials,
        units_checked,
        violation_frequency: violations.per_unit_gap as f64 / units_checked as f64,
        trial_violation_frequency: violations.trials_with_violation as f64 / trials as f64,
        violations,
        gap_quantiles: Quantiles::of_sorted(&gaps),
        max_reconstruction_error,
        norms,
        invalid_semantics_trials,
        histogram: Histogram::of_sorted(&gaps),
    }
}

/// Runs `cfg.trials` independent merges under the assumptions and counts
/// every failed inequality. Results depend only on the config, never on the
/// worker count.
pub fn run_monte_carlo(cfg: &MonteCarloConfig) -> Result<MonteCarloSummary> {
    execute(cfg, None)
}

/// Same statistics as [`run_monte_carlo`] with one assumption broken.
/// Violations are expected here and only reported.
pub fn run_violation_study(
    cfg: &MonteCarloConfig,
    perturbation: Perturbation,
) -> Result<MonteCarloSummary> {
    execute(cfg, Some(&perturbation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theory::PhiKind;

    fn cfg(kind: PhiKind, trials: u64) -> MonteCarloConfig {
        MonteCarloConfig::new(8, 3, trials, 17, ConcaveErrorModel::new(kind, 1.0).unwrap())
    }

    #[test]
    fn zero_trials_rejected() {
        assert_eq!(
            run_monte_carlo(&cfg(PhiKind::Tent, 0)),
            Err(TheoryError::ZeroCount("trials"))
        );
    }

    #[test]
    fn no_violations_for_concave_models() {
        for kind in PhiKind::ALL {
            let s = run_monte_carlo(&cfg(kind, 500)).unwrap();
            assert!(s.holds(), "{kind:?}: {:?}", s.violations);
            assert_eq!(s.units_checked, 500 * 8);
            assert!(s.gap_quantiles.min >= -INEQUALITY_TOL);
        }
    }

    #[test]
    fn deterministic_across_runs_and_threads() {
        let mut c = cfg(PhiKind::SqrtParabolic, 300);
        c.threads = Some(1);
        let a = serde_json::to_string(&run_monte_carlo(&c).unwrap()).unwrap();
        c.threads = Some(4);
        let b = serde_json::to_string(&run_monte_carlo(&c).unwrap()).unwrap();
        c.threads = None;
        let d = serde_json::to_string(&run_monte_carlo(&c).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, d);
    }

    #[test]
    fn zero_perturbation_matches_baseline() {
        let c = cfg(PhiKind::Parabolic, 200);
        let base = run_monte_carlo(&c).unwrap();
        for p in [
            Perturbation::MergeNoise { magnitude: 0.0 },
            Perturbation::NonlinearGlobal { magnitude: 0.0 },
        ] {
            let mut s = run_violation_study(&c, p).unwrap();
            s.perturbation = None;
            assert_eq!(s, base);
        }
    }

    #[test]
    fn valid_semantics_mode() {
        let mut c = cfg(PhiKind::Tent, 200);
        c.valid_semantics = true;
        let s = run_monte_carlo(&c).unwrap();
        assert_eq!(s.invalid_semantics_trials, 0);
        let mut bad = cfg(PhiKind::SqrtParabolic, 10);
        bad.valid_semantics = true;
        assert_eq!(
            run_monte_carlo(&bad),
            Err(TheoryError::NotSemanticsPreserving)
        );
    }

    #[test]
    fn fixed_alpha_length_checked() {
        let mut c = cfg(PhiKind::Tent, 5);
        c.alpha = AlphaSource::Fixed {
            weights: SplitSpec::uniform(2).unwrap(),
        };
        assert!(matches!(
            run_monte_carlo(&c),
            Err(TheoryError::AlphaLength { .. })
        ));
    }

    #[test]
    fn histogram_covers_all_units() {
        let s = run_monte_carlo(&cfg(PhiKind::Tent, 50)).unwrap();
        assert_eq!(s.histogram.counts.iter().sum::<u64>(), s.units_checked);
        let rows = s.histogram.rows();
        assert_eq!(rows.first().unwrap().0, s.gap_quantiles.min);
        assert_eq!(rows.last().unwrap().1, s.gap_quantiles.max);
    }
}
