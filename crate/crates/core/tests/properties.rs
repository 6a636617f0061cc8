use poca_core::info::{
    entropy, kl_divergence, mutual_information, DiscreteDistribution, Divergence, JointDistribution,
};
use poca_core::semantic::SemanticPoint;
use poca_core::theory::{
    jensen_gap, run_trial, ConcaveErrorModel, MonteCarloConfig, PhiKind, SignPolicy, SplitSpec,
};
use proptest::prelude::*;

fn weights(k: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, k)
        .prop_filter("nonzero mass", |w| w.iter().sum::<f64>() > 1e-3)
}

fn normalized(w: &[f64]) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

fn phi_kind() -> impl Strategy<Value = PhiKind> {
    prop::sample::select(PhiKind::ALL.to_vec())
}

proptest! {
    #[test]
    fn entropy_is_bounded_by_log_support(w in weights(1..=8)) {
        let p = normalized(&w);
        let h = entropy(&DiscreteDistribution::new(p.clone()).unwrap());
        prop_assert!(h >= 0.0);
        prop_assert!(h <= (p.len() as f64).log2() + 1e-12);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_self(a in weights(2..=6), b in weights(2..=6)) {
        let k = a.len().min(b.len());
        let p = DiscreteDistribution::new(normalized(&a[..k].iter().map(|x| x + 0.01).collect::<Vec<_>>())).unwrap();
        let q = DiscreteDistribution::new(normalized(&b[..k].iter().map(|x| x + 0.01).collect::<Vec<_>>())).unwrap();
        match kl_divergence(&p, &q).unwrap() {
            Divergence::Finite(v) => prop_assert!(v >= -1e-12),
            Divergence::Infinite => prop_assert!(false, "full support cannot diverge"),
        }
        prop_assert!(kl_divergence(&p, &p).unwrap().as_f64().abs() < 1e-12);
    }

    #[test]
    fn mutual_information_is_symmetric_and_bounded(rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let cells: Vec<f64> = (0..rows * cols).map(|_| rng.random::<f64>() + 1e-3).collect();
        let j = JointDistribution::from_flat(rows, cols, normalized(&cells)).unwrap();
        let mi = mutual_information(&j);
        prop_assert!(mi >= -1e-12);
        prop_assert!((mi - mutual_information(&j.transpose())).abs() < 1e-12);
        let ha = entropy(&DiscreteDistribution::new(j.marginal_a()).unwrap());
        let hb = entropy(&DiscreteDistribution::new(j.marginal_b()).unwrap());
        prop_assert!(mi <= ha.min(hb) + 1e-12);
    }

    #[test]
    fn independence_has_zero_information(a in weights(1..=5), b in weights(1..=5)) {
        let pa = DiscreteDistribution::new(normalized(&a)).unwrap();
        let pb = DiscreteDistribution::new(normalized(&b)).unwrap();
        prop_assert!(mutual_information(&JointDistribution::product(&pa, &pb).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn jensen_gap_is_nonnegative(kind in phi_kind(), scale in 0.05f64..3.0,
                                 xs in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 5), 2..=6),
                                 a in weights(6..=6)) {
        let m = xs.len();
        let model = ConcaveErrorModel::new(kind, scale).unwrap();
        let spec = SplitSpec::new(normalized(&a[..m])).unwrap();
        let locals: Vec<SemanticPoint> = xs.into_iter().map(|v| SemanticPoint::new(v).unwrap()).collect();
        for g in jensen_gap(&locals, &spec, &model).unwrap() {
            prop_assert!(g >= -1e-9, "gap {g}");
        }
    }

    #[test]
    fn merge_never_increases_error_for_any_sign_policy(kind in phi_kind(), seed in any::<u64>(), trial in 0u64..1000,
                                                      policy in 0usize..4) {
        let model = ConcaveErrorModel::new(kind, 1.0).unwrap();
        let mut cfg = MonteCarloConfig::new(8, 4, 1000, seed, model);
        cfg.sign = [
            SignPolicy::AllNegative,
            SignPolicy::AllPositive,
            SignPolicy::Alternating,
            SignPolicy::SeededRandom { seed },
        ][policy];
        let r = run_trial(&cfg, trial).unwrap();
        for g in &r.per_unit_gap {
            prop_assert!(*g >= -1e-9);
        }
        for (gap, bound) in r.per_unit_gap.iter().zip(&r.per_unit_lower_bound) {
            prop_assert!(gap - bound >= -1e-9);
        }
    }

    #[test]
    fn trials_are_pure_functions_of_their_index(seed in any::<u64>(), trial in 0u64..10_000) {
        let model = ConcaveErrorModel::new(PhiKind::Tent, 0.8).unwrap();
        let cfg = MonteCarloConfig::new(6, 3, 10_000, seed, model);
        prop_assert_eq!(run_trial(&cfg, trial).unwrap(), run_trial(&cfg, trial).unwrap());
    }
}
