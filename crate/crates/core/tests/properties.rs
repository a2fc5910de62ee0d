use std::sync::Arc;

use proptest::prelude::*;

use envaware_core::envsim::{generate_synthetic_task, SceneStream, SyntheticTaskSpec, TaskDataset};
use envaware_core::episode::run_simulated;
use envaware_core::features::{
    budget_consumption, class_likelihoods, classifier_discriminability, instance_variation, non_query_time,
    prediction_margin, remaining_time_usage,
};
use envaware_core::gp::{fit, GpBackend};
use envaware_core::strategies::argmax_action;
use envaware_core::{ActionKind, EpisodeConfig, Polarity, Strategy as Policy, StrategyId, NUM_FEATURES};

fn posteriors() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..6, 1usize..10).prop_flat_map(|(k, n)| prop::collection::vec(prop::collection::vec(0.001f64..0.999, k), n))
}

fn unit(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

fn small_task(seed: u64) -> Arc<TaskDataset> {
    Arc::new(generate_synthetic_task(&SyntheticTaskSpec::new(3, 6, 2, 2, 8, seed)).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scene_features_stay_in_unit_interval(post in posteriors()) {
        prop_assert!(unit(classifier_discriminability(&post)));
        prop_assert!(unit(instance_variation(&class_likelihoods(&post))));
        prop_assert!(unit(prediction_margin(&post).unwrap()));
    }

    #[test]
    fn counters_stay_in_unit_interval(spent in 0u32..100, total in 0u32..100, turn in 0u32..200, window in 0u32..20) {
        prop_assert!(unit(budget_consumption(spent.min(total), total)));
        prop_assert!(unit(remaining_time_usage(turn, total)));
        prop_assert!(unit(non_query_time(&[], window)));
    }

    #[test]
    fn scene_features_ignore_instance_order(post in posteriors(), shift in 0usize..10) {
        let mut rotated = post.clone();
        let n = rotated.len();
        rotated.rotate_left(shift % n);
        rotated.reverse();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        prop_assert!(close(classifier_discriminability(&post), classifier_discriminability(&rotated)));
        prop_assert!(close(
            instance_variation(&class_likelihoods(&post)),
            instance_variation(&class_likelihoods(&rotated))
        ));
        prop_assert!(close(prediction_margin(&post).unwrap(), prediction_margin(&rotated).unwrap()));
    }

    #[test]
    fn argmax_ignores_positive_rescaling(
        utilities in prop::collection::vec(-5.0f64..5.0, 2..8),
        weights in prop::array::uniform7(-1.0f64..1.0),
        scale in 0.01f64..100.0,
    ) {
        let scored: Vec<(ActionKind, f64)> = utilities
            .iter()
            .enumerate()
            .map(|(i, &u)| (if i == 0 { ActionKind::NoQuery } else { ActionKind::LabelQuery(i as u64) }, u))
            .collect();
        let scaled: Vec<(ActionKind, f64)> = scored.iter().map(|&(a, u)| (a, u * scale)).collect();
        let mut w2 = [0.0; NUM_FEATURES];
        for (d, s) in w2.iter_mut().zip(weights) {
            *d = s * scale;
        }
        prop_assert_eq!(argmax_action(&scored, &weights), argmax_action(&scaled, &w2));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn subset_fit_matches_projected_fit(
        rows in prop::collection::vec((prop::array::uniform4(-2.0f64..2.0), any::<bool>()), 4..12),
        probe in prop::array::uniform4(-2.0f64..2.0),
    ) {
        prop_assume!(rows.iter().any(|r| r.1) && rows.iter().any(|r| !r.1));
        let pol = |b: bool| if b { Polarity::Positive } else { Polarity::Negative };
        let full: Vec<(Vec<f64>, Polarity)> = rows.iter().map(|(x, b)| (x.to_vec(), pol(*b))).collect();
        let projected: Vec<(Vec<f64>, Polarity)> = rows.iter().map(|(x, b)| (vec![x[1], x[3]], pol(*b))).collect();
        let backend = GpBackend::default();
        let a = fit(&backend, &full, 4, Some(&[1, 3])).unwrap().predict_proba(&probe).unwrap();
        let b = fit(&backend, &projected, 2, None).unwrap().predict_proba(&[probe[1], probe[3]]).unwrap();
        prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn scenes_hold_for_a_period_and_replay_by_seed(seed in 0u64..1000, period in 1u32..8) {
        let ds = small_task(seed % 5);
        let mut s1 = SceneStream::new(ds.clone(), period, 4, seed).unwrap();
        let mut s2 = SceneStream::new(ds, period, 4, seed).unwrap();
        for turn in 1..=3 * period {
            let a = s1.next_scene(turn).unwrap();
            let b = s2.next_scene(turn).unwrap();
            prop_assert_eq!(&a, &b);
            let start = s1.scene_index(turn) * period + 1;
            if turn > start {
                let mut fresh = SceneStream::new(small_task(seed % 5), period, 4, seed).unwrap();
                prop_assert_eq!(fresh.next_scene(start).unwrap().instances, a.instances);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn episodes_respect_budget_and_replay(
        budget in 1u32..12,
        time in 1u32..25,
        period in 1u32..8,
        strategy in 0usize..4,
        seed in 0u64..1000,
    ) {
        let ds = small_task(seed % 3);
        let cfg = EpisodeConfig::new(budget, time, period, StrategyId::ALL[strategy], seed);
        let strat = Policy::baseline(StrategyId::ALL[strategy]);
        let t = run_simulated(ds.clone(), &cfg, &strat).unwrap();
        prop_assert_eq!(t.steps.len() as u32, time);
        let mut cum = 0;
        for s in &t.steps {
            cum += s.cost;
            prop_assert_eq!(s.cum_cost, cum);
            prop_assert!(cum <= budget);
        }
        let again = run_simulated(ds, &cfg, &strat).unwrap();
        prop_assert_eq!(t, again);
    }
}
