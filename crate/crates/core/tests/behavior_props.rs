use opportune::behavior::{InteractionProbability, KindFrequency, NodeProbabilities, ThinkTimeModel};
use opportune::dag::{NodeId, OperatorDag};
use opportune::dsl::{lower_to_dag, parse_cell};
use opportune::sim::{generate_random_trace, GenOptions};
use proptest::prelude::*;

/// Position of `v` among sorted samples, as a fractional rank.
fn rank_bounds(sorted: &[f64], v: f64) -> (usize, usize) {
    let below = sorted.iter().filter(|s| **s < v).count();
    let at_or_below = sorted.iter().filter(|s| **s <= v).count();
    (below, at_or_below)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn quantiles_sit_within_one_sample_of_their_rank(
        prior in proptest::collection::vec(0.0f64..600.0, 1..60),
        observed in proptest::collection::vec(0.0f64..600.0, 0..60),
        capacity in 1usize..40,
        q in 0.0f64..=1.0,
    ) {
        let mut m = ThinkTimeModel::new(prior.clone(), capacity);
        for o in &observed {
            m.observe(*o).unwrap();
        }
        prop_assert!(m.observation_count() <= capacity);
        let kept = &observed[observed.len().saturating_sub(capacity)..];
        let mut all: Vec<f64> = prior.iter().chain(kept).copied().collect();
        all.sort_by(f64::total_cmp);
        prop_assert_eq!(m.sample_count(), all.len());
        let v = m.quantile(q);
        let target = q * (all.len() - 1) as f64;
        let (below, at_or_below) = rank_bounds(&all, v);
        // v lies between the order statistics around the target rank
        prop_assert!(below as f64 <= target.ceil() + 1e-9);
        prop_assert!(at_or_below as f64 >= target.floor() + 1.0 - 1e-9);
        prop_assert!(v >= all[0] && v <= all[all.len() - 1]);
    }

    #[test]
    fn quantiles_are_monotone(prior in proptest::collection::vec(0.0f64..600.0, 1..60), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let m = ThinkTimeModel::new(prior, 8);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(m.quantile(lo) <= m.quantile(hi));
    }

    #[test]
    fn explicit_probabilities_are_clamped(values in proptest::collection::vec(prop_oneof![any::<f64>(), -2.0f64..2.0], 1..10)) {
        let mut p = NodeProbabilities::new(values[0]);
        for (i, v) in values.iter().enumerate() {
            p.set(NodeId(i as u32), *v);
        }
        let dag = OperatorDag::new();
        for i in 0..values.len() + 1 {
            let x = p.probability(&dag, NodeId(i as u32));
            prop_assert!((0.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn kind_frequencies_are_probabilities(seeds in proptest::collection::vec(any::<u64>(), 1..6)) {
        let think = ThinkTimeModel::with_default_prior();
        let dags: Vec<OperatorDag> = seeds
            .iter()
            .map(|s| {
                let mut dag = OperatorDag::new();
                for ev in generate_random_trace(*s, &GenOptions::default(), &think).events {
                    lower_to_dag(&parse_cell(&ev.cell).unwrap(), &mut dag).unwrap();
                }
                dag
            })
            .collect();
        let f = KindFrequency::from_sessions(&dags);
        for dag in &dags {
            for id in dag.live_ids() {
                let x = f.probability(dag, id);
                prop_assert!((0.0..=1.0).contains(&x));
            }
        }
    }
}

#[test]
fn negative_think_times_are_rejected() {
    let mut m = ThinkTimeModel::with_default_prior();
    assert!(m.observe(-1.0).is_err());
    assert!(m.observe(f64::NAN).is_err());
    assert_eq!(m.observation_count(), 0);
}
