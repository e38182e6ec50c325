mod common;

use std::collections::BTreeSet;

use opportune::behavior::ThinkTimeModel;
use opportune::cache::{CacheError, CacheStore};
use opportune::cost::{CostModel, NoStats};
use opportune::dag::NodeId;
use opportune::sim::{compare_modes, generate_random_trace, GenOptions, SimConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn usage_stays_within_budget_even_with_pins(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = random_dag(&mut rng, 10);
        let n = r.cost_us.len();
        let budget = rng.random_range(500..20_000u64);
        let mut cache = CacheStore::new(budget, rng.random_range(0.3..=1.0));
        let cost = CostModel::default();
        for _ in 0..40 {
            let pinned: BTreeSet<NodeId> = (0..n).filter(|_| rng.random_bool(0.2)).map(|i| NodeId(i as u32)).collect();
            let id = NodeId(rng.random_range(0..n) as u32);
            let used = cache.used_bytes();
            let len = cache.len();
            match cache.insert_with_gc(id, column_value(rng.random_range(1..1_000)), &r.dag, &cost, &NoStats, &pinned) {
                Ok(evicted) => {
                    prop_assert!(cache.contains(id));
                    for e in evicted {
                        prop_assert!(!pinned.contains(&e.node) && e.node != id);
                    }
                }
                Err(CacheError::UncacheableResult { .. } | CacheError::BudgetExhausted { .. }) => {
                    prop_assert_eq!(cache.used_bytes(), used);
                    prop_assert_eq!(cache.len(), len);
                }
                Err(e) => prop_assert!(false, "{}", e),
            }
            prop_assert!(cache.used_bytes() <= budget);
            let sum: u64 = cache.entries().map(|e| e.size).sum();
            prop_assert_eq!(sum, cache.used_bytes());
        }
    }

    #[test]
    fn reuse_probability_falls_with_age(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = random_dag(&mut rng, 10);
        let n = r.cost_us.len();
        let mut cache = CacheStore::new(u64::MAX / 2, 1.0);
        let cost = CostModel::default();
        for _ in 0..30 {
            let id = NodeId(rng.random_range(0..n) as u32);
            if cache.contains(id) && rng.random_bool(0.5) {
                cache.touch(id).unwrap();
            } else {
                cache.insert_with_gc(id, column_value(4), &r.dag, &cost, &NoStats, &BTreeSet::new()).unwrap();
            }
        }
        let t = cache.counter();
        let mut by_age: Vec<(u64, f64)> =
            cache.entries().map(|e| (t - e.last_reuse, cache.reuse_probability(e.node).unwrap())).collect();
        by_age.sort_by_key(|a| a.0);
        for (age, p) in &by_age {
            prop_assert_eq!(*p == 1.0, *age == 0);
            prop_assert!(*p > 0.0 && *p <= 1.0);
        }
        for w in by_age.windows(2) {
            if w[0].0 < w[1].0 {
                prop_assert!(w[0].1 > w[1].1);
            } else {
                prop_assert_eq!(w[0].1, w[1].1);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn results_do_not_depend_on_what_was_evicted(seed in any::<u64>(), evict_highest in any::<bool>()) {
        let think = ThinkTimeModel::with_default_prior();
        let opts = GenOptions { rows: 5_000, ..GenOptions::default() };
        let trace = generate_random_trace(seed, &opts, &think);
        let config = SimConfig { budget_bytes: 1_500_000, evict_highest, ..SimConfig::default() };
        let c = compare_modes(&trace, &config, &think);
        prop_assert!(c.is_ok(), "{}", c.unwrap_err());
    }
}

#[test]
fn small_budgets_do_evict_and_stay_transparent() {
    let think = ThinkTimeModel::with_default_prior();
    let opts = GenOptions {
        rows: 5_000,
        ..GenOptions::default()
    };
    let config = SimConfig {
        budget_bytes: 1_000_000,
        ..SimConfig::default()
    };
    let mut evictions = 0;
    for seed in 1..=5 {
        let c = compare_modes(&generate_random_trace(seed, &opts, &think), &config, &think).unwrap();
        evictions += c.opportunistic.totals.evictions;
    }
    assert!(evictions > 0);
}
