mod common;

use opportune::behavior::ThinkTimeModel;
use opportune::engine::Catalog;
use opportune::engine::{partition_rows, plan_with_quantiles, PartitionRun, SyntheticSpec, Value};
use opportune::sim::new_session;
use opportune::sim::SimConfig;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn plans_tile_the_input_with_k_row_ends(
        rows in 0usize..50_000,
        k in 1usize..50,
        est in 0.0f64..100.0,
        quartiles in proptest::collection::vec(0.0f64..60.0, 0..4),
    ) {
        let plan = plan_with_quantiles(rows, k, est, &quartiles);
        prop_assert!(plan.covers(rows));
        if rows > 0 {
            prop_assert_eq!(plan.ranges[0].len(), k.min(rows));
        }
        if rows >= 2 * k {
            prop_assert_eq!(plan.ranges.last().unwrap().len(), k);
        }
    }

    #[test]
    fn partitioned_and_resumed_runs_match_whole_evaluation(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let uri = random_uri(&mut rng, 3_000);
        let table = SyntheticSpec::parse(&uri).unwrap().generate();
        let template = PARTITION_CELLS[rng.random_range(0..PARTITION_CELLS.len())];
        let cell = format!("t = read_csv('t.csv')\n{}", fill_template(&mut rng, template));
        let dag = lower(&cell);
        let values = eval_all(&dag, &table);
        let target = dag.all_nodes().last().unwrap();
        let inputs: Result<Vec<Value>, String> = target.deps.iter().map(|d| values[d.index()].clone()).collect();
        let Ok(inputs) = inputs else { return Ok(()) };
        let rows = partition_rows(target.kind, &inputs);
        let plan = random_plan(&mut rng, rows);
        prop_assert!(plan.covers(rows));
        let run = PartitionRun::new(target.id, target.kind, target.args.clone(), inputs, plan);
        match (&values[target.id.index()], run_with_preemptions(&mut rng, run)) {
            (Ok(want), Ok((got, _))) => prop_assert!(same_value(want, &got), "`{}` differs", cell),
            (Err(w), Err(g)) => prop_assert!(g.ends_with(w.as_str()), "{} vs {}", w, g),
            (w, g) => prop_assert!(false, "`{}`: {:?} vs {:?}", cell, w, g),
        }
    }

    #[test]
    fn fast_path_head_and_tail_are_exact(
        seed in any::<u64>(),
        rows in 0usize..5_000,
        column in 0usize..5,
        threshold in -100i32..100,
        tail in any::<bool>(),
        k in 1usize..15,
    ) {
        let uri = format!("synthetic:random?rows={rows}&seed={seed}&name=t.csv");
        let cell = format!(
            "t[t['c{column}'] > {threshold}].fillna(0).{}({k})",
            if tail { "tail" } else { "head" }
        );
        let mut catalog = Catalog::new();
        catalog.register_uri(&uri).unwrap();
        let table = catalog.resolve("t.csv").unwrap();
        let mut s = new_session(&SimConfig::default(), catalog, ThinkTimeModel::with_default_prior());
        s.submit_cell("t = read_csv('t.csv')").unwrap();
        let ids = s.submit_cell(&cell).unwrap();
        let o = s.run_interaction(ids[0]).unwrap();
        prop_assert!(o.fast_path || rows == 0);
        let want = eval_all(&lower(&format!("t = read_csv('t.csv')\n{cell}")), &table).pop().unwrap().unwrap();
        prop_assert!(same_value(&want, o.result.as_ref().unwrap()));
    }
}
