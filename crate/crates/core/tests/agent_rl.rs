mod common;

use common::structural_violations;
use dsdenoise::agent::{budget_from_count, make_state, update_avg, PolicyAgent, RemovedAverage};
use dsdenoise::config::RunConfig;
use dsdenoise::corpus::{generate_synthetic, SyntheticConfig};
use dsdenoise::featurize::{EmbeddingDims, EmbeddingTable, FeatureStore};
use dsdenoise::pipeline::{pretrain_relation, train_relation, Prepared};
use dsdenoise::rltrain::run_removal_pass;
use dsdenoise::seeds::{derive, seeded_rng};
use proptest::prelude::*;

fn small_config(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        n_relations: 2,
        instances_per_relation: 90,
        na_instances: 900,
        kernels: 8,
        word_dim: 10,
        rl_epochs: 6,
        classifier_epochs: 3,
        pretrain_max_epochs: 4,
        ..RunConfig::default()
    }
}

proptest! {
    #[test]
    fn running_average_is_the_batch_mean(rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..20)) {
        let mut avg = RemovedAverage::zeros(4);
        for r in &rows {
            avg = update_avg(&avg, r);
        }
        prop_assert_eq!(avg.count, rows.len());
        for k in 0..4 {
            let want = rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64;
            prop_assert!((avg.mean[k] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn state_is_scaled_feature_then_average(f in prop::collection::vec(-3.0f64..3.0, 5), lambda in 0.1f64..4.0) {
        let mut avg = RemovedAverage::zeros(5);
        avg.push(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let s = make_state(&f, &avg, lambda);
        prop_assert_eq!(s.len(), 10);
        for k in 0..5 {
            prop_assert!((s[k] - lambda * f[k]).abs() < 1e-15);
            prop_assert_eq!(s[5 + k], avg.mean[k]);
        }
    }

    #[test]
    fn budget_is_clamped_and_scaled(flagged in 0usize..500, n_train in 1usize..400, n_valid in 1usize..200) {
        let b = budget_from_count(flagged, n_train, n_valid);
        prop_assert!(b.gamma_t >= 1 && b.gamma_t <= (n_train / 2).max(1));
        if flagged >= 1 && flagged <= n_train / 2 {
            prop_assert_eq!(b.gamma_t, flagged);
        }
        prop_assert!(b.gamma_v >= 1);
        prop_assert_eq!(b.flagged, flagged);
    }

    #[test]
    fn removal_pass_respects_budget(seed in any::<u64>(), budget in 0usize..40) {
        let cfg = SyntheticConfig { n_relations: 1, instances_per_relation: 40, na_instances: 10, seed, ..Default::default() };
        let (ds, _) = generate_synthetic(&cfg).unwrap();
        let store = FeatureStore::build(&ds.instances, ds.vocab.len(), 30).unwrap();
        let dims = EmbeddingDims { word: 4, position: 2 };
        let agent = PolicyAgent::new(1, EmbeddingTable::random(ds.vocab.len(), dims, seed), 3, 4, 30, 2.0, seed ^ 1);
        let positives = ds.positives(1);
        let pass = run_removal_pass(&agent, &store, &positives, budget, &mut seeded_rng(seed));
        prop_assert_eq!(pass.removed.len(), budget.min(pass.candidates.len()));
        prop_assert_eq!(pass.final_avg.count, pass.candidates.len());
        prop_assert!(pass.removed.iter().all(|id| positives.contains(id)));
        prop_assert!(pass.candidates.windows(2).all(|w| w[0].1 >= w[1].1));
        prop_assert_eq!(pass.states.len(), pass.removed.len());
        for (i, id) in pass.removed.iter().enumerate() {
            prop_assert_eq!(pass.candidates[i].0, *id);
            prop_assert_eq!(pass.states[id].len(), 8);
        }
    }
}

#[test]
fn training_loop_keeps_its_structure() {
    let cfg = small_config(11);
    let (ds, _) = generate_synthetic(&cfg.synthetic(derive(cfg.seed, "corpus"))).unwrap();
    let emb = EmbeddingTable::random(ds.vocab.len(), cfg.dims(), derive(cfg.seed, "embeddings"));
    let prep = Prepared::new(ds, emb, cfg.l_max).unwrap();
    for r in 1..=2 {
        let pre = pretrain_relation(&prep, r, &cfg).unwrap();
        let out = train_relation(&prep, &pre, &cfg).unwrap();
        assert_eq!(out.logs.len(), cfg.rl_epochs);
        let v = structural_violations(&out, &pre.sets, pre.budget, cfg.alpha, cfg.f1_window);
        assert!(v.is_empty(), "relation {r}: {v:?}");
        // Same seed, same run.
        let again = train_relation(&prep, &pre, &cfg).unwrap();
        assert_eq!(again.logs, out.logs);
    }
}
