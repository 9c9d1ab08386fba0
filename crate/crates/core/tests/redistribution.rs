mod common;

use std::collections::BTreeMap;

use common::{detector, line, random_dataset};
use dsdenoise::corpus::{parse_dataset, NA};
use dsdenoise::featurize::FeatureStore;
use dsdenoise::redistribute::{redistribute, NA_BAG_SUFFIX};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn conserves_instances_and_is_idempotent(seed in any::<u64>(), n_bags in 1usize..40, p_bad in 0.0f64..1.0) {
        let (ds, bad) = random_dataset(seed, n_bags, p_bad);
        let store = FeatureStore::build(&ds.instances, ds.vocab.len(), 12).unwrap();
        let agents: BTreeMap<_, _> = [(1, detector(&ds))].into_iter().collect();
        let (out, report) = redistribute(&ds, &store, &agents, false);

        prop_assert_eq!(out.instances.len(), ds.instances.len());
        let bag_total: usize = out.bags.values().map(|b| b.instance_ids.len()).sum();
        prop_assert_eq!(bag_total, ds.instances.len());
        prop_assert_eq!(report.flagged(), bad.clone());
        for (before, after) in ds.instances.iter().zip(&out.instances) {
            prop_assert_eq!(before.id, after.id);
            prop_assert_eq!(&before.tokens, &after.tokens);
            let expect = if bad.contains(&before.id) { NA } else { before.relation };
            prop_assert_eq!(after.relation, expect);
        }
        prop_assert_eq!(out.positives(1).len() + bad.len(), ds.positives(1).len());
        prop_assert_eq!(out.negatives().len(), ds.negatives().len() + bad.len());
        prop_assert!(out.validate().is_ok());

        let (again, second) = redistribute(&out, &store, &agents, false);
        prop_assert!(second.flagged().is_empty());
        prop_assert_eq!(&again, &out);
        // The written file reads back to the same dataset.
        prop_assert_eq!(parse_dataset(&out.to_tsv()).unwrap().to_tsv(), out.to_tsv());
    }
}

#[test]
fn bag_becomes_na_iff_all_instances_flagged() {
    let mut cases = 0;
    for size in 1..=5usize {
        for mask in 0u32..(1 << size) {
            let lines: Vec<String> = (0..size).map(|i| line("b", "r1", mask >> i & 1 == 1, i)).collect();
            let ds = parse_dataset(&lines.join("\n")).unwrap();
            let store = FeatureStore::build(&ds.instances, ds.vocab.len(), 12).unwrap();
            let agents: BTreeMap<_, _> = [(1, detector(&ds))].into_iter().collect();
            let (out, report) = redistribute(&ds, &store, &agents, false);
            let flagged = mask.count_ones() as usize;
            assert_eq!(report.flagged().len(), flagged, "size {size} mask {mask:b}");
            let all = flagged == size;
            assert_eq!(out.bags["b"].relation == NA, all, "size {size} mask {mask:b}");
            assert_eq!(report.relations[0].flagged_bags, all as usize);
            let sibling = format!("b{NA_BAG_SUFFIX}");
            assert_eq!(out.bags.contains_key(&sibling), flagged > 0 && !all);
            if !all {
                assert_eq!(out.bags["b"].instance_ids.len(), size - flagged);
            }
            cases += 1;
        }
    }
    assert_eq!(cases, 62);
}

#[test]
fn relations_without_agents_pass_through() {
    let ds = parse_dataset(&[line("a", "r1", true, 0), line("c", "r2", true, 1)].join("\n")).unwrap();
    let store = FeatureStore::build(&ds.instances, ds.vocab.len(), 12).unwrap();
    let agents: BTreeMap<_, _> = [(1, detector(&ds))].into_iter().collect();
    let (out, report) = redistribute(&ds, &store, &agents, false);
    assert_eq!(out.bags["a"].relation, NA);
    assert_eq!(out.bags["c"].relation, 2);
    assert!(!report.relations[1].has_agent);
}
