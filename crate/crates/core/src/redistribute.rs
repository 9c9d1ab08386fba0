//! Applies trained agents to a dataset and moves detected false positives
//! into the negative universe.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::agent::PolicyAgent;
use crate::corpus::{Bag, Dataset, InstanceId, RelationId, NA};
use crate::featurize::{FeatureStore, SentenceIndex};

/// Suffix of the bag that receives the flagged instances of a partially
/// flagged bag.
pub const NA_BAG_SUFFIX: &str = "::NA";

/// Flags the instance when `p_remove > 0.5` under the agent's end-of-training
/// removed average, or under a zero average when `zero_state` is set.
pub fn classify_instance(agent: &PolicyAgent, sent: &SentenceIndex, zero_state: bool) -> (bool, f64) {
    let p = if zero_state {
        agent.p_remove(sent, &vec![0.0; agent.kernels()])
    } else {
        agent.p_remove(sent, &agent.frozen_avg)
    };
    (p > 0.5, p)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RelationRedistribution {
    pub relation: RelationId,
    pub has_agent: bool,
    pub flagged: Vec<InstanceId>,
    pub flagged_bags: usize,
    pub positive_before: usize,
    pub positive_after: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RedistributionReport {
    pub relations: Vec<RelationRedistribution>,
    pub instances_before: usize,
    pub instances_after: usize,
}

impl RedistributionReport {
    pub fn flagged(&self) -> BTreeSet<InstanceId> {
        self.relations.iter().flat_map(|r| r.flagged.iter().copied()).collect()
    }

    pub fn to_csv(&self, relation_names: &[String]) -> String {
        let mut out = String::from("relation,flagged_instances,flagged_bags,positive_before,positive_after\n");
        for r in &self.relations {
            writeln!(out, "{},{},{},{},{}", relation_names[r.relation], r.flagged.len(), r.flagged_bags, r.positive_before, r.positive_after).unwrap();
        }
        out
    }
}

/// Relabels every flagged instance NA. A bag whose instances are all flagged
/// becomes an NA bag; otherwise its flagged instances move to a sibling NA bag
/// named `<bag_id>::NA`. Instance ids and order are unchanged.
pub fn redistribute(
    dataset: &Dataset,
    store: &FeatureStore,
    agents: &BTreeMap<RelationId, PolicyAgent>,
    zero_state: bool,
) -> (Dataset, RedistributionReport) {
    let relations: Vec<RelationId> = (1..dataset.relations.len()).collect();
    let flags: Vec<BTreeSet<InstanceId>> = relations
        .par_iter()
        .map(|r| match agents.get(r) {
            Some(agent) => dataset
                .positives(*r)
                .into_iter()
                .filter(|&id| classify_instance(agent, store.get(id), zero_state).0)
                .collect(),
            None => BTreeSet::new(),
        })
        .collect();
    let flagged: BTreeSet<InstanceId> = flags.iter().flatten().copied().collect();

    let mut out = dataset.clone();
    let mut flagged_bags: BTreeMap<RelationId, usize> = BTreeMap::new();
    for bag in dataset.bags.values() {
        if bag.relation == NA {
            continue;
        }
        let moved: Vec<InstanceId> = bag.instance_ids.iter().copied().filter(|id| flagged.contains(id)).collect();
        if moved.is_empty() {
            continue;
        }
        for &id in &moved {
            out.instances[id as usize].relation = NA;
        }
        if moved.len() == bag.instance_ids.len() {
            *flagged_bags.entry(bag.relation).or_default() += 1;
            out.bags.get_mut(&bag.bag_id).expect("bag exists").relation = NA;
            continue;
        }
        let na_id = format!("{}{NA_BAG_SUFFIX}", bag.bag_id);
        out.bags.get_mut(&bag.bag_id).expect("bag exists").instance_ids.retain(|id| !flagged.contains(id));
        let na_bag = out.bags.entry(na_id.clone()).or_insert_with(|| Bag {
            bag_id: na_id.clone(),
            head_entity: bag.head_entity.clone(),
            tail_entity: bag.tail_entity.clone(),
            relation: NA,
            instance_ids: Vec::new(),
        });
        na_bag.instance_ids.extend(&moved);
        na_bag.instance_ids.sort_unstable();
        for &id in &moved {
            out.instances[id as usize].bag_id = na_id.clone();
        }
    }

    let report = RedistributionReport {
        relations: relations
            .iter()
            .zip(flags)
            .map(|(&r, f)| RelationRedistribution {
                relation: r,
                has_agent: agents.contains_key(&r),
                positive_before: dataset.positives(r).len(),
                positive_after: dataset.positives(r).len() - f.len(),
                flagged_bags: flagged_bags.get(&r).copied().unwrap_or(0),
                flagged: f.into_iter().collect(),
            })
            .collect(),
        instances_before: dataset.instances.len(),
        instances_after: out.instances.len(),
    };
    for r in report.relations.iter().filter(|r| !r.has_agent && r.positive_before > 0) {
        log::warn!("relation {} has no agent; its positives pass through unchanged", dataset.relations[r.relation]);
    }
    (out, report)
}
