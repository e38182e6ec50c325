//! Budgeted store of materialized results.
//!
//! Reuse probability `p = 1 / (T + 1 - t)`, eviction score `O = p * m / k`
//! with `m` the estimated size and `k` the recomputation cost against the
//! rest of the cache. GC runs when usage exceeds the threshold fraction of
//! the budget and discards the lowest score first.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::cost::{CostModel, RowStats};
use crate::dag::{DagError, NodeId, OperatorDag};
use crate::engine::Value;
use crate::time::VDuration;

pub const DEFAULT_GC_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CacheError {
    #[error("node {0} is not cached")]
    NotCached(NodeId),
    #[error("result of node {node} needs {size} bytes, more than the whole budget of {budget}")]
    UncacheableResult { node: NodeId, size: u64, budget: u64 },
    #[error("caching node {node} needs {needed} bytes but pinned entries leave only {available} of {budget}")]
    BudgetExhausted {
        node: NodeId,
        needed: u64,
        available: u64,
        budget: u64,
    },
    #[error(transparent)]
    Dag(#[from] DagError),
}

#[derive(Debug, Clone)]
pub struct CacheEntry {
    pub node: NodeId,
    pub value: Value,
    /// m_i
    pub size: u64,
    /// t_i
    pub last_reuse: u64,
    /// k_i as of the last GC that looked at this entry.
    pub recompute: Option<VDuration>,
}

/// One eviction decision.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Eviction {
    pub node: NodeId,
    pub size: u64,
    pub reuse_probability: f64,
    pub recompute_us: VDuration,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct CacheStore {
    entries: BTreeMap<NodeId, CacheEntry>,
    counter: u64,
    budget: u64,
    threshold: f64,
    evict_highest: bool,
    used: u64,
}

/// `p * m / k` with `k` in seconds; a free recomputation scores infinity.
pub fn score(p: f64, size: u64, recompute: VDuration) -> f64 {
    if recompute.is_zero() {
        f64::INFINITY
    } else {
        p * size as f64 / recompute.as_secs_f64()
    }
}

impl CacheStore {
    pub fn new(budget: u64, threshold: f64) -> Self {
        CacheStore {
            entries: BTreeMap::new(),
            counter: 0,
            budget,
            threshold: if threshold > 0.0 && threshold <= 1.0 {
                threshold
            } else {
                DEFAULT_GC_THRESHOLD
            },
            evict_highest: false,
            used: 0,
        }
    }

    /// Discard the highest score first instead of the lowest.
    pub fn with_evict_highest(mut self, on: bool) -> Self {
        self.evict_highest = on;
        self
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn used_bytes(&self) -> u64 {
        self.used
    }

    /// T
    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.entries.contains_key(&node)
    }

    pub fn entry(&self, node: NodeId) -> Option<&CacheEntry> {
        self.entries.get(&node)
    }

    pub fn entries(&self) -> impl Iterator<Item = &CacheEntry> {
        self.entries.values()
    }

    /// Looks a value up without counting a reuse.
    pub fn peek(&self, node: NodeId) -> Option<&Value> {
        self.entries.get(&node).map(|e| &e.value)
    }

    /// Records a reuse: `T += 1; t_i = T`.
    pub fn touch(&mut self, node: NodeId) -> Result<(), CacheError> {
        let e = self.entries.get_mut(&node).ok_or(CacheError::NotCached(node))?;
        self.counter += 1;
        e.last_reuse = self.counter;
        Ok(())
    }

    /// Returns the value and records the reuse.
    pub fn reuse(&mut self, node: NodeId) -> Result<Value, CacheError> {
        self.touch(node)?;
        Ok(self.entries[&node].value.clone())
    }

    pub fn reuse_probability(&self, node: NodeId) -> Result<f64, CacheError> {
        let e = self.entries.get(&node).ok_or(CacheError::NotCached(node))?;
        Ok(1.0 / (self.counter + 1 - e.last_reuse) as f64)
    }

    /// k_i against the current residual cache.
    pub fn recompute_cost(
        &self,
        node: NodeId,
        dag: &OperatorDag,
        model: &CostModel,
        stats: &dyn RowStats,
    ) -> Result<VDuration, CacheError> {
        if !self.contains(node) {
            return Err(CacheError::NotCached(node));
        }
        Ok(model.recompute_cost(node, dag, &|id| self.contains(id), stats)?)
    }

    pub fn eviction_score(
        &self,
        node: NodeId,
        dag: &OperatorDag,
        model: &CostModel,
        stats: &dyn RowStats,
    ) -> Result<f64, CacheError> {
        let p = self.reuse_probability(node)?;
        let k = self.recompute_cost(node, dag, model, stats)?;
        Ok(score(p, self.entries[&node].size, k))
    }

    fn gc_limit(&self) -> f64 {
        self.threshold * self.budget as f64
    }

    /// Inserts with `t_i = T`, then evicts by score until usage is back under
    /// the threshold. The new entry and `pinned` entries are never evicted.
    /// Fails without changing anything if the result cannot fit.
    pub fn insert_with_gc(
        &mut self,
        node: NodeId,
        value: Value,
        dag: &OperatorDag,
        model: &CostModel,
        stats: &dyn RowStats,
        pinned: &BTreeSet<NodeId>,
    ) -> Result<Vec<Eviction>, CacheError> {
        let size = value.estimated_bytes();
        if size > self.budget {
            return Err(CacheError::UncacheableResult {
                node,
                size,
                budget: self.budget,
            });
        }
        let replaced = self.entries.get(&node).map(|e| e.size).unwrap_or(0);
        let stuck: u64 = self
            .entries
            .values()
            .filter(|e| e.node != node && pinned.contains(&e.node))
            .map(|e| e.size)
            .sum();
        if stuck + size > self.budget {
            return Err(CacheError::BudgetExhausted {
                node,
                needed: size,
                available: self.budget - stuck.min(self.budget),
                budget: self.budget,
            });
        }
        self.used = self.used - replaced + size;
        self.entries.insert(
            node,
            CacheEntry {
                node,
                value,
                size,
                last_reuse: self.counter,
                recompute: None,
            },
        );
        let mut evicted = Vec::new();
        while self.used as f64 > self.gc_limit() {
            let mut scored = Vec::new();
            for e in self.entries.values() {
                if e.node == node || pinned.contains(&e.node) {
                    continue;
                }
                let p = self.reuse_probability(e.node)?;
                let k = self.recompute_cost(e.node, dag, model, stats)?;
                scored.push((score(p, e.size, k), e.node, p, k));
            }
            for (_, id, _, k) in &scored {
                self.entries.get_mut(id).expect("scored entry").recompute = Some(*k);
            }
            // ids ascend, so keeping the first of equal scores breaks ties by id
            let mut best: Option<&(f64, NodeId, f64, VDuration)> = None;
            for cand in &scored {
                let better = match best {
                    None => true,
                    Some(b) if self.evict_highest => cand.0 > b.0,
                    Some(b) => cand.0 < b.0,
                };
                if better {
                    best = Some(cand);
                }
            }
            let Some(&(o, victim, p, k)) = best else { break };
            let e = self.entries.remove(&victim).expect("candidate is cached");
            self.used -= e.size;
            evicted.push(Eviction {
                node: victim,
                size: e.size,
                reuse_probability: p,
                recompute_us: k,
                score: o,
            });
        }
        Ok(evicted)
    }

    /// Drops an entry outright (no GC accounting beyond usage).
    pub fn remove(&mut self, node: NodeId) -> Option<CacheEntry> {
        let e = self.entries.remove(&node)?;
        self.used -= e.size;
        Some(e)
    }

    /// Refreshes every entry's k_i, for inspection.
    pub fn refresh_recompute_costs(&mut self, dag: &OperatorDag, model: &CostModel, stats: &dyn RowStats) {
        let ks: Vec<(NodeId, Option<VDuration>)> = self
            .entries
            .keys()
            .map(|id| (*id, self.recompute_cost(*id, dag, model, stats).ok()))
            .collect();
        for (id, k) in ks {
            if let Some(e) = self.entries.get_mut(&id) {
                e.recompute = k;
            }
        }
    }
}
