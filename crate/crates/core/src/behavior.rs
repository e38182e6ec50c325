//! Think-time model and interaction-probability providers.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::dag::{NodeId, OperatorDag};
use crate::dsl::OpKind;

const DEFAULT_PRIOR: &str = include_str!("../data/think_prior.txt");
pub const DEFAULT_RESERVOIR: usize = 1024;

#[derive(Debug, Error)]
pub enum BehaviorError {
    #[error("think time must be non-negative, got {0}")]
    NegativeDuration(f64),
    #[error("prior file {path}: {message}")]
    Prior { path: String, message: String },
}

/// Empirical think-time distribution: a fixed prior sample set plus a
/// bounded reservoir of observed gaps (oldest evicted first).
#[derive(Debug, Clone)]
pub struct ThinkTimeModel {
    prior: Vec<f64>,
    observed: VecDeque<f64>,
    capacity: usize,
    sorted: Vec<f64>,
}

impl Default for ThinkTimeModel {
    fn default() -> Self {
        Self::with_default_prior()
    }
}

impl ThinkTimeModel {
    pub fn new(prior: Vec<f64>, capacity: usize) -> Self {
        let mut m = ThinkTimeModel {
            prior: prior.into_iter().filter(|v| v.is_finite() && *v >= 0.0).collect(),
            observed: VecDeque::new(),
            capacity: capacity.max(1),
            sorted: vec![],
        };
        m.resort();
        m
    }

    /// Log-normal shaped prior whose 75th percentile is 23 s.
    pub fn with_default_prior() -> Self {
        Self::new(
            parse_samples(DEFAULT_PRIOR).expect("bundled prior parses"),
            DEFAULT_RESERVOIR,
        )
    }

    /// One float (seconds) per line; blank lines and `#` comments ignored.
    pub fn from_prior_file(path: &Path) -> Result<Self, BehaviorError> {
        let err = |message: String| BehaviorError::Prior {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let samples = parse_samples(&text).map_err(err)?;
        if samples.is_empty() {
            return Err(err("no samples".into()));
        }
        Ok(Self::new(samples, DEFAULT_RESERVOIR))
    }

    /// A model with no samples at all reports zero for every quantile.
    pub fn empty() -> Self {
        Self::new(vec![], DEFAULT_RESERVOIR)
    }

    pub fn observe(&mut self, gap_secs: f64) -> Result<(), BehaviorError> {
        if gap_secs.is_nan() || gap_secs < 0.0 {
            return Err(BehaviorError::NegativeDuration(gap_secs));
        }
        if self.observed.len() == self.capacity {
            self.observed.pop_front();
        }
        self.observed.push_back(gap_secs);
        self.resort();
        Ok(())
    }

    fn resort(&mut self) {
        self.sorted = self.prior.iter().chain(&self.observed).copied().collect();
        self.sorted.sort_by(f64::total_cmp);
    }

    pub fn observation_count(&self) -> usize {
        self.observed.len()
    }

    pub fn sample_count(&self) -> usize {
        self.sorted.len()
    }

    /// Linear interpolation between order statistics at `q * (n - 1)`.
    pub fn quantile(&self, q: f64) -> f64 {
        let s = &self.sorted;
        if s.is_empty() {
            return 0.0;
        }
        let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        s[lo] + (s[hi] - s[lo]) * frac
    }

    pub fn p25(&self) -> f64 {
        self.quantile(0.25)
    }

    pub fn p50(&self) -> f64 {
        self.quantile(0.5)
    }

    pub fn p75(&self) -> f64 {
        self.quantile(0.75)
    }

    pub fn quartiles(&self) -> [f64; 3] {
        [self.p25(), self.p50(), self.p75()]
    }

    /// Point prediction: the median.
    pub fn predict(&self) -> f64 {
        self.p50()
    }

    /// Inverse-CDF draw from the current distribution.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.quantile(u)
    }
}

fn parse_samples(text: &str) -> Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| format!("line {}: not a number: {line}", i + 1))?;
        if !v.is_finite() || v < 0.0 {
            return Err(format!("line {}: think time must be finite and >= 0", i + 1));
        }
        out.push(v);
    }
    Ok(out)
}

/// Probability that a node's future children include an interaction.
pub trait InteractionProbability: Send + Sync {
    fn probability(&self, dag: &OperatorDag, node: NodeId) -> f64;
}

/// Every node equally likely: p = 1.
#[derive(Debug, Clone, Copy, Default)]
pub struct Uniform;

impl InteractionProbability for Uniform {
    fn probability(&self, _: &OperatorDag, _: NodeId) -> f64 {
        1.0
    }
}

/// Explicit per-node values; unmapped nodes get the default.
#[derive(Debug, Clone)]
pub struct NodeProbabilities {
    values: BTreeMap<NodeId, f64>,
    default: f64,
}

impl NodeProbabilities {
    pub fn new(default: f64) -> Self {
        NodeProbabilities {
            values: BTreeMap::new(),
            default: clamp01(default),
        }
    }

    pub fn set(&mut self, node: NodeId, p: f64) {
        self.values.insert(node, clamp01(p));
    }
}

impl Default for NodeProbabilities {
    fn default() -> Self {
        Self::new(1.0)
    }
}

impl InteractionProbability for NodeProbabilities {
    fn probability(&self, _: &OperatorDag, node: NodeId) -> f64 {
        self.values.get(&node).copied().unwrap_or(self.default)
    }
}

fn clamp01(p: f64) -> f64 {
    if p.is_nan() {
        0.0
    } else {
        p.clamp(0.0, 1.0)
    }
}

/// Per-kind heuristic: among historical sessions containing an operator of a
/// kind, the fraction in which some such operator fed an interaction.
#[derive(Debug, Clone, Default)]
pub struct KindFrequency {
    by_kind: BTreeMap<OpKind, f64>,
    default: f64,
}

impl KindFrequency {
    pub fn from_sessions<'a>(sessions: impl IntoIterator<Item = &'a OperatorDag>) -> Self {
        let mut present: BTreeMap<OpKind, usize> = BTreeMap::new();
        let mut preceded: BTreeMap<OpKind, usize> = BTreeMap::new();
        for dag in sessions {
            let kinds: BTreeSet<OpKind> = dag.live_nodes().map(|n| n.kind).collect();
            let mut feeding = BTreeSet::new();
            for i in dag.interactions() {
                for a in dag.ancestors(i) {
                    feeding.insert(dag.node(a).expect("ancestor exists").kind);
                }
            }
            for k in kinds {
                *present.entry(k).or_default() += 1;
                if feeding.contains(&k) {
                    *preceded.entry(k).or_default() += 1;
                }
            }
        }
        let by_kind = present
            .into_iter()
            .map(|(k, n)| (k, preceded.get(&k).copied().unwrap_or(0) as f64 / n as f64))
            .collect();
        KindFrequency { by_kind, default: 1.0 }
    }

    pub fn get(&self, kind: OpKind) -> f64 {
        self.by_kind.get(&kind).copied().unwrap_or(self.default)
    }
}

impl InteractionProbability for KindFrequency {
    fn probability(&self, dag: &OperatorDag, node: NodeId) -> f64 {
        match dag.node(node) {
            Ok(n) => clamp01(self.get(n.kind)),
            Err(_) => self.default,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_prior_has_p75_of_23s() {
        let m = ThinkTimeModel::with_default_prior();
        assert_eq!(m.sample_count(), 201);
        assert!((m.p75() - 23.0).abs() < 1e-9);
        assert!(m.p25() <= m.p50() && m.p50() <= m.p75());
        assert_eq!(m.predict(), m.p50());
    }

    #[test]
    fn observations_dominate() {
        let mut m = ThinkTimeModel::with_default_prior();
        for _ in 0..1000 {
            m.observe(10.0).unwrap();
        }
        assert_eq!(m.p50(), 10.0);
    }

    #[test]
    fn median_of_mixture() {
        let mut m = ThinkTimeModel::with_default_prior();
        for _ in 0..341 {
            for v in [10.0, 20.0, 30.0] {
                m.observe(v).unwrap();
            }
        }
        assert_eq!(m.predict(), 20.0);
    }

    #[test]
    fn reservoir_is_bounded() {
        let mut m = ThinkTimeModel::new(vec![], 3);
        for v in [1.0, 2.0, 3.0, 4.0] {
            m.observe(v).unwrap();
        }
        assert_eq!(m.observation_count(), 3);
        assert_eq!(m.quantile(0.0), 2.0);
    }

    #[test]
    fn zero_gap_is_valid_negative_is_not() {
        let mut m = ThinkTimeModel::with_default_prior();
        let before = m.p50();
        m.observe(0.0).unwrap();
        assert!(m.p50() <= before);
        assert!(matches!(m.observe(-1.0), Err(BehaviorError::NegativeDuration(_))));
    }

    #[test]
    fn node_probabilities_clamp() {
        let mut p = NodeProbabilities::default();
        p.set(NodeId(0), 3.0);
        p.set(NodeId(1), -2.0);
        let dag = OperatorDag::new();
        assert_eq!(p.probability(&dag, NodeId(0)), 1.0);
        assert_eq!(p.probability(&dag, NodeId(1)), 0.0);
        assert_eq!(p.probability(&dag, NodeId(2)), 1.0);
        assert_eq!(Uniform.probability(&dag, NodeId(9)), 1.0);
    }
}
