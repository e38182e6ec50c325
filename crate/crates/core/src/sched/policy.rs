//! Utility-based choice of the next background operator.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::behavior::{InteractionProbability, ThinkTimeModel};
use crate::cost::{CostModel, RowStats};
use crate::dag::{source_operators, DagError, NodeId, OperatorDag};
use crate::dsl::OpKind;
use crate::engine::ExactSum;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("node {0} is not a source operator")]
    NotASource(NodeId),
    #[error("node {0} is not a filter")]
    NotAFilter(NodeId),
    #[error(transparent)]
    Dag(#[from] DagError),
}

/// Everything utility depends on.
pub struct UtilityContext<'a> {
    pub dag: &'a OperatorDag,
    pub cost: &'a CostModel,
    pub stats: &'a dyn RowStats,
    pub available: &'a dyn Fn(NodeId) -> bool,
    pub prob: &'a dyn InteractionProbability,
    /// D_i holds all successors rather than only children.
    pub transitive: bool,
}

impl UtilityContext<'_> {
    /// `{source}` plus its successors (or children).
    pub fn influence_set(&self, source: NodeId) -> BTreeSet<NodeId> {
        let mut d: BTreeSet<NodeId> = if self.transitive {
            self.dag.successors(source)
        } else {
            self.dag.children(source).into_iter().collect()
        };
        d.insert(source);
        d
    }

    /// `U_p(s) = sum over j in D_s of c_j * p_j`, in virtual seconds.
    pub fn utility(&self, source: NodeId) -> Result<f64, PolicyError> {
        if !source_operators(self.dag).contains(&source) {
            return Err(PolicyError::NotASource(source));
        }
        self.utility_unchecked(source)
    }

    fn utility_unchecked(&self, source: NodeId) -> Result<f64, PolicyError> {
        let mut total = ExactSum::new();
        for j in self.influence_set(source) {
            let c = self.cost.delivery_cost(j, self.dag, self.available, self.stats)?;
            let p = self.prob.probability(self.dag, j).clamp(0.0, 1.0);
            total.add(c.as_secs_f64() * p);
        }
        Ok(total.value())
    }

    /// Highest-utility source; ties go to the smallest id.
    pub fn pick_next(&self) -> Option<NodeId> {
        self.pick_among(source_operators(self.dag))
    }

    pub fn pick_among(&self, candidates: impl IntoIterator<Item = NodeId>) -> Option<NodeId> {
        let mut best: Option<(f64, NodeId)> = None;
        let mut ids: Vec<NodeId> = candidates.into_iter().collect();
        ids.sort();
        ids.dedup();
        for id in ids {
            let Ok(u) = self.utility_unchecked(id) else { continue };
            if best.is_none_or(|(bu, _)| u > bu) {
                best = Some((u, id));
            }
        }
        best.map(|(_, id)| id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Speculation {
    Materialize,
    Skip,
}

/// Materialize a filter's input ahead of utility order when the predicted
/// think time exceeds the time to produce it.
pub fn maybe_speculate(
    filter: NodeId,
    ctx: &UtilityContext<'_>,
    think: &ThinkTimeModel,
) -> Result<Speculation, PolicyError> {
    let n = ctx.dag.node(filter)?;
    if n.kind != OpKind::Filter {
        return Err(PolicyError::NotAFilter(filter));
    }
    let input = n.deps[0];
    if (ctx.available)(input) {
        return Ok(Speculation::Skip);
    }
    let est = ctx.cost.delivery_cost(input, ctx.dag, ctx.available, ctx.stats)?;
    Ok(if think.predict() > est.as_secs_f64() {
        Speculation::Materialize
    } else {
        Speculation::Skip
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::{NodeProbabilities, Uniform};
    use crate::cost::NoStats;
    use crate::dag::NodeState;
    use crate::dsl::OpArg;
    use crate::time::VDuration;

    fn costed(dag: &mut OperatorDag, id: NodeId, secs: f64) {
        dag.node_mut(id).unwrap().observed_cost = Some(VDuration::from_secs_f64(secs));
    }

    fn chain() -> OperatorDag {
        let mut dag = OperatorDag::new();
        let s = dag.add_node(OpKind::ReadCsv, vec![OpArg::Str("t".into())], vec![]);
        let b = dag.add_node(OpKind::SelectColumn, vec![OpArg::Str("a".into())], vec![s]);
        let c = dag.add_node(OpKind::Mean, vec![], vec![b]);
        for (id, secs) in [(s, 5.0), (b, 10.0), (c, 20.0)] {
            costed(&mut dag, id, secs);
        }
        dag
    }

    fn ctx<'a>(
        dag: &'a OperatorDag,
        cost: &'a CostModel,
        prob: &'a dyn InteractionProbability,
        avail: &'a dyn Fn(NodeId) -> bool,
    ) -> UtilityContext<'a> {
        UtilityContext {
            dag,
            cost,
            stats: &NoStats,
            available: avail,
            prob,
            transitive: true,
        }
    }

    #[test]
    fn chain_utility_uniform() {
        let dag = chain();
        let cost = CostModel::default();
        let avail = |id| dag.is_executed(id);
        let u = ctx(&dag, &cost, &Uniform, &avail).utility(NodeId(0)).unwrap();
        assert_eq!(u, 55.0);
    }

    #[test]
    fn chain_utility_weighted() {
        let dag = chain();
        let cost = CostModel::default();
        let mut p = NodeProbabilities::new(1.0);
        p.set(NodeId(0), 0.0);
        p.set(NodeId(1), 0.0);
        let avail = |id| dag.is_executed(id);
        assert_eq!(ctx(&dag, &cost, &p, &avail).utility(NodeId(0)).unwrap(), 35.0);
    }

    #[test]
    fn non_source_is_rejected() {
        let dag = chain();
        let cost = CostModel::default();
        let avail = |id| dag.is_executed(id);
        let c = ctx(&dag, &cost, &Uniform, &avail);
        assert_eq!(c.utility(NodeId(2)), Err(PolicyError::NotASource(NodeId(2))));
    }

    #[test]
    fn argmax_and_ties() {
        let mut dag = OperatorDag::new();
        let a = dag.add_node(OpKind::ReadCsv, vec![OpArg::Str("a".into())], vec![]);
        let b = dag.add_node(OpKind::ReadCsv, vec![OpArg::Str("b".into())], vec![]);
        costed(&mut dag, a, 30.0);
        costed(&mut dag, b, 55.0);
        let cost = CostModel::default();
        let avail = |id| dag.is_executed(id);
        assert_eq!(ctx(&dag, &cost, &Uniform, &avail).pick_next(), Some(b));
        costed(&mut dag, a, 55.0);
        let avail = |id| dag.is_executed(id);
        assert_eq!(ctx(&dag, &cost, &Uniform, &avail).pick_next(), Some(a));
    }

    #[test]
    fn speculation_rule() {
        let mut dag = OperatorDag::new();
        let r = dag.add_node(OpKind::ReadCsv, vec![OpArg::Str("t".into())], vec![]);
        let s = dag.add_node(OpKind::SelectColumn, vec![OpArg::Str("a".into())], vec![r]);
        let f = dag.add_node(
            OpKind::Filter,
            vec![OpArg::Cmp(crate::dsl::CmpOp::Gt), OpArg::Num(0.0)],
            vec![r, s],
        );
        costed(&mut dag, r, 5.0);
        let cost = CostModel::default();
        let avail = |id| dag.is_executed(id);
        let c = ctx(&dag, &cost, &Uniform, &avail);
        let slow = ThinkTimeModel::new(vec![20.0], 4);
        let fast = ThinkTimeModel::new(vec![2.0], 4);
        assert_eq!(maybe_speculate(f, &c, &slow).unwrap(), Speculation::Materialize);
        assert_eq!(maybe_speculate(f, &c, &fast).unwrap(), Speculation::Skip);
        assert!(maybe_speculate(s, &c, &slow).is_err());
        let _ = NodeState::Pending;
    }
}
