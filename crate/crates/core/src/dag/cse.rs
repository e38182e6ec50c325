use std::collections::{BTreeMap, HashMap};

use super::{levels, NodeId, NodeState, OperatorDag};

/// Merges nodes with identical canonical code and identical (post-merge)
/// dependencies, visiting the DAG level by level from the roots.
///
/// The smallest id survives. The survivor counts as executed if any merged
/// member was. Returns the `absorbed -> survivor` map of this pass.
pub fn eliminate_common_subexpressions(dag: &mut OperatorDag) -> BTreeMap<NodeId, NodeId> {
    let level = levels(dag);
    let mut order: Vec<NodeId> = dag.live_ids().collect();
    order.sort_by_key(|id| (level[id], *id));

    let mut seen: HashMap<(String, Vec<NodeId>), NodeId> = HashMap::new();
    let mut merged = BTreeMap::new();
    for id in order {
        let deps: Vec<NodeId> = dag.nodes[id.index()].deps.iter().map(|d| dag.resolve(*d)).collect();
        dag.nodes[id.index()].deps = deps.clone();
        let key = (dag.nodes[id.index()].canonical_code.clone(), deps);
        match seen.get(&key) {
            None => {
                seen.insert(key, id);
            }
            Some(&survivor) => {
                absorb(dag, id, survivor);
                merged.insert(id, survivor);
            }
        }
    }
    if !merged.is_empty() {
        dag.rewrite_references();
    }
    merged
}

fn absorb(dag: &mut OperatorDag, absorbed: NodeId, survivor: NodeId) {
    let src = dag.nodes[absorbed.index()].clone();
    let dst = &mut dag.nodes[survivor.index()];
    if src.state == NodeState::Executed && dst.state != NodeState::Executed {
        dst.state = NodeState::Executed;
    }
    dst.ever_executed |= src.ever_executed;
    dst.is_interaction |= src.is_interaction;
    dst.observed_cost = dst.observed_cost.or(src.observed_cost);
    dst.observed_rows = dst.observed_rows.or(src.observed_rows);
    dag.nodes[absorbed.index()].merged_into = Some(survivor);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{OpArg, OpKind};

    #[test]
    fn empty_dag_is_fine() {
        let mut dag = OperatorDag::new();
        assert!(eliminate_common_subexpressions(&mut dag).is_empty());
    }

    #[test]
    fn differing_literal_args_never_merge() {
        let mut dag = OperatorDag::new();
        let r = dag.add_node(OpKind::ReadCsv, vec![OpArg::Str("a".into())], vec![]);
        dag.add_node(OpKind::Head, vec![OpArg::Num(5.0)], vec![r]);
        dag.add_node(OpKind::Head, vec![OpArg::Num(6.0)], vec![r]);
        assert!(eliminate_common_subexpressions(&mut dag).is_empty());
        assert_eq!(dag.live_nodes().count(), 3);
    }

    #[test]
    fn executed_member_marks_survivor_executed() {
        let mut dag = OperatorDag::new();
        let r = dag.add_node(OpKind::ReadCsv, vec![OpArg::Str("a".into())], vec![]);
        let m0 = dag.add_node(OpKind::Mean, vec![], vec![r]);
        let m1 = dag.add_node(OpKind::Mean, vec![], vec![r]);
        dag.set_state(m1, NodeState::Running).unwrap();
        dag.set_state(m1, NodeState::Executed).unwrap();
        let merged = eliminate_common_subexpressions(&mut dag);
        assert_eq!(merged, BTreeMap::from([(m1, m0)]));
        assert_eq!(dag.node(m0).unwrap().state, NodeState::Executed);
        assert_eq!(dag.resolve(m1), m0);
    }

    #[test]
    fn bindings_follow_survivor() {
        let mut dag = OperatorDag::new();
        let r = dag.add_node(OpKind::ReadCsv, vec![OpArg::Str("a".into())], vec![]);
        let s0 = dag.add_node(OpKind::Sum, vec![], vec![r]);
        let s1 = dag.add_node(OpKind::Sum, vec![], vec![r]);
        dag.bind("x", s1);
        eliminate_common_subexpressions(&mut dag);
        assert_eq!(dag.bindings()["x"], s0);
    }
}
