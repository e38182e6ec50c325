use std::collections::BTreeSet;

use super::{DslError, Expr, Statement};
use crate::dag::{NodeId, OperatorDag};

/// Appends one node per operator occurrence, binding assignment targets.
///
/// References are checked for every statement before the DAG is touched, so
/// an unbound variable leaves the DAG unchanged. Returns the new node ids in
/// statement order (inputs before consumers).
pub fn lower_to_dag(statements: &[Statement], dag: &mut OperatorDag) -> Result<Vec<NodeId>, DslError> {
    let mut known: BTreeSet<&str> = dag.bindings().keys().map(String::as_str).collect();
    for stmt in statements {
        if let Some(name) = stmt.expression.variables().into_iter().find(|v| !known.contains(v)) {
            return Err(DslError::UnboundVariable {
                line: stmt.line,
                name: name.to_string(),
            });
        }
        if let Some(t) = &stmt.target {
            known.insert(t);
        }
    }

    let mut added = Vec::new();
    for stmt in statements {
        let root = lower_expr(&stmt.expression, dag, &mut added);
        if let Some(t) = &stmt.target {
            dag.bind(t.clone(), root);
        }
    }
    Ok(added)
}

fn lower_expr(expr: &Expr, dag: &mut OperatorDag, added: &mut Vec<NodeId>) -> NodeId {
    match expr {
        Expr::Var(name) => dag.binding(name).expect("references validated"),
        Expr::Call { kind, inputs, params } => {
            let deps: Vec<NodeId> = inputs.iter().map(|e| lower_expr(e, dag, added)).collect();
            let id = dag.add_node(*kind, params.clone(), deps);
            added.push(id);
            id
        }
    }
}
