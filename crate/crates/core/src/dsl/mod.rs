//! The cell language.
//!
//! One statement per line:
//!
//! ```text
//! statement := [ident "="] expr
//! expr      := ident | number | string | read_csv(string)
//!            | expr "[" string "]"                    column select
//!            | expr "[" expr cmp literal "]"          row filter
//!            | expr "." method "(" args ")"
//!            | expr ".columns"
//! ```
//!
//! Blank lines and `#` comments are ignored. Each operator occurrence is
//! later lowered into its own SSA-named DAG node (see [`lower_to_dag`]).

mod lexer;
mod lower;
mod parser;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lower::lower_to_dag;
pub use parser::parse_cell;

/// Default row count for `head()` / `tail()`.
pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DslError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown method `{name}` at {line}:{column}")]
    UnknownMethod { line: usize, column: usize, name: String },
    #[error("unbound variable `{name}` on line {line}")]
    UnboundVariable { line: usize, name: String },
}

/// Every operator the cell language can express.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    ReadCsv,
    SelectColumn,
    Filter,
    Fillna,
    Mean,
    Sum,
    ValueCounts,
    Head,
    Tail,
    SortValues,
    GroupbyMean,
    DropColumnsBelowThreshold,
    Columns,
    Assign,
    Literal,
}

impl OpKind {
    pub const ALL: [OpKind; 15] = [
        OpKind::ReadCsv,
        OpKind::SelectColumn,
        OpKind::Filter,
        OpKind::Fillna,
        OpKind::Mean,
        OpKind::Sum,
        OpKind::ValueCounts,
        OpKind::Head,
        OpKind::Tail,
        OpKind::SortValues,
        OpKind::GroupbyMean,
        OpKind::DropColumnsBelowThreshold,
        OpKind::Columns,
        OpKind::Assign,
        OpKind::Literal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::ReadCsv => "read_csv",
            OpKind::SelectColumn => "select_column",
            OpKind::Filter => "filter",
            OpKind::Fillna => "fillna",
            OpKind::Mean => "mean",
            OpKind::Sum => "sum",
            OpKind::ValueCounts => "value_counts",
            OpKind::Head => "head",
            OpKind::Tail => "tail",
            OpKind::SortValues => "sort_values",
            OpKind::GroupbyMean => "groupby_mean",
            OpKind::DropColumnsBelowThreshold => "drop_columns_below_threshold",
            OpKind::Columns => "columns",
            OpKind::Assign => "assign",
            OpKind::Literal => "literal",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Interactions are operators whose result is shown to the user.
    pub fn is_interaction(self) -> bool {
        matches!(
            self,
            OpKind::Head | OpKind::Tail | OpKind::ValueCounts | OpKind::Columns
        )
    }

    /// Methods callable as `expr.method(...)`.
    fn is_method(self) -> bool {
        !matches!(
            self,
            OpKind::ReadCsv | OpKind::SelectColumn | OpKind::Filter | OpKind::Literal
        )
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }

    pub fn from_symbol(s: &str) -> Option<CmpOp> {
        Some(match s {
            "<" => CmpOp::Lt,
            "<=" => CmpOp::Le,
            ">" => CmpOp::Gt,
            ">=" => CmpOp::Ge,
            "==" => CmpOp::Eq,
            "!=" => CmpOp::Ne,
            _ => return None,
        })
    }

    pub fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Lt => ord == Less,
            CmpOp::Le => ord != Greater,
            CmpOp::Gt => ord == Greater,
            CmpOp::Ge => ord != Less,
            CmpOp::Eq => ord == Equal,
            CmpOp::Ne => ord != Equal,
        }
    }
}

/// A literal parameter of an operator (column names, K, thresholds, filter
/// constants). Literals that act as *values* become `literal` nodes instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OpArg {
    Num(f64),
    Str(String),
    Cmp(CmpOp),
}

impl OpArg {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            OpArg::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            OpArg::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_cmp(&self) -> Option<CmpOp> {
        match self {
            OpArg::Cmp(c) => Some(*c),
            _ => None,
        }
    }
}

impl fmt::Display for OpArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpArg::Num(v) => write!(f, "{v}"),
            OpArg::Str(s) => write_quoted(f, s),
            OpArg::Cmp(c) => f.write_str(c.symbol()),
        }
    }
}

fn write_quoted(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_str("'")?;
    for ch in s.chars() {
        if ch == '\'' || ch == '\\' {
            f.write_str("\\")?;
        }
        write!(f, "{ch}")?;
    }
    f.write_str("'")
}

/// Expression tree: either a variable reference or an operator applied to
/// input expressions and literal parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Var(String),
    Call {
        kind: OpKind,
        inputs: Vec<Expr>,
        params: Vec<OpArg>,
    },
}

impl Expr {
    pub fn call(kind: OpKind, inputs: Vec<Expr>, params: Vec<OpArg>) -> Expr {
        Expr::Call { kind, inputs, params }
    }

    /// Variables referenced anywhere in the tree, in evaluation order.
    pub fn variables(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Var(v) => out.push(v),
            Expr::Call { inputs, .. } => inputs.iter().for_each(|e| e.collect_vars(out)),
        }
    }

    /// Number of operator applications in the tree.
    pub fn op_count(&self) -> usize {
        match self {
            Expr::Var(_) => 0,
            Expr::Call { inputs, .. } => 1 + inputs.iter().map(Expr::op_count).sum::<usize>(),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Var(v) => f.write_str(v),
            Expr::Call { kind, inputs, params } => match kind {
                OpKind::Literal => write!(f, "{}", params[0]),
                OpKind::ReadCsv => write!(f, "read_csv({})", params[0]),
                OpKind::SelectColumn => write!(f, "{}[{}]", inputs[0], params[0]),
                OpKind::Filter => write!(f, "{}[{} {} {}]", inputs[0], inputs[1], params[0], params[1]),
                OpKind::Columns => write!(f, "{}.columns", inputs[0]),
                _ => {
                    write!(f, "{}.{}(", inputs[0], kind)?;
                    let mut first = true;
                    for p in params {
                        if !first {
                            f.write_str(", ")?;
                        }
                        first = false;
                        write!(f, "{p}")?;
                    }
                    for e in &inputs[1..] {
                        if !first {
                            f.write_str(", ")?;
                        }
                        first = false;
                        write!(f, "{e}")?;
                    }
                    f.write_str(")")
                }
            },
        }
    }
}

/// One parsed line of a cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Statement {
    pub target: Option<String>,
    pub expression: Expr,
    pub source_text: String,
    /// 1-based line number within the cell.
    pub line: usize,
}

impl Statement {
    /// Canonical rendering; parsing it again yields the same tree.
    pub fn canonical(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(t) = &self.target {
            write!(f, "{t} = ")?;
        }
        write!(f, "{}", self.expression)
    }
}
