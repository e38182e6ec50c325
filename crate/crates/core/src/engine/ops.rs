//! Reference semantics of every operator.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::Arc;

use super::exact::ExactSum;
use super::table::{mismatch, ColumnVector, DataTable, Scalar, Series, Value};
use super::EngineError;
use crate::dsl::{CmpOp, OpArg, OpKind};

/// Evaluates one operator over fully materialized inputs. Pure.
///
/// `read_csv` receives the raw source table as its single input.
pub fn eval_operator(kind: OpKind, args: &[OpArg], inputs: &[Value]) -> Result<Value, EngineError> {
    let op = kind.name();
    let input = |i: usize| {
        inputs.get(i).ok_or_else(|| EngineError::InvalidArgument {
            op,
            message: format!("missing input {i}"),
        })
    };
    let str_arg = |i: usize| {
        args.get(i)
            .and_then(OpArg::as_str)
            .ok_or_else(|| EngineError::InvalidArgument {
                op,
                message: format!("argument {i} must be a string"),
            })
    };
    let num_arg = |i: usize| {
        args.get(i)
            .and_then(OpArg::as_num)
            .ok_or_else(|| EngineError::InvalidArgument {
                op,
                message: format!("argument {i} must be a number"),
            })
    };
    match kind {
        OpKind::ReadCsv => match input(0)? {
            v @ Value::Table(_) => Ok(v.clone()),
            other => Err(mismatch(op, "table", other)),
        },
        OpKind::Literal => Ok(Value::Scalar(match args.first() {
            Some(OpArg::Num(v)) => Scalar::Num(*v),
            Some(OpArg::Str(s)) => Scalar::Str(Arc::from(s.as_str())),
            _ => Scalar::Null,
        })),
        OpKind::SelectColumn => select(as_table(op, input(0)?)?, str_arg(0)?),
        OpKind::Filter => {
            let cmp = args
                .first()
                .and_then(OpArg::as_cmp)
                .ok_or_else(|| EngineError::InvalidArgument {
                    op,
                    message: "missing comparison".into(),
                })?;
            let lit = args.get(1).ok_or_else(|| EngineError::InvalidArgument {
                op,
                message: "missing comparison constant".into(),
            })?;
            let pred = as_column(op, input(1)?)?;
            let mask = predicate_mask(pred, cmp, lit)?;
            filter_rows(input(0)?, &mask)
        }
        OpKind::Fillna => {
            let fill = match input(1)? {
                Value::Scalar(s) => s,
                other => return Err(mismatch(op, "scalar fill value", other)),
            };
            fillna(input(0)?, fill)
        }
        OpKind::Mean | OpKind::Sum => {
            let mean = kind == OpKind::Mean;
            match input(0)? {
                Value::Table(t) => {
                    let mut accs = table_accumulators(t);
                    for (acc, col) in accs.iter_mut().zip(numeric_columns(t)) {
                        acc.add_column(col, 0..t.row_count());
                    }
                    Ok(finish_table_agg(kind, &accs))
                }
                Value::Column(s) => {
                    let ColumnVector::Float { .. } = s.data.as_ref() else {
                        return Err(mismatch_col(op, "numeric column", &s.data));
                    };
                    let mut acc = ColumnAcc::default();
                    acc.add_column(&s.data, 0..s.len());
                    finish_column_agg(op, mean, &s.name, &acc)
                }
                other => Err(mismatch(op, "table or column", other)),
            }
        }
        OpKind::ValueCounts => {
            let s = as_column(op, input(0)?)?;
            let mut counts = Counts::for_column(&s.data);
            counts.add(&s.data, 0..s.len());
            Ok(counts.finish())
        }
        OpKind::Head | OpKind::Tail => {
            let k = num_arg(0)? as usize;
            let v = input(0)?;
            if let Value::Scalar(_) = v {
                return Err(mismatch(op, "table or column", v));
            }
            let n = v.row_count();
            let k = k.min(n);
            Ok(if kind == OpKind::Head {
                v.slice_rows(0..k)
            } else {
                v.slice_rows(n - k..n)
            })
        }
        OpKind::Columns => {
            let t = as_table(op, input(0)?)?;
            Ok(Value::Column(Series::new(
                "columns",
                ColumnVector::from_strs(t.names().iter().map(Some)),
            )))
        }
        OpKind::SortValues => match input(0)? {
            Value::Table(t) => {
                let key = str_arg(0).map_err(|_| EngineError::InvalidArgument {
                    op,
                    message: "sorting a table needs a column name".into(),
                })?;
                let col = t.column(key).ok_or_else(|| EngineError::MissingColumn(key.into()))?;
                Ok(Value::Table(t.take(&sort_order(col))))
            }
            Value::Column(s) => {
                let order = sort_order(&s.data);
                Ok(Value::Column(Series::new(
                    s.name.clone(),
                    s.data.take(order.into_iter()),
                )))
            }
            other => Err(mismatch(op, "table or column", other)),
        },
        OpKind::GroupbyMean => groupby_mean(as_table(op, input(0)?)?, str_arg(0)?),
        OpKind::DropColumnsBelowThreshold => {
            let t = as_table(op, input(0)?)?;
            let counts: Vec<usize> = t.columns().map(|(_, c)| c.non_null_count()).collect();
            Ok(Value::Table(drop_sparse(t, &counts, num_arg(0)?)))
        }
        OpKind::Assign => {
            let t = as_table(op, input(0)?)?;
            assign(t, str_arg(0)?, input(1)?)
        }
    }
}

pub(crate) fn as_table<'a>(op: &'static str, v: &'a Value) -> Result<&'a DataTable, EngineError> {
    match v {
        Value::Table(t) => Ok(t),
        other => Err(mismatch(op, "table", other)),
    }
}

pub(crate) fn as_column<'a>(op: &'static str, v: &'a Value) -> Result<&'a Series, EngineError> {
    match v {
        Value::Column(s) => Ok(s),
        other => Err(mismatch(op, "column", other)),
    }
}

fn mismatch_col(op: &'static str, expected: &str, c: &ColumnVector) -> EngineError {
    EngineError::TypeMismatch {
        op,
        expected: expected.into(),
        found: format!("{} column", c.type_name()),
    }
}

fn select(t: &DataTable, name: &str) -> Result<Value, EngineError> {
    let col = t
        .column(name)
        .ok_or_else(|| EngineError::MissingColumn(name.to_string()))?;
    Ok(Value::Column(Series {
        name: name.to_string(),
        data: col.clone(),
    }))
}

/// Row mask for `pred <cmp> lit`; nulls never match.
pub(crate) fn predicate_mask(pred: &Series, cmp: CmpOp, lit: &OpArg) -> Result<Vec<bool>, EngineError> {
    match (pred.data.as_ref(), lit) {
        (ColumnVector::Float { values, valid }, OpArg::Num(x)) => Ok(values
            .iter()
            .zip(valid)
            .map(|(v, ok)| *ok && v.partial_cmp(x).is_some_and(|o| cmp.holds(o)))
            .collect()),
        (ColumnVector::Utf8(vals), OpArg::Str(x)) => {
            if !matches!(cmp, CmpOp::Eq | CmpOp::Ne) {
                return Err(EngineError::InvalidArgument {
                    op: "filter",
                    message: format!("string columns support only == and !=, got {}", cmp.symbol()),
                });
            }
            Ok(vals
                .iter()
                .map(|v| match v {
                    Some(s) => cmp.holds(s.as_ref().cmp(x.as_str())),
                    None => false,
                })
                .collect())
        }
        (c, _) => Err(EngineError::TypeMismatch {
            op: "filter",
            expected: format!("{} comparison constant", c.type_name()),
            found: lit.to_string(),
        }),
    }
}

fn filter_rows(v: &Value, mask: &[bool]) -> Result<Value, EngineError> {
    if v.row_count() != mask.len() || matches!(v, Value::Scalar(_)) {
        return Err(EngineError::TypeMismatch {
            op: "filter",
            expected: format!("{} rows matching the predicate", mask.len()),
            found: v.summary(),
        });
    }
    Ok(match v {
        Value::Table(t) => Value::Table(t.take_mask(mask)),
        Value::Column(s) => Value::Column(Series::new(s.name.clone(), s.data.take_mask(mask))),
        Value::Scalar(_) => unreachable!(),
    })
}

fn fill_column(c: &Arc<ColumnVector>, fill: &Scalar) -> Option<ColumnVector> {
    match (c.as_ref(), fill) {
        (ColumnVector::Float { values, valid }, Scalar::Num(x)) => Some(ColumnVector::Float {
            values: values
                .iter()
                .zip(valid)
                .map(|(v, ok)| if *ok { *v } else { *x })
                .collect(),
            valid: vec![true; values.len()],
        }),
        (ColumnVector::Utf8(vals), Scalar::Str(x)) => Some(ColumnVector::Utf8(
            vals.iter()
                .map(|v| Some(v.clone().unwrap_or_else(|| x.clone())))
                .collect(),
        )),
        _ => None,
    }
}

fn fillna(v: &Value, fill: &Scalar) -> Result<Value, EngineError> {
    match v {
        Value::Column(s) => {
            if *fill == Scalar::Null {
                return Ok(v.clone());
            }
            let filled = fill_column(&s.data, fill).ok_or_else(|| EngineError::TypeMismatch {
                op: "fillna",
                expected: format!("fill value for a {} column", s.data.type_name()),
                found: fill.to_string(),
            })?;
            Ok(Value::Column(Series::new(s.name.clone(), filled)))
        }
        Value::Table(t) => {
            let cols = t
                .columns()
                .map(|(n, c)| {
                    let c = match fill_column(c, fill) {
                        Some(f) => Arc::new(f),
                        None => c.clone(),
                    };
                    (n.to_string(), c)
                })
                .collect();
            Ok(Value::Table(DataTable::from_shared(cols)?))
        }
        other => Err(mismatch("fillna", "table or column", other)),
    }
}

/// Running sum and non-null count of one numeric column.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct ColumnAcc {
    pub sum: ExactSum,
    pub count: usize,
}

impl ColumnAcc {
    pub fn add_column(&mut self, c: &ColumnVector, range: std::ops::Range<usize>) {
        if let ColumnVector::Float { values, valid } = c {
            for i in range {
                if valid[i] {
                    self.sum.add(values[i]);
                    self.count += 1;
                }
            }
        }
    }

    pub fn merge(&mut self, other: &ColumnAcc) {
        self.sum.merge(&other.sum);
        self.count += other.count;
    }
}

pub(crate) fn numeric_columns(t: &DataTable) -> impl Iterator<Item = &ColumnVector> {
    t.columns().map(|(_, c)| c.as_ref()).filter(|c| c.is_numeric())
}

pub(crate) fn table_accumulators(t: &DataTable) -> Vec<ColumnAcc> {
    vec![ColumnAcc::default(); numeric_columns(t).count()]
}

/// Per-numeric-column means (null when a column has no values) or sums.
pub(crate) fn finish_table_agg(kind: OpKind, accs: &[ColumnAcc]) -> Value {
    let vals = accs.iter().map(|a| match kind {
        OpKind::Mean if a.count == 0 => None,
        OpKind::Mean => Some(a.sum.value() / a.count as f64),
        _ => Some(a.sum.value()),
    });
    Value::Column(Series::new(kind.name(), ColumnVector::from_floats(vals)))
}

pub(crate) fn finish_column_agg(
    op: &'static str,
    mean: bool,
    name: &str,
    acc: &ColumnAcc,
) -> Result<Value, EngineError> {
    if !mean {
        return Ok(Value::Scalar(Scalar::Num(acc.sum.value())));
    }
    if acc.count == 0 {
        return Err(EngineError::EmptyAggregate(format!("{op} of '{name}'")));
    }
    Ok(Value::Scalar(Scalar::Num(acc.sum.value() / acc.count as f64)))
}

/// Mergeable value counts.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Counts {
    Num(HashMap<u64, usize>),
    Str(HashMap<Arc<str>, usize>),
}

impl Counts {
    pub fn for_column(c: &ColumnVector) -> Self {
        match c {
            ColumnVector::Float { .. } => Counts::Num(HashMap::new()),
            ColumnVector::Utf8(_) => Counts::Str(HashMap::new()),
        }
    }

    pub fn add(&mut self, c: &ColumnVector, range: std::ops::Range<usize>) {
        match (self, c) {
            (Counts::Num(m), ColumnVector::Float { values, valid }) => {
                for i in range.filter(|i| valid[*i]) {
                    *m.entry(values[i].to_bits()).or_default() += 1;
                }
            }
            (Counts::Str(m), ColumnVector::Utf8(vals)) => {
                for s in vals[range].iter().flatten() {
                    *m.entry(s.clone()).or_default() += 1;
                }
            }
            _ => unreachable!("counts built for this column type"),
        }
    }

    pub fn merge(&mut self, other: &Counts) {
        match (self, other) {
            (Counts::Num(a), Counts::Num(b)) => {
                for (k, v) in b {
                    *a.entry(*k).or_default() += v;
                }
            }
            (Counts::Str(a), Counts::Str(b)) => {
                for (k, v) in b {
                    *a.entry(k.clone()).or_default() += v;
                }
            }
            _ => unreachable!("partitions of one column share a type"),
        }
    }

    /// Table of (value, count), by descending count then ascending value.
    pub fn finish(&self) -> Value {
        let (values, counts) = match self {
            Counts::Num(m) => {
                let mut items: Vec<(f64, usize)> = m.iter().map(|(k, v)| (f64::from_bits(*k), *v)).collect();
                items.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.total_cmp(&b.0)));
                let counts = items.iter().map(|(_, c)| Some(*c as f64)).collect::<Vec<_>>();
                (
                    ColumnVector::from_floats(items.into_iter().map(|(v, _)| Some(v))),
                    counts,
                )
            }
            Counts::Str(m) => {
                let mut items: Vec<(&Arc<str>, usize)> = m.iter().map(|(k, v)| (k, *v)).collect();
                items.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
                let counts = items.iter().map(|(_, c)| Some(*c as f64)).collect::<Vec<_>>();
                (
                    ColumnVector::Utf8(items.into_iter().map(|(v, _)| Some(v.clone())).collect()),
                    counts,
                )
            }
        };
        Value::Table(
            DataTable::new(vec![
                ("value".into(), values),
                ("count".into(), ColumnVector::from_floats(counts)),
            ])
            .expect("two distinct equal-length columns"),
        )
    }
}

fn cmp_at(c: &ColumnVector, a: usize, b: usize) -> Ordering {
    // nulls last
    match (c.is_valid(a), c.is_valid(b)) {
        (false, false) => Ordering::Equal,
        (false, true) => Ordering::Greater,
        (true, false) => Ordering::Less,
        (true, true) => match c {
            ColumnVector::Float { values, .. } => values[a].total_cmp(&values[b]),
            ColumnVector::Utf8(v) => v[a].cmp(&v[b]),
        },
    }
}

/// Stable ascending order, nulls last.
fn sort_order(c: &ColumnVector) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..c.len()).collect();
    idx.sort_by(|a, b| cmp_at(c, *a, *b));
    idx
}

fn groupby_mean(t: &DataTable, key: &str) -> Result<Value, EngineError> {
    let key_col = t
        .column(key)
        .ok_or_else(|| EngineError::MissingColumn(key.to_string()))?;
    let order = sort_order(key_col);
    // group boundaries over the sorted non-null keys
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &i in order.iter().filter(|i| key_col.is_valid(**i)) {
        match groups.last_mut() {
            Some(g) if cmp_at(key_col, g[0], i) == Ordering::Equal => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    let mut cols = vec![(key.to_string(), key_col.take(groups.iter().map(|g| g[0])))];
    for (name, c) in t.columns().filter(|(n, c)| *n != key && c.is_numeric()) {
        let means = groups.iter().map(|g| {
            let mut acc = ColumnAcc::default();
            for &i in g {
                acc.add_column(c, i..i + 1);
            }
            (acc.count > 0).then(|| acc.sum.value() / acc.count as f64)
        });
        cols.push((name.to_string(), ColumnVector::from_floats(means)));
    }
    Ok(Value::Table(DataTable::new(cols)?))
}

/// Keeps columns whose non-null fraction is at least `frac`.
pub(crate) fn drop_sparse(t: &DataTable, non_null: &[usize], frac: f64) -> DataTable {
    let n = t.row_count();
    let keep: Vec<usize> = non_null
        .iter()
        .enumerate()
        .filter(|(_, c)| n == 0 || **c as f64 >= frac * n as f64)
        .map(|(i, _)| i)
        .collect();
    t.project(&keep)
}

fn assign(t: &DataTable, name: &str, v: &Value) -> Result<Value, EngineError> {
    let col = match v {
        Value::Column(s) => s.data.clone(),
        Value::Scalar(Scalar::Num(x)) => {
            Arc::new(ColumnVector::from_floats(std::iter::repeat_n(Some(*x), t.row_count())))
        }
        Value::Scalar(Scalar::Str(x)) => Arc::new(ColumnVector::Utf8(vec![Some(x.clone()); t.row_count()])),
        Value::Scalar(Scalar::Null) => Arc::new(ColumnVector::from_floats(std::iter::repeat_n(None, t.row_count()))),
        other => return Err(mismatch("assign", "column or scalar", other)),
    };
    if col.len() != t.row_count() {
        return Err(EngineError::TypeMismatch {
            op: "assign",
            expected: format!("{} rows", t.row_count()),
            found: format!("{} rows", col.len()),
        });
    }
    Ok(Value::Table(t.with_column(name, col)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(vals: &[Option<f64>]) -> Value {
        Value::Column(Series::new("x", ColumnVector::from_floats(vals.iter().copied())))
    }

    fn strs(vals: &[&str]) -> Value {
        Value::Column(Series::new("s", ColumnVector::from_strs(vals.iter().map(Some))))
    }

    fn num(v: f64) -> Value {
        Value::Scalar(Scalar::Num(v))
    }

    #[test]
    fn mean_of_three() {
        let v = eval_operator(OpKind::Mean, &[], &[col(&[Some(1.0), Some(2.0), Some(3.0)])]).unwrap();
        assert_eq!(v, num(2.0));
    }

    #[test]
    fn mean_skips_nulls_and_rejects_all_null() {
        let v = eval_operator(OpKind::Mean, &[], &[col(&[Some(1.0), None, Some(3.0)])]).unwrap();
        assert_eq!(v, num(2.0));
        let e = eval_operator(OpKind::Mean, &[], &[col(&[None, None])]).unwrap_err();
        assert!(matches!(e, EngineError::EmptyAggregate(_)));
        assert_eq!(eval_operator(OpKind::Sum, &[], &[col(&[None])]).unwrap(), num(0.0));
    }

    #[test]
    fn value_counts_orders_by_count_then_value() {
        let v = eval_operator(OpKind::ValueCounts, &[], &[strs(&["b", "a", "b", "c", "a", "b"])]).unwrap();
        let Value::Table(t) = v else { panic!() };
        let vals: Vec<String> = (0..3).map(|i| t.column("value").unwrap().get(i).to_string()).collect();
        assert_eq!(vals, ["b", "a", "c"]);
        assert_eq!(t.column("count").unwrap().get(0), Scalar::Num(3.0));
    }

    #[test]
    fn fillna_replaces_nulls() {
        let v = eval_operator(OpKind::Fillna, &[], &[col(&[Some(1.0), None, Some(3.0)]), num(2.0)]).unwrap();
        assert_eq!(v, col(&[Some(1.0), Some(2.0), Some(3.0)]));
    }

    #[test]
    fn filter_null_never_matches() {
        let data = col(&[Some(1.0), None, Some(5.0)]);
        let v = eval_operator(
            OpKind::Filter,
            &[OpArg::Cmp(CmpOp::Ne), OpArg::Num(1.0)],
            &[data.clone(), data],
        )
        .unwrap();
        assert_eq!(v, col(&[Some(5.0)]));
    }

    #[test]
    fn string_filter_rejects_ordering() {
        let s = strs(&["a"]);
        let e = eval_operator(
            OpKind::Filter,
            &[OpArg::Cmp(CmpOp::Lt), OpArg::Str("b".into())],
            &[s.clone(), s],
        );
        assert!(e.is_err());
    }

    #[test]
    fn head_and_tail_clamp() {
        let c = col(&[Some(1.0), Some(2.0), Some(3.0)]);
        let h = eval_operator(OpKind::Head, &[OpArg::Num(5.0)], std::slice::from_ref(&c)).unwrap();
        assert_eq!(h, c);
        let t = eval_operator(OpKind::Tail, &[OpArg::Num(1.0)], &[c]).unwrap();
        assert_eq!(t, col(&[Some(3.0)]));
    }

    #[test]
    fn sort_is_stable_with_nulls_last() {
        let c = col(&[Some(2.0), None, Some(1.0), Some(2.0)]);
        let s = eval_operator(OpKind::SortValues, &[], &[c]).unwrap();
        assert_eq!(s, col(&[Some(1.0), Some(2.0), Some(2.0), None]));
    }

    #[test]
    fn groupby_means_per_key() {
        let t = DataTable::new(vec![
            (
                "k".into(),
                ColumnVector::from_strs([Some("b"), Some("a"), Some("b"), None]),
            ),
            (
                "v".into(),
                ColumnVector::from_floats([Some(1.0), Some(5.0), Some(3.0), Some(9.0)]),
            ),
        ])
        .unwrap();
        let Value::Table(g) =
            eval_operator(OpKind::GroupbyMean, &[OpArg::Str("k".into())], &[Value::Table(t)]).unwrap()
        else {
            panic!()
        };
        assert_eq!(g.row_count(), 2);
        assert_eq!(g.column("v").unwrap().get(0), Scalar::Num(5.0));
        assert_eq!(g.column("v").unwrap().get(1), Scalar::Num(2.0));
    }

    #[test]
    fn drop_columns_keeps_dense_ones() {
        let t = DataTable::new(vec![
            ("full".into(), ColumnVector::from_floats([Some(1.0); 5])),
            (
                "sparse".into(),
                ColumnVector::from_floats([Some(1.0), None, None, None, None]),
            ),
            (
                "edge".into(),
                ColumnVector::from_floats([Some(1.0), Some(1.0), Some(1.0), Some(1.0), None]),
            ),
        ])
        .unwrap();
        let Value::Table(out) = eval_operator(
            OpKind::DropColumnsBelowThreshold,
            &[OpArg::Num(0.8)],
            &[Value::Table(t)],
        )
        .unwrap() else {
            panic!()
        };
        assert_eq!(out.names(), ["full", "edge"]);
    }

    #[test]
    fn assign_broadcasts_scalars_and_replaces() {
        let t = DataTable::new(vec![("a".into(), ColumnVector::from_floats([Some(1.0), Some(2.0)]))]).unwrap();
        let Value::Table(out) =
            eval_operator(OpKind::Assign, &[OpArg::Str("a".into())], &[Value::Table(t), num(7.0)]).unwrap()
        else {
            panic!()
        };
        assert_eq!(out.width(), 1);
        assert_eq!(out.column("a").unwrap().get(1), Scalar::Num(7.0));
    }

    #[test]
    fn select_missing_column() {
        let t = DataTable::new(vec![("a".into(), ColumnVector::from_floats([Some(1.0)]))]).unwrap();
        let e = eval_operator(OpKind::SelectColumn, &[OpArg::Str("b".into())], &[Value::Table(t)]).unwrap_err();
        assert_eq!(e, EngineError::MissingColumn("b".into()));
    }
}
