//! Minimal columnar dataframe.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use serde::Serialize;

use super::EngineError;

/// A homogeneous column of nullable values.
///
/// Null slots of a float column always hold `0.0` so that derived equality
/// only compares meaningful values.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnVector {
    Float { values: Vec<f64>, valid: Vec<bool> },
    Utf8(Vec<Option<Arc<str>>>),
}

impl ColumnVector {
    pub fn from_floats(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let mut vals = Vec::new();
        let mut valid = Vec::new();
        for v in values {
            match v {
                Some(x) if x.is_finite() => {
                    vals.push(if x == 0.0 { 0.0 } else { x });
                    valid.push(true);
                }
                _ => {
                    vals.push(0.0);
                    valid.push(false);
                }
            }
        }
        ColumnVector::Float { values: vals, valid }
    }

    pub fn from_strs<S: AsRef<str>>(values: impl IntoIterator<Item = Option<S>>) -> Self {
        ColumnVector::Utf8(values.into_iter().map(|v| v.map(|s| Arc::from(s.as_ref()))).collect())
    }

    pub fn len(&self) -> usize {
        match self {
            ColumnVector::Float { values, .. } => values.len(),
            ColumnVector::Utf8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, ColumnVector::Float { .. })
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            ColumnVector::Float { .. } => "float64",
            ColumnVector::Utf8(_) => "string",
        }
    }

    pub fn is_valid(&self, i: usize) -> bool {
        match self {
            ColumnVector::Float { valid, .. } => valid[i],
            ColumnVector::Utf8(v) => v[i].is_some(),
        }
    }

    pub fn non_null_count(&self) -> usize {
        match self {
            ColumnVector::Float { valid, .. } => valid.iter().filter(|v| **v).count(),
            ColumnVector::Utf8(v) => v.iter().filter(|x| x.is_some()).count(),
        }
    }

    pub fn get(&self, i: usize) -> Scalar {
        match self {
            ColumnVector::Float { values, valid } => {
                if valid[i] {
                    Scalar::Num(values[i])
                } else {
                    Scalar::Null
                }
            }
            ColumnVector::Utf8(v) => match &v[i] {
                Some(s) => Scalar::Str(s.clone()),
                None => Scalar::Null,
            },
        }
    }

    pub fn slice(&self, range: Range<usize>) -> ColumnVector {
        match self {
            ColumnVector::Float { values, valid } => ColumnVector::Float {
                values: values[range.clone()].to_vec(),
                valid: valid[range].to_vec(),
            },
            ColumnVector::Utf8(v) => ColumnVector::Utf8(v[range].to_vec()),
        }
    }

    /// Rows where `mask` is true, in order.
    pub fn take_mask(&self, mask: &[bool]) -> ColumnVector {
        self.take(mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i))
    }

    pub fn take(&self, idx: impl Iterator<Item = usize>) -> ColumnVector {
        match self {
            ColumnVector::Float { values, valid } => {
                let (v, m): (Vec<f64>, Vec<bool>) = idx.map(|i| (values[i], valid[i])).unzip();
                ColumnVector::Float { values: v, valid: m }
            }
            ColumnVector::Utf8(v) => ColumnVector::Utf8(idx.map(|i| v[i].clone()).collect()),
        }
    }

    /// Concatenates columns of the same type.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a ColumnVector>) -> Result<ColumnVector, EngineError> {
        let mut iter = parts.into_iter();
        let Some(first) = iter.next() else {
            return Ok(ColumnVector::Float {
                values: vec![],
                valid: vec![],
            });
        };
        let mut out = first.clone();
        for p in iter {
            match (&mut out, p) {
                (ColumnVector::Float { values, valid }, ColumnVector::Float { values: v2, valid: m2 }) => {
                    values.extend_from_slice(v2);
                    valid.extend_from_slice(m2);
                }
                (ColumnVector::Utf8(a), ColumnVector::Utf8(b)) => a.extend_from_slice(b),
                (a, b) => {
                    return Err(EngineError::TypeMismatch {
                        op: "concat",
                        expected: a.type_name().into(),
                        found: b.type_name().into(),
                    })
                }
            }
        }
        Ok(out)
    }

    /// Estimated bytes: 8 per slot, string payloads, and a validity bitmap.
    pub fn estimated_bytes(&self) -> u64 {
        let rows = self.len() as u64;
        let payload: u64 = match self {
            ColumnVector::Float { .. } => 0,
            ColumnVector::Utf8(v) => v.iter().flatten().map(|s| s.len() as u64).sum(),
        };
        8 * rows + payload + rows.div_ceil(8)
    }
}

/// A scalar cell value.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Scalar {
    Null,
    Num(f64),
    Str(#[serde(serialize_with = "ser_arc_str")] Arc<str>),
}

fn ser_arc_str<S: serde::Serializer>(s: &Arc<str>, ser: S) -> Result<S::Ok, S::Error> {
    ser.serialize_str(s)
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Null => f.write_str("NaN"),
            Scalar::Num(v) => write!(f, "{v}"),
            Scalar::Str(s) => f.write_str(s),
        }
    }
}

/// A named column, the result of selecting from a table or aggregating one.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub data: Arc<ColumnVector>,
}

impl Series {
    pub fn new(name: impl Into<String>, data: ColumnVector) -> Self {
        Series {
            name: name.into(),
            data: Arc::new(data),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Ordered, uniquely named columns sharing one row count. Columns are shared
/// between tables so that projections are cheap.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    names: Vec<String>,
    columns: Vec<Arc<ColumnVector>>,
    rows: usize,
}

impl DataTable {
    pub fn new(columns: Vec<(String, ColumnVector)>) -> Result<Self, EngineError> {
        Self::from_shared(columns.into_iter().map(|(n, c)| (n, Arc::new(c))).collect())
    }

    pub fn from_shared(columns: Vec<(String, Arc<ColumnVector>)>) -> Result<Self, EngineError> {
        let rows = columns.first().map(|(_, c)| c.len()).unwrap_or(0);
        let mut names = Vec::with_capacity(columns.len());
        let mut cols = Vec::with_capacity(columns.len());
        for (name, col) in columns {
            if col.len() != rows {
                return Err(EngineError::TypeMismatch {
                    op: "table",
                    expected: format!("{rows} rows"),
                    found: format!("column `{name}` with {} rows", col.len()),
                });
            }
            if names.contains(&name) {
                return Err(EngineError::DuplicateColumn(name));
            }
            names.push(name);
            cols.push(col);
        }
        Ok(DataTable {
            names,
            columns: cols,
            rows,
        })
    }

    /// A table with no columns but `rows` rows.
    pub fn empty(rows: usize) -> Self {
        DataTable {
            names: vec![],
            columns: vec![],
            rows,
        }
    }

    pub fn row_count(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn columns(&self) -> impl Iterator<Item = (&str, &Arc<ColumnVector>)> {
        self.names.iter().map(String::as_str).zip(self.columns.iter())
    }

    pub fn column(&self, name: &str) -> Option<&Arc<ColumnVector>> {
        self.names.iter().position(|n| n == name).map(|i| &self.columns[i])
    }

    pub fn slice(&self, range: Range<usize>) -> DataTable {
        DataTable {
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| Arc::new(c.slice(range.clone()))).collect(),
            rows: range.len(),
        }
    }

    pub fn take_mask(&self, mask: &[bool]) -> DataTable {
        let rows = mask.iter().filter(|m| **m).count();
        DataTable {
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| Arc::new(c.take_mask(mask))).collect(),
            rows,
        }
    }

    pub fn take(&self, idx: &[usize]) -> DataTable {
        DataTable {
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| Arc::new(c.take(idx.iter().copied())))
                .collect(),
            rows: idx.len(),
        }
    }

    /// Keeps the named columns, in the order given.
    pub fn project(&self, keep: &[usize]) -> DataTable {
        DataTable {
            names: keep.iter().map(|i| self.names[*i].clone()).collect(),
            columns: keep.iter().map(|i| self.columns[*i].clone()).collect(),
            rows: self.rows,
        }
    }

    /// Vertically stacks tables with identical schemas.
    pub fn concat(parts: &[DataTable]) -> Result<DataTable, EngineError> {
        let Some(first) = parts.first() else {
            return Ok(DataTable::empty(0));
        };
        for p in parts {
            if p.names != first.names {
                return Err(EngineError::TypeMismatch {
                    op: "concat",
                    expected: format!("columns {:?}", first.names),
                    found: format!("columns {:?}", p.names),
                });
            }
        }
        let mut columns = Vec::with_capacity(first.width());
        for i in 0..first.width() {
            let col = ColumnVector::concat(parts.iter().map(|p| p.columns[i].as_ref()))?;
            columns.push(Arc::new(col));
        }
        Ok(DataTable {
            names: first.names.clone(),
            columns,
            rows: parts.iter().map(|p| p.rows).sum(),
        })
    }

    /// Replaces or appends a column.
    pub fn with_column(&self, name: &str, col: Arc<ColumnVector>) -> Result<DataTable, EngineError> {
        if col.len() != self.rows && self.width() > 0 {
            return Err(EngineError::TypeMismatch {
                op: "assign",
                expected: format!("{} rows", self.rows),
                found: format!("{} rows", col.len()),
            });
        }
        let mut out = self.clone();
        match out.names.iter().position(|n| n == name) {
            Some(i) => out.columns[i] = col,
            None => {
                out.names.push(name.to_string());
                out.columns.push(col);
            }
        }
        out.rows = out.columns[0].len();
        Ok(out)
    }

    pub fn estimated_bytes(&self) -> u64 {
        self.columns.iter().map(|c| c.estimated_bytes()).sum()
    }
}

/// Anything an operator can produce.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Table(DataTable),
    Column(Series),
    Scalar(Scalar),
}

impl Value {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Value::Table(_) => "table",
            Value::Column(_) => "column",
            Value::Scalar(_) => "scalar",
        }
    }

    /// Rows along the partitioning axis; scalars count as one row.
    pub fn row_count(&self) -> usize {
        match self {
            Value::Table(t) => t.row_count(),
            Value::Column(s) => s.len(),
            Value::Scalar(_) => 1,
        }
    }

    /// Estimated memory footprint in bytes; at least one.
    pub fn estimated_bytes(&self) -> u64 {
        let b = match self {
            Value::Table(t) => t.estimated_bytes(),
            Value::Column(s) => s.data.estimated_bytes(),
            Value::Scalar(Scalar::Str(s)) => 8 + s.len() as u64,
            Value::Scalar(_) => 8,
        };
        b.max(1)
    }

    pub fn slice_rows(&self, range: Range<usize>) -> Value {
        match self {
            Value::Table(t) => Value::Table(t.slice(range)),
            Value::Column(s) => Value::Column(Series {
                name: s.name.clone(),
                data: Arc::new(s.data.slice(range)),
            }),
            Value::Scalar(s) => Value::Scalar(s.clone()),
        }
    }

    /// Stacks row chunks produced by the same operator.
    pub fn concat_rows(parts: &[Value]) -> Result<Value, EngineError> {
        match parts.first() {
            None => Err(EngineError::Internal("concat of zero chunks".into())),
            Some(Value::Table(_)) => {
                let tables: Result<Vec<DataTable>, EngineError> = parts
                    .iter()
                    .map(|p| match p {
                        Value::Table(t) => Ok(t.clone()),
                        other => Err(mismatch("concat", "table", other)),
                    })
                    .collect();
                Ok(Value::Table(DataTable::concat(&tables?)?))
            }
            Some(Value::Column(first)) => {
                let cols: Result<Vec<&ColumnVector>, EngineError> = parts
                    .iter()
                    .map(|p| match p {
                        Value::Column(s) => Ok(s.data.as_ref()),
                        other => Err(mismatch("concat", "column", other)),
                    })
                    .collect();
                Ok(Value::Column(Series::new(
                    first.name.clone(),
                    ColumnVector::concat(cols?)?,
                )))
            }
            Some(Value::Scalar(s)) => Ok(Value::Scalar(s.clone())),
        }
    }

    /// Short description such as `table 5x8` for reports.
    pub fn summary(&self) -> String {
        match self {
            Value::Table(t) => format!("table {}x{}", t.row_count(), t.width()),
            Value::Column(s) => format!("column '{}' len {}", s.name, s.len()),
            Value::Scalar(s) => format!("scalar {s}"),
        }
    }
}

pub(crate) fn mismatch(op: &'static str, expected: &str, found: &Value) -> EngineError {
    EngineError::TypeMismatch {
        op,
        expected: expected.to_string(),
        found: found.kind_name().to_string(),
    }
}

const DISPLAY_ROWS: usize = 20;

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Scalar(s) => write!(f, "{s}"),
            Value::Column(s) => {
                for i in 0..s.len().min(DISPLAY_ROWS) {
                    writeln!(f, "{i:>6}  {}", s.data.get(i))?;
                }
                if s.len() > DISPLAY_ROWS {
                    writeln!(f, "   ...")?;
                }
                write!(f, "Name: {}, Length: {}", s.name, s.len())
            }
            Value::Table(t) => {
                let rows = t.row_count().min(DISPLAY_ROWS);
                let cells: Vec<Vec<String>> = t
                    .columns()
                    .map(|(_, c)| (0..rows).map(|i| c.get(i).to_string()).collect())
                    .collect();
                let widths: Vec<usize> = t
                    .names()
                    .iter()
                    .zip(&cells)
                    .map(|(n, col)| col.iter().map(String::len).chain([n.len()]).max().unwrap_or(0))
                    .collect();
                write!(f, "{:>6}", "")?;
                for (n, w) in t.names().iter().zip(&widths) {
                    write!(f, "  {n:>w$}")?;
                }
                writeln!(f)?;
                for i in 0..rows {
                    write!(f, "{i:>6}")?;
                    for (col, w) in cells.iter().zip(&widths) {
                        write!(f, "  {:>w$}", col[i])?;
                    }
                    writeln!(f)?;
                }
                if t.row_count() > DISPLAY_ROWS {
                    writeln!(f, "   ...")?;
                }
                write!(f, "[{} rows x {} columns]", t.row_count(), t.width())
            }
        }
    }
}
