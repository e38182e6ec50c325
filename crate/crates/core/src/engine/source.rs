//! Data sources: CSV files and seeded synthetic tables.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::table::{ColumnVector, DataTable};
use super::EngineError;

/// Parses CSV text: first row is the header, a column whose non-empty cells
/// all parse as floats is numeric, empty cells are null.
pub fn read_csv_from<R: Read>(reader: R, label: &str) -> Result<DataTable, EngineError> {
    let load_err = |message: String| EngineError::DataLoad {
        path: label.to_string(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| load_err(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut cells: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| load_err(e.to_string()))?;
        for (col, field) in cells.iter_mut().zip(rec.iter()) {
            col.push(field.to_string());
        }
    }
    let mut columns = Vec::with_capacity(headers.len());
    for (name, raw) in headers.into_iter().zip(cells) {
        let numeric = raw
            .iter()
            .filter(|c| !c.trim().is_empty())
            .all(|c| c.trim().parse::<f64>().is_ok());
        let col = if numeric {
            ColumnVector::from_floats(raw.iter().map(|c| c.trim().parse::<f64>().ok()))
        } else {
            ColumnVector::from_strs(raw.iter().map(|c| (!c.is_empty()).then_some(c.as_str())))
        };
        columns.push((name, col));
    }
    DataTable::new(columns).map_err(|e| load_err(e.to_string()))
}

pub fn read_csv_file(path: &Path) -> Result<DataTable, EngineError> {
    let label = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| EngineError::DataLoad {
        path: label.clone(),
        message: e.to_string(),
    })?;
    read_csv_from(std::io::BufReader::new(file), &label)
}

/// `synthetic:<kind>?rows=N&seed=S&name=NAME`
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub kind: String,
    pub rows: usize,
    pub seed: u64,
    pub name: Option<String>,
}

impl SyntheticSpec {
    pub fn parse(uri: &str) -> Result<Self, EngineError> {
        let err = |m: &str| EngineError::DataLoad {
            path: uri.to_string(),
            message: m.to_string(),
        };
        let body = uri
            .strip_prefix("synthetic:")
            .ok_or_else(|| err("not a synthetic uri"))?;
        let (kind, query) = body.split_once('?').unwrap_or((body, ""));
        let mut spec = SyntheticSpec {
            kind: kind.to_string(),
            rows: 1000,
            seed: 0,
            name: None,
        };
        for pair in query.split('&').filter(|p| !p.is_empty()) {
            let (k, v) = pair.split_once('=').ok_or_else(|| err("expected key=value"))?;
            match k {
                "rows" => spec.rows = v.parse().map_err(|_| err("rows must be an integer"))?,
                "seed" => spec.seed = v.parse().map_err(|_| err("seed must be an integer"))?,
                "name" => spec.name = Some(v.to_string()),
                _ => return Err(err(&format!("unknown parameter `{k}`"))),
            }
        }
        if !matches!(spec.kind.as_str(), "credit" | "random") {
            return Err(err("kind must be `credit` or `random`"));
        }
        Ok(spec)
    }

    /// Name under which `read_csv` finds the table.
    pub fn table_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| format!("{}.csv", self.kind))
    }

    pub fn generate(&self) -> DataTable {
        match self.kind.as_str() {
            "credit" => credit_table(self.rows, self.seed),
            _ => random_table(self.rows, self.seed),
        }
    }
}

fn floats(rng: &mut ChaCha8Rng, n: usize, null_frac: f64, f: impl Fn(&mut ChaCha8Rng, usize) -> f64) -> ColumnVector {
    let vals: Vec<Option<f64>> = (0..n)
        .map(|i| {
            let v = f(rng, i);
            (rng.random::<f64>() >= null_frac).then_some(v)
        })
        .collect();
    ColumnVector::from_floats(vals)
}

fn categories(rng: &mut ChaCha8Rng, n: usize, null_frac: f64, levels: &[&str]) -> ColumnVector {
    let vals: Vec<Option<&str>> = (0..n)
        .map(|_| {
            let v = levels[rng.random_range(0..levels.len())];
            (rng.random::<f64>() >= null_frac).then_some(v)
        })
        .collect();
    ColumnVector::from_strs(vals)
}

/// Credit-card customer table; `bill_amt` and `employer` are mostly null.
pub fn credit_table(rows: usize, seed: u64) -> DataTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let cols = vec![
        ("id".to_string(), floats(r, rows, 0.0, |_, i| i as f64)),
        (
            "age".to_string(),
            floats(r, rows, 0.05, |g, _| g.random_range(21..75) as f64),
        ),
        (
            "income".to_string(),
            floats(r, rows, 0.15, |g, _| (g.random_range(1500.0..18000.0_f64)).round()),
        ),
        (
            "limit_bal".to_string(),
            floats(r, rows, 0.0, |g, _| g.random_range(1..50) as f64 * 10000.0),
        ),
        (
            "bill_amt".to_string(),
            floats(r, rows, 0.45, |g, _| (g.random_range(0.0..90000.0_f64)).round()),
        ),
        (
            "pay_status".to_string(),
            categories(r, rows, 0.02, &["current", "late_30", "late_60", "late_90"]),
        ),
        (
            "employer".to_string(),
            categories(r, rows, 0.6, &["bank", "gov", "retail", "tech", "self"]),
        ),
        (
            "default".to_string(),
            floats(r, rows, 0.0, |g, _| f64::from(g.random::<f64>() < 0.22)),
        ),
    ];
    DataTable::new(cols).expect("generated columns are consistent")
}

/// Five numeric columns `c0..c4` with increasing null rates (c4 about 70%)
/// and a categorical column `k`.
pub fn random_table(rows: usize, seed: u64) -> DataTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut cols = Vec::new();
    for (i, nulls) in [0.0, 0.05, 0.1, 0.3, 0.7].into_iter().enumerate() {
        let col = floats(r, rows, nulls, |g, _| {
            (g.random_range(-100.0..100.0_f64) * 4.0).round() / 4.0
        });
        cols.push((format!("c{i}"), col));
    }
    cols.push(("k".to_string(), categories(r, rows, 0.05, &["a", "b", "c", "d", "e"])));
    DataTable::new(cols).expect("generated columns are consistent")
}

/// Named tables available to `read_csv`.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    tables: BTreeMap<String, DataTable>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, table: DataTable) {
        self.tables.insert(name.into(), table);
    }

    /// Loads a CSV path or synthetic URI, registering it under its full name
    /// and its file name. Returns the table name.
    pub fn register_uri(&mut self, uri: &str) -> Result<String, EngineError> {
        if uri.starts_with("synthetic:") {
            let spec = SyntheticSpec::parse(uri)?;
            let table = spec.generate();
            let name = spec.table_name();
            self.tables.insert(uri.to_string(), table.clone());
            self.tables.insert(name.clone(), table);
            return Ok(name);
        }
        let table = read_csv_file(Path::new(uri))?;
        if let Some(base) = basename(uri) {
            self.tables.insert(base.to_string(), table.clone());
        }
        self.tables.insert(uri.to_string(), table);
        Ok(uri.to_string())
    }

    fn lookup(&self, path: &str) -> Option<&DataTable> {
        self.tables
            .get(path)
            .or_else(|| basename(path).and_then(|b| self.tables.get(b)))
    }

    /// By exact name, then file name, then from disk (remembered).
    pub fn resolve(&mut self, path: &str) -> Result<DataTable, EngineError> {
        if let Some(t) = self.lookup(path) {
            return Ok(t.clone());
        }
        let t = if path.starts_with("synthetic:") {
            SyntheticSpec::parse(path)?.generate()
        } else {
            read_csv_file(Path::new(path))?
        };
        self.tables.insert(path.to_string(), t.clone());
        Ok(t)
    }

    /// Row count of an already known table.
    pub fn row_count(&self, path: &str) -> Option<usize> {
        self.lookup(path).map(DataTable::row_count)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }
}

fn basename(path: &str) -> Option<&str> {
    Path::new(path).file_name().and_then(|s| s.to_str())
}
