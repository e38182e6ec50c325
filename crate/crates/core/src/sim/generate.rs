//! Random session traces over the synthetic `random` table.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::trace::{Trace, TraceEvent, TraceHeader};
use crate::behavior::ThinkTimeModel;

#[derive(Debug, Clone, PartialEq)]
pub struct GenOptions {
    pub cells: usize,
    pub rows: usize,
    /// Chance that a cell only binds variables and shows nothing.
    pub distractor_rate: f64,
    /// Multiplier on sampled think times.
    pub think_scale: f64,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            cells: 12,
            rows: 20_000,
            distractor_rate: 0.5,
            think_scale: 1.0,
        }
    }
}

const NUMERIC: [&str; 5] = ["c0", "c1", "c2", "c3", "c4"];
const CATS: [&str; 5] = ["a", "b", "c", "d", "e"];
const CMPS: [&str; 6] = ["<", "<=", ">", ">=", "==", "!="];

struct Gen {
    rng: ChaCha8Rng,
    /// Variables holding tables derived from `df`.
    tables: Vec<String>,
    /// Variables holding columns.
    columns: Vec<String>,
    next: usize,
}

impl Gen {
    fn fresh(&mut self, prefix: &str) -> String {
        self.next += 1;
        format!("{prefix}{}", self.next)
    }

    fn table(&mut self) -> String {
        let i = self.rng.random_range(0..self.tables.len());
        self.tables[i].clone()
    }

    fn column_name(&mut self) -> &'static str {
        NUMERIC[self.rng.random_range(0..NUMERIC.len())]
    }

    fn column_expr(&mut self) -> String {
        if !self.columns.is_empty() && self.rng.random_bool(0.3) {
            let i = self.rng.random_range(0..self.columns.len());
            return self.columns[i].clone();
        }
        let t = self.table();
        let c = self.column_name();
        format!("{t}['{c}']")
    }

    fn threshold(&mut self) -> String {
        let v = self.rng.random_range(-400..400) as f64 / 4.0;
        format!("{v}")
    }

    fn filter_expr(&mut self) -> String {
        let t = self.table();
        if self.rng.random_bool(0.2) {
            let cat = CATS[self.rng.random_range(0..CATS.len())];
            let op = if self.rng.random_bool(0.5) { "==" } else { "!=" };
            return format!("{t}[{t}['k'] {op} '{cat}']");
        }
        let c = self.column_name();
        let op = CMPS[self.rng.random_range(0..CMPS.len())];
        let th = self.threshold();
        format!("{t}[{t}['{c}'] {op} {th}]")
    }

    /// A statement that binds something and shows nothing.
    fn binding(&mut self) -> String {
        match self.rng.random_range(0..6) {
            0 => {
                let v = self.fresh("f");
                let e = self.filter_expr();
                self.tables.push(v.clone());
                format!("{v} = {e}")
            }
            1 => {
                let v = self.fresh("x");
                let e = self.column_expr();
                self.columns.push(v.clone());
                format!("{v} = {e}")
            }
            2 => {
                let v = self.fresh("g");
                let t = self.table();
                self.tables.push(v.clone());
                format!("{v} = {t}.fillna(0)")
            }
            3 => {
                let v = self.fresh("s");
                let c = self.column_expr();
                format!("{v} = {c}.sum()")
            }
            4 => {
                let v = self.fresh("a");
                let t = self.table();
                let c = self.column_name();
                self.tables.push(v.clone());
                format!("{v} = {t}.assign('z', {t}['{c}'])")
            }
            _ => {
                let v = self.fresh("d");
                let t = self.table();
                let th = [0.5, 0.8, 0.9][self.rng.random_range(0..3)];
                self.tables.push(v.clone());
                format!("{v} = {t}.drop_columns_below_threshold({th})")
            }
        }
    }

    /// A statement ending in an interaction.
    fn interaction(&mut self) -> String {
        let k = [3, 5, 10][self.rng.random_range(0..3)];
        match self.rng.random_range(0..12) {
            0 => format!("{}.head()", self.table()),
            1 => format!("{}.tail({k})", self.table()),
            2 => format!("{}.columns", self.table()),
            3 => format!("{}.head({k})", self.column_expr()),
            4 => format!("{}.value_counts()", self.column_expr()),
            5 => {
                let t = self.table();
                format!("{t}['k'].value_counts()")
            }
            6 => format!("{}.head()", self.filter_expr()),
            7 => {
                let t = self.table();
                let c = self.column_name();
                format!("{t}.sort_values('{c}').head({k})")
            }
            8 => {
                let t = self.table();
                format!("{t}.groupby_mean('k').head()")
            }
            9 => format!("{}.mean().head()", self.table()),
            10 => {
                let c = self.column_expr();
                format!("{c}.fillna({c}.mean()).tail()")
            }
            _ => {
                // deliberately failing now and then
                if self.rng.random_bool(0.3) {
                    format!("{}['missing'].head()", self.table())
                } else {
                    format!("{}.drop_columns_below_threshold(0.8).columns", self.table())
                }
            }
        }
    }
}

/// A trace of `opts.cells` cells after the initial load; think times are
/// drawn from `think`.
pub fn generate_random_trace(seed: u64, opts: &GenOptions, think: &ThinkTimeModel) -> Trace {
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
        tables: vec!["df".into()],
        columns: vec![],
        next: 0,
    };
    let mut events = vec![TraceEvent {
        think: Some(0.0),
        cell: "df = read_csv('data.csv')".into(),
    }];
    for _ in 0..opts.cells {
        let mut lines = Vec::new();
        let extra = g.rng.random_range(0..3);
        for _ in 0..extra {
            lines.push(g.binding());
        }
        if !g.rng.random_bool(opts.distractor_rate.clamp(0.0, 1.0)) {
            lines.push(g.interaction());
        } else if lines.is_empty() {
            lines.push(g.binding());
        }
        let t = think.sample(&mut g.rng) * opts.think_scale.max(0.0);
        events.push(TraceEvent {
            think: Some((t * 1000.0).round() / 1000.0),
            cell: lines.join("\n"),
        });
    }
    Trace {
        header: TraceHeader {
            data: vec![format!("synthetic:random?rows={}&seed={seed}&name=data.csv", opts.rows)],
            seed,
        },
        events,
    }
}
