//! JSONL session traces.
//!
//! The first non-blank line is a header naming the data sources and the
//! seed; every following line is one event: the think time before the cell
//! (seconds, optional) and the cell source.
//!
//! ```text
//! {"data": ["synthetic:credit?rows=1000&seed=1&name=credit.csv"], "seed": 7}
//! {"think": 4.5, "cell": "data = read_csv('credit.csv')"}
//! {"cell": "data.head()"}
//! ```

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::behavior::ThinkTimeModel;
use crate::time::VDuration;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    #[serde(default, deserialize_with = "one_or_many")]
    pub data: Vec<String>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEvent {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub think: Option<f64>,
    pub cell: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
}

fn one_or_many<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(String),
        Many(Vec<String>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    })
}

impl Trace {
    pub fn parse(text: &str) -> Result<Trace, SimError> {
        let mut header = None;
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |e: serde_json::Error| SimError::Trace {
                line: i + 1,
                message: e.to_string(),
            };
            if header.is_none() {
                header = Some(serde_json::from_str::<TraceHeader>(line).map_err(err)?);
                continue;
            }
            let ev: TraceEvent = serde_json::from_str(line).map_err(err)?;
            if let Some(t) = ev.think {
                if !t.is_finite() || t < 0.0 {
                    return Err(SimError::Trace {
                        line: i + 1,
                        message: format!("think time must be finite and >= 0, got {t}"),
                    });
                }
            }
            events.push(ev);
        }
        let header = header.ok_or(SimError::Trace {
            line: 0,
            message: "missing header line".into(),
        })?;
        Ok(Trace { header, events })
    }

    /// Relative data paths that do not exist from the working directory
    /// are looked up next to the trace instead.
    pub fn resolve_data_paths(&mut self, base: &Path) {
        for d in &mut self.header.data {
            let p = Path::new(d.as_str());
            if d.starts_with("synthetic:") || p.is_absolute() || p.exists() {
                continue;
            }
            let candidate = base.join(p);
            if candidate.exists() {
                *d = candidate.display().to_string();
            }
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for ev in &self.events {
            out.push_str(&serde_json::to_string(ev).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    /// Think time before each event; missing ones are drawn from `model`
    /// with the trace seed.
    pub fn think_times(&self, model: &ThinkTimeModel) -> Vec<VDuration> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.header.seed);
        self.events
            .iter()
            .map(|e| {
                let secs = match e.think {
                    Some(t) => t,
                    None => model.sample(&mut rng),
                };
                VDuration::from_secs_f64(secs)
            })
            .collect()
    }
}
