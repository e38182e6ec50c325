//! Opportunistic evaluation for interactive dataframe sessions.
//!
//! Cells written in a small dataframe language are lowered into an operator
//! DAG. Interactions (`head`, `tail`, `value_counts`, `columns`) run their
//! critical path immediately; everything else is deferred to the user's
//! think time, executed in preemptible partitions, and cached under a memory
//! budget. A virtual-time simulator replays session traces against an eager
//! baseline.

pub mod behavior;
pub mod cache;
pub mod cli;
pub mod cost;
pub mod dag;
pub mod dsl;
pub mod engine;
pub mod sched;
pub mod sim;
pub mod time;
