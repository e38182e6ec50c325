//! Think-time scheduling: which operator to run next, and the session
//! driver that interleaves interactions with background work.

mod policy;
mod session;
pub mod wall;

pub use policy::{maybe_speculate, PolicyError, Speculation, UtilityContext};
pub use session::{GcEvent, InteractionOutcome, Metrics, SchedConfig, Session, SessionError};
