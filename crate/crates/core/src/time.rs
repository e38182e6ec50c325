//! Virtual time.
//!
//! All scheduling decisions, think-time windows and latencies are accounted
//! in integer virtual microseconds so that replays are exact and
//! reproducible regardless of host speed.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Sub, SubAssign};

use serde::{Deserialize, Serialize};

/// A span of virtual time, in microseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VDuration(u64);

impl VDuration {
    pub const ZERO: VDuration = VDuration(0);

    pub const fn from_micros(us: u64) -> Self {
        VDuration(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        VDuration(ms * 1_000)
    }

    /// Rounds to the nearest microsecond; negative and non-finite inputs clamp to zero.
    pub fn from_secs_f64(secs: f64) -> Self {
        if !secs.is_finite() || secs <= 0.0 {
            return VDuration::ZERO;
        }
        VDuration((secs * 1e6).round() as u64)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1e3
    }

    pub fn saturating_sub(self, rhs: VDuration) -> VDuration {
        VDuration(self.0.saturating_sub(rhs.0))
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl Add for VDuration {
    type Output = VDuration;
    fn add(self, rhs: VDuration) -> VDuration {
        VDuration(self.0 + rhs.0)
    }
}

impl AddAssign for VDuration {
    fn add_assign(&mut self, rhs: VDuration) {
        self.0 += rhs.0;
    }
}

impl Sub for VDuration {
    type Output = VDuration;
    fn sub(self, rhs: VDuration) -> VDuration {
        VDuration(self.0 - rhs.0)
    }
}

impl SubAssign for VDuration {
    fn sub_assign(&mut self, rhs: VDuration) {
        self.0 -= rhs.0;
    }
}

impl Sum for VDuration {
    fn sum<I: Iterator<Item = VDuration>>(iter: I) -> VDuration {
        VDuration(iter.map(|d| d.0).sum())
    }
}

impl fmt::Display for VDuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 >= 1_000_000 {
            write!(f, "{:.3}s", self.as_secs_f64())
        } else {
            write!(f, "{:.3}ms", self.as_millis_f64())
        }
    }
}

/// A monotone virtual clock. Only the simulator and the scheduler advance it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VirtualClock {
    now: VDuration,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> VDuration {
        self.now
    }

    pub fn advance(&mut self, by: VDuration) {
        self.now += by;
    }

    /// Moves the clock forward to `t`; never moves it backwards.
    pub fn advance_to(&mut self, t: VDuration) {
        if t > self.now {
            self.now = t;
        }
    }
}
