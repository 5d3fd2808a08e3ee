//! Duration arithmetic in integer microseconds.
//!
//! All simulated times (plan execution, estimation costs, budgets) are kept
//! in whole microseconds so budget comparisons never drift; millisecond
//! floats appear only at the reporting boundary.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Micros(pub u64);

impl Micros {
    pub const ZERO: Micros = Micros(0);

    pub fn from_ms(ms: u64) -> Self {
        Micros(ms * 1_000)
    }

    /// Nearest-microsecond conversion; negative inputs clamp to zero.
    pub fn from_ms_f64(ms: f64) -> Self {
        if !ms.is_finite() || ms <= 0.0 {
            return Micros(0);
        }
        Micros((ms * 1_000.0).round() as u64)
    }

    pub fn as_us(self) -> u64 {
        self.0
    }

    pub fn as_ms_f64(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    /// Multiply by a non-negative factor, rounding to the nearest microsecond.
    pub fn scale(self, factor: f64) -> Self {
        debug_assert!(factor.is_finite() && factor >= 0.0);
        Micros((self.0 as f64 * factor).round() as u64)
    }

    pub fn saturating_sub(self, rhs: Micros) -> Self {
        Micros(self.0.saturating_sub(rhs.0))
    }

    pub fn min(self, rhs: Micros) -> Self {
        Micros(self.0.min(rhs.0))
    }

    pub fn max(self, rhs: Micros) -> Self {
        Micros(self.0.max(rhs.0))
    }
}

impl Add for Micros {
    type Output = Micros;
    fn add(self, rhs: Micros) -> Micros {
        Micros(self.0 + rhs.0)
    }
}

impl AddAssign for Micros {
    fn add_assign(&mut self, rhs: Micros) {
        self.0 += rhs.0;
    }
}

impl Sub for Micros {
    type Output = Micros;
    fn sub(self, rhs: Micros) -> Micros {
        Micros(self.0 - rhs.0)
    }
}

impl Sum for Micros {
    fn sum<I: Iterator<Item = Micros>>(iter: I) -> Micros {
        iter.fold(Micros::ZERO, |a, b| a + b)
    }
}

impl fmt::Display for Micros {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}
