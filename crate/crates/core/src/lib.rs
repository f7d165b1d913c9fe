//! Recoverable mutual exclusion under an adversarial scheduler.
//!
//! The crate has four layers:
//!
//! * [`model`]: registers, schedules, executions and RMR accounting under the
//!   CC and DSM cost models.
//! * [`algorithm`]: the [`Program`](algorithm::Program) interface, sample
//!   locks and trace-level assumption checks.
//! * [`compliance`]: schedule arrays indexed by process subsets and the
//!   ten-invariant compliance checker.
//! * [`adversary`]: the round-by-round construction that forces RMRs on the
//!   surviving processes.
//!
//! [`oracle`] holds small brute-force cross-checks used by the test suite and
//! the `explore` command.

pub mod adversary;
pub mod algorithm;
pub mod compliance;
pub mod model;
pub mod oracle;
mod process_set;

pub use process_set::{IntervalIter, ProcessSet, SubsetKey, MAX_PROCESSES};

/// `⌈log₂ n⌉`, with a floor of 1 so budgets never vanish.
pub fn ceil_log2(n: usize) -> u32 {
    if n <= 2 {
        1
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

/// `log₂ n` as a float, for the bound checks.
pub fn log2(n: usize) -> f64 {
    (n as f64).log2()
}
