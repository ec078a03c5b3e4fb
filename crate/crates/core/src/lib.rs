//! Exact-arithmetic machinery for directed latency and asymmetric TSP-path
//! rounding at desk scale.
//!
//! Everything runs over exact rationals: metrics, LP solves, duals, flow
//! computations and every certificate inequality. There is no floating-point
//! mode; tolerances in the test suites are exact rational comparisons.

pub mod rat;
pub mod metric;
pub mod lp;
pub mod flow;
pub mod oracle;
pub mod latency_lp;
pub mod atspp;
pub mod regret;
pub mod dirlat;

pub use metric::{Metric, ScaledInstance};
pub use rat::Rat;
