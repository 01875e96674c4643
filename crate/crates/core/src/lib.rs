//! Sewer-network leak detection: hydraulic simulation, sensor placement,
//! physics-constrained state estimation, mixture-of-experts forecasting,
//! streaming anomaly detection, localization and reporting.
// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod augmentation;
pub mod forecasting;
pub mod hydraulics;
pub mod io;
pub mod localization;
pub mod network;
pub mod placement;
pub mod reporting;
pub mod rtca;
pub mod harness;
