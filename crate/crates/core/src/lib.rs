//! Sequential change detection and change-region localization for
//! spatio-temporal point processes.
//!
//! The primary detector accumulates a weighted Hyvärinen-score anomaly
//! `Δ(x) = ψ₀(x) − ψ₁(x)` over an estimated window `[τ̂, t)` and region `Ω̂`,
//! alternating exact updates of the two. Baselines, threshold calibration and
//! an evaluation harness sit alongside.

#![forbid(unsafe_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod baselines;
pub mod calibrate;
pub mod detect;
pub mod evaluate;
pub mod events;
pub mod geometry;
pub mod monitor;
pub mod plot;
pub mod score;
pub mod simulate;

pub use error::{Error, Result};
pub use events::{transform_event, Domain, Event, EventStream, HistoryFilter, TransformedEvent};
pub use geometry::{dilate, erode, jaccard, region_area, Rect, RegionUnion};
pub use simulate::{intensity_at, simulate, stationary_intensity, ChangeScenario, HawkesParams, KernelKind};
