//! Multi-kernel exponential Hawkes models for up/down mid-price event
//! streams: simulation, closed-form moments, likelihood-based
//! calibration, residual diagnostics and post-fit responsiveness analytics.

// `!(x > 0.0)` is used on purpose so that NaN inputs fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod concave;
pub mod diagnostics;
pub mod error;
pub mod estimate;
pub mod ingest;
pub mod layout;
pub mod likelihood;
pub mod model;
pub mod moments;
pub mod simulate;
pub mod stream;

pub use error::{HawkesError, Result};
pub use model::{advance_state, apply_event, intensity_at, ConstraintProfile, MarkovState, ModelParams};
pub use stream::{EventRecord, EventStream};

/// Version tag written into every JSON document.
pub const SCHEMA_VERSION: u32 = 1;
