//! Evaluation toolkit for input devices used as musical controllers.
//!
//! The crate is organised around the evaluation pipeline:
//!
//! * [`motor`]: Fitts, Meyer and steering laws, difficulty indexes and
//!   least-squares fits producing indexes of performance;
//! * [`taxonomy`]: morphological device descriptors, controller charts and
//!   integral/separable matching;
//! * [`battery`]: seeded trial plans for pointing, steering and musical tasks;
//! * [`metrics`]: per-trial and per-session measurements (movement time,
//!   timing precision, feature control, learnability, explorability);
//! * [`sim`]: simulated performers that obey the laws with known parameters;
//! * [`session`]: session ingestion, the line-delimited log format and the
//!   cross-device comparison report.

pub mod battery;
pub mod metrics;
pub mod motor;
pub mod rng;
pub mod session;
pub mod sim;
pub mod taxonomy;
