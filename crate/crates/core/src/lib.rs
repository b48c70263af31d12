//! Scene-aware blind portrait quality assessment.
//!
//! The crate is split along the pipeline:
//!
//! * [`scene`] holds the pure aggregation math: top-k scene selection,
//!   per-scene affine rescaling and the weighted final score.
//! * [`dataset`] loads long-format manifests, builds scene-disjoint splits,
//!   samples patches and generates synthetic verification data.
//! * [`network`] is a small CPU network (toy backbone, scene classifier,
//!   hypernetwork quality head) with hand-written backward passes.
//! * [`training`] contains the multitask losses, schedules, Adam and the
//!   epoch loop.
//! * [`evaluation`] computes per-scene correlation metrics, median
//!   aggregation, benchmark tables and classification histograms.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod network;
pub mod scene;
pub mod training;
pub mod util;

pub use error::{Error, Result};
