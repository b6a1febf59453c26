//! Stable one-to-one matching for set-prediction detectors.
//!
//! * [`geometry`]: boxes, IoU/GIoU, L1, NMS.
//! * [`loss`]: focal and position-supervised classification losses.
//! * [`matching`]: default and position-modulated matching costs, Hungarian
//!   assignment and a brute-force oracle.
//! * [`stability`]: the unstable-score metric.
//! * [`fusion`]: simple, U-like and dense memory fusion.
//! * [`simlab`]: seeded scenes and a gradient-descent harness.
//! * [`gradcheck`]: finite-difference verification of every analytic gradient.
//! * [`io`]: scene and experiment-config files.

pub mod error;
pub mod fusion;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod loss;
pub mod matching;
pub mod simlab;
pub mod stability;

pub use error::{Error, Result};
pub use geometry::BBox;
pub use loss::LossConfig;
pub use matching::{Assignment, CostMatrix, CostWeights, GroundTruth, Prediction};
