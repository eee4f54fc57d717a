//! Youden's-J-regularized segmentation losses, four-class ground truth for
//! touching cells, instance post-processing and evaluation metrics.
//!
//! Grids are 2D or 3D, stored row-major with the class channel last.

pub mod error;
pub mod gradcheck;
pub mod grid;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod postprocess;
pub mod reduce;
pub mod scene;
pub mod simulators;
pub mod trainer;
pub mod transform;

pub use error::{Error, GridIoError, Result};
pub use grid::{
    argmax, one_hot, softmax, GridShape, InstanceMap, LogitField, ProbabilityField, SemanticMap,
};
pub use losses::{LossKind, LossValue, PairWeights};
pub use metrics::{ConfusionCounts, InstanceMatching, MetricReport};
pub use postprocess::{GapMode, Connectivity, PostprocessConfig};
pub use scene::{generate_scene, SceneKind, SceneSpec};
pub use transform::{to_semantic, ClassMode, TransformConfig};
