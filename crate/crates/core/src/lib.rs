//! Feature-space unsupervised object discovery: PCA heatmaps over dense
//! feature maps, weakly supervised contrastive losses with hand-written
//! gradients, box generation, metrics, and a small synthetic trainer.

pub mod boxes;
pub mod eigen;
pub mod error;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod oracle;
pub mod pca;
pub mod selfcheck;
pub mod toy;
pub mod types;
pub mod weak_labels;

pub use error::{Error, Result};
pub use types::{normalize_unit, BoundingBox, EmbeddingBatch, FeatureMap, ProjectionMap, SegMask};
