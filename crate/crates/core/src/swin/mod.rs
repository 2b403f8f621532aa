//! Hierarchical shifted-window attention classifier.

mod config;
mod model;
mod trace;
pub mod windowing;

pub use config::{HeadKind, LayerGeometry, SwinConfig};
pub use model::{inputs_to_tensor, positive_probability, ClassifierOutput, SwinClassifier};
pub use trace::{AttentionTrace, BlockTrace, FeatureTrace};
