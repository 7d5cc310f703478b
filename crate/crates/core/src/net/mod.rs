//! Network specification, weights, forward pass and receptive-field geometry.

pub mod forward;
pub mod rank;
pub mod rf;
pub mod spec;
pub mod weights;

pub use forward::{ActivationTrace, ForwardOptions, Network};
pub use rank::{rank_images, unit_scores, RankMode};
pub use rf::{theoretical_rf, RFGeometry};
pub use spec::{FeatureShape, InputSpec, LayerOp, LayerSpec, NetworkSpec, Unit};
pub use weights::WeightStore;
