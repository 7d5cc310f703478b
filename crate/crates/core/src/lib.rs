//! Interpretability toolkit for feedforward scene-classification CNNs.
//!
//! Runs a declarative AlexNet-style network on the CPU and exposes the
//! machinery built on top of it: theoretical and occlusion-based empirical
//! receptive fields, minimal-image simplification by gradient-domain segment
//! removal, single-pass unit-based localization with Jaccard/AP evaluation,
//! the unit annotation protocol, and object-emergence statistics.

pub mod annotation;
pub mod emergence;
pub mod error;
pub mod image;
pub mod metrics;
pub mod net;
pub mod rfest;
pub mod rng;
pub mod segmenter;
pub mod simplify;
pub mod synthetic;
pub mod tensor;

pub use annotation::{AnnotationRecord, AnnotationService, SemanticGroup};
pub use error::{Error, Result};
pub use image::{Image, LabelImage, Mask};
pub use net::{
    theoretical_rf, ActivationTrace, ForwardOptions, Network, NetworkSpec, RFGeometry, Unit,
    WeightStore,
};
pub use rfest::{DiscrepancyMap, EmpiricalRF};
pub use rng::Rng;
pub use segmenter::{PixelBox, UnitTag};
pub use simplify::{SegmentMap, SimplificationTrace};
pub use tensor::Tensor;
