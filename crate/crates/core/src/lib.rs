//! Point-cloud classification with interpretability baked in: a small f64
//! autodiff core, geometric message-passing backbones, post-hoc and
//! self-interpretable attribution methods, fidelity/agreement metrics, and a
//! reproducible experiment harness.

pub mod backbones;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod posthoc;
pub mod relax;
pub mod scores;
pub mod selfinterp;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use scores::ImportanceScores;
pub use tape::{Gradients, Tape, VarId};
pub use tensor::Tensor;
