//! The FmFM model family with per-field reductions.

mod forward;
mod interaction;
mod model;
mod span;


pub use forward::{ForwardTrace, GradBuffer, Gradient, Slot};
pub use interaction::{pair_index, InteractionSpec, Variant};
pub use model::{ModelParams, ModelSpec, TargetScale, MODEL_FORMAT, MODEL_VERSION};
pub use span::{least_squares, PairwiseSpanFit, SpanFit, SAMPLES_PER_FUNCTION};
