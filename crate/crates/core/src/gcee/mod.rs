//! Graph-based complementary enhancement encoder.
//!
//! A stack of dynamic-graph edge convolutions turns each frame into per-point
//! features. The complementary feature extractor then pools the salient
//! features of a primary frame, erases the most correlated region from the
//! following (supplementary) frame and pools what is left, so each frame
//! vector carries both the dominant cue and a complementary one.

mod backbone;
mod cfe;
mod edge_conv;
mod encoder;
mod eraser;

pub use backbone::{Backbone, BackboneCache};
pub use cfe::{Cfe, CfeCache, SalientCache};
pub use edge_conv::{edge_conv, EdgeConv, EdgeConvCache};
pub use encoder::{EncoderConfig, Gcee, SequenceCache};
pub use eraser::{binarize, binarize_with_graph, correlate, correlate_backward, erase, CorrelateGrad, EraseMask};
