//! Transformer-encoder fusion of per-frame vectors into one sequence vector.

mod transformer;

pub use transformer::{sinusoidal_encoding, stack, EncoderLayer, FusionCache, LayerCache, TemporalConfig, TemporalFusion};
