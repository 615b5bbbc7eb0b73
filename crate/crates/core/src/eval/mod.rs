//! Cross-view retrieval scoring.

mod metrics;
mod run;

pub use metrics::{cosine_similarity, evaluate, EvalReport, GallerySplit, QueryResult, PROTOCOL};
pub use run::{embed_sequences, evaluate_model, write_evaluation, Evaluation, CMC_FILE, EMBEDDINGS_FILE, REPORT_FILE};
