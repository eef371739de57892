//! Streaming test-time adaptation for embedding classifiers.
//!
//! Features arrive one at a time. Each is classified by fusing zero-shot
//! similarities against per-class text embeddings with a Gaussian
//! discriminant whose class means and shared covariance are re-estimated
//! online by a confidence-weighted EM step. See [`harness::run_stream`] for
//! the evaluation loop.

pub mod batch;
pub mod em;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod predictor;
pub mod state;
pub mod stream_io;

pub use em::{adapt_step, e_step, weighted_m_step, Posterior, UpdateScope, UpdateTrace};
pub use error::{Error, Result};
pub use predictor::{
    fused_predict, generative_logits, self_entropy, zero_shot_probs, PredictionOutcome,
};
pub use state::{AdaptConfig, ClassTextEmbeddings, EmbeddingRecord, MixtureState};
