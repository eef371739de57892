//! On-disk formats and synthetic stream generation.

mod checkpoint;
mod format;
mod synthetic;

pub use checkpoint::{
    checkpoint_state, read_checkpoint, restore_state, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use format::{
    read_embedding_stream, write_embedding_file, EmbeddingFileHeader, EmbeddingReader, FLAG_LABELS,
    FLAG_NORMALIZED, FORMAT_VERSION, HEADER_LEN, MAGIC,
};
pub use synthetic::{generate_synthetic, random_class_means, SyntheticData, SyntheticSpec};
