//! Interaction logs, item embeddings, leave-last-out splits and cold-start
//! tagging.

mod embeddings;
mod log;
mod split;

pub use embeddings::{
    align_embeddings, load_embeddings, read_embedding_file, read_embeddings, read_item_tokens,
    write_embedding_file, write_embeddings, write_item_tokens, EmbeddingMatrix, EMBEDDING_MAGIC,
};
pub use log::{load_interactions, parse_interactions, Interaction, InteractionLog, LoadOptions};
pub use split::{split_leave_last_out, tag_cold_start, ColdStartTags, Split, COLD_THRESHOLD};
