//! Where selected neurons sit, and how aligned texts relate across layers.

mod embed;
mod layers;

pub use embed::{
    cosine, dominance_curve, layer_embeddings, map_to_language, sentence_embedding, ses_curve, ParallelEmbeddings,
    SesCurve,
};
pub use layers::{layer_distribution, LayerHistogram, LAYER_COLUMN};
