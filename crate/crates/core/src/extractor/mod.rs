//! The model: a convolutional stem, junction / offset / node-feature heads,
//! EdgeConv message passing over the detected nodes, and an edge scorer.

mod config;
mod model;
mod params;
mod support;

pub use config::{ModelConfig, Scorer, Support, STEM_WIDTHS};
pub use model::{
    bind, build_support_graph, edgeconv_layer, gnn_forward, heads_forward, model_forward, node_batch, score_pairs, select_cells,
    stem_forward, BoundConv, BoundGnn, BoundParams, BoundScorer, EdgeScores, Grids, ModelOutput, NodeBatch, BN_EPS,
};
pub use params::{ConvLayer, GnnLayer, ModelParams, ScorerParams, CHECKPOINT_MAGIC};
pub use support::{complete_support, knn_support, SupportGraph};
