//! Message-passing models: aggregation, updating, training, and metrics.

pub mod metrics;
pub mod mlp;
pub mod model;
pub mod tape;

pub use metrics::{macro_f1, micro_f1};
pub use mlp::{train_mlp, MlpModel};
pub use model::{
    aggregate, forward, gradient, load_model, node_embeddings, save_model, train, update,
    Aggregator, GatLayerParams, GnnConfig, GnnLayer, GnnModel, PosteriorMatrix, Updater,
};
