//! Sharded graph unlearning toolkit.
//!
//! The pipeline partitions a training graph into balanced shards, trains one
//! compact message-passing GNN per shard, and aggregates shard posteriors
//! (mean, majority vote, or learned importance scores). Node- and
//! edge-unlearning requests are serviced by exact retraining of the single
//! affected shard, which is what makes removal both fast and provable.
//!
//! Modules map onto the pipeline stages:
//!
//! - [`graph`]: graph data model, CSV/edge-list ingestion, snapshots,
//!   synthetic block-model generation, splits, deletion.
//! - [`partition`]: balanced shard assignment (random, capacity-constrained
//!   label propagation, capacity-constrained embedding k-means).
//! - [`gnn`]: message-passing models (GIN/SAGE/GCN/GAT aggregators,
//!   linear/concat/interpolation updaters), training, gradients, embeddings,
//!   an MLP baseline, and F1 metrics.
//! - [`aggregation`]: posterior aggregation and learned importance scores.
//! - [`eraser`]: the orchestrator that owns shards, models and scores,
//!   services unlearning requests, and audits its own invariants.

pub mod aggregation;
pub mod eraser;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod partition;

pub use error::{GerkError, Result};
