//! Positive-augmented contrastive captioning metrics: projection-head
//! training, reference-free and reference-based scoring for images and
//! videos, and the human-correlation protocols used to evaluate them.

pub mod dataset;
pub mod embedding;
pub mod error;
pub mod io;
pub mod loss;
pub mod optim;
pub mod protocols;
pub mod rng;
pub mod scoring;
pub mod stats;
pub mod train;

pub use dataset::{AugmentedTuple, FeatureStore, TrainSplits};
pub use embedding::{
    cosine, l2_normalize, mean_pool, project, DualHeads, EmbeddingVector, FeatureVector,
    ProjectionHead,
};
pub use error::{Error, Result};
pub use io::checkpoint::{Checkpoint, CheckpointMeta};
pub use io::container::{ContainerEntry, ContainerError, EmbeddingContainer, Role};
pub use loss::{info_nce, pac_loss, pac_loss_grad, LossConfig, PacGradient};
pub use optim::{adamw_step, AdamWParams, OptimizerState};
pub use protocols::{
    foil_accuracy, pairwise_accuracy, system_report, Category, FoilPair, PairwiseAccuracy,
    PairwiseConfig, PairwisePair, Winner,
};
pub use rng::SeedStreams;
pub use scoring::{
    batch_score, pac_score, ref_pac_score, ref_video_score, video_score, CaptionScorer,
    EmbeddingStore, IdfTable, Mode, ScoreConfig, ScoreRecord, ScoreReport, ScoredItem,
    TokenSequence, Variant,
};
pub use stats::{kendall_tau_b, kendall_tau_c, spearman_rho, CorrelationStat};
pub use train::{grid_search, train, HeadInit, TrainConfig, TrainOutcome};
