//! Source training, few-shot adaptation, and target sampling.

mod adapt;
mod features;
mod sample;
mod source;

pub use adapt::{
    adapt, build_guidance, guidance_loss, layer_sweep, write_loss_csv, write_sweep_csv, AdaptConfig, AdaptOutcome,
    Guidance, LayerSet, SweepEntry,
};
pub use features::FeatureExtractor;
pub use sample::{sample_target, Sampled};
pub use source::{batch_bandwidths, graph_mmd2, train_source, SourceTrainConfig, SourceTrainOutcome};
