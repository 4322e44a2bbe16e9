//! End-to-end model: meta encoder, text projection, graph branch, one mixer
//! per modality and the fusion classifier.

mod checkpoint;
mod config;
mod features;
mod model;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{Branches, FusionSettings, MixerKind, MoESettings, ModelConfig};
pub use features::FeatureStore;
pub use model::{spoiler_scores, total_loss, ForwardOutput, LossParts, Mixer, Model, ReviewBatch, MODALITIES};
