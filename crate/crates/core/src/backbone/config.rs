use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::graph::GraphEncoderConfig;
use crate::moe::MoEConfig;
use crate::nn::EncoderConfig;
use crate::profile::ProfileConfig;

/// What sits between a modality encoder and the fusion layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixerKind {
    Moe,
    /// One dense two-layer MLP per modality.
    Mlp,
    /// Modality vector passed straight to fusion.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Branches {
    pub graph: bool,
    pub text: bool,
    pub meta: bool,
}

impl Default for Branches {
    fn default() -> Self {
        Branches {
            graph: true,
            text: true,
            meta: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoESettings {
    pub n_experts: usize,
    pub k: usize,
    pub hidden: usize,
    pub noisy: bool,
}

impl Default for MoESettings {
    fn default() -> Self {
        MoESettings {
            n_experts: 2,
            k: 1,
            hidden: 1024,
            noisy: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSettings {
    pub mode: FusionMode,
    pub dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub layers: usize,
}

impl Default for FusionSettings {
    fn default() -> Self {
        FusionSettings {
            mode: FusionMode::Transformer,
            dim: 256,
            heads: 4,
            ff_dim: 1024,
            layers: 4,
        }
    }
}

/// Architecture of the whole model. Defaults are the paper-scale values;
/// [`ModelConfig::desk`] is a small preset for CPU runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub text_dim: usize,
    pub meta_dim: usize,
    pub meta_hidden: usize,
    pub meta_out: usize,
    pub text_proj: usize,
    pub gnn_hidden: usize,
    pub gnn_out: usize,
    pub gnn_layers: usize,
    pub leaky_slope: f64,
    pub hops: usize,
    pub neighbor_cap: usize,
    pub mixer: MixerKind,
    pub moe: MoESettings,
    pub fusion: FusionSettings,
    pub branches: Branches,
    pub user_profile: bool,
    pub profile: ProfileConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            text_dim: 768,
            meta_dim: 6,
            meta_hidden: 768,
            meta_out: 256,
            text_proj: 256,
            gnn_hidden: 512,
            gnn_out: 256,
            gnn_layers: 2,
            leaky_slope: 0.2,
            hops: 2,
            neighbor_cap: 200,
            mixer: MixerKind::Moe,
            moe: MoESettings::default(),
            fusion: FusionSettings::default(),
            branches: Branches::default(),
            user_profile: true,
            profile: ProfileConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Small dimensions for 64-dim synthetic text on a laptop CPU.
    pub fn desk() -> Self {
        ModelConfig {
            text_dim: 64,
            meta_dim: 6,
            meta_hidden: 32,
            meta_out: 32,
            text_proj: 32,
            gnn_hidden: 32,
            gnn_out: 32,
            gnn_layers: 2,
            moe: MoESettings {
                hidden: 64,
                ..MoESettings::default()
            },
            fusion: FusionSettings {
                dim: 32,
                heads: 4,
                ff_dim: 64,
                layers: 2,
                ..FusionSettings::default()
            },
            profile: ProfileConfig {
                encoder: EncoderConfig {
                    d_model: 64,
                    heads: 4,
                    ff_dim: 128,
                    layers: 2,
                    dropout: 0.1,
                },
                ..ProfileConfig::default()
            },
            ..ModelConfig::default()
        }
    }

    pub fn graph_encoder(&self, dropout: f64) -> GraphEncoderConfig {
        let mut dims = vec![self.text_dim + self.meta_dim];
        dims.extend(std::iter::repeat_n(self.gnn_hidden, self.gnn_layers.saturating_sub(1)));
        dims.push(self.gnn_out);
        GraphEncoderConfig {
            dims,
            leaky_slope: self.leaky_slope,
            dropout,
        }
    }

    pub fn moe_config(&self, d_in: usize) -> MoEConfig {
        MoEConfig {
            n_experts: self.moe.n_experts,
            k: self.moe.k,
            d_in,
            hidden: self.moe.hidden,
            d_out: self.fusion.dim,
            noisy: self.moe.noisy,
        }
    }

    pub fn fusion_encoder(&self, dropout: f64) -> EncoderConfig {
        EncoderConfig {
            d_model: self.fusion.dim,
            heads: self.fusion.heads,
            ff_dim: self.fusion.ff_dim,
            layers: self.fusion.layers,
            dropout,
        }
    }

    /// Output width of each enabled branch before mixing: (meta, text, graph).
    pub fn branch_dims(&self) -> [usize; 3] {
        [self.meta_out, self.text_proj, self.gnn_out]
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("text_dim", self.text_dim),
            ("meta_dim", self.meta_dim),
            ("meta_hidden", self.meta_hidden),
            ("meta_out", self.meta_out),
            ("text_proj", self.text_proj),
            ("gnn_hidden", self.gnn_hidden),
            ("gnn_out", self.gnn_out),
            ("gnn_layers", self.gnn_layers),
            ("hops", self.hops),
            ("neighbor_cap", self.neighbor_cap),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model config: {name} must be positive")));
        }
        if !self.branches.graph && !self.branches.text && !self.branches.meta {
            return Err(Error::Config("model config: every branch is disabled".into()));
        }
        if self.mixer == MixerKind::Moe {
            self.moe_config(1).validate()?;
        }
        if self.mixer == MixerKind::None {
            for (name, d) in ["meta_out", "text_proj", "gnn_out"].iter().zip(self.branch_dims()) {
                if d != self.fusion.dim {
                    return Err(Error::Config(format!(
                        "without a mixer {name} ({d}) must equal the fusion dim ({})",
                        self.fusion.dim
                    )));
                }
            }
        }
        self.fusion_encoder(0.0).validate("fusion encoder")?;
        if self.branches.graph && self.user_profile {
            self.profile.validate()?;
            if self.profile.encoder.d_model != self.text_dim {
                return Err(Error::Config(format!(
                    "profile d_model {} must equal text_dim {}",
                    self.profile.encoder.d_model, self.text_dim
                )));
            }
        }
        Ok(())
    }
}
