use std::fmt;
use std::str::FromStr;

use super::config::RunConfig;
use super::train::{train, Trained};
use crate::backbone::{MixerKind, ModelConfig};
use crate::datamodel::Dataset;
use crate::error::{Error, Result};
use crate::fusion::FusionMode;

/// Model variants compared against the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Full,
    WoGraph,
    WoText,
    WoMeta,
    WoMoe,
    MoeToMlp,
    Experts8,
    Experts4,
    Concatenate,
    MeanPooling,
    MaxPooling,
    WoUserProfile,
}

impl Variant {
    pub const ALL: [Variant; 12] = [
        Variant::Full,
        Variant::WoGraph,
        Variant::WoText,
        Variant::WoMeta,
        Variant::WoMoe,
        Variant::MoeToMlp,
        Variant::Experts8,
        Variant::Experts4,
        Variant::Concatenate,
        Variant::MeanPooling,
        Variant::MaxPooling,
        Variant::WoUserProfile,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WoGraph => "wo_graph",
            Variant::WoText => "wo_text",
            Variant::WoMeta => "wo_meta",
            Variant::WoMoe => "wo_moe",
            Variant::MoeToMlp => "moe_to_mlp",
            Variant::Experts8 => "experts_8",
            Variant::Experts4 => "experts_4",
            Variant::Concatenate => "concatenate",
            Variant::MeanPooling => "mean_pooling",
            Variant::MaxPooling => "max_pooling",
            Variant::WoUserProfile => "wo_user_profile",
        }
    }

    /// Row label as printed in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full model",
            Variant::WoGraph => "w/o graph view",
            Variant::WoText => "w/o text view",
            Variant::WoMeta => "w/o meta view",
            Variant::WoMoe => "w/o MoE",
            Variant::MoeToMlp => "replace MoE with MLP",
            Variant::Experts8 => "8 experts",
            Variant::Experts4 => "4 experts",
            Variant::Concatenate => "concatenate",
            Variant::MeanPooling => "mean-pooling",
            Variant::MaxPooling => "max-pooling",
            Variant::WoUserProfile => "w/o user profile",
        }
    }

    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let mut m = base.clone();
        match self {
            Variant::Full => {}
            Variant::WoGraph => m.branches.graph = false,
            Variant::WoText => m.branches.text = false,
            Variant::WoMeta => m.branches.meta = false,
            Variant::WoMoe => m.mixer = MixerKind::None,
            Variant::MoeToMlp => m.mixer = MixerKind::Mlp,
            Variant::Experts8 => m.moe.n_experts = 8,
            Variant::Experts4 => m.moe.n_experts = 4,
            Variant::Concatenate => m.fusion.mode = FusionMode::Concatenate,
            Variant::MeanPooling => m.fusion.mode = FusionMode::MeanPool,
            Variant::MaxPooling => m.fusion.mode = FusionMode::MaxPool,
            Variant::WoUserProfile => m.user_profile = false,
        }
        m
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Variant {
    type Err = Error;

    /// Accepts the id or the table label, case-insensitively.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Variant::ALL
            .into_iter()
            .find(|v| v.id() == s || v.label().to_ascii_lowercase() == s)
            .ok_or_else(|| {
                let ids: Vec<&str> = Variant::ALL.iter().map(|v| v.id()).collect();
                Error::Config(format!("unknown ablation variant {s:?}; expected one of {}", ids.join(", ")))
            })
    }
}

/// Trains and evaluates `variant` of the base configuration.
pub fn ablate(ds: &Dataset, base: &RunConfig, variant: Variant) -> Result<Trained> {
    let cfg = RunConfig {
        model: variant.apply(&base.model),
        train: base.train.clone(),
    };
    let mut trained = train(ds, &cfg)?;
    trained.report.kind = "ablate".into();
    trained.report.variant = Some(variant.id().to_string());
    Ok(trained)
}
