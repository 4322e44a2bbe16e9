//! Fusion of the three modality vectors into two class logits.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Init, ParamId, ParamRegistry, Var};
use crate::error::{Error, Result};
use crate::nn::{Encoder, EncoderConfig, Forward, Linear};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    Transformer,
    Concatenate,
    MeanPool,
    MaxPool,
}

impl FusionMode {
    pub fn name(self) -> &'static str {
        match self {
            FusionMode::Transformer => "transformer",
            FusionMode::Concatenate => "concatenate",
            FusionMode::MeanPool => "mean_pool",
            FusionMode::MaxPool => "max_pool",
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transformer" => Ok(FusionMode::Transformer),
            "concatenate" => Ok(FusionMode::Concatenate),
            "mean_pool" | "mean-pooling" => Ok(FusionMode::MeanPool),
            "max_pool" | "max-pooling" => Ok(FusionMode::MaxPool),
            other => Err(Error::Config(format!("unknown fusion mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Fusion {
    Transformer {
        dim: usize,
        /// `[3·dim]`, added to the token sequence before encoding.
        positions: ParamId,
        encoder: Encoder,
        out: Linear,
    },
    Baseline {
        dim: usize,
        mode: FusionMode,
        head: Linear,
    },
}

#[derive(Debug)]
pub struct FusionOutput {
    /// `[batch, 2]`
    pub logits: Var,
    /// Attention nodes of the fusion encoder, one per layer. Their saved
    /// probabilities are `[batch, heads, 3, 3]` over tokens (meta, text, graph).
    pub attention: Vec<Var>,
}

impl Fusion {
    pub fn new(reg: &mut ParamRegistry, mode: FusionMode, encoder: &EncoderConfig) -> Result<Self> {
        let dim = encoder.d_model;
        Ok(match mode {
            FusionMode::Transformer => Fusion::Transformer {
                dim,
                positions: reg.register("fusion.positions", &[3 * dim], Init::Uniform(0.1))?,
                encoder: Encoder::new(reg, "fusion.encoder", encoder.clone())?,
                out: Linear::new(reg, "fusion.out", 3 * dim, 2)?,
            },
            FusionMode::Concatenate => Fusion::Baseline {
                dim,
                mode,
                head: Linear::new(reg, "fusion.head", 3 * dim, 2)?,
            },
            FusionMode::MeanPool | FusionMode::MaxPool => Fusion::Baseline {
                dim,
                mode,
                head: Linear::new(reg, "fusion.head", dim, 2)?,
            },
        })
    }

    pub fn mode(&self) -> FusionMode {
        match self {
            Fusion::Transformer { .. } => FusionMode::Transformer,
            Fusion::Baseline { mode, .. } => *mode,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Fusion::Transformer { dim, .. } | Fusion::Baseline { dim, .. } => *dim,
        }
    }

    /// Logits from `u = [z_m, z_t, z_g]`, each `[batch, dim]`.
    pub fn forward(&self, f: &mut Forward, zm: Var, zt: Var, zg: Var) -> Result<FusionOutput> {
        let dim = self.dim();
        for z in [zm, zt, zg] {
            let s = f.graph.shape(z);
            if s.len() != 2 || s[1] != dim {
                return Err(Error::dim("fusion", &[s, &[dim]]));
            }
        }
        let batch = f.graph.shape(zm)[0];
        match self {
            Fusion::Transformer {
                positions,
                encoder,
                out,
                ..
            } => {
                let u = f.graph.concat(&[zm, zt, zg], 1)?;
                let pos = f.param(*positions);
                let u = f.graph.add(u, pos)?;
                let tokens = f.graph.reshape(u, &[batch * 3, dim])?;
                let enc = encoder.forward(f, tokens, batch, 3, None)?;
                let v = f.graph.reshape(enc.out, &[batch, 3 * dim])?;
                let logits = out.forward(f, v)?;
                Ok(FusionOutput {
                    logits,
                    attention: enc.attention,
                })
            }
            Fusion::Baseline { mode, head, .. } => {
                let pooled = match mode {
                    FusionMode::Concatenate => f.graph.concat(&[zm, zt, zg], 1)?,
                    FusionMode::MeanPool => {
                        let s = f.graph.add(zm, zt)?;
                        let s = f.graph.add(s, zg)?;
                        f.graph.scale(s, 1.0 / 3.0)?
                    }
                    FusionMode::MaxPool => f.graph.maximum(&[zm, zt, zg])?,
                    FusionMode::Transformer => unreachable!("transformer fusion has its own variant"),
                };
                Ok(FusionOutput {
                    logits: head.forward(f, pooled)?,
                    attention: vec![],
                })
            }
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        match self {
            Fusion::Transformer {
                positions,
                encoder,
                out,
                ..
            } => {
                let mut v = vec![*positions];
                v.extend(encoder.params());
                v.extend(out.params());
                v
            }
            Fusion::Baseline { head, .. } => head.params().to_vec(),
        }
    }
}

/// Token index of each report row: graph, text, meta.
const REPORT_ORDER: [usize; 3] = [2, 1, 0];

/// Running average of fusion attention over layers, heads and samples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModalAttention {
    sum: [[f64; 3]; 3],
    samples: usize,
}

impl ModalAttention {
    /// Adds every sample of a batch, given the per-layer attention nodes.
    pub fn add(&mut self, graph: &Graph, attention: &[Var]) -> Result<()> {
        if attention.is_empty() {
            return Ok(());
        }
        let probs: Vec<&[f64]> = attention
            .iter()
            .map(|&a| {
                graph
                    .attention_probs(a)
                    .ok_or_else(|| Error::Contract("fusion attention node carries no probabilities".into()))
            })
            .collect::<Result<_>>()?;
        let batch = graph.shape(attention[0])[0] / 3;
        let heads = probs[0].len() / (9 * batch.max(1));
        let scale = 1.0 / (attention.len() * heads) as f64;
        for b in 0..batch {
            for p in &probs {
                for h in 0..heads {
                    let m = &p[(b * heads + h) * 9..(b * heads + h + 1) * 9];
                    for (i, &qi) in REPORT_ORDER.iter().enumerate() {
                        for (j, &kj) in REPORT_ORDER.iter().enumerate() {
                            self.sum[i][j] += scale * m[qi * 3 + kj];
                        }
                    }
                }
            }
        }
        self.samples += batch;
        Ok(())
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Rows and columns ordered (graph, text, meta).
    pub fn matrix(&self) -> Result<[[f64; 3]; 3]> {
        if self.samples == 0 {
            return Err(Error::Contract("no samples for the modality attention matrix".into()));
        }
        let n = self.samples as f64;
        Ok(self.sum.map(|row| row.map(|v| v / n)))
    }
}
