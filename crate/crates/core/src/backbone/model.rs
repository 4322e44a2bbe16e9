use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{MixerKind, ModelConfig};
use super::features::FeatureStore;
use crate::diffcore::{ParamId, ParamRegistry, Tensor, Var};
use crate::error::{Error, Result};
use crate::fusion::Fusion;
use crate::graph::{encode_graph, init_node_features, sample_subgraph, GatAttention, GatLayerParams, HeteroGraph, Subgraph};
use crate::moe::{gate, moe_forward, GateOutput, MoELayer};
use crate::nn::{Forward, Linear, Mlp2};

pub const MODALITIES: [&str; 3] = ["meta", "text", "graph"];

#[derive(Clone, Debug, PartialEq)]
pub enum Mixer {
    Moe(MoELayer),
    Mlp(Mlp2),
    Identity,
}

impl Mixer {
    pub fn params(&self) -> Vec<ParamId> {
        match self {
            Mixer::Moe(m) => m.params(),
            Mixer::Mlp(m) => m.params(),
            Mixer::Identity => vec![],
        }
    }
}

/// Reviews of one mini-batch with their inputs and sampled neighborhood.
#[derive(Clone, Debug, PartialEq)]
pub struct ReviewBatch {
    pub reviews: Vec<usize>,
    pub labels: Vec<u8>,
    /// `[batch, text_dim]`
    pub text: Tensor,
    /// `[batch, meta_dim]`
    pub meta: Tensor,
    pub subgraph: Option<Subgraph>,
}

impl ReviewBatch {
    pub fn len(&self) -> usize {
        self.reviews.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reviews.is_empty()
    }
}

/// The registered modules of one model. Disabled branches own no parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub meta_encoder: Option<Mlp2>,
    pub text_projection: Option<Linear>,
    pub w_in: Option<Linear>,
    pub gat: Vec<GatLayerParams>,
    /// Indexed like [`MODALITIES`]; `None` for a disabled branch.
    pub mixers: [Option<Mixer>; 3],
    pub fusion: Fusion,
}

pub struct ForwardOutput {
    /// `[batch, 2]`
    pub logits: Var,
    /// `(modality index, gate)` for every MoE mixer that ran.
    pub gates: Vec<(usize, GateOutput)>,
    /// `(z_m, z_t, z_g)` handed to fusion.
    pub modal: [Var; 3],
    pub fusion_attention: Vec<Var>,
    pub gat_attention: Vec<GatAttention>,
}

impl Model {
    pub fn new(reg: &mut ParamRegistry, config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = config;
        let b = &c.branches;
        let meta_encoder = b
            .meta
            .then(|| Mlp2::new(reg, "meta_encoder", c.meta_dim, c.meta_hidden, c.meta_out))
            .transpose()?;
        let text_projection = b
            .text
            .then(|| Linear::new(reg, "text_projection", c.text_dim, c.text_proj))
            .transpose()?;
        let (w_in, gat) = if b.graph {
            let genc = c.graph_encoder(0.0);
            genc.validate()?;
            let d_in = genc.dims[0];
            let w_in = Linear::new(reg, "graph.w_in", d_in, d_in)?;
            let gat = genc
                .dims
                .windows(2)
                .enumerate()
                .map(|(l, w)| GatLayerParams::new(reg, &format!("graph.gat{l}"), w[0], w[1]))
                .collect::<Result<Vec<_>>>()?;
            (Some(w_in), gat)
        } else {
            (None, vec![])
        };
        let enabled = [b.meta, b.text, b.graph];
        let dims = c.branch_dims();
        let mut mixers: [Option<Mixer>; 3] = [None, None, None];
        for m in 0..3 {
            if !enabled[m] {
                continue;
            }
            let name = format!("mixer.{}", MODALITIES[m]);
            mixers[m] = Some(match c.mixer {
                MixerKind::Moe => Mixer::Moe(MoELayer::new(reg, &name, c.moe_config(dims[m]))?),
                MixerKind::Mlp => Mixer::Mlp(Mlp2::new(reg, &name, dims[m], c.moe.hidden, c.fusion.dim)?),
                MixerKind::None => Mixer::Identity,
            });
        }
        let fusion = Fusion::new(reg, c.fusion.mode, &c.fusion_encoder(0.0))?;
        Ok(Model {
            config: config.clone(),
            meta_encoder,
            text_projection,
            w_in,
            gat,
            mixers,
            fusion,
        })
    }

    /// Gathers inputs for `reviews` and samples their subgraph.
    pub fn make_batch(
        &self,
        reviews: &[usize],
        labels: &[u8],
        store: &FeatureStore,
        graph: &HeteroGraph,
        sample_seed: u64,
    ) -> Result<ReviewBatch> {
        let n = reviews.len();
        let mut text = Vec::with_capacity(n * store.text_dim);
        let mut meta = Vec::with_capacity(n * store.meta_dim);
        for &r in reviews {
            text.extend_from_slice(store.review_text(r));
            meta.extend_from_slice(store.review_meta(r));
        }
        let subgraph = if self.config.branches.graph {
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
            Some(sample_subgraph(
                graph,
                reviews,
                self.config.hops,
                self.config.neighbor_cap,
                &mut rng,
            )?)
        } else {
            None
        };
        Ok(ReviewBatch {
            reviews: reviews.to_vec(),
            labels: reviews.iter().map(|&r| labels[r]).collect(),
            text: Tensor::matrix(n, store.text_dim, text)?,
            meta: Tensor::matrix(n, store.meta_dim, meta)?,
            subgraph,
        })
    }

    /// Two-layer meta encoder.
    pub fn meta_encode(&self, f: &mut Forward, meta: Var, dropout: f64) -> Result<Option<Var>> {
        self.meta_encoder.as_ref().map(|m| m.forward(f, meta, dropout)).transpose()
    }

    /// Single linear layer with ReLU.
    pub fn text_project(&self, f: &mut Forward, text: Var) -> Result<Option<Var>> {
        match &self.text_projection {
            Some(l) => {
                let h = l.forward(f, text)?;
                Ok(Some(f.graph.relu(h)?))
            }
            None => Ok(None),
        }
    }

    pub fn forward(
        &self,
        f: &mut Forward,
        batch: &ReviewBatch,
        store: &FeatureStore,
        graph: &HeteroGraph,
        dropout: f64,
    ) -> Result<ForwardOutput> {
        let n = batch.len();
        if n == 0 {
            return Err(Error::Contract("empty review batch".into()));
        }
        let meta = f.graph.constant(batch.meta.clone());
        let text = f.graph.constant(batch.text.clone());
        let xm = self.meta_encode(f, meta, dropout)?;
        let xt = self.text_project(f, text)?;
        let xt = match xt {
            Some(x) => Some(f.dropout(x, dropout)?),
            None => None,
        };
        let mut gat_attention = vec![];
        let xg = match (&self.w_in, &batch.subgraph) {
            (Some(w_in), Some(sub)) => {
                let x0 = f.graph.constant(store.node_matrix(graph, sub)?);
                let g0 = init_node_features(f, x0, w_in)?;
                let g0 = f.dropout(g0, dropout)?;
                let enc = encode_graph(f, sub, g0, &self.gat, &self.config.graph_encoder(dropout))?;
                gat_attention = enc.attention;
                Some(enc.seeds)
            }
            (Some(_), None) => return Err(Error::Contract("graph branch needs a sampled subgraph".into())),
            _ => None,
        };
        let mut gates = Vec::new();
        let dim = self.fusion.dim();
        let mut modal = Vec::with_capacity(3);
        for (m, x) in [xm, xt, xg].into_iter().enumerate() {
            let z = match (x, &self.mixers[m]) {
                (Some(x), Some(Mixer::Moe(layer))) => {
                    let g = gate(f, x, layer)?;
                    let z = moe_forward(f, x, layer, &g, dropout)?;
                    gates.push((m, g));
                    z
                }
                (Some(x), Some(Mixer::Mlp(mlp))) => mlp.forward(f, x, dropout)?,
                (Some(x), Some(Mixer::Identity)) => x,
                _ => f.graph.constant(Tensor::zeros(&[n, dim])),
            };
            modal.push(z);
        }
        let out = self.fusion.forward(f, modal[0], modal[1], modal[2])?;
        Ok(ForwardOutput {
            logits: out.logits,
            gates,
            modal: [modal[0], modal[1], modal[2]],
            fusion_attention: out.attention,
            gat_attention,
        })
    }

    /// Every parameter owned by the model, grouped by module.
    pub fn param_groups(&self) -> Vec<(String, Vec<ParamId>)> {
        let mut groups = Vec::new();
        if let Some(m) = &self.meta_encoder {
            groups.push(("meta_encoder".to_string(), m.params()));
        }
        if let Some(l) = &self.text_projection {
            groups.push(("text_projection".to_string(), l.params().to_vec()));
        }
        if let Some(w) = &self.w_in {
            let mut v = w.params().to_vec();
            v.extend(self.gat.iter().flat_map(|g| g.params()));
            groups.push(("graph".to_string(), v));
        }
        for (m, mixer) in self.mixers.iter().enumerate() {
            if let Some(mx) = mixer {
                let p = mx.params();
                if !p.is_empty() {
                    groups.push((format!("mixer.{}", MODALITIES[m]), p));
                }
            }
        }
        groups.push(("fusion".to_string(), self.fusion.params()));
        groups
    }
}

/// Loss terms of one batch.
pub struct LossParts {
    pub total: Var,
    pub cross_entropy: f64,
    pub l2: f64,
    pub balance: f64,
}

/// `Σ CE + λ·Σθ² + w·Σ_mod BL(load_mod)`.
pub fn total_loss(
    f: &mut Forward,
    out: &ForwardOutput,
    labels: &[u8],
    params: &[ParamId],
    lambda: f64,
    w: f64,
) -> Result<LossParts> {
    let targets: Vec<usize> = labels.iter().map(|&y| y as usize).collect();
    let ce = f.graph.cross_entropy(out.logits, &targets, None)?;
    let cross_entropy = f.graph.data(ce)[0];
    let mut total = ce;
    let mut l2 = 0.0;
    if lambda != 0.0 {
        for &id in params {
            let p = f.param(id);
            let sq = f.graph.square(p)?;
            let s = f.graph.sum(sq)?;
            let s = f.graph.scale(s, lambda)?;
            l2 += f.graph.data(s)[0];
            total = f.graph.add(total, s)?;
        }
    }
    let mut balance = 0.0;
    if w != 0.0 {
        for (_, g) in &out.gates {
            let bl = f.graph.cv_squared(g.load)?;
            let bl = f.graph.scale(bl, w)?;
            balance += f.graph.data(bl)[0];
            total = f.graph.add(total, bl)?;
        }
    }
    Ok(LossParts {
        total,
        cross_entropy,
        l2,
        balance,
    })
}

/// Class-1 probabilities from `[batch, 2]` logits.
pub fn spoiler_scores(logits: &[f64]) -> Vec<f64> {
    logits
        .chunks(2)
        .map(|z| 1.0 / (1.0 + (z[0] - z[1]).exp()))
        .collect()
}
