//! User profile extraction: a transformer over each user's description and
//! review embeddings, pretrained on per-review spoiler labels. The output at
//! position 0 becomes the user's fixed profile embedding.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Dataset, EmbeddingMatrix, Split, TextFeatures};
use crate::diffcore::{adamw_step, lr_exponential_step, Init, OptimizerState, ParamId, ParamRegistry, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Encoder, EncoderConfig, Forward, Linear};

pub const PROFILE_KIND: &str = "user_profile";

/// A user's token sequence. Position 0 is the profile slot.
#[derive(Clone, Debug, PartialEq)]
pub struct UserSequence {
    pub user: usize,
    pub dim: usize,
    /// `len × dim`, row-major; padded rows are zero.
    pub tokens: Vec<f64>,
    pub mask: Vec<bool>,
    /// False when slot 0 should take the learnable first token.
    pub has_description: bool,
    /// `(position, review index, in train split)`
    pub review_positions: Vec<(usize, usize, bool)>,
}

impl UserSequence {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    /// Same sequence with `extra` more padded positions.
    pub fn padded(&self, extra: usize) -> Self {
        let mut s = self.clone();
        s.tokens.extend(std::iter::repeat_n(0.0, extra * self.dim));
        s.mask.extend(std::iter::repeat_n(false, extra));
        s
    }
}

/// Description (or sentinel) followed by the user's most recent
/// `max_len − 1` reviews in chronological order, zero-padded to `max_len`.
pub fn assemble_sequence(
    ds: &Dataset,
    user: usize,
    review_embeds: &EmbeddingMatrix,
    desc_embed: Option<&[f64]>,
    max_len: usize,
) -> Result<UserSequence> {
    if max_len < 2 {
        return Err(Error::Config(format!("profile max_len must be ≥ 2, got {max_len}")));
    }
    let dim = review_embeds.dim;
    let mut tokens = vec![0.0; max_len * dim];
    let mut mask = vec![false; max_len];
    mask[0] = true;
    if let Some(d) = desc_embed {
        if d.len() != dim {
            return Err(Error::dim("assemble_sequence", &[&[d.len()], &[dim]]));
        }
        tokens[..dim].copy_from_slice(d);
    }
    let reviews = ds.user_reviews(user);
    let keep = &reviews[reviews.len().saturating_sub(max_len - 1)..];
    let mut review_positions = Vec::with_capacity(keep.len());
    for (i, &r) in keep.iter().enumerate() {
        let pos = i + 1;
        for (t, v) in tokens[pos * dim..(pos + 1) * dim].iter_mut().zip(review_embeds.row(r)) {
            *t = *v as f64;
        }
        mask[pos] = true;
        review_positions.push((pos, r, ds.reviews[r].split == Some(Split::Train)));
    }
    Ok(UserSequence {
        user,
        dim,
        tokens,
        mask,
        has_description: desc_embed.is_some(),
        review_positions,
    })
}

/// Sequences for every user, in user order.
pub fn assemble_all(ds: &Dataset, text: &TextFeatures, max_len: usize) -> Result<Vec<UserSequence>> {
    (0..ds.users.len())
        .map(|u| assemble_sequence(ds, u, &text.reviews, text.user_descriptions[u].as_deref(), max_len))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileConfig {
    pub encoder: EncoderConfig,
    pub max_len: usize,
    pub lr: f64,
    pub gamma: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig {
            encoder: EncoderConfig {
                d_model: 768,
                heads: 12,
                ff_dim: 3072,
                layers: 12,
                dropout: 0.1,
            },
            max_len: 16,
            lr: 1e-5,
            gamma: 0.9,
            weight_decay: 1e-5,
            epochs: 20,
            batch_size: 32,
        }
    }
}

impl ProfileConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate("profile encoder")?;
        if self.max_len < 2 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "profile: max_len ≥ 2, epochs ≥ 1 and batch_size ≥ 1 required".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileModel {
    pub d_model: usize,
    pub max_len: usize,
    pub first_token: ParamId,
    pub positions: ParamId,
    pub encoder: Encoder,
    pub head: Linear,
}

/// Counts batches whose loss had no training-split review to draw on.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretextStats {
    pub empty_batches: usize,
}

impl ProfileModel {
    pub fn new(reg: &mut ParamRegistry, config: &ProfileConfig) -> Result<Self> {
        config.validate()?;
        let d = config.encoder.d_model;
        Ok(ProfileModel {
            d_model: d,
            max_len: config.max_len,
            first_token: reg.register("profile.first_token", &[1, d], Init::Uniform(0.1))?,
            positions: reg.register("profile.positions", &[config.max_len, d], Init::Uniform(0.1))?,
            encoder: Encoder::new(reg, "profile.encoder", config.encoder.clone())?,
            head: Linear::new(reg, "profile.head", d, 2)?,
        })
    }

    /// Encoder output `[batch·len, d_model]` for sequences of equal length.
    pub fn encode(&self, f: &mut Forward, seqs: &[UserSequence]) -> Result<Var> {
        let batch = seqs.len();
        if batch == 0 {
            return Err(Error::Contract("profile batch is empty".into()));
        }
        let len = seqs[0].len();
        let d = self.d_model;
        if len > self.max_len || seqs.iter().any(|s| s.len() != len || s.dim != d) {
            return Err(Error::Shape(format!(
                "profile sequences must share length ≤ {} and dim {d}",
                self.max_len
            )));
        }
        let mut tokens = Vec::with_capacity(batch * len * d);
        let mut needs_token = vec![0.0; batch * len];
        let mut live = vec![0.0; batch * len];
        let mut key_mask = Vec::with_capacity(batch * len);
        for (b, s) in seqs.iter().enumerate() {
            tokens.extend_from_slice(&s.tokens);
            if !s.has_description {
                needs_token[b * len] = 1.0;
            }
            for (j, &m) in s.mask.iter().enumerate() {
                live[b * len + j] = if m { 1.0 } else { 0.0 };
            }
            key_mask.extend_from_slice(&s.mask);
        }
        let x = f.graph.constant(Tensor::matrix(batch * len, d, tokens)?);
        let sel = f.graph.constant(Tensor::matrix(batch * len, 1, needs_token)?);
        let first = f.param(self.first_token);
        let first = f.graph.matmul(sel, first)?;
        let x = f.graph.add(x, first)?;
        let pos = f.param(self.positions);
        let idx: Vec<usize> = (0..batch).flat_map(|_| 0..len).collect();
        let pos = f.graph.gather_rows(pos, idx)?;
        let live = f.graph.constant(Tensor::matrix(batch * len, 1, live)?);
        let pos = f.graph.mul(pos, live)?;
        let x = f.graph.add(x, pos)?;
        let enc = self.encoder.forward(f, x, batch, len, Some(key_mask))?;
        Ok(enc.out)
    }

    /// Cross-entropy summed over review positions in the training split.
    /// Returns `None` when the batch holds no such position.
    pub fn pretext_loss(
        &self,
        f: &mut Forward,
        seqs: &[UserSequence],
        labels: &[u8],
        stats: &mut PretextStats,
    ) -> Result<Option<Var>> {
        let len = seqs.first().map_or(0, |s| s.len());
        let mut targets = vec![0usize; seqs.len() * len];
        let mut weights = vec![0.0; seqs.len() * len];
        for (b, s) in seqs.iter().enumerate() {
            for &(pos, r, train) in &s.review_positions {
                targets[b * len + pos] = labels[r] as usize;
                if train {
                    weights[b * len + pos] = 1.0;
                }
            }
        }
        if weights.iter().all(|w| *w == 0.0) {
            stats.empty_batches += 1;
            log::warn!("pretext batch has no training-split reviews");
            return Ok(None);
        }
        let out = self.encode(f, seqs)?;
        let logits = self.head.forward(f, out)?;
        Ok(Some(f.graph.cross_entropy(logits, &targets, Some(weights))?))
    }

    /// Output at position 0 for every sequence, dropout off.
    pub fn extract(&self, reg: &ParamRegistry, seqs: &[UserSequence], batch_size: usize) -> Result<EmbeddingMatrix> {
        let d = self.d_model;
        let mut rows = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(batch_size.max(1)) {
            let mut f = Forward::new(reg, false, 0);
            let out = self.encode(&mut f, chunk)?;
            let data = f.graph.data(out);
            let len = chunk[0].len();
            for b in 0..chunk.len() {
                rows.push(data[b * len * d..b * len * d + d].to_vec());
            }
        }
        if rows.is_empty() {
            return Ok(EmbeddingMatrix::zeros(PROFILE_KIND, 0, d));
        }
        EmbeddingMatrix::from_rows(PROFILE_KIND, d, &rows)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = vec![self.first_token, self.positions];
        v.extend(self.encoder.params());
        v.extend(self.head.params());
        v
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretextReport {
    pub epoch_losses: Vec<f64>,
    pub stats: PretextStats,
}

/// Pretext training followed by extraction. The returned matrix holds one
/// row per user and is never touched by later training.
pub fn train_profiles(
    ds: &Dataset,
    text: &TextFeatures,
    config: &ProfileConfig,
    seed: u64,
) -> Result<(EmbeddingMatrix, PretextReport)> {
    config.validate()?;
    if text.dim != config.encoder.d_model {
        return Err(Error::Config(format!(
            "profile d_model {} must equal text dim {}",
            config.encoder.d_model, text.dim
        )));
    }
    let seqs = assemble_all(ds, text, config.max_len)?;
    let labels = ds.labels();
    let mut reg = ParamRegistry::new(seed);
    let model = ProfileModel::new(&mut reg, config)?;
    let mut opt = OptimizerState::new(config.lr, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5052_4f46);
    let mut report = PretextReport::default();
    let mut order: Vec<usize> = (0..seqs.len()).filter(|&u| seqs[u].review_positions.iter().any(|p| p.2)).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<UserSequence> = chunk.iter().map(|&u| seqs[u].clone()).collect();
            let mut f = Forward::new(&reg, true, seed ^ ((epoch as u64) << 32) ^ step as u64);
            let Some(loss) = model.pretext_loss(&mut f, &batch, &labels, &mut report.stats)? else {
                continue;
            };
            total += f.graph.data(loss)[0];
            let mut graph = f.graph;
            reg.zero_grads();
            graph.backward(loss, &mut reg)?;
            adamw_step(&mut reg, &mut opt)?;
        }
        report.epoch_losses.push(total);
        opt.lr = lr_exponential_step(opt.lr, config.gamma)?;
    }
    let profiles = model.extract(&reg, &seqs, config.batch_size)?;
    Ok((profiles, report))
}
