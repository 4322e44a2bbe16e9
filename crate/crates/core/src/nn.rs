//! Parameterized layers shared by the model branches.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Init, ParamId, ParamRegistry, Tensor, Var};
use crate::error::{Error, Result};

pub const LN_EPS: f64 = 1e-5;

/// One forward pass: the tape, read access to the parameters, and the rng
/// stream that feeds dropout masks and gate noise.
pub struct Forward<'a> {
    pub graph: Graph,
    pub registry: &'a ParamRegistry,
    pub training: bool,
    rng: ChaCha8Rng,
    leaves: HashMap<ParamId, Var>,
}

impl<'a> Forward<'a> {
    pub fn new(registry: &'a ParamRegistry, training: bool, seed: u64) -> Self {
        Forward {
            graph: Graph::new(),
            registry,
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
            leaves: HashMap::new(),
        }
    }

    /// Parameter leaf, created once per pass.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.leaves.get(&id) {
            return *v;
        }
        let v = self.graph.param(self.registry, id);
        self.leaves.insert(id, v);
        v
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !self.training || p == 0.0 {
            return Ok(x);
        }
        let seed = self.rng.random();
        self.graph.dropout(x, p, true, seed)
    }
}

/// `y = x·W + b` with `W: [d_in, d_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(reg: &mut ParamRegistry, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::Config(format!("{name}: zero-sized linear layer {d_in}x{d_out}")));
        }
        Ok(Linear {
            w: reg.register(&format!("{name}.weight"), &[d_in, d_out], Init::XavierUniform)?,
            b: reg.register(&format!("{name}.bias"), &[d_out], Init::Zeros)?,
            d_in,
            d_out,
        })
    }

    pub fn forward(&self, f: &mut Forward, x: Var) -> Result<Var> {
        let w = f.param(self.w);
        let b = f.param(self.b);
        f.graph.linear(x, w, b)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }
}

/// Two linear layers with a ReLU between them.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp2 {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp2 {
    pub fn new(reg: &mut ParamRegistry, name: &str, d_in: usize, hidden: usize, d_out: usize) -> Result<Self> {
        Ok(Mlp2 {
            first: Linear::new(reg, &format!("{name}.0"), d_in, hidden)?,
            second: Linear::new(reg, &format!("{name}.1"), hidden, d_out)?,
        })
    }

    pub fn forward(&self, f: &mut Forward, x: Var, dropout: f64) -> Result<Var> {
        let h = self.first.forward(f, x)?;
        let h = f.graph.relu(h)?;
        let h = f.dropout(h, dropout)?;
        self.second.forward(f, h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.first.params().into_iter().chain(self.second.params()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub layers: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    pub fn validate(&self, what: &str) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.d_model % self.heads != 0 || self.ff_dim == 0 {
            return Err(Error::Config(format!(
                "{what}: need layers ≥ 1 and d_model divisible by heads, got {self:?}"
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("{what}: dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ff: Mlp2,
}

/// Pre-norm transformer encoder with a final layer norm. Layer norms carry
/// no affine parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub layers: Vec<EncoderLayer>,
}

/// Encoder output plus the attention node of every layer.
#[derive(Debug)]
pub struct Encoded {
    pub out: Var,
    pub attention: Vec<Var>,
}

impl Encoder {
    pub fn new(reg: &mut ParamRegistry, name: &str, config: EncoderConfig) -> Result<Self> {
        config.validate(name)?;
        let d = config.d_model;
        let layers = (0..config.layers)
            .map(|l| {
                let p = format!("{name}.layer{l}");
                Ok(EncoderLayer {
                    q: Linear::new(reg, &format!("{p}.q"), d, d)?,
                    k: Linear::new(reg, &format!("{p}.k"), d, d)?,
                    v: Linear::new(reg, &format!("{p}.v"), d, d)?,
                    o: Linear::new(reg, &format!("{p}.o"), d, d)?,
                    ff: Mlp2::new(reg, &format!("{p}.ff"), d, config.ff_dim, d)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Encoder { config, layers })
    }

    /// `x` holds `batch` sequences of `seq` rows, shape `[batch*seq, d_model]`.
    pub fn forward(
        &self,
        f: &mut Forward,
        x: Var,
        batch: usize,
        seq: usize,
        key_mask: Option<Vec<bool>>,
    ) -> Result<Encoded> {
        let heads = self.config.heads;
        let p = self.config.dropout;
        let mut h = x;
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let n = f.graph.layer_norm(h, LN_EPS)?;
            let q = layer.q.forward(f, n)?;
            let k = layer.k.forward(f, n)?;
            let v = layer.v.forward(f, n)?;
            let a = f.graph.attention(q, k, v, batch, seq, heads, key_mask.clone())?;
            attention.push(a);
            let a = layer.o.forward(f, a)?;
            let a = f.dropout(a, p)?;
            h = f.graph.add(h, a)?;
            let n = f.graph.layer_norm(h, LN_EPS)?;
            let m = layer.ff.forward(f, n, p)?;
            let m = f.dropout(m, p)?;
            h = f.graph.add(h, m)?;
        }
        let out = f.graph.layer_norm(h, LN_EPS)?;
        Ok(Encoded { out, attention })
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| {
                [&l.q, &l.k, &l.v, &l.o]
                    .iter()
                    .flat_map(|lin| lin.params())
                    .chain(l.ff.params())
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}

/// Row-major `[rows, cols]` tensor from a slice of equal-length rows.
pub fn stack_rows(rows: &[&[f64]], cols: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(rows.len() * cols);
    for r in rows {
        if r.len() != cols {
            return Err(Error::dim("stack_rows", &[&[r.len()], &[cols]]));
        }
        data.extend_from_slice(r);
    }
    Tensor::matrix(rows.len(), cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_leaves_are_shared() {
        let mut reg = ParamRegistry::new(0);
        let lin = Linear::new(&mut reg, "l", 3, 2).unwrap();
        let mut f = Forward::new(&reg, false, 0);
        assert_eq!(f.param(lin.w), f.param(lin.w));
    }

    #[test]
    fn encoder_preserves_shape_and_masks_padding() {
        let mut reg = ParamRegistry::new(3);
        let cfg = EncoderConfig {
            d_model: 4,
            heads: 2,
            ff_dim: 8,
            layers: 2,
            dropout: 0.0,
        };
        let enc = Encoder::new(&mut reg, "enc", cfg).unwrap();
        let base: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let run = |data: Vec<f64>, seq: usize, mask: Vec<bool>| {
            let mut f = Forward::new(&reg, false, 0);
            let x = f.graph.constant(Tensor::matrix(seq, 4, data).unwrap());
            let e = enc.forward(&mut f, x, 1, seq, Some(mask)).unwrap();
            f.graph.data(e.out)[..4].to_vec()
        };
        let short = run(base.clone(), 3, vec![true; 3]);
        let mut padded = base;
        padded.extend([0.0; 8]);
        let long = run(padded, 5, vec![true, true, true, false, false]);
        for (a, b) in short.iter().zip(&long) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn heads_must_divide_model_dim() {
        let mut reg = ParamRegistry::new(0);
        let cfg = EncoderConfig {
            d_model: 5,
            heads: 2,
            ff_dim: 8,
            layers: 1,
            dropout: 0.0,
        };
        assert!(Encoder::new(&mut reg, "e", cfg).unwrap_err().is_config());
    }
}
