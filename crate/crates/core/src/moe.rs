//! Noisy top-k gated mixture of two-layer MLP experts.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{Init, ParamId, ParamRegistry, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Forward, Mlp2};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoEConfig {
    pub n_experts: usize,
    pub k: usize,
    pub d_in: usize,
    pub hidden: usize,
    pub d_out: usize,
    pub noisy: bool,
}

impl MoEConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_experts == 0 || self.k == 0 || self.k > self.n_experts {
            return Err(Error::Config(format!(
                "moe needs 1 ≤ k ≤ n_experts, got k={} n_experts={}",
                self.k, self.n_experts
            )));
        }
        if self.d_in == 0 || self.hidden == 0 || self.d_out == 0 {
            return Err(Error::Config("moe dims must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MoELayer {
    pub config: MoEConfig,
    pub w_gate: ParamId,
    pub w_noise: ParamId,
    pub experts: Vec<Mlp2>,
}

impl MoELayer {
    pub fn new(reg: &mut ParamRegistry, name: &str, config: MoEConfig) -> Result<Self> {
        config.validate()?;
        let n = config.n_experts;
        let w_gate = reg.register(&format!("{name}.w_gate"), &[config.d_in, n], Init::XavierUniform)?;
        let w_noise = reg.register(&format!("{name}.w_noise"), &[config.d_in, n], Init::Zeros)?;
        let experts = (0..n)
            .map(|j| Mlp2::new(reg, &format!("{name}.expert{j}"), config.d_in, config.hidden, config.d_out))
            .collect::<Result<_>>()?;
        Ok(MoELayer {
            config,
            w_gate,
            w_noise,
            experts,
        })
    }

    pub fn gate_params(&self) -> [ParamId; 2] {
        [self.w_gate, self.w_noise]
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = self.gate_params().to_vec();
        v.extend(self.experts.iter().flat_map(|e| e.params()));
        v
    }
}

/// Gate weights for a batch: at most `k` nonzeros per row, rows sum to 1.
#[derive(Debug)]
pub struct GateOutput {
    /// `[batch, n_experts]`
    pub weights: Var,
    /// Column sums of `weights`, `[n_experts]`.
    pub load: Var,
    /// Selected experts of each row, best first.
    pub selected: Vec<Vec<usize>>,
}

/// Indices of the `k` largest entries, ties broken toward the lower index.
pub fn top_k(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// `H = x·W_g (+ N(0,1)·softplus(x·W_noise) while training)`, keep the top
/// `k` entries of each row and softmax over them.
pub fn gate(f: &mut Forward, x: Var, layer: &MoELayer) -> Result<GateOutput> {
    let cfg = &layer.config;
    cfg.validate()?;
    let n = cfg.n_experts;
    let wg = f.param(layer.w_gate);
    let mut h = f.graph.matmul(x, wg)?;
    let batch = f.graph.shape(h)[0];
    if f.training && cfg.noisy {
        let wn = f.param(layer.w_noise);
        let raw = f.graph.matmul(x, wn)?;
        let std = f.graph.softplus(raw)?;
        let eps: Vec<f64> = (0..batch * n).map(|_| StandardNormal.sample(f.rng())).collect();
        let eps = f.graph.constant(Tensor::matrix(batch, n, eps)?);
        let noise = f.graph.mul(eps, std)?;
        h = f.graph.add(h, noise)?;
    }
    let logits = f.graph.data(h);
    let mut mask = vec![f64::NEG_INFINITY; batch * n];
    let mut selected = Vec::with_capacity(batch);
    for i in 0..batch {
        let top = top_k(&logits[i * n..(i + 1) * n], cfg.k);
        for &j in &top {
            mask[i * n + j] = 0.0;
        }
        selected.push(top);
    }
    let mask = f.graph.constant(Tensor::matrix(batch, n, mask)?);
    let masked = f.graph.add(h, mask)?;
    let weights = f.graph.softmax(masked)?;
    let load = f.graph.sum_axis(weights, 0)?;
    Ok(GateOutput {
        weights,
        load,
        selected,
    })
}

fn gate_column(f: &mut Forward, weights: Var, n: usize, j: usize) -> Result<Var> {
    let mut onehot = vec![0.0; n];
    onehot[j] = 1.0;
    let e = f.graph.constant(Tensor::matrix(n, 1, onehot)?);
    f.graph.matmul(weights, e)
}

/// `z_i = Σ_j G_j(x_i)·E_j(x_i)`, evaluating each expert only on the rows
/// that selected it.
pub fn moe_forward(f: &mut Forward, x: Var, layer: &MoELayer, gate: &GateOutput, dropout: f64) -> Result<Var> {
    let n = layer.config.n_experts;
    let batch = gate.selected.len();
    let mut total: Option<Var> = None;
    for (j, expert) in layer.experts.iter().enumerate() {
        let rows: Vec<usize> = (0..batch).filter(|&i| gate.selected[i].contains(&j)).collect();
        if rows.is_empty() {
            continue;
        }
        let xs = f.graph.gather_rows(x, rows.clone())?;
        let out = expert.forward(f, xs, dropout)?;
        let col = gate_column(f, gate.weights, n, j)?;
        let w = f.graph.gather_rows(col, rows.clone())?;
        let scaled = f.graph.mul(out, w)?;
        let back = f.graph.segment_sum(scaled, rows, batch)?;
        total = Some(match total {
            Some(t) => f.graph.add(t, back)?,
            None => back,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => Err(Error::Contract("moe batch is empty".into())),
    }
}

/// Reference evaluation: every expert on every row.
pub fn moe_forward_dense(f: &mut Forward, x: Var, layer: &MoELayer, gate: &GateOutput, dropout: f64) -> Result<Var> {
    let n = layer.config.n_experts;
    let mut total: Option<Var> = None;
    for (j, expert) in layer.experts.iter().enumerate() {
        let out = expert.forward(f, x, dropout)?;
        let col = gate_column(f, gate.weights, n, j)?;
        let scaled = f.graph.mul(out, col)?;
        total = Some(match total {
            Some(t) => f.graph.add(t, scaled)?,
            None => scaled,
        });
    }
    total.ok_or_else(|| Error::Contract("moe has no experts".into()))
}

/// `CV(load)²` with the population standard deviation; 0 when the mean is 0.
pub fn balancing_loss(load: &[f64]) -> f64 {
    crate::diffcore::cv_squared(load)
}
