use serde::{Deserialize, Serialize};

use super::hetero::{EdgeType, Subgraph};
use crate::diffcore::{Init, ParamId, ParamRegistry, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Forward, Linear};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphEncoderConfig {
    /// Input, hidden and output dims; the layer count is `dims.len() - 1`.
    pub dims: Vec<usize>,
    pub leaky_slope: f64,
    pub dropout: f64,
}

impl GraphEncoderConfig {
    pub fn layers(&self) -> usize {
        self.dims.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 || self.dims.contains(&0) {
            return Err(Error::Config(format!(
                "graph encoder needs at least one layer with positive dims, got {:?}",
                self.dims
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("graph dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }
}

/// `Θ_s, Θ_t: [d_in, d_out]`; `a_s, a_t: [d_out, 1]` score the projected rows.
#[derive(Clone, Debug, PartialEq)]
pub struct GatLayerParams {
    pub theta_s: ParamId,
    pub theta_t: ParamId,
    pub a_s: ParamId,
    pub a_t: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl GatLayerParams {
    pub fn new(reg: &mut ParamRegistry, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        Ok(GatLayerParams {
            theta_s: reg.register(&format!("{name}.theta_s"), &[d_in, d_out], Init::XavierUniform)?,
            theta_t: reg.register(&format!("{name}.theta_t"), &[d_in, d_out], Init::XavierUniform)?,
            a_s: reg.register(&format!("{name}.a_s"), &[d_out, 1], Init::XavierUniform)?,
            a_t: reg.register(&format!("{name}.a_t"), &[d_out, 1], Init::XavierUniform)?,
            d_in,
            d_out,
        })
    }

    pub fn params(&self) -> [ParamId; 4] {
        [self.theta_s, self.theta_t, self.a_s, self.a_t]
    }
}

/// Which kind of edge an attention coefficient belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeRole {
    SelfLoop,
    Typed(EdgeType),
}

/// Attention coefficients of one layer, one per edge including self loops.
#[derive(Clone, Debug, PartialEq)]
pub struct GatAttention {
    pub dst: Vec<usize>,
    pub role: Vec<EdgeRole>,
    pub alpha: Vec<f64>,
}

#[derive(Debug)]
pub struct GatOutput {
    pub out: Var,
    pub alpha: Var,
    pub dst: Vec<usize>,
    pub role: Vec<EdgeRole>,
}

/// `g⁰ = ReLU([t, m]·W_in + b_in)`.
pub fn init_node_features(f: &mut Forward, x: Var, w_in: &Linear) -> Result<Var> {
    let h = w_in.forward(f, x)?;
    f.graph.relu(h)
}

/// One attention layer over `sub`'s edges plus a self loop per node.
///
/// `e_ij = LeakyReLU(a_sᵀΘ_s g_i + a_tᵀΘ_t g_j)` for `j ∈ N(i) ∪ {i}`,
/// `g_i' = α_ii Θ_s g_i + Σ_{j∈N(i)} α_ij Θ_t g_j`.
pub fn gat_layer(f: &mut Forward, sub: &Subgraph, g: Var, p: &GatLayerParams, slope: f64) -> Result<GatOutput> {
    let n = sub.len();
    let shape = f.graph.shape(g).to_vec();
    if shape != [n, p.d_in] {
        return Err(Error::dim("gat_layer", &[&shape, &[n, p.d_in]]));
    }
    let theta_s = f.param(p.theta_s);
    let theta_t = f.param(p.theta_t);
    let a_s = f.param(p.a_s);
    let a_t = f.param(p.a_t);
    let ps = f.graph.matmul(g, theta_s)?;
    let pt = f.graph.matmul(g, theta_t)?;
    let score_s = f.graph.matmul(ps, a_s)?;
    let score_t = f.graph.matmul(pt, a_t)?;
    // message table: rows [0, n) are Θ_t g_j, rows [n, 2n) are Θ_s g_i
    let messages = f.graph.concat(&[pt, ps], 0)?;

    let m = sub.edges.len() + n;
    let mut src = Vec::with_capacity(m);
    let mut dst = Vec::with_capacity(m);
    let mut msg = Vec::with_capacity(m);
    let mut role = Vec::with_capacity(m);
    for &(s, d, ty) in &sub.edges {
        src.push(s);
        dst.push(d);
        msg.push(s);
        role.push(EdgeRole::Typed(ty));
    }
    for i in 0..n {
        src.push(i);
        dst.push(i);
        msg.push(n + i);
        role.push(EdgeRole::SelfLoop);
    }
    let ls = f.graph.gather_rows(score_s, dst.clone())?;
    let lt = f.graph.gather_rows(score_t, src)?;
    let logits = f.graph.add(ls, lt)?;
    let logits = f.graph.leaky_relu(logits, slope)?;
    let alpha = f.graph.segment_softmax(logits, dst.clone(), n)?;
    let rows = f.graph.gather_rows(messages, msg)?;
    let weighted = f.graph.mul(rows, alpha)?;
    let out = f.graph.segment_sum(weighted, dst.clone(), n)?;
    Ok(GatOutput { out, alpha, dst, role })
}

#[derive(Debug)]
pub struct GraphEncoded {
    /// Rows of the seed reviews, in seed order.
    pub seeds: Var,
    pub attention: Vec<GatAttention>,
}

/// Stacked attention layers with ReLU and dropout between them.
pub fn encode_graph(
    f: &mut Forward,
    sub: &Subgraph,
    g0: Var,
    layers: &[GatLayerParams],
    config: &GraphEncoderConfig,
) -> Result<GraphEncoded> {
    if layers.is_empty() {
        return Err(Error::Config("graph encoder has no layers".into()));
    }
    for w in layers.windows(2) {
        if w[0].d_out != w[1].d_in {
            return Err(Error::Config(format!(
                "graph layer dims do not chain: {} then {}",
                w[0].d_out, w[1].d_in
            )));
        }
    }
    let mut h = g0;
    let mut attention = Vec::with_capacity(layers.len());
    for (l, p) in layers.iter().enumerate() {
        if l > 0 {
            h = f.graph.relu(h)?;
            h = f.dropout(h, config.dropout)?;
        }
        let o = gat_layer(f, sub, h, p, config.leaky_slope)?;
        attention.push(GatAttention {
            alpha: f.graph.data(o.alpha).to_vec(),
            dst: o.dst,
            role: o.role,
        });
        h = o.out;
    }
    let seeds = f.graph.gather_rows(h, sub.seeds.clone())?;
    Ok(GraphEncoded { seeds, attention })
}

/// Constant `[n, text + meta]` input matrix for the subgraph's nodes.
pub fn node_input(sub: &Subgraph, row: impl Fn(usize) -> Vec<f64>, width: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(sub.len() * width);
    for &node in &sub.nodes {
        let r = row(node);
        if r.len() != width {
            return Err(Error::dim("node_input", &[&[r.len()], &[width]]));
        }
        data.extend(r);
    }
    Tensor::matrix(sub.len(), width, data)
}
