//! Recorded operation graph with reverse-mode gradients.
//!
//! Every primitive appends one node holding its forward value. `backward`
//! replays the nodes in reverse order and applies each primitive's adjoint.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kernels::{broadcast_map, broadcast_shape, mm, mm_nt, mm_tn};
use super::tensor::{numel, ParamId, ParamRegistry, Tensor};
use crate::error::{Error, Result};

/// Closed set of differentiable primitives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PrimitiveKind {
    MatMul,
    Add,
    Mul,
    Concat,
    Flatten,
    Relu,
    LeakyRelu,
    Softmax,
    LayerNorm,
    Dropout,
    Linear,
    ScaledDotProductAttention,
    CrossEntropy,
    Sum,
    Mean,
    Square,
    // Structural helpers used by the graph, gating and pooling code.
    Reshape,
    GatherRows,
    SegmentSum,
    SegmentSoftmax,
    Softplus,
    Maximum,
    CvSquared,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 23] = [
        PrimitiveKind::MatMul,
        PrimitiveKind::Add,
        PrimitiveKind::Mul,
        PrimitiveKind::Concat,
        PrimitiveKind::Flatten,
        PrimitiveKind::Relu,
        PrimitiveKind::LeakyRelu,
        PrimitiveKind::Softmax,
        PrimitiveKind::LayerNorm,
        PrimitiveKind::Dropout,
        PrimitiveKind::Linear,
        PrimitiveKind::ScaledDotProductAttention,
        PrimitiveKind::CrossEntropy,
        PrimitiveKind::Sum,
        PrimitiveKind::Mean,
        PrimitiveKind::Square,
        PrimitiveKind::Reshape,
        PrimitiveKind::GatherRows,
        PrimitiveKind::SegmentSum,
        PrimitiveKind::SegmentSoftmax,
        PrimitiveKind::Softplus,
        PrimitiveKind::Maximum,
        PrimitiveKind::CvSquared,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveKind::MatMul => "matmul",
            PrimitiveKind::Add => "add",
            PrimitiveKind::Mul => "mul",
            PrimitiveKind::Concat => "concat",
            PrimitiveKind::Flatten => "flatten",
            PrimitiveKind::Relu => "relu",
            PrimitiveKind::LeakyRelu => "leaky_relu",
            PrimitiveKind::Softmax => "softmax",
            PrimitiveKind::LayerNorm => "layer_norm",
            PrimitiveKind::Dropout => "dropout",
            PrimitiveKind::Linear => "linear",
            PrimitiveKind::ScaledDotProductAttention => "scaled_dot_product_attention",
            PrimitiveKind::CrossEntropy => "cross_entropy",
            PrimitiveKind::Sum => "sum",
            PrimitiveKind::Mean => "mean",
            PrimitiveKind::Square => "square",
            PrimitiveKind::Reshape => "reshape",
            PrimitiveKind::GatherRows => "gather_rows",
            PrimitiveKind::SegmentSum => "segment_sum",
            PrimitiveKind::SegmentSoftmax => "segment_softmax",
            PrimitiveKind::Softplus => "softplus",
            PrimitiveKind::Maximum => "maximum",
            PrimitiveKind::CvSquared => "cv_squared",
        }
    }
}

impl fmt::Display for PrimitiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PrimitiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PrimitiveKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown primitive {s:?}")))
    }
}

/// Per-call attributes. Each primitive reads only the fields it needs.
#[derive(Clone, Debug, Default)]
pub struct Attrs {
    pub axis: Option<usize>,
    pub slope: Option<f64>,
    pub eps: Option<f64>,
    pub p: Option<f64>,
    pub training: bool,
    pub seed: Option<u64>,
    pub batch: Option<usize>,
    pub seq: Option<usize>,
    pub heads: Option<usize>,
    pub key_mask: Option<Vec<bool>>,
    pub labels: Option<Vec<usize>>,
    pub weights: Option<Vec<f64>>,
    pub index: Option<Vec<usize>>,
    pub count: Option<usize>,
    pub shape: Option<Vec<usize>>,
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

struct Node {
    value: Tensor,
    kind: Option<PrimitiveKind>,
    attrs: Attrs,
    inputs: Vec<Var>,
    requires_grad: bool,
    param: Option<ParamId>,
    aux: Vec<f64>,
}

/// Operation tape for one forward/backward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn attr<T: Clone>(v: &Option<T>, kind: PrimitiveKind, name: &str) -> Result<T> {
    v.clone()
        .ok_or_else(|| Error::Config(format!("{kind}: missing attribute {name}")))
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node {
            value,
            kind: None,
            attrs: Attrs::default(),
            inputs: Vec::new(),
            requires_grad,
            param,
            aux: Vec::new(),
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_leaf(t, false, None)
    }

    /// Leaf whose gradient is kept in the graph (queried with [`Graph::grad`]).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push_leaf(t, true, None)
    }

    /// Leaf bound to a registered parameter; backward accumulates into its grad slot.
    pub fn param(&mut self, registry: &ParamRegistry, id: ParamId) -> Var {
        let src = registry.get(id);
        let t = Tensor {
            shape: src.shape.clone(),
            data: src.data.clone(),
            grad: None,
            requires_grad: true,
            param_id: src.param_id.clone(),
        };
        self.push_leaf(t, true, Some(id))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Attention probabilities saved by a `scaled_dot_product_attention` node,
    /// laid out as `[batch, heads, seq, seq]`.
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        let n = &self.nodes[v.0];
        (n.kind == Some(PrimitiveKind::ScaledDotProductAttention)).then_some(n.aux.as_slice())
    }

    /// Generic entry point: evaluates `kind` on `inputs` and records it.
    pub fn apply(&mut self, kind: PrimitiveKind, inputs: &[Var], attrs: Attrs) -> Result<Var> {
        let (value, aux) = self.forward(kind, inputs, &attrs)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            kind: Some(kind),
            attrs,
            inputs: inputs.to_vec(),
            requires_grad,
            param: None,
            aux,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn arity(kind: PrimitiveKind, inputs: &[Var], want: usize) -> Result<()> {
        if inputs.len() != want {
            return Err(Error::Config(format!(
                "{kind} takes {want} inputs, got {}",
                inputs.len()
            )));
        }
        Ok(())
    }

    fn forward(&self, kind: PrimitiveKind, inputs: &[Var], a: &Attrs) -> Result<(Tensor, Vec<f64>)> {
        use PrimitiveKind as K;
        let val = |i: usize| &self.nodes[inputs[i].0].value;
        let out = |shape: Vec<usize>, data: Vec<f64>| Tensor {
            shape,
            data,
            grad: None,
            requires_grad: false,
            param_id: None,
        };
        match kind {
            K::MatMul => {
                Self::arity(kind, inputs, 2)?;
                let (x, y) = (val(0), val(1));
                if x.shape.len() != 2 || y.shape.len() != 2 || x.shape[1] != y.shape[0] {
                    return Err(Error::dim("matmul", &[&x.shape, &y.shape]));
                }
                let (m, k, n) = (x.shape[0], x.shape[1], y.shape[1]);
                Ok((out(vec![m, n], mm(&x.data, &y.data, m, k, n)), vec![]))
            }
            K::Linear => {
                Self::arity(kind, inputs, 3)?;
                let (x, w, b) = (val(0), val(1), val(2));
                if x.shape.len() != 2
                    || w.shape.len() != 2
                    || x.shape[1] != w.shape[0]
                    || b.numel() != w.shape[1]
                {
                    return Err(Error::dim("linear", &[&x.shape, &w.shape, &b.shape]));
                }
                let (m, k, n) = (x.shape[0], x.shape[1], w.shape[1]);
                let mut y = mm(&x.data, &w.data, m, k, n);
                for row in y.chunks_mut(n) {
                    for (v, bi) in row.iter_mut().zip(&b.data) {
                        *v += bi;
                    }
                }
                Ok((out(vec![m, n], y), vec![]))
            }
            K::Add | K::Mul => {
                Self::arity(kind, inputs, 2)?;
                let (x, y) = (val(0), val(1));
                let shape = broadcast_shape(&x.shape, &y.shape)
                    .ok_or_else(|| Error::dim(kind.name(), &[&x.shape, &y.shape]))?;
                let n = numel(&shape);
                let data: Vec<f64> = if x.shape == y.shape {
                    if kind == K::Add {
                        x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect()
                    } else {
                        x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect()
                    }
                } else {
                    let mx = broadcast_map(&shape, &x.shape);
                    let my = broadcast_map(&shape, &y.shape);
                    (0..n)
                        .map(|i| {
                            let (p, q) = (x.data[mx[i]], y.data[my[i]]);
                            if kind == K::Add {
                                p + q
                            } else {
                                p * q
                            }
                        })
                        .collect()
                };
                Ok((out(shape, data), vec![]))
            }
            K::Concat => {
                if inputs.is_empty() {
                    return Err(Error::Config("concat takes at least one input".into()));
                }
                let axis = a.axis.unwrap_or(0);
                let first = val(0);
                if axis >= first.shape.len() {
                    return Err(Error::dim("concat", &[&first.shape]));
                }
                let mut shape = first.shape.clone();
                shape[axis] = 0;
                for i in 0..inputs.len() {
                    let s = &val(i).shape;
                    let ok = s.len() == first.shape.len()
                        && s.iter()
                            .zip(&first.shape)
                            .enumerate()
                            .all(|(d, (p, q))| d == axis || p == q);
                    if !ok {
                        let shapes: Vec<&[usize]> =
                            (0..inputs.len()).map(|j| val(j).shape.as_slice()).collect();
                        return Err(Error::dim("concat", &shapes));
                    }
                    shape[axis] += s[axis];
                }
                let outer: usize = shape[..axis].iter().product();
                let mut data = Vec::with_capacity(numel(&shape));
                for o in 0..outer {
                    for i in 0..inputs.len() {
                        let t = val(i);
                        let chunk = t.numel() / outer;
                        data.extend_from_slice(&t.data[o * chunk..(o + 1) * chunk]);
                    }
                }
                Ok((out(shape, data), vec![]))
            }
            K::Flatten => {
                Self::arity(kind, inputs, 1)?;
                let x = val(0);
                let rest = if x.shape.len() > 1 { x.row_len() } else { 1 };
                Ok((out(vec![x.shape[0], rest], x.data.clone()), vec![]))
            }
            K::Reshape => {
                Self::arity(kind, inputs, 1)?;
                let x = val(0);
                let shape = attr(&a.shape, kind, "shape")?;
                if numel(&shape) != x.numel() || shape.iter().any(|&d| d == 0) {
                    return Err(Error::dim("reshape", &[&x.shape, &shape]));
                }
                Ok((out(shape, x.data.clone()), vec![]))
            }
            K::Relu | K::LeakyRelu | K::Square | K::Softplus => {
                Self::arity(kind, inputs, 1)?;
                let x = val(0);
                let slope = if kind == K::LeakyRelu {
                    attr(&a.slope, kind, "slope")?
                } else {
                    0.0
                };
                let data = x
                    .data
                    .iter()
                    .map(|&v| match kind {
                        K::Relu => v.max(0.0),
                        K::LeakyRelu => {
                            if v > 0.0 {
                                v
                            } else {
                                slope * v
                            }
                        }
                        K::Square => v * v,
                        _ => v.max(0.0) + (-v.abs()).exp().ln_1p(),
                    })
                    .collect();
                Ok((out(x.shape.clone(), data), vec![]))
            }
            K::Softmax => {
                Self::arity(kind, inputs, 1)?;
                let x = val(0);
                let axis = a.axis.unwrap_or(x.shape.len() - 1);
                if axis >= x.shape.len() {
                    return Err(Error::dim("softmax", &[&x.shape]));
                }
                let len = x.shape[axis];
                let inner: usize = x.shape[axis + 1..].iter().product();
                let outer: usize = x.shape[..axis].iter().product();
                let mut y = vec![0.0; x.numel()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mx = (0..len)
                            .map(|j| x.data[base + j * inner])
                            .fold(f64::NEG_INFINITY, f64::max);
                        if mx == f64::NEG_INFINITY {
                            continue;
                        }
                        let mut z = 0.0;
                        for j in 0..len {
                            let e = (x.data[base + j * inner] - mx).exp();
                            y[base + j * inner] = e;
                            z += e;
                        }
                        for j in 0..len {
                            y[base + j * inner] /= z;
                        }
                    }
                }
                Ok((out(x.shape.clone(), y), vec![]))
            }
            K::LayerNorm => {
                Self::arity(kind, inputs, 1)?;
                let x = val(0);
                let eps = a.eps.unwrap_or(1e-5);
                let d = *x.shape.last().unwrap();
                let rows = x.numel() / d;
                let mut y = vec![0.0; x.numel()];
                let mut rstd = Vec::with_capacity(rows);
                for r in 0..rows {
                    let row = &x.data[r * d..(r + 1) * d];
                    let mu = row.iter().sum::<f64>() / d as f64;
                    let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
                    let rs = 1.0 / (var + eps).sqrt();
                    for (o, v) in y[r * d..(r + 1) * d].iter_mut().zip(row) {
                        *o = (v - mu) * rs;
                    }
                    rstd.push(rs);
                }
                Ok((out(x.shape.clone(), y), rstd))
            }
            K::Dropout => {
                Self::arity(kind, inputs, 1)?;
                let x = val(0);
                let p = attr(&a.p, kind, "p")?;
                if !(0.0..1.0).contains(&p) {
                    return Err(Error::Config(format!("dropout p={p} outside [0,1)")));
                }
                if !a.training || p == 0.0 {
                    return Ok((x.clone_value(), vec![]));
                }
                let seed = a.seed.ok_or_else(|| {
                    Error::Config("dropout in training mode requires an explicit rng stream".into())
                })?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let scale = 1.0 / (1.0 - p);
                let mask: Vec<f64> = (0..x.numel())
                    .map(|_| if rng.random::<f64>() < p { 0.0 } else { scale })
                    .collect();
                let data = x.data.iter().zip(&mask).map(|(v, m)| v * m).collect();
                Ok((out(x.shape.clone(), data), mask))
            }
            K::ScaledDotProductAttention => {
                Self::arity(kind, inputs, 3)?;
                let (q, k, v) = (val(0), val(1), val(2));
                let batch = attr(&a.batch, kind, "batch")?;
                let seq = attr(&a.seq, kind, "seq")?;
                let heads = attr(&a.heads, kind, "heads")?;
                let shp_ok = |t: &Tensor| t.shape.len() == 2 && t.shape[0] == batch * seq;
                if !shp_ok(q) || !shp_ok(k) || !shp_ok(v) || q.shape != k.shape || k.shape != v.shape
                {
                    return Err(Error::dim(
                        "scaled_dot_product_attention",
                        &[&q.shape, &k.shape, &v.shape],
                    ));
                }
                let dm = q.shape[1];
                if heads == 0 || dm % heads != 0 {
                    return Err(Error::Config(format!(
                        "model dim {dm} not divisible by {heads} heads"
                    )));
                }
                if let Some(m) = &a.key_mask {
                    if m.len() != batch * seq {
                        return Err(Error::dim(
                            "scaled_dot_product_attention",
                            &[&q.shape, &[m.len()]],
                        ));
                    }
                }
                let (o, probs) = sdpa_forward(&q.data, &k.data, &v.data, batch, seq, heads, dm, a.key_mask.as_deref());
                Ok((out(q.shape.clone(), o), probs))
            }
            K::CrossEntropy => {
                Self::arity(kind, inputs, 1)?;
                let x = val(0);
                let labels = a.labels.as_ref().ok_or_else(|| {
                    Error::Config("cross_entropy: missing attribute labels".into())
                })?;
                if x.shape.len() != 2 || labels.len() != x.shape[0] {
                    return Err(Error::dim("cross_entropy", &[&x.shape, &[labels.len()]]));
                }
                let c = x.shape[1];
                if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
                    return Err(Error::Config(format!("label {bad} out of range for {c} classes")));
                }
                if let Some(w) = &a.weights {
                    if w.len() != labels.len() {
                        return Err(Error::dim("cross_entropy", &[&x.shape, &[w.len()]]));
                    }
                }
                let mut probs = vec![0.0; x.numel()];
                let mut loss = 0.0;
                for (r, &lab) in labels.iter().enumerate() {
                    let row = &x.data[r * c..(r + 1) * c];
                    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
                    let lse = mx + z.ln();
                    for j in 0..c {
                        probs[r * c + j] = (row[j] - lse).exp();
                    }
                    let w = a.weights.as_ref().map_or(1.0, |w| w[r]);
                    if w != 0.0 {
                        loss += w * (lse - row[lab]);
                    }
                }
                Ok((out(vec![1], vec![loss]), probs))
            }
            K::Sum => {
                Self::arity(kind, inputs, 1)?;
                let x = val(0);
                match a.axis {
                    None => Ok((out(vec![1], vec![x.data.iter().sum()]), vec![])),
                    Some(axis) => {
                        if axis >= x.shape.len() {
                            return Err(Error::dim("sum", &[&x.shape]));
                        }
                        let len = x.shape[axis];
                        let inner: usize = x.shape[axis + 1..].iter().product();
                        let outer: usize = x.shape[..axis].iter().product();
                        let mut y = vec![0.0; outer * inner];
                        for o in 0..outer {
                            for j in 0..len {
                                let src = &x.data[(o * len + j) * inner..(o * len + j + 1) * inner];
                                for (d, s) in y[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                                    *d += s;
                                }
                            }
                        }
                        let mut shape: Vec<usize> = x.shape.clone();
                        shape.remove(axis);
                        if shape.is_empty() {
                            shape.push(1);
                        }
                        Ok((out(shape, y), vec![]))
                    }
                }
            }
            K::Mean => {
                Self::arity(kind, inputs, 1)?;
                let x = val(0);
                Ok((out(vec![1], vec![x.data.iter().sum::<f64>() / x.numel() as f64]), vec![]))
            }
            K::GatherRows => {
                Self::arity(kind, inputs, 1)?;
                let x = val(0);
                let index = a.index.as_ref().ok_or_else(|| {
                    Error::Config("gather_rows: missing attribute index".into())
                })?;
                let rows = x.shape[0];
                if index.is_empty() || index.iter().any(|&i| i >= rows) {
                    return Err(Error::dim("gather_rows", &[&x.shape, &[index.len()]]));
                }
                let w = x.row_len();
                let mut data = Vec::with_capacity(index.len() * w);
                for &i in index {
                    data.extend_from_slice(&x.data[i * w..(i + 1) * w]);
                }
                let mut shape = x.shape.clone();
                shape[0] = index.len();
                Ok((out(shape, data), vec![]))
            }
            K::SegmentSum => {
                Self::arity(kind, inputs, 1)?;
                let x = val(0);
                let segs = a.index.as_ref().ok_or_else(|| {
                    Error::Config("segment_sum: missing attribute index".into())
                })?;
                let count = attr(&a.count, kind, "count")?;
                if segs.len() != x.shape[0] || count == 0 || segs.iter().any(|&s| s >= count) {
                    return Err(Error::dim("segment_sum", &[&x.shape, &[segs.len(), count]]));
                }
                let w = x.row_len();
                let mut y = vec![0.0; count * w];
                for (r, &s) in segs.iter().enumerate() {
                    for (d, v) in y[s * w..(s + 1) * w].iter_mut().zip(&x.data[r * w..(r + 1) * w]) {
                        *d += v;
                    }
                }
                let mut shape = x.shape.clone();
                shape[0] = count;
                Ok((out(shape, y), vec![]))
            }
            K::SegmentSoftmax => {
                Self::arity(kind, inputs, 1)?;
                let x = val(0);
                let segs = a.index.as_ref().ok_or_else(|| {
                    Error::Config("segment_softmax: missing attribute index".into())
                })?;
                let count = attr(&a.count, kind, "count")?;
                if segs.len() != x.numel() || segs.iter().any(|&s| s >= count) {
                    return Err(Error::dim("segment_softmax", &[&x.shape, &[segs.len(), count]]));
                }
                let mut mx = vec![f64::NEG_INFINITY; count];
                for (v, &s) in x.data.iter().zip(segs) {
                    mx[s] = mx[s].max(*v);
                }
                let mut z = vec![0.0; count];
                let mut y: Vec<f64> = x
                    .data
                    .iter()
                    .zip(segs)
                    .map(|(v, &s)| {
                        let e = (v - mx[s]).exp();
                        z[s] += e;
                        e
                    })
                    .collect();
                for (v, &s) in y.iter_mut().zip(segs) {
                    *v /= z[s];
                }
                Ok((out(x.shape.clone(), y), vec![]))
            }
            K::Maximum => {
                if inputs.is_empty() {
                    return Err(Error::Config("maximum takes at least one input".into()));
                }
                let first = val(0);
                for i in 1..inputs.len() {
                    if val(i).shape != first.shape {
                        return Err(Error::dim("maximum", &[&first.shape, &val(i).shape]));
                    }
                }
                let mut y = first.data.clone();
                let mut arg = vec![0.0; y.len()];
                for i in 1..inputs.len() {
                    for (j, v) in val(i).data.iter().enumerate() {
                        if *v > y[j] {
                            y[j] = *v;
                            arg[j] = i as f64;
                        }
                    }
                }
                Ok((out(first.shape.clone(), y), arg))
            }
            K::CvSquared => {
                Self::arity(kind, inputs, 1)?;
                let x = val(0);
                Ok((out(vec![1], vec![cv_squared(&x.data)]), vec![]))
            }
        }
    }

    // ---- convenience wrappers ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(PrimitiveKind::MatMul, &[a, b], Attrs::default())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(PrimitiveKind::Add, &[a, b], Attrs::default())
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(PrimitiveKind::Mul, &[a, b], Attrs::default())
    }

    /// Multiplies by a constant scalar.
    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let c = self.constant(Tensor::scalar(s));
        self.mul(a, c)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        self.apply(
            PrimitiveKind::Concat,
            xs,
            Attrs {
                axis: Some(axis),
                ..Attrs::default()
            },
        )
    }

    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        self.apply(PrimitiveKind::Flatten, &[x], Attrs::default())
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.apply(
            PrimitiveKind::Reshape,
            &[x],
            Attrs {
                shape: Some(shape.to_vec()),
                ..Attrs::default()
            },
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.apply(PrimitiveKind::Relu, &[x], Attrs::default())
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.apply(
            PrimitiveKind::LeakyRelu,
            &[x],
            Attrs {
                slope: Some(slope),
                ..Attrs::default()
            },
        )
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.apply(PrimitiveKind::Softplus, &[x], Attrs::default())
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.apply(PrimitiveKind::Square, &[x], Attrs::default())
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.apply(PrimitiveKind::Softmax, &[x], Attrs::default())
    }

    pub fn softmax_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.apply(
            PrimitiveKind::Softmax,
            &[x],
            Attrs {
                axis: Some(axis),
                ..Attrs::default()
            },
        )
    }

    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        self.apply(
            PrimitiveKind::LayerNorm,
            &[x],
            Attrs {
                eps: Some(eps),
                ..Attrs::default()
            },
        )
    }

    /// Inverted dropout. `seed` is drawn by the caller from its rng stream.
    pub fn dropout(&mut self, x: Var, p: f64, training: bool, seed: u64) -> Result<Var> {
        self.apply(
            PrimitiveKind::Dropout,
            &[x],
            Attrs {
                p: Some(p),
                training,
                seed: Some(seed),
                ..Attrs::default()
            },
        )
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.apply(PrimitiveKind::Linear, &[x, w, b], Attrs::default())
    }

    /// Multi-head attention over `batch` sequences of `seq` rows each.
    /// `key_mask[b * seq + j] == false` hides key `j` of sequence `b`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        seq: usize,
        heads: usize,
        key_mask: Option<Vec<bool>>,
    ) -> Result<Var> {
        self.apply(
            PrimitiveKind::ScaledDotProductAttention,
            &[q, k, v],
            Attrs {
                batch: Some(batch),
                seq: Some(seq),
                heads: Some(heads),
                key_mask,
                ..Attrs::default()
            },
        )
    }

    /// Summed softmax cross-entropy; `weights` scales each row's term.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], weights: Option<Vec<f64>>) -> Result<Var> {
        self.apply(
            PrimitiveKind::CrossEntropy,
            &[logits],
            Attrs {
                labels: Some(labels.to_vec()),
                weights,
                ..Attrs::default()
            },
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.apply(PrimitiveKind::Sum, &[x], Attrs::default())
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.apply(
            PrimitiveKind::Sum,
            &[x],
            Attrs {
                axis: Some(axis),
                ..Attrs::default()
            },
        )
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.apply(PrimitiveKind::Mean, &[x], Attrs::default())
    }

    pub fn gather_rows(&mut self, x: Var, index: Vec<usize>) -> Result<Var> {
        self.apply(
            PrimitiveKind::GatherRows,
            &[x],
            Attrs {
                index: Some(index),
                ..Attrs::default()
            },
        )
    }

    pub fn segment_sum(&mut self, x: Var, segments: Vec<usize>, count: usize) -> Result<Var> {
        self.apply(
            PrimitiveKind::SegmentSum,
            &[x],
            Attrs {
                index: Some(segments),
                count: Some(count),
                ..Attrs::default()
            },
        )
    }

    pub fn segment_softmax(&mut self, x: Var, segments: Vec<usize>, count: usize) -> Result<Var> {
        self.apply(
            PrimitiveKind::SegmentSoftmax,
            &[x],
            Attrs {
                index: Some(segments),
                count: Some(count),
                ..Attrs::default()
            },
        )
    }

    pub fn maximum(&mut self, xs: &[Var]) -> Result<Var> {
        self.apply(PrimitiveKind::Maximum, xs, Attrs::default())
    }

    pub fn cv_squared(&mut self, x: Var) -> Result<Var> {
        self.apply(PrimitiveKind::CvSquared, &[x], Attrs::default())
    }

    // ---- reverse pass ----

    /// Propagates d(loss)/d(node) to every reachable node that requires a
    /// gradient and accumulates parameter gradients into `registry`.
    pub fn backward(&mut self, loss: Var, registry: &mut ParamRegistry) -> Result<()> {
        let grads = self.backward_grads(loss)?;
        for (node, g) in self.nodes.iter().zip(&grads) {
            if let (Some(id), Some(g)) = (node.param, g) {
                registry.accumulate_grad(id, g);
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Same as [`Graph::backward`] for graphs without parameters.
    pub fn backward_inputs(&mut self, loss: Var) -> Result<()> {
        self.grads = self.backward_grads(loss)?;
        Ok(())
    }

    fn backward_grads(&self, loss: Var) -> Result<Vec<Option<Vec<f64>>>> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || node.kind.is_none() {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let input_grads = self.vjp(node, &g);
            grads[idx] = Some(g);
            for (inp, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !self.nodes[inp.0].requires_grad {
                    continue;
                }
                match &mut grads[inp.0] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        Ok(grads)
    }

    fn vjp(&self, node: &Node, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        use PrimitiveKind as K;
        let inp = |i: usize| &self.nodes[node.inputs[i].0].value;
        let needs = |i: usize| self.nodes[node.inputs[i].0].requires_grad;
        let y = &node.value;
        let a = &node.attrs;
        match node.kind.expect("leaf has no adjoint") {
            K::MatMul => {
                let (x, w) = (inp(0), inp(1));
                let (m, k, n) = (x.shape[0], x.shape[1], w.shape[1]);
                vec![
                    needs(0).then(|| mm_nt(g, &w.data, m, n, k)),
                    needs(1).then(|| mm_tn(&x.data, g, m, k, n)),
                ]
            }
            K::Linear => {
                let (x, w) = (inp(0), inp(1));
                let (m, k, n) = (x.shape[0], x.shape[1], w.shape[1]);
                let gb = needs(2).then(|| {
                    let mut gb = vec![0.0; n];
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    gb
                });
                vec![
                    needs(0).then(|| mm_nt(g, &w.data, m, n, k)),
                    needs(1).then(|| mm_tn(&x.data, g, m, k, n)),
                    gb,
                ]
            }
            kind @ (K::Add | K::Mul) => {
                let (x, z) = (inp(0), inp(1));
                let reduce = |target: &Tensor, other: Option<&Tensor>| -> Vec<f64> {
                    let mut out = vec![0.0; target.numel()];
                    if target.shape == y.shape {
                        match other {
                            None => out.copy_from_slice(g),
                            Some(o) if o.shape == y.shape => {
                                for i in 0..g.len() {
                                    out[i] = g[i] * o.data[i];
                                }
                            }
                            Some(o) => {
                                let mo = broadcast_map(&y.shape, &o.shape);
                                for i in 0..g.len() {
                                    out[i] = g[i] * o.data[mo[i]];
                                }
                            }
                        }
                    } else {
                        let mt = broadcast_map(&y.shape, &target.shape);
                        let mo = other.map(|o| broadcast_map(&y.shape, &o.shape));
                        for i in 0..g.len() {
                            let f = match (other, &mo) {
                                (Some(o), Some(mo)) => o.data[mo[i]],
                                _ => 1.0,
                            };
                            out[mt[i]] += g[i] * f;
                        }
                    }
                    out
                };
                if kind == K::Add {
                    vec![needs(0).then(|| reduce(x, None)), needs(1).then(|| reduce(z, None))]
                } else {
                    vec![needs(0).then(|| reduce(x, Some(z))), needs(1).then(|| reduce(z, Some(x)))]
                }
            }
            K::Concat => {
                let axis = a.axis.unwrap_or(0);
                let outer: usize = y.shape[..axis].iter().product();
                let mut res: Vec<Option<Vec<f64>>> = (0..node.inputs.len())
                    .map(|i| needs(i).then(|| Vec::with_capacity(inp(i).numel())))
                    .collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (i, r) in res.iter_mut().enumerate() {
                        let chunk = inp(i).numel() / outer;
                        if let Some(r) = r {
                            r.extend_from_slice(&g[off..off + chunk]);
                        }
                        off += chunk;
                    }
                }
                res
            }
            K::Flatten | K::Reshape => vec![Some(g.to_vec())],
            K::Relu => {
                let x = inp(0);
                vec![Some(x.data.iter().zip(g).map(|(v, d)| if *v > 0.0 { *d } else { 0.0 }).collect())]
            }
            K::LeakyRelu => {
                let x = inp(0);
                let s = a.slope.unwrap_or(0.2);
                vec![Some(x.data.iter().zip(g).map(|(v, d)| if *v > 0.0 { *d } else { s * d }).collect())]
            }
            K::Square => {
                let x = inp(0);
                vec![Some(x.data.iter().zip(g).map(|(v, d)| 2.0 * v * d).collect())]
            }
            K::Softplus => {
                let x = inp(0);
                vec![Some(
                    x.data
                        .iter()
                        .zip(g)
                        .map(|(v, d)| d / (1.0 + (-v).exp()))
                        .collect(),
                )]
            }
            K::Softmax => {
                let axis = a.axis.unwrap_or(y.shape.len() - 1);
                let len = y.shape[axis];
                let inner: usize = y.shape[axis + 1..].iter().product();
                let outer: usize = y.shape[..axis].iter().product();
                let mut dx = vec![0.0; y.numel()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let dot: f64 = (0..len)
                            .map(|j| g[base + j * inner] * y.data[base + j * inner])
                            .sum();
                        for j in 0..len {
                            let p = base + j * inner;
                            dx[p] = y.data[p] * (g[p] - dot);
                        }
                    }
                }
                vec![Some(dx)]
            }
            K::LayerNorm => {
                let d = *y.shape.last().unwrap();
                let mut dx = vec![0.0; y.numel()];
                for (r, rs) in node.aux.iter().enumerate() {
                    let xh = &y.data[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let mg = gr.iter().sum::<f64>() / d as f64;
                    let mgx = gr.iter().zip(xh).map(|(p, q)| p * q).sum::<f64>() / d as f64;
                    for j in 0..d {
                        dx[r * d + j] = rs * (gr[j] - mg - xh[j] * mgx);
                    }
                }
                vec![Some(dx)]
            }
            K::Dropout => {
                if node.aux.is_empty() {
                    vec![Some(g.to_vec())]
                } else {
                    vec![Some(g.iter().zip(&node.aux).map(|(d, m)| d * m).collect())]
                }
            }
            K::ScaledDotProductAttention => {
                let (q, k, v) = (inp(0), inp(1), inp(2));
                let (dq, dk, dv) = sdpa_backward(
                    g,
                    &q.data,
                    &k.data,
                    &v.data,
                    &node.aux,
                    a.batch.unwrap(),
                    a.seq.unwrap(),
                    a.heads.unwrap(),
                    q.shape[1],
                );
                vec![needs(0).then_some(dq), needs(1).then_some(dk), needs(2).then_some(dv)]
            }
            K::CrossEntropy => {
                let x = inp(0);
                let c = x.shape[1];
                let labels = a.labels.as_ref().unwrap();
                let mut dx = node.aux.clone();
                for (r, &lab) in labels.iter().enumerate() {
                    let w = a.weights.as_ref().map_or(1.0, |w| w[r]) * g[0];
                    dx[r * c + lab] -= 1.0;
                    for v in &mut dx[r * c..(r + 1) * c] {
                        *v *= w;
                    }
                }
                vec![Some(dx)]
            }
            K::Sum => {
                let x = inp(0);
                match a.axis {
                    None => vec![Some(vec![g[0]; x.numel()])],
                    Some(axis) => {
                        let len = x.shape[axis];
                        let inner: usize = x.shape[axis + 1..].iter().product();
                        let outer: usize = x.shape[..axis].iter().product();
                        let mut dx = vec![0.0; x.numel()];
                        for o in 0..outer {
                            for j in 0..len {
                                dx[(o * len + j) * inner..(o * len + j + 1) * inner]
                                    .copy_from_slice(&g[o * inner..(o + 1) * inner]);
                            }
                        }
                        vec![Some(dx)]
                    }
                }
            }
            K::Mean => {
                let x = inp(0);
                vec![Some(vec![g[0] / x.numel() as f64; x.numel()])]
            }
            K::GatherRows => {
                let x = inp(0);
                let w = x.row_len();
                let mut dx = vec![0.0; x.numel()];
                for (r, &i) in a.index.as_ref().unwrap().iter().enumerate() {
                    for (d, s) in dx[i * w..(i + 1) * w].iter_mut().zip(&g[r * w..(r + 1) * w]) {
                        *d += s;
                    }
                }
                vec![Some(dx)]
            }
            K::SegmentSum => {
                let x = inp(0);
                let w = x.row_len();
                let mut dx = Vec::with_capacity(x.numel());
                for &s in a.index.as_ref().unwrap() {
                    dx.extend_from_slice(&g[s * w..(s + 1) * w]);
                }
                vec![Some(dx)]
            }
            K::SegmentSoftmax => {
                let segs = a.index.as_ref().unwrap();
                let mut dot = vec![0.0; a.count.unwrap()];
                for ((gv, yv), &s) in g.iter().zip(&y.data).zip(segs) {
                    dot[s] += gv * yv;
                }
                vec![Some(
                    g.iter()
                        .zip(&y.data)
                        .zip(segs)
                        .map(|((gv, yv), &s)| yv * (gv - dot[s]))
                        .collect(),
                )]
            }
            K::Maximum => (0..node.inputs.len())
                .map(|i| {
                    needs(i).then(|| {
                        g.iter()
                            .zip(&node.aux)
                            .map(|(d, arg)| if *arg as usize == i { *d } else { 0.0 })
                            .collect()
                    })
                })
                .collect(),
            K::CvSquared => {
                let x = &inp(0).data;
                let n = x.len() as f64;
                let mean = x.iter().sum::<f64>() / n;
                if mean == 0.0 {
                    return vec![Some(vec![0.0; x.len()])];
                }
                let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                vec![Some(
                    x.iter()
                        .map(|v| {
                            g[0] * (2.0 * (v - mean) / (n * mean * mean)
                                - 2.0 * var / (n * mean * mean * mean))
                        })
                        .collect(),
                )]
            }
        }
    }
}

impl Tensor {
    fn clone_value(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            grad: None,
            requires_grad: false,
            param_id: None,
        }
    }
}

/// Squared coefficient of variation with population standard deviation.
/// Zero when the mean is zero.
pub fn cv_squared(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var / (mean * mean)
}

#[allow(clippy::too_many_arguments)]
fn sdpa_forward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    batch: usize,
    seq: usize,
    heads: usize,
    dm: usize,
    key_mask: Option<&[bool]>,
) -> (Vec<f64>, Vec<f64>) {
    let dh = dm / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; batch * seq * dm];
    let mut probs = vec![0.0; batch * heads * seq * seq];
    let mut scores = vec![0.0; seq];
    for b in 0..batch {
        for h in 0..heads {
            let off = h * dh;
            for i in 0..seq {
                let qi = &q[(b * seq + i) * dm + off..(b * seq + i) * dm + off + dh];
                let mut mx = f64::NEG_INFINITY;
                for j in 0..seq {
                    let visible = key_mask.map_or(true, |m| m[b * seq + j]);
                    scores[j] = if visible {
                        let kj = &k[(b * seq + j) * dm + off..(b * seq + j) * dm + off + dh];
                        qi.iter().zip(kj).map(|(p, q)| p * q).sum::<f64>() * scale
                    } else {
                        f64::NEG_INFINITY
                    };
                    mx = mx.max(scores[j]);
                }
                if mx == f64::NEG_INFINITY {
                    continue;
                }
                let prow = &mut probs[((b * heads + h) * seq + i) * seq..((b * heads + h) * seq + i + 1) * seq];
                let mut z = 0.0;
                for j in 0..seq {
                    let e = (scores[j] - mx).exp();
                    prow[j] = e;
                    z += e;
                }
                let orow = &mut out[(b * seq + i) * dm + off..(b * seq + i) * dm + off + dh];
                for j in 0..seq {
                    prow[j] /= z;
                    if prow[j] == 0.0 {
                        continue;
                    }
                    let vj = &v[(b * seq + j) * dm + off..(b * seq + j) * dm + off + dh];
                    for (o, vv) in orow.iter_mut().zip(vj) {
                        *o += prow[j] * vv;
                    }
                }
            }
        }
    }
    (out, probs)
}

#[allow(clippy::too_many_arguments)]
fn sdpa_backward(
    g: &[f64],
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    batch: usize,
    seq: usize,
    heads: usize,
    dm: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dh = dm / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; q.len()];
    let mut dk = vec![0.0; k.len()];
    let mut dv = vec![0.0; v.len()];
    let mut dp = vec![0.0; seq];
    for b in 0..batch {
        for h in 0..heads {
            let off = h * dh;
            for i in 0..seq {
                let prow = &probs[((b * heads + h) * seq + i) * seq..((b * heads + h) * seq + i + 1) * seq];
                let gi = &g[(b * seq + i) * dm + off..(b * seq + i) * dm + off + dh];
                let mut dot = 0.0;
                for j in 0..seq {
                    let r = (b * seq + j) * dm + off;
                    dp[j] = gi.iter().zip(&v[r..r + dh]).map(|(p, q)| p * q).sum();
                    dot += dp[j] * prow[j];
                    if prow[j] != 0.0 {
                        for (d, gg) in dv[r..r + dh].iter_mut().zip(gi) {
                            *d += prow[j] * gg;
                        }
                    }
                }
                let qi_r = (b * seq + i) * dm + off;
                for j in 0..seq {
                    let ds = prow[j] * (dp[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let r = (b * seq + j) * dm + off;
                    for t in 0..dh {
                        dq[qi_r + t] += ds * k[r + t];
                        dk[r + t] += ds * q[qi_r + t];
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}
