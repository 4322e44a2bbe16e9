//! Central-difference gradient checking.
//!
//! Relative error of one gradient entry is `|analytic - numeric| / max(|analytic|, |numeric|, 1e-3)`;
//! the floor keeps entries that are zero up to round-off from dominating.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Attrs, Graph, PrimitiveKind, Var};
use super::tensor::{ParamId, ParamRegistry, Tensor};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;
pub const REL_FLOOR: f64 = 1e-3;
pub const KINK_MARGIN: f64 = 1e-2;
pub const POINTS_PER_PRIMITIVE: usize = 10;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// `false` for points too close to a relu kink to difference reliably.
pub fn kink_free(x: f64) -> bool {
    x.abs() > KINK_MARGIN
}

/// Uniform draws in [-1, 1] with the kink neighbourhood rejected.
pub fn sample_kink_free<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let x = rng.random_range(-1.0..1.0);
            if kink_free(x) {
                break x;
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradEntry {
    pub primitive: String,
    pub points: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub entries: Vec<GradEntry>,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.entries.iter().all(|e| e.max_rel_err <= tol)
    }
}

fn projection(n: usize, seed: u64) -> Vec<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// Reduces `out` to a scalar through a fixed random projection.
fn project(g: &mut Graph, out: Var) -> Result<Var> {
    if g.value(out).numel() == 1 {
        return Ok(out);
    }
    let shape = g.shape(out).to_vec();
    let w = projection(g.value(out).numel(), shape.iter().sum::<usize>() as u64);
    let c = g.constant(Tensor::new(shape, w)?);
    let m = g.mul(out, c)?;
    g.sum(m)
}

/// Checks d(build)/d(inputs[i]) for every `i` in `wrt` by central differences.
pub fn check_inputs<F>(inputs: &[Tensor], wrt: &[usize], build: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |ins: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        let s = project(&mut g, out)?;
        Ok(g.data(s)[0])
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if wrt.contains(&i) {
                g.input(t.clone())
            } else {
                g.constant(t.clone())
            }
        })
        .collect();
    let out = build(&mut g, &vars)?;
    let s = project(&mut g, out)?;
    g.backward_inputs(s)?;
    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for &i in wrt {
        let analytic = g.grad(vars[i]).map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        for j in 0..inputs[i].numel() {
            let x0 = work[i].data[j];
            work[i].data[j] = x0 + FD_STEP;
            let fp = eval(&work)?;
            work[i].data[j] = x0 - FD_STEP;
            let fm = eval(&work)?;
            work[i].data[j] = x0;
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    Ok(worst)
}

/// Checks gradients of a scalar loss with respect to registered parameters.
/// `loss` must be a pure function of the registry values.
pub fn check_params<F>(registry: &mut ParamRegistry, ids: &[ParamId], loss: F) -> Result<f64>
where
    F: Fn(&ParamRegistry) -> Result<(Graph, Var)>,
{
    registry.zero_grads();
    let (mut g, l) = loss(registry)?;
    g.backward(l, registry)?;
    let mut worst: f64 = 0.0;
    for &id in ids {
        let analytic = registry.get(id).grad.clone().unwrap();
        for j in 0..analytic.len() {
            let x0 = registry.get(id).data[j];
            registry.get_mut(id).data[j] = x0 + FD_STEP;
            let (gp, lp) = loss(registry)?;
            registry.get_mut(id).data[j] = x0 - FD_STEP;
            let (gm, lm) = loss(registry)?;
            registry.get_mut(id).data[j] = x0;
            let numeric = (gp.data(lp)[0] - gm.data(lm)[0]) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    Ok(worst)
}

fn rand_tensor<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn kink_tensor<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), sample_kink_free(rng, n)).unwrap()
}

/// One randomized check point for `kind`; returns its max relative error.
fn check_point<R: Rng>(kind: PrimitiveKind, rng: &mut R, point: usize) -> Result<f64> {
    use PrimitiveKind as K;
    let alt = point % 2 == 1;
    let simple = |ins: Vec<Tensor>, attrs: Attrs| {
        let wrt: Vec<usize> = (0..ins.len()).collect();
        check_inputs(&ins, &wrt, move |g, v| g.apply(kind, v, attrs.clone()))
    };
    match kind {
        K::MatMul => simple(vec![rand_tensor(rng, &[3, 4]), rand_tensor(rng, &[4, 2])], Attrs::default()),
        K::Add => {
            let b = if alt { vec![3, 4] } else { vec![4] };
            simple(vec![rand_tensor(rng, &[3, 4]), rand_tensor(rng, &b)], Attrs::default())
        }
        K::Mul => {
            let b = if alt { vec![3, 4] } else { vec![3, 1] };
            simple(vec![rand_tensor(rng, &[3, 4]), rand_tensor(rng, &b)], Attrs::default())
        }
        K::Concat => {
            let (axis, b) = if alt { (0, vec![1, 3]) } else { (1, vec![2, 2]) };
            simple(
                vec![rand_tensor(rng, &[2, 3]), rand_tensor(rng, &b)],
                Attrs {
                    axis: Some(axis),
                    ..Attrs::default()
                },
            )
        }
        K::Flatten => simple(vec![rand_tensor(rng, &[2, 3, 2])], Attrs::default()),
        K::Reshape => simple(
            vec![rand_tensor(rng, &[2, 6])],
            Attrs {
                shape: Some(vec![3, 4]),
                ..Attrs::default()
            },
        ),
        K::Relu | K::Softplus | K::Square => simple(vec![kink_tensor(rng, &[2, 5])], Attrs::default()),
        K::LeakyRelu => simple(
            vec![kink_tensor(rng, &[2, 5])],
            Attrs {
                slope: Some(0.2),
                ..Attrs::default()
            },
        ),
        K::Softmax => {
            let (shape, axis) = if alt { (vec![2, 5], 1) } else { (vec![5], 0) };
            simple(
                vec![rand_tensor(rng, &shape)],
                Attrs {
                    axis: Some(axis),
                    ..Attrs::default()
                },
            )
        }
        K::LayerNorm => simple(
            vec![rand_tensor(rng, &[3, 6])],
            Attrs {
                eps: Some(1e-5),
                ..Attrs::default()
            },
        ),
        K::Dropout => simple(
            vec![rand_tensor(rng, &[3, 4])],
            Attrs {
                p: Some(0.3),
                training: true,
                seed: Some(rng.random()),
                ..Attrs::default()
            },
        ),
        K::Linear => simple(
            vec![rand_tensor(rng, &[3, 4]), rand_tensor(rng, &[4, 2]), rand_tensor(rng, &[2])],
            Attrs::default(),
        ),
        K::ScaledDotProductAttention => simple(
            vec![rand_tensor(rng, &[6, 4]), rand_tensor(rng, &[6, 4]), rand_tensor(rng, &[6, 4])],
            Attrs {
                batch: Some(2),
                seq: Some(3),
                heads: Some(2),
                key_mask: alt.then(|| vec![true, true, true, true, true, false]),
                ..Attrs::default()
            },
        ),
        K::CrossEntropy => {
            let labels = (0..4).map(|_| rng.random_range(0..3)).collect();
            let weights = alt.then(|| (0..4).map(|_| rng.random_range(0.0..2.0)).collect());
            simple(
                vec![rand_tensor(rng, &[4, 3])],
                Attrs {
                    labels: Some(labels),
                    weights,
                    ..Attrs::default()
                },
            )
        }
        K::Sum => simple(
            vec![rand_tensor(rng, &[3, 4])],
            Attrs {
                axis: alt.then_some(1),
                ..Attrs::default()
            },
        ),
        K::Mean => simple(vec![rand_tensor(rng, &[3, 4])], Attrs::default()),
        K::GatherRows => simple(
            vec![rand_tensor(rng, &[4, 3])],
            Attrs {
                index: Some(vec![2, 0, 2, 3]),
                ..Attrs::default()
            },
        ),
        K::SegmentSum => simple(
            vec![rand_tensor(rng, &[5, 2])],
            Attrs {
                index: Some(vec![0, 1, 0, 2, 1]),
                count: Some(3),
                ..Attrs::default()
            },
        ),
        K::SegmentSoftmax => simple(
            vec![rand_tensor(rng, &[6, 1])],
            Attrs {
                index: Some(vec![0, 0, 1, 1, 1, 2]),
                count: Some(3),
                ..Attrs::default()
            },
        ),
        K::Maximum => {
            // keep the three candidates well separated so the argmax is stable under ±h
            let ins: Vec<Tensor> = loop {
                let c: Vec<Tensor> = (0..3).map(|_| rand_tensor(rng, &[2, 3])).collect();
                let ok = (0..6).all(|j| {
                    let mut v: Vec<f64> = c.iter().map(|t| t.data[j]).collect();
                    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    v[2] - v[1] > KINK_MARGIN
                });
                if ok {
                    break c;
                }
            };
            simple(ins, Attrs::default())
        }
        K::CvSquared => {
            let t = Tensor::new(vec![4], (0..4).map(|_| rng.random_range(0.2..2.0)).collect())?;
            simple(vec![t], Attrs::default())
        }
    }
}

/// Runs [`POINTS_PER_PRIMITIVE`] random checks per primitive in `op_set`.
pub fn gradcheck<R: Rng>(op_set: &[PrimitiveKind], rng: &mut R) -> Result<GradReport> {
    let mut entries = Vec::with_capacity(op_set.len());
    for &kind in op_set {
        let mut worst: f64 = 0.0;
        for p in 0..POINTS_PER_PRIMITIVE {
            worst = worst.max(check_point(kind, rng, p)?);
        }
        entries.push(GradEntry {
            primitive: kind.name().to_string(),
            points: POINTS_PER_PRIMITIVE,
            max_rel_err: worst,
        });
    }
    Ok(GradReport { entries })
}
