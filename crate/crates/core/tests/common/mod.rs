//! Fixtures and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use mmoe_core::datamodel::{Dataset, MovieRecord, ReviewRecord, UserRecord};
use mmoe_core::diffcore::ParamRegistry;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Dataset with the given `(user, movie)` reviews and empty records.
pub fn tiny(reviews: &[(usize, usize)], n_users: usize, n_movies: usize) -> Dataset {
    let users = (0..n_users)
        .map(|u| UserRecord {
            user_id: format!("u{u}"),
            metadata: Default::default(),
            description_text: None,
            review_ids: vec![],
        })
        .collect();
    let movies = (0..n_movies)
        .map(|m| MovieRecord {
            movie_id: format!("m{m}"),
            metadata: Default::default(),
            synopsis_text: String::new(),
            genre: None,
        })
        .collect();
    let reviews = reviews
        .iter()
        .enumerate()
        .map(|(i, &(u, m))| ReviewRecord {
            review_id: format!("r{i}"),
            user_id: format!("u{u}"),
            movie_id: format!("m{m}"),
            metadata: Default::default(),
            text: String::new(),
            label: 0,
            split: None,
        })
        .collect();
    Dataset::new(users, movies, reviews).unwrap()
}

pub fn randomize(reg: &mut ParamRegistry, rng: &mut ChaCha8Rng, scale: f64) {
    for (_, t) in reg.iter_mut() {
        t.data.iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
    }
}

/// One GAT layer evaluated straight from its equations with explicit loops.
/// `edges` are `(src, dst)`; every node also attends to itself.
#[allow(clippy::too_many_arguments)]
pub fn dense_gat(
    n: usize,
    edges: &[(usize, usize)],
    g: &[f64],
    d_in: usize,
    d_out: usize,
    ts: &[f64],
    tt: &[f64],
    a_s: &[f64],
    a_t: &[f64],
    slope: f64,
) -> Vec<f64> {
    let proj = |theta: &[f64], i: usize| -> Vec<f64> {
        (0..d_out)
            .map(|o| (0..d_in).map(|k| g[i * d_in + k] * theta[k * d_out + o]).sum())
            .collect()
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let leaky = |x: f64| if x > 0.0 { x } else { slope * x };
    let mut out = vec![0.0; n * d_out];
    for i in 0..n {
        let si = dot(a_s, &proj(ts, i));
        // (logit, message)
        let mut terms = vec![(leaky(si + dot(a_t, &proj(tt, i))), proj(ts, i))];
        for &(j, d) in edges {
            if d == i {
                terms.push((leaky(si + dot(a_t, &proj(tt, j))), proj(tt, j)));
            }
        }
        let mx = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = terms.iter().map(|t| (t.0 - mx).exp()).sum();
        for (logit, msg) in &terms {
            let a = (logit - mx).exp() / z;
            for o in 0..d_out {
                out[i * d_out + o] += a * msg[o];
            }
        }
    }
    out
}

/// AUC as the fraction of (positive, negative) pairs ranked correctly,
/// ties counting one half.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0usize);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

/// Held-out accuracy of an L2-regularized logistic regression trained by
/// full-batch gradient descent on standardized features. Even rows train,
/// odd rows test.
pub fn logistic_probe(x: &[Vec<f64>], y: &[u8]) -> f64 {
    let d = x[0].len();
    let n = x.len() as f64;
    let mean: Vec<f64> = (0..d).map(|k| x.iter().map(|r| r[k]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..d)
        .map(|k| (x.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n).sqrt().max(1e-9))
        .collect();
    let z: Vec<Vec<f64>> = x
        .iter()
        .map(|r| (0..d).map(|k| (r[k] - mean[k]) / std[k]).collect())
        .collect();
    let train: Vec<usize> = (0..z.len()).step_by(2).collect();
    let test: Vec<usize> = (1..z.len()).step_by(2).collect();
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
    for _ in 0..2000 {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for &i in &train {
            let p = sigmoid(z[i].iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b);
            let e = p - y[i] as f64;
            gw.iter_mut().zip(&z[i]).for_each(|(g, v)| *g += e * v);
            gb += e;
        }
        let m = train.len() as f64;
        for k in 0..d {
            w[k] -= 0.5 * (gw[k] / m + 1e-3 * w[k]);
        }
        b -= 0.5 * gb / m;
    }
    let correct = test
        .iter()
        .filter(|&&i| {
            let s = z[i].iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            (s > 0.0) == (y[i] == 1)
        })
        .count();
    correct as f64 / test.len() as f64
}
