//! Planted-signal dataset generator.
//!
//! Each review's label is drawn from
//! `Bernoulli(sigmoid(a·logit(p_u) + b·genre_bias + c·meta_signal + ε))`,
//! where `p_u` is the author's spoiler propensity. The three modalities see
//! different parts of that logit:
//! * text: genre prototype plus a label-dependent offset along a fixed direction,
//! * meta: `content_length` grows with the review's latent `meta_signal`,
//! * graph: user nodes carry a description embedding shifted by `p_u`, and the
//!   user's other reviews feed the profile encoder.

use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::embed::EmbeddingMatrix;
use super::records::{Dataset, MovieRecord, ReviewRecord, UserRecord};
use super::split::split_dataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Propensity {
    /// Low-mode `Beta(alpha, beta)` mixed with high-mode `Beta(beta, alpha)`.
    BetaMixture { alpha: f64, beta: f64, high_fraction: f64 },
    /// Every user is exactly `low` or `high`.
    TwoPoint { low: f64, high: f64, high_fraction: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_users: usize,
    pub n_movies: usize,
    pub n_reviews: usize,
    pub text_dim: usize,
    pub n_genres: usize,
    pub a_user: f64,
    pub b_genre: f64,
    pub c_meta: f64,
    pub noise_std: f64,
    /// Magnitude of the label offset in review text embeddings.
    pub text_signal: f64,
    /// Per-element standard deviation of embedding noise.
    pub text_noise: f64,
    /// Norm of each genre prototype.
    pub genre_scale: f64,
    /// Fraction of users that have a description.
    pub desc_fraction: f64,
    /// Shift of a user's description embedding per unit of `2·p_u − 1`.
    pub desc_signal: f64,
    pub propensity: Propensity,
    pub split: [f64; 3],
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_users: 300,
            n_movies: 100,
            n_reviews: 2000,
            text_dim: 64,
            n_genres: 6,
            a_user: 2.0,
            b_genre: 1.0,
            c_meta: 1.0,
            noise_std: 0.5,
            text_signal: 1.5,
            text_noise: 1.0,
            genre_scale: 2.0,
            desc_fraction: 0.3,
            desc_signal: 0.0,
            propensity: Propensity::BetaMixture {
                alpha: 0.5,
                beta: 4.0,
                high_fraction: 0.5,
            },
            split: [0.8, 0.1, 0.1],
        }
    }
}

impl SynthSpec {
    /// Only the user propensity carries label information, and it is visible
    /// solely through user nodes (descriptions) in the graph.
    pub fn graph_only() -> Self {
        SynthSpec {
            a_user: 3.0,
            b_genre: 0.0,
            c_meta: 0.0,
            noise_std: 0.0,
            text_signal: 0.0,
            desc_fraction: 1.0,
            desc_signal: 3.0,
            propensity: Propensity::TwoPoint {
                low: 0.05,
                high: 0.95,
                high_fraction: 0.5,
            },
            ..SynthSpec::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let counts = [
            ("n_users", self.n_users),
            ("n_movies", self.n_movies),
            ("n_reviews", self.n_reviews),
            ("text_dim", self.text_dim),
            ("n_genres", self.n_genres),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("synth spec: {name} must be positive")));
        }
        if self.noise_std < 0.0 || self.text_noise < 0.0 || !(0.0..=1.0).contains(&self.desc_fraction) {
            return Err(Error::Config("synth spec: noise levels and fractions out of range".into()));
        }
        Ok(())
    }
}

/// Planted quantities behind a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub user_propensity: Vec<f64>,
    pub genre_bias: Vec<f64>,
    pub review_meta_signal: Vec<f64>,
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-4, 1.0 - 1e-4);
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn unit_vector<R: Rng>(rng: &mut R, dim: usize, norm: f64) -> Vec<f64> {
    let n = Normal::new(0.0, 1.0).unwrap();
    let v: Vec<f64> = (0..dim).map(|_| n.sample(rng)).collect();
    let len = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x * norm / len).collect()
}

fn words<R: Rng>(rng: &mut R, n: usize) -> String {
    (0..n)
        .map(|_| format!("w{}", rng.random_range(0..500)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    synth_generate_with_truth(spec, seed).map(|(d, _)| d)
}

pub fn synth_generate_with_truth(spec: &SynthSpec, seed: u64) -> Result<(Dataset, SynthTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = spec.text_dim;
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let text_noise = Normal::new(0.0, spec.text_noise).unwrap();
    let label_noise = Normal::new(0.0, spec.noise_std).unwrap();

    let prototypes: Vec<Vec<f64>> = (0..spec.n_genres)
        .map(|_| unit_vector(&mut rng, dim, spec.genre_scale))
        .collect();
    let label_dir = unit_vector(&mut rng, dim, 1.0);
    let desc_dir = unit_vector(&mut rng, dim, 1.0);
    let genre_bias: Vec<f64> = (0..spec.n_genres).map(|_| std_normal.sample(&mut rng)).collect();

    let mut movies = Vec::with_capacity(spec.n_movies);
    let mut movie_rows = Vec::with_capacity(spec.n_movies);
    for i in 0..spec.n_movies {
        let genre = rng.random_range(0..spec.n_genres);
        let n_words = rng.random_range(8..40);
        let synopsis = words(&mut rng, n_words);
        let mut metadata = IndexMap::new();
        metadata.insert("year".to_string(), rng.random_range(1950..=2023) as f64);
        metadata.insert("runtime".to_string(), rng.random_range(80..=180) as f64);
        metadata.insert("rating".to_string(), round2(rng.random_range(1.0..10.0)));
        metadata.insert("synopsis_length".to_string(), synopsis.len() as f64);
        movie_rows.push(
            prototypes[genre]
                .iter()
                .map(|p| p + 0.5 * text_noise.sample(&mut rng))
                .collect::<Vec<f64>>(),
        );
        movies.push(MovieRecord {
            movie_id: format!("m{i}"),
            metadata,
            synopsis_text: synopsis,
            genre: Some(genre),
        });
    }

    let mut users = Vec::with_capacity(spec.n_users);
    let mut propensity = Vec::with_capacity(spec.n_users);
    let mut desc_rows = Vec::new();
    for i in 0..spec.n_users {
        let p = match &spec.propensity {
            Propensity::BetaMixture {
                alpha,
                beta,
                high_fraction,
            } => {
                let high = rng.random::<f64>() < *high_fraction;
                let (a, b) = if high { (*beta, *alpha) } else { (*alpha, *beta) };
                Beta::new(a, b)
                    .map_err(|e| Error::Config(format!("propensity beta: {e}")))?
                    .sample(&mut rng)
            }
            Propensity::TwoPoint {
                low,
                high,
                high_fraction,
            } => {
                if rng.random::<f64>() < *high_fraction {
                    *high
                } else {
                    *low
                }
            }
        };
        propensity.push(p);
        let description = (rng.random::<f64>() < spec.desc_fraction).then(|| {
            let n_words = rng.random_range(5..25);
            words(&mut rng, n_words)
        });
        if description.is_some() {
            let shift = spec.desc_signal * (2.0 * p - 1.0);
            desc_rows.push(
                desc_dir
                    .iter()
                    .map(|d| shift * d + text_noise.sample(&mut rng))
                    .collect::<Vec<f64>>(),
            );
        }
        let mut metadata = IndexMap::new();
        metadata.insert("badge_count".to_string(), rng.random_range(0..=20) as f64);
        metadata.insert("review_count".to_string(), 0.0);
        metadata.insert(
            "description_length".to_string(),
            description.as_ref().map_or(0.0, |d| d.len() as f64),
        );
        users.push(UserRecord {
            user_id: format!("u{i}"),
            metadata,
            description_text: description,
            review_ids: vec![],
        });
    }

    let mut reviews = Vec::with_capacity(spec.n_reviews);
    let mut review_rows = Vec::with_capacity(spec.n_reviews);
    let mut meta_signal = Vec::with_capacity(spec.n_reviews);
    let mut per_user = vec![0usize; spec.n_users];
    for i in 0..spec.n_reviews {
        // the first pass over users guarantees everyone has at least one review
        let u = if i < spec.n_users {
            i
        } else {
            rng.random_range(0..spec.n_users)
        };
        let m = rng.random_range(0..spec.n_movies);
        let genre = movies[m].genre.unwrap();
        let s = std_normal.sample(&mut rng);
        let eps = if spec.noise_std > 0.0 {
            label_noise.sample(&mut rng)
        } else {
            0.0
        };
        let z = spec.a_user * logit(propensity[u]) + spec.b_genre * genre_bias[genre] + spec.c_meta * s + eps;
        let label = u8::from(rng.random::<f64>() < sigmoid(z));
        let sign = if label == 1 { 1.0 } else { -1.0 };
        review_rows.push(
            prototypes[genre]
                .iter()
                .zip(&label_dir)
                .map(|(p, d)| p + spec.text_signal * sign * d + text_noise.sample(&mut rng))
                .collect::<Vec<f64>>(),
        );
        let content_length = (5.5 + 0.6 * s).exp().round();
        let text = words(&mut rng, (3 + content_length as usize / 60).min(40));
        let mut metadata = IndexMap::new();
        metadata.insert("time".to_string(), round2(2000.0 + rng.random_range(0.0..23.0)));
        metadata.insert("point".to_string(), rng.random_range(1..=10) as f64);
        metadata.insert("content_length".to_string(), content_length);
        reviews.push(ReviewRecord {
            review_id: format!("r{i}"),
            user_id: format!("u{u}"),
            movie_id: format!("m{m}"),
            metadata,
            text,
            label,
            split: None,
        });
        meta_signal.push(s);
        per_user[u] += 1;
    }
    for (u, c) in users.iter_mut().zip(&per_user) {
        u.metadata.insert("review_count".to_string(), *c as f64);
    }

    let ds = Dataset::new(users, movies, reviews)?;
    let ds = ds.with_embeddings(
        Some(EmbeddingMatrix::from_rows("review_text", dim, &review_rows)?),
        Some(EmbeddingMatrix::from_rows("movie_synopsis", dim, &movie_rows)?),
        if desc_rows.is_empty() {
            None
        } else {
            Some(EmbeddingMatrix::from_rows("user_description", dim, &desc_rows)?)
        },
    )?;
    let ds = split_dataset(&ds, spec.split, seed)?;
    Ok((
        ds,
        SynthTruth {
            user_propensity: propensity,
            genre_bias,
            review_meta_signal: meta_signal,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_signal_is_a_fair_coin() {
        let spec = SynthSpec {
            n_reviews: 10_000,
            a_user: 0.0,
            b_genre: 0.0,
            c_meta: 0.0,
            noise_std: 0.0,
            ..SynthSpec::default()
        };
        let ds = synth_generate(&spec, 1).unwrap();
        let rate = ds.reviews.iter().map(|r| r.label as f64).sum::<f64>() / 10_000.0;
        assert!((rate - 0.5).abs() < 0.05, "{rate}");
    }

    #[test]
    fn user_rate_tracks_propensity() {
        let spec = SynthSpec {
            n_reviews: 6000,
            a_user: 4.0,
            b_genre: 0.0,
            c_meta: 0.0,
            ..SynthSpec::default()
        };
        let (ds, truth) = synth_generate_with_truth(&spec, 7).unwrap();
        let (mut xs, mut ys) = (vec![], vec![]);
        for u in 0..ds.users.len() {
            let revs = ds.user_reviews(u);
            if revs.is_empty() {
                continue;
            }
            let rate = revs.iter().map(|&r| ds.reviews[r].label as f64).sum::<f64>() / revs.len() as f64;
            xs.push(truth.user_propensity[u]);
            ys.push(rate);
        }
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
        let r = cov / (vx * vy).sqrt();
        assert!(r > 0.7, "pearson r = {r}");
    }

    #[test]
    fn bad_counts_rejected() {
        let spec = SynthSpec {
            n_movies: 0,
            ..SynthSpec::default()
        };
        assert!(synth_generate(&spec, 0).unwrap_err().is_config());
    }
}
