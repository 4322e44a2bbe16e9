use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datamodel::{Dataset, EmbeddingMatrix, MetaTable, TextFeatures};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, NodeType, Subgraph};

/// Per-node text and metadata rows consumed by the model.
///
/// User text rows are the frozen profile embeddings, or zeros when profiles
/// are disabled.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStore {
    pub text_dim: usize,
    pub meta_dim: usize,
    pub review_text: Vec<f64>,
    pub movie_text: Vec<f64>,
    pub user_text: Vec<f64>,
    pub review_meta: Vec<f64>,
    pub movie_meta: Vec<f64>,
    pub user_meta: Vec<f64>,
}

fn flat(m: &EmbeddingMatrix) -> Vec<f64> {
    m.data.iter().map(|v| *v as f64).collect()
}

impl FeatureStore {
    pub fn new(ds: &Dataset, text: &TextFeatures, meta: &MetaTable, profiles: Option<&EmbeddingMatrix>) -> Result<Self> {
        let (n_users, _, _) = ds.counts();
        let user_text = match profiles {
            Some(p) => {
                if p.rows != n_users || p.dim != text.dim {
                    return Err(Error::Shape(format!(
                        "profiles are {}x{}, expected {n_users}x{}",
                        p.rows, p.dim, text.dim
                    )));
                }
                flat(p)
            }
            None => vec![0.0; n_users * text.dim],
        };
        Ok(FeatureStore {
            text_dim: text.dim,
            meta_dim: meta.meta_dim,
            review_text: flat(&text.reviews),
            movie_text: flat(&text.movies),
            user_text,
            review_meta: meta.reviews.data.clone(),
            movie_meta: meta.movies.data.clone(),
            user_meta: meta.users.data.clone(),
        })
    }

    pub fn review_text(&self, r: usize) -> &[f64] {
        &self.review_text[r * self.text_dim..(r + 1) * self.text_dim]
    }

    pub fn review_meta(&self, r: usize) -> &[f64] {
        &self.review_meta[r * self.meta_dim..(r + 1) * self.meta_dim]
    }

    /// `[t_i, m_i]` for a graph node.
    pub fn node_row(&self, graph: &HeteroGraph, node: usize) -> Vec<f64> {
        let (t, m) = (self.text_dim, self.meta_dim);
        let (text, meta, i) = match graph.locate(node) {
            (NodeType::User, i) => (&self.user_text, &self.user_meta, i),
            (NodeType::Movie, i) => (&self.movie_text, &self.movie_meta, i),
            (NodeType::Review, i) => (&self.review_text, &self.review_meta, i),
        };
        let mut row = Vec::with_capacity(t + m);
        row.extend_from_slice(&text[i * t..(i + 1) * t]);
        row.extend_from_slice(&meta[i * m..(i + 1) * m]);
        row
    }

    pub fn node_matrix(&self, graph: &HeteroGraph, sub: &Subgraph) -> Result<Tensor> {
        let width = self.text_dim + self.meta_dim;
        let mut data = Vec::with_capacity(sub.len() * width);
        for &node in &sub.nodes {
            data.extend(self.node_row(graph, node));
        }
        Tensor::matrix(sub.len(), width, data)
    }

    /// Copy with each text element zeroed independently with probability
    /// `rate`. Masks from one seed are nested across rates.
    pub fn drop_text(&self, rate: f64, seed: u64) -> Self {
        let mut s = self.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for table in [&mut s.review_text, &mut s.movie_text, &mut s.user_text] {
            zero_elements(table, rate, &mut rng);
        }
        s
    }

    /// Same as [`FeatureStore::drop_text`] for the metadata vectors.
    pub fn drop_meta(&self, rate: f64, seed: u64) -> Self {
        let mut s = self.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for table in [&mut s.review_meta, &mut s.movie_meta, &mut s.user_meta] {
            zero_elements(table, rate, &mut rng);
        }
        s
    }
}

fn zero_elements(table: &mut [f64], rate: f64, rng: &mut ChaCha8Rng) {
    for v in table.iter_mut() {
        if rng.random::<f64>() < rate {
            *v = 0.0;
        }
    }
}
