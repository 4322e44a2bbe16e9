use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::records::{Dataset, Split, MOVIE_FIELDS, REVIEW_FIELDS, USER_FIELDS};
use crate::error::{Error, Result};

pub const PAD_VALUE: f64 = -1.0;
pub const STD_FLOOR: f64 = 1e-6;

/// Normalized, padded metadata for one node type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaBlock {
    pub columns: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// `rows × meta_dim`, row-major.
    pub data: Vec<f64>,
}

impl MetaBlock {
    pub fn rows(&self, meta_dim: usize) -> usize {
        self.data.len() / meta_dim
    }
}

/// Metadata vectors for every node, all of length `meta_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaTable {
    pub meta_dim: usize,
    pub users: MetaBlock,
    pub movies: MetaBlock,
    pub reviews: MetaBlock,
}

impl MetaTable {
    pub fn user(&self, i: usize) -> &[f64] {
        &self.users.data[i * self.meta_dim..(i + 1) * self.meta_dim]
    }

    pub fn movie(&self, i: usize) -> &[f64] {
        &self.movies.data[i * self.meta_dim..(i + 1) * self.meta_dim]
    }

    pub fn review(&self, i: usize) -> &[f64] {
        &self.reviews.data[i * self.meta_dim..(i + 1) * self.meta_dim]
    }
}

/// Canonical fields first (those present in any record), then extras alphabetically.
fn columns<'a>(canonical: &[&str], records: impl Iterator<Item = &'a IndexMap<String, f64>> + Clone) -> Vec<String> {
    let mut cols: Vec<String> = canonical
        .iter()
        .filter(|f| records.clone().any(|m| m.contains_key(**f)))
        .map(|f| f.to_string())
        .collect();
    let mut extra: Vec<String> = records
        .flat_map(|m| m.keys())
        .filter(|k| !canonical.contains(&k.as_str()))
        .cloned()
        .collect();
    extra.sort();
    extra.dedup();
    cols.extend(extra);
    cols
}

fn block<'a>(
    canonical: &[&str],
    all: &'a [&'a IndexMap<String, f64>],
    stats_rows: &[usize],
    meta_dim: usize,
) -> Result<MetaBlock> {
    let cols = columns(canonical, all.iter().copied());
    if cols.len() > meta_dim {
        return Err(Error::Config(format!(
            "meta_dim {meta_dim} smaller than {} metadata fields ({})",
            cols.len(),
            cols.join(", ")
        )));
    }
    let mut mean = Vec::with_capacity(cols.len());
    let mut std = Vec::with_capacity(cols.len());
    for c in &cols {
        let vals: Vec<f64> = stats_rows.iter().filter_map(|&r| all[r].get(c).copied()).collect();
        if vals.is_empty() {
            mean.push(0.0);
            std.push(1.0);
            continue;
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
        mean.push(m);
        std.push(v.sqrt());
    }
    let mut data = Vec::with_capacity(all.len() * meta_dim);
    for rec in all {
        for (j, c) in cols.iter().enumerate() {
            // missing fields are imputed with the training mean, i.e. 0 after normalization
            let z = match rec.get(c) {
                Some(x) => (x - mean[j]) / std[j].max(STD_FLOOR),
                None => 0.0,
            };
            data.push(z);
        }
        data.extend(std::iter::repeat_n(PAD_VALUE, meta_dim - cols.len()));
    }
    Ok(MetaBlock {
        columns: cols,
        mean,
        std,
        data,
    })
}

/// Z-scores every metadata column, then right-pads with −1 to `meta_dim`.
///
/// Review statistics come from the training split only (all reviews when the
/// dataset has not been split); user and movie statistics use every entity.
pub fn build_meta_vectors(ds: &Dataset, meta_dim: usize) -> Result<MetaTable> {
    if meta_dim == 0 {
        return Err(Error::Config("meta_dim must be positive".into()));
    }
    let users: Vec<_> = ds.users.iter().map(|u| &u.metadata).collect();
    let movies: Vec<_> = ds.movies.iter().map(|m| &m.metadata).collect();
    let reviews: Vec<_> = ds.reviews.iter().map(|r| &r.metadata).collect();
    let all_users: Vec<usize> = (0..users.len()).collect();
    let all_movies: Vec<usize> = (0..movies.len()).collect();
    let review_stats: Vec<usize> = if ds.reviews.iter().any(|r| r.split.is_some()) {
        ds.split_indices(Split::Train)
    } else {
        (0..reviews.len()).collect()
    };
    Ok(MetaTable {
        meta_dim,
        users: block(&USER_FIELDS, &users, &all_users, meta_dim)?,
        movies: block(&MOVIE_FIELDS, &movies, &all_movies, meta_dim)?,
        reviews: block(&REVIEW_FIELDS, &reviews, &review_stats, meta_dim)?,
    })
}
