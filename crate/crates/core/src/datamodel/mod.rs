//! Records, ingestion, metadata vectors, embeddings, the hashed text
//! featurizer, splits and the planted-signal generator.

mod embed;
mod featurize;
mod io;
mod meta;
mod records;
mod split;
mod synth;

pub use embed::{load_embeddings, read_sidecar, save_embeddings, sidecar_path, EmbeddingMatrix, Sidecar};
pub use featurize::{fnv1a64, hash_featurize};
pub use io::{
    load_dataset, read_jsonl, save_dataset, write_jsonl, MOVIES_FILE, MOVIE_SYNOPSIS_FILE, REVIEWS_FILE,
    REVIEW_TEXT_FILE, USERS_FILE, USER_DESCRIPTION_FILE,
};
pub use meta::{build_meta_vectors, MetaBlock, MetaTable, PAD_VALUE, STD_FLOOR};
pub use records::{Dataset, MovieRecord, ReviewRecord, Split, UserRecord, MOVIE_FIELDS, REVIEW_FIELDS, USER_FIELDS};
pub use split::{split_dataset, split_sizes};
pub use synth::{synth_generate, synth_generate_with_truth, Propensity, SynthSpec, SynthTruth};

/// Text feature matrices for every node type at a common dimension.
#[derive(Clone, Debug)]
pub struct TextFeatures {
    pub dim: usize,
    pub reviews: EmbeddingMatrix,
    pub movies: EmbeddingMatrix,
    /// `None` for users without a description.
    pub user_descriptions: Vec<Option<Vec<f64>>>,
}

impl TextFeatures {
    /// Uses embedding files when present, the hashed featurizer otherwise.
    pub fn from_dataset(ds: &Dataset, dim: usize) -> crate::Result<Self> {
        let check = |m: &EmbeddingMatrix| -> crate::Result<()> {
            if m.dim != dim {
                return Err(crate::Error::Shape(format!(
                    "{} embeddings have dim {}, model expects {dim}",
                    m.kind, m.dim
                )));
            }
            Ok(())
        };
        let hashed = |kind: &str, texts: Vec<&str>| -> crate::Result<EmbeddingMatrix> {
            let rows: Vec<Vec<f64>> = texts.iter().map(|t| hash_featurize(t, dim)).collect();
            if rows.is_empty() {
                return Ok(EmbeddingMatrix::zeros(kind, 0, dim));
            }
            EmbeddingMatrix::from_rows(kind, dim, &rows)
        };
        let reviews = match &ds.review_text {
            Some(m) => {
                check(m)?;
                m.clone()
            }
            None => hashed("review_text", ds.reviews.iter().map(|r| r.text.as_str()).collect())?,
        };
        let movies = match &ds.movie_synopsis {
            Some(m) => {
                check(m)?;
                m.clone()
            }
            None => hashed("movie_synopsis", ds.movies.iter().map(|m| m.synopsis_text.as_str()).collect())?,
        };
        if let Some(m) = &ds.user_description {
            check(m)?;
        }
        let user_descriptions = (0..ds.users.len())
            .map(|u| {
                let text = ds.users[u].description_text.as_deref()?;
                Some(match (&ds.user_description, ds.description_row(u)) {
                    (Some(m), Some(row)) => m.row_f64(row),
                    _ => hash_featurize(text, dim),
                })
            })
            .collect();
        Ok(TextFeatures {
            dim,
            reviews,
            movies,
            user_descriptions,
        })
    }
}
