use std::collections::HashMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::embed::EmbeddingMatrix;
use crate::error::{Error, Result};

/// Metadata fields in serialization order, per node type.
pub const USER_FIELDS: [&str; 3] = ["badge_count", "review_count", "description_length"];
pub const MOVIE_FIELDS: [&str; 6] = [
    "year",
    "is_adult",
    "runtime",
    "rating",
    "vote_count",
    "synopsis_length",
];
pub const REVIEW_FIELDS: [&str; 5] = [
    "time",
    "helpful_vote_count",
    "total_vote_count",
    "point",
    "content_length",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    #[serde(default)]
    pub metadata: IndexMap<String, f64>,
    #[serde(default)]
    pub description_text: Option<String>,
    #[serde(default)]
    pub review_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MovieRecord {
    pub movie_id: String,
    #[serde(default)]
    pub metadata: IndexMap<String, f64>,
    #[serde(default)]
    pub synopsis_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genre: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub review_id: String,
    pub user_id: String,
    pub movie_id: String,
    #[serde(default)]
    pub metadata: IndexMap<String, f64>,
    #[serde(default)]
    pub text: String,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

/// Cross-referenced record tables plus optional precomputed embeddings.
///
/// Immutable after construction; `user_reviews` lists each user's reviews in
/// chronological order (by the `time` field, file order on ties).
#[derive(Clone, Debug)]
pub struct Dataset {
    pub users: Vec<UserRecord>,
    pub movies: Vec<MovieRecord>,
    pub reviews: Vec<ReviewRecord>,
    pub review_text: Option<EmbeddingMatrix>,
    pub movie_synopsis: Option<EmbeddingMatrix>,
    /// One row per user that has a description, in user order.
    pub user_description: Option<EmbeddingMatrix>,
    user_index: HashMap<String, usize>,
    movie_index: HashMap<String, usize>,
    review_index: HashMap<String, usize>,
    review_user: Vec<usize>,
    review_movie: Vec<usize>,
    user_reviews: Vec<Vec<usize>>,
}

fn index_of<'a>(ids: impl Iterator<Item = &'a str>, what: &str) -> Result<HashMap<String, usize>> {
    let mut m = HashMap::new();
    for (i, id) in ids.enumerate() {
        if m.insert(id.to_string(), i).is_some() {
            return Err(Error::Integrity(format!("duplicate {what} id {id}")));
        }
    }
    Ok(m)
}

fn check_finite(meta: &IndexMap<String, f64>, owner: &str) -> Result<()> {
    match meta.iter().find(|(_, v)| !v.is_finite()) {
        Some((k, v)) => Err(Error::Integrity(format!("{owner}: metadata {k} = {v} is not finite"))),
        None => Ok(()),
    }
}

impl Dataset {
    /// Validates references and orders every user's reviews chronologically.
    pub fn new(mut users: Vec<UserRecord>, movies: Vec<MovieRecord>, reviews: Vec<ReviewRecord>) -> Result<Self> {
        let user_index = index_of(users.iter().map(|u| u.user_id.as_str()), "user")?;
        let movie_index = index_of(movies.iter().map(|m| m.movie_id.as_str()), "movie")?;
        let review_index = index_of(reviews.iter().map(|r| r.review_id.as_str()), "review")?;
        for u in &users {
            check_finite(&u.metadata, &u.user_id)?;
        }
        for m in &movies {
            check_finite(&m.metadata, &m.movie_id)?;
        }
        let mut review_user = Vec::with_capacity(reviews.len());
        let mut review_movie = Vec::with_capacity(reviews.len());
        let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); users.len()];
        for (i, r) in reviews.iter().enumerate() {
            let u = *user_index.get(&r.user_id).ok_or_else(|| {
                Error::Integrity(format!("review {} references missing user {}", r.review_id, r.user_id))
            })?;
            let m = *movie_index.get(&r.movie_id).ok_or_else(|| {
                Error::Integrity(format!("review {} references missing movie {}", r.review_id, r.movie_id))
            })?;
            if r.label > 1 {
                return Err(Error::Integrity(format!("review {} has label {}", r.review_id, r.label)));
            }
            check_finite(&r.metadata, &r.review_id)?;
            review_user.push(u);
            review_movie.push(m);
            by_user[u].push(i);
        }
        let time = |i: usize| reviews[i].metadata.get("time").copied().unwrap_or(0.0);
        for (u, list) in by_user.iter_mut().enumerate() {
            let user = &users[u];
            if !user.review_ids.is_empty() {
                let mut listed = Vec::with_capacity(user.review_ids.len());
                for id in &user.review_ids {
                    let &ri = review_index.get(id).ok_or_else(|| {
                        Error::Integrity(format!("user {} lists missing review {id}", user.user_id))
                    })?;
                    listed.push(ri);
                }
                listed.sort_unstable();
                let mut own = list.clone();
                own.sort_unstable();
                if listed != own {
                    return Err(Error::Integrity(format!(
                        "user {} review list disagrees with reviews.jsonl",
                        user.user_id
                    )));
                }
            }
            list.sort_by(|&a, &b| time(a).total_cmp(&time(b)).then(a.cmp(&b)));
        }
        for (u, list) in users.iter_mut().zip(&by_user) {
            u.review_ids = list.iter().map(|&i| reviews[i].review_id.clone()).collect();
        }
        Ok(Dataset {
            users,
            movies,
            reviews,
            review_text: None,
            movie_synopsis: None,
            user_description: None,
            user_index,
            movie_index,
            review_index,
            review_user,
            review_movie,
            user_reviews: by_user,
        })
    }

    /// Attaches embeddings after checking their row counts.
    pub fn with_embeddings(
        mut self,
        review_text: Option<EmbeddingMatrix>,
        movie_synopsis: Option<EmbeddingMatrix>,
        user_description: Option<EmbeddingMatrix>,
    ) -> Result<Self> {
        let described = self.users.iter().filter(|u| u.description_text.is_some()).count();
        let checks = [
            (&review_text, self.reviews.len(), "review_text"),
            (&movie_synopsis, self.movies.len(), "movie_synopsis"),
            (&user_description, described, "user_description"),
        ];
        for (m, rows, name) in checks {
            if let Some(m) = m {
                if m.rows != rows {
                    return Err(Error::Shape(format!("{name}: {} rows, expected {rows}", m.rows)));
                }
            }
        }
        self.review_text = review_text;
        self.movie_synopsis = movie_synopsis;
        self.user_description = user_description;
        Ok(self)
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        (self.users.len(), self.movies.len(), self.reviews.len())
    }

    pub fn user_idx(&self, id: &str) -> Option<usize> {
        self.user_index.get(id).copied()
    }

    pub fn movie_idx(&self, id: &str) -> Option<usize> {
        self.movie_index.get(id).copied()
    }

    pub fn review_idx(&self, id: &str) -> Option<usize> {
        self.review_index.get(id).copied()
    }

    pub fn review_user(&self, r: usize) -> usize {
        self.review_user[r]
    }

    pub fn review_movie(&self, r: usize) -> usize {
        self.review_movie[r]
    }

    /// Review indices of user `u`, oldest first.
    pub fn user_reviews(&self, u: usize) -> &[usize] {
        &self.user_reviews[u]
    }

    pub fn labels(&self) -> Vec<u8> {
        self.reviews.iter().map(|r| r.label).collect()
    }

    /// Review indices assigned to `split`, in file order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.reviews
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == Some(split))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_split(&self) -> bool {
        !self.reviews.is_empty() && self.reviews.iter().all(|r| r.split.is_some())
    }

    /// Row of `user_description` for user `u`, when the user has a description.
    pub fn description_row(&self, u: usize) -> Option<usize> {
        self.users[u].description_text.as_ref()?;
        Some(self.users[..u].iter().filter(|x| x.description_text.is_some()).count())
    }

    pub(crate) fn set_splits(&mut self, splits: &[Split]) {
        for (r, s) in self.reviews.iter_mut().zip(splits) {
            r.split = Some(*s);
        }
    }
}
