use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::embed::{load_embeddings, read_sidecar, save_embeddings, EmbeddingMatrix};
use super::records::Dataset;
use crate::error::{Error, Result};

pub const USERS_FILE: &str = "users.jsonl";
pub const MOVIES_FILE: &str = "movies.jsonl";
pub const REVIEWS_FILE: &str = "reviews.jsonl";
pub const REVIEW_TEXT_FILE: &str = "review_text.f32";
pub const MOVIE_SYNOPSIS_FILE: &str = "movie_synopsis.f32";
pub const USER_DESCRIPTION_FILE: &str = "user_description.f32";

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for it in items {
        serde_json::to_writer(&mut buf, it)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn optional_embedding(dir: &Path, name: &str, rows: usize) -> Result<Option<EmbeddingMatrix>> {
    let p = dir.join(name);
    if !p.exists() {
        return Ok(None);
    }
    let side = read_sidecar(&p)?;
    load_embeddings(&p, rows, side.dim).map(Some)
}

/// Loads the three record tables and any embedding files present in `dir`.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let users = read_jsonl(&dir.join(USERS_FILE))?;
    let movies = read_jsonl(&dir.join(MOVIES_FILE))?;
    let reviews = read_jsonl(&dir.join(REVIEWS_FILE))?;
    let ds = Dataset::new(users, movies, reviews)?;
    let described = ds.users.iter().filter(|u| u.description_text.is_some()).count();
    let rt = optional_embedding(dir, REVIEW_TEXT_FILE, ds.reviews.len())?;
    let ms = optional_embedding(dir, MOVIE_SYNOPSIS_FILE, ds.movies.len())?;
    let ud = optional_embedding(dir, USER_DESCRIPTION_FILE, described)?;
    ds.with_embeddings(rt, ms, ud)
}

pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_jsonl(&dir.join(USERS_FILE), &ds.users)?;
    write_jsonl(&dir.join(MOVIES_FILE), &ds.movies)?;
    write_jsonl(&dir.join(REVIEWS_FILE), &ds.reviews)?;
    let files = [
        (&ds.review_text, REVIEW_TEXT_FILE),
        (&ds.movie_synopsis, MOVIE_SYNOPSIS_FILE),
        (&ds.user_description, USER_DESCRIPTION_FILE),
    ];
    for (m, name) in files {
        if let Some(m) = m {
            save_embeddings(&dir.join(name), m)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    #[test]
    fn minimal_dataset() {
        let d = tempfile::tempdir().unwrap();
        write(d.path(), USERS_FILE, "{\"user_id\":\"u1\"}\n");
        write(d.path(), MOVIES_FILE, "{\"movie_id\":\"m1\",\"synopsis_text\":\"a heist\"}\n");
        write(
            d.path(),
            REVIEWS_FILE,
            "{\"review_id\":\"r1\",\"user_id\":\"u1\",\"movie_id\":\"m1\",\"text\":\"great\",\"label\":1}\n",
        );
        let ds = load_dataset(d.path()).unwrap();
        assert_eq!(ds.counts(), (1, 1, 1));
        assert_eq!(ds.users[0].review_ids, ["r1"]);
    }

    #[test]
    fn missing_movie_reference() {
        let d = tempfile::tempdir().unwrap();
        write(d.path(), USERS_FILE, "{\"user_id\":\"u1\"}\n");
        write(d.path(), MOVIES_FILE, "{\"movie_id\":\"m1\"}\n");
        write(
            d.path(),
            REVIEWS_FILE,
            "{\"review_id\":\"r1\",\"user_id\":\"u1\",\"movie_id\":\"m9\",\"label\":0}\n",
        );
        assert!(matches!(load_dataset(d.path()), Err(Error::Integrity(_))));
    }

    #[test]
    fn empty_reviews_file() {
        let d = tempfile::tempdir().unwrap();
        write(d.path(), USERS_FILE, "{\"user_id\":\"u1\"}\n");
        write(d.path(), MOVIES_FILE, "{\"movie_id\":\"m1\"}\n");
        write(d.path(), REVIEWS_FILE, "");
        assert_eq!(load_dataset(d.path()).unwrap().counts(), (1, 1, 0));
    }

    #[test]
    fn malformed_line_reports_position() {
        let d = tempfile::tempdir().unwrap();
        write(d.path(), USERS_FILE, "{\"user_id\":\"u1\"}\n{\"user_id\": oops}\n");
        write(d.path(), MOVIES_FILE, "");
        write(d.path(), REVIEWS_FILE, "");
        match load_dataset(d.path()).unwrap_err() {
            Error::Parse { file, line, .. } => {
                assert!(file.ends_with(USERS_FILE));
                assert_eq!(line, 2);
            }
            e => panic!("unexpected {e}"),
        }
    }
}
