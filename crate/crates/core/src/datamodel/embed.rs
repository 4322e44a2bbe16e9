use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major float32 matrix, one row per entity.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub kind: String,
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

/// JSON sidecar next to the raw payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub rows: usize,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
}

impl EmbeddingMatrix {
    pub fn new(kind: &str, rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || rows * dim != data.len() {
            return Err(Error::Shape(format!(
                "{kind}: {rows}x{dim} matrix cannot hold {} values",
                data.len()
            )));
        }
        Ok(EmbeddingMatrix {
            kind: kind.to_string(),
            rows,
            dim,
            data,
        })
    }

    pub fn zeros(kind: &str, rows: usize, dim: usize) -> Self {
        EmbeddingMatrix {
            kind: kind.to_string(),
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn from_rows(kind: &str, dim: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::Shape(format!("{kind}: row of length {} vs dim {dim}", r.len())));
            }
            data.extend(r.iter().map(|&v| v as f32));
        }
        EmbeddingMatrix::new(kind, rows.len(), dim, data)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| v as f64).collect()
    }
}

/// `base` with the `.json` sidecar extension.
pub fn sidecar_path(payload: &Path) -> PathBuf {
    payload.with_extension("json")
}

/// Reads a little-endian float32 payload and its sidecar `{rows, dim}`.
pub fn load_embeddings(path: &Path, expected_rows: usize, dim: usize) -> Result<EmbeddingMatrix> {
    let side_path = sidecar_path(path);
    let side_text = fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let side: Sidecar = serde_json::from_str(&side_text)
        .map_err(|e| Error::Format(format!("{}: {e}", side_path.display())))?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != side.rows * side.dim * 4 {
        return Err(Error::Format(format!(
            "{}: {} bytes, sidecar promises {}x{} float32",
            path.display(),
            bytes.len(),
            side.rows,
            side.dim
        )));
    }
    if side.rows != expected_rows || side.dim != dim {
        return Err(Error::Shape(format!(
            "{}: {}x{}, expected {expected_rows}x{dim}",
            path.display(),
            side.rows,
            side.dim
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let kind = side.kind.unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    EmbeddingMatrix::new(&kind, side.rows, side.dim, data)
}

/// Reads the sidecar only, to learn a payload's shape.
pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let side_path = sidecar_path(path);
    let text = fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", side_path.display())))
}

pub fn save_embeddings(path: &Path, m: &EmbeddingMatrix) -> Result<()> {
    let mut bytes = Vec::with_capacity(m.data.len() * 4);
    for v in &m.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let side = Sidecar {
        rows: m.rows,
        dim: m.dim,
        kind: Some(m.kind.clone()),
    };
    let side_path = sidecar_path(path);
    fs::write(&side_path, serde_json::to_string(&side)?).map_err(|e| Error::io(&side_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_three() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.f32");
        let m = EmbeddingMatrix::new("review_text", 2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        save_embeddings(&p, &m).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 24);
        let back = load_embeddings(&p, 2, 3).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.row(1), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn truncated_payload_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.f32");
        fs::write(&p, [0u8; 23]).unwrap();
        fs::write(sidecar_path(&p), r#"{"rows":2,"dim":3}"#).unwrap();
        assert!(matches!(load_embeddings(&p, 2, 3), Err(Error::Format(_))));
    }

    #[test]
    fn row_mismatch_is_shape_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.f32");
        save_embeddings(&p, &EmbeddingMatrix::zeros("r", 2, 3)).unwrap();
        assert!(matches!(load_embeddings(&p, 5, 3), Err(Error::Shape(_))));
    }
}
