//! On-disk dataset format.
//!
//! A dataset directory holds a JSON manifest plus one binary file per matrix.
//! Each binary file is a 16-byte header followed by little-endian `f64`
//! values in row-major order:
//!
//! | bytes | content            |
//! |-------|--------------------|
//! | 0..4  | magic `MVML`       |
//! | 4..8  | rows, `u32` LE     |
//! | 8..12 | cols, `u32` LE     |
//! | 12..16| reserved, zero     |

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::{is_binary, MultiViewDataset, Split};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const MAGIC: &[u8; 4] = b"MVML";
pub const HEADER_LEN: usize = 16;
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub n: usize,
    pub v: usize,
    pub c: usize,
    pub view_dims: Vec<usize>,
    pub views: Vec<String>,
    pub labels: String,
    pub view_mask: String,
    pub label_mask: String,
    /// Absent for datasets that were never split; every sample is then train.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

pub fn encode_matrix(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    out.extend_from_slice(&[0u8; 4]);
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_matrix(bytes: &[u8]) -> std::result::Result<Matrix, String> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err("not an MVML matrix file".into());
    }
    let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap()) as usize;
    let (rows, cols) = (word(4), word(8));
    let body = &bytes[HEADER_LEN..];
    if body.len() != rows * cols * 8 {
        return Err(format!(
            "header says {rows}x{cols} but body holds {} bytes",
            body.len()
        ));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::new(rows, cols, data).map_err(|e| e.to_string())
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    fs::write(path, encode_matrix(m)).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes).map_err(|reason| Error::Load {
        path: path.to_owned(),
        reason,
    })
}

/// Writes `ds` into `dir` (created if needed) and returns the manifest path.
pub fn write_dataset(ds: &MultiViewDataset, dir: &Path) -> Result<PathBuf> {
    ds.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let views: Vec<String> = (0..ds.n_views()).map(|v| format!("view{v}.mvml")).collect();
    for (name, x) in views.iter().zip(&ds.views) {
        write_matrix(&dir.join(name), x)?;
    }
    let manifest = Manifest {
        n: ds.n_samples(),
        v: ds.n_views(),
        c: ds.n_labels(),
        view_dims: ds.view_dims(),
        views,
        labels: "labels.mvml".into(),
        view_mask: "view_mask.mvml".into(),
        label_mask: "label_mask.mvml".into(),
        split: Some("split.mvml".into()),
    };
    write_matrix(&dir.join(&manifest.labels), &ds.labels)?;
    write_matrix(&dir.join(&manifest.view_mask), &ds.view_mask)?;
    write_matrix(&dir.join(&manifest.label_mask), &ds.label_mask)?;
    let split = Matrix::new(ds.n_samples(), 1, ds.split.iter().map(|s| s.code()).collect())?;
    write_matrix(&dir.join(manifest.split.as_ref().unwrap()), &split)?;
    let path = dir.join(MANIFEST_NAME);
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Loads a dataset from a manifest path, or from a directory containing
/// `manifest.json`.
pub fn load_dataset(path: &Path) -> Result<MultiViewDataset> {
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_owned()
    };
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Load {
        path: manifest_path.clone(),
        reason: e.to_string(),
    })?;
    let fail = |reason: String| Error::Load {
        path: manifest_path.clone(),
        reason,
    };

    if manifest.views.len() != manifest.v || manifest.view_dims.len() != manifest.v {
        return Err(fail(format!(
            "manifest declares {} views but lists {} files and {} dims",
            manifest.v,
            manifest.views.len(),
            manifest.view_dims.len()
        )));
    }
    let mut views = Vec::with_capacity(manifest.v);
    for (k, (file, &dim)) in manifest.views.iter().zip(&manifest.view_dims).enumerate() {
        let x = read_matrix(&dir.join(file))?;
        if x.cols() == 0 || dim == 0 {
            return Err(fail(format!("view {k} is empty")));
        }
        if x.shape() != (manifest.n, dim) {
            return Err(fail(format!(
                "view {k} is {:?}, manifest says {:?}",
                x.shape(),
                (manifest.n, dim)
            )));
        }
        views.push(x);
    }
    let expect = |m: Matrix, what: &str, shape: (usize, usize)| {
        if m.shape() == shape {
            Ok(m)
        } else {
            Err(fail(format!("{what} is {:?}, expected {shape:?}", m.shape())))
        }
    };
    let (n, v, c) = (manifest.n, manifest.v, manifest.c);
    let labels = expect(read_matrix(&dir.join(&manifest.labels))?, "labels", (n, c))?;
    if !is_binary(&labels) {
        return Err(fail("labels must be binary".into()));
    }
    let view_mask = expect(read_matrix(&dir.join(&manifest.view_mask))?, "view mask", (n, v))?;
    let label_mask = expect(
        read_matrix(&dir.join(&manifest.label_mask))?,
        "label mask",
        (n, c),
    )?;
    let split = match &manifest.split {
        Some(file) => {
            let codes = expect(read_matrix(&dir.join(file))?, "split", (n, 1))?;
            codes
                .as_slice()
                .iter()
                .map(|&c| Split::from_code(c).ok_or_else(|| fail(format!("bad split code {c}"))))
                .collect::<Result<Vec<_>>>()?
        }
        None => vec![Split::Train; n],
    };
    let ds = MultiViewDataset {
        views,
        labels,
        view_mask,
        label_mask,
        split,
    };
    ds.validate().map_err(|e| fail(e.to_string()))?;
    Ok(ds)
}

/// Reads a comma-separated numeric matrix. A first row that does not parse
/// as numbers is treated as a header and skipped.
pub fn import_csv(path: &Path) -> Result<Matrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text).map_err(|reason| Error::Load {
        path: path.to_owned(),
        reason,
    })
}

pub fn parse_csv(text: &str) -> std::result::Result<Matrix, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| e.to_string())?;
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if line == 0 => continue,
            Err(e) => return Err(format!("line {}: {e}", line + 1)),
        }
    }
    let cols = rows.first().map_or(0, Vec::len);
    if let Some((k, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        return Err(format!("row {k} has {} fields, expected {cols}", r.len()));
    }
    let n = rows.len();
    Matrix::new(n, cols, rows.into_iter().flatten().collect()).map_err(|e| e.to_string())
}
