//! File formats.
//!
//! * Tensors: a text header `M N P` followed by `M*N*P` whitespace-separated
//!   values in slice-major order (`m` fastest, then `n`, then `p`). Values are
//!   written with the shortest representation that parses back to the same
//!   bits. Masks use the same layout with `0`/`1` entries.
//! * Binary container: 4-byte magic (`TNS3` or `MSK3`), three little-endian
//!   `u64` dims, then `f64` (tensors) or `u8` (masks) values. Readers detect
//!   the container by its magic, so either layout can be passed anywhere.
//! * Covariances: headerless CSV, one matrix row per line.
//! * Cost traces and sweeps: CSV with a header row.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ImputeError, Result};
use crate::synth::SweepPoint;
use crate::tensor::{Dims, Mask3, Tensor3};

pub const TENSOR_MAGIC: &[u8; 4] = b"TNS3";
pub const MASK_MAGIC: &[u8; 4] = b"MSK3";
const BINARY_HEADER_LEN: usize = 4 + 3 * 8;

fn parse_err<T>(path: &Path, msg: impl std::fmt::Display) -> Result<T> {
    Err(ImputeError::Parse(format!("{}: {msg}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn parse_header<'a>(path: &Path, tokens: &mut impl Iterator<Item = &'a str>) -> Result<Dims> {
    let mut next = || -> Result<usize> {
        match tokens.next() {
            Some(tok) => tok
                .parse::<usize>()
                .or_else(|_| parse_err(path, format!("bad dimension '{tok}' in header"))),
            None => parse_err(path, "missing 'M N P' header"),
        }
    };
    Ok((next()?, next()?, next()?))
}

fn body_len(path: &Path, (m, n, p): Dims) -> Result<usize> {
    m.checked_mul(n)
        .and_then(|v| v.checked_mul(p))
        .map_or_else(|| parse_err(path, "dimensions overflow"), Ok)
}

/// Shortest text that parses back to the same bits; exponent notation outside
/// `[1e-5, 1e16)` keeps tiny and huge magnitudes compact.
pub fn format_f64(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-5..1e16).contains(&a) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

fn format_text(dims: Dims, values: impl Iterator<Item = String>) -> String {
    let mut out = format!("{} {} {}\n", dims.0, dims.1, dims.2);
    let row = dims.0.max(1);
    for (k, v) in values.enumerate() {
        out.push_str(&v);
        out.push(if (k + 1) % row == 0 { '\n' } else { ' ' });
    }
    out
}

fn split_binary<'a>(path: &Path, bytes: &'a [u8], width: usize) -> Result<(Dims, &'a [u8])> {
    if bytes.len() < BINARY_HEADER_LEN {
        return parse_err(path, "truncated binary header");
    }
    let dim = |k: usize| {
        let start = 4 + 8 * k;
        let raw: [u8; 8] = bytes[start..start + 8].try_into().expect("8-byte slice");
        usize::try_from(u64::from_le_bytes(raw))
    };
    let dims = match (dim(0), dim(1), dim(2)) {
        (Ok(m), Ok(n), Ok(p)) => (m, n, p),
        _ => return parse_err(path, "binary dimensions do not fit in memory"),
    };
    let body = &bytes[BINARY_HEADER_LEN..];
    let expected = body_len(path, dims)?.checked_mul(width);
    if expected != Some(body.len()) {
        return parse_err(
            path,
            format!("binary body has {} bytes, header {dims:?} needs {expected:?}", body.len()),
        );
    }
    Ok((dims, body))
}

fn binary_header(magic: &[u8; 4], dims: Dims) -> Vec<u8> {
    let mut out = Vec::with_capacity(BINARY_HEADER_LEN);
    out.extend_from_slice(magic);
    for d in [dims.0, dims.1, dims.2] {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out
}

pub fn read_tensor(path: &Path) -> Result<Tensor3> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(TENSOR_MAGIC) {
        let (dims, body) = split_binary(path, &bytes, 8)?;
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        return Tensor3::from_vec(dims, values);
    }
    let text = match std::str::from_utf8(&bytes) {
        Ok(t) => t,
        Err(_) => return parse_err(path, "not a text tensor and no binary magic"),
    };
    let mut tokens = text.split_whitespace();
    let dims = parse_header(path, &mut tokens)?;
    let expected = body_len(path, dims)?;
    let mut values = Vec::with_capacity(expected);
    for tok in tokens {
        match tok.parse::<f64>() {
            Ok(v) => values.push(v),
            Err(_) => return parse_err(path, format!("bad value '{tok}' at position {}", values.len())),
        }
    }
    if values.len() != expected {
        return parse_err(path, format!("header {dims:?} needs {expected} values, found {}", values.len()));
    }
    Tensor3::from_vec(dims, values)
}

pub fn write_tensor(path: &Path, tensor: &Tensor3, binary: bool) -> Result<()> {
    let bytes = if binary {
        let mut out = binary_header(TENSOR_MAGIC, tensor.dims());
        for v in tensor.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    } else {
        format_text(tensor.dims(), tensor.values().iter().map(|&v| format_f64(v))).into_bytes()
    };
    write_file(path, &bytes)
}

pub fn read_mask(path: &Path) -> Result<Mask3> {
    let bytes = fs::read(path)?;
    let (dims, flags) = if bytes.starts_with(MASK_MAGIC) {
        let (dims, body) = split_binary(path, &bytes, 1)?;
        (dims, body.to_vec())
    } else {
        let text = match std::str::from_utf8(&bytes) {
            Ok(t) => t,
            Err(_) => return parse_err(path, "not a text mask and no binary magic"),
        };
        let mut tokens = text.split_whitespace();
        let dims = parse_header(path, &mut tokens)?;
        let mut flags = Vec::with_capacity(body_len(path, dims)?);
        for tok in tokens {
            match tok {
                "0" => flags.push(0),
                "1" => flags.push(1),
                other => return parse_err(path, format!("mask entry '{other}' is not 0 or 1")),
            }
        }
        (dims, flags)
    };
    if flags.len() != body_len(path, dims)? {
        return parse_err(path, format!("header {dims:?} does not match {} mask entries", flags.len()));
    }
    if flags.iter().any(|&f| f > 1) {
        return parse_err(path, "mask entries must be 0 or 1");
    }
    Mask3::from_vec(dims, flags)
}

pub fn write_mask(path: &Path, mask: &Mask3, binary: bool) -> Result<()> {
    let bytes = if binary {
        let mut out = binary_header(MASK_MAGIC, mask.dims());
        out.extend_from_slice(mask.flags());
        out
    } else {
        format_text(mask.dims(), mask.flags().iter().map(u8::to_string)).into_bytes()
    };
    write_file(path, &bytes)
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ImputeError::Parse(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| ImputeError::Parse(format!("{}: {e}", path.display())))?;
        let row = record
            .iter()
            .map(|field| field.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>();
        match row {
            Ok(r) => rows.push(r),
            Err(e) => return parse_err(path, format!("row {}: {e}", i + 1)),
        }
    }
    if rows.is_empty() {
        return parse_err(path, "empty matrix");
    }
    let cols = rows[0].len();
    Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.into_iter().flatten()))
}

pub fn write_matrix_csv(path: &Path, matrix: &DMatrix<f64>) -> Result<()> {
    let mut out = String::new();
    for row in matrix.row_iter() {
        let line: Vec<String> = row.iter().map(|&v| format_f64(v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

/// `iteration,cost` rows, with iteration 0 holding the initial cost.
pub fn write_cost_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let mut out = String::from("iteration,cost\n");
    for (k, c) in trace.iter().enumerate() {
        out.push_str(&format!("{k},{}\n", format_f64(*c)));
    }
    write_file(path, out.as_bytes())
}

pub fn write_sweep_csv(path: &Path, points: &[SweepPoint]) -> Result<()> {
    let mut out = String::from("mu,mean_error_db,mean_rank,n_seeds\n");
    for p in points {
        out.push_str(&format!("{},{},{},{}\n", p.mu, p.mean_error_db, p.mean_rank, p.n_seeds));
    }
    write_file(path, out.as_bytes())
}

/// Lower-case hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one command-line run: enough to rerun it and to check that the
/// inputs are the ones that were used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
    pub wall_clock_secs: f64,
    pub iterations: Option<usize>,
    pub final_cost: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn digest_inputs<'a>(paths: impl IntoIterator<Item = &'a Path>) -> Result<Vec<InputDigest>> {
        paths
            .into_iter()
            .map(|p| {
                Ok(InputDigest {
                    path: p.to_path_buf(),
                    sha256: file_digest(p)?,
                })
            })
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| ImputeError::Parse(format!("cannot serialize manifest: {e}")))?;
        write_file(path, format!("{json}\n").as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| ImputeError::Parse(format!("{}: {e}", path.display())))
    }
}
