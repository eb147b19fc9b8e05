// SPDX-License-Identifier: MIT OR Apache-2.0

//! Binary matrix container, covariance estimation and model checkpoints.
//!
//! Container layout, all little-endian:
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `SAEA`                  |
//! | 4      | 4    | version: 1 = f32, 2 = f64     |
//! | 8      | 8    | rows                          |
//! | 16     | 8    | cols                          |
//! | 24     | ...  | rows × cols values, row-major |
//!
//! Activation dumps use version 1. Checkpoint tensors use version 2 so a
//! saved model reloads bit-for-bit.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{matmul, Matrix};
use crate::sae::{Arch, FreezeMode, SaeModel};

pub const MAGIC: [u8; 4] = *b"SAEA";
pub const HEADER_LEN: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn version(self) -> u32 {
        match self {
            Precision::F32 => 1,
            Precision::F64 => 2,
        }
    }

    fn width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

/// Serializes `m` into the container format.
pub fn encode_matrix(m: &Matrix, precision: Precision) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + m.as_slice().len() * precision.width());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&precision.version().to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    match precision {
        Precision::F32 => {
            for (i, &v) in m.as_slice().iter().enumerate() {
                let narrow = v as f32;
                if !narrow.is_finite() {
                    return Err(Error::Data(format!(
                        "value {v} at flat index {i} does not fit in 32-bit float"
                    )));
                }
                out.extend_from_slice(&narrow.to_le_bytes());
            }
        }
        Precision::F64 => {
            for &v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

/// Parses a container, widening 32-bit payloads to 64 bits.
pub fn decode_matrix(bytes: &[u8]) -> Result<(Matrix, Precision)> {
    if bytes.len() < 4 {
        return Err(format_err(bytes.len(), "file ends inside the magic"));
    }
    if bytes[..4] != MAGIC {
        return Err(format_err(0, "bad magic, expected SAEA"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    if bytes.len() < HEADER_LEN {
        return Err(format_err(bytes.len(), "file ends inside the header"));
    }
    let precision = match u32_at(4) {
        1 => Precision::F32,
        2 => Precision::F64,
        v => return Err(format_err(4, format!("unsupported version {v}"))),
    };
    let (rows, cols) = (u64_at(8), u64_at(16));
    let count = rows
        .checked_mul(cols)
        .and_then(|c| c.checked_mul(precision.width() as u64))
        .and_then(|b| usize::try_from(b).ok())
        .ok_or_else(|| format_err(8, format!("dimensions {rows}x{cols} overflow")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < count {
        return Err(format_err(
            bytes.len(),
            format!(
                "truncated payload: header promises {count} bytes for {rows}x{cols}, found {}",
                payload.len()
            ),
        ));
    }
    if payload.len() > count {
        return Err(format_err(
            HEADER_LEN + count,
            "trailing bytes after payload",
        ));
    }
    let w = precision.width();
    let mut data = Vec::with_capacity(count / w);
    for (i, chunk) in payload.chunks_exact(w).enumerate() {
        let v = match precision {
            Precision::F32 => f32::from_le_bytes(chunk.try_into().unwrap()) as f64,
            Precision::F64 => f64::from_le_bytes(chunk.try_into().unwrap()),
        };
        if !v.is_finite() {
            return Err(format_err(HEADER_LEN + i * w, "non-finite value"));
        }
        data.push(v);
    }
    Ok((
        Matrix::from_vec(rows as usize, cols as usize, data)?,
        precision,
    ))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads an activation dump (either precision).
pub fn read_dump(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    decode_matrix(&read_bytes(path)?)
        .map(|(m, _)| m)
        .map_err(|e| match e {
            Error::Format { offset, message } => Error::Format {
                offset,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })
}

/// Writes a 32-bit activation dump.
pub fn write_dump(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    write_bytes(path.as_ref(), &encode_matrix(m, Precision::F32)?)
}

/// Unbiased sample covariance of the rows of `x` (two-pass, divisor r − 1).
pub fn estimate_covariance(x: &Matrix) -> Result<Matrix> {
    let (r, n) = x.shape();
    if r < 2 {
        return Err(Error::Data(format!(
            "covariance needs at least 2 rows, got {r}"
        )));
    }
    let mean = x.column_means();
    let mut centered = x.clone();
    for i in 0..r {
        for (v, mu) in centered.row_mut(i).iter_mut().zip(&mean) {
            *v -= mu;
        }
    }
    let mut cov = matmul(&centered, &centered, true, false)?;
    let denom = (r - 1) as f64;
    for i in 0..n {
        for j in i..n {
            let v = 0.5 * (cov.get(i, j) + cov.get(j, i)) / denom;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    Ok(cov)
}

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub rows: usize,
    pub cols: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: u32,
    pub arch: Arch,
    pub n: usize,
    pub m: usize,
    pub k_target: usize,
    pub group_fractions: Vec<f64>,
    pub freeze_mode: FreezeMode,
    pub tau: f64,
    pub step: u64,
    /// SHA-256 of the effective configuration document.
    pub config_hash: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub model: SaeModel,
    pub w_dec_init: Option<Matrix>,
}

const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_FORMAT: u32 = 1;

/// Writes `manifest.json` and one container per tensor into `dir`.
#[allow(clippy::too_many_arguments)]
pub fn save_checkpoint(
    dir: impl AsRef<Path>,
    model: &SaeModel,
    w_dec_init: Option<&Matrix>,
    freeze_mode: FreezeMode,
    tau: f64,
    step: u64,
    config_hash: &str,
) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tensors: Vec<(&str, Matrix)> = vec![
        ("w_enc", model.w_enc().clone()),
        ("b_enc", Matrix::row_vector(model.b_enc())?),
        ("w_dec", model.w_dec().clone()),
        ("b_dec", Matrix::row_vector(model.b_dec())?),
    ];
    if let Some(t) = model.theta() {
        tensors.push(("theta", Matrix::row_vector(t)?));
    }
    if let Some(t) = model.batch_threshold() {
        tensors.push(("batch_threshold", Matrix::row_vector(&[t])?));
    }
    if let Some(w) = w_dec_init {
        tensors.push(("w_dec_init", w.clone()));
    }
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, m) in tensors {
        let bytes = encode_matrix(&m, Precision::F64)?;
        let file = format!("{name}.saea");
        write_bytes(&dir.join(&file), &bytes)?;
        entries.push(TensorEntry {
            name: name.to_string(),
            file,
            rows: m.rows(),
            cols: m.cols(),
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT,
        arch: model.arch(),
        n: model.n(),
        m: model.m(),
        k_target: model.k_target(),
        group_fractions: model.group_fractions().to_vec(),
        freeze_mode,
        tau,
        step,
        config_hash: config_hash.to_string(),
        tensors: entries,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    write_bytes(&dir.join(MANIFEST_FILE), text.as_bytes())?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: Manifest = serde_json::from_slice(&read_bytes(&manifest_path)?)?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::Data(format!(
            "{}: unsupported checkpoint format {}",
            manifest_path.display(),
            manifest.format
        )));
    }
    let tensor = |name: &str| -> Result<Option<Matrix>> {
        let Some(entry) = manifest.tensors.iter().find(|t| t.name == name) else {
            return Ok(None);
        };
        let path: PathBuf = dir.join(&entry.file);
        let bytes = read_bytes(&path)?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(Error::Data(format!(
                "{}: checksum mismatch",
                path.display()
            )));
        }
        let (m, _) = decode_matrix(&bytes)?;
        if m.shape() != (entry.rows, entry.cols) {
            return Err(Error::shape(format!(
                "{}: {}x{} on disk, manifest says {}x{}",
                path.display(),
                m.rows(),
                m.cols(),
                entry.rows,
                entry.cols
            )));
        }
        Ok(Some(m))
    };
    let required = |name: &str| -> Result<Matrix> {
        tensor(name)?.ok_or_else(|| Error::Data(format!("checkpoint lacks tensor {name}")))
    };
    let model = SaeModel::from_parts(
        manifest.arch,
        required("w_enc")?,
        required("b_enc")?.into_vec(),
        required("w_dec")?,
        required("b_dec")?.into_vec(),
        tensor("theta")?.map(Matrix::into_vec),
        manifest.k_target,
        manifest.group_fractions.clone(),
        tensor("batch_threshold")?.map(|t| t.as_slice()[0]),
    )?;
    if (model.n(), model.m()) != (manifest.n, manifest.m) {
        return Err(Error::shape(
            "checkpoint tensors disagree with manifest dimensions",
        ));
    }
    let w_dec_init = tensor("w_dec_init")?;
    Ok(Checkpoint {
        manifest,
        model,
        w_dec_init,
    })
}
