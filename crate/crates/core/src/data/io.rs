//! Dataset files.
//!
//! Binary (`*.osds` or any non-`.csv` path):
//!
//! ```text
//! "OSDS" | u32 version | u64 n | u64 N
//! u32 subject_count | per subject: u32 byte_len, utf-8 bytes
//! u32 subject_index[n]
//! f32 payload[n * N], row-major
//! ```
//!
//! All integers and floats little-endian. Measurement ids (and the
//! normalization, if any) live in a JSON sidecar at `<path>.json`.
//!
//! CSV (`*.csv`): header `subject,<measurement ids...>`, then one sample per row
//! with the subject id in the first column.

use std::collections::HashMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{MeasurementDataset, NormalizationSpec};
use crate::nn::Matrix;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"OSDS";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    measurement_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normalization: Option<NormalizationSpec>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn load_dataset(path: &Path) -> Result<MeasurementDataset> {
    if is_csv(path) {
        load_csv(path)
    } else {
        load_binary(path)
    }
}

pub fn save_dataset(dataset: &MeasurementDataset, path: &Path) -> Result<()> {
    if is_csv(path) {
        save_csv(dataset, path)
    } else {
        save_binary(dataset, path)
    }
}

/// Binary payload without the sidecar. Values are stored as `f32`.
pub fn encode_binary(dataset: &MeasurementDataset) -> Vec<u8> {
    let (n, m) = dataset.samples.shape();
    let subjects = dataset.subjects();
    let index: HashMap<&str, u32> = subjects
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i as u32))
        .collect();
    let mut buf = Vec::with_capacity(28 + n * (4 + 4 * m));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(m as u64).to_le_bytes());
    buf.extend_from_slice(&(subjects.len() as u32).to_le_bytes());
    for s in &subjects {
        buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
        buf.extend_from_slice(s.as_bytes());
    }
    for s in &dataset.subject_ids {
        buf.extend_from_slice(&index[s.as_str()].to_le_bytes());
    }
    for &v in dataset.samples.as_slice() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf
}

/// Parses the binary layout. `measurement_ids` defaults to `m0..m{N-1}`.
pub fn decode_binary(bytes: &[u8], path: &Path, measurement_ids: Option<Vec<String>>) -> Result<MeasurementDataset> {
    let header = |reason: &str| Error::MalformedHeader {
        path: path.to_owned(),
        reason: reason.to_owned(),
    };
    let mut r = bytes;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| header("file too short"))?;
    if &magic != MAGIC {
        return Err(header("bad magic bytes"));
    }
    let version = read_u32(&mut r).ok_or_else(|| header("missing version"))?;
    if version != VERSION {
        return Err(header(&format!("unsupported version {version}")));
    }
    let n = read_u64(&mut r).ok_or_else(|| header("missing sample count"))? as usize;
    let m = read_u64(&mut r).ok_or_else(|| header("missing measurement count"))? as usize;
    let count = read_u32(&mut r).ok_or_else(|| header("missing subject table"))? as usize;
    let mut subjects = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = read_u32(&mut r).ok_or_else(|| header("truncated subject table"))? as usize;
        if r.len() < len {
            return Err(header("truncated subject label"));
        }
        let (label, rest) = r.split_at(len);
        subjects.push(String::from_utf8(label.to_vec()).map_err(|_| header("subject label is not utf-8"))?);
        r = rest;
    }
    let mismatch = |reason: String| Error::LengthMismatch {
        path: path.to_owned(),
        reason,
    };
    let expected = n
        .checked_mul(4)
        .and_then(|idx| n.checked_mul(m)?.checked_mul(4)?.checked_add(idx))
        .ok_or_else(|| header("dimensions overflow"))?;
    if r.len() != expected {
        return Err(mismatch(format!(
            "{} bytes after header, expected {expected} for {n}x{m}",
            r.len()
        )));
    }
    let mut subject_ids = Vec::with_capacity(n);
    for _ in 0..n {
        let i = read_u32(&mut r).expect("length checked") as usize;
        let label = subjects
            .get(i)
            .ok_or_else(|| header(&format!("subject index {i} outside table of {count}")))?;
        subject_ids.push(label.clone());
    }
    let mut values = Vec::with_capacity(n * m);
    for k in 0..n * m {
        let v = f64::from(f32::from_le_bytes(r[4 * k..4 * k + 4].try_into().expect("4 bytes")));
        if v.is_nan() {
            return Err(Error::NanEntry { row: k / m.max(1), col: k % m.max(1) });
        }
        values.push(v);
    }
    let ids = measurement_ids.unwrap_or_else(|| (0..m).map(|j| format!("m{j}")).collect());
    if ids.len() != m {
        return Err(mismatch(format!("{} measurement ids for {m} measurements", ids.len())));
    }
    MeasurementDataset::new(Matrix::new(n, m, values)?, ids, subject_ids)
}

pub fn save_binary(dataset: &MeasurementDataset, path: &Path) -> Result<()> {
    std::fs::write(path, encode_binary(dataset)).map_err(|e| Error::io(path, e))?;
    write_sidecar(dataset, path)
}

pub fn load_binary(path: &Path) -> Result<MeasurementDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let sidecar = read_sidecar(path)?;
    let (ids, normalization) = match sidecar {
        Some(s) => (Some(s.measurement_ids), s.normalization),
        None => (None, None),
    };
    let mut ds = decode_binary(&bytes, path, ids)?;
    ds.normalization = normalization;
    Ok(ds)
}

pub fn save_csv(dataset: &MeasurementDataset, path: &Path) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Csv {
        line: 0,
        reason: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["subject".to_string()];
    header.extend(dataset.measurement_ids.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..dataset.n_samples() {
        let mut record = vec![dataset.subject_ids[i].clone()];
        record.extend(dataset.samples.row(i).iter().map(|v| v.to_string()));
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    if dataset.normalization.is_some() {
        write_sidecar(dataset, path)?;
    }
    Ok(())
}

pub fn load_csv(path: &Path) -> Result<MeasurementDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Csv {
                line: 0,
                reason: format!("{other:?}"),
            },
        })?;
    let header = reader.headers().map_err(|e| Error::Csv {
        line: 1,
        reason: e.to_string(),
    })?;
    if header.len() < 3 {
        return Err(Error::MalformedHeader {
            path: path.to_owned(),
            reason: "need a subject column and at least two measurements".into(),
        });
    }
    let measurement_ids: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let m = measurement_ids.len();
    let mut subject_ids = Vec::new();
    let mut values = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { .. } => Error::LengthMismatch {
                path: path.to_owned(),
                reason: format!("line {line}: {e}"),
            },
            _ => Error::Csv {
                line,
                reason: e.to_string(),
            },
        })?;
        subject_ids.push(record[0].to_owned());
        for (col, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Csv {
                line,
                reason: format!("column {} is not a number: {field:?}", col + 1),
            })?;
            if v.is_nan() {
                return Err(Error::NanEntry { row, col });
            }
            values.push(v);
        }
    }
    let n = subject_ids.len();
    let mut ds = MeasurementDataset::new(Matrix::new(n, m, values)?, measurement_ids, subject_ids)?;
    ds.normalization = read_sidecar(path)?.and_then(|s| s.normalization);
    Ok(ds)
}

fn write_sidecar(dataset: &MeasurementDataset, path: &Path) -> Result<()> {
    let sidecar = Sidecar {
        measurement_ids: dataset.measurement_ids.clone(),
        normalization: dataset.normalization.clone(),
    };
    let target = sidecar_path(path);
    let json = serde_json::to_string_pretty(&sidecar)?;
    std::fs::write(&target, json).map_err(|e| Error::io(&target, e))
}

fn read_sidecar(path: &Path) -> Result<Option<Sidecar>> {
    let target = sidecar_path(path);
    match std::fs::read_to_string(&target) {
        Ok(text) => Ok(Some(serde_json::from_str(&text)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(&target, e)),
    }
}

fn read_u32(r: &mut &[u8]) -> Option<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).ok()?;
    Some(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Option<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).ok()?;
    Some(u64::from_le_bytes(b))
}
