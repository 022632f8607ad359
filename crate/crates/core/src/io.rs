//! On-disk formats: NPY feature dumps with `.ids.json` sidecars, CSV feature
//! tables, groundtruth CSV, and model directories.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{DdsError, FormatKind, Result};
use crate::evalrank::{GroundTruth, GroundTruthKind, ModelSet};
use crate::features::{FeatureMap, FeatureMatrix, Features};

const NPY_MAGIC: &[u8; 6] = b"\x93NUMPY";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DdsError + '_ {
    move |source| DdsError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn fmt_err(kind: FormatKind, path: &Path, msg: impl Into<String>) -> DdsError {
    DdsError::format(kind, path, msg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dtype {
    F4,
    F8,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F4 => 4,
            Dtype::F8 => 8,
        }
    }
}

struct NpyHeader {
    dtype: Dtype,
    shape: Vec<usize>,
    data_offset: usize,
}

/// Value text following `'key':` in a header dict.
fn header_value<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    let needle_sq = format!("'{key}'");
    let needle_dq = format!("\"{key}\"");
    let start = header
        .find(&needle_sq)
        .map(|i| i + needle_sq.len())
        .or_else(|| header.find(&needle_dq).map(|i| i + needle_dq.len()))?;
    let rest = header[start..].trim_start();
    let rest = rest.strip_prefix(':')?.trim_start();
    Some(rest)
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<NpyHeader> {
    if bytes.len() < 6 || &bytes[..6] != NPY_MAGIC {
        return Err(fmt_err(FormatKind::BadMagic, path, "missing \\x93NUMPY magic bytes"));
    }
    if bytes.len() < 10 {
        return Err(fmt_err(FormatKind::Truncated, path, "file ends inside the preamble"));
    }
    let (major, minor) = (bytes[6], bytes[7]);
    let (header_len, header_start) = match major {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(fmt_err(FormatKind::Truncated, path, "file ends inside the preamble"));
            }
            (
                u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
                12,
            )
        }
        _ => {
            return Err(fmt_err(
                FormatKind::UnsupportedVersion,
                path,
                format!("unsupported format version {major}.{minor}"),
            ))
        }
    };
    let end = header_start + header_len;
    if bytes.len() < end {
        return Err(fmt_err(FormatKind::Truncated, path, "file ends inside the header"));
    }
    let header = std::str::from_utf8(&bytes[header_start..end])
        .map_err(|_| fmt_err(FormatKind::BadHeader, path, "header is not text"))?;

    let descr =
        header_value(header, "descr").ok_or_else(|| fmt_err(FormatKind::BadHeader, path, "header lacks 'descr'"))?;
    let descr = descr
        .trim_start_matches(['\'', '"'])
        .split(['\'', '"'])
        .next()
        .unwrap_or_default();
    let dtype = match descr {
        "<f8" => Dtype::F8,
        "<f4" => Dtype::F4,
        other => {
            return Err(fmt_err(
                FormatKind::UnsupportedDtype,
                path,
                format!("dtype {other:?} not supported; expected little-endian '<f4' or '<f8'"),
            ))
        }
    };

    let fortran = header_value(header, "fortran_order")
        .ok_or_else(|| fmt_err(FormatKind::BadHeader, path, "header lacks 'fortran_order'"))?;
    if fortran.starts_with("True") {
        return Err(fmt_err(
            FormatKind::BadHeader,
            path,
            "fortran-ordered arrays are not supported",
        ));
    } else if !fortran.starts_with("False") {
        return Err(fmt_err(FormatKind::BadHeader, path, "malformed 'fortran_order'"));
    }

    let shape_text =
        header_value(header, "shape").ok_or_else(|| fmt_err(FormatKind::BadHeader, path, "header lacks 'shape'"))?;
    let shape_text = shape_text
        .strip_prefix('(')
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| fmt_err(FormatKind::BadHeader, path, "malformed 'shape'"))?;
    let shape = shape_text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| fmt_err(FormatKind::BadHeader, path, format!("malformed shape ({shape_text})")))?;

    Ok(NpyHeader {
        dtype,
        shape,
        data_offset: end,
    })
}

/// Reads a little-endian float NPY array of any rank as `f64`.
pub fn read_npy(path: &Path) -> Result<ArrayD<f64>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let header = parse_header(&bytes, path)?;
    let count: usize = header.shape.iter().product();
    let size = header.dtype.size();
    let payload = &bytes[header.data_offset..];
    if payload.len() < count * size {
        return Err(fmt_err(
            FormatKind::Truncated,
            path,
            format!("expected {} payload bytes, found {}", count * size, payload.len()),
        ));
    }
    let values: Vec<f64> = match header.dtype {
        Dtype::F8 => payload[..count * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
        Dtype::F4 => payload[..count * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
            .collect(),
    };
    Ok(ArrayD::from_shape_vec(IxDyn(&header.shape), values).expect("count matches shape"))
}

/// Writes an `f64` array as NPY v1.0, C order.
pub fn write_npy(path: &Path, shape: &[usize], values: &[f64]) -> Result<()> {
    assert_eq!(
        shape.iter().product::<usize>(),
        values.len(),
        "shape/value count mismatch"
    );
    let shape_txt = match shape {
        [one] => format!("({one},)"),
        _ => format!(
            "({})",
            shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut header = format!("{{'descr': '<f8', 'fortran_order': False, 'shape': {shape_txt}, }}");
    // Preamble + header + '\n' padded to a multiple of 64.
    let unpadded = 10 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');
    let mut out = Vec::with_capacity(10 + header.len() + values.len() * 8);
    out.extend_from_slice(NPY_MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Sidecar metadata stored next to an NPY dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub image_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    /// Free-form extras (architecture string, preprocessing recipe, ...).
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SidecarFile {
    Ids(Vec<String>),
    Full(Sidecar),
}

/// `dir/name.npy` → `dir/name.ids.json`.
pub fn sidecar_path(npy: &Path) -> PathBuf {
    let stem = npy
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    npy.with_file_name(format!("{stem}.ids.json"))
}

fn read_sidecar(npy: &Path) -> Result<Sidecar> {
    let path = sidecar_path(npy);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let parsed: SidecarFile = serde_json::from_str(&text)
        .map_err(|e| fmt_err(FormatKind::SidecarMismatch, &path, format!("invalid sidecar JSON: {e}")))?;
    Ok(match parsed {
        SidecarFile::Ids(image_ids) => Sidecar {
            image_ids,
            source: None,
            extra: Default::default(),
        },
        SidecarFile::Full(s) => s,
    })
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn finish_features(path: &Path, result: Result<Features>) -> Result<Features> {
    // Finite and id checks in the constructors report plain validation errors;
    // attach the file and a format code to them.
    result.map_err(|e| match e {
        DdsError::Validation(msg) if msg.contains("NaN or infinite") => fmt_err(FormatKind::NonFinite, path, msg),
        DdsError::Validation(msg) => fmt_err(FormatKind::SidecarMismatch, path, msg),
        other => other,
    })
}

fn load_npy_features(path: &Path) -> Result<Features> {
    let array = read_npy(path)?;
    let rank = array.ndim();
    if rank != 2 && rank != 4 {
        return Err(fmt_err(
            FormatKind::BadRank,
            path,
            format!("expected a 2-D or 4-D array, got rank {rank}"),
        ));
    }
    if array.iter().any(|v| !v.is_finite()) {
        return Err(fmt_err(
            FormatKind::NonFinite,
            path,
            "array contains NaN or infinite values",
        ));
    }
    let sidecar = read_sidecar(path)?;
    let n = array.shape()[0];
    if sidecar.image_ids.len() != n {
        return Err(fmt_err(
            FormatKind::SidecarMismatch,
            path,
            format!(
                "sidecar lists {} image ids but the array has {n} rows",
                sidecar.image_ids.len()
            ),
        ));
    }
    let source = sidecar.source.unwrap_or_else(|| stem(path));
    let features = if rank == 2 {
        let m = array.into_dimensionality::<ndarray::Ix2>().expect("rank checked");
        FeatureMatrix::new(m, sidecar.image_ids, source).map(Features::from)
    } else {
        let m = array.into_dimensionality::<ndarray::Ix4>().expect("rank checked");
        FeatureMap::new(m, sidecar.image_ids, source).map(Features::from)
    };
    finish_features(path, features)
}

fn load_csv_features(path: &Path) -> Result<Features> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| fmt_err(FormatKind::Csv, path, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| fmt_err(FormatKind::Csv, path, e.to_string()))?
        .clone();
    if headers.get(0) != Some("image_id") || headers.len() < 2 {
        return Err(fmt_err(FormatKind::Csv, path, "header must be image_id,f0,f1,..."));
    }
    let d = headers.len() - 1;
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| fmt_err(FormatKind::Csv, path, e.to_string()))?;
        if record.len() != d + 1 {
            return Err(fmt_err(
                FormatKind::Csv,
                path,
                format!("row {} has {} fields, expected {}", line + 2, record.len(), d + 1),
            ));
        }
        ids.push(record[0].to_string());
        for field in record.iter().skip(1) {
            let v: f64 = field.trim().parse().map_err(|_| {
                fmt_err(
                    FormatKind::Csv,
                    path,
                    format!("row {}: {field:?} is not a number", line + 2),
                )
            })?;
            values.push(v);
        }
    }
    let n = ids.len();
    let data = Array2::from_shape_vec((n, d), values).expect("row widths checked");
    if data.iter().any(|v| !v.is_finite()) {
        return Err(fmt_err(
            FormatKind::NonFinite,
            path,
            "table contains NaN or infinite values",
        ));
    }
    finish_features(path, FeatureMatrix::new(data, ids, stem(path)).map(Features::from))
}

/// Loads a feature dump: `.npy` (with sidecar) or `.csv`.
pub fn load_features(path: &Path) -> Result<Features> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("npy") => load_npy_features(path),
        Some("csv") => load_csv_features(path),
        _ => Err(DdsError::validation(format!(
            "{}: unknown feature file extension (expected .npy or .csv)",
            path.display()
        ))),
    }
}

/// Writes `features` as `path` (NPY) plus its sidecar.
pub fn save_features_npy(path: &Path, features: &Features) -> Result<()> {
    match features {
        Features::Matrix(m) => {
            let data = m.data().as_standard_layout();
            write_npy(path, data.shape(), data.as_slice().expect("standard layout"))?;
        }
        Features::Map(m) => {
            let data = m.data().as_standard_layout();
            write_npy(path, data.shape(), data.as_slice().expect("standard layout"))?;
        }
    }
    let sidecar = Sidecar {
        image_ids: features.image_ids().to_vec(),
        source: Some(features.source().to_string()).filter(|s| !s.is_empty()),
        extra: Default::default(),
    };
    let sp = sidecar_path(path);
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    fs::write(&sp, text).map_err(io_err(&sp))
}

/// Writes a feature matrix as `image_id,f0,f1,...`.
pub fn save_features_csv(path: &Path, m: &FeatureMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| fmt_err(FormatKind::Csv, path, e.to_string()))?;
    let mut header = vec!["image_id".to_string()];
    header.extend((0..m.dim()).map(|j| format!("f{j}")));
    let csv_err = |e: csv::Error| fmt_err(FormatKind::Csv, path, e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for (id, row) in m.image_ids().iter().zip(m.data().rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

fn is_feature_file(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("npy") | Some("csv"))
}

/// Loads every `.npy` / `.csv` dump in `dir` as one model per file, model id
/// = file stem, in lexicographic file-name order.
pub fn load_model_dir(dir: &Path) -> Result<ModelSet> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && is_feature_file(p))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(DdsError::validation(format!(
            "{}: no .npy or .csv feature dumps found",
            dir.display()
        )));
    }
    let entries = files
        .iter()
        .map(|p| Ok((stem(p), load_features(p)?)))
        .collect::<Result<Vec<_>>>()?;
    ModelSet::new(entries)
}

fn parse_kind(cell: &str) -> Option<GroundTruthKind> {
    let cell = cell.trim();
    let value = cell.strip_prefix("kind=").unwrap_or(cell);
    match value.to_ascii_lowercase().as_str() {
        "winrate" => Some(GroundTruthKind::Winrate),
        "affinity" => Some(GroundTruthKind::Affinity),
        _ => None,
    }
}

/// Reads groundtruth: the top-left cell names the kind (`winrate` or
/// `affinity`), the rest of the first row lists target ids, the first column
/// lists source ids. Empty or `nan` cells are allowed on self-transfer pairs.
pub fn load_groundtruth(path: &Path) -> Result<GroundTruth> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| fmt_err(FormatKind::Csv, path, e.to_string()))?;
    let mut rows = reader.records();
    let header = rows
        .next()
        .ok_or_else(|| fmt_err(FormatKind::Csv, path, "empty groundtruth file"))?
        .map_err(|e| fmt_err(FormatKind::Csv, path, e.to_string()))?;
    let kind = parse_kind(&header[0]).ok_or_else(|| {
        fmt_err(
            FormatKind::Csv,
            path,
            format!("top-left cell must be 'winrate' or 'affinity', got {:?}", &header[0]),
        )
    })?;
    let target_ids: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut source_ids = Vec::new();
    let mut values = Vec::new();
    for (line, record) in rows.enumerate() {
        let record = record.map_err(|e| fmt_err(FormatKind::Csv, path, e.to_string()))?;
        if record.len() != target_ids.len() + 1 {
            return Err(fmt_err(
                FormatKind::Csv,
                path,
                format!(
                    "row {} has {} fields, expected {}",
                    line + 2,
                    record.len(),
                    target_ids.len() + 1
                ),
            ));
        }
        source_ids.push(record[0].trim().to_string());
        for field in record.iter().skip(1) {
            let field = field.trim();
            let v = if field.is_empty() || field.eq_ignore_ascii_case("nan") {
                f64::NAN
            } else {
                field.parse().map_err(|_| {
                    fmt_err(
                        FormatKind::Csv,
                        path,
                        format!("row {}: {field:?} is not a number", line + 2),
                    )
                })?
            };
            values.push(v);
        }
    }
    let data = Array2::from_shape_vec((source_ids.len(), target_ids.len()), values).expect("row widths checked");
    GroundTruth::new(kind, data, source_ids, target_ids)
}

pub fn save_groundtruth(path: &Path, gt: &GroundTruth) -> Result<()> {
    let kind = match gt.kind {
        GroundTruthKind::Winrate => "winrate",
        GroundTruthKind::Affinity => "affinity",
    };
    let mut out = String::new();
    out.push_str(kind);
    for t in &gt.target_ids {
        out.push(',');
        out.push_str(t);
    }
    out.push('\n');
    for (i, s) in gt.source_ids.iter().enumerate() {
        out.push_str(s);
        for v in gt.data.row(i) {
            out.push(',');
            if !v.is_nan() {
                out.push_str(&v.to_string());
            }
        }
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}
