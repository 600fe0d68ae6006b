//! On-disk dataset formats.
//!
//! * features: `ICOTFEAT`, u32 version, u32 n, u32 d, then `n·d` little-endian
//!   f32 values, row-major
//! * labels: `ICOTLABL`, u32 version, u32 n, then `n` little-endian u32 ids
//! * attributes: UTF-8 CSV without header, `class_id,a_1,…,a_q` per line,
//!   ids dense and in file order
//! * split: JSON [`SplitSpec`]
//! * manifest: optional JSON object mapping class id to a name

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::split::SplitSpec;
use super::types::{ClassId, SemanticTable};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub const FEATURE_MAGIC: &[u8; 8] = b"ICOTFEAT";
pub const LABEL_MAGIC: &[u8; 8] = b"ICOTLABL";
pub const FORMAT_VERSION: u32 = 1;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn u32_at(bytes: &[u8], offset: usize, path: &Path, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| {
            Error::format(
                path,
                format!("byte {offset}"),
                format!("malformed header: truncated {what}"),
            )
        })
}

fn check_header(bytes: &[u8], magic: &[u8; 8], path: &Path) -> Result<()> {
    if bytes.len() < 8 || &bytes[..8] != magic {
        return Err(Error::format(
            path,
            "byte 0",
            format!(
                "malformed header: expected magic {:?}",
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    let version = u32_at(bytes, 8, path, "version")?;
    if version != FORMAT_VERSION {
        return Err(Error::format(
            path,
            "byte 8",
            format!("malformed header: unsupported version {version}"),
        ));
    }
    Ok(())
}

/// Feature matrix as f32 bytes. Values are narrowed to f32.
pub fn encode_features(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + m.as_slice().len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &v in m.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<Matrix> {
    check_header(bytes, FEATURE_MAGIC, path)?;
    let n = u32_at(bytes, 12, path, "row count")? as usize;
    let d = u32_at(bytes, 16, path, "column count")? as usize;
    let body = &bytes[20..];
    let expected = n
        .checked_mul(d)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::format(path, "byte 12", "malformed header: size overflow"))?;
    if body.len() != expected {
        return Err(Error::format(
            path,
            "byte 20",
            format!(
                "dimension mismatch: header says {n}x{d} ({expected} bytes), body has {}",
                body.len()
            ),
        ));
    }
    let mut data = Vec::with_capacity(n * d);
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::format(
                path,
                format!("byte {} (row {}, col {})", 20 + 4 * i, i / d, i % d),
                "non-finite feature value",
            ));
        }
        data.push(v as f64);
    }
    Matrix::from_vec(n, d, data)
}

pub fn write_features(path: &Path, m: &Matrix) -> Result<()> {
    write_bytes(path, &encode_features(m))
}

pub fn read_features(path: &Path) -> Result<Matrix> {
    decode_features(&read_bytes(path)?, path)
}

pub fn encode_labels(labels: &[ClassId]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + labels.len() * 4);
    out.extend_from_slice(LABEL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_le_bytes());
    for c in labels {
        out.extend_from_slice(&c.0.to_le_bytes());
    }
    out
}

pub fn decode_labels(bytes: &[u8], path: &Path) -> Result<Vec<ClassId>> {
    check_header(bytes, LABEL_MAGIC, path)?;
    let n = u32_at(bytes, 12, path, "label count")? as usize;
    let body = &bytes[16..];
    if body.len() != n * 4 {
        return Err(Error::format(
            path,
            "byte 16",
            format!(
                "dimension mismatch: header says {n} labels, body has {} bytes",
                body.len()
            ),
        ));
    }
    Ok(body
        .chunks_exact(4)
        .map(|c| ClassId(u32::from_le_bytes(c.try_into().unwrap())))
        .collect())
}

pub fn write_labels(path: &Path, labels: &[ClassId]) -> Result<()> {
    write_bytes(path, &encode_labels(labels))
}

pub fn read_labels(path: &Path) -> Result<Vec<ClassId>> {
    decode_labels(&read_bytes(path)?, path)
}

/// `{}` on f64 prints the shortest string that parses back to the same bits.
pub fn encode_attributes(table: &SemanticTable) -> String {
    let mut out = String::new();
    for (i, row) in table.matrix().row_iter().enumerate() {
        out.push_str(&i.to_string());
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn decode_attributes(text: &str, path: &Path) -> Result<SemanticTable> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let loc = || format!("line {}", line_no + 1);
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let id: u32 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| Error::format(path, loc(), "missing or non-integer class id"))?;
        if id as usize != rows.len() {
            return Err(Error::format(
                path,
                loc(),
                format!(
                    "unknown class id {id}: ids must be dense and in order, expected {}",
                    rows.len()
                ),
            ));
        }
        let values = fields
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::format(path, loc(), "non-numeric attribute value"))?;
        if let Some(first) = rows.first() {
            if first.len() != values.len() {
                return Err(Error::format(
                    path,
                    loc(),
                    format!(
                        "dimension mismatch: {} attributes, expected {}",
                        values.len(),
                        first.len()
                    ),
                ));
            }
        } else if values.is_empty() {
            return Err(Error::format(path, loc(), "class has no attributes"));
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(Error::format(path, "line 1", "attribute file is empty"));
    }
    SemanticTable::new(Matrix::from_rows(&rows)?)
}

pub fn write_attributes(path: &Path, table: &SemanticTable) -> Result<()> {
    write_bytes(path, encode_attributes(table).as_bytes())
}

pub fn read_attributes(path: &Path) -> Result<SemanticTable> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|e| {
        Error::format(
            path,
            format!("byte {}", e.utf8_error().valid_up_to()),
            "not UTF-8",
        )
    })?;
    decode_attributes(&text, path)
}

pub fn write_split(path: &Path, split: &SplitSpec) -> Result<()> {
    let mut s = serde_json::to_string_pretty(split)?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn read_split(path: &Path) -> Result<SplitSpec> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| {
        Error::format(
            path,
            format!("line {} column {}", e.line(), e.column()),
            e.to_string(),
        )
    })
}

pub fn write_manifest(path: &Path, names: &BTreeMap<ClassId, String>) -> Result<()> {
    let mut s = serde_json::to_string_pretty(names)?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<BTreeMap<ClassId, String>> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| {
        Error::format(
            path,
            format!("line {} column {}", e.line(), e.column()),
            e.to_string(),
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corrupted_magic_is_a_malformed_header() {
        let m = Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let mut bytes = encode_features(&m);
        bytes[3] = b'X';
        let err = decode_features(&bytes, Path::new("f.bin")).unwrap_err();
        assert!(err.to_string().contains("malformed header"), "{err}");
    }

    #[test]
    fn truncated_body_is_a_dimension_mismatch() {
        let m = Matrix::from_vec(2, 2, vec![1.0; 4]).unwrap();
        let bytes = encode_features(&m);
        let err = decode_features(&bytes[..bytes.len() - 4], Path::new("f.bin")).unwrap_err();
        assert!(err.to_string().contains("dimension mismatch"), "{err}");
        let err = decode_features(&bytes[..10], Path::new("f.bin")).unwrap_err();
        assert!(err.to_string().contains("malformed header"), "{err}");
    }

    #[test]
    fn labels_round_trip_and_check_magic() {
        let labels = vec![ClassId(3), ClassId(0), ClassId(9)];
        let bytes = encode_labels(&labels);
        assert_eq!(decode_labels(&bytes, Path::new("l")).unwrap(), labels);
        assert!(decode_labels(&encode_features(&Matrix::zeros(1, 1)), Path::new("l")).is_err());
    }

    #[test]
    fn attribute_errors_carry_line_numbers() {
        let err = decode_attributes("0,1,2\n2,1,2\n", Path::new("a.csv")).unwrap_err();
        assert!(err.to_string().contains("line 2") && err.to_string().contains("unknown class id"));
        let err = decode_attributes("0,1,2\n1,1\n", Path::new("a.csv")).unwrap_err();
        assert!(err.to_string().contains("dimension mismatch"));
        let t = decode_attributes(
            "0,0.1,0.30000000000000004\n1,1e-300,2\n",
            Path::new("a.csv"),
        )
        .unwrap();
        let back = decode_attributes(&encode_attributes(&t), Path::new("a.csv")).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.matrix().get(1, 0), 1e-300);
    }
}
