//! Feature files.
//!
//! Binary layout (all integers u32 little-endian):
//!
//! ```text
//! "TAFS" | version = 1 | m | class_count
//! repeated class_count times: class_id | count | count·m f32 LE, row-major
//! ```
//!
//! The CSV form has a header `label,f0,...,f{m-1}` and one sample per line.
//! Classes are written in ascending id order, so saving is deterministic.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::episodes::FeatureStore;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const MAGIC: &[u8; 4] = b"TAFS";
pub const VERSION: u32 = 1;

/// Loads a binary or CSV feature file, picking the format from the magic bytes.
pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureStore> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(MAGIC) {
        decode_binary(&bytes)
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Format("neither TAFS binary nor UTF-8 CSV".into()))?;
        decode_csv(&text)
    }
}

/// Writes the binary form unless the path ends in `.csv`.
pub fn save_features(store: &FeatureStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        fs::write(path, encode_csv(store))?;
    } else {
        fs::write(path, encode_binary(store)?)?;
    }
    Ok(())
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
}

pub fn encode_binary(store: &FeatureStore) -> Result<Vec<u8>> {
    let m = store.dim();
    let mut out = Vec::with_capacity(16 + store.n_samples() * (m * 4) + store.n_classes() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(m, "dimension")?.to_le_bytes());
    out.extend_from_slice(&to_u32(store.n_classes(), "class count")?.to_le_bytes());
    for (&id, rows) in store.classes() {
        out.extend_from_slice(&id.to_le_bytes());
        out.extend_from_slice(&to_u32(rows.rows(), "sample count")?.to_le_bytes());
        for &v in rows.as_slice() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                expected: end,
                actual: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_binary(bytes: &[u8]) -> Result<FeatureStore> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let m = r.u32()? as usize;
    let n_classes = r.u32()? as usize;
    if m == 0 {
        return Err(Error::Format("feature dimension is 0".into()));
    }
    let mut classes = BTreeMap::new();
    for _ in 0..n_classes {
        let id = r.u32()?;
        let count = r.u32()? as usize;
        if count == 0 {
            return Err(Error::Format(format!("class {id} has no samples")));
        }
        let raw = r.take(count * m * 4)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let rows = Matrix::new(count, m, data).map_err(|e| match e {
            Error::NonFinite { row, col } => {
                Error::Format(format!("non-finite value in class {id}, row {row}, column {col}"))
            }
            other => other,
        })?;
        if classes.insert(id, rows).is_some() {
            return Err(Error::Format(format!("duplicate class id {id}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after last class",
            bytes.len() - r.pos
        )));
    }
    FeatureStore::new(m, classes)
}

pub fn encode_csv(store: &FeatureStore) -> String {
    let m = store.dim();
    let mut out = String::from("label");
    for j in 0..m {
        let _ = write!(out, ",f{j}");
    }
    out.push('\n');
    for (&id, rows) in store.classes() {
        for row in rows.row_iter() {
            let _ = write!(out, "{id}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    out
}

pub fn decode_csv(text: &str) -> Result<FeatureStore> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Format("empty CSV".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"label") || cols.len() < 2 {
        return Err(Error::Format("CSV header must be label,f0,...".into()));
    }
    for (j, c) in cols[1..].iter().enumerate() {
        if *c != format!("f{j}") {
            return Err(Error::Format(format!("CSV header column {} should be f{j}, found '{c}'", j + 1)));
        }
    }
    let m = cols.len() - 1;
    let mut grouped: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (lineno, line) in lines {
        let line_no = lineno + 1;
        let mut fields = line.split(',').map(str::trim);
        let label: u32 = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("line {line_no}: bad label")))?;
        let values: Vec<f64> = fields
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::Format(format!("line {line_no}: bad number '{s}'")))
            })
            .collect::<Result<_>>()?;
        if values.len() != m {
            return Err(Error::Format(format!(
                "line {line_no}: expected {m} features, found {}",
                values.len()
            )));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("line {line_no}: non-finite value in f{j}")));
        }
        grouped.entry(label).or_default().extend(values);
    }
    let classes = grouped
        .into_iter()
        .map(|(id, data)| {
            let rows = data.len() / m;
            (id, Matrix::from_vec_unchecked(rows, m, data))
        })
        .collect();
    FeatureStore::new(m, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_store() -> FeatureStore {
        let mut classes = BTreeMap::new();
        classes.insert(3, Matrix::from_rows(&[[0.5, -1.25, 2.0], [1.0, 0.0, -0.75]]).unwrap());
        classes.insert(7, Matrix::from_rows(&[[4.0, 8.0, 0.125]]).unwrap());
        FeatureStore::new(3, classes).unwrap()
    }

    #[test]
    fn binary_layout() {
        let bytes = encode_binary(&small_store()).unwrap();
        assert_eq!(&bytes[..4], b"TAFS");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &3u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &2u32.to_le_bytes());
        assert_eq!(&bytes[24..28], &0.5f32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 8 + 6 * 4 + 8 + 3 * 4);
        assert_eq!(decode_binary(&bytes).unwrap(), small_store());
    }

    #[test]
    fn truncated_reports_sizes() {
        let bytes = encode_binary(&small_store()).unwrap();
        let err = decode_binary(&bytes[..bytes.len() - 3]).unwrap_err();
        match err {
            Error::Truncated { expected, actual } => {
                assert_eq!(expected, bytes.len());
                assert_eq!(actual, bytes.len() - 3);
            }
            other => panic!("unexpected {other}"),
        }
        assert!(err_string(&bytes[..bytes.len() - 3]).contains("expected 68 bytes, found 65"));
    }

    fn err_string(b: &[u8]) -> String {
        decode_binary(b).unwrap_err().to_string()
    }

    #[test]
    fn rejects_bad_headers_and_values() {
        let mut bytes = encode_binary(&small_store()).unwrap();
        bytes[4] = 2;
        assert!(err_string(&bytes).contains("version"));
        let mut bytes = encode_binary(&small_store()).unwrap();
        bytes[24..28].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(err_string(&bytes).contains("non-finite value in class 3, row 0"));
        let mut bytes = encode_binary(&small_store()).unwrap();
        bytes.push(0);
        assert!(err_string(&bytes).contains("trailing"));
    }

    #[test]
    fn csv_matches_binary() {
        let csv = encode_csv(&small_store());
        assert!(csv.starts_with("label,f0,f1,f2\n3,0.5,-1.25,2\n"));
        assert_eq!(decode_csv(&csv).unwrap(), small_store());
    }

    #[test]
    fn csv_errors() {
        assert!(decode_csv("id,f0\n1,2\n").is_err());
        let err = decode_csv("label,f0,f1\n1,2\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(decode_csv("label,f0\n1,inf\n").unwrap_err().to_string().contains("non-finite"));
    }
}
