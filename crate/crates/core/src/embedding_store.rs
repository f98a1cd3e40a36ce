//! Dense vector storage for corpus items and query components.
//!
//! Vectors are stored as unit-normalized `f32` rows; every dot product is
//! accumulated in `f64`. The on-disk layout is
//!
//! ```text
//! "NSFLEMB1" | count: u32 LE | dim: u32 LE | count * dim f32 LE, row-major
//! ```
//!
//! with an optional newline-delimited JSON sidecar carrying one
//! `{"id": ..., "labels": [...]}` object per row.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NsflError, Result};

pub const MAGIC: &[u8; 8] = b"NSFLEMB1";
const HEADER_LEN: usize = 16;
/// Rows with a raw norm below this are rejected at load time.
pub const MIN_ROW_NORM: f64 = 1e-12;
const PAR_THRESHOLD: usize = 4096;

/// How raw cosine scores are presented to operators and rankings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreScale {
    /// Cosine in [-1, 1].
    #[default]
    Raw,
    /// Affine map `(s + 1) / 2` into [0, 1].
    UnitInterval,
}

impl ScoreScale {
    #[inline]
    pub fn apply(self, s: f64) -> f64 {
        match self {
            ScoreScale::Raw => s,
            ScoreScale::UnitInterval => (s + 1.0) / 2.0,
        }
    }
}

/// One line of the ids sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

/// Immutable matrix of unit-norm rows addressed by string id.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    dim: usize,
    ids: Vec<String>,
    labels: Vec<Option<Vec<String>>>,
    lookup: HashMap<String, usize>,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    /// Builds a matrix from raw row-major data, normalizing every row.
    pub fn new(dim: usize, records: Vec<ItemRecord>, mut data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(NsflError::Format("dimension must be positive".into()));
        }
        if data.len() != records.len() * dim {
            return Err(NsflError::Format(format!(
                "expected {} values for {} rows of dim {}, got {}",
                records.len() * dim,
                records.len(),
                dim,
                data.len()
            )));
        }
        let mut lookup = HashMap::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            if lookup.insert(rec.id.clone(), i).is_some() {
                return Err(NsflError::DuplicateId(rec.id.clone()));
            }
        }
        for (rec, row) in records.iter().zip(data.chunks_exact_mut(dim)) {
            let norm = row
                .iter()
                .map(|&v| f64::from(v) * f64::from(v))
                .sum::<f64>()
                .sqrt();
            if !norm.is_finite() || norm < MIN_ROW_NORM {
                return Err(NsflError::DegenerateVector(rec.id.clone()));
            }
            for v in row.iter_mut() {
                *v = (f64::from(*v) / norm) as f32;
            }
        }
        let (ids, labels) = records.into_iter().map(|r| (r.id, r.labels)).unzip();
        Ok(Self {
            dim,
            ids,
            labels,
            lookup,
            data,
        })
    }

    /// Convenience constructor from `(id, vector)` pairs.
    pub fn from_rows<S, V>(dim: usize, rows: impl IntoIterator<Item = (S, V)>) -> Result<Self>
    where
        S: Into<String>,
        V: AsRef<[f32]>,
    {
        let mut records = Vec::new();
        let mut data = Vec::new();
        for (id, v) in rows {
            let v = v.as_ref();
            let id = id.into();
            if v.len() != dim {
                return Err(NsflError::Dimension {
                    expected: dim,
                    found: v.len(),
                });
            }
            records.push(ItemRecord { id, labels: None });
            data.extend_from_slice(v);
        }
        Self::new(dim, records, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, row: usize) -> &str {
        &self.ids[row]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.lookup.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.position(id).map(|i| self.row(i))
    }

    pub fn labels(&self, row: usize) -> Option<&[String]> {
        self.labels[row].as_deref()
    }

    pub fn has_labels(&self) -> bool {
        self.labels.iter().any(Option::is_some)
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn records(&self) -> Vec<ItemRecord> {
        self.ids
            .iter()
            .zip(&self.labels)
            .map(|(id, labels)| ItemRecord {
                id: id.clone(),
                labels: labels.clone(),
            })
            .collect()
    }

    /// Raw cosine of `query` against every row, in store order.
    pub fn scores(&self, query: &[f64]) -> Result<Vec<f64>> {
        if query.len() != self.dim {
            return Err(NsflError::Dimension {
                expected: self.dim,
                found: query.len(),
            });
        }
        if self.len() >= PAR_THRESHOLD {
            Ok(self
                .data
                .par_chunks_exact(self.dim)
                .map(|row| dot_mixed(query, row))
                .collect())
        } else {
            Ok(self.rows().map(|row| dot_mixed(query, row)).collect())
        }
    }

    /// Writes the binary file and, when given, the ids sidecar.
    pub fn save(&self, bin_path: &Path, ids_path: Option<&Path>) -> Result<()> {
        let mut buf = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(self.len() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(bin_path, buf).map_err(|e| NsflError::io(bin_path, e))?;
        if let Some(ids_path) = ids_path {
            write_sidecar(ids_path, &self.records())?;
        }
        Ok(())
    }
}

/// Parses the binary layout into `(count, dim, values)` without normalizing.
pub fn parse_embedding_bytes(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < HEADER_LEN {
        return Err(NsflError::Format(format!(
            "file too short for header ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[..8] != MAGIC {
        return Err(NsflError::Format("bad magic bytes".into()));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(NsflError::Format("dimension must be positive".into()));
    }
    let expected = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| NsflError::Format("header size overflow".into()))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != expected {
        return Err(NsflError::Format(format!(
            "payload is {} bytes, header declares {count}x{dim} f32 = {expected} bytes",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((count, dim, values))
}

pub fn read_sidecar(path: &Path) -> Result<Vec<ItemRecord>> {
    let file = fs::File::open(path).map_err(|e| NsflError::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| NsflError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ItemRecord = serde_json::from_str(&line).map_err(|e| {
            NsflError::Format(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_sidecar(path: &Path, records: &[ItemRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| NsflError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in records {
        let line = serde_json::to_string(rec).expect("item record serializes");
        writeln!(w, "{line}").map_err(|e| NsflError::io(path, e))?;
    }
    w.flush().map_err(|e| NsflError::io(path, e))
}

/// Loads an embedding file. Without a sidecar, row indices become ids.
pub fn load_embeddings(bin_path: &Path, ids_path: Option<&Path>) -> Result<EmbeddingMatrix> {
    let bytes = fs::read(bin_path).map_err(|e| NsflError::io(bin_path, e))?;
    let (count, dim, values) = parse_embedding_bytes(&bytes)?;
    let records = match ids_path {
        Some(p) => {
            let recs = read_sidecar(p)?;
            if recs.len() != count {
                return Err(NsflError::Format(format!(
                    "sidecar has {} records, embedding file has {count} rows",
                    recs.len()
                )));
            }
            recs
        }
        None => (0..count)
            .map(|i| ItemRecord {
                id: i.to_string(),
                labels: None,
            })
            .collect(),
    };
    EmbeddingMatrix::new(dim, records, values)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn dot_mixed(a: &[f64], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, &y)| x * f64::from(y)).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Returns `v / ||v||`, or `None` when the norm is below `min_norm`.
pub fn normalized(v: &[f64], min_norm: f64) -> Option<Vec<f64>> {
    let n = l2_norm(v);
    (n.is_finite() && n >= min_norm).then(|| v.iter().map(|x| x / n).collect())
}

/// Projects `v` onto the unit sphere. Vectors already unit-norm to within
/// `1e-12` are returned unchanged so repeated projection is a no-op.
pub fn onto_sphere(v: &[f64]) -> Option<Vec<f64>> {
    let n = l2_norm(v);
    if !n.is_finite() || n < MIN_ROW_NORM {
        None
    } else if (n - 1.0).abs() <= 1e-12 {
        Some(v.to_vec())
    } else {
        Some(v.iter().map(|x| x / n).collect())
    }
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

/// Cosine of two unit vectors, i.e. their dot product.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(NsflError::Dimension {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(dot(a, b))
}

/// One `(id, cosine)` per corpus row, in store order.
pub fn score_against_corpus<'a>(
    query: &[f64],
    store: &'a EmbeddingMatrix,
) -> Result<Vec<(&'a str, f64)>> {
    let scores = store.scores(query)?;
    Ok(store.ids().iter().map(String::as_str).zip(scores).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn encode(count: u32, dim: u32, values: &[f32]) -> Vec<u8> {
        let mut b = MAGIC.to_vec();
        b.extend_from_slice(&count.to_le_bytes());
        b.extend_from_slice(&dim.to_le_bytes());
        for v in values {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    fn records(ids: &[&str]) -> Vec<ItemRecord> {
        ids.iter()
            .map(|id| ItemRecord {
                id: id.to_string(),
                labels: None,
            })
            .collect()
    }

    #[test]
    fn rows_are_renormalized() {
        // both raw norms are 2.0
        let data = vec![2.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let m = EmbeddingMatrix::new(4, records(&["a", "b"]), data).unwrap();
        for row in m.rows() {
            let n: f64 = row.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
            assert_abs_diff_eq!(n, 1.0, epsilon = 1e-6);
        }
        assert_eq!(m.row(0), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(m.row(1), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn empty_file_keeps_dim() {
        let (count, dim, vals) = parse_embedding_bytes(&encode(0, 7, &[])).unwrap();
        assert_eq!((count, dim, vals.len()), (0, 7, 0));
        let m = EmbeddingMatrix::new(dim, vec![], vals).unwrap();
        assert!(m.is_empty());
        assert_eq!(m.dim(), 7);
    }

    #[test]
    fn length_mismatch_is_format_error() {
        let bytes = encode(2, 4, &[1.0; 7]);
        assert!(matches!(
            parse_embedding_bytes(&bytes),
            Err(NsflError::Format(_))
        ));
        let bytes = encode(1, 2, &[1.0; 3]);
        assert!(matches!(
            parse_embedding_bytes(&bytes),
            Err(NsflError::Format(_))
        ));
        assert!(matches!(
            parse_embedding_bytes(b"NSFLEMB0\0\0\0\0\x01\0\0\0"),
            Err(NsflError::Format(_))
        ));
        assert!(matches!(
            parse_embedding_bytes(b"NSFL"),
            Err(NsflError::Format(_))
        ));
    }

    #[test]
    fn duplicate_and_degenerate_rows_rejected() {
        let err = EmbeddingMatrix::new(2, records(&["x", "x"]), vec![1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(err, Err(NsflError::DuplicateId(id)) if id == "x"));
        let err = EmbeddingMatrix::new(2, records(&["ok", "zero"]), vec![1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(err, Err(NsflError::DegenerateVector(id)) if id == "zero"));
    }

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        assert!(matches!(
            cosine(&[1.0, 0.0], &[1.0, 0.0, 0.0]),
            Err(NsflError::Dimension { .. })
        ));
    }

    #[test]
    fn corpus_scoring_basis() {
        let m = EmbeddingMatrix::from_rows(
            3,
            [
                ("e1", [1.0f32, 0.0, 0.0]),
                ("e2", [0.0, 1.0, 0.0]),
                ("e3", [0.0, 0.0, 1.0]),
            ],
        )
        .unwrap();
        let scores = score_against_corpus(&[1.0, 0.0, 0.0], &m).unwrap();
        assert_eq!(scores, vec![("e1", 1.0), ("e2", 0.0), ("e3", 0.0)]);
        let empty = EmbeddingMatrix::new(3, vec![], vec![]).unwrap();
        assert!(score_against_corpus(&[1.0, 0.0, 0.0], &empty).unwrap().is_empty());
        assert!(matches!(
            score_against_corpus(&[1.0, 0.0], &m),
            Err(NsflError::Dimension { .. })
        ));
    }

    #[test]
    fn save_load_roundtrip_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("e.bin");
        let ids = dir.path().join("e.jsonl");
        let mut recs = records(&["p", "q"]);
        recs[1].labels = Some(vec!["dog".into()]);
        let m = EmbeddingMatrix::new(3, recs, vec![3.0, 4.0, 0.0, 0.3, -0.2, 0.9]).unwrap();
        m.save(&bin, Some(&ids)).unwrap();
        let back = load_embeddings(&bin, Some(&ids)).unwrap();
        m.save(&bin, Some(&ids)).unwrap();
        let again = load_embeddings(&bin, Some(&ids)).unwrap();
        for (a, b) in back.rows().zip(again.rows()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-6);
            }
        }
        assert_eq!(back.labels(1), Some(&["dog".to_string()][..]));
        assert_eq!(back.position("q"), Some(1));
    }

    #[test]
    fn sidecar_count_must_match() {
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("e.bin");
        let ids = dir.path().join("e.jsonl");
        fs::write(&bin, encode(2, 2, &[1.0, 0.0, 0.0, 1.0])).unwrap();
        write_sidecar(&ids, &records(&["only"])).unwrap();
        assert!(matches!(
            load_embeddings(&bin, Some(&ids)),
            Err(NsflError::Format(_))
        ));
        let m = load_embeddings(&bin, None).unwrap();
        assert_eq!(m.ids(), &["0".to_string(), "1".to_string()]);
    }

    #[test]
    fn rescale_maps_to_unit_interval() {
        assert_eq!(ScoreScale::UnitInterval.apply(-1.0), 0.0);
        assert_eq!(ScoreScale::UnitInterval.apply(1.0), 1.0);
        assert_eq!(ScoreScale::Raw.apply(-0.3), -0.3);
    }

    fn unit_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0f64..1.0, dim)
            .prop_filter_map("non-degenerate", |v| normalized(&v, 1e-3))
    }

    proptest! {
        #[test]
        fn corpus_scores_match_rowwise_loop(
            rows in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 6), 5),
            q in unit_vec(6),
        ) {
            prop_assume!(rows.iter().all(|r| r.iter().map(|v| v * v).sum::<f32>() > 1e-3));
            let m = EmbeddingMatrix::from_rows(
                6,
                rows.iter().enumerate().map(|(i, r)| (format!("d{i}"), r.clone())),
            ).unwrap();
            let fast = score_against_corpus(&q, &m).unwrap();
            for (i, (id, s)) in fast.iter().enumerate() {
                let mut acc = 0.0f64;
                for (a, &b) in q.iter().zip(m.row(i)) {
                    acc += a * f64::from(b);
                }
                prop_assert_eq!(*id, m.id(i));
                prop_assert_eq!(*s, acc);
            }
        }

        #[test]
        fn cosine_symmetric_and_bounded(a in unit_vec(8), b in unit_vec(8)) {
            let ab = cosine(&a, &b).unwrap();
            prop_assert_eq!(ab, cosine(&b, &a).unwrap());
            prop_assert!(ab.abs() <= 1.0 + 1e-12);
            prop_assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-6);
        }
    }
}
