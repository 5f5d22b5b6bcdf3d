//! Embedding matrices, the `AEMB` binary interchange format, corpus metadata
//! CSV, and the similarity primitives everything else is built on.
//!
//! All similarity math in this crate runs on unit-normalized vectors, so
//! cosine similarity reduces to a plain inner product. Accumulation is f64
//! over f32 inputs, in row order; the result is rounded back to f32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magic bytes of the binary embedding file.
pub const EMBED_MAGIC: &[u8; 4] = b"AEMB";
/// Current version of the binary embedding format.
pub const EMBED_VERSION: u16 = 1;
/// Header flag bit 0: rows are already unit-normalized.
pub const FLAG_PRE_NORMALIZED: u16 = 1;

/// Default embedding dimension when nothing else is configured.
pub const DEFAULT_DIM: usize = 512;

/// A dense row-major matrix of `count` embedding vectors of dimension `dim`.
///
/// Row index is the stable identity every other module keys on.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
    normalized: bool,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize) -> Self {
        EmbeddingMatrix {
            dim,
            data: Vec::new(),
            normalized: false,
        }
    }

    /// Build from row-major data. `data.len()` must be a multiple of `dim`.
    pub fn from_rows(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidInput(format!(
                "data length {} is not a multiple of dim {}",
                data.len(),
                dim
            )));
        }
        Ok(EmbeddingMatrix {
            dim,
            data,
            normalized: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn push_row(&mut self, row: &[f32]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch {
                left: self.dim,
                right: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        self.normalized = false;
        Ok(())
    }

    /// Unit-normalize every row in place and mark the matrix normalized.
    pub fn normalize_rows(&mut self) -> Result<()> {
        let dim = self.dim;
        for (i, row) in self.data.chunks_exact_mut(dim).enumerate() {
            l2_normalize_in_place(row).map_err(|e| match e {
                Error::ZeroVector => Error::InvalidInput(format!("row {i} has zero norm")),
                other => other,
            })?;
        }
        self.normalized = true;
        Ok(())
    }

    /// Mark rows as already unit-normalized without touching the data.
    /// Used by loaders that have verified (or just produced) unit rows.
    pub fn assume_normalized(&mut self) {
        self.normalized = true;
    }

    fn check_finite(&self) -> Result<()> {
        for (i, row) in self.data.chunks_exact(self.dim).enumerate() {
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFiniteValue { row: i, col: j });
                }
            }
        }
        Ok(())
    }
}

/// Inner product with f64 accumulation in index order.
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0f64;
    for i in 0..a.len() {
        acc += a[i] as f64 * b[i] as f64;
    }
    acc
}

/// Unit-normalize a vector. Fails on norms at or below 1e-12.
pub fn l2_normalize(v: &[f32]) -> Result<Vec<f32>> {
    let mut out = v.to_vec();
    l2_normalize_in_place(&mut out)?;
    Ok(out)
}

pub fn l2_normalize_in_place(v: &mut [f32]) -> Result<()> {
    for (j, x) in v.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::NonFiniteValue { row: 0, col: j });
        }
    }
    let norm = dot(v, v).sqrt();
    if norm <= 1e-12 {
        return Err(Error::ZeroVector);
    }
    for x in v.iter_mut() {
        *x = (*x as f64 / norm) as f32;
    }
    Ok(())
}

/// Cosine similarity of two unit vectors: the inner product, clamped to
/// [-1, 1] against rounding. Exactly symmetric in its arguments.
pub fn cosine_sim(a: &[f32], b: &[f32]) -> Result<f32> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(dot(a, b).clamp(-1.0, 1.0) as f32)
}

/// Load an `AEMB` file.
///
/// Layout: magic `AEMB`, version u16 LE, flags u16 LE (bit 0 = rows
/// pre-normalized), dim u32 LE, count u64 LE, then count*dim f32 LE values in
/// row-major order. Rows are unit-normalized on load unless the flag says
/// they already are. Short files fail rather than truncate.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut header = [0u8; 20];
    r.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    if &header[0..4] != EMBED_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: "AEMB",
        });
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != EMBED_VERSION {
        return Err(Error::VersionUnsupported {
            path: path.into(),
            version,
        });
    }
    let flags = u16::from_le_bytes([header[6], header[7]]);
    let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(header[12..20].try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(Error::InvalidInput(format!(
            "{}: zero dimension in header",
            path.display()
        )));
    }

    let needed = (count as u64) * (dim as u64) * 4;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)
        .map_err(|e| Error::io(path, e))?;
    if (payload.len() as u64) < needed {
        return Err(Error::TruncatedFile {
            path: path.into(),
            needed,
            got: payload.len() as u64,
        });
    }
    if (payload.len() as u64) > needed {
        return Err(Error::InvalidInput(format!(
            "{}: {} trailing bytes after {} rows",
            path.display(),
            payload.len() as u64 - needed,
            count
        )));
    }

    let mut data = Vec::with_capacity(count * dim);
    for chunk in payload.chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    let mut matrix = EmbeddingMatrix {
        dim,
        data,
        normalized: false,
    };
    matrix.check_finite()?;
    if flags & FLAG_PRE_NORMALIZED != 0 {
        matrix.normalized = true;
    } else {
        matrix.normalize_rows()?;
    }
    Ok(matrix)
}

/// Save a matrix as an `AEMB` file. Byte-deterministic for identical input;
/// the pre-normalized flag mirrors the matrix state.
pub fn save_embeddings(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);

    let flags: u16 = if matrix.normalized {
        FLAG_PRE_NORMALIZED
    } else {
        0
    };
    w.write_all(EMBED_MAGIC).map_err(|e| Error::io(path, e))?;
    w.write_all(&EMBED_VERSION.to_le_bytes())
        .map_err(|e| Error::io(path, e))?;
    w.write_all(&flags.to_le_bytes())
        .map_err(|e| Error::io(path, e))?;
    w.write_all(&(matrix.dim as u32).to_le_bytes())
        .map_err(|e| Error::io(path, e))?;
    w.write_all(&(matrix.count() as u64).to_le_bytes())
        .map_err(|e| Error::io(path, e))?;
    for v in &matrix.data {
        w.write_all(&v.to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One corpus entry. `embedding_row` is the position of the record in the
/// corpus CSV, which by contract equals its row in the embedding matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRecord {
    pub record_id: u64,
    pub url: String,
    pub caption: String,
    pub language: Option<String>,
    pub embedding_row: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusCsvRow {
    record_id: u64,
    url: String,
    caption: String,
    language: String,
}

/// Load corpus metadata CSV (`record_id,url,caption,language`). Row order
/// defines `embedding_row`. Duplicate record ids are an error.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<CorpusCsvRow>().enumerate() {
        let row = row?;
        if !seen.insert(row.record_id) {
            return Err(Error::DuplicateRecordId(row.record_id));
        }
        out.push(CorpusRecord {
            record_id: row.record_id,
            url: row.url,
            caption: row.caption,
            language: if row.language.is_empty() {
                None
            } else {
                Some(row.language)
            },
            embedding_row: i,
        });
    }
    Ok(out)
}

pub fn save_corpus(records: &[CorpusRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    for rec in records {
        writer.serialize(CorpusCsvRow {
            record_id: rec.record_id,
            url: rec.url.clone(),
            caption: rec.caption.clone(),
            language: rec.language.clone().unwrap_or_default(),
        })?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Check that every record's embedding_row is inside the matrix.
pub fn validate_corpus_rows(records: &[CorpusRecord], matrix: &EmbeddingMatrix) -> Result<()> {
    for rec in records {
        if rec.embedding_row >= matrix.count() {
            return Err(Error::RowOutOfRange {
                row: rec.embedding_row,
                count: matrix.count(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpfile(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("anchorsieve-embed-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn header_roundtrip_2x4() {
        let data = vec![0.1f32, 0.2, 0.3, 0.4, -0.5, 0.25, 0.125, 1.0];
        let mut m = EmbeddingMatrix::from_rows(4, data.clone()).unwrap();
        m.normalize_rows().unwrap();
        let path = tmpfile("roundtrip.aemb");
        save_embeddings(&m, &path).unwrap();
        let back = load_embeddings(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.dim(), 4);
        assert_eq!(back.count(), 2);
    }

    #[test]
    fn literal_header_and_payload_layout() {
        // dim=4, count=2, flag pre-normalized, then 8 floats row-major.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"AEMB");
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&2u64.to_le_bytes());
        let values = [0.5f32, -0.5, 0.5, 0.5, 1.0, 0.0, 0.0, 0.0];
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let path = tmpfile("literal.aemb");
        std::fs::write(&path, &bytes).unwrap();
        let m = load_embeddings(&path).unwrap();
        assert_eq!((m.dim(), m.count()), (4, 2));
        assert_eq!(m.row(0), &values[0..4]);
        assert_eq!(m.row(1), &values[4..8]);
    }

    #[test]
    fn saved_twice_is_byte_identical() {
        let mut m = EmbeddingMatrix::from_rows(3, vec![1.0, 2.0, 3.0]).unwrap();
        m.normalize_rows().unwrap();
        let p1 = tmpfile("det1.aemb");
        let p2 = tmpfile("det2.aemb");
        save_embeddings(&m, &p1).unwrap();
        save_embeddings(&m, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn empty_matrix_roundtrip() {
        let mut m = EmbeddingMatrix::new(16);
        m.assume_normalized();
        let path = tmpfile("empty.aemb");
        save_embeddings(&m, &path).unwrap();
        let back = load_embeddings(&path).unwrap();
        assert_eq!(back.count(), 0);
        assert_eq!(back.dim(), 16);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let mut m = EmbeddingMatrix::from_rows(4, vec![0.5; 8]).unwrap();
        m.normalize_rows().unwrap();
        let path = tmpfile("trunc.aemb");
        save_embeddings(&m, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        match load_embeddings(&path) {
            Err(Error::TruncatedFile { .. }) => {}
            other => panic!("expected TruncatedFile, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let path = tmpfile("magic.aemb");
        std::fs::write(
            &path,
            b"NOPE\x01\x00\x00\x00\x04\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00",
        )
        .unwrap();
        assert!(matches!(
            load_embeddings(&path),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn unsupported_version_is_rejected() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"AEMB");
        bytes.extend_from_slice(&9u16.to_le_bytes());
        bytes.extend_from_slice(&0u16.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&0u64.to_le_bytes());
        let path = tmpfile("version.aemb");
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_embeddings(&path),
            Err(Error::VersionUnsupported { version: 9, .. })
        ));
    }

    #[test]
    fn non_finite_is_rejected() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"AEMB");
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        let path = tmpfile("nan.aemb");
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_embeddings(&path),
            Err(Error::NonFiniteValue { row: 0, col: 1 })
        ));
    }

    #[test]
    fn unnormalized_file_is_normalized_on_load() {
        let m = EmbeddingMatrix::from_rows(2, vec![3.0, 4.0]).unwrap();
        let path = tmpfile("unnorm.aemb");
        save_embeddings(&m, &path).unwrap();
        let back = load_embeddings(&path).unwrap();
        assert!(back.is_normalized());
        let row = back.row(0);
        assert!((row[0] - 0.6).abs() < 1e-6);
        assert!((row[1] - 0.8).abs() < 1e-6);
    }

    #[test]
    fn normalize_3_4_5() {
        let out = l2_normalize(&[3.0, 4.0]).unwrap();
        assert!((out[0] - 0.6).abs() < 1e-7);
        assert!((out[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn normalize_is_idempotent() {
        let once = l2_normalize(&[0.3, -1.7, 2.2, 0.01]).unwrap();
        let twice = l2_normalize(&once).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn normalize_zero_vector_fails() {
        assert!(matches!(l2_normalize(&[0.0, 0.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn cosine_self_similarity() {
        let v = l2_normalize(&[0.2, -0.4, 0.9, 1.3]).unwrap();
        let sim = cosine_sim(&v, &v).unwrap();
        assert!((1.0 - 1e-6..=1.0).contains(&sim));
    }

    #[test]
    fn cosine_orthogonal() {
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn cosine_dimension_mismatch() {
        assert!(matches!(
            cosine_sim(&[1.0], &[1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    // Kahan-compensated f64 summation: higher-precision route than the
    // implementation's plain f64 accumulation.
    fn kahan_dot(a: &[f32], b: &[f32]) -> f64 {
        let mut sum = 0f64;
        let mut c = 0f64;
        for i in 0..a.len() {
            let y = (a[i] as f64) * (b[i] as f64) - c;
            let t = sum + y;
            c = (t - sum) - y;
            sum = t;
        }
        sum
    }

    #[test]
    fn cosine_matches_extended_precision_oracle() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let a: Vec<f32> = (0..512).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let b: Vec<f32> = (0..512).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let a = l2_normalize(&a).unwrap();
            let b = l2_normalize(&b).unwrap();
            let got = cosine_sim(&a, &b).unwrap() as f64;
            let want = kahan_dot(&a, &b).clamp(-1.0, 1.0);
            assert!((got - want).abs() < 1e-6, "got {got}, want {want}");
        }
    }

    #[test]
    fn cosine_is_exactly_symmetric() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a: Vec<f32> = (0..64).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let b: Vec<f32> = (0..64).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let a = l2_normalize(&a).unwrap();
            let b = l2_normalize(&b).unwrap();
            assert_eq!(
                cosine_sim(&a, &b).unwrap().to_bits(),
                cosine_sim(&b, &a).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn corpus_roundtrip_and_duplicate_ids() {
        let recs = vec![
            CorpusRecord {
                record_id: 0,
                url: "file:///a.png".into(),
                caption: "plain".into(),
                language: Some("en".into()),
                embedding_row: 0,
            },
            CorpusRecord {
                record_id: 1,
                url: "file:///b.png".into(),
                caption: "with, comma and \"quotes\"".into(),
                language: None,
                embedding_row: 1,
            },
        ];
        let path = tmpfile("corpus.csv");
        save_corpus(&recs, &path).unwrap();
        let back = load_corpus(&path).unwrap();
        assert_eq!(back, recs);

        let dup = vec![recs[0].clone(), recs[0].clone()];
        let path2 = tmpfile("corpus-dup.csv");
        save_corpus(&dup, &path2).unwrap();
        assert!(matches!(
            load_corpus(&path2),
            Err(Error::DuplicateRecordId(0))
        ));
    }
}
