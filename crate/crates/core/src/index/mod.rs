//! Approximate k-nearest-neighbor search over unit embeddings: a k-means
//! coarse quantizer with inverted lists, stored entries either as full
//! vectors (IVF-Flat) or as product-quantization codes scored by table
//! lookups (IVF-PQ), plus an exact brute-force scan used as the oracle.

pub mod kmeans;
pub mod pq;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::embed::{dot, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::index::pq::PqCodebooks;

/// Magic bytes of the serialized index file.
pub const INDEX_MAGIC: &[u8; 4] = b"AIVF";
/// Current version of the index file format.
pub const INDEX_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct IndexParams {
    /// Coarse centroid count.
    pub nlist: usize,
    /// Lists scanned per query.
    pub nprobe: usize,
    pub pq_enabled: bool,
    /// Sub-quantizer count; must divide the embedding dimension.
    pub m: usize,
    /// Bits per sub-quantizer code; only 8 is supported.
    pub bits: u8,
    pub seed: u64,
    pub kmeans_max_iter: usize,
}

impl IndexParams {
    /// Desk-scale defaults: nlist = ceil(sqrt(n)), nprobe = max(1, nlist/8),
    /// m = dim/8.
    pub fn desk_scale(n: usize, dim: usize, pq_enabled: bool, seed: u64) -> Self {
        let nlist = (n as f64).sqrt().ceil().max(1.0) as usize;
        IndexParams {
            nlist,
            nprobe: (nlist / 8).max(1),
            pq_enabled,
            m: (dim / 8).max(1),
            bits: 8,
            seed,
            kmeans_max_iter: 25,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.nlist == 0 {
            return Err(Error::InvalidParams("nlist must be positive".into()));
        }
        if self.nprobe == 0 || self.nprobe > self.nlist {
            return Err(Error::InvalidParams(format!(
                "nprobe {} must be in 1..={}",
                self.nprobe, self.nlist
            )));
        }
        if self.bits != 8 {
            return Err(Error::InvalidParams(
                "only 8-bit PQ codes are supported".into(),
            ));
        }
        if self.pq_enabled && (self.m == 0 || !dim.is_multiple_of(self.m)) {
            return Err(Error::DimensionNotDivisible { dim, m: self.m });
        }
        if self.kmeans_max_iter == 0 {
            return Err(Error::InvalidParams(
                "kmeans_max_iter must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-list entry payload: full vectors for IVF-Flat, code bytes for IVF-PQ.
#[derive(Debug, Clone, PartialEq)]
enum ListPayload {
    Flat(Vec<f32>),
    Codes(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
struct InvertedList {
    ids: Vec<u64>,
    payload: ListPayload,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IvfIndex {
    params: IndexParams,
    dim: usize,
    /// nlist unit-direction centroids, row-major.
    centroids: Vec<f32>,
    lists: Vec<InvertedList>,
    codebooks: Option<PqCodebooks>,
    count: usize,
}

/// One search result. Hits sort by fast similarity descending, ties broken
/// by the smaller record id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchHit {
    pub record_id: u64,
    pub fast_similarity: f32,
    /// 1-based position in the result list.
    pub rank: u32,
}

fn sort_hits(hits: &mut [(u64, f32)]) {
    hits.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("similarities are finite")
            .then_with(|| a.0.cmp(&b.0))
    });
}

fn to_ranked(hits: Vec<(u64, f32)>, k: usize) -> Vec<SearchHit> {
    hits.into_iter()
        .take(k)
        .enumerate()
        .map(|(i, (record_id, fast_similarity))| SearchHit {
            record_id,
            fast_similarity,
            rank: (i + 1) as u32,
        })
        .collect()
}

/// Train the coarse quantizer and fill the inverted lists.
///
/// Every row is assigned to the centroid with the highest inner product.
/// With `pq_enabled`, sub-space codebooks are trained on the raw sub-vectors
/// and each row is stored as `m` code bytes; otherwise rows are stored
/// verbatim.
pub fn build_index(matrix: &EmbeddingMatrix, params: &IndexParams) -> Result<IvfIndex> {
    params.validate(matrix.dim())?;
    let n = matrix.count();
    if n < params.nlist {
        return Err(Error::TooFewPoints {
            points: n,
            required: params.nlist,
        });
    }
    let dim = matrix.dim();

    let coarse = kmeans::train(
        matrix.data(),
        dim,
        params.nlist,
        params.seed,
        params.kmeans_max_iter,
        kmeans::Metric::Spherical,
    )?;

    let codebooks = if params.pq_enabled {
        Some(pq::train_codebooks(
            matrix.data(),
            dim,
            params.m,
            params.seed,
            params.kmeans_max_iter,
        )?)
    } else {
        None
    };

    let mut lists: Vec<InvertedList> = (0..params.nlist)
        .map(|_| InvertedList {
            ids: Vec::new(),
            payload: if params.pq_enabled {
                ListPayload::Codes(Vec::new())
            } else {
                ListPayload::Flat(Vec::new())
            },
        })
        .collect();

    for (i, row) in matrix.rows().enumerate() {
        // Assignment by inner product against the final centroids, not the
        // k-means assignment, so stored lists match query-time scoring.
        let mut best = 0usize;
        let mut best_sim = f64::NEG_INFINITY;
        for (c, centroid) in coarse.centroids.chunks_exact(dim).enumerate() {
            let sim = dot(row, centroid);
            if sim > best_sim {
                best_sim = sim;
                best = c;
            }
        }
        let list = &mut lists[best];
        list.ids.push(i as u64);
        match &mut list.payload {
            ListPayload::Flat(v) => v.extend_from_slice(row),
            ListPayload::Codes(codes) => codes.extend(pq::encode(codebooks.as_ref().unwrap(), row)),
        }
    }

    Ok(IvfIndex {
        params: params.clone(),
        dim,
        centroids: coarse.centroids,
        lists,
        codebooks,
        count: n,
    })
}

impl IvfIndex {
    pub fn params(&self) -> &IndexParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    pub fn list_sizes(&self) -> Vec<usize> {
        self.lists.iter().map(|l| l.ids.len()).collect()
    }

    /// All indexed record ids, one list at a time.
    pub fn indexed_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.lists.iter().flat_map(|l| l.ids.iter().copied())
    }

    /// Scan the `nprobe` lists whose centroids score highest against `q` and
    /// return the top `k` hits. With `nprobe` overridden to `nlist` and flat
    /// storage, this is exhaustive and matches `brute_force_topk` exactly.
    pub fn query(&self, q: &[f32], k: usize) -> Result<Vec<SearchHit>> {
        self.query_with_nprobe(q, k, self.params.nprobe)
    }

    pub fn query_with_nprobe(&self, q: &[f32], k: usize, nprobe: usize) -> Result<Vec<SearchHit>> {
        if self.count == 0 {
            return Err(Error::EmptyIndex);
        }
        if q.len() != self.dim {
            return Err(Error::DimensionMismatch {
                left: q.len(),
                right: self.dim,
            });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let nprobe = nprobe.min(self.params.nlist).max(1);

        let mut by_centroid: Vec<(usize, f64)> = self
            .centroids
            .chunks_exact(self.dim)
            .map(|c| dot(q, c))
            .enumerate()
            .collect();
        by_centroid.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("finite")
                .then_with(|| a.0.cmp(&b.0))
        });

        let table = self.codebooks.as_ref().map(|cb| pq::adc_table(cb, q));

        let mut hits: Vec<(u64, f32)> = Vec::new();
        for &(list_idx, _) in by_centroid.iter().take(nprobe) {
            let list = &self.lists[list_idx];
            match &list.payload {
                ListPayload::Flat(vectors) => {
                    for (slot, &id) in list.ids.iter().enumerate() {
                        let v = &vectors[slot * self.dim..(slot + 1) * self.dim];
                        hits.push((id, dot(v, q) as f32));
                    }
                }
                ListPayload::Codes(codes) => {
                    let table = table.as_ref().expect("codebooks present for coded lists");
                    let m = self.params.m;
                    for (slot, &id) in list.ids.iter().enumerate() {
                        let code = &codes[slot * m..(slot + 1) * m];
                        hits.push((id, pq::adc_score(table, code)));
                    }
                }
            }
        }
        sort_hits(&mut hits);
        Ok(to_ranked(hits, k))
    }

    /// Serialize to the `AIVF` container. Byte-deterministic.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);

        w.write_all(INDEX_MAGIC).map_err(io)?;
        w.write_all(&INDEX_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.dim as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.params.nlist as u32).to_le_bytes())
            .map_err(io)?;
        w.write_all(&(self.params.nprobe as u32).to_le_bytes())
            .map_err(io)?;
        w.write_all(&[self.params.pq_enabled as u8]).map_err(io)?;
        w.write_all(&(self.params.m as u32).to_le_bytes())
            .map_err(io)?;
        w.write_all(&[self.params.bits]).map_err(io)?;
        w.write_all(&self.params.seed.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.params.kmeans_max_iter as u32).to_le_bytes())
            .map_err(io)?;
        w.write_all(&(self.count as u64).to_le_bytes())
            .map_err(io)?;

        for v in &self.centroids {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        if let Some(cb) = &self.codebooks {
            for v in &cb.codebooks {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        for list in &self.lists {
            w.write_all(&(list.ids.len() as u64).to_le_bytes())
                .map_err(io)?;
            for id in &list.ids {
                w.write_all(&id.to_le_bytes()).map_err(io)?;
            }
            match &list.payload {
                ListPayload::Flat(vectors) => {
                    for v in vectors {
                        w.write_all(&v.to_le_bytes()).map_err(io)?;
                    }
                }
                ListPayload::Codes(codes) => w.write_all(codes).map_err(io)?,
            }
        }
        w.flush().map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<IvfIndex> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        let mut cur = Cursor {
            bytes: &bytes,
            pos: 0,
            path,
        };

        let magic = cur.take(4)?;
        if magic != INDEX_MAGIC {
            return Err(Error::BadMagic {
                path: path.into(),
                expected: "AIVF",
            });
        }
        let version = cur.u16()?;
        if version != INDEX_VERSION {
            return Err(Error::VersionUnsupported {
                path: path.into(),
                version,
            });
        }
        let dim = cur.u32()? as usize;
        let nlist = cur.u32()? as usize;
        let nprobe = cur.u32()? as usize;
        let pq_enabled = cur.u8()? != 0;
        let m = cur.u32()? as usize;
        let bits = cur.u8()?;
        let seed = cur.u64()?;
        let kmeans_max_iter = cur.u32()? as usize;
        let count = cur.u64()? as usize;

        let params = IndexParams {
            nlist,
            nprobe,
            pq_enabled,
            m,
            bits,
            seed,
            kmeans_max_iter,
        };
        if dim == 0 {
            return Err(Error::InvalidInput(format!(
                "{}: zero dimension",
                path.display()
            )));
        }
        params.validate(dim)?;

        let centroids = cur.f32s(nlist * dim)?;
        let codebooks = if pq_enabled {
            let dsub = dim / m;
            Some(PqCodebooks {
                m,
                dim,
                codebooks: cur.f32s(m * pq::PQ_CENTROIDS * dsub)?,
            })
        } else {
            None
        };

        let mut lists = Vec::with_capacity(nlist);
        let mut total = 0usize;
        for _ in 0..nlist {
            let len = cur.u64()? as usize;
            total += len;
            let mut ids = Vec::with_capacity(len);
            for _ in 0..len {
                ids.push(cur.u64()?);
            }
            let payload = if pq_enabled {
                ListPayload::Codes(cur.take(len * m)?.to_vec())
            } else {
                ListPayload::Flat(cur.f32s(len * dim)?)
            };
            lists.push(InvertedList { ids, payload });
        }
        if total != count {
            return Err(Error::InvalidInput(format!(
                "{}: header count {count} but lists hold {total}",
                path.display()
            )));
        }
        if cur.pos != bytes.len() {
            return Err(Error::InvalidInput(format!(
                "{}: {} trailing bytes",
                path.display(),
                bytes.len() - cur.pos
            )));
        }
        Ok(IvfIndex {
            params,
            dim,
            centroids,
            lists,
            codebooks,
            count,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::TruncatedFile {
                path: self.path.into(),
                needed: (self.pos + n) as u64,
                got: self.bytes.len() as u64,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Exact top-k by inner product against every row; the reference the
/// approximate index is judged against. Same sort and tie rule as `query`.
pub fn brute_force_topk(matrix: &EmbeddingMatrix, q: &[f32], k: usize) -> Result<Vec<SearchHit>> {
    if matrix.count() == 0 {
        return Err(Error::EmptyIndex);
    }
    if q.len() != matrix.dim() {
        return Err(Error::DimensionMismatch {
            left: q.len(),
            right: matrix.dim(),
        });
    }
    let mut hits: Vec<(u64, f32)> = matrix
        .rows()
        .enumerate()
        .map(|(i, row)| (i as u64, dot(row, q) as f32))
        .collect();
    sort_hits(&mut hits);
    Ok(to_ranked(hits, k))
}

/// Fraction of the reference ids present in the approximate result.
pub fn recall_at_k(approx: &[SearchHit], exact: &[SearchHit]) -> f64 {
    if exact.is_empty() {
        return 1.0;
    }
    let reference: std::collections::HashSet<u64> = exact.iter().map(|h| h.record_id).collect();
    let found = approx
        .iter()
        .filter(|h| reference.contains(&h.record_id))
        .count();
    found as f64 / reference.len() as f64
}
