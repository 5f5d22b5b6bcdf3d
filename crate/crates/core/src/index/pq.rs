//! Product quantization: per-sub-space codebooks, byte-code encoding, and
//! the asymmetric (table lookup) scorer used at query time.

use crate::error::{Error, Result};
use crate::index::kmeans::{self, Metric};

/// Centroids per sub-quantizer; fixed by the 8-bit code format.
pub const PQ_CENTROIDS: usize = 256;

/// Trained codebooks for `m` sub-quantizers over vectors of dimension `dim`.
/// Codebook entry `(s, c)` lives at `codebooks[(s * 256 + c) * dsub ..][..dsub]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PqCodebooks {
    pub m: usize,
    pub dim: usize,
    pub codebooks: Vec<f32>,
}

impl PqCodebooks {
    pub fn dsub(&self) -> usize {
        self.dim / self.m
    }

    pub fn entry(&self, sub: usize, code: usize) -> &[f32] {
        let dsub = self.dsub();
        let start = (sub * PQ_CENTROIDS + code) * dsub;
        &self.codebooks[start..start + dsub]
    }
}

/// Train one 256-entry codebook per sub-space with Euclidean k-means on the
/// raw (residual-free) sub-vectors. Sub-space `s` trains with seed
/// `seed + s + 1` so codebooks differ but stay reproducible.
pub fn train_codebooks(
    data: &[f32],
    dim: usize,
    m: usize,
    seed: u64,
    max_iter: usize,
) -> Result<PqCodebooks> {
    if m == 0 || !dim.is_multiple_of(m) {
        return Err(Error::DimensionNotDivisible { dim, m });
    }
    let n = data.len() / dim;
    if n < PQ_CENTROIDS {
        return Err(Error::TooFewPoints {
            points: n,
            required: PQ_CENTROIDS,
        });
    }
    let dsub = dim / m;
    let mut codebooks = Vec::with_capacity(m * PQ_CENTROIDS * dsub);
    for s in 0..m {
        let mut sub = Vec::with_capacity(n * dsub);
        for row in data.chunks_exact(dim) {
            sub.extend_from_slice(&row[s * dsub..(s + 1) * dsub]);
        }
        let res = kmeans::train(
            &sub,
            dsub,
            PQ_CENTROIDS,
            seed.wrapping_add(s as u64 + 1),
            max_iter,
            Metric::Euclidean,
        )?;
        codebooks.extend(res.centroids);
    }
    Ok(PqCodebooks { m, dim, codebooks })
}

/// Encode a vector as `m` code bytes (nearest codebook entry per sub-space,
/// ties to the smaller code).
pub fn encode(cb: &PqCodebooks, v: &[f32]) -> Vec<u8> {
    let dsub = cb.dsub();
    let mut codes = Vec::with_capacity(cb.m);
    for s in 0..cb.m {
        let sub = &v[s * dsub..(s + 1) * dsub];
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for c in 0..PQ_CENTROIDS {
            let entry = cb.entry(s, c);
            let mut d = 0f64;
            for i in 0..dsub {
                let diff = sub[i] as f64 - entry[i] as f64;
                d += diff * diff;
            }
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        codes.push(best as u8);
    }
    codes
}

/// Reconstruct the quantized vector from its codes. Test and debugging aid.
pub fn decode(cb: &PqCodebooks, codes: &[u8]) -> Vec<f32> {
    let mut out = Vec::with_capacity(cb.dim);
    for (s, &code) in codes.iter().enumerate() {
        out.extend_from_slice(cb.entry(s, code as usize));
    }
    out
}

/// ADC lookup table for one query: `m * 256` inner products between the
/// query's sub-vectors and every codebook entry.
pub fn adc_table(cb: &PqCodebooks, q: &[f32]) -> Vec<f32> {
    let dsub = cb.dsub();
    let mut table = Vec::with_capacity(cb.m * PQ_CENTROIDS);
    for s in 0..cb.m {
        let qsub = &q[s * dsub..(s + 1) * dsub];
        for c in 0..PQ_CENTROIDS {
            let entry = cb.entry(s, c);
            let mut acc = 0f64;
            for i in 0..dsub {
                acc += qsub[i] as f64 * entry[i] as f64;
            }
            table.push(acc as f32);
        }
    }
    table
}

/// Approximate inner product of the query against one coded vector: the sum
/// of `m` table lookups.
#[inline]
pub fn adc_score(table: &[f32], codes: &[u8]) -> f32 {
    let mut acc = 0f32;
    for (s, &code) in codes.iter().enumerate() {
        acc += table[s * PQ_CENTROIDS + code as usize];
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::l2_normalize;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_cloud(n: usize, dim: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(n * dim);
        for _ in 0..n {
            let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            data.extend(l2_normalize(&v).unwrap());
        }
        data
    }

    #[test]
    fn code_length_is_m() {
        let data = unit_cloud(600, 16, 40);
        let cb = train_codebooks(&data, 16, 4, 7, 15).unwrap();
        let codes = encode(&cb, &data[0..16]);
        assert_eq!(codes.len(), 4);
    }

    #[test]
    fn dimension_must_divide() {
        let data = unit_cloud(600, 10, 41);
        assert!(matches!(
            train_codebooks(&data, 10, 3, 7, 15),
            Err(Error::DimensionNotDivisible { dim: 10, m: 3 })
        ));
    }

    #[test]
    fn adc_equals_dot_against_reconstruction() {
        let data = unit_cloud(700, 32, 42);
        let cb = train_codebooks(&data, 32, 8, 3, 15).unwrap();
        let q = &data[0..32];
        let table = adc_table(&cb, q);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let i = rng.random_range(0..700);
            let v = &data[i * 32..(i + 1) * 32];
            let codes = encode(&cb, v);
            let via_table = adc_score(&table, &codes);
            let recon = decode(&cb, &codes);
            let mut direct = 0f64;
            for j in 0..32 {
                direct += q[j] as f64 * recon[j] as f64;
            }
            assert!(
                (via_table as f64 - direct).abs() < 1e-4,
                "table {via_table} direct {direct}"
            );
        }
    }

    #[test]
    fn quantization_error_is_two_sided() {
        let dim = 64;
        let data = unit_cloud(2000, dim, 4);
        let cb = train_codebooks(&data, dim, 8, 11, 20).unwrap();
        let queries = unit_cloud(20, dim, 5);
        let mut over = 0usize;
        let mut under = 0usize;
        let mut pairs = 0usize;
        for q in queries.chunks_exact(dim) {
            let table = adc_table(&cb, q);
            for v in data.chunks_exact(dim).take(100) {
                let codes = encode(&cb, v);
                let fast = adc_score(&table, &codes) as f64;
                let mut exact = 0f64;
                for j in 0..dim {
                    exact += q[j] as f64 * v[j] as f64;
                }
                if fast > exact {
                    over += 1;
                } else if fast < exact {
                    under += 1;
                }
                pairs += 1;
            }
        }
        assert!(pairs >= 1000);
        assert!(over > 0, "no overestimation in {pairs} pairs");
        assert!(under > 0, "no underestimation in {pairs} pairs");
    }
}
