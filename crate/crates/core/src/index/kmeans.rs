//! Seeded k-means with k-means++ initialization, Lloyd iterations, and
//! farthest-point re-seeding of empty clusters.
//!
//! Two assignment metrics: spherical (max inner product against unit
//! centroids, used for the coarse quantizer over unit vectors) and Euclidean
//! (used for PQ sub-space codebooks). Results are bit-deterministic for a
//! fixed seed regardless of the rayon worker count: assignments are computed
//! in parallel but reduced in index order.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Max inner product; centroids are re-normalized to unit length after
    /// every update.
    Spherical,
    /// Min squared Euclidean distance; centroids are plain means.
    Euclidean,
}

#[derive(Debug, Clone)]
pub struct KmeansResult {
    /// Row-major k x dim centroid matrix.
    pub centroids: Vec<f32>,
    /// Cluster id per input point.
    pub assignments: Vec<u32>,
    /// Sum of squared Euclidean distances to assigned centroids.
    pub inertia: f64,
    pub iterations: usize,
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0f64;
    for i in 0..a.len() {
        let d = a[i] as f64 - b[i] as f64;
        acc += d * d;
    }
    acc
}

fn dot64(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0f64;
    for i in 0..a.len() {
        acc += a[i] as f64 * b[i] as f64;
    }
    acc
}

/// Index of the best centroid for one point: highest inner product
/// (spherical) or smallest squared distance (Euclidean). Ties resolve to the
/// smaller centroid index.
fn nearest(point: &[f32], centroids: &[f32], dim: usize, metric: Metric) -> u32 {
    let mut best = 0u32;
    let mut best_score = f64::NEG_INFINITY;
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let score = match metric {
            Metric::Spherical => dot64(point, centroid),
            Metric::Euclidean => -sq_dist(point, centroid),
        };
        if score > best_score {
            best_score = score;
            best = c as u32;
        }
    }
    best
}

fn kmeans_plus_plus_init(data: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = data.len() / dim;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&data[first * dim..(first + 1) * dim]);

    // Squared distance to the closest chosen centroid so far.
    let mut min_d2: Vec<f64> = data
        .chunks_exact(dim)
        .map(|p| sq_dist(p, &centroids[0..dim]))
        .collect();

    for _ in 1..k {
        let total: f64 = min_d2.iter().sum();
        let chosen = if total <= 0.0 {
            // All mass on already-chosen points; fall back to uniform.
            rng.random_range(0..n)
        } else {
            let threshold = rng.random::<f64>() * total;
            let mut acc = 0f64;
            let mut picked = n - 1;
            for (i, w) in min_d2.iter().enumerate() {
                acc += w;
                if acc >= threshold {
                    picked = i;
                    break;
                }
            }
            picked
        };
        let start = centroids.len();
        centroids.extend_from_slice(&data[chosen * dim..(chosen + 1) * dim]);
        let newc = &centroids[start..start + dim];
        for (i, p) in data.chunks_exact(dim).enumerate() {
            let d2 = sq_dist(p, newc);
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
        }
    }
    centroids
}

fn normalize_centroid(c: &mut [f32]) -> bool {
    let norm = dot64(c, c).sqrt();
    if norm <= 1e-12 {
        return false;
    }
    for x in c.iter_mut() {
        *x = (*x as f64 / norm) as f32;
    }
    true
}

/// Train k centroids over `n = data.len()/dim` points.
///
/// Runs k-means++ init then Lloyd until assignments stop changing or
/// `max_iter` is reached. Empty clusters are re-seeded with the point
/// farthest from its current centroid.
pub fn train(
    data: &[f32],
    dim: usize,
    k: usize,
    seed: u64,
    max_iter: usize,
    metric: Metric,
) -> Result<KmeansResult> {
    let n = data.len() / dim;
    if k == 0 {
        return Err(Error::InvalidParams("k must be positive".into()));
    }
    if n < k {
        return Err(Error::TooFewPoints {
            points: n,
            required: k,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus_init(data, dim, k, &mut rng);
    if metric == Metric::Spherical {
        for c in centroids.chunks_exact_mut(dim) {
            normalize_centroid(c);
        }
    }

    let mut assignments = vec![u32::MAX; n];
    let mut iterations = 0;

    for iter in 0..max_iter {
        iterations = iter + 1;
        let new_assignments: Vec<u32> = data
            .par_chunks_exact(dim)
            .map(|p| nearest(p, &centroids, dim, metric))
            .collect();

        let changed = new_assignments != assignments;
        assignments = new_assignments;

        // Means accumulated serially in point order so the result does not
        // depend on the thread count.
        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0u64; k];
        for (i, p) in data.chunks_exact(dim).enumerate() {
            let c = assignments[i] as usize;
            counts[c] += 1;
            let dst = &mut sums[c * dim..(c + 1) * dim];
            for (s, v) in dst.iter_mut().zip(p) {
                *s += *v as f64;
            }
        }

        let mut empties: Vec<usize> = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 0)
            .map(|(i, _)| i)
            .collect();

        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let dst = &mut centroids[c * dim..(c + 1) * dim];
            for (x, s) in dst.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                *x = (s / counts[c] as f64) as f32;
            }
            if metric == Metric::Spherical && !normalize_centroid(dst) {
                empties.push(c);
            }
        }

        // Re-seed each empty cluster with the point currently farthest from
        // its own centroid; smallest index wins ties, and a point is stolen
        // at most once per round.
        let repaired = !empties.is_empty();
        if repaired {
            empties.sort_unstable();
            empties.dedup();
            let mut stolen = vec![false; n];
            for c in empties {
                let mut far_i = usize::MAX;
                let mut far_d = f64::NEG_INFINITY;
                for (i, p) in data.chunks_exact(dim).enumerate() {
                    if stolen[i] {
                        continue;
                    }
                    let own = assignments[i] as usize;
                    let d = sq_dist(p, &centroids[own * dim..(own + 1) * dim]);
                    if d > far_d {
                        far_d = d;
                        far_i = i;
                    }
                }
                if far_i == usize::MAX {
                    continue;
                }
                stolen[far_i] = true;
                let dst = &mut centroids[c * dim..(c + 1) * dim];
                dst.copy_from_slice(&data[far_i * dim..(far_i + 1) * dim]);
                if metric == Metric::Spherical {
                    normalize_centroid(dst);
                }
                assignments[far_i] = c as u32;
            }
        }

        if !changed && !repaired && iter > 0 {
            break;
        }
    }

    let inertia: f64 = data
        .chunks_exact(dim)
        .enumerate()
        .map(|(i, p)| {
            let c = assignments[i] as usize;
            sq_dist(p, &centroids[c * dim..(c + 1) * dim])
        })
        .sum();

    Ok(KmeansResult {
        centroids,
        assignments,
        inertia,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::l2_normalize;
    use rand::Rng;

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
    fn k_equals_count_recovers_points() {
        let data = unit_cloud(8, 16, 3);
        let res = train(&data, 16, 8, 42, 25, Metric::Spherical).unwrap();
        assert!(res.inertia < 1e-10, "inertia {}", res.inertia);
        // Every point must coincide with its assigned centroid.
        for (i, p) in data.chunks_exact(16).enumerate() {
            let c = res.assignments[i] as usize;
            let d = sq_dist(p, &res.centroids[c * 16..(c + 1) * 16]);
            assert!(d < 1e-12, "point {i} is {d} away");
        }
    }

    #[test]
    fn two_blobs_are_separated() {
        let dim = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m1 = l2_normalize(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let m2 = l2_normalize(&[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..400 {
            let mean = if i % 2 == 0 { &m1 } else { &m2 };
            labels.push(i % 2);
            let v: Vec<f32> = mean
                .iter()
                .map(|x| x + rng.random_range(-0.05f32..0.05))
                .collect();
            data.extend(l2_normalize(&v).unwrap());
        }
        let res = train(&data, dim, 2, 9, 25, Metric::Spherical).unwrap();

        // Each centroid within 0.1 of a blob mean.
        let c0 = &res.centroids[0..dim];
        let c1 = &res.centroids[dim..2 * dim];
        let d00 = sq_dist(c0, &m1).sqrt();
        let d01 = sq_dist(c0, &m2).sqrt();
        let (c_for_m1, d_m1) = if d00 < d01 { (0u32, d00) } else { (1u32, d01) };
        let d1 = sq_dist(c1, if c_for_m1 == 0 { &m2 } else { &m1 }).sqrt();
        assert!(d_m1 < 0.1 && d1 < 0.1, "centroid distances {d_m1} {d1}");

        // Assignment purity >= 99%.
        let pure = labels
            .iter()
            .enumerate()
            .filter(|(i, &lab)| {
                let assigned_blob = if res.assignments[*i] == c_for_m1 {
                    0
                } else {
                    1
                };
                assigned_blob == lab
            })
            .count();
        assert!(
            pure as f64 / labels.len() as f64 >= 0.99,
            "purity {pure}/400"
        );
    }

    #[test]
    fn fixed_seed_is_bit_deterministic() {
        let data = unit_cloud(300, 12, 8);
        let a = train(&data, 12, 10, 1234, 25, Metric::Spherical).unwrap();
        let b = train(&data, 12, 10, 1234, 25, Metric::Spherical).unwrap();
        assert_eq!(a.assignments, b.assignments);
        let abits: Vec<u32> = a.centroids.iter().map(|x| x.to_bits()).collect();
        let bbits: Vec<u32> = b.centroids.iter().map(|x| x.to_bits()).collect();
        assert_eq!(abits, bbits);
    }

    #[test]
    fn too_few_points_is_an_error() {
        let data = unit_cloud(3, 4, 1);
        assert!(matches!(
            train(&data, 4, 5, 0, 10, Metric::Spherical),
            Err(Error::TooFewPoints {
                points: 3,
                required: 5
            })
        ));
    }

    #[test]
    fn euclidean_metric_clusters_subvectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut data = Vec::new();
        for _ in 0..500 {
            data.push(rng.random_range(-1.0f32..1.0));
            data.push(rng.random_range(-1.0f32..1.0));
        }
        let res = train(&data, 2, 16, 77, 25, Metric::Euclidean).unwrap();
        assert_eq!(res.centroids.len(), 32);
        // No cluster may end empty.
        let mut counts = vec![0usize; 16];
        for a in &res.assignments {
            counts[*a as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0), "counts {counts:?}");
    }
}
