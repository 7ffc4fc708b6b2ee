use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::Codebook;
use crate::error::{Error, Result};

const REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct KmeansResult {
    pub codebook: Codebook,
    /// Mean squared distance to the nearest centroid: after seeding, then
    /// after every accepted Lloyd iteration.
    pub distortions: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn assign(data: &[f64], dim: usize, centroids: &[f64]) -> (Vec<usize>, Vec<f64>) {
    data.par_chunks_exact(dim)
        .map(|v| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, c) in centroids.chunks_exact(dim).enumerate() {
                let d = sq_dist(v, c);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            (best, best_d)
        })
        .unzip()
}

fn seed_plus_plus(data: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = data.len() / dim;
    let point = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    let mut centroids = point(first).to_vec();
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(point(i), point(first))).collect();
    while centroids.len() < k * dim {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // every remaining point duplicates a centroid
            Err(_) => (0..n).find(|&i| !chosen[i]).expect("n >= k"),
        };
        chosen[next] = true;
        centroids.extend_from_slice(point(next));
        let c = point(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(point(i), c));
        }
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding on `N x dim` row-major data.
/// An iteration that would raise the distortion is rejected and ends the
/// run, so the recorded history never increases.
pub fn kmeans_train(
    data: &[f64],
    dim: usize,
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<KmeansResult> {
    if dim == 0 || k == 0 || data.len() % dim != 0 {
        return Err(Error::invalid(
            "k-means needs dim > 0, K > 0 and whole vectors",
        ));
    }
    let n = data.len() / dim;
    if n < k {
        return Err(Error::invalid(format!(
            "k-means needs at least K = {k} vectors, got {n}"
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite k-means training vector".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(data, dim, k, &mut rng);
    let (mut labels, mut dists) = assign(data, dim, &centroids);
    let mut distortion = dists.iter().sum::<f64>() / n as f64;
    let mut history = vec![distortion];

    for _ in 0..max_iters {
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums[l * dim..(l + 1) * dim]
                .iter_mut()
                .zip(&data[i * dim..(i + 1) * dim])
            {
                *s += v;
            }
        }
        let mut next = centroids.clone();
        let mut taken = dists.clone();
        for c in 0..k {
            if counts[c] > 0 {
                for d in 0..dim {
                    next[c * dim + d] = sums[c * dim + d] / counts[c] as f64;
                }
            } else {
                let far = (0..n)
                    .max_by(|&a, &b| taken[a].total_cmp(&taken[b]).then(b.cmp(&a)))
                    .expect("n > 0");
                taken[far] = 0.0;
                next[c * dim..(c + 1) * dim].copy_from_slice(&data[far * dim..(far + 1) * dim]);
            }
        }
        let (next_labels, next_dists) = assign(data, dim, &next);
        let next_distortion = next_dists.iter().sum::<f64>() / n as f64;
        if next_distortion > distortion {
            break;
        }
        centroids = next;
        labels = next_labels;
        dists = next_dists;
        history.push(next_distortion);
        let done = distortion - next_distortion <= REL_TOL * distortion;
        distortion = next_distortion;
        if done {
            break;
        }
    }
    Ok(KmeansResult {
        codebook: Codebook::new(dim, centroids)?,
        distortions: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_equals_n_recovers_points() {
        let data = vec![0.0, 1.0, 5.0, 5.0, -3.0, 2.0];
        let r = kmeans_train(&data, 2, 3, 10, 1).unwrap();
        assert_eq!(*r.distortions.last().unwrap(), 0.0);
        let mut got: Vec<Vec<f64>> = r.codebook.centroids.chunks(2).map(|c| c.to_vec()).collect();
        got.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(got, vec![vec![-3.0, 2.0], vec![0.0, 1.0], vec![5.0, 5.0]]);
    }

    #[test]
    fn single_cluster_is_mean() {
        let data = vec![1.0, 2.0, 4.0, 9.0];
        let r = kmeans_train(&data, 1, 1, 10, 3).unwrap();
        assert!((r.codebook.centroids[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_vectors() {
        assert!(kmeans_train(&[1.0, 2.0], 1, 3, 10, 0).is_err());
    }

    #[test]
    fn duplicates_do_not_break_seeding() {
        let data = vec![1.0; 10];
        let r = kmeans_train(&data, 1, 4, 10, 0).unwrap();
        assert_eq!(r.codebook.size(), 4);
        assert_eq!(*r.distortions.last().unwrap(), 0.0);
    }

    #[test]
    fn distortion_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..3000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = kmeans_train(&data, 3, 32, 50, 2).unwrap();
        assert!(r.distortions.len() > 2);
        for w in r.distortions.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }
}
