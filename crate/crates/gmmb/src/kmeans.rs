//! Lloyd's k-means with k-means++ seeding, used only to initialize the ECM.

use nalgebra::DMatrix;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub within_ss: f64,
}

/// Best-of-`n_starts` k-means partition of the rows of `data` into `k`
/// clusters. Starts that collapse a cluster are discarded; errors only if
/// every start does.
pub fn kmeans(data: &DMatrix<f64>, k: usize, n_starts: usize, seed: u64) -> Result<KMeansResult> {
    let n = data.nrows();
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "cannot form {k} clusters from {n} observations"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..n_starts.max(1) {
        if let Some(run) = single_run(data, k, &mut rng) {
            if best.as_ref().map_or(true, |b| run.within_ss < b.within_ss) {
                best = Some(run);
            }
        }
    }
    best.ok_or(Error::EmptyClusterInit)
}

fn single_run(data: &DMatrix<f64>, k: usize, rng: &mut impl Rng) -> Option<KMeansResult> {
    let n = data.nrows();
    let d = data.ncols();

    // k-means++ seeding
    let mut centers = DMatrix::zeros(k, d);
    let first = rng.gen_range(0..n);
    centers.row_mut(0).copy_from(&data.row(first));
    let mut dist2: Vec<f64> = (0..n).map(|i| row_dist2(data, i, &centers, 0)).collect();
    for c in 1..k {
        let total: f64 = dist2.iter().sum();
        let idx = if total > 0.0 {
            WeightedIndex::new(&dist2).ok()?.sample(rng)
        } else {
            rng.gen_range(0..n)
        };
        centers.row_mut(c).copy_from(&data.row(idx));
        for i in 0..n {
            dist2[i] = dist2[i].min(row_dist2(data, i, &centers, c));
        }
    }

    let mut labels = vec![0usize; n];
    for _ in 0..100 {
        let mut changed = false;
        for i in 0..n {
            let mut best_k = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let dd = row_dist2(data, i, &centers, c);
                if dd < best_d {
                    best_d = dd;
                    best_k = c;
                }
            }
            if labels[i] != best_k {
                labels[i] = best_k;
                changed = true;
            }
        }
        let mut counts = vec![0usize; k];
        let mut sums: DMatrix<f64> = DMatrix::zeros(k, d);
        for i in 0..n {
            counts[labels[i]] += 1;
            for j in 0..d {
                sums[(labels[i], j)] += data[(i, j)];
            }
        }
        if counts.iter().any(|&c| c == 0) {
            return None;
        }
        for c in 0..k {
            for j in 0..d {
                centers[(c, j)] = sums[(c, j)] / counts[c] as f64;
            }
        }
        if !changed {
            break;
        }
    }

    let within_ss = (0..n).map(|i| row_dist2(data, i, &centers, labels[i])).sum();
    Some(KMeansResult { labels, within_ss })
}

#[inline]
fn row_dist2(data: &DMatrix<f64>, i: usize, centers: &DMatrix<f64>, c: usize) -> f64 {
    let mut s = 0.0;
    for j in 0..data.ncols() {
        let diff = data[(i, j)] - centers[(c, j)];
        s += diff * diff;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_two_obvious_clusters() {
        let mut rows = Vec::new();
        for i in 0..20 {
            rows.push(if i < 10 { 0.0 + i as f64 * 0.01 } else { 10.0 + i as f64 * 0.01 });
        }
        let data = DMatrix::from_column_slice(20, 1, &rows);
        let r = kmeans(&data, 2, 5, 42).unwrap();
        let first = r.labels[0];
        assert!(r.labels[..10].iter().all(|&l| l == first));
        assert!(r.labels[10..].iter().all(|&l| l != first));
    }

    #[test]
    fn identical_rows_cannot_fill_two_clusters() {
        let data = DMatrix::from_element(8, 2, 3.5);
        assert!(matches!(kmeans(&data, 2, 5, 1), Err(Error::EmptyClusterInit)));
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let data = DMatrix::from_fn(30, 2, |i, j| ((i * 7 + j * 3) % 13) as f64);
        let a = kmeans(&data, 3, 5, 9).unwrap();
        let b = kmeans(&data, 3, 5, 9).unwrap();
        assert_eq!(a.labels, b.labels);
    }
}
