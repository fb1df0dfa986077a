//! Lloyd's k-means with k-means++ seeding, used to group beam hypotheses by
//! their mean token embedding.

use crate::rng::RngState;

const MAX_ITERS: usize = 20;
const MOVE_TOL: f64 = 1e-6;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Assign `points` to `k` clusters and return one cluster index per point.
///
/// Seeding is k-means++ from the given seed; iteration stops after 20
/// rounds or when no centroid moves more than 1e-6. A cluster that ends up
/// empty is re-seeded to the point farthest from its current centroid
/// (best effort: with fewer distinct points than clusters some clusters
/// stay empty). When there are fewer points than clusters, every point
/// simply becomes its own cluster.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<usize> {
    assert!(k >= 1, "cluster count must be at least 1");
    if points.is_empty() {
        return Vec::new();
    }
    if points.len() <= k {
        return (0..points.len()).collect();
    }
    let dim = points[0].len();
    let mut rng = RngState::new(seed);

    // k-means++ seeding
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.index(points.len())].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.index(points.len())
        } else {
            let mut target = rng.next_f64() * total;
            let mut chosen = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        };
        centroids.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            let d = sq_dist(p, centroids.last().unwrap());
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }

    let mut assignment = vec![0usize; points.len()];
    for _ in 0..MAX_ITERS {
        for (i, p) in points.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = sq_dist(p, &centroids[0]);
            for (c, centroid) in centroids.iter().enumerate().skip(1) {
                let d = sq_dist(p, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assignment[i] = best;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[assignment[i]] += 1;
            for (s, v) in sums[assignment[i]].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }

        // Re-seed empty clusters to the farthest point from its assigned centroid.
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let mut far_i = 0usize;
            let mut far_d = -1.0;
            for (i, p) in points.iter().enumerate() {
                let d = sq_dist(p, &centroids[assignment[i]]);
                if d > far_d {
                    far_d = d;
                    far_i = i;
                }
            }
            if far_d <= 0.0 {
                continue; // all points coincide with their centroids
            }
            sums[c] = points[far_i].clone();
            counts[c] = 1;
            assignment[far_i] = c;
        }

        let mut max_move = 0.0f64;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            let mut moved = 0.0;
            for (centroid_v, s) in centroids[c].iter_mut().zip(sums[c].iter()) {
                let newv = s * inv;
                moved += (newv - *centroid_v) * (newv - *centroid_v);
                *centroid_v = newv;
            }
            max_move = max_move.max(moved.sqrt());
        }
        if max_move < MOVE_TOL {
            break;
        }
    }

    // Final assignment against the converged centroids.
    for (i, p) in points.iter().enumerate() {
        let mut best = 0usize;
        let mut best_d = sq_dist(p, &centroids[0]);
        for (c, centroid) in centroids.iter().enumerate().skip(1) {
            let d = sq_dist(p, centroid);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        assignment[i] = best;
    }
    assignment
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k1_puts_everything_together() {
        let points = vec![vec![0.0, 0.0], vec![5.0, 5.0], vec![-3.0, 1.0]];
        let a = kmeans(&points, 1, 0);
        assert!(a.iter().all(|&c| c == 0));
    }

    #[test]
    fn recovers_two_separated_blobs() {
        let mut rng = RngState::new(4);
        let mut points = Vec::new();
        for _ in 0..10 {
            points.push(vec![rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)]);
        }
        for _ in 0..10 {
            points.push(vec![100.0 + rng.uniform(-0.1, 0.1), 100.0 + rng.uniform(-0.1, 0.1)]);
        }
        let a = kmeans(&points, 2, 9);
        let first = a[0];
        assert!(a[..10].iter().all(|&c| c == first));
        assert!(a[10..].iter().all(|&c| c != first));
    }

    #[test]
    fn k_equals_n_gives_singletons() {
        let points = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let a = kmeans(&points, 4, 1);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 4);
    }

    #[test]
    fn fewer_points_than_clusters_degenerates_to_singletons() {
        let points = vec![vec![0.0], vec![9.0]];
        let a = kmeans(&points, 5, 1);
        assert_eq!(a, vec![0, 1]);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let mut rng = RngState::new(8);
        let points: Vec<Vec<f64>> =
            (0..30).map(|_| vec![rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)]).collect();
        assert_eq!(kmeans(&points, 3, 42), kmeans(&points, 3, 42));
    }

    #[test]
    fn identical_points_do_not_loop_forever() {
        let points = vec![vec![1.0, 1.0]; 6];
        let a = kmeans(&points, 3, 0);
        assert_eq!(a.len(), 6);
    }
}
