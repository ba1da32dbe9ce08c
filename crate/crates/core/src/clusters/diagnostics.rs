use super::{kmeans, ClusterError, KMeansParams};
use crate::par::Exec;
use crate::vecmath::cosine;

/// Converged inertia for each `k`, all runs seeded with `seed`.
pub fn elbow_curve<V: AsRef<[f64]> + Sync>(
    vectors: &[V],
    k_values: &[usize],
    seed: u64,
    max_iter: usize,
    exec: Exec,
) -> Result<Vec<(usize, f64)>, ClusterError> {
    exec.try_map(k_values, |&k| {
        let params = KMeansParams {
            k,
            seed,
            max_iter,
            exec: Exec::Sequential,
        };
        kmeans(vectors, &params).map(|c| (k, c.inertia))
    })
}

/// Mean silhouette with distance `1 - cos`.
///
/// Points in singleton clusters score 0, and `0/0` is taken as 0.
pub fn silhouette<V: AsRef<[f64]> + Sync>(
    vectors: &[V],
    labels: &[usize],
    exec: Exec,
) -> Result<f64, ClusterError> {
    if labels.len() != vectors.len() {
        return Err(ClusterError::Misaligned {
            assignments: labels.len(),
            vectors: vectors.len(),
        });
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(ClusterError::SilhouetteUndefined);
    }
    let scores = exec.map_range(vectors.len(), |i| {
        let own = labels[i];
        if sizes[own] <= 1 {
            return 0.0;
        }
        let mut sums = vec![0.0; k];
        for (j, v) in vectors.iter().enumerate() {
            if j != i {
                sums[labels[j]] += 1.0 - cosine(vectors[i].as_ref(), v.as_ref());
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom <= 0.0 {
            0.0
        } else {
            (b - a) / denom
        }
    });
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::blobs;
    use super::*;
    use crate::vecmath::cosine;

    #[test]
    fn elbow_decreases_on_blobs() {
        let (v, _) = blobs(3, 20, 6, 0.05, 8);
        let curve = elbow_curve(&v, &[1, 2, 3], 5, 300, Exec::default()).unwrap();
        assert_eq!(curve.iter().map(|c| c.0).collect::<Vec<_>>(), [1, 2, 3]);
        assert!(curve[0].1 > curve[1].1 && curve[1].1 > curve[2].1);
        assert!(elbow_curve(&v, &[], 5, 300, Exec::default()).unwrap().is_empty());
    }

    #[test]
    fn elbow_degenerate_single_vector() {
        let v = vec![vec![0.0, 1.0]; 5];
        let curve = elbow_curve(&v, &[1], 0, 300, Exec::default()).unwrap();
        assert_eq!(curve, [(1, 0.0)]);
    }

    #[test]
    fn separated_pairs_score_high() {
        let v = vec![
            vec![1.0, 0.0],
            vec![0.995, 0.0998749],
            vec![0.0, 1.0],
            vec![0.0998749, 0.995],
        ];
        let s = silhouette(&v, &[0, 0, 1, 1], Exec::default()).unwrap();
        // Hand computation: a = 1 - cos(small angle) ~ 0.005, b ~ 1 - 0.05 avg.
        let a = 1.0 - cosine(&v[0], &v[1]);
        let b0 = ((1.0 - cosine(&v[0], &v[2])) + (1.0 - cosine(&v[0], &v[3]))) / 2.0;
        assert!(b0 > 0.9 && a < 0.01);
        assert!(s > 0.9, "{s}");
    }

    #[test]
    fn identical_points_score_zero() {
        let v = vec![vec![1.0, 0.0]; 4];
        assert_eq!(silhouette(&v, &[0, 0, 1, 1], Exec::default()).unwrap(), 0.0);
    }

    #[test]
    fn single_cluster_undefined() {
        let v = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(matches!(
            silhouette(&v, &[0, 0], Exec::default()),
            Err(ClusterError::SilhouetteUndefined)
        ));
    }
}
