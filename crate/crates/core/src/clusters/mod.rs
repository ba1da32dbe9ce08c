//! Spherical k-means over topic embeddings plus the tooling around it:
//! cluster-count diagnostics, the largest/smallest review sampler and
//! model-generated cluster names.

mod diagnostics;
mod naming;
mod review;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use diagnostics::{elbow_curve, silhouette};
pub use naming::{
    build_naming_prompt, name_all_clusters, name_cluster, ClusterName, NameSource, NAMING_BUDGET,
    NAMING_MARKER,
};
pub use review::{review_sample, ReviewSet, REVIEW_QUEUE_LEN};

use crate::gateway::GatewayError;
use crate::par::Exec;
use crate::vecmath::{dot, normalize_in_place, total_cmp};

pub type ClusterId = usize;

pub const DEFAULT_MAX_ITER: usize = 300;

/// Slack allowed when checking that inertia never increases; covers
/// floating-point reassociation in centroid sums.
pub const INERTIA_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("k = {k} exceeds the number of distinct vectors ({distinct})")]
    Infeasible { k: usize, distinct: usize },
    #[error("vectors have inconsistent dimensions")]
    Dimension,
    #[error("silhouette is undefined for fewer than two clusters")]
    SilhouetteUndefined,
    #[error("assignments length {assignments} does not match {vectors} vectors")]
    Misaligned { assignments: usize, vectors: usize },
    #[error("no topics to name")]
    EmptyCluster,
    #[error("cluster naming failed: {0}")]
    Naming(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    #[serde(skip)]
    pub exec: Exec,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansParams {
            k,
            seed,
            max_iter: DEFAULT_MAX_ITER,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    pub seed: u64,
    /// Cluster of each input vector, aligned with the input order.
    pub assignments: Vec<ClusterId>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations_run: usize,
    /// Objective after each assignment step.
    #[serde(default)]
    pub inertia_trace: Vec<f64>,
    pub converged: bool,
}

impl Clustering {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    /// Input indices per cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.k];
        for (i, &a) in self.assignments.iter().enumerate() {
            m[a].push(i);
        }
        m
    }
}

/// Index of the most cosine-similar centroid (lowest id on ties) and the
/// similarity.
fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let s = dot(x, c);
        if s > best.1 {
            best = (j, s);
        }
    }
    best
}

struct Prepared {
    /// Unit vectors in canonical (lexicographic) order.
    points: Vec<Vec<f64>>,
    /// `order[c]` is the input index of canonical point `c`.
    order: Vec<usize>,
    /// Distinct-vector group of each canonical point.
    group: Vec<usize>,
    distinct: usize,
}

fn prepare<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Prepared, ClusterError> {
    let dim = vectors.first().map(|v| v.as_ref().len()).unwrap_or(0);
    if vectors.iter().any(|v| v.as_ref().len() != dim) {
        return Err(ClusterError::Dimension);
    }
    let normalized: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| {
            let mut v = v.as_ref().to_vec();
            normalize_in_place(&mut v);
            v
        })
        .collect();
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    order.sort_by(|&a, &b| total_cmp(&normalized[a], &normalized[b]).then(a.cmp(&b)));
    let points: Vec<Vec<f64>> = order.iter().map(|&i| normalized[i].clone()).collect();
    let mut group = Vec::with_capacity(points.len());
    let mut distinct = 0;
    for (c, p) in points.iter().enumerate() {
        if c == 0 || total_cmp(&points[c - 1], p) != std::cmp::Ordering::Equal {
            distinct += 1;
        }
        group.push(distinct - 1);
    }
    Ok(Prepared {
        points,
        order,
        group,
        distinct,
    })
}

/// k-means++ seeding under the cosine geometry: candidates are drawn with
/// probability proportional to `1 - max cos` to the chosen centers, which is
/// half the squared Euclidean distance between unit vectors.
fn seed_centroids(p: &Prepared, k: usize, rng: &mut ChaCha8Rng, exec: Exec) -> Vec<Vec<f64>> {
    let n = p.points.len();
    let mut chosen_group = vec![false; p.distinct];
    let first = rng.random_range(0..n);
    chosen_group[p.group[first]] = true;
    let mut centroids = vec![p.points[first].clone()];
    let mut best_sim = exec.map(&p.points, |x| dot(x, &centroids[0]));
    while centroids.len() < k {
        let weights: Vec<f64> = (0..n)
            .map(|i| {
                if chosen_group[p.group[i]] {
                    0.0
                } else {
                    (1.0 - best_sim[i]).max(0.0)
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, w) in weights.iter().enumerate() {
                if *w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > r {
                    break;
                }
            }
            pick.expect("positive total has a positive weight")
        } else {
            (0..n)
                .find(|&i| !chosen_group[p.group[i]])
                .expect("k <= distinct vectors")
        };
        chosen_group[p.group[pick]] = true;
        let c = p.points[pick].clone();
        let sims = exec.map(&p.points, |x| dot(x, &c));
        for (b, s) in best_sim.iter_mut().zip(sims) {
            if s > *b {
                *b = s;
            }
        }
        centroids.push(c);
    }
    centroids
}

fn update_centroids(
    points: &[Vec<f64>],
    assign: &[usize],
    previous: &[Vec<f64>],
    exec: Exec,
) -> Vec<Vec<f64>> {
    let k = previous.len();
    let dim = points[0].len();
    let mut members = vec![Vec::new(); k];
    for (i, &a) in assign.iter().enumerate() {
        members[a].push(i);
    }
    exec.map_range(k, |j| {
        if members[j].is_empty() {
            return previous[j].clone();
        }
        let mut sum = vec![0.0; dim];
        for &i in &members[j] {
            for (s, x) in sum.iter_mut().zip(&points[i]) {
                *s += x;
            }
        }
        if normalize_in_place(&mut sum) {
            sum
        } else {
            previous[j].clone()
        }
    })
}

/// Gives every empty cluster the point least similar to its own centroid,
/// taken from clusters that have more than one member.
fn repair_empty(
    points: &[Vec<f64>],
    assign: &mut [usize],
    sims: &mut [f64],
    centroids: &mut [Vec<f64>],
) -> usize {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    for &a in assign.iter() {
        sizes[a] += 1;
    }
    let mut repaired = 0;
    for j in 0..k {
        if sizes[j] > 0 {
            continue;
        }
        let mut victim: Option<usize> = None;
        for i in 0..points.len() {
            if sizes[assign[i]] <= 1 {
                continue;
            }
            if victim.is_none_or(|v| sims[i] < sims[v]) {
                victim = Some(i);
            }
        }
        let Some(v) = victim else { break };
        sizes[assign[v]] -= 1;
        sizes[j] += 1;
        assign[v] = j;
        sims[v] = 1.0;
        centroids[j] = points[v].clone();
        repaired += 1;
    }
    repaired
}

/// Spherical k-means with k-means++ seeding.
///
/// Inputs are normalized and processed in a canonical order, so the
/// partition depends only on the multiset of vectors, `k` and `seed`.
pub fn kmeans<V: AsRef<[f64]>>(vectors: &[V], params: &KMeansParams) -> Result<Clustering, ClusterError> {
    let k = params.k;
    if k == 0 {
        return Err(ClusterError::ZeroK);
    }
    let p = prepare(vectors)?;
    if k > p.distinct {
        return Err(ClusterError::Infeasible {
            k,
            distinct: p.distinct,
        });
    }
    let exec = params.exec;
    let n = p.points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = seed_centroids(&p, k, &mut rng, exec);

    let mut assign: Vec<usize> = vec![usize::MAX; n];
    let mut sims = vec![0.0; n];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations_run = 0;
    for _ in 0..params.max_iter.max(1) {
        iterations_run += 1;
        let step = exec.map(&p.points, |x| nearest(x, &centroids));
        let inertia: f64 = step.iter().map(|(_, s)| 1.0 - s).sum();
        if let Some(&prev) = trace.last() {
            debug_assert!(
                inertia <= prev + INERTIA_TOLERANCE,
                "inertia increased: {prev} -> {inertia}"
            );
        }
        trace.push(inertia);
        let changed = step.iter().zip(&assign).any(|((a, _), b)| a != b);
        for (i, (a, s)) in step.into_iter().enumerate() {
            assign[i] = a;
            sims[i] = s;
        }
        if !changed {
            converged = true;
            break;
        }
        centroids = update_centroids(&p.points, &assign, &centroids, exec);
        for (i, x) in p.points.iter().enumerate() {
            sims[i] = dot(x, &centroids[assign[i]]);
        }
        repair_empty(&p.points, &mut assign, &mut sims, &mut centroids);
    }

    let inertia = if converged {
        *trace.last().expect("at least one iteration")
    } else {
        let final_inertia: f64 = (0..n).map(|i| 1.0 - dot(&p.points[i], &centroids[assign[i]])).sum();
        trace.push(final_inertia);
        final_inertia
    };

    let mut assignments = vec![0; n];
    for (c, &orig) in p.order.iter().enumerate() {
        assignments[orig] = assign[c];
    }
    Ok(Clustering {
        k,
        seed: params.seed,
        assignments,
        centroids,
        inertia,
        iterations_run,
        inertia_trace: trace,
        converged,
    })
}

#[cfg(test)]
pub(crate) mod testutil {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use crate::vecmath::normalize_in_place;

    /// Unit vectors scattered tightly around `centers` (which should be
    /// mutually near-orthogonal). Returns vectors and true labels.
    pub fn blobs(centers: usize, per: usize, dim: usize, spread: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        let mut labels = Vec::new();
        for c in 0..centers {
            for _ in 0..per {
                let mut v: Vec<f64> = (0..dim)
                    .map(|_| {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        spread * g
                    })
                    .collect();
                v[c] += 1.0;
                normalize_in_place(&mut v);
                out.push(v);
                labels.push(c);
            }
        }
        (out, labels)
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::blobs;
    use super::*;
    use crate::vecmath::cosine;
    use proptest::prelude::*;

    fn same_partition(a: &[usize], b: &[usize]) -> bool {
        let n = a.len();
        (0..n).all(|i| (0..n).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
    }

    #[test]
    fn k1_centroid_is_normalized_mean() {
        let v = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]];
        let c = kmeans(&v, &KMeansParams::new(1, 9)).unwrap();
        let mut mean = vec![1.6, 1.8];
        normalize_in_place(&mut mean);
        assert!(c.assignments.iter().all(|&a| a == 0));
        assert!((c.centroids[0][0] - mean[0]).abs() < 1e-12);
        assert!((c.centroids[0][1] - mean[1]).abs() < 1e-12);
        let expected: f64 = v.iter().map(|x| 1.0 - cosine(x, &mean)).sum();
        assert!((c.inertia - expected).abs() < 1e-12);
    }

    #[test]
    fn recovers_blobs() {
        let (v, labels) = blobs(3, 20, 8, 0.05, 1);
        let c = kmeans(&v, &KMeansParams::new(3, 4)).unwrap();
        assert!(same_partition(&c.assignments, &labels));
        assert!(c.converged);
    }

    #[test]
    fn infeasible_k() {
        let v = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0], vec![1.0, 0.0]];
        assert!(matches!(
            kmeans(&v, &KMeansParams::new(5, 0)),
            Err(ClusterError::Infeasible { k: 5, distinct: 4 })
        ));
        assert!(matches!(kmeans(&v, &KMeansParams::new(0, 0)), Err(ClusterError::ZeroK)));
        assert!(kmeans(&v, &KMeansParams::new(4, 0)).is_ok());
    }

    #[test]
    fn no_empty_clusters_and_inertia_identity() {
        let (v, _) = blobs(4, 10, 6, 0.4, 2);
        for seed in 0..10 {
            let c = kmeans(&v, &KMeansParams::new(7, seed)).unwrap();
            assert!(c.sizes().iter().all(|&s| s > 0));
            let recomputed: f64 = v
                .iter()
                .zip(&c.assignments)
                .map(|(x, &a)| 1.0 - cosine(x, &c.centroids[a]))
                .sum();
            assert!((c.inertia - recomputed).abs() < 1e-9);
            for w in c.inertia_trace.windows(2) {
                assert!(w[1] <= w[0] + INERTIA_TOLERANCE);
            }
            for cen in &c.centroids {
                assert!((crate::vecmath::norm(cen) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn converged_points_sit_at_their_argmax() {
        let (v, _) = blobs(3, 15, 5, 0.3, 3);
        let c = kmeans(&v, &KMeansParams::new(4, 11)).unwrap();
        assert!(c.converged);
        for (x, &a) in v.iter().zip(&c.assignments) {
            assert_eq!(nearest(x, &c.centroids).0, a);
        }
    }

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let (v, _) = blobs(3, 30, 10, 0.3, 4);
        let mut p = KMeansParams::new(5, 2);
        p.exec = Exec::Parallel;
        let a = kmeans(&v, &p).unwrap();
        p.exec = Exec::Sequential;
        let b = kmeans(&v, &p).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn permutation_changes_only_labels(seed in 0u64..1000, shift in 1usize..40) {
            let (v, _) = blobs(3, 14, 6, 0.5, seed);
            let params = KMeansParams::new(4, seed);
            let a = kmeans(&v, &params).unwrap();
            let mut rotated = v.clone();
            rotated.rotate_left(shift);
            let b = kmeans(&rotated, &params).unwrap();
            let mut b_back = b.assignments.clone();
            b_back.rotate_right(shift);
            prop_assert!(same_partition(&a.assignments, &b_back));
        }
    }
}
