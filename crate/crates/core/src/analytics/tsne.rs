//! Exact t-SNE (O(n^2) per iteration).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::AnalyticsError;
use crate::par::Exec;
use crate::vecmath::{cosine, squared_distance};

/// Smallest probability used inside logarithms.
const P_FLOOR: f64 = 1e-12;

/// Input-space dissimilarity fed to the Gaussian kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    /// `1 - cos`.
    Cosine,
    SquaredEuclidean,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Cosine => 1.0 - cosine(a, b),
            Metric::SquaredEuclidean => squared_distance(a, b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneParams {
    pub perplexity: f64,
    pub seed: u64,
    pub iterations: usize,
    /// `None` scales with the point count: `max(n / exaggeration / 4, 50)`.
    pub learning_rate: Option<f64>,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub metric: Metric,
    /// Tolerance on the entropy of each conditional distribution (nats).
    pub entropy_tolerance: f64,
    pub max_search_steps: usize,
    #[serde(skip)]
    pub exec: Exec,
}

impl TsneParams {
    pub fn new(perplexity: f64, seed: u64) -> Self {
        TsneParams {
            perplexity,
            seed,
            iterations: 1000,
            learning_rate: None,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            metric: Metric::Cosine,
            entropy_tolerance: 1e-5,
            max_search_steps: 200,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneResult {
    pub points: Vec<[f64; 2]>,
    /// Sum of each conditional distribution `p_{j|i}`.
    pub row_sums: Vec<f64>,
    /// Achieved `ln(perplexity)` per point.
    pub log_perplexities: Vec<f64>,
    /// Sum of the symmetrized joint `P`.
    pub joint_sum: f64,
    pub initial_kl: f64,
    pub final_kl: f64,
}

/// Conditional distribution of one row at precision `beta`, and its
/// entropy in nats.
fn conditional_row(d: &[f64], i: usize, beta: f64) -> (Vec<f64>, f64) {
    let dmin = d
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &x)| x)
        .fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = d
        .iter()
        .enumerate()
        .map(|(j, &x)| if j == i { 0.0 } else { (-(x - dmin) * beta).exp() })
        .collect();
    let sum: f64 = p.iter().sum();
    let weighted: f64 = p.iter().zip(d).map(|(pj, &x)| pj * (x - dmin)).sum();
    let h = sum.ln() + beta * weighted / sum;
    p.iter_mut().for_each(|x| *x /= sum);
    (p, h)
}

/// Binary search on the Gaussian precision so the row entropy hits
/// `ln(perplexity)`.
fn calibrate_row(d: &[f64], i: usize, target: f64, tol: f64, steps: usize) -> (Vec<f64>, f64) {
    let mut beta = 1.0;
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let (mut p, mut h) = conditional_row(d, i, beta);
    for _ in 0..steps {
        let diff = h - target;
        if diff.abs() <= tol {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
        (p, h) = conditional_row(d, i, beta);
    }
    (p, h)
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.max(P_FLOOR) / qi.max(P_FLOOR)).ln())
        .sum()
}

/// Student-t affinities: unnormalized kernel matrix (row-major) and its sum.
fn student_t(y: &[[f64; 2]], exec: Exec) -> (Vec<f64>, f64) {
    let n = y.len();
    let rows = exec.map_range(n, |i| {
        (0..n)
            .map(|j| {
                if i == j {
                    0.0
                } else {
                    let dx = y[i][0] - y[j][0];
                    let dy = y[i][1] - y[j][1];
                    1.0 / (1.0 + dx * dx + dy * dy)
                }
            })
            .collect::<Vec<f64>>()
    });
    let z: f64 = rows.iter().map(|r| r.iter().sum::<f64>()).sum();
    (rows.concat(), z)
}

fn current_kl(p: &[f64], y: &[[f64; 2]], exec: Exec) -> f64 {
    let (num, z) = student_t(y, exec);
    let q: Vec<f64> = num.iter().map(|x| x / z).collect();
    kl(p, &q)
}

/// Embeds `vectors` in the plane.
pub fn tsne<V: AsRef<[f64]> + Sync>(vectors: &[V], params: &TsneParams) -> Result<TsneResult, AnalyticsError> {
    let n = vectors.len();
    let exec = params.exec;
    if n < 3 {
        return Err(AnalyticsError::Parameter(format!("t-SNE needs at least 3 points, got {n}")));
    }
    let perp = params.perplexity;
    if perp.is_nan() || perp < 1.0 || perp >= n as f64 {
        return Err(AnalyticsError::Parameter(format!(
            "perplexity {perp} must be at least 1 and below the number of points ({n})"
        )));
    }
    if perp > (n - 1) as f64 {
        return Err(AnalyticsError::Parameter(format!(
            "perplexity {perp} cannot be reached with {n} points (maximum {})",
            n - 1
        )));
    }
    let dim = vectors[0].as_ref().len();
    if vectors.iter().any(|v| v.as_ref().len() != dim) {
        return Err(AnalyticsError::Parameter("vectors have inconsistent dimensions".into()));
    }

    let target = perp.ln();
    let rows = exec.map_range(n, |i| {
        let d: Vec<f64> = (0..n)
            .map(|j| params.metric.distance(vectors[i].as_ref(), vectors[j].as_ref()))
            .collect();
        calibrate_row(&d, i, target, params.entropy_tolerance, params.max_search_steps)
    });
    let row_sums: Vec<f64> = rows.iter().map(|(p, _)| p.iter().sum()).collect();
    let log_perplexities: Vec<f64> = rows.iter().map(|(_, h)| *h).collect();

    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (rows[i].0[j] + rows[j].0[i]) / (2.0 * n as f64);
        }
    }
    let joint_sum: f64 = p.iter().sum();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let initial_kl = current_kl(&p, &y, exec);

    let eta = params
        .learning_rate
        .unwrap_or_else(|| (n as f64 / params.early_exaggeration / 4.0).max(50.0));
    let mut update = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    for it in 0..params.iterations {
        let early = it < params.exaggeration_iters;
        let exag = if early { params.early_exaggeration } else { 1.0 };
        let momentum = if early { 0.5 } else { 0.8 };
        let (num, z) = student_t(&y, exec);
        let grads = exec.map_range(n, |i| {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i * n + j];
                let coef = (exag * p[i * n + j] - w / z) * w;
                g[0] += coef * (y[i][0] - y[j][0]);
                g[1] += coef * (y[i][1] - y[j][1]);
            }
            [4.0 * g[0], 4.0 * g[1]]
        });
        for i in 0..n {
            for a in 0..2 {
                let g = grads[i][a];
                gains[i][a] = if (g > 0.0) != (update[i][a] > 0.0) {
                    gains[i][a] + 0.2
                } else {
                    (gains[i][a] * 0.8).max(0.01)
                };
                update[i][a] = momentum * update[i][a] - eta * gains[i][a] * g;
                y[i][a] += update[i][a];
            }
        }
        let mean = [
            y.iter().map(|p| p[0]).sum::<f64>() / n as f64,
            y.iter().map(|p| p[1]).sum::<f64>() / n as f64,
        ];
        for p in &mut y {
            p[0] -= mean[0];
            p[1] -= mean[1];
        }
    }
    let final_kl = current_kl(&p, &y, exec);
    Ok(TsneResult {
        points: y,
        row_sums,
        log_perplexities,
        joint_sum,
        initial_kl,
        final_kl,
    })
}

/// Rank-based neighbourhood preservation in [0, 1]:
/// `1 - 2 / (n k (2n - 3k - 1)) * sum_i sum_{j in U_i} (r(i, j) - k)`, where
/// `U_i` holds the embedding-space k-nearest neighbours of `i` that are not
/// among its input-space k-nearest neighbours and `r(i, j)` is the
/// input-space rank of `j`. Requires `k < n / 2`.
pub fn trustworthiness<V: AsRef<[f64]>>(
    input: &[V],
    embedded: &[[f64; 2]],
    k: usize,
    metric: Metric,
) -> Result<f64, AnalyticsError> {
    let n = input.len();
    if embedded.len() != n {
        return Err(AnalyticsError::Parameter("input and embedding sizes differ".into()));
    }
    if k == 0 || 2 * k >= n {
        return Err(AnalyticsError::Parameter(format!("k = {k} must satisfy 0 < k < n/2 (n = {n})")));
    }
    let ranked = |dist: &dyn Fn(usize) -> f64, i: usize| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        idx.sort_by(|&a, &b| dist(a).total_cmp(&dist(b)).then(a.cmp(&b)));
        idx
    };
    let mut penalty = 0.0;
    for i in 0..n {
        let in_order = ranked(&|j| metric.distance(input[i].as_ref(), input[j].as_ref()), i);
        let mut rank = vec![0usize; n];
        for (r, &j) in in_order.iter().enumerate() {
            rank[j] = r + 1;
        }
        let out_order = ranked(
            &|j| {
                let dx = embedded[i][0] - embedded[j][0];
                let dy = embedded[i][1] - embedded[j][1];
                dx * dx + dy * dy
            },
            i,
        );
        for &j in &out_order[..k] {
            if rank[j] > k {
                penalty += (rank[j] - k) as f64;
            }
        }
    }
    let (nf, kf) = (n as f64, k as f64);
    Ok(1.0 - 2.0 / (nf * kf * (2.0 * nf - 3.0 * kf - 1.0)) * penalty)
}
