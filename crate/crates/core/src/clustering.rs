//! Mechanism clustering: k-means over fitted latent parameters, and the
//! adjusted Rand index for scoring partitions.

use std::collections::{HashMap, HashSet};

use nalgebra::DMatrix;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::gppom::{FitOptions, FitResult};
use crate::inference::{fit_canonical, standardize};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self { restarts: 10, max_iters: 300, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    /// Cluster index per observation, in `1..=C`. Clusters are numbered by
    /// ascending centroid (lexicographic for q > 1).
    pub labels: Vec<usize>,
    /// C x q, row `c - 1` is the centroid of cluster `c`.
    pub centroids: DMatrix<f64>,
    /// Within-cluster sum of squares after each Lloyd iteration of the selected restart.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

impl ClusterResult {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds at least one value")
    }
}

fn sq_dist(points: &DMatrix<f64>, i: usize, centroids: &DMatrix<f64>, c: usize) -> f64 {
    (0..points.ncols())
        .map(|d| (points[(i, d)] - centroids[(c, d)]).powi(2))
        .sum()
}

/// Nearest-centroid assignment (lowest index wins ties), 0-based labels.
fn assign(points: &DMatrix<f64>, centroids: &DMatrix<f64>) -> Vec<usize> {
    (0..points.nrows())
        .map(|i| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..centroids.nrows() {
                let d = sq_dist(points, i, centroids, c);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty(points: &DMatrix<f64>, centroids: &DMatrix<f64>, labels: &mut [usize]) {
    let k = centroids.nrows();
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let mut far = None;
        let mut far_d = -1.0;
        for i in 0..points.nrows() {
            if counts[labels[i]] < 2 {
                continue;
            }
            let d = sq_dist(points, i, centroids, labels[i]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        match far {
            Some(i) => labels[i] = empty,
            None => return,
        }
    }
}

fn means(points: &DMatrix<f64>, labels: &[usize], k: usize) -> DMatrix<f64> {
    let q = points.ncols();
    let mut sums = DMatrix::<f64>::zeros(k, q);
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for d in 0..q {
            sums[(l, d)] += points[(i, d)];
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            for d in 0..q {
                sums[(c, d)] /= n as f64;
            }
        }
    }
    sums
}

fn within_ss(points: &DMatrix<f64>, labels: &[usize], centroids: &DMatrix<f64>) -> f64 {
    labels.iter().enumerate().map(|(i, &l)| sq_dist(points, i, centroids, l)).sum()
}

struct LloydRun {
    labels: Vec<usize>,
    centroids: DMatrix<f64>,
    trace: Vec<f64>,
    iterations: usize,
}

/// Initial centroid rows for each restart. A restart never repeats an
/// earlier restart's set of rows while unused sets remain.
fn initial_rows(n: usize, k: usize, restarts: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(restarts);
    for _ in 0..restarts {
        let mut rows = index::sample(&mut rng, n, k).into_vec();
        for _ in 0..MAX_REDRAWS {
            let mut key = rows.clone();
            key.sort_unstable();
            if seen.insert(key) {
                break;
            }
            rows = index::sample(&mut rng, n, k).into_vec();
        }
        out.push(rows);
    }
    out
}

const MAX_REDRAWS: usize = 64;

fn lloyd(points: &DMatrix<f64>, init: &[usize], max_iters: usize) -> LloydRun {
    let k = init.len();
    let mut centroids = DMatrix::from_fn(k, points.ncols(), |c, d| points[(init[c], d)]);

    let mut labels = assign(points, &centroids);
    repair_empty(points, &centroids, &mut labels);
    centroids = means(points, &labels, k);
    let mut trace = vec![within_ss(points, &labels, &centroids)];
    let mut iterations = 1;

    while iterations < max_iters {
        let mut next = assign(points, &centroids);
        repair_empty(points, &centroids, &mut next);
        if next == labels {
            break;
        }
        labels = next;
        centroids = means(points, &labels, k);
        trace.push(within_ss(points, &labels, &centroids));
        iterations += 1;
    }
    LloydRun { labels, centroids, trace, iterations }
}

/// Renumbers clusters by ascending centroid and converts labels to 1-based.
fn canonicalize(run: LloydRun) -> ClusterResult {
    let k = run.centroids.nrows();
    let q = run.centroids.ncols();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        (0..q)
            .map(|d| run.centroids[(a, d)].total_cmp(&run.centroids[(b, d)]))
            .find(|o| o.is_ne())
            .unwrap_or(a.cmp(&b))
    });
    let mut rank = vec![0; k];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
    }
    ClusterResult {
        labels: run.labels.iter().map(|&l| rank[l] + 1).collect(),
        centroids: DMatrix::from_fn(k, q, |r, d| run.centroids[(order[r], d)]),
        objective_trace: run.trace,
        iterations: run.iterations,
    }
}

/// Lloyd's k-means on the rows of `points` (N x q), best of `opts.restarts`
/// seeded restarts by final within-cluster sum of squares.
pub fn kmeans(points: &DMatrix<f64>, clusters: usize, opts: &KMeansOptions) -> Result<ClusterResult> {
    let n = points.nrows();
    if clusters == 0 || clusters > n {
        return Err(invalid(format!("cluster count must be in 1..={n}, got {clusters}")));
    }
    if points.ncols() == 0 {
        return Err(invalid("points need at least one coordinate"));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite point coordinate".into()));
    }
    if opts.restarts == 0 || opts.max_iters == 0 {
        return Err(invalid("k-means needs at least one restart and one iteration"));
    }
    let best = initial_rows(n, clusters, opts.restarts, opts.seed)
        .iter()
        .map(|init| lloyd(points, init, opts.max_iters))
        .reduce(|best, run| {
            let (b, r) = (best.trace.last().unwrap(), run.trace.last().unwrap());
            if r < b {
                run
            } else {
                best
            }
        })
        .expect("at least one restart");
    Ok(canonicalize(best))
}

/// Fits the latent parameters in the given `cause -> effect` direction and
/// clusters them. Labels follow input order.
pub fn cluster_mechanisms(
    cause: &[f64],
    effect: &[f64],
    lambda: f64,
    clusters: usize,
    fit_opts: &FitOptions,
    kmeans_opts: &KMeansOptions,
) -> Result<(ClusterResult, FitResult)> {
    if cause.len() != effect.len() {
        return Err(invalid(format!(
            "cause has {} values but effect has {}",
            cause.len(),
            effect.len()
        )));
    }
    if clusters == 0 {
        return Err(invalid("cluster count must be positive"));
    }
    let xs = standardize(cause)?.values;
    let ys = standardize(effect)?.values;
    let (fit, order) = fit_canonical(&xs, &ys, lambda, fit_opts)?;
    let sorted = kmeans(fit.state.theta(), clusters, kmeans_opts)?;
    let mut labels = vec![0; cause.len()];
    for (k, &row) in order.iter().enumerate() {
        labels[row] = sorted.labels[k];
    }
    Ok((ClusterResult { labels, ..sorted }, fit))
}

fn pairs(n: f64) -> f64 {
    n * (n - 1.0) / 2.0
}

/// True when the two labelings induce the same partition.
fn same_partition(a: &[usize], b: &[usize]) -> bool {
    let mut ab = HashMap::new();
    let mut ba = HashMap::new();
    a.iter().zip(b).all(|(x, y)| *ab.entry(x).or_insert(y) == y && *ba.entry(y).or_insert(x) == x)
}

/// Adjusted Rand index between two labelings of the same items.
///
/// When the chance-corrected denominator vanishes (both partitions trivial)
/// the index is 1 for identical partitions and undefined otherwise.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid(format!("label lengths differ: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(invalid("ARI needs at least two items"));
    }
    let mut table: HashMap<(usize, usize), usize> = HashMap::new();
    let mut rows: HashMap<usize, usize> = HashMap::new();
    let mut cols: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| pairs(c as f64)).sum();
    let sum_a: f64 = rows.values().map(|&c| pairs(c as f64)).sum();
    let sum_b: f64 = cols.values().map(|&c| pairs(c as f64)).sum();
    let expected = sum_a * sum_b / pairs(a.len() as f64);
    let max = 0.5 * (sum_a + sum_b);
    let denom = max - expected;
    if denom == 0.0 {
        return if same_partition(a, b) {
            Ok(1.0)
        } else {
            Err(Error::Numeric("ARI undefined: chance-corrected denominator is zero".into()))
        };
    }
    Ok((index - expected) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn separated_pairs() {
        let r = kmeans(&col(&[0.0, 0.1, 5.0, 5.1]), 2, &KMeansOptions::default()).unwrap();
        assert_eq!(r.labels, vec![1, 1, 2, 2]);
        assert!((r.centroids[(0, 0)] - 0.05).abs() < 1e-12);
        assert!((r.centroids[(1, 0)] - 5.05).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_is_global_mean() {
        let pts = [1.0, 2.0, 4.0, 9.0];
        let r = kmeans(&col(&pts), 1, &KMeansOptions::default()).unwrap();
        let mean = 4.0;
        let total: f64 = pts.iter().map(|p| (p - mean).powi(2)).sum();
        assert!(r.labels.iter().all(|&l| l == 1));
        assert!((r.centroids[(0, 0)] - mean).abs() < 1e-12);
        assert!((r.objective() - total).abs() < 1e-12);
    }

    #[test]
    fn too_many_clusters() {
        assert!(kmeans(&col(&[1.0, 2.0]), 3, &KMeansOptions::default()).is_err());
        assert!(kmeans(&col(&[1.0, 2.0]), 0, &KMeansOptions::default()).is_err());
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let r = kmeans(&col(&[1.0, 1.0, 1.0, 1.0, 2.0]), 3, &KMeansOptions::default()).unwrap();
        for c in 1..=3 {
            assert!(r.labels.contains(&c));
        }
    }

    #[test]
    fn repair_moves_farthest_point() {
        let pts = col(&[0.0, 1.0, 10.0]);
        let centroids = col(&[0.0, 100.0]);
        let mut labels = vec![0, 0, 0];
        repair_empty(&pts, &centroids, &mut labels);
        assert_eq!(labels, vec![0, 0, 1]);
    }

    #[test]
    fn ari_identical_and_permuted() {
        assert_eq!(adjusted_rand_index(&[1, 1, 2, 2, 3], &[1, 1, 2, 2, 3]).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[1, 1, 2, 2], &[2, 2, 1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn ari_contingency_example() {
        // table [[2,1,0],[0,1,2]]: index 2, row pairs 6, column pairs 3, total pairs 15
        let expected_index = 3.0 * 6.0 / 15.0;
        let oracle = (2.0 - expected_index) / (0.5 * (6.0 + 3.0) - expected_index);
        let v = adjusted_rand_index(&[1, 1, 1, 2, 2, 2], &[1, 1, 2, 2, 3, 3]).unwrap();
        assert!((v - oracle).abs() < 1e-12);
        assert!((v - 8.0 / 33.0).abs() < 1e-12);
    }

    #[test]
    fn ari_trivial_partitions() {
        assert_eq!(adjusted_rand_index(&[1, 1, 1], &[4, 4, 4]).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[1, 2, 3], &[3, 1, 2]).unwrap(), 1.0);
        assert!(adjusted_rand_index(&[1], &[1]).is_err());
        assert!(adjusted_rand_index(&[1, 2], &[1]).is_err());
    }
}
