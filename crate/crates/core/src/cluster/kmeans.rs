//! Seeded k-means++ with Lloyd iterations and a Hartigan refinement pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ClusterError;
use crate::exec::Execution;

pub const DEFAULT_MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    /// Cluster index per input vector.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squares after every update step.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl KMeansResult {
    pub fn objective(&self) -> f64 {
        *self.objective_history.last().expect("at least one iteration")
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.len()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Sum of squared distances from each point to its cluster's centroid.
pub fn wcss(points: &[Vec<f64>], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| squared_distance(p, &centroids[a]))
        .sum()
}

/// Nearest centroid; ties go to the lowest index.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn validate(points: &[Vec<f64>], k: usize) -> Result<usize, ClusterError> {
    if k == 0 || points.len() < k {
        return Err(ClusterError::InvalidK { k, n: points.len() });
    }
    let dim = points[0].len();
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(ClusterError::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    Ok(dim)
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut acc = 0.0;
            d2.iter()
                .position(|&d| {
                    acc += d;
                    acc > r
                })
                .unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("positive total"))
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn means(points: &[Vec<f64>], assignments: &[usize], k: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(p) {
            *s += x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|x| *x /= c as f64);
        }
    }
    (sums, counts)
}

/// Hartigan single-point moves: a point leaves its cluster when the exact
/// change in objective, `n_b/(n_b+1) d(x,c_b) - n_a/(n_a-1) d(x,c_a)`, is
/// negative. Every move strictly lowers the objective and a partition stable
/// under these moves is also stable under Lloyd. Returns the number of
/// passes that moved at least one point.
fn refine(points: &[Vec<f64>], assignments: &mut [usize], centroids: &mut [Vec<f64>], history: &mut Vec<f64>) -> usize {
    let k = centroids.len();
    let dim = centroids[0].len();
    let mut counts = vec![0usize; k];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    let mut passes = 0;
    loop {
        let mut moved = false;
        for (i, x) in points.iter().enumerate() {
            let a = assignments[i];
            if counts[a] < 2 {
                continue;
            }
            let na = counts[a] as f64;
            let removal = na / (na - 1.0) * squared_distance(x, &centroids[a]);
            let mut best: Option<(usize, f64)> = None;
            for b in (0..k).filter(|&b| b != a) {
                let nb = counts[b] as f64;
                let cost = nb / (nb + 1.0) * squared_distance(x, &centroids[b]);
                if best.is_none_or(|(_, c)| cost < c) {
                    best = Some((b, cost));
                }
            }
            let Some((b, cost)) = best else { continue };
            if cost < removal - 1e-12 * removal.max(1.0) {
                assignments[i] = b;
                counts[a] -= 1;
                counts[b] += 1;
                for j in [a, b] {
                    let members = assignments.iter().zip(points).filter(|(&m, _)| m == j);
                    let mut sum = vec![0.0; dim];
                    for (_, p) in members {
                        sum.iter_mut().zip(p).for_each(|(s, v)| *s += v);
                    }
                    sum.iter_mut().for_each(|s| *s /= counts[j] as f64);
                    centroids[j] = sum;
                }
                moved = true;
            }
        }
        if !moved {
            return passes;
        }
        passes += 1;
        history.push(wcss(points, assignments, centroids));
    }
}

/// One k-means run. Points are used as given (callers wanting cosine
/// geometry normalise first).
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iterations: usize,
    exec: Execution,
) -> Result<KMeansResult, ClusterError> {
    let dim = validate(points, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignments: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iterations.max(1) {
        iterations += 1;
        let next: Vec<usize> = exec.map(points, |p| nearest(p, &centroids).0);
        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;

        let (mut new_centroids, mut counts) = means(points, &assignments, k, dim);
        // An empty cluster takes the point farthest from its own centroid,
        // drawn only from clusters that can spare one.
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let far = (0..points.len())
                .filter(|&i| counts[assignments[i]] > 1)
                .map(|i| (i, squared_distance(&points[i], &new_centroids[assignments[i]])))
                .fold(None::<(usize, f64)>, |best, (i, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                })
                .map(|(i, _)| i)
                .expect("n >= k leaves a cluster with two points");
            counts[assignments[far]] -= 1;
            assignments[far] = j;
            counts[j] = 1;
            new_centroids[j] = points[far].clone();
        }
        debug_assert!(counts.iter().all(|&c| c > 0));
        centroids = means(points, &assignments, k, dim).0;
        let objective = wcss(points, &assignments, &centroids);
        let stalled = history.last().is_some_and(|&prev| objective >= prev);
        history.push(objective);
        // Duplicate points can bounce between a tied centroid and a reseeded
        // empty cluster without lowering the objective; refinement takes over.
        if stalled {
            converged = true;
            break;
        }
    }
    if history.is_empty() {
        history.push(wcss(points, &assignments, &centroids));
    }
    let passes = refine(points, &mut assignments, &mut centroids, &mut history);
    iterations += passes;
    Ok(KMeansResult {
        assignments,
        centroids,
        objective_history: history,
        iterations,
        converged,
    })
}

/// Best of `restarts` runs (seeds `seed`, `seed + 1`, ...) by final
/// objective; ties keep the earlier run.
pub fn kmeans_best_of(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    restarts: usize,
    max_iterations: usize,
    exec: Execution,
) -> Result<KMeansResult, ClusterError> {
    let mut best: Option<KMeansResult> = None;
    for r in 0..restarts.max(1) as u64 {
        let run = kmeans(points, k, seed.wrapping_add(r), max_iterations, exec)?;
        if best.as_ref().is_none_or(|b| run.objective() < b.objective()) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}
