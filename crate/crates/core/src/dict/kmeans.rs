use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 100;
pub const INERTIA_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct KMeans {
    /// Each centroid is the mean of the points assigned to it.
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Inertia after every assignment step, starting with the seeding.
    pub inertia_trace: Vec<f64>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid (lowest index on ties) and squared distance.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = dist2(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>], out: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (a, p) in out.iter_mut().zip(points) {
        let (j, d) = nearest(p, centroids);
        *a = j;
        inertia += d;
    }
    inertia
}

fn seed_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = d.len() - 1;
            for (i, &di) in d.iter().enumerate() {
                if target < di {
                    pick = i;
                    break;
                }
                target -= di;
            }
            pick
        } else {
            // every point already coincides with a centroid
            rng.random_range(0..points.len())
        };
        centroids.push(points[next].clone());
        for (di, p) in d.iter_mut().zip(points) {
            *di = di.min(dist2(p, &points[next]));
        }
    }
    centroids
}

/// Recomputes means; empty clusters move to the point farthest from its own
/// centroid. Returns how many clusters were reseeded.
fn update(points: &[Vec<f64>], assignments: &mut [usize], centroids: &mut [Vec<f64>]) -> usize {
    let dim = points[0].len();
    let k = centroids.len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments.iter()) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    let mut reseeded = 0;
    for j in 0..k {
        if counts[j] == 0 {
            let mut far = (0, -1.0);
            for (i, p) in points.iter().enumerate() {
                let d = dist2(p, &centroids[assignments[i]]);
                if d > far.1 && counts[assignments[i]] > 1 {
                    far = (i, d);
                }
            }
            let (i, _) = far;
            if far.1 < 0.0 {
                continue;
            }
            let old = assignments[i];
            counts[old] -= 1;
            for (s, v) in sums[old].iter_mut().zip(&points[i]) {
                *s -= v;
            }
            assignments[i] = j;
            counts[j] = 1;
            sums[j] = points[i].clone();
            reseeded += 1;
        }
    }
    for j in 0..k {
        if counts[j] > 0 {
            centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
        }
    }
    reseeded
}

/// k-means++ seeding followed by Lloyd iterations until the inertia improves
/// by less than 1e-6 or 100 iterations pass.
pub fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be >= 1".into()));
    }
    if points.len() < k {
        return Err(Error::CorpusTooSmall { points: points.len(), k });
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("coefficient vectors differ in length".into()));
    }
    let mut centroids = seed_plus_plus(points, k, rng);
    let mut assignments = vec![0; points.len()];
    let mut trace = vec![assign(points, &centroids, &mut assignments)];
    for _ in 0..MAX_ITERATIONS {
        update(points, &mut assignments, &mut centroids);
        let inertia = assign(points, &centroids, &mut assignments);
        let prev = *trace.last().unwrap();
        trace.push(inertia);
        if prev - inertia < INERTIA_TOL {
            break;
        }
    }
    // final means of the final assignment
    update(points, &mut assignments, &mut centroids);
    Ok(KMeans {
        centroids,
        assignments,
        inertia_trace: trace,
    })
}
