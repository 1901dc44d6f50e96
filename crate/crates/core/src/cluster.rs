//! k-means clustering, silhouette scoring, automatic k selection, and the
//! soft clustering head (Student's-t assignments Q, sharpened targets P,
//! KL clustering loss) used during joint training.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_RESTARTS: usize = 10;
pub const MAX_LLOYD_ITERATIONS: usize = 300;
pub const DEFAULT_K_MIN: usize = 2;
pub const DEFAULT_K_MAX: usize = 30;
pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_ETA: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Array2<f64>,
    pub assignments: Vec<usize>,
    /// Sum of squared Euclidean distances to the assigned centroid.
    pub inertia: f64,
    /// Inertia after each Lloyd assignment step of the winning restart.
    pub inertia_history: Vec<f64>,
}

fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

fn nearest_centroid(point: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_dist = f64::INFINITY;
    for (c, centroid) in centroids.rows().into_iter().enumerate() {
        let dist = squared_distance(point, centroid);
        if dist < best_dist {
            best = c;
            best_dist = dist;
        }
    }
    (best, best_dist)
}

/// k-means++ seeding: first centroid uniform, then proportional to the
/// squared distance to the nearest chosen centroid.
fn kmeans_pp_init<R: Rng>(values: &Array2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = values.nrows();
    let d = values.ncols();
    let mut centroids = Array2::<f64>::zeros((k, d));
    let first = rng.gen_range(0..n);
    centroids.row_mut(0).assign(&values.row(first));
    let mut dist: Vec<f64> = (0..n)
        .map(|i| squared_distance(values.row(i), centroids.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let chosen = if total <= 0.0 {
            // All mass collapsed (duplicate points): fall back to the first
            // index that is not already an exact centroid.
            (0..n).find(|&i| dist[i] > 0.0).unwrap_or(c % n)
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        };
        centroids.row_mut(c).assign(&values.row(chosen));
        for i in 0..n {
            let dist_new = squared_distance(values.row(i), centroids.row(c));
            if dist_new < dist[i] {
                dist[i] = dist_new;
            }
        }
    }
    centroids
}

fn lloyd(values: &Array2<f64>, mut centroids: Array2<f64>) -> ClusterModel {
    let n = values.nrows();
    let k = centroids.nrows();
    let d = values.ncols();
    let mut assignments = vec![0usize; n];
    let mut history = Vec::new();
    for _ in 0..MAX_LLOYD_ITERATIONS {
        // Assignment step (ties go to the lower centroid index).
        let mut changed = false;
        let mut inertia = 0.0;
        let mut point_dist = vec![0.0f64; n];
        for i in 0..n {
            let (best, dist) = nearest_centroid(values.row(i), &centroids);
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
            point_dist[i] = dist;
            inertia += dist;
        }
        // Empty clusters are reseeded to the point currently farthest from
        // its assigned centroid; the reassignment pass below only improves
        // the objective, so inertia stays non-increasing.
        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        let mut reseeded = false;
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let farthest = point_dist
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("distances are finite"))
                .map(|(i, _)| i);
            if let Some(p) = farthest {
                if point_dist[p] <= 0.0 {
                    continue; // nothing left to split off
                }
                centroids.row_mut(c).assign(&values.row(p));
                counts[assignments[p]] -= 1;
                assignments[p] = c;
                counts[c] = 1;
                point_dist[p] = 0.0;
                reseeded = true;
            }
        }
        if reseeded {
            changed = true;
            inertia = 0.0;
            for i in 0..n {
                let (best, dist) = nearest_centroid(values.row(i), &centroids);
                assignments[i] = best;
                inertia += dist;
            }
            counts = vec![0usize; k];
            for &a in &assignments {
                counts[a] += 1;
            }
        }
        if let Some(&prev) = history.last() {
            debug_assert!(
                inertia <= prev * (1.0 + 1e-12) + 1e-12,
                "inertia increased: {prev} -> {inertia}"
            );
        }
        history.push(inertia);
        if !changed && history.len() > 1 {
            break;
        }
        // Update step: means of assigned points; empty clusters keep their
        // current centroid.
        let mut sums = Array2::<f64>::zeros((k, d));
        for i in 0..n {
            let mut row = sums.row_mut(assignments[i]);
            row += &values.row(i);
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mut row = sums.row_mut(c);
                row /= counts[c] as f64;
                centroids.row_mut(c).assign(&sums.row(c));
            }
        }
    }
    let inertia = *history.last().expect("at least one iteration ran");
    ClusterModel {
        k,
        centroids,
        assignments,
        inertia,
        inertia_history: history,
    }
}

/// Lloyd's algorithm with k-means++ seeding, best of `restarts` runs by
/// inertia (ties keep the lower restart index). Restart r draws from an rng
/// seeded with `seed + r`, so results are reproducible.
pub fn kmeans(values: &Array2<f64>, k: usize, seed: u64, restarts: usize) -> Result<ClusterModel> {
    let n = values.nrows();
    if k == 0 {
        return Err(Error::Invalid("kmeans requires k >= 1".to_string()));
    }
    if k > n {
        return Err(Error::Invalid(format!(
            "kmeans requires k <= n (got k={k}, n={n})"
        )));
    }
    if restarts == 0 {
        return Err(Error::Invalid("kmeans requires restarts >= 1".to_string()));
    }
    let mut best: Option<ClusterModel> = None;
    for r in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
        let init = kmeans_pp_init(values, k, &mut rng);
        let model = lloyd(values, init);
        let replace = match &best {
            Some(current) => model.inertia < current.inertia,
            None => true,
        };
        if replace {
            best = Some(model);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

/// Mean silhouette score over all points with Euclidean distances.
///
/// Standard per-point score `(b - a) / max(a, b)`: `a` is the mean distance
/// to the point's own cluster (excluding itself), `b` the smallest mean
/// distance to any other cluster. Points in singleton clusters score 0.
pub fn silhouette(values: &Array2<f64>, assignments: &[usize]) -> Result<f64> {
    let n = values.nrows();
    if assignments.len() != n {
        return Err(Error::Dimension(format!(
            "{} assignments for {n} rows",
            assignments.len()
        )));
    }
    let mut labels: Vec<usize> = assignments.to_vec();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() < 2 {
        return Err(Error::Invalid(
            "silhouette requires at least 2 clusters".to_string(),
        ));
    }
    let cluster_count = labels.len();
    let label_index: BTreeMap<usize, usize> = labels
        .iter()
        .enumerate()
        .map(|(idx, &label)| (label, idx))
        .collect();
    let mut sizes = vec![0usize; cluster_count];
    for &a in assignments {
        sizes[label_index[&a]] += 1;
    }
    let mut total = 0.0;
    for i in 0..n {
        let own = label_index[&assignments[i]];
        if sizes[own] == 1 {
            continue; // singleton scores 0
        }
        let mut sums = vec![0.0f64; cluster_count];
        for j in 0..n {
            if i == j {
                continue;
            }
            sums[label_index[&assignments[j]]] +=
                squared_distance(values.row(i), values.row(j)).sqrt();
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..cluster_count)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// Result of the silhouette sweep over candidate cluster counts.
#[derive(Debug, Clone, PartialEq)]
pub struct KSelectionResult {
    pub chosen_k: usize,
    pub scores: BTreeMap<usize, f64>,
}

/// Run k-means + silhouette for every k in `[k_min, k_max]` and keep the
/// best-scoring k (ties go to the smaller k).
pub fn select_k(
    values: &Array2<f64>,
    k_min: usize,
    k_max: usize,
    seed: u64,
    restarts: usize,
) -> Result<KSelectionResult> {
    let n = values.nrows();
    if k_min < 2 || k_min > k_max || k_max + 1 > n {
        return Err(Error::Invalid(format!(
            "invalid k range [{k_min}, {k_max}] for n={n} (need 2 <= k_min <= k_max <= n-1)"
        )));
    }
    let mut scores = BTreeMap::new();
    let mut chosen = (k_min, f64::NEG_INFINITY);
    for k in k_min..=k_max {
        let model = kmeans(values, k, seed, restarts)?;
        let score = silhouette(values, &model.assignments)?;
        scores.insert(k, score);
        if score > chosen.1 {
            chosen = (k, score);
        }
    }
    Ok(KSelectionResult {
        chosen_k: chosen.0,
        scores,
    })
}

/// Student's-t soft assignments of rows to centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAssignment {
    /// n x k, rows sum to 1.
    pub q: Array2<f64>,
    pub alpha: f64,
}

/// `q_jk ∝ (1 + ||e_j - mu_k||^2 / alpha)^(-(alpha+1)/2)`, row-normalized.
pub fn soft_assign(values: &Array2<f64>, centroids: &Array2<f64>, alpha: f64) -> SoftAssignment {
    assert!(alpha > 0.0, "alpha must be positive");
    assert_eq!(values.ncols(), centroids.ncols(), "dimension mismatch");
    let n = values.nrows();
    let k = centroids.nrows();
    let exponent = -(alpha + 1.0) / 2.0;
    let mut q = Array2::<f64>::zeros((n, k));
    for j in 0..n {
        let mut sum = 0.0;
        for c in 0..k {
            let dist = squared_distance(values.row(j), centroids.row(c));
            let weight = (1.0 + dist / alpha).powf(exponent);
            q[[j, c]] = weight;
            sum += weight;
        }
        let mut row = q.row_mut(j);
        row /= sum;
    }
    SoftAssignment { q, alpha }
}

/// Sharpened target distribution: `p_jk ∝ q_jk^2 / f_k` with cluster
/// frequencies `f_k = Σ_j q_jk`, row-normalized.
pub fn target_distribution(q: &Array2<f64>) -> Array2<f64> {
    let freq = q.sum_axis(ndarray::Axis(0));
    let mut p = Array2::<f64>::zeros(q.raw_dim());
    for j in 0..q.nrows() {
        let mut sum = 0.0;
        for k in 0..q.ncols() {
            let value = q[[j, k]] * q[[j, k]] / freq[k];
            p[[j, k]] = value;
            sum += value;
        }
        let mut row = p.row_mut(j);
        row /= sum;
    }
    p
}

/// Mean per-instance KL(P || Q); `0 * log(0/q)` is treated as 0.
pub fn cluster_loss(q: &Array2<f64>, p: &Array2<f64>) -> Result<f64> {
    if q.raw_dim() != p.raw_dim() {
        return Err(Error::Dimension(format!(
            "Q is {:?} but P is {:?}",
            q.shape(),
            p.shape()
        )));
    }
    let n = q.nrows();
    if n == 0 {
        return Err(Error::Invalid("empty soft assignment".to_string()));
    }
    let mut total = 0.0;
    for (pv, qv) in p.iter().zip(q.iter()) {
        if *pv > 0.0 {
            if *qv <= 0.0 {
                return Err(Error::Invalid(
                    "KL(P||Q) undefined: q = 0 where p > 0".to_string(),
                ));
            }
            total += pv * (pv / qv).ln();
        }
    }
    Ok(total / n as f64)
}

/// KL clustering loss plus its exact gradients with respect to the embedding
/// rows and the centroids, with P held fixed.
pub fn cluster_loss_grads(
    values: &Array2<f64>,
    centroids: &Array2<f64>,
    alpha: f64,
    p: &Array2<f64>,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let assignment = soft_assign(values, centroids, alpha);
    let q = &assignment.q;
    let loss = cluster_loss(q, p)?;
    let n = values.nrows();
    let k = centroids.nrows();
    let scale = (alpha + 1.0) / n as f64;
    let mut grad_values = Array2::<f64>::zeros(values.raw_dim());
    let mut grad_centroids = Array2::<f64>::zeros(centroids.raw_dim());
    for j in 0..n {
        for c in 0..k {
            let dist = squared_distance(values.row(j), centroids.row(c));
            let coeff = scale * (p[[j, c]] - q[[j, c]]) / (alpha + dist);
            for t in 0..values.ncols() {
                let diff = values[[j, t]] - centroids[[c, t]];
                grad_values[[j, t]] += coeff * diff;
                grad_centroids[[c, t]] -= coeff * diff;
            }
        }
    }
    Ok((loss, grad_values, grad_centroids))
}

/// Joint objective of the final training stage: `l_cl + eta * l_clu`.
pub fn combine_stage3_loss(l_cl: f64, l_clu: f64, eta: f64) -> f64 {
    l_cl + eta * l_clu
}

/// Write `utterance_id,cluster_id` rows.
pub fn write_assignments_csv<W: Write>(
    ids: &[String],
    assignments: &[usize],
    writer: W,
) -> Result<()> {
    if ids.len() != assignments.len() {
        return Err(Error::Dimension(format!(
            "{} ids vs {} assignments",
            ids.len(),
            assignments.len()
        )));
    }
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["utterance_id", "cluster_id"])
        .map_err(|e| Error::Invalid(e.to_string()))?;
    for (id, a) in ids.iter().zip(assignments) {
        csv.write_record([id.as_str(), &a.to_string()])
            .map_err(|e| Error::Invalid(e.to_string()))?;
    }
    csv.flush()?;
    Ok(())
}

/// Write `k,mean_silhouette` rows in ascending k order.
pub fn write_kselection_csv<W: Write>(scores: &BTreeMap<usize, f64>, writer: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["k", "mean_silhouette"])
        .map_err(|e| Error::Invalid(e.to_string()))?;
    for (k, score) in scores {
        csv.write_record([k.to_string(), score.to_string()])
            .map_err(|e| Error::Invalid(e.to_string()))?;
    }
    csv.flush()?;
    Ok(())
}
