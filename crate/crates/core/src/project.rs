//! Exact 2-D PCA projection for embedding diagnostics.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const POWER_ITERATIONS: usize = 1000;
const POWER_TOLERANCE: f64 = 1e-12;
// Fixed seed for the power-iteration start vector; any full-support start
// works, the seed only pins determinism.
const START_SEED: u64 = 0x00c0_ffee;

/// Leading eigenvector of a symmetric matrix by power iteration.
/// Returns None when the matrix is (numerically) zero.
fn leading_eigenvector(matrix: &Array2<f64>, rng: &mut ChaCha8Rng) -> Option<(Array1<f64>, f64)> {
    let d = matrix.nrows();
    let mut v = Array1::from_iter((0..d).map(|_| rng.gen_range(-1.0..1.0f64)));
    let norm = v.dot(&v).sqrt();
    v /= norm;
    let mut eigenvalue = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let w = matrix.dot(&v);
        let w_norm = w.dot(&w).sqrt();
        if w_norm < 1e-300 {
            return None;
        }
        let next = &w / w_norm;
        let delta = (&next - &v).mapv(f64::abs).sum().min((&next + &v).mapv(f64::abs).sum());
        v = next;
        eigenvalue = w_norm;
        if delta < POWER_TOLERANCE {
            break;
        }
    }
    Some((v, eigenvalue))
}

/// Fix the sign so the largest-magnitude loading is positive (ties keep the
/// earliest index).
fn canonical_sign(mut v: Array1<f64>) -> Array1<f64> {
    let mut best = 0usize;
    for (i, value) in v.iter().enumerate() {
        if value.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.mapv_inplace(|x| -x);
    }
    v
}

/// Project rows onto their top-2 principal components.
///
/// The components come from an eigen-decomposition (power iteration with
/// deflation) of the centered covariance matrix; the deterministic sign
/// convention makes repeated runs byte-identical. Directions with no
/// variance project to zero.
pub fn pca_2d(values: &Array2<f64>) -> Result<Array2<f64>> {
    let n = values.nrows();
    let d = values.ncols();
    if n < 2 {
        return Err(Error::Invalid("pca needs at least 2 rows".to_string()));
    }
    let mean = values.sum_axis(ndarray::Axis(0)) / n as f64;
    let mut centered = values.clone();
    for mut row in centered.rows_mut() {
        row -= &mean;
    }
    let mut covariance = centered.t().dot(&centered) / (n as f64 - 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(START_SEED);
    let mut components: Vec<Array1<f64>> = Vec::with_capacity(2);
    for _ in 0..2usize.min(d) {
        match leading_eigenvector(&covariance, &mut rng) {
            Some((vector, eigenvalue)) => {
                let vector = canonical_sign(vector);
                // Deflate: remove the found component's subspace.
                let outer = {
                    let col = vector.view().insert_axis(ndarray::Axis(1));
                    col.dot(&vector.view().insert_axis(ndarray::Axis(0)))
                };
                covariance = &covariance - &(outer * eigenvalue);
                components.push(vector);
            }
            None => break,
        }
    }
    let mut projected = Array2::<f64>::zeros((n, 2));
    for (idx, component) in components.iter().enumerate() {
        let scores = centered.dot(component);
        projected.column_mut(idx).assign(&scores);
    }
    Ok(projected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn two_d_centered_input_is_rotated_not_distorted() {
        let values = array![
            [1.0, 2.0],
            [-1.0, -2.0],
            [2.0, -1.0],
            [-2.0, 1.0],
            [0.5, 0.7],
            [-0.5, -0.7]
        ];
        let projected = pca_2d(&values).unwrap();
        for i in 0..values.nrows() {
            for j in (i + 1)..values.nrows() {
                let orig = (&values.row(i) - &values.row(j))
                    .mapv(|x| x * x)
                    .sum()
                    .sqrt();
                let proj = (&projected.row(i) - &projected.row(j))
                    .mapv(|x| x * x)
                    .sum()
                    .sqrt();
                assert_abs_diff_eq!(orig, proj, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn one_d_variance_leaves_second_component_zero() {
        let values = array![[0.0, 1.0], [0.0, 2.0], [0.0, 3.0], [0.0, 4.0]];
        let projected = pca_2d(&values).unwrap();
        for i in 0..values.nrows() {
            assert_abs_diff_eq!(projected[[i, 1]], 0.0, epsilon = 1e-9);
        }
        // First component carries the spread.
        let spread: f64 = projected.column(0).mapv(f64::abs).sum();
        assert!(spread > 1.0);
    }

    #[test]
    fn projection_is_deterministic() {
        let values = array![
            [0.3, 1.1, -0.2],
            [0.9, -0.4, 0.5],
            [-0.7, 0.2, 0.8],
            [0.1, 0.1, -0.9]
        ];
        let a = pca_2d(&values).unwrap();
        let b = pca_2d(&values).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn needs_two_rows() {
        let values = array![[1.0, 2.0]];
        assert!(pca_2d(&values).is_err());
    }

    #[test]
    fn constant_data_projects_to_zero() {
        let values = array![[3.0, 3.0], [3.0, 3.0], [3.0, 3.0]];
        let projected = pca_2d(&values).unwrap();
        assert!(projected.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn blob_fixture_stays_separated_in_two_dimensions() {
        let (values, labels) = crate::synth::blobs_16d_fixture(42);
        let projected = pca_2d(&values).unwrap();
        let mut centroids = [[0.0f64; 2]; 3];
        let mut counts = [0usize; 3];
        for (row, &label) in labels.iter().enumerate() {
            centroids[label][0] += projected[[row, 0]];
            centroids[label][1] += projected[[row, 1]];
            counts[label] += 1;
        }
        for (c, count) in centroids.iter_mut().zip(counts) {
            c[0] /= count as f64;
            c[1] /= count as f64;
        }
        let mut within = 0.0;
        for (row, &label) in labels.iter().enumerate() {
            let dx = projected[[row, 0]] - centroids[label][0];
            let dy = projected[[row, 1]] - centroids[label][1];
            within += (dx * dx + dy * dy).sqrt();
        }
        within /= labels.len() as f64;
        let mut min_between = f64::INFINITY;
        for i in 0..3 {
            for j in (i + 1)..3 {
                let dx = centroids[i][0] - centroids[j][0];
                let dy = centroids[i][1] - centroids[j][1];
                min_between = min_between.min((dx * dx + dy * dy).sqrt());
            }
        }
        assert!(
            min_between > 2.0 * within,
            "between {min_between:.3} vs within {within:.3}"
        );
    }
}
