//! Batch contrastive losses over an augmented batch and their exact
//! gradients with respect to the embedding rows.
//!
//! For row i with positive set C_i (from the adjacency matrix):
//!
//! ```text
//! l_i = -(1/|C_i|) * sum_{j in C_i} log( exp(s_ij/tau) / sum_{k != i} exp(s_ik/tau) )
//! total = mean_i l_i
//! ```
//!
//! where `s` is the dot product of the (unit-norm) rows. The softmax terms
//! are computed with log-sum-exp stabilization; losses and gradients
//! accumulate in f64.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::neighborhood::AdjacencyMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub per_instance: Vec<f64>,
}

fn validate(rows: &Array2<f64>, adj: &AdjacencyMatrix, tau: f64) -> Result<()> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::Config(format!("temperature {tau} must be positive")));
    }
    let n = rows.nrows();
    if n < 2 {
        return Err(Error::Invalid(
            "contrastive loss needs at least 2 rows".to_string(),
        ));
    }
    if adj.size() != n {
        return Err(Error::Dimension(format!(
            "adjacency size {} vs {} rows",
            adj.size(),
            n
        )));
    }
    for i in 0..n {
        if adj.positive_count(i) == 0 {
            return Err(Error::Invalid(format!("row {i} has no positive relation")));
        }
    }
    Ok(())
}

/// Per-row softmax over scaled similarities, diagonal excluded.
///
/// Returns (probabilities, log-sum-exp per row, scaled similarities).
fn softmax_terms(rows: &Array2<f64>, tau: f64) -> (Array2<f64>, Vec<f64>, Array2<f64>) {
    let n = rows.nrows();
    let scaled = rows.dot(&rows.t()) / tau;
    let mut probs = Array2::<f64>::zeros((n, n));
    let mut lse = Vec::with_capacity(n);
    for i in 0..n {
        let mut max = f64::NEG_INFINITY;
        for k in 0..n {
            if k != i && scaled[[i, k]] > max {
                max = scaled[[i, k]];
            }
        }
        let mut sum = 0.0;
        for k in 0..n {
            if k != i {
                sum += (scaled[[i, k]] - max).exp();
            }
        }
        let log_denom = max + sum.ln();
        lse.push(log_denom);
        for k in 0..n {
            if k != i {
                probs[[i, k]] = (scaled[[i, k]] - log_denom).exp();
            }
        }
    }
    (probs, lse, scaled)
}

/// Adjacency-driven contrastive loss over an augmented batch.
pub fn contrastive_loss(
    rows: &Array2<f64>,
    adj: &AdjacencyMatrix,
    tau: f64,
) -> Result<LossReport> {
    validate(rows, adj, tau)?;
    let n = rows.nrows();
    let (_, lse, scaled) = softmax_terms(rows, tau);
    let mut per_instance = Vec::with_capacity(n);
    for i in 0..n {
        let positives = adj.positives(i);
        let mean_pos: f64 =
            positives.iter().map(|&j| scaled[[i, j]]).sum::<f64>() / positives.len() as f64;
        per_instance.push(lse[i] - mean_pos);
    }
    let total = per_instance.iter().sum::<f64>() / n as f64;
    Ok(LossReport {
        total,
        per_instance,
    })
}

/// Exact gradient of [`contrastive_loss`]'s total with respect to the rows
/// (entries treated as free variables).
pub fn contrastive_grad(
    rows: &Array2<f64>,
    adj: &AdjacencyMatrix,
    tau: f64,
) -> Result<Array2<f64>> {
    validate(rows, adj, tau)?;
    let n = rows.nrows();
    let (probs, _, _) = softmax_terms(rows, tau);
    // coeff[i][k] = p_ik - [k in C_i]/|C_i| for k != i.
    let mut coeff = probs;
    for i in 0..n {
        let positives = adj.positives(i);
        let share = 1.0 / positives.len() as f64;
        for j in positives {
            coeff[[i, j]] -= share;
        }
    }
    let symmetrized = &coeff + &coeff.t();
    let grad = symmetrized.dot(rows) / (n as f64 * tau);
    Ok(grad.as_standard_layout().to_owned())
}

/// Instance-level contrastive loss: positives are augmentation partners only
/// (slot layout `[view, partner, view, partner, ...]`).
pub fn instance_cl_loss(rows: &Array2<f64>, tau: f64) -> Result<LossReport> {
    contrastive_loss(rows, &AdjacencyMatrix::partner_only(rows.nrows()), tau)
}

pub fn instance_cl_grad(rows: &Array2<f64>, tau: f64) -> Result<Array2<f64>> {
    contrastive_grad(rows, &AdjacencyMatrix::partner_only(rows.nrows()), tau)
}
