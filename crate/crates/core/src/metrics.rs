//! Clustering evaluation: contingency tables, optimal 1:1 cluster-to-intent
//! alignment (Hungarian algorithm), accuracy, NMI, ARI, macro P/R/F1, and
//! the downstream nearest-centroid evaluation for induced intents.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::encoder::{embed, EncoderParams};
use crate::error::{Error, Result};

/// Cross-tabulation of predicted clusters against reference intents.
///
/// Rows and columns follow the natural order of the label types, so the
/// table (and everything derived from it) is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyTable<P, R> {
    /// counts[c][r] = number of items with predicted label c, reference r.
    pub counts: Vec<Vec<u64>>,
    pub pred_labels: Vec<P>,
    pub ref_labels: Vec<R>,
    pub n: usize,
}

pub fn contingency<P, R>(pred: &[P], refs: &[R]) -> Result<ContingencyTable<P, R>>
where
    P: Ord + Clone,
    R: Ord + Clone,
{
    if pred.len() != refs.len() {
        return Err(Error::Dimension(format!(
            "{} predictions vs {} references",
            pred.len(),
            refs.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Invalid("empty label vectors".to_string()));
    }
    let mut pred_labels: Vec<P> = pred.to_vec();
    pred_labels.sort();
    pred_labels.dedup();
    let mut ref_labels: Vec<R> = refs.to_vec();
    ref_labels.sort();
    ref_labels.dedup();
    let pred_index: BTreeMap<&P, usize> = pred_labels.iter().zip(0..).collect();
    let ref_index: BTreeMap<&R, usize> = ref_labels.iter().zip(0..).collect();
    let mut counts = vec![vec![0u64; ref_labels.len()]; pred_labels.len()];
    for (p, r) in pred.iter().zip(refs.iter()) {
        counts[pred_index[p]][ref_index[r]] += 1;
    }
    Ok(ContingencyTable {
        counts,
        pred_labels,
        ref_labels,
        n: pred.len(),
    })
}

/// Minimum-cost perfect assignment on a square matrix via shortest
/// augmenting paths with potentials (O(n^3)). Returns row -> column.
fn min_cost_assignment(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut matched_row = vec![0usize; n + 1]; // column j -> row (1-based, 0 = free)
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        if matched_row[j] > 0 {
            row_to_col[matched_row[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Maximum matched mass over 1:1 assignments of the given row/column subset.
/// Rectangular subsets are zero-padded to square.
fn max_mass_subset(counts: &[Vec<u64>], rows: &[usize], cols: &[usize]) -> u64 {
    if rows.is_empty() || cols.is_empty() {
        return 0;
    }
    let side = rows.len().max(cols.len());
    let mut cost = vec![vec![0i64; side]; side];
    for (i, &r) in rows.iter().enumerate() {
        for (j, &c) in cols.iter().enumerate() {
            cost[i][j] = -(counts[r][c] as i64);
        }
    }
    let assignment = min_cost_assignment(&cost);
    let mut mass = 0i64;
    for (i, &j) in assignment.iter().enumerate() {
        if i < rows.len() && j < cols.len() {
            mass += counts[rows[i]][cols[j]] as i64;
        }
    }
    mass as u64
}

/// Injective partial cluster-to-reference mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    /// (cluster row index, reference column index), only pairs with
    /// positive matched counts.
    pub pairs: Vec<(usize, usize)>,
    pub matched_mass: u64,
}

/// Optimal 1:1 alignment maximizing matched counts.
///
/// Among all optimal mappings, the lexicographically smallest one is
/// returned (clusters considered in row order, each preferring the earliest
/// feasible reference; mapping to a zero-count reference is never reported).
pub fn hungarian_align<P, R>(table: &ContingencyTable<P, R>) -> Alignment {
    let row_count = table.counts.len();
    let col_count = table.ref_labels.len();
    let all_cols: Vec<usize> = (0..col_count).collect();
    let all_rows: Vec<usize> = (0..row_count).collect();
    let total = max_mass_subset(&table.counts, &all_rows, &all_cols);

    let mut used = vec![false; col_count];
    let mut pairs = Vec::new();
    let mut fixed_sum = 0u64;
    for c in 0..row_count {
        let remaining_rows: Vec<usize> = ((c + 1)..row_count).collect();
        for r in 0..col_count {
            if used[r] || table.counts[c][r] == 0 {
                continue;
            }
            let free_cols: Vec<usize> = (0..col_count)
                .filter(|&x| !used[x] && x != r)
                .collect();
            let rest = max_mass_subset(&table.counts, &remaining_rows, &free_cols);
            if fixed_sum + table.counts[c][r] + rest == total {
                used[r] = true;
                pairs.push((c, r));
                fixed_sum += table.counts[c][r];
                break;
            }
        }
    }
    debug_assert_eq!(fixed_sum, total, "lexicographic refinement lost mass");
    Alignment {
        pairs,
        matched_mass: total,
    }
}

/// Fraction of items covered by the optimal cluster-to-reference alignment.
pub fn accuracy<P, R>(pred: &[P], refs: &[R]) -> Result<f64>
where
    P: Ord + Clone,
    R: Ord + Clone,
{
    let table = contingency(pred, refs)?;
    let alignment = hungarian_align(&table);
    Ok(alignment.matched_mass as f64 / table.n as f64)
}

fn entropy(counts: impl Iterator<Item = u64>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information with arithmetic-mean normalization:
/// `2 I(pred; ref) / (H(pred) + H(ref))`, natural logarithms.
///
/// Both entropies zero (two constant partitions) scores 1.0; exactly one
/// zero scores 0.0.
pub fn nmi<P, R>(pred: &[P], refs: &[R]) -> Result<f64>
where
    P: Ord + Clone,
    R: Ord + Clone,
{
    let table = contingency(pred, refs)?;
    let n = table.n as f64;
    let row_sums: Vec<u64> = table.counts.iter().map(|row| row.iter().sum()).collect();
    let col_sums: Vec<u64> = (0..table.ref_labels.len())
        .map(|c| table.counts.iter().map(|row| row[c]).sum())
        .collect();
    let h_pred = entropy(row_sums.iter().copied(), n);
    let h_ref = entropy(col_sums.iter().copied(), n);
    if h_pred == 0.0 && h_ref == 0.0 {
        return Ok(1.0);
    }
    if h_pred == 0.0 || h_ref == 0.0 {
        return Ok(0.0);
    }
    let mut mutual = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &count) in row.iter().enumerate() {
            if count > 0 {
                let joint = count as f64 / n;
                let expected = (row_sums[i] as f64 / n) * (col_sums[j] as f64 / n);
                mutual += joint * (joint / expected).ln();
            }
        }
    }
    Ok((2.0 * mutual / (h_pred + h_ref)).clamp(0.0, 1.0))
}

fn comb2(x: u64) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// True when the contingency table describes identical partitions (each row
/// and each column has exactly one non-zero cell).
fn partitions_identical(counts: &[Vec<u64>]) -> bool {
    let col_count = counts.first().map_or(0, Vec::len);
    let rows_ok = counts
        .iter()
        .all(|row| row.iter().filter(|&&c| c > 0).count() == 1);
    let cols_ok = (0..col_count)
        .all(|c| counts.iter().filter(|row| row[c] > 0).count() == 1);
    rows_ok && cols_ok
}

/// Adjusted Rand index via the pair-count formula.
pub fn ari<P, R>(pred: &[P], refs: &[R]) -> Result<f64>
where
    P: Ord + Clone,
    R: Ord + Clone,
{
    if pred.len() < 2 {
        return Err(Error::Invalid("ari requires n >= 2".to_string()));
    }
    let table = contingency(pred, refs)?;
    let n = table.n as u64;
    let index: f64 = table
        .counts
        .iter()
        .flat_map(|row| row.iter())
        .map(|&c| comb2(c))
        .sum();
    let sum_rows: f64 = table
        .counts
        .iter()
        .map(|row| comb2(row.iter().sum()))
        .sum();
    let sum_cols: f64 = (0..table.ref_labels.len())
        .map(|c| comb2(table.counts.iter().map(|row| row[c]).sum()))
        .sum();
    let expected = sum_rows * sum_cols / comb2(n);
    let max_index = 0.5 * (sum_rows + sum_cols);
    let denom = max_index - expected;
    if denom.abs() < 1e-12 {
        return Ok(if partitions_identical(&table.counts) {
            1.0
        } else {
            0.0
        });
    }
    Ok((index - expected) / denom)
}

/// Macro precision/recall/F1 over reference intents after Hungarian
/// alignment. A reference with no aligned cluster contributes (0, 0); per
/// reference, F1 is the harmonic mean (0 when p + r = 0).
pub fn prf<P, R>(pred: &[P], refs: &[R]) -> Result<(f64, f64, f64)>
where
    P: Ord + Clone,
    R: Ord + Clone,
{
    let table = contingency(pred, refs)?;
    let alignment = hungarian_align(&table);
    let ref_count = table.ref_labels.len();
    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut f1_sum = 0.0;
    for r in 0..ref_count {
        let (p, rec) = match alignment.pairs.iter().find(|&&(_, col)| col == r) {
            Some(&(c, _)) => {
                let matched = table.counts[c][r] as f64;
                let cluster_size: u64 = table.counts[c].iter().sum();
                let ref_size: u64 = table.counts.iter().map(|row| row[r]).sum();
                (matched / cluster_size as f64, matched / ref_size as f64)
            }
            None => (0.0, 0.0),
        };
        precision_sum += p;
        recall_sum += rec;
        if p + rec > 0.0 {
            f1_sum += 2.0 * p * rec / (p + rec);
        }
    }
    let denom = ref_count as f64;
    Ok((precision_sum / denom, recall_sum / denom, f1_sum / denom))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AlignmentEntry {
    pub cluster: String,
    pub intent: String,
}

/// Full evaluation payload; serializes to the metrics report document.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub task: String,
    pub n: usize,
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub alignment: Vec<AlignmentEntry>,
}

/// Compute every metric for predicted cluster ids against reference intents.
pub fn evaluate(pred: &[usize], refs: &[String], task: &str) -> Result<MetricsReport> {
    let table = contingency(pred, refs)?;
    let alignment = hungarian_align(&table);
    let (precision, recall, f1) = prf(pred, refs)?;
    Ok(MetricsReport {
        task: task.to_string(),
        n: table.n,
        acc: alignment.matched_mass as f64 / table.n as f64,
        nmi: nmi(pred, refs)?,
        ari: ari(pred, refs)?,
        precision,
        recall,
        f1,
        alignment: alignment
            .pairs
            .iter()
            .map(|&(c, r)| AlignmentEntry {
                cluster: table.pred_labels[c].to_string(),
                intent: table.ref_labels[r].clone(),
            })
            .collect(),
    })
}

pub fn write_report<W: Write>(report: &MetricsReport, mut writer: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, report)
        .map_err(|e| Error::Invalid(format!("report serialization failed: {e}")))?;
    writer.write_all(b"\n")?;
    Ok(())
}

/// An induced intent: a cluster represented by its sample utterances.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InducedIntent {
    pub name: String,
    pub samples: Vec<String>,
}

/// Evaluate induced intents on a labeled held-out set with a
/// nearest-centroid classifier over the encoder's own embeddings.
///
/// Each induced intent's centroid is the mean of its sample embeddings;
/// every held-out utterance is predicted to the highest-cosine centroid
/// (ties go to the lower intent index).
pub fn task2_eval(
    induced: &[InducedIntent],
    heldout_texts: &[&str],
    heldout_refs: &[String],
    params: &EncoderParams,
) -> Result<MetricsReport> {
    if induced.len() < 2 {
        return Err(Error::Invalid(
            "task-2 evaluation needs at least 2 induced intents".to_string(),
        ));
    }
    if heldout_texts.len() != heldout_refs.len() {
        return Err(Error::Dimension(format!(
            "{} held-out texts vs {} references",
            heldout_texts.len(),
            heldout_refs.len()
        )));
    }
    let mut centroids = Vec::with_capacity(induced.len());
    for intent in induced {
        if intent.samples.is_empty() {
            return Err(Error::Invalid(format!(
                "induced intent `{}` has no sample utterances",
                intent.name
            )));
        }
        let texts: Vec<&str> = intent.samples.iter().map(String::as_str).collect();
        let rows = embed(params, &texts)?;
        let mut centroid = rows.sum_axis(ndarray::Axis(0)) / rows.nrows() as f64;
        let norm = centroid.dot(&centroid).sqrt();
        if norm > 0.0 {
            centroid /= norm;
        }
        centroids.push(centroid);
    }
    let heldout = embed(params, heldout_texts)?;
    let mut pred = Vec::with_capacity(heldout.nrows());
    for row in heldout.rows() {
        let mut best = 0usize;
        let mut best_sim = f64::NEG_INFINITY;
        for (idx, centroid) in centroids.iter().enumerate() {
            let sim = row.dot(centroid);
            if sim > best_sim {
                best_sim = sim;
                best = idx;
            }
        }
        pred.push(best);
    }
    evaluate(&pred, heldout_refs, "task2")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_params;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn strings(labels: &[&str]) -> Vec<String> {
        labels.iter().map(|s| s.to_string()).collect()
    }

    /// Exhaustive search over all injective partial mappings.
    fn brute_force_mass(counts: &[Vec<u64>]) -> u64 {
        fn recurse(counts: &[Vec<u64>], row: usize, used: &mut Vec<bool>) -> u64 {
            if row == counts.len() {
                return 0;
            }
            let mut best = recurse(counts, row + 1, used); // leave row unmatched
            for col in 0..used.len() {
                if !used[col] {
                    used[col] = true;
                    let mass = counts[row][col] + recurse(counts, row + 1, used);
                    used[col] = false;
                    best = best.max(mass);
                }
            }
            best
        }
        let cols = counts.first().map_or(0, Vec::len);
        recurse(counts, 0, &mut vec![false; cols])
    }

    #[test]
    fn contingency_counts_pairs() {
        let table = contingency(&[0, 0, 1, 1], &strings(&["a", "a", "b", "b"])).unwrap();
        assert_eq!(table.counts, vec![vec![2, 0], vec![0, 2]]);
        let table = contingency(&[0, 0, 1, 1], &strings(&["a", "a", "a", "b"])).unwrap();
        assert_eq!(table.counts, vec![vec![2, 0], vec![1, 1]]);
    }

    #[test]
    fn contingency_rejects_empty_and_mismatched() {
        assert!(contingency::<usize, usize>(&[], &[]).is_err());
        assert!(contingency(&[0, 1], &strings(&["a"])).is_err());
    }

    #[test]
    fn alignment_on_diagonal_table() {
        let table = contingency(&[0, 0, 1, 1], &strings(&["a", "a", "b", "b"])).unwrap();
        let alignment = hungarian_align(&table);
        assert_eq!(alignment.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(alignment.matched_mass, 4);
    }

    #[test]
    fn alignment_leaves_surplus_cluster_unmatched() {
        let table = contingency(&[0, 0, 1, 2], &strings(&["a", "a", "b", "b"])).unwrap();
        let alignment = hungarian_align(&table);
        // Brute force over all 1:1 mappings gives mass 3 with {0->a, 1->b};
        // cluster 2 stays unmatched under the lexicographic tie rule.
        assert_eq!(alignment.matched_mass, 3);
        assert_eq!(alignment.pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn all_ones_table_ties_break_lexicographically() {
        let table = contingency(&[0, 0, 1, 1], &strings(&["a", "b", "a", "b"])).unwrap();
        assert_eq!(table.counts, vec![vec![1, 1], vec![1, 1]]);
        let alignment = hungarian_align(&table);
        assert_eq!(alignment.pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn alignment_matches_brute_force_on_random_tables() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..200 {
            let rows = rng.gen_range(1..=6usize);
            let cols = rng.gen_range(1..=6usize);
            let counts: Vec<Vec<u64>> = (0..rows)
                .map(|_| (0..cols).map(|_| rng.gen_range(0..7u64)).collect())
                .collect();
            let table = ContingencyTable {
                counts: counts.clone(),
                pred_labels: (0..rows).collect::<Vec<usize>>(),
                ref_labels: (0..cols).collect::<Vec<usize>>(),
                n: counts.iter().flatten().sum::<u64>().max(1) as usize,
            };
            let alignment = hungarian_align(&table);
            assert_eq!(alignment.matched_mass, brute_force_mass(&counts));
        }
    }

    #[test]
    fn accuracy_is_relabeling_invariant() {
        let acc = accuracy(&[0, 0, 1, 1], &strings(&["b", "b", "a", "a"])).unwrap();
        assert_abs_diff_eq!(acc, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn accuracy_matches_brute_force_example() {
        let acc = accuracy(&[0, 0, 1, 2], &strings(&["a", "a", "b", "b"])).unwrap();
        assert_abs_diff_eq!(acc, 0.75, epsilon = 1e-12);
    }

    #[test]
    fn accuracy_single_cluster_two_classes() {
        let pred = vec![0usize; 8];
        let refs = strings(&["a", "a", "a", "a", "b", "b", "b", "b"]);
        assert_abs_diff_eq!(accuracy(&pred, &refs).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn nmi_perfect_and_independent() {
        assert_abs_diff_eq!(
            nmi(&[0, 0, 1, 1], &strings(&["b", "b", "a", "a"])).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn nmi_matches_hand_computation() {
        // I = 0.2157 nats, entropies (0.6931, 0.5623) -> 0.3437.
        let value = nmi(&[0, 0, 1, 1], &strings(&["a", "a", "a", "b"])).unwrap();
        assert_abs_diff_eq!(value, 0.3437, epsilon = 1e-4);
    }

    #[test]
    fn nmi_degenerate_partitions() {
        assert_abs_diff_eq!(nmi(&[0, 0, 0], &[5, 5, 5]).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(nmi(&[0, 0, 0], &[0, 1, 2]).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn nmi_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.gen_range(2..30usize);
            let a: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
            let b: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            assert_abs_diff_eq!(
                nmi(&a, &b).unwrap(),
                nmi(&b, &a).unwrap(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn ari_examples() {
        assert_abs_diff_eq!(
            ari(&[0, 0, 1, 1], &strings(&["b", "b", "a", "a"])).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        // index = 1, expected = 1, max = 2.5.
        assert_abs_diff_eq!(
            ari(&[0, 0, 1, 1], &strings(&["a", "a", "a", "b"])).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        // Pair-count oracle gives -0.5 for the checkerboard case.
        assert_abs_diff_eq!(
            ari(&[0, 0, 1, 1], &strings(&["a", "b", "a", "b"])).unwrap(),
            -0.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn ari_rejects_tiny_n_and_handles_degenerate_denominator() {
        assert!(ari(&[0], &[0]).is_err());
        // Both all-singletons: identical partitions with Max = Expected.
        assert_abs_diff_eq!(ari(&[0, 1, 2], &[5, 6, 7]).unwrap(), 1.0, epsilon = 1e-12);
        // Both single-cluster: identical as partitions.
        assert_abs_diff_eq!(ari(&[0, 0, 0], &[1, 1, 1]).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ari_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let n = rng.gen_range(2..30usize);
            let a: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
            let b: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            assert_abs_diff_eq!(
                ari(&a, &b).unwrap(),
                ari(&b, &a).unwrap(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn prf_perfect_clustering() {
        let (p, r, f1) = prf(&[0, 0, 1, 1], &strings(&["a", "a", "b", "b"])).unwrap();
        assert_abs_diff_eq!(p, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f1, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn prf_split_cluster_example() {
        // Per-class harmonic means 1.0 and 2/3.
        let (p, r, f1) = prf(&[0, 0, 1, 2], &strings(&["a", "a", "b", "b"])).unwrap();
        assert_abs_diff_eq!(p, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r, 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(f1, (1.0 + 2.0 / 3.0) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f1, 0.8333, epsilon = 1e-4);
    }

    #[test]
    fn prf_single_cluster_macro_averages_unmatched_reference() {
        let pred = vec![0usize; 8];
        let refs = strings(&["a", "a", "a", "a", "b", "b", "b", "b"]);
        let (p, r, f1) = prf(&pred, &refs).unwrap();
        assert_abs_diff_eq!(p, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(r, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(f1, 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn relabeling_leaves_metrics_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 40;
        let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let refs: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        // Permute both label alphabets.
        let remap_pred = [3usize, 0, 2, 1];
        let remap_ref = [10usize, 7, 9];
        let pred2: Vec<usize> = pred.iter().map(|&p| remap_pred[p]).collect();
        let refs2: Vec<usize> = refs.iter().map(|&r| remap_ref[r]).collect();
        assert_abs_diff_eq!(
            accuracy(&pred, &refs).unwrap(),
            accuracy(&pred2, &refs2).unwrap(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            nmi(&pred, &refs).unwrap(),
            nmi(&pred2, &refs2).unwrap(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            ari(&pred, &refs).unwrap(),
            ari(&pred2, &refs2).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn accuracy_is_one_iff_table_is_permutation_like() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..40 {
            let n = rng.gen_range(2..25usize);
            let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
            let refs: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
            let acc = accuracy(&pred, &refs).unwrap();
            assert!((0.0..=1.0).contains(&acc));
            let table = contingency(&pred, &refs).unwrap();
            assert_eq!(acc == 1.0, partitions_identical(&table.counts));
        }
    }

    #[test]
    fn report_serialization_is_stable() {
        let report = evaluate(&[0, 0, 1, 1], &strings(&["a", "a", "b", "b"]), "task1").unwrap();
        let mut buf = Vec::new();
        write_report(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("\"task\": \"task1\""));
        assert!(text.contains("\"acc\": 1.0"));
        assert!(text.contains("\"cluster\": \"0\""));
    }

    #[test]
    fn task2_nearest_centroid_recovers_separable_intents() {
        let params = init_params(3, 256, 32, 16);
        let induced = vec![
            InducedIntent {
                name: "0".into(),
                samples: vec![
                    "check account balance".into(),
                    "what is my balance".into(),
                ],
            },
            InducedIntent {
                name: "1".into(),
                samples: vec!["replace my lost card".into(), "card was stolen".into()],
            },
        ];
        let heldout_texts = ["check balance please", "lost card help"];
        let heldout_refs = strings(&["Balance", "Card"]);
        let report = task2_eval(&induced, &heldout_texts, &heldout_refs, &params).unwrap();
        assert_abs_diff_eq!(report.acc, 1.0, epsilon = 1e-12);
        assert_eq!(report.task, "task2");
        assert_eq!(report.n, 2);
    }

    #[test]
    fn task2_equidistant_point_goes_to_lower_index() {
        let params = init_params(3, 256, 32, 16);
        // Both induced intents share the identical sample, so both centroids
        // coincide and every held-out point is equidistant.
        let induced = vec![
            InducedIntent {
                name: "0".into(),
                samples: vec!["same text".into()],
            },
            InducedIntent {
                name: "1".into(),
                samples: vec!["same text".into()],
            },
        ];
        let heldout_texts = ["anything at all", "another utterance"];
        let heldout_refs = strings(&["X", "Y"]);
        let report = task2_eval(&induced, &heldout_texts, &heldout_refs, &params).unwrap();
        // All predictions are intent 0.
        assert_eq!(report.alignment.len(), 1);
        assert_eq!(report.alignment[0].cluster, "0");
    }

    #[test]
    fn task2_rejects_empty_intent() {
        let params = init_params(3, 256, 32, 16);
        let induced = vec![
            InducedIntent {
                name: "0".into(),
                samples: vec![],
            },
            InducedIntent {
                name: "1".into(),
                samples: vec!["x".into()],
            },
        ];
        assert!(task2_eval(&induced, &["a"], &strings(&["A"]), &params).is_err());
    }
}
