//! KNN neighborhoods in embedding space and the positive-relation adjacency
//! matrix over an augmented batch.
//!
//! An augmented batch of M plan slots is laid out as
//! `[view(0), partner(0), view(1), partner(1), ...]`: slot `2i` is the
//! augmented member utterance, slot `2i+1` the augmented sampled neighbor.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};

/// For each item, its K most similar items by inner product (self excluded).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborhoodIndex {
    pub k: usize,
    /// neighbors[i] holds exactly K indices, ordered by descending inner
    /// product (ties broken by lower index).
    pub neighbors: Vec<Vec<usize>>,
}

impl NeighborhoodIndex {
    /// Debug dump, one `<id>\t<neighbor ids>` line per item.
    pub fn dump(&self, ids: &[String]) -> String {
        let mut out = String::new();
        for (i, hood) in self.neighbors.iter().enumerate() {
            out.push_str(&ids[i]);
            out.push('\t');
            let names: Vec<&str> = hood.iter().map(|&j| ids[j].as_str()).collect();
            out.push_str(&names.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Exact KNN by inner product over the rows of `values`.
pub fn knn(values: &Array2<f64>, k: usize) -> Result<NeighborhoodIndex> {
    let n = values.nrows();
    if k == 0 {
        return Err(Error::Invalid("knn requires K >= 1".to_string()));
    }
    if k >= n {
        return Err(Error::Invalid(format!(
            "knn requires K < n (got K={k}, n={n})"
        )));
    }
    let mut neighbors = Vec::with_capacity(n);
    for i in 0..n {
        let row = values.row(i);
        let mut scored: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (row.dot(&values.row(j)), j))
            .collect();
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .expect("inner products are finite")
                .then(a.1.cmp(&b.1))
        });
        neighbors.push(scored.iter().take(k).map(|&(_, j)| j).collect());
    }
    Ok(NeighborhoodIndex { k, neighbors })
}

/// One training minibatch: member utterances, one sampled neighbor each, and
/// the members' optional intent labels (a slot's label covers both of its
/// augmented views).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub members: Vec<usize>,
    pub sampled_neighbor: Vec<usize>,
    pub labels: Vec<Option<String>>,
}

impl BatchPlan {
    pub fn batch_size(&self) -> usize {
        self.members.len()
    }
}

/// Uniformly sample one neighbor per member from its neighborhood.
pub fn plan_batch<R: Rng>(
    index: &NeighborhoodIndex,
    members: &[usize],
    labels: &[Option<String>],
    rng: &mut R,
) -> Result<BatchPlan> {
    if labels.len() != members.len() {
        return Err(Error::Dimension(format!(
            "{} labels for {} members",
            labels.len(),
            members.len()
        )));
    }
    for (pos, &m) in members.iter().enumerate() {
        if members[..pos].contains(&m) {
            return Err(Error::Invalid(format!("duplicate batch member {m}")));
        }
        if m >= index.neighbors.len() {
            return Err(Error::Invalid(format!(
                "member {m} outside index of size {}",
                index.neighbors.len()
            )));
        }
    }
    let sampled_neighbor = members
        .iter()
        .map(|&m| {
            let hood = &index.neighbors[m];
            hood[rng.gen_range(0..hood.len())]
        })
        .collect();
    Ok(BatchPlan {
        members: members.to_vec(),
        sampled_neighbor,
        labels: labels.to_vec(),
    })
}

/// Symmetric binary positive-relation matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    size: usize,
    bits: Vec<bool>,
}

impl AdjacencyMatrix {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            bits: vec![false; size * size],
        }
    }

    /// Adjacency that links each even slot with the following odd slot only.
    pub fn partner_only(size: usize) -> Self {
        assert!(size % 2 == 0, "partner layout needs an even batch");
        let mut adj = Self::new(size);
        for i in (0..size).step_by(2) {
            adj.set(i, i + 1);
        }
        adj
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.size + j]
    }

    /// Set (i, j) and its mirror; the diagonal is never set.
    pub fn set(&mut self, i: usize, j: usize) {
        if i == j {
            return;
        }
        self.bits[i * self.size + j] = true;
        self.bits[j * self.size + i] = true;
    }

    pub fn positives(&self, i: usize) -> Vec<usize> {
        (0..self.size).filter(|&j| self.get(i, j)).collect()
    }

    pub fn positive_count(&self, i: usize) -> usize {
        (0..self.size).filter(|&j| self.get(i, j)).count()
    }
}

/// Build the positive-relation matrix for an augmented batch.
///
/// A pair of distinct slots is positive when any of these hold:
/// - they are the two views of the same plan slot (partners);
/// - both slots carry the same non-null intent label;
/// - one slot's underlying utterance is the sampled neighbor of the other
///   slot's plan entry.
pub fn build_adjacency(plan: &BatchPlan) -> AdjacencyMatrix {
    let m = plan.batch_size();
    let size = 2 * m;
    let underlying = |slot: usize| -> usize {
        let entry = slot / 2;
        if slot % 2 == 0 {
            plan.members[entry]
        } else {
            plan.sampled_neighbor[entry]
        }
    };
    let mut adj = AdjacencyMatrix::new(size);
    for i in (0..size).step_by(2) {
        adj.set(i, i + 1);
    }
    for a in 0..size {
        for b in (a + 1)..size {
            let slot_a = a / 2;
            let slot_b = b / 2;
            let label_positive = match (&plan.labels[slot_a], &plan.labels[slot_b]) {
                (Some(la), Some(lb)) => la == lb,
                _ => false,
            };
            let neighbor_positive = underlying(a) == plan.sampled_neighbor[slot_b]
                || underlying(b) == plan.sampled_neighbor[slot_a];
            if label_positive || neighbor_positive {
                adj.set(a, b);
            }
        }
    }
    adj
}
