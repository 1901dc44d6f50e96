//! The three-stage training loop over the encoder head (and, in the final
//! stage, the cluster centroids), with deterministic seeding and an Adam
//! optimizer.
//!
//! Stage 1 trains on consecutive same-dialogue utterance pairs. Stage 2
//! trains on labeled utterances with sampled-KNN, augmentation-partner, and
//! same-label positives. Stage 3 jointly optimizes the instance contrastive
//! loss and the KL clustering loss on unlabeled target utterances.
//!
//! Checkpoint file format (`#intentforge-ckpt v1`): the header line, then
//! named parameter blocks, each as `block <name> <rows> <cols>` followed by
//! `rows` lines of `cols` decimal floats (shortest round-trip formatting, so
//! reloads are bit-exact).

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment, AugmentConfig, AugmentKind};
use crate::cluster::{cluster_loss_grads, combine_stage3_loss, kmeans, target_distribution, soft_assign};
use crate::contrastive::{contrastive_grad, contrastive_loss, instance_cl_grad, instance_cl_loss};
use crate::corpus::{consecutive_pairs, Corpus};
use crate::encoder::{backprop, forward_cached, tokenize, EncoderParams, HeadGradients};
use crate::error::{Error, Result};
use crate::neighborhood::{build_adjacency, knn, plan_batch, NeighborhoodIndex};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Stage 1: consecutive-utterance pairs.
    ConsecutivePairs,
    /// Stage 2: sampled neighbors and shared intent labels.
    NeighborIntent,
    /// Stage 3: joint contrastive and clustering objective.
    JointClustering,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnnRefresh {
    /// Build the neighborhood index once from the parameters at stage start.
    Once,
    /// Rebuild the index from current parameters at every epoch start.
    PerEpoch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_m: usize,
    pub lr: f64,
    pub tau: f64,
    /// Clustering-loss weight; used by the joint stage only.
    pub eta: f64,
    pub knn_k: usize,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub knn_refresh: KnnRefresh,
    /// Student's-t degrees of freedom for soft assignments.
    pub alpha: f64,
    /// k-means restarts for centroid initialization.
    pub restarts: usize,
}

impl TrainConfig {
    pub fn for_stage(stage: Stage) -> Self {
        Self {
            stage,
            epochs: match stage {
                Stage::JointClustering => 20,
                _ => 10,
            },
            batch_m: 32,
            lr: 1e-3,
            tau: 0.1,
            eta: 10.0,
            knn_k: 5,
            seed: 42,
            augment: AugmentConfig {
                kind: AugmentKind::Substitute,
                rate: 0.15,
                vocab: Vec::new(),
            },
            knn_refresh: KnnRefresh::Once,
            alpha: 1.0,
            restarts: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_m == 0 {
            return Err(Error::Config("batch_m must be positive".to_string()));
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if self.tau <= 0.0 || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau {} must be positive", self.tau)));
        }
        if self.eta < 0.0 || !self.eta.is_finite() {
            return Err(Error::Config(format!(
                "eta {} must be non-negative",
                self.eta
            )));
        }
        if self.knn_k == 0 {
            return Err(Error::Config("knn_k must be positive".to_string()));
        }
        if self.alpha <= 0.0 {
            return Err(Error::Config(format!(
                "alpha {} must be positive",
                self.alpha
            )));
        }
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be positive".to_string()));
        }
        if !(0.0..=1.0).contains(&self.augment.rate) {
            return Err(Error::Config(format!(
                "augment rate {} outside [0, 1]",
                self.augment.rate
            )));
        }
        Ok(())
    }
}

/// First/second Adam moment accumulators, keyed by parameter block name.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    fn apply_block(&mut self, name: &str, values: &mut [f64], grads: &[f64], lr: f64) {
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![0.0; values.len()], vec![0.0; values.len()]));
        assert_eq!(m.len(), values.len(), "block `{name}` changed size");
        let t = self.step as i32;
        let bias1 = 1.0 - ADAM_BETA1.powi(t);
        let bias2 = 1.0 - ADAM_BETA2.powi(t);
        for i in 0..values.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grads[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grads[i] * grads[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            values[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
        }
    }
}

fn ensure_finite(name: &str, grads: &[f64]) -> Result<()> {
    if grads.iter().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteGradient(name.to_string()))
    }
}

/// One bias-corrected Adam update of the encoder head.
pub fn optimizer_step(
    params: &mut EncoderParams,
    grads: &HeadGradients,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    optimizer_step_joint(params, None, grads, None, state, lr)
}

/// One Adam update over the head and (optionally) the cluster centroids.
pub fn optimizer_step_joint(
    params: &mut EncoderParams,
    centroids: Option<&mut Array2<f64>>,
    grads: &HeadGradients,
    centroid_grads: Option<&Array2<f64>>,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    ensure_finite("w1", grads.w1.as_slice().expect("standard layout"))?;
    ensure_finite("b1", grads.b1.as_slice().expect("standard layout"))?;
    ensure_finite("w2", grads.w2.as_slice().expect("standard layout"))?;
    ensure_finite("b2", grads.b2.as_slice().expect("standard layout"))?;
    if let Some(cg) = centroid_grads {
        ensure_finite("centroids", cg.as_slice().expect("standard layout"))?;
    }
    state.step += 1;
    state.apply_block(
        "w1",
        params.w1.as_slice_mut().expect("standard layout"),
        grads.w1.as_slice().expect("standard layout"),
        lr,
    );
    state.apply_block(
        "b1",
        params.b1.as_slice_mut().expect("standard layout"),
        grads.b1.as_slice().expect("standard layout"),
        lr,
    );
    state.apply_block(
        "w2",
        params.w2.as_slice_mut().expect("standard layout"),
        grads.w2.as_slice().expect("standard layout"),
        lr,
    );
    state.apply_block(
        "b2",
        params.b2.as_slice_mut().expect("standard layout"),
        grads.b2.as_slice().expect("standard layout"),
        lr,
    );
    if let (Some(c), Some(cg)) = (centroids, centroid_grads) {
        state.apply_block(
            "centroids",
            c.as_slice_mut().expect("standard layout"),
            cg.as_slice().expect("standard layout"),
            lr,
        );
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: EncoderParams,
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Stage3Result {
    pub params: EncoderParams,
    pub centroids: Array2<f64>,
    pub epoch_losses: Vec<f64>,
}

/// Fill an empty substitute vocabulary with the texts' own token inventory.
fn resolve_augment(cfg: &AugmentConfig, texts: &[String]) -> Result<AugmentConfig> {
    let mut resolved = cfg.clone();
    if resolved.kind == AugmentKind::Substitute && resolved.vocab.is_empty() {
        let mut vocab: Vec<String> = texts.iter().flat_map(|t| tokenize(t)).collect();
        vocab.sort();
        vocab.dedup();
        resolved.vocab = vocab;
    }
    resolved.validate()?;
    Ok(resolved)
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Stage 1: instance contrastive training on consecutive utterance pairs.
///
/// Each minibatch of M pairs forms a 2M-row batch with pair members as
/// partners; every other row in the batch acts as a negative.
pub fn train_stage1(
    corpus: &Corpus,
    params: &EncoderParams,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    let pairs = consecutive_pairs(corpus);
    if pairs.is_empty() {
        return Err(Error::Invalid(
            "stage 1 needs at least one consecutive utterance pair".to_string(),
        ));
    }
    let mut params = params.clone();
    let mut state = AdamState::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng);
        let mut batch_losses = Vec::new();
        for chunk in order.chunks(cfg.batch_m) {
            if chunk.len() < 2 {
                continue; // a lone pair has no in-batch negatives
            }
            let texts: Vec<&str> = chunk
                .iter()
                .flat_map(|&pi| [pairs[pi].first.text.as_str(), pairs[pi].second.text.as_str()])
                .collect();
            let (rows, cache) = forward_cached(&params, &texts)?;
            let report = instance_cl_loss(&rows, cfg.tau)?;
            let grad_rows = instance_cl_grad(&rows, cfg.tau)?;
            let grads = backprop(&params, &cache, &grad_rows);
            optimizer_step(&mut params, &grads, &mut state, cfg.lr)?;
            batch_losses.push(report.total);
        }
        epoch_losses.push(mean(&batch_losses));
    }
    Ok(TrainResult {
        params,
        epoch_losses,
    })
}

/// Stage 2: adjacency-driven contrastive training on labeled utterances.
///
/// Per epoch: (optionally refresh) the KNN index, plan batches with one
/// sampled neighbor per member, augment both members of every slot, and
/// minimize the adjacency contrastive loss.
pub fn train_stage2(
    texts: &[String],
    labels: &[Option<String>],
    params: &EncoderParams,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    let n = texts.len();
    if labels.len() != n {
        return Err(Error::Dimension(format!(
            "{} labels for {n} texts",
            labels.len()
        )));
    }
    if n <= cfg.knn_k {
        return Err(Error::Invalid(format!(
            "stage 2 needs more utterances than knn_k (n={n}, K={})",
            cfg.knn_k
        )));
    }
    let aug = resolve_augment(&cfg.augment, texts)?;
    let text_refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let mut params = params.clone();
    let mut state = AdamState::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut index: Option<NeighborhoodIndex> = None;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        if index.is_none() || cfg.knn_refresh == KnnRefresh::PerEpoch {
            let embedded = forward_cached(&params, &text_refs)?.0;
            index = Some(knn(&embedded, cfg.knn_k)?);
        }
        let index_ref = index.as_ref().expect("index built above");
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut batch_losses = Vec::new();
        for chunk in order.chunks(cfg.batch_m) {
            if chunk.len() < 2 {
                continue;
            }
            let chunk_labels: Vec<Option<String>> =
                chunk.iter().map(|&i| labels[i].clone()).collect();
            let plan = plan_batch(index_ref, chunk, &chunk_labels, &mut rng)?;
            let mut batch_texts = Vec::with_capacity(2 * chunk.len());
            for slot in 0..plan.batch_size() {
                batch_texts.push(augment(&texts[plan.members[slot]], &aug, &mut rng)?);
                batch_texts.push(augment(&texts[plan.sampled_neighbor[slot]], &aug, &mut rng)?);
            }
            let batch_refs: Vec<&str> = batch_texts.iter().map(String::as_str).collect();
            let adjacency = build_adjacency(&plan);
            let (rows, cache) = forward_cached(&params, &batch_refs)?;
            let report = contrastive_loss(&rows, &adjacency, cfg.tau)?;
            let grad_rows = contrastive_grad(&rows, &adjacency, cfg.tau)?;
            let grads = backprop(&params, &cache, &grad_rows);
            optimizer_step(&mut params, &grads, &mut state, cfg.lr)?;
            batch_losses.push(report.total);
        }
        epoch_losses.push(mean(&batch_losses));
    }
    Ok(TrainResult {
        params,
        epoch_losses,
    })
}

/// Stage 3: joint instance-contrastive and KL clustering training.
///
/// Centroids initialize from a k-means run on the incoming embeddings and
/// are optimized jointly with the head. The sharpened target distribution is
/// recomputed at each epoch start and held fixed within the epoch.
pub fn train_stage3(
    texts: &[String],
    params: &EncoderParams,
    cfg: &TrainConfig,
    k: usize,
) -> Result<Stage3Result> {
    cfg.validate()?;
    let n = texts.len();
    if k > n {
        return Err(Error::Invalid(format!(
            "stage 3 needs k <= n (got k={k}, n={n})"
        )));
    }
    if k == 0 {
        return Err(Error::Invalid("stage 3 needs k >= 1".to_string()));
    }
    let aug = resolve_augment(&cfg.augment, texts)?;
    let text_refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let mut params = params.clone();
    let initial = forward_cached(&params, &text_refs)?.0;
    let mut centroids = kmeans(&initial, k, cfg.seed, cfg.restarts)?.centroids;
    let mut state = AdamState::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let embedded = forward_cached(&params, &text_refs)?.0;
        let target = target_distribution(&soft_assign(&embedded, &centroids, cfg.alpha).q);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut batch_losses = Vec::new();
        for chunk in order.chunks(cfg.batch_m) {
            if chunk.len() < 2 {
                continue;
            }
            // Contrastive term: two augmented views per utterance.
            let mut view_texts = Vec::with_capacity(2 * chunk.len());
            for &i in chunk {
                view_texts.push(augment(&texts[i], &aug, &mut rng)?);
                view_texts.push(augment(&texts[i], &aug, &mut rng)?);
            }
            let view_refs: Vec<&str> = view_texts.iter().map(String::as_str).collect();
            let (aug_rows, aug_cache) = forward_cached(&params, &view_refs)?;
            let cl_report = instance_cl_loss(&aug_rows, cfg.tau)?;
            let cl_grad_rows = instance_cl_grad(&aug_rows, cfg.tau)?;
            // Clustering term: the original view against the fixed target.
            let original_refs: Vec<&str> = chunk.iter().map(|&i| texts[i].as_str()).collect();
            let (orig_rows, orig_cache) = forward_cached(&params, &original_refs)?;
            let mut batch_target = Array2::<f64>::zeros((chunk.len(), k));
            for (row, &i) in chunk.iter().enumerate() {
                batch_target.row_mut(row).assign(&target.row(i));
            }
            let (clu_loss, clu_grad_rows, clu_grad_centroids) =
                cluster_loss_grads(&orig_rows, &centroids, cfg.alpha, &batch_target)?;
            let total = combine_stage3_loss(cl_report.total, clu_loss, cfg.eta);
            let mut grads = backprop(&params, &aug_cache, &cl_grad_rows);
            let clu_head = backprop(&params, &orig_cache, &clu_grad_rows);
            grads.scaled_add(cfg.eta, &clu_head);
            let centroid_grads = clu_grad_centroids.mapv(|g| g * cfg.eta);
            optimizer_step_joint(
                &mut params,
                Some(&mut centroids),
                &grads,
                Some(&centroid_grads),
                &mut state,
                cfg.lr,
            )?;
            batch_losses.push(total);
        }
        epoch_losses.push(mean(&batch_losses));
    }
    Ok(Stage3Result {
        params,
        centroids,
        epoch_losses,
    })
}

/// Maximum relative error between the analytic gradient and central finite
/// differences over a random coordinate subsample.
///
/// The relative error denominator is `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F, R>(
    loss: F,
    point: &[f64],
    analytic: &[f64],
    h: f64,
    max_samples: usize,
    rng: &mut R,
) -> f64
where
    F: Fn(&[f64]) -> f64,
    R: Rng,
{
    assert!(h > 0.0, "step size must be positive");
    assert_eq!(point.len(), analytic.len(), "gradient length mismatch");
    let len = point.len();
    let indices: Vec<usize> = if len <= max_samples {
        (0..len).collect()
    } else {
        let mut sampled = rand::seq::index::sample(rng, len, max_samples).into_vec();
        sampled.sort_unstable();
        sampled
    };
    let mut worst = 0.0f64;
    let mut perturbed = point.to_vec();
    for idx in indices {
        let original = perturbed[idx];
        perturbed[idx] = original + h;
        let up = loss(&perturbed);
        perturbed[idx] = original - h;
        let down = loss(&perturbed);
        perturbed[idx] = original;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[idx];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    worst
}

/// Flatten the head parameters in block order (w1, b1, w2, b2).
pub fn flatten_head(params: &EncoderParams) -> Vec<f64> {
    let mut flat = Vec::new();
    flat.extend_from_slice(params.w1.as_slice().expect("standard layout"));
    flat.extend_from_slice(params.b1.as_slice().expect("standard layout"));
    flat.extend_from_slice(params.w2.as_slice().expect("standard layout"));
    flat.extend_from_slice(params.b2.as_slice().expect("standard layout"));
    flat
}

pub fn flatten_gradients(grads: &HeadGradients) -> Vec<f64> {
    let mut flat = Vec::new();
    flat.extend_from_slice(grads.w1.as_slice().expect("standard layout"));
    flat.extend_from_slice(grads.b1.as_slice().expect("standard layout"));
    flat.extend_from_slice(grads.w2.as_slice().expect("standard layout"));
    flat.extend_from_slice(grads.b2.as_slice().expect("standard layout"));
    flat
}

/// Rebuild head parameters from a flat vector shaped like `template`.
pub fn unflatten_head(template: &EncoderParams, flat: &[f64]) -> EncoderParams {
    let (h, f) = (template.hidden_dim(), template.feature_dim());
    let e = template.embed_dim();
    assert_eq!(flat.len(), h * f + h + e * h + e, "flat length mismatch");
    let mut offset = 0;
    let w1 = Array2::from_shape_vec((h, f), flat[offset..offset + h * f].to_vec()).unwrap();
    offset += h * f;
    let b1 = ndarray::Array1::from_vec(flat[offset..offset + h].to_vec());
    offset += h;
    let w2 = Array2::from_shape_vec((e, h), flat[offset..offset + e * h].to_vec()).unwrap();
    offset += e * h;
    let b2 = ndarray::Array1::from_vec(flat[offset..offset + e].to_vec());
    EncoderParams { w1, b1, w2, b2 }
}

const CHECKPOINT_HEADER: &str = "#intentforge-ckpt v1";

fn write_block<W: Write>(writer: &mut W, name: &str, rows: usize, cols: usize, data: &[f64]) -> Result<()> {
    writeln!(writer, "block {name} {rows} {cols}")?;
    for row in data.chunks(cols) {
        let line = row
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

/// Serialize head parameters (and optional centroids) as a checkpoint.
pub fn save_checkpoint<W: Write>(
    params: &EncoderParams,
    centroids: Option<&Array2<f64>>,
    mut writer: W,
) -> Result<()> {
    writeln!(writer, "{CHECKPOINT_HEADER}")?;
    write_block(
        &mut writer,
        "w1",
        params.hidden_dim(),
        params.feature_dim(),
        params.w1.as_slice().expect("standard layout"),
    )?;
    write_block(
        &mut writer,
        "b1",
        1,
        params.hidden_dim(),
        params.b1.as_slice().expect("standard layout"),
    )?;
    write_block(
        &mut writer,
        "w2",
        params.embed_dim(),
        params.hidden_dim(),
        params.w2.as_slice().expect("standard layout"),
    )?;
    write_block(
        &mut writer,
        "b2",
        1,
        params.embed_dim(),
        params.b2.as_slice().expect("standard layout"),
    )?;
    if let Some(c) = centroids {
        write_block(
            &mut writer,
            "centroids",
            c.nrows(),
            c.ncols(),
            c.as_slice().expect("standard layout"),
        )?;
    }
    Ok(())
}

/// Load a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint<R: BufRead>(reader: R) -> Result<(EncoderParams, Option<Array2<f64>>)> {
    let mut lines = reader.lines().enumerate();
    match lines.next() {
        Some((_, Ok(header))) if header.trim() == CHECKPOINT_HEADER => {}
        Some((_, Ok(header))) => {
            return Err(Error::Parse {
                line: 1,
                message: format!("unsupported checkpoint header `{header}`"),
            })
        }
        Some((_, Err(e))) => return Err(e.into()),
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "empty checkpoint".to_string(),
            })
        }
    }
    let mut blocks: BTreeMap<String, Array2<f64>> = BTreeMap::new();
    let mut pending: Option<(String, usize, usize, Vec<f64>)> = None;
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix("block ") {
            if let Some((name, rows, cols, data)) = pending.take() {
                finish_block(name, rows, cols, data, &mut blocks, lineno)?;
            }
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("malformed block header `{trimmed}`"),
                });
            }
            let rows: usize = parts[1].parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad row count `{}`", parts[1]),
            })?;
            let cols: usize = parts[2].parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad column count `{}`", parts[2]),
            })?;
            pending = Some((parts[0].to_string(), rows, cols, Vec::with_capacity(rows * cols)));
        } else {
            let entry = pending.as_mut().ok_or_else(|| Error::Parse {
                line: lineno,
                message: "value line outside any block".to_string(),
            })?;
            for token in trimmed.split_whitespace() {
                let value: f64 = token.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("non-numeric value `{token}`"),
                })?;
                entry.3.push(value);
            }
        }
    }
    if let Some((name, rows, cols, data)) = pending.take() {
        finish_block(name, rows, cols, data, &mut blocks, 0)?;
    }
    let take = |blocks: &mut BTreeMap<String, Array2<f64>>, name: &str| {
        blocks.remove(name).ok_or_else(|| Error::Parse {
            line: 0,
            message: format!("checkpoint is missing block `{name}`"),
        })
    };
    let w1 = take(&mut blocks, "w1")?;
    let b1 = take(&mut blocks, "b1")?;
    let w2 = take(&mut blocks, "w2")?;
    let b2 = take(&mut blocks, "b2")?;
    let centroids = blocks.remove("centroids");
    let params = EncoderParams {
        w1,
        b1: b1.row(0).to_owned(),
        w2,
        b2: b2.row(0).to_owned(),
    };
    params.validate_finite().map_err(|_| Error::Parse {
        line: 0,
        message: "checkpoint contains non-finite parameters".to_string(),
    })?;
    Ok((params, centroids))
}

fn finish_block(
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    blocks: &mut BTreeMap<String, Array2<f64>>,
    lineno: usize,
) -> Result<()> {
    if data.len() != rows * cols {
        return Err(Error::Parse {
            line: lineno,
            message: format!(
                "block `{name}` expected {} values, found {}",
                rows * cols,
                data.len()
            ),
        });
    }
    if blocks.contains_key(&name) {
        return Err(Error::Parse {
            line: lineno,
            message: format!("duplicate block `{name}`"),
        });
    }
    blocks.insert(
        name,
        Array2::from_shape_vec((rows, cols), data).expect("length checked"),
    );
    Ok(())
}
