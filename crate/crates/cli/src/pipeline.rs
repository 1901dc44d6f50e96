//! End-to-end orchestration: ingest, staged training, k selection,
//! clustering, evaluation, and artifact output.
//!
//! Artifacts written to the output directory:
//! - `checkpoint.txt` — encoder head (+ trained centroids when stage 3 ran)
//! - `embeddings.txt` — final target embeddings in the exchange format
//! - `assignments.csv` — `utterance_id,cluster_id`
//! - `k_selection.csv` — `k,mean_silhouette` (the sweep, or the single k)
//! - `metrics.json` — evaluation report (written when references exist)
//! - `run.json` — manifest with the resolved config, seed, and content hashes

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use ndarray::Array2;
use serde::Serialize;
use sha2::{Digest, Sha256};

use intentforge::cluster::{kmeans, select_k, silhouette, write_assignments_csv, write_kselection_csv};
use intentforge::corpus::{
    read_corpus_file, select_task1_utterances, select_task2_utterances, Corpus, Utterance,
};
use intentforge::encoder::{
    embed_with_ids, init_params, load_embeddings_file, save_embeddings_file, EmbeddingMatrix,
    EncoderParams,
};
use intentforge::metrics::{evaluate, task2_eval, write_report, InducedIntent, MetricsReport};
use intentforge::trainer::{save_checkpoint, train_stage1, train_stage2, train_stage3};

use crate::config::PipelineConfig;

pub struct PipelineOutcome {
    pub ids: Vec<String>,
    pub assignments: Vec<usize>,
    pub k: usize,
    pub kselect_scores: BTreeMap<usize, f64>,
    pub silhouette: f64,
    pub metrics: Option<MetricsReport>,
    pub params: Option<EncoderParams>,
    pub centroids: Option<Array2<f64>>,
    pub embeddings: Array2<f64>,
    pub epoch_losses: BTreeMap<String, Vec<f64>>,
}

/// Clustering targets selected by the configured task filter.
pub fn select_targets(corpus: &Corpus, task: u8) -> Vec<&Utterance> {
    match task {
        2 => select_task2_utterances(corpus),
        _ => select_task1_utterances(corpus),
    }
}

/// Labeled stage-2 training rows: task-1 utterances with their first intent.
fn stage2_rows(corpus: &Corpus) -> (Vec<String>, Vec<Option<String>>) {
    let selected = select_task1_utterances(corpus);
    let texts = selected.iter().map(|u| u.text.clone()).collect();
    let labels = selected
        .iter()
        .map(|u| u.intents.first().cloned())
        .collect();
    (texts, labels)
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes =
        fs::read(path).with_context(|| format!("hashing `{}`", path.display()))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Serialize)]
struct RunManifest {
    seed: u64,
    task: u8,
    k: usize,
    n_targets: usize,
    config: BTreeMap<String, String>,
    input_hashes: BTreeMap<String, String>,
    output_hashes: BTreeMap<String, String>,
}

fn clamp_k_range(cfg: &PipelineConfig, n: usize) -> anyhow::Result<(usize, usize)> {
    if n < 3 {
        bail!("k selection needs at least 3 target utterances, found {n}");
    }
    let k_max = cfg.k_max.min(n - 1);
    if cfg.k_min > k_max {
        bail!(
            "k range [{}, {}] is empty after clamping to n-1 = {}",
            cfg.k_min,
            cfg.k_max,
            n - 1
        );
    }
    Ok((cfg.k_min, k_max))
}

/// Result of running the enabled training stages.
pub struct TrainedStages {
    pub params: EncoderParams,
    /// Learned centroids when the joint stage ran.
    pub centroids: Option<Array2<f64>>,
    /// The k the joint stage trained with, when it had to be selected.
    pub stage3_k: Option<usize>,
    /// Silhouette sweep scores when k selection ran before the joint stage.
    pub kselect_scores: BTreeMap<usize, f64>,
    pub epoch_losses: BTreeMap<String, Vec<f64>>,
}

/// Train the enabled stages on the corpus.
pub fn train_enabled_stages(
    cfg: &PipelineConfig,
    corpus: &Corpus,
    target_texts: &[String],
) -> anyhow::Result<TrainedStages> {
    let mut params = init_params(cfg.seed, cfg.feature_dim, cfg.hidden_dim, cfg.embed_dim);
    let mut epoch_losses = BTreeMap::new();
    if cfg.stage1 {
        let result = train_stage1(corpus, &params, &cfg.stage1_cfg)
            .context("stage 1 (consecutive-pair training)")?;
        params = result.params;
        epoch_losses.insert("stage1".to_string(), result.epoch_losses);
    }
    if cfg.stage2 {
        let labeled_corpus = match &cfg.labeled {
            Some(path) => {
                Some(read_corpus_file(path).context("stage 2 (reading labeled corpus)")?)
            }
            None => None,
        };
        let (texts, labels) = stage2_rows(labeled_corpus.as_ref().unwrap_or(corpus));
        if texts.is_empty() {
            bail!("stage 2 (neighbor-intent training): no labeled task-1 utterances available");
        }
        let result = train_stage2(&texts, &labels, &params, &cfg.stage2_cfg)
            .context("stage 2 (neighbor-intent training)")?;
        params = result.params;
        epoch_losses.insert("stage2".to_string(), result.epoch_losses);
    }
    let mut centroids = None;
    let mut stage3_k = None;
    let mut kselect_scores = BTreeMap::new();
    if cfg.stage3 {
        let k = match cfg.k {
            Some(k) => k,
            None => {
                // Stage 3 needs k before it can train its centroids; run the
                // silhouette sweep on the current embeddings.
                let refs: Vec<&str> = target_texts.iter().map(String::as_str).collect();
                let ids: Vec<String> = (0..refs.len()).map(|i| i.to_string()).collect();
                let current = embed_with_ids(&params, &ids, &refs)
                    .context("stage 3 (embedding targets for k selection)")?;
                let (k_min, k_max) = clamp_k_range(cfg, refs.len())?;
                let selection = select_k(&current.values, k_min, k_max, cfg.seed, cfg.restarts)
                    .context("stage 3 (k selection)")?;
                kselect_scores = selection.scores.clone();
                selection.chosen_k
            }
        };
        let result = train_stage3(target_texts, &params, &cfg.stage3_cfg, k)
            .context("stage 3 (joint clustering training)")?;
        params = result.params;
        centroids = Some(result.centroids);
        stage3_k = Some(k);
        epoch_losses.insert("stage3".to_string(), result.epoch_losses);
    }
    Ok(TrainedStages {
        params,
        centroids,
        stage3_k,
        kselect_scores,
        epoch_losses,
    })
}

/// Execute the configured pipeline and write every artifact.
pub fn run_pipeline(cfg: &PipelineConfig) -> anyhow::Result<PipelineOutcome> {
    fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating output directory `{}`", cfg.out_dir.display()))?;
    let corpus = match &cfg.corpus {
        Some(path) => Some(
            read_corpus_file(path)
                .with_context(|| format!("ingest (parsing `{}`)", path.display()))?,
        ),
        None => None,
    };

    let mut params: Option<EncoderParams> = None;
    let mut centroids: Option<Array2<f64>> = None;
    let mut kselect_scores: BTreeMap<usize, f64> = BTreeMap::new();
    let mut epoch_losses = BTreeMap::new();
    let mut chosen_k = cfg.k;

    // Target construction: imported embeddings bypass the encoder entirely.
    let (matrix, refs_by_row, target_texts): (EmbeddingMatrix, Vec<Option<String>>, Vec<String>) =
        if let Some(path) = &cfg.embeddings_in {
            if cfg.stage1 || cfg.stage2 || cfg.stage3 {
                eprintln!(
                    "note: training stages are skipped when clustering imported embeddings"
                );
            }
            let matrix = load_embeddings_file(path)
                .with_context(|| format!("loading embeddings `{}`", path.display()))?;
            let refs = match &corpus {
                Some(corpus) => {
                    let by_id: BTreeMap<&str, &Utterance> = corpus
                        .utterances()
                        .map(|u| (u.id.as_str(), u))
                        .collect();
                    matrix
                        .ids
                        .iter()
                        .map(|id| {
                            by_id
                                .get(id.as_str())
                                .and_then(|u| u.intents.first().cloned())
                        })
                        .collect()
                }
                None => vec![None; matrix.rows()],
            };
            (matrix, refs, Vec::new())
        } else {
            let corpus = corpus
                .as_ref()
                .ok_or_else(|| anyhow!("a corpus is required unless embeddings are imported"))?;
            let targets = select_targets(corpus, cfg.task);
            if targets.is_empty() {
                bail!("task-{} filter selected no utterances", cfg.task);
            }
            let ids: Vec<String> = targets.iter().map(|u| u.id.clone()).collect();
            let texts: Vec<String> = targets.iter().map(|u| u.text.clone()).collect();
            let refs: Vec<Option<String>> = targets
                .iter()
                .map(|u| u.intents.first().cloned())
                .collect();
            let trained = train_enabled_stages(cfg, corpus, &texts)?;
            kselect_scores = trained.kselect_scores;
            epoch_losses = trained.epoch_losses;
            if chosen_k.is_none() {
                chosen_k = trained.stage3_k;
            }
            let text_refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let matrix = embed_with_ids(&trained.params, &ids, &text_refs)
                .context("embedding clustering targets")?;
            params = Some(trained.params);
            centroids = trained.centroids;
            (matrix, refs, texts)
        };

    let n = matrix.rows();
    // k selection on the final embeddings when nothing has pinned k yet.
    let k = match chosen_k {
        Some(k) => {
            if k > n {
                bail!("k = {k} exceeds the {n} clustering targets");
            }
            k
        }
        None => {
            let (k_min, k_max) = clamp_k_range(cfg, n)?;
            let selection = select_k(&matrix.values, k_min, k_max, cfg.seed, cfg.restarts)
                .context("k selection")?;
            kselect_scores = selection.scores.clone();
            selection.chosen_k
        }
    };

    let model = kmeans(&matrix.values, k, cfg.seed, cfg.restarts).context("k-means")?;
    let distinct = {
        let mut labels = model.assignments.clone();
        labels.sort_unstable();
        labels.dedup();
        labels.len()
    };
    let sil = if distinct >= 2 {
        silhouette(&matrix.values, &model.assignments).context("silhouette")?
    } else {
        0.0
    };
    if kselect_scores.is_empty() {
        kselect_scores.insert(k, sil);
    }

    // Evaluation when references exist.
    let metrics = match cfg.task {
        2 => match &cfg.labeled {
            Some(path) => {
                let heldout = read_corpus_file(path)
                    .with_context(|| format!("evaluation (reading heldout `{}`)", path.display()))?;
                let heldout_rows = select_task1_utterances(&heldout);
                if heldout_rows.is_empty() || target_texts.is_empty() {
                    None
                } else {
                    let induced = induced_intents(&target_texts, &model.assignments, k);
                    let texts: Vec<&str> =
                        heldout_rows.iter().map(|u| u.text.as_str()).collect();
                    let refs: Vec<String> = heldout_rows
                        .iter()
                        .map(|u| u.intents[0].clone())
                        .collect();
                    let params_ref = params
                        .as_ref()
                        .ok_or_else(|| anyhow!("task-2 evaluation needs a trained encoder"))?;
                    Some(
                        task2_eval(&induced, &texts, &refs, params_ref)
                            .context("task-2 evaluation")?,
                    )
                }
            }
            None => None,
        },
        _ => {
            let mut pred = Vec::new();
            let mut refs = Vec::new();
            for (row, reference) in refs_by_row.iter().enumerate() {
                if let Some(r) = reference {
                    pred.push(model.assignments[row]);
                    refs.push(r.clone());
                }
            }
            if refs.is_empty() {
                None
            } else {
                Some(evaluate(&pred, &refs, "task1").context("task-1 evaluation")?)
            }
        }
    };

    // Artifacts.
    let mut outputs: Vec<PathBuf> = Vec::new();
    if let Some(p) = &params {
        let path = cfg.out_dir.join("checkpoint.txt");
        let file = fs::File::create(&path).context("writing checkpoint")?;
        save_checkpoint(p, centroids.as_ref(), std::io::BufWriter::new(file))
            .context("writing checkpoint")?;
        outputs.push(path);
    }
    let embeddings_path = cfg.out_dir.join("embeddings.txt");
    save_embeddings_file(&matrix, &embeddings_path).context("writing embeddings")?;
    outputs.push(embeddings_path);
    let assignments_path = cfg.out_dir.join("assignments.csv");
    {
        let file = fs::File::create(&assignments_path).context("writing assignments")?;
        write_assignments_csv(&matrix.ids, &model.assignments, file)
            .context("writing assignments")?;
    }
    outputs.push(assignments_path);
    let kselect_path = cfg.out_dir.join("k_selection.csv");
    {
        let file = fs::File::create(&kselect_path).context("writing k selection")?;
        write_kselection_csv(&kselect_scores, file).context("writing k selection")?;
    }
    outputs.push(kselect_path);
    if let Some(report) = &metrics {
        let path = cfg.out_dir.join("metrics.json");
        let file = fs::File::create(&path).context("writing metrics report")?;
        write_report(report, file).context("writing metrics report")?;
        outputs.push(path);
    }

    let mut input_hashes = BTreeMap::new();
    for path in [&cfg.corpus, &cfg.labeled, &cfg.embeddings_in]
        .into_iter()
        .flatten()
    {
        input_hashes.insert(path.display().to_string(), sha256_file(path)?);
    }
    let mut output_hashes = BTreeMap::new();
    for path in &outputs {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_default();
        output_hashes.insert(name, sha256_file(path)?);
    }
    let manifest = RunManifest {
        seed: cfg.seed,
        task: cfg.task,
        k,
        n_targets: n,
        config: cfg.resolved.clone(),
        input_hashes,
        output_hashes,
    };
    let manifest_path = cfg.out_dir.join("run.json");
    let file = fs::File::create(&manifest_path).context("writing run manifest")?;
    serde_json::to_writer_pretty(file, &manifest).context("writing run manifest")?;

    Ok(PipelineOutcome {
        ids: matrix.ids.clone(),
        assignments: model.assignments,
        k,
        kselect_scores,
        silhouette: sil,
        metrics,
        params,
        centroids,
        embeddings: matrix.values,
        epoch_losses,
    })
}

/// Group target texts by cluster into induced intents named by cluster id.
pub fn induced_intents(texts: &[String], assignments: &[usize], k: usize) -> Vec<InducedIntent> {
    let mut intents: Vec<InducedIntent> = (0..k)
        .map(|c| InducedIntent {
            name: c.to_string(),
            samples: Vec::new(),
        })
        .collect();
    for (text, &cluster) in texts.iter().zip(assignments) {
        intents[cluster].samples.push(text.clone());
    }
    intents.retain(|intent| !intent.samples.is_empty());
    intents
}
