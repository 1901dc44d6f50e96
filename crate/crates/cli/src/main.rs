//! intentforge command line: ingest transcripts, train the staged encoder,
//! cluster utterances, select k, evaluate induced intents, and export 2-D
//! projections.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use intentforge::cluster::{kmeans, select_k, silhouette, write_assignments_csv, write_kselection_csv};
use intentforge::corpus::{consecutive_pairs, read_corpus_file, select_task1_utterances, select_task2_utterances, write_corpus, Corpus};
use intentforge::encoder::{embed_with_ids, init_params, load_embeddings_file, EmbeddingMatrix, EncoderParams};
use intentforge::metrics::{evaluate, task2_eval, write_report};
use intentforge::project::pca_2d;
use intentforge::trainer::{load_checkpoint, save_checkpoint, train_stage1, train_stage2, train_stage3};

use intentforge_cli::ablate::{run_ablation, write_ablation_csv};
use intentforge_cli::config::{ConfigMap, PipelineConfig};
use intentforge_cli::pipeline::{induced_intents, run_pipeline, select_targets};

#[derive(Parser)]
#[command(
    name = "intentforge",
    version,
    about = "Utterance clustering and intent induction pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// Flat key=value config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Line-delimited dialogue corpus.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Labeled same-domain corpus (stage 2 training, task-2 held-out set).
    #[arg(long)]
    labeled: Option<PathBuf>,
    /// Precomputed embeddings in the exchange format.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fixed cluster count (otherwise a silhouette sweep chooses k).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    knn_k: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    batch_m: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    /// substitute | dropout | identity
    #[arg(long)]
    augment_kind: Option<String>,
    #[arg(long)]
    augment_rate: Option<f64>,
    /// once | per_epoch
    #[arg(long)]
    knn_refresh: Option<String>,
    #[arg(long)]
    stage1: Option<bool>,
    #[arg(long)]
    stage2: Option<bool>,
    #[arg(long)]
    stage3: Option<bool>,
    /// Task filter for clustering targets (1 or 2).
    #[arg(long)]
    task: Option<u8>,
    /// Encoder checkpoint to start from.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Extra overrides as KEY=VALUE (repeatable), e.g. --set stage3.tau=1.0
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a corpus; writes a normalized copy.
    Ingest(CommonArgs),
    /// Train one stage of the encoder.
    Train(TrainArgs),
    /// Embed targets and cluster them with k-means.
    Cluster(CommonArgs),
    /// Sweep k over a range and report silhouette scores.
    SelectK(CommonArgs),
    /// Evaluate clusters against reference intents.
    Evaluate(EvaluateArgs),
    /// Export a 2-D PCA projection of the embeddings.
    Project(EvaluateArgs),
    /// Run ingest, training stages, clustering, and evaluation end to end.
    Pipeline(CommonArgs),
    /// Run the four cumulative stage combinations and tabulate accuracy.
    Ablate(CommonArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Stage to train: 1, 2, or 3.
    #[arg(long)]
    stage: u8,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Existing assignments CSV; recomputed when absent.
    #[arg(long)]
    assignments: Option<PathBuf>,
}

fn build_config(common: &CommonArgs) -> anyhow::Result<PipelineConfig> {
    let mut map = ConfigMap::new();
    if let Some(path) = &common.config {
        map.load_file(path)
            .with_context(|| format!("reading config `{}`", path.display()))?;
    }
    let mut put = |key: &str, value: Option<String>| -> anyhow::Result<()> {
        if let Some(v) = value {
            map.set(key, v)?;
        }
        Ok(())
    };
    put("corpus", common.corpus.as_ref().map(|p| p.display().to_string()))?;
    put("labeled", common.labeled.as_ref().map(|p| p.display().to_string()))?;
    put(
        "embeddings",
        common.embeddings.as_ref().map(|p| p.display().to_string()),
    )?;
    put("out", common.out.as_ref().map(|p| p.display().to_string()))?;
    put("seed", common.seed.map(|v| v.to_string()))?;
    put("k", common.k.map(|v| v.to_string()))?;
    put("k_min", common.k_min.map(|v| v.to_string()))?;
    put("k_max", common.k_max.map(|v| v.to_string()))?;
    put("tau", common.tau.map(|v| v.to_string()))?;
    put("knn_k", common.knn_k.map(|v| v.to_string()))?;
    put("eta", common.eta.map(|v| v.to_string()))?;
    put("batch_m", common.batch_m.map(|v| v.to_string()))?;
    put("epochs", common.epochs.map(|v| v.to_string()))?;
    put("lr", common.lr.map(|v| v.to_string()))?;
    put("alpha", common.alpha.map(|v| v.to_string()))?;
    put("restarts", common.restarts.map(|v| v.to_string()))?;
    put("feature_dim", common.feature_dim.map(|v| v.to_string()))?;
    put("hidden_dim", common.hidden_dim.map(|v| v.to_string()))?;
    put("embed_dim", common.embed_dim.map(|v| v.to_string()))?;
    put("augment_kind", common.augment_kind.clone())?;
    put("augment_rate", common.augment_rate.map(|v| v.to_string()))?;
    put("knn_refresh", common.knn_refresh.clone())?;
    put("stage1", common.stage1.map(|v| v.to_string()))?;
    put("stage2", common.stage2.map(|v| v.to_string()))?;
    put("stage3", common.stage3.map(|v| v.to_string()))?;
    put("task", common.task.map(|v| v.to_string()))?;
    for pair in &common.set {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{pair}`"))?;
        map.set(key.trim(), value.trim().to_string())?;
    }
    Ok(PipelineConfig::resolve(&map)?)
}

fn load_corpus(cfg: &PipelineConfig) -> anyhow::Result<Corpus> {
    let path = cfg
        .corpus
        .as_ref()
        .ok_or_else(|| anyhow!("this command requires --corpus"))?;
    read_corpus_file(path).with_context(|| format!("ingest (parsing `{}`)", path.display()))
}

fn initial_params(cfg: &PipelineConfig, checkpoint: &Option<PathBuf>) -> anyhow::Result<EncoderParams> {
    match checkpoint {
        Some(path) => {
            let file = fs::File::open(path)
                .with_context(|| format!("opening checkpoint `{}`", path.display()))?;
            let (params, _) = load_checkpoint(std::io::BufReader::new(file))
                .with_context(|| format!("loading checkpoint `{}`", path.display()))?;
            Ok(params)
        }
        None => Ok(init_params(
            cfg.seed,
            cfg.feature_dim,
            cfg.hidden_dim,
            cfg.embed_dim,
        )),
    }
}

/// Embeddings for the configured targets: imported from file, or computed
/// from the corpus with the given (or freshly initialized) encoder.
fn target_embeddings(
    cfg: &PipelineConfig,
    checkpoint: &Option<PathBuf>,
) -> anyhow::Result<(EmbeddingMatrix, Option<Corpus>, Vec<String>, EncoderParams)> {
    let params = initial_params(cfg, checkpoint)?;
    if let Some(path) = &cfg.embeddings_in {
        let matrix = load_embeddings_file(path)
            .with_context(|| format!("loading embeddings `{}`", path.display()))?;
        let corpus = match &cfg.corpus {
            Some(p) => Some(
                read_corpus_file(p).with_context(|| format!("ingest (parsing `{}`)", p.display()))?,
            ),
            None => None,
        };
        Ok((matrix, corpus, Vec::new(), params))
    } else {
        let corpus = load_corpus(cfg)?;
        let targets = select_targets(&corpus, cfg.task);
        if targets.is_empty() {
            bail!("task-{} filter selected no utterances", cfg.task);
        }
        let ids: Vec<String> = targets.iter().map(|u| u.id.clone()).collect();
        let texts: Vec<String> = targets.iter().map(|u| u.text.clone()).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let matrix =
            embed_with_ids(&params, &ids, &refs).context("embedding clustering targets")?;
        Ok((matrix, Some(corpus), texts, params))
    }
}

fn resolve_k(cfg: &PipelineConfig, matrix: &EmbeddingMatrix) -> anyhow::Result<(usize, BTreeMap<usize, f64>)> {
    if let Some(k) = cfg.k {
        if k > matrix.rows() {
            bail!("k = {k} exceeds the {} targets", matrix.rows());
        }
        return Ok((k, BTreeMap::new()));
    }
    let n = matrix.rows();
    if n < 3 {
        bail!("k selection needs at least 3 targets, found {n}");
    }
    let k_max = cfg.k_max.min(n - 1);
    if cfg.k_min > k_max {
        bail!("k range [{}, {}] is empty after clamping", cfg.k_min, cfg.k_max);
    }
    let selection = select_k(&matrix.values, cfg.k_min, k_max, cfg.seed, cfg.restarts)
        .context("k selection")?;
    Ok((selection.chosen_k, selection.scores))
}

fn read_assignments_csv(path: &PathBuf) -> anyhow::Result<BTreeMap<String, usize>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("reading assignments `{}`", path.display()))?;
    let mut map = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let id = record
            .get(0)
            .ok_or_else(|| anyhow!("assignments row missing utterance_id"))?;
        let cluster: usize = record
            .get(1)
            .ok_or_else(|| anyhow!("assignments row missing cluster_id"))?
            .parse()
            .with_context(|| format!("bad cluster id for `{id}`"))?;
        map.insert(id.to_string(), cluster);
    }
    Ok(map)
}

fn assignments_for(
    matrix: &EmbeddingMatrix,
    provided: &Option<PathBuf>,
    cfg: &PipelineConfig,
) -> anyhow::Result<(Vec<usize>, usize, BTreeMap<usize, f64>)> {
    match provided {
        Some(path) => {
            let by_id = read_assignments_csv(path)?;
            let mut assignments = Vec::with_capacity(matrix.rows());
            for id in &matrix.ids {
                let cluster = by_id
                    .get(id)
                    .ok_or_else(|| anyhow!("assignments file has no row for `{id}`"))?;
                assignments.push(*cluster);
            }
            let k = assignments.iter().copied().max().map_or(0, |m| m + 1);
            Ok((assignments, k, BTreeMap::new()))
        }
        None => {
            let (k, scores) = resolve_k(cfg, matrix)?;
            let model = kmeans(&matrix.values, k, cfg.seed, cfg.restarts).context("k-means")?;
            Ok((model.assignments, k, scores))
        }
    }
}

fn cmd_ingest(common: CommonArgs) -> anyhow::Result<()> {
    let cfg = build_config(&common)?;
    let corpus = load_corpus(&cfg)?;
    let task1 = select_task1_utterances(&corpus).len();
    let task2 = select_task2_utterances(&corpus).len();
    let pairs = consecutive_pairs(&corpus).len();
    println!("dialogues: {}", corpus.dialogues.len());
    println!("utterances: {}", corpus.utterance_count());
    println!("dropped empty turns: {}", corpus.dropped_empty_turns);
    println!("task-1 utterances (non-empty intents): {task1}");
    println!("task-2 utterances (InformIntent): {task2}");
    println!("consecutive pairs: {pairs}");
    fs::create_dir_all(&cfg.out_dir)?;
    let out_path = cfg.out_dir.join("corpus.normalized.jsonl");
    let file = fs::File::create(&out_path)
        .with_context(|| format!("writing `{}`", out_path.display()))?;
    write_corpus(&corpus, std::io::BufWriter::new(file))?;
    println!("normalized corpus written to {}", out_path.display());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    let cfg = build_config(&args.common)?;
    let corpus = load_corpus(&cfg)?;
    let params = initial_params(&cfg, &args.common.checkpoint)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let (trained, centroids, losses) = match args.stage {
        1 => {
            let result = train_stage1(&corpus, &params, &cfg.stage1_cfg)
                .context("stage 1 (consecutive-pair training)")?;
            (result.params, None, result.epoch_losses)
        }
        2 => {
            let labeled = match &cfg.labeled {
                Some(path) => read_corpus_file(path)
                    .with_context(|| format!("ingest (parsing `{}`)", path.display()))?,
                None => corpus.clone(),
            };
            let rows = select_task1_utterances(&labeled);
            if rows.is_empty() {
                bail!("stage 2 (neighbor-intent training): no labeled task-1 utterances");
            }
            let texts: Vec<String> = rows.iter().map(|u| u.text.clone()).collect();
            let labels: Vec<Option<String>> =
                rows.iter().map(|u| u.intents.first().cloned()).collect();
            let result = train_stage2(&texts, &labels, &params, &cfg.stage2_cfg)
                .context("stage 2 (neighbor-intent training)")?;
            (result.params, None, result.epoch_losses)
        }
        3 => {
            let targets = select_targets(&corpus, cfg.task);
            if targets.is_empty() {
                bail!("task-{} filter selected no utterances", cfg.task);
            }
            let texts: Vec<String> = targets.iter().map(|u| u.text.clone()).collect();
            let k = match cfg.k {
                Some(k) => k,
                None => {
                    let ids: Vec<String> = targets.iter().map(|u| u.id.clone()).collect();
                    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
                    let matrix = embed_with_ids(&params, &ids, &refs)
                        .context("embedding targets for k selection")?;
                    resolve_k(&cfg, &matrix)?.0
                }
            };
            let result = train_stage3(&texts, &params, &cfg.stage3_cfg, k)
                .context("stage 3 (joint clustering training)")?;
            (result.params, Some(result.centroids), result.epoch_losses)
        }
        other => bail!("--stage must be 1, 2, or 3 (got {other})"),
    };
    for (epoch, loss) in losses.iter().enumerate() {
        println!("epoch {:>3}: loss {loss:.6}", epoch + 1);
    }
    let path = cfg.out_dir.join("checkpoint.txt");
    let file = fs::File::create(&path).context("writing checkpoint")?;
    save_checkpoint(&trained, centroids.as_ref(), std::io::BufWriter::new(file))
        .context("writing checkpoint")?;
    println!("checkpoint written to {}", path.display());
    Ok(())
}

fn cmd_cluster(common: CommonArgs) -> anyhow::Result<()> {
    let cfg = build_config(&common)?;
    let (matrix, _, _, _) = target_embeddings(&cfg, &common.checkpoint)?;
    let (k, mut scores) = resolve_k(&cfg, &matrix)?;
    let model = kmeans(&matrix.values, k, cfg.seed, cfg.restarts).context("k-means")?;
    let sil = silhouette(&matrix.values, &model.assignments).unwrap_or(0.0);
    if scores.is_empty() {
        scores.insert(k, sil);
    }
    fs::create_dir_all(&cfg.out_dir)?;
    let assignments_path = cfg.out_dir.join("assignments.csv");
    let file = fs::File::create(&assignments_path).context("writing assignments")?;
    write_assignments_csv(&matrix.ids, &model.assignments, file)?;
    let kselect_path = cfg.out_dir.join("k_selection.csv");
    let file = fs::File::create(&kselect_path).context("writing k selection")?;
    write_kselection_csv(&scores, file)?;
    println!("k = {k}, inertia = {:.6}, mean silhouette = {sil:.6}", model.inertia);
    println!("assignments written to {}", assignments_path.display());
    Ok(())
}

fn cmd_select_k(common: CommonArgs) -> anyhow::Result<()> {
    let mut cfg = build_config(&common)?;
    cfg.k = None; // always sweep
    let (matrix, _, _, _) = target_embeddings(&cfg, &common.checkpoint)?;
    let (k, scores) = resolve_k(&cfg, &matrix)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("k_selection.csv");
    let file = fs::File::create(&path).context("writing k selection")?;
    write_kselection_csv(&scores, file)?;
    for (candidate, score) in &scores {
        println!("k = {candidate}: mean silhouette {score:.6}");
    }
    println!("chosen k = {k}");
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    let cfg = build_config(&args.common)?;
    let (matrix, corpus, texts, params) = target_embeddings(&cfg, &args.common.checkpoint)?;
    let (assignments, k, _) = assignments_for(&matrix, &args.assignments, &cfg)?;
    let report = match cfg.task {
        2 => {
            let heldout_path = cfg
                .labeled
                .as_ref()
                .ok_or_else(|| anyhow!("task-2 evaluation requires --labeled (held-out set)"))?;
            let heldout = read_corpus_file(heldout_path)
                .with_context(|| format!("ingest (parsing `{}`)", heldout_path.display()))?;
            let rows = select_task1_utterances(&heldout);
            if rows.is_empty() {
                bail!("held-out corpus has no labeled task-1 utterances");
            }
            if texts.is_empty() {
                bail!("task-2 evaluation needs corpus texts (not imported embeddings)");
            }
            let induced = induced_intents(&texts, &assignments, k);
            let heldout_texts: Vec<&str> = rows.iter().map(|u| u.text.as_str()).collect();
            let refs: Vec<String> = rows.iter().map(|u| u.intents[0].clone()).collect();
            task2_eval(&induced, &heldout_texts, &refs, &params).context("task-2 evaluation")?
        }
        _ => {
            let corpus =
                corpus.ok_or_else(|| anyhow!("task-1 evaluation requires --corpus"))?;
            let by_id: BTreeMap<&str, &intentforge::corpus::Utterance> = corpus
                .utterances()
                .map(|u| (u.id.as_str(), u))
                .collect();
            let mut pred = Vec::new();
            let mut refs = Vec::new();
            for (row, id) in matrix.ids.iter().enumerate() {
                if let Some(intent) = by_id.get(id.as_str()).and_then(|u| u.intents.first()) {
                    pred.push(assignments[row]);
                    refs.push(intent.clone());
                }
            }
            if refs.is_empty() {
                bail!("no reference intents found for the clustered utterances");
            }
            evaluate(&pred, &refs, "task1").context("task-1 evaluation")?
        }
    };
    fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("metrics.json");
    let file = fs::File::create(&path).context("writing metrics report")?;
    write_report(&report, file)?;
    println!(
        "task {}: n={} acc={:.4} nmi={:.4} ari={:.4} p={:.4} r={:.4} f1={:.4}",
        report.task, report.n, report.acc, report.nmi, report.ari, report.precision,
        report.recall, report.f1
    );
    println!("report written to {}", path.display());
    Ok(())
}

fn cmd_project(args: EvaluateArgs) -> anyhow::Result<()> {
    let cfg = build_config(&args.common)?;
    let (matrix, _, _, _) = target_embeddings(&cfg, &args.common.checkpoint)?;
    let (assignments, _, _) = assignments_for(&matrix, &args.assignments, &cfg)?;
    let projected = pca_2d(&matrix.values).context("pca projection")?;
    fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("projection.csv");
    let mut writer = csv::Writer::from_path(&path)
        .with_context(|| format!("writing `{}`", path.display()))?;
    writer.write_record(["id", "x", "y", "cluster"])?;
    for (row, id) in matrix.ids.iter().enumerate() {
        writer.write_record([
            id.as_str(),
            &projected[[row, 0]].to_string(),
            &projected[[row, 1]].to_string(),
            &assignments[row].to_string(),
        ])?;
    }
    writer.flush()?;
    println!("projection written to {}", path.display());
    Ok(())
}

fn cmd_pipeline(common: CommonArgs) -> anyhow::Result<()> {
    let cfg = build_config(&common)?;
    let outcome = run_pipeline(&cfg)?;
    println!(
        "clustered {} utterances into k = {} (mean silhouette {:.4})",
        outcome.ids.len(),
        outcome.k,
        outcome.silhouette
    );
    if let Some(metrics) = &outcome.metrics {
        println!(
            "task {}: acc={:.4} nmi={:.4} ari={:.4} p={:.4} r={:.4} f1={:.4}",
            metrics.task, metrics.acc, metrics.nmi, metrics.ari, metrics.precision,
            metrics.recall, metrics.f1
        );
    } else {
        println!("no reference intents available; evaluation skipped");
    }
    println!("artifacts in {}", cfg.out_dir.display());
    Ok(())
}

fn cmd_ablate(common: CommonArgs) -> anyhow::Result<()> {
    let cfg = build_config(&common)?;
    let rows = run_ablation(&cfg)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("ablation.csv");
    write_ablation_csv(&rows, &path)?;
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    println!("{:<8} {:>10} {:>10} {:>12}", "stages", "task1_acc", "task2_acc", "silhouette");
    for row in &rows {
        println!(
            "{:<8} {:>10} {:>10} {:>12.4}",
            row.stages,
            fmt(row.task1_acc),
            fmt(row.task2_acc),
            row.silhouette
        );
    }
    println!("table written to {}", path.display());
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(common) => cmd_ingest(common).context("ingest"),
        Command::Train(args) => cmd_train(args).context("train"),
        Command::Cluster(common) => cmd_cluster(common).context("cluster"),
        Command::SelectK(common) => cmd_select_k(common).context("select-k"),
        Command::Evaluate(args) => cmd_evaluate(args).context("evaluate"),
        Command::Project(args) => cmd_project(args).context("project"),
        Command::Pipeline(common) => cmd_pipeline(common).context("pipeline"),
        Command::Ablate(common) => cmd_ablate(common).context("ablate"),
    };
    if let Err(error) = result {
        let mut stderr = std::io::stderr();
        let _ = writeln!(stderr, "error: {error:#}");
        std::process::exit(1);
    }
}
