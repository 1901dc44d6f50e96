//! Flat key=value configuration with command-line overrides.
//!
//! A config file holds one `key = value` pair per line (`#` starts a
//! comment). Every key can also be set from the command line; later sources
//! win (defaults < file < flags). Per-stage keys like `stage3.tau` override
//! the shared hyperparameter for that stage only.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use intentforge::augment::AugmentKind;
use intentforge::cluster::{DEFAULT_K_MAX, DEFAULT_K_MIN, DEFAULT_RESTARTS};
use intentforge::encoder::{DEFAULT_EMBED_DIM, DEFAULT_FEATURE_DIM, DEFAULT_HIDDEN_DIM};
use intentforge::trainer::{KnnRefresh, Stage, TrainConfig};
use intentforge::{Error, Result};

const SHARED_KEYS: &[&str] = &[
    "corpus",
    "labeled",
    "embeddings",
    "out",
    "task",
    "seed",
    "k",
    "k_min",
    "k_max",
    "restarts",
    "feature_dim",
    "hidden_dim",
    "embed_dim",
    "stage1",
    "stage2",
    "stage3",
    "epochs",
    "lr",
    "tau",
    "eta",
    "batch_m",
    "knn_k",
    "knn_refresh",
    "alpha",
    "augment_kind",
    "augment_rate",
];

const STAGE_KEYS: &[&str] = &[
    "epochs",
    "lr",
    "tau",
    "eta",
    "batch_m",
    "knn_k",
    "knn_refresh",
    "augment_kind",
    "augment_rate",
];

fn is_known(key: &str) -> bool {
    if SHARED_KEYS.contains(&key) {
        return true;
    }
    for stage in ["stage1.", "stage2.", "stage3."] {
        if let Some(rest) = key.strip_prefix(stage) {
            return STAGE_KEYS.contains(&rest);
        }
    }
    false
}

/// Ordered key -> value pairs from all sources.
#[derive(Debug, Clone, Default)]
pub struct ConfigMap {
    values: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !is_known(key) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Parse a config file into this map (later keys win).
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)?;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: idx + 1,
                message: format!("expected `key = value`, found `{raw}`"),
            })?;
            self.set(key.trim(), value.trim().to_string())
                .map_err(|e| Error::Parse {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
        }
        Ok(())
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.values
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key `{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "key `{key}`: expected a boolean, found `{value}`"
        ))),
    }
}

fn parse_augment_kind(key: &str, value: &str) -> Result<AugmentKind> {
    match value.to_ascii_lowercase().as_str() {
        "substitute" => Ok(AugmentKind::Substitute),
        "dropout" => Ok(AugmentKind::Dropout),
        "identity" => Ok(AugmentKind::Identity),
        _ => Err(Error::Config(format!(
            "key `{key}`: expected substitute|dropout|identity, found `{value}`"
        ))),
    }
}

fn parse_refresh(key: &str, value: &str) -> Result<KnnRefresh> {
    match value.to_ascii_lowercase().as_str() {
        "once" => Ok(KnnRefresh::Once),
        "per_epoch" | "per-epoch" => Ok(KnnRefresh::PerEpoch),
        _ => Err(Error::Config(format!(
            "key `{key}`: expected once|per_epoch, found `{value}`"
        ))),
    }
}

/// Fully resolved pipeline configuration.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub corpus: Option<PathBuf>,
    pub labeled: Option<PathBuf>,
    pub embeddings_in: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Which task filter selects the clustering targets (1 or 2).
    pub task: u8,
    pub seed: u64,
    pub k: Option<usize>,
    pub k_min: usize,
    pub k_max: usize,
    pub restarts: usize,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub stage1: bool,
    pub stage2: bool,
    pub stage3: bool,
    pub stage1_cfg: TrainConfig,
    pub stage2_cfg: TrainConfig,
    pub stage3_cfg: TrainConfig,
    /// Every key=value pair after resolution, echoed into the run manifest.
    pub resolved: BTreeMap<String, String>,
}

fn apply_stage_overrides(
    cfg: &mut TrainConfig,
    map: &ConfigMap,
    stage_prefix: &str,
) -> Result<()> {
    // Shared keys first, then the per-stage override.
    let lookup = |name: &str| -> Option<(String, String)> {
        let scoped = format!("{stage_prefix}.{name}");
        if let Some(v) = map.get(&scoped) {
            return Some((scoped, v.to_string()));
        }
        map.get(name).map(|v| (name.to_string(), v.to_string()))
    };
    if let Some((k, v)) = lookup("epochs") {
        cfg.epochs = parse_value(&k, &v)?;
    }
    if let Some((k, v)) = lookup("lr") {
        cfg.lr = parse_value(&k, &v)?;
    }
    if let Some((k, v)) = lookup("tau") {
        cfg.tau = parse_value(&k, &v)?;
    }
    if let Some((k, v)) = lookup("eta") {
        cfg.eta = parse_value(&k, &v)?;
    }
    if let Some((k, v)) = lookup("batch_m") {
        cfg.batch_m = parse_value(&k, &v)?;
    }
    if let Some((k, v)) = lookup("knn_k") {
        cfg.knn_k = parse_value(&k, &v)?;
    }
    if let Some((k, v)) = lookup("knn_refresh") {
        cfg.knn_refresh = parse_refresh(&k, &v)?;
    }
    if let Some((k, v)) = lookup("augment_kind") {
        cfg.augment.kind = parse_augment_kind(&k, &v)?;
    }
    if let Some((k, v)) = lookup("augment_rate") {
        cfg.augment.rate = parse_value(&k, &v)?;
    }
    Ok(())
}

impl PipelineConfig {
    /// Resolve a config map into a validated pipeline configuration.
    pub fn resolve(map: &ConfigMap) -> Result<Self> {
        let seed: u64 = match map.get("seed") {
            Some(v) => parse_value("seed", v)?,
            None => 42,
        };
        let task: u8 = match map.get("task") {
            Some(v) => parse_value("task", v)?,
            None => 1,
        };
        if task != 1 && task != 2 {
            return Err(Error::Config(format!("task must be 1 or 2, got {task}")));
        }
        let out_dir = PathBuf::from(map.get("out").unwrap_or("out"));
        let corpus = map.get("corpus").map(PathBuf::from);
        let labeled = map.get("labeled").map(PathBuf::from);
        let embeddings_in = map.get("embeddings").map(PathBuf::from);
        if corpus.is_none() && embeddings_in.is_none() {
            return Err(Error::Config(
                "at least one of `corpus` or `embeddings` must be set".to_string(),
            ));
        }
        let k = match map.get("k") {
            Some(v) => Some(parse_value::<usize>("k", v)?),
            None => None,
        };
        let k_min = match map.get("k_min") {
            Some(v) => parse_value("k_min", v)?,
            None => DEFAULT_K_MIN,
        };
        let k_max = match map.get("k_max") {
            Some(v) => parse_value("k_max", v)?,
            None => DEFAULT_K_MAX,
        };
        let restarts = match map.get("restarts") {
            Some(v) => parse_value("restarts", v)?,
            None => DEFAULT_RESTARTS,
        };
        let feature_dim = match map.get("feature_dim") {
            Some(v) => parse_value("feature_dim", v)?,
            None => DEFAULT_FEATURE_DIM,
        };
        let hidden_dim = match map.get("hidden_dim") {
            Some(v) => parse_value("hidden_dim", v)?,
            None => DEFAULT_HIDDEN_DIM,
        };
        let embed_dim = match map.get("embed_dim") {
            Some(v) => parse_value("embed_dim", v)?,
            None => DEFAULT_EMBED_DIM,
        };
        let stage1 = match map.get("stage1") {
            Some(v) => parse_bool("stage1", v)?,
            None => true,
        };
        let stage2 = match map.get("stage2") {
            Some(v) => parse_bool("stage2", v)?,
            None => true,
        };
        let stage3 = match map.get("stage3") {
            Some(v) => parse_bool("stage3", v)?,
            None => true,
        };
        let mut stage1_cfg = TrainConfig::for_stage(Stage::ConsecutivePairs);
        let mut stage2_cfg = TrainConfig::for_stage(Stage::NeighborIntent);
        let mut stage3_cfg = TrainConfig::for_stage(Stage::JointClustering);
        for cfg in [&mut stage1_cfg, &mut stage2_cfg, &mut stage3_cfg] {
            cfg.seed = seed;
            cfg.restarts = restarts;
            if let Some(v) = map.get("alpha") {
                cfg.alpha = parse_value("alpha", v)?;
            }
        }
        apply_stage_overrides(&mut stage1_cfg, map, "stage1")?;
        apply_stage_overrides(&mut stage2_cfg, map, "stage2")?;
        apply_stage_overrides(&mut stage3_cfg, map, "stage3")?;
        stage1_cfg.validate()?;
        stage2_cfg.validate()?;
        stage3_cfg.validate()?;
        if let Some(k) = k {
            if k == 0 {
                return Err(Error::Config("k must be positive".to_string()));
            }
        } else if k_min < 2 || k_min > k_max {
            return Err(Error::Config(format!(
                "invalid k range [{k_min}, {k_max}]"
            )));
        }
        Ok(Self {
            corpus,
            labeled,
            embeddings_in,
            out_dir,
            task,
            seed,
            k,
            k_min,
            k_max,
            restarts,
            feature_dim,
            hidden_dim,
            embed_dim,
            stage1,
            stage2,
            stage3,
            stage1_cfg,
            stage2_cfg,
            stage3_cfg,
            resolved: map.entries().clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_follow_the_documented_values() {
        let mut map = ConfigMap::new();
        map.set("corpus", "corpus.jsonl").unwrap();
        let cfg = PipelineConfig::resolve(&map).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.task, 1);
        assert_eq!(cfg.k, None);
        assert_eq!((cfg.k_min, cfg.k_max), (2, 30));
        assert_eq!(cfg.feature_dim, 2048);
        assert!(cfg.stage1 && cfg.stage2 && cfg.stage3);
        assert_eq!(cfg.stage1_cfg.epochs, 10);
        assert_eq!(cfg.stage3_cfg.epochs, 20);
        assert_eq!(cfg.stage3_cfg.eta, 10.0);
        assert_eq!(cfg.stage2_cfg.tau, 0.1);
    }

    #[test]
    fn per_stage_overrides_beat_shared_keys() {
        let mut map = ConfigMap::new();
        map.set("corpus", "c.jsonl").unwrap();
        map.set("tau", "0.2").unwrap();
        map.set("stage3.tau", "1.0").unwrap();
        map.set("epochs", "4").unwrap();
        let cfg = PipelineConfig::resolve(&map).unwrap();
        assert_eq!(cfg.stage1_cfg.tau, 0.2);
        assert_eq!(cfg.stage2_cfg.tau, 0.2);
        assert_eq!(cfg.stage3_cfg.tau, 1.0);
        assert_eq!(cfg.stage1_cfg.epochs, 4);
        assert_eq!(cfg.stage3_cfg.epochs, 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut map = ConfigMap::new();
        assert!(map.set("corpsu", "x").is_err());
        assert!(map.set("stage3.learning", "x").is_err());
    }

    #[test]
    fn file_parsing_handles_comments_and_errors() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "# comment\nseed = 7\ncorpus = data.jsonl  # inline").unwrap();
        file.flush().unwrap();
        let mut map = ConfigMap::new();
        map.load_file(file.path()).unwrap();
        assert_eq!(map.get("seed"), Some("7"));
        assert_eq!(map.get("corpus"), Some("data.jsonl"));

        let mut bad = tempfile::NamedTempFile::new().unwrap();
        writeln!(bad, "just words").unwrap();
        bad.flush().unwrap();
        let mut map = ConfigMap::new();
        assert!(map.load_file(bad.path()).is_err());
    }

    #[test]
    fn needs_an_input() {
        let map = ConfigMap::new();
        assert!(PipelineConfig::resolve(&map).is_err());
    }
}
