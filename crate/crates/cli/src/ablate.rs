//! Staged ablation: run the pipeline with each cumulative stage subset and
//! tabulate accuracy per task plus the final-clustering silhouette.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::Context;

use crate::config::PipelineConfig;
use crate::pipeline::run_pipeline;

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    /// "none", "1", "1+2", or "1+2+3".
    pub stages: String,
    pub task1_acc: Option<f64>,
    pub task2_acc: Option<f64>,
    pub silhouette: f64,
}

const ROWS: [(&str, bool, bool, bool); 4] = [
    ("none", false, false, false),
    ("1", true, false, false),
    ("1+2", true, true, false),
    ("1+2+3", true, true, true),
];

/// Run the four cumulative stage combinations.
///
/// Each row is an independent pipeline run (same seed) into its own
/// subdirectory of the base output dir. Task-2 accuracy is reported when a
/// labeled held-out corpus is configured.
pub fn run_ablation(base: &PipelineConfig) -> anyhow::Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(ROWS.len());
    for (tag, s1, s2, s3) in ROWS {
        let mut cfg = base.clone();
        cfg.stage1 = s1;
        cfg.stage2 = s2;
        cfg.stage3 = s3;
        cfg.task = 1;
        cfg.out_dir = base.out_dir.join(format!("ablate_{tag}"));
        cfg.resolved.insert("stage1".into(), s1.to_string());
        cfg.resolved.insert("stage2".into(), s2.to_string());
        cfg.resolved.insert("stage3".into(), s3.to_string());
        cfg.resolved.insert("task".into(), "1".into());
        let outcome =
            run_pipeline(&cfg).with_context(|| format!("ablation row `{tag}` (task 1)"))?;
        let task1_acc = outcome.metrics.as_ref().map(|m| m.acc);
        let silhouette = outcome.silhouette;

        let task2_acc = if base.labeled.is_some() {
            let mut cfg2 = cfg.clone();
            cfg2.task = 2;
            cfg2.out_dir = base.out_dir.join(format!("ablate_{tag}_task2"));
            cfg2.resolved.insert("task".into(), "2".into());
            let outcome2 =
                run_pipeline(&cfg2).with_context(|| format!("ablation row `{tag}` (task 2)"))?;
            outcome2.metrics.as_ref().map(|m| m.acc)
        } else {
            None
        };
        rows.push(AblationRow {
            stages: tag.to_string(),
            task1_acc,
            task2_acc,
            silhouette,
        });
    }
    Ok(rows)
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

/// Write the ablation table as CSV.
pub fn write_ablation_csv(rows: &[AblationRow], path: &Path) -> anyhow::Result<()> {
    let mut file = fs::File::create(path)
        .with_context(|| format!("creating `{}`", path.display()))?;
    writeln!(file, "stages,task1_acc,task2_acc,silhouette")?;
    for row in rows {
        writeln!(
            file,
            "{},{},{},{}",
            row.stages,
            fmt_opt(row.task1_acc),
            fmt_opt(row.task2_acc),
            row.silhouette
        )?;
    }
    Ok(())
}
