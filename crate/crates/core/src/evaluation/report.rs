use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::experiments::{AblationTable, CrossGenMatrix};
use super::figures::{condition_bars_svg, heatmap_svg};
use super::{mean, EvalReport};
use crate::error::{Error, Result};

pub const REPORT_FILE: &str = "report.json";
pub const HEATMAP_FILE: &str = "crossgen_heatmap.svg";
pub const BARS_FILE: &str = "condition_bars.svg";

/// Optional experiment results rendered alongside a report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportArtifacts {
    pub cross_generator: Option<CrossGenMatrix>,
    pub ablation: Option<AblationTable>,
}

/// On-disk report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    #[serde(flatten)]
    pub report: EvalReport,
    pub tool_version: String,
    #[serde(default)]
    pub notes: Vec<String>,
    #[serde(default, flatten)]
    pub artifacts: ReportArtifacts,
}

pub fn load_report(path: &Path) -> Result<ReportFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
}

/// Writes `report.json` and the SVG figures into `out_dir`; returns the
/// paths written.
pub fn emit_report(
    report: &EvalReport,
    artifacts: &ReportArtifacts,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if report.per_target_auc.is_empty() {
        return Err(Error::Data("report has no per-target AUCs".into()));
    }
    let recomputed = mean(report.per_target_auc.values().copied());
    if (recomputed - report.mean_auc).abs() > 1e-12 {
        return Err(Error::Data(format!(
            "mean_auc {} disagrees with per-target mean {recomputed}",
            report.mean_auc
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut notes = Vec::new();
    let mut written = Vec::new();
    let mut write = |name: &str, text: &str| -> Result<()> {
        let path = out_dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };

    if let Some(m) = &artifacts.cross_generator {
        write(HEATMAP_FILE, &heatmap_svg(&m.train_generators, &m.test_generators, &m.auc, "Cross-generator AUC (rows: train)"))?;
    } else if !report.per_generator_auc.is_empty() {
        let cols: Vec<String> = report.per_generator_auc.keys().cloned().collect();
        let row = vec![report.per_generator_auc.values().copied().collect()];
        write(HEATMAP_FILE, &heatmap_svg(&[report.condition.to_string()], &cols, &row, "Per-generator AUC"))?;
    } else {
        notes.push("crossgen heatmap skipped: no per-generator results".to_string());
    }

    let (labels, values, title) = match &artifacts.ablation {
        Some(t) => (
            t.rows.iter().map(|r| r.setting.clone()).collect::<Vec<_>>(),
            t.rows.iter().map(|r| r.mean_auc).collect::<Vec<_>>(),
            format!("Mean AUC by {}", t.axis),
        ),
        None => (
            vec![report.condition.to_string()],
            vec![report.mean_auc],
            "Mean AUC".to_string(),
        ),
    };
    write(BARS_FILE, &condition_bars_svg(&labels, &values, &title))?;

    let file = ReportFile {
        report: report.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        notes,
        artifacts: artifacts.clone(),
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| Error::Serde(e.to_string()))?;
    write(REPORT_FILE, &text)?;
    Ok(written)
}
