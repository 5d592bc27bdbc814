//! Report serialization: JSON for machine diffing, CSV shaped like the usual
//! robustness tables (rows = attack presets, columns = models) for humans.
//!
//! Files are written to a temporary sibling and renamed into place, so a
//! failed run never leaves partial reports behind.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalReport;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Everything one `evaluate` invocation produced for one model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub model_name: String,
    pub reports: Vec<EvalReport>,
}

impl RunReport {
    pub fn new(model_name: impl Into<String>, reports: Vec<EvalReport>) -> Self {
        Self { schema_version: REPORT_SCHEMA_VERSION, model_name: model_name.into(), reports }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile { path: path.to_path_buf() });
        }
        let report: RunReport = serde_json::from_str(&fs::read_to_string(path)?)?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::ModelVersion {
                found: report.schema_version,
                supported: REPORT_SCHEMA_VERSION,
            });
        }
        Ok(report)
    }
}

/// Write bytes to `path` atomically (write to a sibling, then rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// CSV summary of one run: one row per preset.
pub fn accuracy_csv(run: &RunReport) -> String {
    let mut out = String::from(
        "preset,norm,epsilon,space,post_quantize,clean_accuracy,robust_accuracy\n",
    );
    for r in &run.reports {
        let c = &r.config;
        out.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6}\n",
            c.preset,
            c.norm.name(),
            c.epsilon,
            space_name(c.space),
            c.post_quantize,
            r.clean_accuracy,
            r.robust_accuracy
        ));
    }
    out
}

fn space_name(space: crate::attack::AttackSpace) -> &'static str {
    match space {
        crate::attack::AttackSpace::InputSpace => "input",
        crate::attack::AttackSpace::NetworkSpace => "network",
    }
}

/// Plain count matrix, one CSV row per true class.
pub fn confusion_csv(report: &EvalReport) -> String {
    let mut out = String::new();
    for row in &report.confusion {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Write the full output set of one evaluate run into `dir`:
/// `report.json`, `robust_accuracy.csv`, and one confusion CSV per preset.
pub fn write_run_outputs(dir: &Path, run: &RunReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join("report.json"), run.to_json()?.as_bytes())?;
    write_atomic(&dir.join("robust_accuracy.csv"), accuracy_csv(run).as_bytes())?;
    for r in &run.reports {
        let name = format!(
            "confusion_{}_{}{}.csv",
            r.config.preset.to_lowercase().replace('-', "_"),
            r.config.norm.name(),
            if r.config.post_quantize { "_quantized" } else { "" },
        );
        write_atomic(&dir.join(name), confusion_csv(r).as_bytes())?;
    }
    Ok(())
}

/// One row of the merged comparison table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergedRow {
    pub preset: String,
    pub norm: String,
    pub epsilon: f64,
    pub space: String,
    pub post_quantize: bool,
    /// Robust accuracy per model, aligned with `MergedReport::models`;
    /// `null` when a model was not evaluated under this row.
    pub values: Vec<Option<f64>>,
    /// Models achieving the row maximum (the "highest accuracy" flag).
    pub best: Vec<String>,
}

/// Multi-model aggregation: one column per model, one row per attack
/// configuration, with the per-row maximum flagged.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergedReport {
    pub schema_version: u32,
    pub models: Vec<String>,
    pub rows: Vec<MergedRow>,
}

pub fn merge_runs(runs: &[RunReport]) -> Result<MergedReport> {
    if runs.is_empty() {
        return Err(Error::config("report.inputs", "need at least one report file"));
    }
    let mut names = BTreeSet::new();
    for run in runs {
        if !names.insert(run.model_name.clone()) {
            return Err(Error::config(
                "report.inputs",
                format!("duplicate model name `{}`", run.model_name),
            ));
        }
    }
    let models: Vec<String> = names.into_iter().collect();

    // Row key: the attack configuration, in first-seen order.
    let mut keys: Vec<(String, String, String, bool, String)> = Vec::new();
    for run in runs {
        for r in &run.reports {
            let key = (
                r.config.preset.clone(),
                r.config.norm.name().to_string(),
                space_name(r.config.space).to_string(),
                r.config.post_quantize,
                format!("{:.9}", r.config.epsilon),
            );
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
    }

    let mut rows = Vec::with_capacity(keys.len());
    for (preset, norm, space, post_quantize, eps_key) in keys {
        let mut values: Vec<Option<f64>> = vec![None; models.len()];
        let mut epsilon = 0.0;
        for run in runs {
            let col = models.iter().position(|m| m == &run.model_name).unwrap();
            for r in &run.reports {
                if r.config.preset == preset
                    && r.config.norm.name() == norm
                    && space_name(r.config.space) == space
                    && r.config.post_quantize == post_quantize
                    && format!("{:.9}", r.config.epsilon) == eps_key
                {
                    values[col] = Some(r.robust_accuracy);
                    epsilon = r.config.epsilon;
                }
            }
        }
        let max = values.iter().flatten().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let best = models
            .iter()
            .zip(&values)
            .filter(|(_, v)| v.map(|x| x == max).unwrap_or(false))
            .map(|(m, _)| m.clone())
            .collect();
        rows.push(MergedRow { preset, norm, epsilon, space, post_quantize, values, best });
    }
    Ok(MergedReport { schema_version: REPORT_SCHEMA_VERSION, models, rows })
}

pub fn merged_csv(m: &MergedReport) -> String {
    let mut out = String::from("norm,preset,space,post_quantize,epsilon");
    for model in &m.models {
        out.push(',');
        out.push_str(model);
    }
    out.push_str(",best\n");
    for row in &m.rows {
        out.push_str(&format!(
            "{},{},{},{},{}",
            row.norm, row.preset, row.space, row.post_quantize, row.epsilon
        ));
        for v in &row.values {
            match v {
                Some(v) => out.push_str(&format!(",{v:.6}")),
                None => out.push(','),
            }
        }
        out.push(',');
        out.push_str(&row.best.join("|"));
        out.push('\n');
    }
    out
}

pub fn write_merged_outputs(dir: &Path, merged: &MergedReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join("comparison.json"), serde_json::to_string_pretty(merged)?.as_bytes())?;
    write_atomic(&dir.join("comparison.csv"), merged_csv(merged).as_bytes())?;
    Ok(())
}
