//! Experiment reports and their JSON, CSV, markdown and SVG renderings.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sixchan_core::sixchannel::ChannelOrder;
use sixchan_core::translate::TranslatorKind;

use crate::error::{HarnessError, Result, Stage};
use crate::grid::{Grid, GridRow, Table};
use crate::plot;
use crate::reference::reference_for;
use crate::spec::ExperimentSpec;

pub const SCHEMA_VERSION: u32 = 1;

pub const BANNER: &str = "not comparable: synthetic desk-scale data, random-init backbone";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub final_map: f64,
    pub final_epoch: usize,
    pub best_map: f64,
    pub best_epoch: usize,
    pub pr_curve: Vec<(f64, f64)>,
}

/// Mean and sample standard deviation (n - 1) over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    /// Absent with fewer than two values.
    pub std: Option<f64>,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: None, std: None, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = (n > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
        Self {
            mean: Some(mean),
            std,
            n,
        }
    }

    /// `0.812 ± 0.034`, or `-` without values.
    pub fn display(&self) -> String {
        match (self.mean, self.std) {
            (None, _) => "-".into(),
            (Some(m), None) => format!("{m:.3}"),
            (Some(m), Some(s)) => format!("{m:.3} ± {s:.3}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub id: String,
    pub table: Table,
    pub row: usize,
    pub train_set: String,
    pub test_set: String,
    pub channels: usize,
    /// Ascending seed order.
    pub per_seed: Vec<SeedResult>,
    pub final_map: Summary,
    pub best_map: Summary,
    pub paper_reference_map: Option<f64>,
}

impl ReportRow {
    pub fn new(row: &GridRow, per_seed: Vec<SeedResult>) -> Self {
        let finals: Vec<f64> = per_seed.iter().map(|s| s.final_map).collect();
        let bests: Vec<f64> = per_seed.iter().map(|s| s.best_map).collect();
        Self {
            id: row.id(),
            table: row.table,
            row: row.row,
            train_set: row.train.describe().to_string(),
            test_set: row.test.describe().to_string(),
            channels: row.channels(),
            final_map: Summary::of(&finals),
            best_map: Summary::of(&bests),
            per_seed,
            paper_reference_map: reference_for(row),
        }
    }

    pub fn seed(&self, seed: u64) -> Option<&SeedResult> {
        self.per_seed.iter().find(|s| s.seed == seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub job: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub seeds: Vec<u64>,
    pub config_hash: String,
    pub code_version: String,
    pub per_split: usize,
    pub epochs: usize,
    pub eval_epochs: Vec<usize>,
    /// Build time of every stage entry used, as recorded when it was built.
    pub stages: Vec<StageTiming>,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub banner: String,
    pub grid: Grid,
    pub translator: TranslatorKind,
    pub channel_order: ChannelOrder,
    pub rows: Vec<ReportRow>,
    pub environment: Environment,
    pub failure: Option<Failure>,
}

impl ExperimentReport {
    pub fn new(spec: &ExperimentSpec, rows: Vec<ReportRow>, environment: Environment, failure: Option<Failure>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            banner: BANNER.to_string(),
            grid: spec.grid,
            translator: spec.translator,
            channel_order: spec.channel_order,
            rows,
            environment,
            failure,
        }
    }

    pub fn row(&self, id: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.id == id)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let report: Self = serde_json::from_str(&text).map_err(|e| HarnessError::json(path.display().to_string(), e))?;
        if report.schema_version != SCHEMA_VERSION {
            return Err(HarnessError::Config(format!(
                "report schema version {} is not supported (expected {SCHEMA_VERSION})",
                report.schema_version
            )));
        }
        Ok(report)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "id,table,row,train_set,test_set,channels,seeds,final_map_mean,final_map_std,best_map_mean,best_map_std,paper_reference_map\n",
        );
        let num = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        for r in &self.rows {
            let seeds: Vec<String> = r.per_seed.iter().map(|s| s.seed.to_string()).collect();
            let _ = writeln!(
                out,
                "{},{},{},\"{}\",\"{}\",{},{},{},{},{},{},{}",
                r.id,
                r.table.number(),
                r.row,
                r.train_set,
                r.test_set,
                r.channels,
                seeds.join(";"),
                num(r.final_map.mean),
                num(r.final_map.std),
                num(r.best_map.mean),
                num(r.best_map.std),
                num(r.paper_reference_map),
            );
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# Experiment report\n");
        let _ = writeln!(out, "> **{}**", self.banner);
        let _ = writeln!(
            out,
            "> Desk-scale mAPs (synthetic scenes, {} images per split, small randomly initialised backbone) sit next to the published values for orientation only.\n",
            self.environment.per_split
        );
        let seeds: Vec<String> = self.environment.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(
            out,
            "Translator: {:?}. Channel order: {:?}. Seeds: {}. Epochs: {} (checkpoints evaluated at {:?}). Config hash: `{}`.\n",
            self.translator,
            self.channel_order,
            seeds.join(", "),
            self.environment.epochs,
            self.environment.eval_epochs,
            self.environment.config_hash
        );
        if let Some(f) = &self.failure {
            let _ = writeln!(out, "**Incomplete: stage `{}` failed:** {}\n", f.stage, f.message);
        }
        let mut tables: Vec<Table> = self.rows.iter().map(|r| r.table).collect();
        tables.dedup();
        for t in tables {
            let _ = writeln!(out, "## Table {}: {}\n", t.number(), t.title());
            let _ = writeln!(out, "| Train set | Test set | Ch | Desk mAP (final) | Desk mAP (best) | Per seed (final) | Published mAP (full scale) |");
            let _ = writeln!(out, "|---|---|---|---|---|---|---|");
            for r in self.rows.iter().filter(|r| r.table == t) {
                let per: Vec<String> = r.per_seed.iter().map(|s| format!("{}: {:.3}", s.seed, s.final_map)).collect();
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} | {} | {} |",
                    r.train_set,
                    r.test_set,
                    r.channels,
                    r.final_map.display(),
                    r.best_map.display(),
                    per.join(", "),
                    r.paper_reference_map.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into())
                );
            }
            let _ = writeln!(out);
        }
        let _ = writeln!(out, "## Environment\n");
        let _ = writeln!(out, "| Stage | Job | Seconds |");
        let _ = writeln!(out, "|---|---|---|");
        for s in &self.environment.stages {
            let _ = writeln!(out, "| {} | {} | {:.1} |", s.stage, s.job, s.seconds);
        }
        let _ = writeln!(out, "\nTotal: {:.1} s", self.environment.total_seconds);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Markdown,
    Plots,
    All,
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf> {
    fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
    Ok(path)
}

/// Writes the requested renderings into `dir` and returns the files written.
/// Plots go to `dir/plots`: one PR curve per row and one bar chart per
/// table.
pub fn render_report(report: &ExperimentReport, format: Format, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut files = Vec::new();
    let all = format == Format::All;
    if all || format == Format::Json {
        files.push(write(dir.join("report.json"), &report.to_json())?);
    }
    if all || format == Format::Csv {
        files.push(write(dir.join("report.csv"), &report.to_csv())?);
    }
    if all || format == Format::Markdown {
        files.push(write(dir.join("report.md"), &report.to_markdown())?);
    }
    if all || format == Format::Plots {
        let plots = dir.join("plots");
        fs::create_dir_all(&plots).map_err(|e| HarnessError::io(&plots, e))?;
        for r in &report.rows {
            files.push(write(plots.join(format!("pr-{}.svg", r.id)), &plot::pr_curves(r))?);
        }
        let mut tables: Vec<Table> = report.rows.iter().map(|r| r.table).collect();
        tables.dedup();
        for t in tables {
            let rows: Vec<&ReportRow> = report.rows.iter().filter(|r| r.table == t).collect();
            files.push(write(plots.join(format!("bars-table{}.svg", t.number())), &plot::bar_chart(t, &rows))?);
        }
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_uses_sample_deviation() {
        let s = Summary::of(&[0.2, 0.4, 0.6]);
        assert!((s.mean.unwrap() - 0.4).abs() < 1e-12);
        assert!((s.std.unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(Summary::of(&[0.5]).std, None);
        assert_eq!(Summary::of(&[]).display(), "-");
    }
}
