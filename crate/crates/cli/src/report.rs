use std::collections::BTreeMap;
use std::fmt::Write as _;

use reqadapt::corpus::Task;
use reqadapt::eval::{FiveByTwoResult, Metric, MetricsReport};
use reqadapt::train::TrainReport;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::Stamp;

/// A row of the comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Majority,
    Pooling,
    FrozenSentence,
    Encoder,
    EncoderAdapted,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::Majority => "Majority",
            Variant::Pooling => "Pooling",
            Variant::FrozenSentence => "Frozen-sentence",
            Variant::Encoder => "Encoder",
            Variant::EncoderAdapted => "Encoder+adapted",
        }
    }

    /// File-name form.
    pub fn slug(self) -> &'static str {
        match self {
            Variant::Majority => "majority",
            Variant::Pooling => "pooling",
            Variant::FrozenSentence => "frozen-sentence",
            Variant::Encoder => "encoder",
            Variant::EncoderAdapted => "encoder-adapted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub variant: Variant,
    pub cells: BTreeMap<Task, MetricsReport>,
}

/// Adapted-minus-vanilla significance for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub metric: Metric,
    /// Mean of the ten fold differences, in metric units.
    pub improvement: f64,
    pub test: FiveByTwoResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub stamp: Stamp,
    pub tasks: Vec<Task>,
    pub metrics: Vec<Metric>,
    pub rows: Vec<Row>,
    pub significance: BTreeMap<Task, Significance>,
}

impl ComparisonTable {
    pub fn row(&self, variant: Variant) -> Option<&Row> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn cell(&self, variant: Variant, task: Task) -> Option<&MetricsReport> {
        self.row(variant).and_then(|r| r.cells.get(&task))
    }

    /// Every adapted row needs its vanilla counterpart.
    pub fn check(&self) -> Result<(), String> {
        if self.row(Variant::EncoderAdapted).is_some() && self.row(Variant::Encoder).is_none() {
            return Err("an adapted row needs a vanilla Encoder row".into());
        }
        Ok(())
    }

    /// Aligned plain-text form with "ACC / F1 / w-F1" style cells in percent.
    pub fn render(&self) -> String {
        let short = |m: &Metric| match m {
            Metric::Accuracy => "ACC",
            Metric::MacroF1 => "F1",
            Metric::WeightedF1 => "w-F1",
        };
        let unit = self.metrics.iter().map(short).collect::<Vec<_>>().join(" / ");
        let cell = |r: Option<&MetricsReport>| match r {
            Some(r) => self
                .metrics
                .iter()
                .map(|m| format!("{:.2}", 100.0 * m.of(r)))
                .collect::<Vec<_>>()
                .join(" / "),
            None => "-".into(),
        };
        let mut grid: Vec<Vec<String>> = vec![std::iter::once("Model".to_string())
            .chain(self.tasks.iter().map(|t| title(*t)))
            .collect()];
        for row in &self.rows {
            grid.push(
                std::iter::once(row.variant.label().to_string())
                    .chain(self.tasks.iter().map(|t| cell(row.cells.get(t))))
                    .collect(),
            );
        }
        let widths: Vec<usize> = (0..grid[0].len())
            .map(|c| grid.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let line = |r: &[String]| {
            r.iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:<w$}"))
                .collect::<Vec<_>>()
                .join(" | ")
                .trim_end()
                .to_string()
        };
        let mut out = format!(
            "config {} seed {}\ncells: {unit} (%)\n\n",
            self.stamp.config_hash, self.stamp.seed
        );
        out.push_str(&line(&grid[0]));
        out.push('\n');
        out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
        out.push('\n');
        for r in &grid[1..] {
            out.push_str(&line(r));
            out.push('\n');
        }
        if !self.significance.is_empty() {
            let _ = writeln!(out, "\n{} vs {}, 5x2cv F-test", Variant::EncoderAdapted.label(), Variant::Encoder.label());
            for (task, s) in &self.significance {
                let verdict = if s.test.no_difference {
                    "no difference"
                } else if s.test.reject {
                    "significant"
                } else {
                    "not significant"
                };
                let _ = writeln!(
                    out,
                    "{:<9} {}: {:+.2} (p = {:.4}, F = {:.3}, alpha {}) {verdict}",
                    title(*task),
                    short(&s.metric),
                    100.0 * s.improvement,
                    s.test.p_value,
                    s.test.f,
                    s.test.alpha
                );
            }
        }
        out
    }
}

fn title(task: Task) -> String {
    let name = task.name();
    name[..1].to_uppercase() + &name[1..]
}

/// In-domain and generic MLM validation losses around stage 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationSummary {
    pub in_domain_before: f64,
    pub in_domain_after: f64,
    pub generic_before: f64,
    pub generic_after: f64,
}

/// The reproducible part of a run: no timings, no paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub stamp: Stamp,
    pub pretrain_val_loss: Option<f64>,
    pub adaptation: Option<AdaptationSummary>,
    pub table: ComparisonTable,
}

/// Everything about one `full` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub stamp: Stamp,
    pub config: ExperimentConfig,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub wall_clock_secs: f64,
    pub metrics: MetricsFile,
    pub train_reports: BTreeMap<String, TrainReport>,
    pub checkpoints: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}
