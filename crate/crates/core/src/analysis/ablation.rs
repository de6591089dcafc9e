//! One seeded train + eval per axis value, collected into a table.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::eval::evaluate_mcq;
use crate::error::{CoeError, Result};
use crate::policy::PolicyParams;
use crate::reward::{SimilarityMode, SimilarityModel};
use crate::trainer::{train, train_from_sft, RunPaths, TaskEncoder, TrainConfig, TrainingCurvePoint};
use crate::world::Sample;

/// Curve rows averaged for the "final" training metrics.
pub const FINAL_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationAxis {
    GroupSize,
    EventLength,
    SimilarityMode,
    /// `on` keeps the similarity reward, `off` drops it and rescales the
    /// accuracy and chain weights to sum to one.
    NoRs,
}

impl FromStr for AblationAxis {
    type Err = CoeError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "group-size" => Ok(AblationAxis::GroupSize),
            "event-length" => Ok(AblationAxis::EventLength),
            "similarity-mode" => Ok(AblationAxis::SimilarityMode),
            "no-rs" => Ok(AblationAxis::NoRs),
            other => Err(CoeError::InvalidConfig(format!(
                "unknown ablation axis {other:?} (group-size, event-length, similarity-mode, no-rs)"
            ))),
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationAxis::GroupSize => "group-size",
            AblationAxis::EventLength => "event-length",
            AblationAxis::SimilarityMode => "similarity-mode",
            AblationAxis::NoRs => "no-rs",
        })
    }
}

impl AblationAxis {
    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &TrainConfig, value: &str) -> Result<TrainConfig> {
        let bad = || CoeError::InvalidConfig(format!("bad value {value:?} for axis {self}"));
        let mut c = base.clone();
        match self {
            AblationAxis::GroupSize => c.group_size = value.parse().map_err(|_| bad())?,
            AblationAxis::EventLength => c.rewards.target_length = value.parse().map_err(|_| bad())?,
            AblationAxis::SimilarityMode => c.similarity_mode = value.parse().map_err(|_| bad())?,
            AblationAxis::NoRs => match value {
                "on" => {}
                "off" => {
                    let kept = c.rewards.alpha + c.rewards.beta;
                    if kept <= 0.0 {
                        return Err(CoeError::InvalidConfig(
                            "cannot drop r_s when alpha + beta is 0".into(),
                        ));
                    }
                    c.rewards.alpha /= kept;
                    c.rewards.beta = 1.0 - c.rewards.alpha;
                }
                _ => return Err(bad()),
            },
        }
        c.validate()?;
        Ok(c)
    }

    pub fn default_values(self) -> &'static [&'static str] {
        match self {
            AblationAxis::GroupSize => &["2", "4", "8"],
            AblationAxis::EventLength => &["1", "3", "5"],
            AblationAxis::SimilarityMode => &["video-level", "frame-averaged"],
            AblationAxis::NoRs => &["on", "off"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: String,
    pub value: String,
    pub final_r_a: f64,
    pub final_r_s: f64,
    pub final_r_e: f64,
    pub mcq_accuracy: f64,
    pub tag_valid_rate: f64,
    pub mean_chain_length: f64,
    /// Summed GRPO step time.
    pub train_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

const COLUMNS: [&str; 9] = [
    "axis",
    "value",
    "final_r_a",
    "final_r_s",
    "final_r_e",
    "mcq_accuracy",
    "tag_valid_rate",
    "mean_chain_length",
    "train_ms",
];

impl AblationRow {
    fn cells(&self) -> [String; 9] {
        [
            self.axis.clone(),
            self.value.clone(),
            format!("{:.4}", self.final_r_a),
            format!("{:.4}", self.final_r_s),
            format!("{:.4}", self.final_r_e),
            format!("{:.4}", self.mcq_accuracy),
            format!("{:.4}", self.tag_valid_rate),
            format!("{:.3}", self.mean_chain_length),
            format!("{:.0}", self.train_ms),
        ]
    }
}

impl AblationTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(COLUMNS)?;
        for r in &self.rows {
            w.write_record(r.cells())?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| CoeError::InvariantViolation(format!("csv flush: {e}")))?;
        String::from_utf8(bytes).map_err(|e| CoeError::InvariantViolation(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let cells: Vec<[String; 9]> = self.rows.iter().map(AblationRow::cells).collect();
        let widths: Vec<usize> = (0..COLUMNS.len())
            .map(|i| cells.iter().map(|c| c[i].len()).chain([COLUMNS[i].len()]).max().unwrap_or(0))
            .collect();
        let line = |items: Vec<&str>| {
            items
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        let mut out = line(COLUMNS.to_vec());
        out.push('\n');
        for c in &cells {
            out.push_str(&line(c.iter().map(String::as_str).collect()));
            out.push('\n');
        }
        out
    }
}

fn tail_mean(curves: &[TrainingCurvePoint], f: impl Fn(&TrainingCurvePoint) -> f64) -> f64 {
    let tail = &curves[curves.len().saturating_sub(FINAL_WINDOW)..];
    if tail.is_empty() {
        return 0.0;
    }
    tail.iter().map(f).sum::<f64>() / tail.len() as f64
}

/// Inputs shared by every cell of an ablation.
pub struct AblationSetup<'a> {
    pub base: &'a TrainConfig,
    pub train_set: &'a [Sample],
    pub eval_set: &'a [Sample],
    pub similarity: &'a dyn SimilarityModel,
    /// Each cell writes its run under `root/<axis>_<value>`.
    pub root: &'a Path,
    pub sft: SftSharing<'a>,
}

/// Where each cell's fine-tuned starting point comes from. Sharing is valid
/// because no axis touches the fine-tuning inputs.
#[derive(Debug, Clone, Copy)]
pub enum SftSharing<'a> {
    /// Every cell fine-tunes on its own.
    PerCell,
    /// The first cell fine-tunes, later cells reuse its weights.
    FirstCell,
    /// Every cell starts from these weights.
    Given(&'a PolicyParams),
}

pub fn run_ablation(setup: &AblationSetup<'_>, axis: AblationAxis, values: &[String]) -> Result<AblationTable> {
    if values.is_empty() {
        return Err(CoeError::InvalidConfig("ablation needs at least one value".into()));
    }
    let encoder = TaskEncoder::new(&setup.base.world);
    let mut shared: Option<PolicyParams> = match setup.sft {
        SftSharing::Given(p) => Some(p.clone()),
        _ => None,
    };
    let mut table = AblationTable::default();
    for value in values {
        let cell = |e: CoeError| CoeError::AblationCell {
            axis: axis.to_string(),
            value: value.clone(),
            source: Box::new(e),
        };
        let config = axis.apply(setup.base, value).map_err(cell)?;
        let paths = RunPaths::new(setup.root.join(format!("{axis}_{value}")));
        log::info!("ablation cell {axis}={value}");
        let outcome = match &shared {
            Some(sft) => train_from_sft(&config, setup.train_set, &paths, setup.similarity, sft),
            None => train(&config, setup.train_set, &paths, false, setup.similarity),
        }
        .map_err(cell)?;
        if matches!(setup.sft, SftSharing::FirstCell) && shared.is_none() {
            shared = Some(outcome.sft_params.clone());
        }
        let mode: SimilarityMode = config.similarity_mode;
        let (metrics, _) = evaluate_mcq(
            &outcome.params,
            &encoder,
            setup.eval_set,
            config.max_new,
            setup.similarity,
            mode,
        )
        .map_err(cell)?;
        let curves = &outcome.curves;
        table.rows.push(AblationRow {
            axis: axis.to_string(),
            value: value.clone(),
            final_r_a: tail_mean(curves, |p| p.r_a),
            final_r_s: tail_mean(curves, |p| p.r_s),
            final_r_e: tail_mean(curves, |p| p.r_e),
            mcq_accuracy: metrics.accuracy,
            tag_valid_rate: metrics.tag_valid_rate,
            mean_chain_length: metrics.mean_chain_length,
            train_ms: curves.iter().map(|p| p.ms as f64).sum(),
        });
    }
    Ok(table)
}
