use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::attacks::AttackKind;
use crate::data::DataSplit;
use crate::metrics::{Histogram, MiaReport, RocCurve};
use crate::nn::TrainHistory;

pub const SCHEMA_VERSION: u32 = 1;

/// Top-level field names every report must carry.
pub const REPORT_FIELDS: &[&str] = &[
    "schema_version",
    "valid",
    "config",
    "metadata",
    "dataset",
    "split",
    "validation_indices",
    "model",
    "train_acc",
    "test_acc",
    "history",
    "yeom",
    "attacks",
    "snapshots",
    "vulnerable_overlap",
    "outliers",
    "defense",
    "timing",
    "curves",
    "projection",
];

/// Field names of each entry in `attacks`.
pub const MIA_REPORT_FIELDS: &[&str] = &["auc", "advantage", "tpr_at_fpr", "vulnerable_member_indices", "kind"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema_version: u32,
    pub valid: bool,
    pub config: ExperimentConfig,
    pub metadata: ReportMetadata,
    pub dataset: DatasetSummary,
    /// Members here are the samples the model was trained on; members held
    /// out for early-stopping validation are listed separately.
    pub split: DataSplit,
    pub validation_indices: Vec<usize>,
    pub model: ModelSummary,
    pub train_acc: f64,
    pub test_acc: f64,
    pub history: TrainHistory,
    pub yeom: YeomSummary,
    pub attacks: Vec<MiaReport>,
    pub snapshots: Vec<EpochSnapshot>,
    pub vulnerable_overlap: Vec<OverlapEntry>,
    pub outliers: Vec<OutlierSummary>,
    pub defense: Option<DefenseBlock>,
    /// Wall-clock measurements; the only fields that vary between reruns.
    pub timing: Timing,
    pub curves: Vec<NamedCurve>,
    pub projection: Vec<ProjectionRow>,
}

impl ReportDocument {
    pub fn attack(&self, kind: AttackKind) -> Option<&MiaReport> {
        self.attacks.iter().find(|a| a.kind == kind)
    }

    /// Serialized report with the `timing` block removed, for rerun
    /// comparisons.
    pub fn deterministic_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("timing");
        }
        serde_json::to_string_pretty(&v).expect("report serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub optimizer: String,
    pub log_base: String,
    pub tie_policy: String,
    pub tpr_at_fpr_rule: String,
    pub reweight_rule: String,
    pub exclusion_policy: String,
    pub privacy_accounting: String,
    pub member_set: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub samples: usize,
    pub features: usize,
    pub classes: usize,
    pub members: usize,
    pub nonmembers: usize,
    pub noisy_indices: Vec<usize>,
    pub noisy_members: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub hidden_layers: Vec<usize>,
    pub parameters: usize,
    pub trained_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YeomSummary {
    pub mean_train_loss: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSnapshot {
    pub epoch: usize,
    pub kind: AttackKind,
    pub train_acc: f64,
    pub test_acc: f64,
    pub auc: f64,
    pub advantage: f64,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapEntry {
    pub fpr: String,
    pub a: AttackKind,
    pub b: AttackKind,
    pub intersection: usize,
    pub union: usize,
}

/// Centroid-distance statistics for one attack's vulnerable set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierSummary {
    pub kind: AttackKind,
    pub fpr: String,
    pub vulnerable: usize,
    pub vulnerable_noisy: usize,
    pub mean_outlier_vulnerable: Option<f64>,
    pub mean_outlier_members: f64,
    /// One-sided Welch test that vulnerable members sit farther from their
    /// class centroid than members overall.
    pub welch_t: Option<f64>,
    pub welch_df: Option<f64>,
    pub welch_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub kind: AttackKind,
    pub auc: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseRow {
    pub train_acc: f64,
    pub test_acc: f64,
    pub attacks: Vec<AttackRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseBlock {
    pub weight_floor: f64,
    pub preserve_argmax: bool,
    pub before: DefenseRow,
    pub after: DefenseRow,
    pub mean_weight: f64,
    pub adjusted_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub train_seconds: f64,
    pub defense_overhead_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCurve {
    pub kind: AttackKind,
    pub curve: RocCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRow {
    pub index: usize,
    pub x: f64,
    pub y: f64,
    pub class: usize,
    pub is_vulnerable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub variant: String,
    pub train_acc: f64,
    pub test_acc: f64,
    pub runtime_seconds: f64,
    pub auc: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseTable {
    pub attack: AttackKind,
    pub rows: Vec<CompareRow>,
}

impl DefenseTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,train_acc,test_acc,runtime_s,mia_auc,mia_adv\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.2},{:.2},{:.3},{:.2},{:.2}\n",
                r.variant,
                100.0 * r.train_acc,
                100.0 * r.test_acc,
                r.runtime_seconds,
                100.0 * r.auc,
                100.0 * r.advantage
            ));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<32} {:>10} {:>10} {:>11} {:>11} {:>11}\n",
            "Method", "Train Acc", "Test Acc", "Runtime(s)", "MIA AUC", "MIA Adv."
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<32} {:>10.2} {:>10.2} {:>11.3} {:>11.2} {:>11.2}\n",
                r.variant,
                100.0 * r.train_acc,
                100.0 * r.test_acc,
                r.runtime_seconds,
                100.0 * r.auc,
                100.0 * r.advantage
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionSummary {
    pub fpr: f64,
    pub excluded: Vec<usize>,
    pub excluded_noisy: usize,
    /// Members vulnerable after retraining that were not vulnerable before.
    pub new_vulnerable: Vec<usize>,
    pub notice: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionOutcome {
    pub before: ReportDocument,
    /// A copy of `before` when no member was excluded.
    pub after: ReportDocument,
    pub summary: ExclusionSummary,
}
