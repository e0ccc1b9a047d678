//! Black-box membership scores computed from a single prediction record.
//!
//! Every score is oriented so that a higher value means "more likely a
//! member". Logarithms are natural.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{PredictionRecord, PROB_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Loss,
    Confidence,
    Entropy,
    ScaledLogit,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] = [
        AttackKind::Loss,
        AttackKind::Confidence,
        AttackKind::Entropy,
        AttackKind::ScaledLogit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::Loss => "loss",
            AttackKind::Confidence => "confidence",
            AttackKind::Entropy => "entropy",
            AttackKind::ScaledLogit => "scaled_logit",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "loss" => Ok(AttackKind::Loss),
            "confidence" => Ok(AttackKind::Confidence),
            "entropy" => Ok(AttackKind::Entropy),
            "scaled_logit" => Ok(AttackKind::ScaledLogit),
            _ => Err(Error::UnknownAttack(s.to_string())),
        }
    }
}

/// Shannon entropy in nats with `0·log 0 = 0`.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// `log(p / (1 − p))` with `p` clamped to `[1e-12, 1 − 1e-12]`.
pub fn scaled_logit(p: f64) -> f64 {
    let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    p.ln() - (1.0 - p).ln()
}

pub fn attack_score(kind: AttackKind, record: &PredictionRecord) -> f64 {
    match kind {
        AttackKind::Loss => -record.loss,
        AttackKind::Confidence => record.probs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        AttackKind::Entropy => -entropy(&record.probs),
        AttackKind::ScaledLogit => scaled_logit(record.probs[record.label]),
    }
}

/// Yeom et al. fixed-threshold rule: member iff loss is strictly below the
/// mean training loss.
pub fn yeom_decision(records: &[PredictionRecord], mean_train_loss: f64) -> Vec<bool> {
    records.iter().map(|r| r.loss < mean_train_loss).collect()
}

/// Oriented scores for one attack kind, aligned with ground-truth membership
/// and the dataset index of each sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackScores {
    pub kind: AttackKind,
    pub scores: Vec<f64>,
    pub is_member: Vec<bool>,
    pub indices: Vec<usize>,
}

impl AttackScores {
    pub fn new(kind: AttackKind, scores: Vec<f64>, is_member: Vec<bool>, indices: Vec<usize>) -> Result<Self> {
        if scores.len() != is_member.len() || scores.len() != indices.len() {
            return Err(Error::Dimension(format!(
                "{} scores, {} membership flags, {} indices",
                scores.len(),
                is_member.len(),
                indices.len()
            )));
        }
        Ok(Self {
            kind,
            scores,
            is_member,
            indices,
        })
    }

    /// Plain scores with positional indices.
    pub fn from_labels(kind: AttackKind, scores: Vec<f64>, is_member: Vec<bool>) -> Result<Self> {
        let indices = (0..scores.len()).collect();
        Self::new(kind, scores, is_member, indices)
    }

    pub fn from_records(kind: AttackKind, records: &[PredictionRecord]) -> Self {
        Self {
            kind,
            scores: records.iter().map(|r| attack_score(kind, r)).collect(),
            is_member: records.iter().map(|r| r.is_member).collect(),
            indices: records.iter().map(|r| r.index).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// CSV with header `index,kind,score,is_member`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,kind,score,is_member\n");
        for ((i, s), m) in self.indices.iter().zip(&self.scores).zip(&self.is_member) {
            out.push_str(&format!("{i},{},{s:?},{}\n", self.kind, u8::from(*m)));
        }
        out
    }
}
