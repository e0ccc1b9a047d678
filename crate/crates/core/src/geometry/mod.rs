//! Latent-space geometry of training members and the inference-time
//! logit-reweighting defense.
//!
//! Each class centroid is the mean latent vector of that class's members.
//! Samples whose latent vector points away from their class centroid are
//! the border samples that threshold attacks keep exposing. The defense
//! blends every sample's logits toward the centroid logits of its predicted
//! class, weighting by the cosine similarity between the two.

mod pca;

use serde::{Deserialize, Serialize};

pub use pca::{project_2d, Projection};

use crate::error::{Error, Result};
use crate::nn::{argmax, cross_entropy_loss, softmax, MlpModel, PredictionRecord};

/// Which label assigns a record to a class when building centroids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// Ground-truth label; used for offline analysis.
    TrueLabel,
    /// The model's prediction; used by the defense, which has no labels.
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCentroid {
    pub class: usize,
    pub count: usize,
    pub latent_centroid: Vec<f64>,
    pub centroid_logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidTable {
    pub grouping: Grouping,
    pub entries: Vec<ClassCentroid>,
}

impl CentroidTable {
    pub fn get(&self, class: usize) -> Option<&ClassCentroid> {
        self.entries.get(class).filter(|e| e.class == class)
    }
}

/// Mean latent vector per class over member records; centroid logits are the
/// model's affine head applied to that mean. Every class must have at least
/// one record.
pub fn class_centroids(records: &[PredictionRecord], model: &MlpModel, grouping: Grouping) -> Result<CentroidTable> {
    let m = model.num_classes();
    let dim = model.latent_dim();
    let mut sums = vec![vec![0.0; dim]; m];
    let mut counts = vec![0usize; m];
    for r in records {
        if r.latent.len() != dim {
            return Err(Error::Dimension(format!(
                "record {} has latent width {}, model has {dim}",
                r.index,
                r.latent.len()
            )));
        }
        let c = match grouping {
            Grouping::TrueLabel => r.label,
            Grouping::Predicted => r.predicted(),
        };
        if c >= m {
            return Err(Error::InvalidInput(format!("record {} has class {c} >= {m}", r.index)));
        }
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(&r.latent) {
            *s += v;
        }
    }
    let empty: Vec<usize> = (0..m).filter(|&c| counts[c] == 0).collect();
    if !empty.is_empty() {
        return Err(Error::EmptyClasses(empty));
    }
    let entries = sums
        .into_iter()
        .zip(counts)
        .enumerate()
        .map(|(class, (sum, count))| {
            let latent_centroid: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
            let centroid_logits = model.head().apply(&latent_centroid);
            ClassCentroid {
                class,
                count,
                latent_centroid,
                centroid_logits,
            }
        })
        .collect();
    Ok(CentroidTable { grouping, entries })
}

/// Cosine similarity; `None` when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some((dot / (na * nb)).clamp(-1.0, 1.0))
    }
}

/// `1 − cos(latent, centroid of the true class)`; zero vectors score 1.
pub fn outlier_score(record: &PredictionRecord, table: &CentroidTable) -> Result<f64> {
    let entry = table
        .get(record.label)
        .ok_or_else(|| Error::InvalidInput(format!("no centroid for class {}", record.label)))?;
    Ok(1.0 - cosine(&record.latent, &entry.latent_centroid).unwrap_or(0.0))
}

pub fn outlier_scores(records: &[PredictionRecord], table: &CentroidTable) -> Result<Vec<f64>> {
    records.iter().map(|r| outlier_score(r, table)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReweightConfig {
    pub weight_floor: f64,
    pub preserve_argmax: bool,
}

impl Default for ReweightConfig {
    fn default() -> Self {
        Self {
            weight_floor: 0.0,
            preserve_argmax: true,
        }
    }
}

impl ReweightConfig {
    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.weight_floor) {
            Ok(())
        } else {
            Err(Error::Config(format!("weight_floor {} outside [0, 1]", self.weight_floor)))
        }
    }
}

/// Weight function recorded in report metadata.
pub const REWEIGHT_RULE: &str =
    "w = clamp(cos(latent, centroid of predicted class), weight_floor, 1); z' = w*z + (1-w)*centroid_logits";

const BISECTION_STEPS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Reweighted {
    pub logits: Vec<f64>,
    pub weight: f64,
}

fn blend(z: &[f64], c: &[f64], w: f64) -> Vec<f64> {
    z.iter().zip(c).map(|(zi, ci)| w * zi + (1.0 - w) * ci).collect()
}

/// Blend a record's logits toward the centroid logits of its predicted
/// class. With `preserve_argmax`, the weight is raised by bisection until
/// the prediction is unchanged.
pub fn reweight_logits(record: &PredictionRecord, table: &CentroidTable, cfg: &ReweightConfig) -> Result<Reweighted> {
    let predicted = argmax(&record.logits);
    let entry = table
        .get(predicted)
        .ok_or_else(|| Error::InvalidInput(format!("no centroid for predicted class {predicted}")))?;
    let cos = cosine(&record.latent, &entry.latent_centroid).unwrap_or(0.0);
    let mut w = cos.clamp(cfg.weight_floor, 1.0);
    let mut logits = blend(&record.logits, &entry.centroid_logits, w);
    if cfg.preserve_argmax && argmax(&logits) != predicted {
        // w = 1 reproduces the original logits exactly
        let (mut lo, mut hi) = (w, 1.0);
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if argmax(&blend(&record.logits, &entry.centroid_logits, mid)) == predicted {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        w = hi;
        logits = blend(&record.logits, &entry.centroid_logits, w);
    }
    Ok(Reweighted { logits, weight: w })
}

#[derive(Debug, Clone)]
pub struct DefendedEvaluation {
    pub accuracy: f64,
    pub records: Vec<PredictionRecord>,
    pub weights: Vec<f64>,
}

/// Applies [`reweight_logits`] to every record and recomputes probabilities
/// and hard-label losses. Latent vectors are passed through unchanged.
pub fn defended_evaluate(
    records: &[PredictionRecord],
    table: &CentroidTable,
    cfg: &ReweightConfig,
) -> Result<DefendedEvaluation> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate an empty subset".into()));
    }
    let mut adjusted = Vec::with_capacity(records.len());
    let mut weights = Vec::with_capacity(records.len());
    for r in records {
        let rw = reweight_logits(r, table, cfg)?;
        let probs = softmax(&rw.logits);
        let loss = cross_entropy_loss(&probs, r.label, 0.0)?;
        weights.push(rw.weight);
        adjusted.push(PredictionRecord {
            logits: rw.logits,
            probs,
            loss,
            ..r.clone()
        });
    }
    let correct = adjusted.iter().filter(|r| r.is_correct()).count();
    Ok(DefendedEvaluation {
        accuracy: correct as f64 / adjusted.len() as f64,
        records: adjusted,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::{DenseLayer, RealMatrix};

    fn head_model(latent: usize, classes: usize, seed: u64) -> MlpModel {
        MlpModel::init(latent, &[], classes, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn record_for(model: &MlpModel, latent: Vec<f64>, label: usize, index: usize) -> PredictionRecord {
        let t = model.forward(&latent, None).unwrap();
        let loss = cross_entropy_loss(&t.probs, label, 0.0).unwrap();
        PredictionRecord {
            index,
            label,
            is_member: true,
            logits: t.logits,
            probs: t.probs,
            loss,
            latent,
        }
    }

    #[test]
    fn single_and_pair_centroids() {
        let model = head_model(3, 2, 1);
        let a = record_for(&model, vec![1.0, 2.0, 3.0], 0, 0);
        let b = record_for(&model, vec![3.0, 0.0, 1.0], 1, 1);
        let c = record_for(&model, vec![1.0, 2.0, 1.0], 1, 2);
        let table = class_centroids(&[a.clone(), b, c], &model, Grouping::TrueLabel).unwrap();
        assert_eq!(table.entries[0].latent_centroid, a.latent);
        assert_eq!(table.entries[0].centroid_logits, a.logits);
        assert_eq!(table.entries[1].latent_centroid, vec![2.0, 1.0, 1.0]);
    }

    #[test]
    fn centroid_logits_equal_mean_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = head_model(5, 3, 2);
        let recs: Vec<PredictionRecord> = (0..30)
            .map(|i| record_for(&model, (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(), i % 3, i))
            .collect();
        let table = class_centroids(&recs, &model, Grouping::TrueLabel).unwrap();
        for e in &table.entries {
            let members: Vec<&PredictionRecord> = recs.iter().filter(|r| r.label == e.class).collect();
            for k in 0..3 {
                let mean = members.iter().map(|r| r.logits[k]).sum::<f64>() / members.len() as f64;
                assert!((mean - e.centroid_logits[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn empty_class_is_listed() {
        let model = head_model(2, 4, 1);
        let recs = vec![record_for(&model, vec![1.0, 0.0], 1, 0), record_for(&model, vec![0.0, 1.0], 3, 1)];
        match class_centroids(&recs, &model, Grouping::TrueLabel) {
            Err(Error::EmptyClasses(c)) => assert_eq!(c, vec![0, 2]),
            other => panic!("{other:?}"),
        }
    }

    fn table_with(centroid: Vec<f64>, logits: Vec<f64>) -> CentroidTable {
        CentroidTable {
            grouping: Grouping::TrueLabel,
            entries: vec![ClassCentroid {
                class: 0,
                count: 1,
                latent_centroid: centroid,
                centroid_logits: logits,
            }],
        }
    }

    fn raw_record(latent: Vec<f64>, logits: Vec<f64>) -> PredictionRecord {
        let probs = softmax(&logits);
        PredictionRecord {
            index: 0,
            label: 0,
            is_member: true,
            loss: cross_entropy_loss(&probs, 0, 0.0).unwrap(),
            logits,
            probs,
            latent,
        }
    }

    #[test]
    fn outlier_score_geometry() {
        let t = table_with(vec![1.0, 1.0], vec![0.0, 0.0]);
        assert!(outlier_score(&raw_record(vec![2.0, 2.0], vec![0.0, 0.0]), &t).unwrap().abs() < 1e-15);
        assert!((outlier_score(&raw_record(vec![1.0, -1.0], vec![0.0, 0.0]), &t).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(outlier_score(&raw_record(vec![0.0, 0.0], vec![0.0, 0.0]), &t).unwrap(), 1.0);
    }

    #[test]
    fn outlier_order_matches_angles() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let centroid: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = table_with(centroid.clone(), vec![0.0, 0.0]);
        let latents: Vec<Vec<f64>> = (0..10).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let angle = |v: &[f64]| {
            let dot: f64 = v.iter().zip(&centroid).map(|(a, b)| a * b).sum();
            let n = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
            (dot / (n(v) * n(&centroid))).acos()
        };
        let mut by_score: Vec<usize> = (0..10).collect();
        let scores: Vec<f64> = latents
            .iter()
            .map(|l| outlier_score(&raw_record(l.clone(), vec![0.0, 0.0]), &t).unwrap())
            .collect();
        by_score.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
        let mut by_angle: Vec<usize> = (0..10).collect();
        by_angle.sort_by(|&a, &b| angle(&latents[a]).total_cmp(&angle(&latents[b])));
        assert_eq!(by_score, by_angle);
        for l in &latents {
            let r1 = outlier_score(&raw_record(l.clone(), vec![0.0, 0.0]), &t).unwrap();
            let scaled: Vec<f64> = l.iter().map(|v| v * 7.5).collect();
            let r2 = outlier_score(&raw_record(scaled, vec![0.0, 0.0]), &t).unwrap();
            assert!((r1 - r2).abs() < 1e-12);
        }
    }

    #[test]
    fn reweight_endpoints() {
        let t = table_with(vec![1.0, 0.0], vec![4.0, -1.0]);
        let cfg = ReweightConfig { weight_floor: 0.0, preserve_argmax: false };
        let aligned = raw_record(vec![3.0, 0.0], vec![1.0, 0.5]);
        let out = reweight_logits(&aligned, &t, &cfg).unwrap();
        assert_eq!(out.logits, aligned.logits);
        assert_eq!(out.weight, 1.0);
        let opposite = raw_record(vec![-1.0, 0.5], vec![1.0, 0.5]);
        assert_eq!(reweight_logits(&opposite, &t, &cfg).unwrap().logits, vec![4.0, -1.0]);
        // idempotent when cos = 1
        let again = raw_record(vec![3.0, 0.0], out.logits.clone());
        assert_eq!(reweight_logits(&again, &t, &cfg).unwrap().logits, out.logits);
    }

    #[test]
    fn missing_predicted_class_rejected() {
        let t = table_with(vec![1.0, 0.0], vec![4.0, -1.0]);
        let r = raw_record(vec![1.0, 0.0], vec![0.0, 2.0]);
        assert!(reweight_logits(&r, &t, &ReweightConfig::default()).is_err());
    }

    #[test]
    fn argmax_preserved_on_random_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let m = 5;
        let model = MlpModel::from_layers(vec![
            DenseLayer::new(
                RealMatrix::from_vec(4, m, (0..4 * m).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap(),
                vec![0.0; m],
            )
            .unwrap(),
        ])
        .unwrap();
        let recs: Vec<PredictionRecord> = (0..400)
            .map(|i| record_for(&model, (0..4).map(|_| rng.random_range(-2.0..2.0)).collect(), i % m, i))
            .collect();
        let table = class_centroids(&recs, &model, Grouping::Predicted).unwrap();
        let cfg = ReweightConfig::default();
        let mut blended = 0;
        for r in &recs {
            let out = reweight_logits(r, &table, &cfg).unwrap();
            assert_eq!(argmax(&out.logits), r.predicted());
            assert!((cfg.weight_floor..=1.0).contains(&out.weight));
            if out.weight < 1.0 {
                blended += 1;
            }
        }
        assert!(blended > 0);
        let defended = defended_evaluate(&recs, &table, &cfg).unwrap();
        let before = recs.iter().filter(|r| r.is_correct()).count() as f64 / recs.len() as f64;
        assert_eq!(defended.accuracy, before);
    }

    #[test]
    fn unit_floor_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = head_model(3, 3, 8);
        let recs: Vec<PredictionRecord> = (0..20)
            .map(|i| record_for(&model, (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(), i % 3, i))
            .collect();
        let table = class_centroids(&recs, &model, Grouping::TrueLabel).unwrap();
        let cfg = ReweightConfig { weight_floor: 1.0, preserve_argmax: false };
        let d = defended_evaluate(&recs, &table, &cfg).unwrap();
        assert_eq!(d.records, recs);
    }
}
