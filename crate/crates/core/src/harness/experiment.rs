use std::collections::BTreeSet;
use std::time::Instant;

use statrs::distribution::{ContinuousCDF, StudentsT};

use super::config::{DatasetSource, DefenseVariant, ExperimentConfig};
use super::report::*;
use crate::attacks::{yeom_decision, AttackKind, AttackScores};
use crate::data::{generate_synthetic, inject_label_noise, load_csv, split, DataSplit, Dataset};
use crate::error::{Error, Result};
use crate::geometry::{
    class_centroids, defended_evaluate, outlier_scores, project_2d, CentroidTable, Grouping, REWEIGHT_RULE,
};
use crate::metrics::{
    advantage, alpha_key, auc, histogram, mia_report, roc_curve, vulnerable_members, MiaReport, TIE_POLICY,
};
use crate::nn::{evaluate, holdout_validation, train_with_observer, MlpModel, PredictionRecord, TrainHistory};

/// Dataset, planted-noise ground truth and split, shared across runs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: Dataset,
    pub noisy_indices: Vec<usize>,
    pub split: DataSplit,
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    let noisy = match &config.dataset {
        DatasetSource::Synthetic(spec) => generate_synthetic(spec)?,
        DatasetSource::Csv {
            path,
            label_noise_fraction,
            noise_seed,
        } => inject_label_noise(&load_csv(path)?, *label_noise_fraction, *noise_seed)?,
    };
    let split = split(&noisy.dataset, config.n_members, config.n_nonmembers, config.split_seed)?;
    Ok(Prepared {
        dataset: noisy.dataset,
        noisy_indices: noisy.noisy_indices,
        split,
    })
}

/// Everything an experiment produced; only `report` is serialized.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub report: ReportDocument,
    pub model: MlpModel,
    pub scores: Vec<AttackScores>,
    pub member_records: Vec<PredictionRecord>,
    pub nonmember_records: Vec<PredictionRecord>,
    pub centroids: Option<CentroidTable>,
}

/// Trains on the configured members, attacks members vs non-members with
/// every configured attack, and assembles the report.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentRun> {
    config.validate()?;
    let prepared = prepare(config)?;
    run_prepared(config, &prepared, None)
}

/// Same as [`run_experiment`] but attacks an already trained model.
pub fn run_with_model(config: &ExperimentConfig, model: MlpModel) -> Result<ExperimentRun> {
    config.validate()?;
    let prepared = prepare(config)?;
    run_prepared(config, &prepared, Some(model))
}

fn metadata() -> ReportMetadata {
    ReportMetadata {
        optimizer: "plain mini-batch SGD, constant learning rate, no momentum".into(),
        log_base: "natural".into(),
        tie_policy: TIE_POLICY.into(),
        tpr_at_fpr_rule: "TPR at the most permissive threshold with FPR <= alpha, no interpolation".into(),
        reweight_rule: REWEIGHT_RULE.into(),
        exclusion_policy: "union of vulnerable members across configured attacks".into(),
        privacy_accounting: "none; DP runs report clip norm and noise multiplier only".into(),
        member_set: "samples used for gradient updates (early-stopping validation members excluded)".into(),
    }
}

struct Snapshotter<'a> {
    config: &'a ExperimentConfig,
    dataset: &'a Dataset,
    members: &'a [usize],
    nonmembers: &'a [usize],
    out: Vec<EpochSnapshot>,
    error: Option<Error>,
}

impl Snapshotter<'_> {
    fn observe(&mut self, epoch: usize, model: &MlpModel) {
        if self.error.is_some() || !self.config.snapshot_epochs.contains(&epoch) {
            return;
        }
        match self.snapshot(epoch, model) {
            Ok(s) => self.out.push(s),
            Err(e) => self.error = Some(e),
        }
    }

    fn snapshot(&self, epoch: usize, model: &MlpModel) -> Result<EpochSnapshot> {
        let kind = AttackKind::ScaledLogit;
        let m = evaluate(model, self.dataset, self.members, true)?;
        let n = evaluate(model, self.dataset, self.nonmembers, false)?;
        let records: Vec<PredictionRecord> = m.records.into_iter().chain(n.records).collect();
        let scores = AttackScores::from_records(kind, &records);
        let curve = roc_curve(&scores)?;
        Ok(EpochSnapshot {
            epoch,
            kind,
            train_acc: m.accuracy,
            test_acc: n.accuracy,
            auc: auc(&curve),
            advantage: advantage(&curve),
            histogram: histogram(&scores, self.config.histogram_bins)?,
        })
    }
}

pub fn run_prepared(config: &ExperimentConfig, prepared: &Prepared, pretrained: Option<MlpModel>) -> Result<ExperimentRun> {
    let dataset = &prepared.dataset;
    let split = &prepared.split;
    if split.nonmember_indices.is_empty() {
        return Err(Error::InvalidInput("attacks need at least one non-member".into()));
    }
    let (trained_members, validation) = holdout_validation(&split.member_indices, &config.train)?;

    let started = Instant::now();
    let (model, history, snapshots) = match pretrained {
        Some(model) => {
            if model.input_dim() != dataset.feature_dim() || model.num_classes() != dataset.num_classes {
                return Err(Error::Dimension("checkpoint does not match the dataset".into()));
            }
            (model, TrainHistory::default(), Vec::new())
        }
        None => {
            let mut snap = Snapshotter {
                config,
                dataset,
                members: &trained_members,
                nonmembers: &split.nonmember_indices,
                out: Vec::new(),
                error: None,
            };
            let (model, history) = train_with_observer(dataset, split, &config.train, |e, m| snap.observe(e, m))?;
            if let Some(e) = snap.error {
                return Err(e);
            }
            (model, history, snap.out)
        }
    };
    let train_seconds = started.elapsed().as_secs_f64();
    finish(config, prepared, model, history, snapshots, trained_members, validation, train_seconds)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    config: &ExperimentConfig,
    prepared: &Prepared,
    model: MlpModel,
    history: TrainHistory,
    snapshots: Vec<EpochSnapshot>,
    trained_members: Vec<usize>,
    validation: Vec<usize>,
    train_seconds: f64,
) -> Result<ExperimentRun> {
    let dataset = &prepared.dataset;
    let split = &prepared.split;
    let members = evaluate(&model, dataset, &trained_members, true)?;
    let nonmembers = evaluate(&model, dataset, &split.nonmember_indices, false)?;
    let records: Vec<PredictionRecord> = members.records.iter().chain(&nonmembers.records).cloned().collect();

    let mut attacks = Vec::new();
    let mut curves = Vec::new();
    let mut all_scores = Vec::new();
    for &kind in &config.attacks {
        let scores = AttackScores::from_records(kind, &records);
        let (report, curve) = mia_report(&scores, &config.fpr_levels)?;
        attacks.push(report);
        curves.push(NamedCurve { kind, curve });
        all_scores.push(scores);
    }

    let mean_train_loss = members.mean_loss();
    let decisions = yeom_decision(&records, mean_train_loss);
    let (mut tp, mut fp) = (0usize, 0usize);
    for (d, r) in decisions.iter().zip(&records) {
        match (d, r.is_member) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            _ => {}
        }
    }
    let tpr = tp as f64 / members.records.len() as f64;
    let fpr = fp as f64 / nonmembers.records.len() as f64;
    let yeom = YeomSummary {
        mean_train_loss,
        tpr,
        fpr,
        advantage: tpr - fpr,
    };

    let vulnerable_overlap = overlaps(&attacks, &config.fpr_levels);

    let noisy: BTreeSet<usize> = prepared.noisy_indices.iter().copied().collect();
    let analysis = class_centroids(&members.records, &model, Grouping::TrueLabel).ok();
    let outliers = match &analysis {
        Some(table) => outlier_summaries(&members.records, table, &attacks, &noisy)?,
        None => Vec::new(),
    };

    let union_first: BTreeSet<usize> = config
        .fpr_levels
        .first()
        .map(|&a| {
            attacks
                .iter()
                .flat_map(|r| r.vulnerable_member_indices[&alpha_key(a)].iter().copied())
                .collect()
        })
        .unwrap_or_default();
    let latents: Vec<Vec<f64>> = members.records.iter().map(|r| r.latent.clone()).collect();
    let projection = if latents.len() >= 2 {
        let p = project_2d(&latents)?;
        members
            .records
            .iter()
            .zip(&p.coords)
            .map(|(r, c)| ProjectionRow {
                index: r.index,
                x: c[0],
                y: c[1],
                class: r.label,
                is_vulnerable: union_first.contains(&r.index),
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut timing = Timing {
        train_seconds,
        defense_overhead_seconds: None,
    };
    let mut centroids = None;
    // a class the model never predicts on members has no defense centroid;
    // the defense block is then omitted
    let defense_table = match &config.reweight {
        Some(_) => match class_centroids(&members.records, &model, Grouping::Predicted) {
            Ok(t) => Some(t),
            Err(Error::EmptyClasses(_)) => None,
            Err(e) => return Err(e),
        },
        None => None,
    };
    let defense = match (&config.reweight, defense_table) {
        (Some(rw), Some(table)) => {
            let started = Instant::now();
            let dm = defended_evaluate(&members.records, &table, rw)?;
            let dn = defended_evaluate(&nonmembers.records, &table, rw)?;
            timing.defense_overhead_seconds = Some(started.elapsed().as_secs_f64());
            let adjusted: Vec<PredictionRecord> = dm.records.iter().chain(&dn.records).cloned().collect();
            let weights: Vec<f64> = dm.weights.iter().chain(&dn.weights).copied().collect();
            let after = defense_row(dm.accuracy, dn.accuracy, &adjusted, &config.attacks)?;
            let before = DefenseRow {
                train_acc: members.accuracy,
                test_acc: nonmembers.accuracy,
                attacks: attacks
                    .iter()
                    .map(|a| AttackRow {
                        kind: a.kind,
                        auc: a.auc,
                        advantage: a.advantage,
                    })
                    .collect(),
            };
            centroids = Some(table);
            Some(DefenseBlock {
                weight_floor: rw.weight_floor,
                preserve_argmax: rw.preserve_argmax,
                before,
                after,
                mean_weight: weights.iter().sum::<f64>() / weights.len() as f64,
                adjusted_fraction: weights.iter().filter(|&&w| w < 1.0).count() as f64 / weights.len() as f64,
            })
        }
        _ => None,
    };

    let member_set: BTreeSet<usize> = trained_members.iter().copied().collect();
    let report = ReportDocument {
        schema_version: SCHEMA_VERSION,
        valid: true,
        config: config.clone(),
        metadata: metadata(),
        dataset: DatasetSummary {
            name: dataset.name.clone(),
            samples: dataset.len(),
            features: dataset.feature_dim(),
            classes: dataset.num_classes,
            members: trained_members.len(),
            nonmembers: split.nonmember_indices.len(),
            noisy_indices: prepared.noisy_indices.clone(),
            noisy_members: noisy.intersection(&member_set).count(),
        },
        split: DataSplit {
            member_indices: trained_members,
            nonmember_indices: split.nonmember_indices.clone(),
            seed: split.seed,
        },
        validation_indices: validation,
        model: ModelSummary {
            hidden_layers: model.hidden_widths(),
            parameters: model.parameter_count(),
            trained_epochs: history.epochs.len(),
        },
        train_acc: members.accuracy,
        test_acc: nonmembers.accuracy,
        history,
        yeom,
        attacks,
        snapshots,
        vulnerable_overlap,
        outliers,
        defense,
        timing,
        curves,
        projection,
    };
    Ok(ExperimentRun {
        report,
        model,
        scores: all_scores,
        member_records: members.records,
        nonmember_records: nonmembers.records,
        centroids,
    })
}

fn defense_row(train_acc: f64, test_acc: f64, records: &[PredictionRecord], kinds: &[AttackKind]) -> Result<DefenseRow> {
    let attacks = kinds
        .iter()
        .map(|&kind| {
            let curve = roc_curve(&AttackScores::from_records(kind, records))?;
            Ok(AttackRow {
                kind,
                auc: auc(&curve),
                advantage: advantage(&curve),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DefenseRow {
        train_acc,
        test_acc,
        attacks,
    })
}

fn overlaps(attacks: &[MiaReport], alphas: &[f64]) -> Vec<OverlapEntry> {
    let mut out = Vec::new();
    for &alpha in alphas {
        let key = alpha_key(alpha);
        for (i, a) in attacks.iter().enumerate() {
            for b in &attacks[i + 1..] {
                let sa: BTreeSet<usize> = a.vulnerable_member_indices[&key].iter().copied().collect();
                let sb: BTreeSet<usize> = b.vulnerable_member_indices[&key].iter().copied().collect();
                out.push(OverlapEntry {
                    fpr: key.clone(),
                    a: a.kind,
                    b: b.kind,
                    intersection: sa.intersection(&sb).count(),
                    union: sa.union(&sb).count(),
                });
            }
        }
    }
    out
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// One-sided Welch test of `mean(a) > mean(b)`: `(t, df, p)`.
pub fn welch_one_sided(a: &[f64], b: &[f64]) -> Option<(f64, f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se = (sa + sb).sqrt();
    if se == 0.0 {
        return None;
    }
    let t = (ma - mb) / se;
    let df = (sa + sb).powi(2) / (sa.powi(2) / (a.len() as f64 - 1.0) + sb.powi(2) / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    Some((t, df, 1.0 - dist.cdf(t)))
}

fn outlier_summaries(
    members: &[PredictionRecord],
    table: &CentroidTable,
    attacks: &[MiaReport],
    noisy: &BTreeSet<usize>,
) -> Result<Vec<OutlierSummary>> {
    let scores = outlier_scores(members, table)?;
    let by_index: std::collections::BTreeMap<usize, f64> =
        members.iter().map(|r| r.index).zip(scores.iter().copied()).collect();
    let mean_all = scores.iter().sum::<f64>() / scores.len() as f64;
    let mut out = Vec::new();
    for a in attacks {
        for (key, vulnerable) in &a.vulnerable_member_indices {
            let vs: Vec<f64> = vulnerable.iter().map(|i| by_index[i]).collect();
            let welch = welch_one_sided(&vs, &scores);
            out.push(OutlierSummary {
                kind: a.kind,
                fpr: key.clone(),
                vulnerable: vulnerable.len(),
                vulnerable_noisy: vulnerable.iter().filter(|i| noisy.contains(i)).count(),
                mean_outlier_vulnerable: (!vs.is_empty()).then(|| vs.iter().sum::<f64>() / vs.len() as f64),
                mean_outlier_members: mean_all,
                welch_t: welch.map(|w| w.0),
                welch_df: welch.map(|w| w.1),
                welch_p: welch.map(|w| w.2),
            });
        }
    }
    Ok(out)
}

/// Trains every variant on the identical split and seeds and tabulates
/// utility, runtime and leakage under the primary attack.
pub fn compare_defenses(base: &ExperimentConfig, variants: &[DefenseVariant]) -> Result<DefenseTable> {
    base.validate()?;
    let prepared = prepare(base)?;
    let attack = base.primary_attack();
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        let mut cfg = base.clone();
        cfg.name = v.name.clone();
        cfg.train = v.apply(&base.train);
        cfg.validate()?;
        let run = run_prepared(&cfg, &prepared, None)?;
        let r = run.report.attack(attack).expect("primary attack is configured");
        rows.push(CompareRow {
            variant: v.name.clone(),
            train_acc: run.report.train_acc,
            test_acc: run.report.test_acc,
            runtime_seconds: run.report.timing.train_seconds,
            auc: r.auc,
            advantage: r.advantage,
        });
    }
    Ok(DefenseTable { attack, rows })
}

/// Union over the configured attacks of members flagged at `alpha` FPR.
pub fn vulnerable_union(run: &ExperimentRun, alpha: f64) -> Result<Vec<usize>> {
    let mut set = BTreeSet::new();
    for s in &run.scores {
        set.extend(vulnerable_members(s, alpha)?);
    }
    Ok(set.into_iter().collect())
}

/// Removes the vulnerable members found at `alpha` from the training set,
/// retrains from the same initialization seed, and reports both runs. The
/// excluded samples are evaluated as non-members afterwards.
pub fn exclude_and_retrain(config: &ExperimentConfig, alpha: f64) -> Result<ExclusionOutcome> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("FPR level {alpha} outside (0, 1)")));
    }
    config.validate()?;
    let prepared = prepare(config)?;
    let before = run_prepared(config, &prepared, None)?;
    let excluded = vulnerable_union(&before, alpha)?;
    let noisy: BTreeSet<usize> = prepared.noisy_indices.iter().copied().collect();
    let excluded_noisy = excluded.iter().filter(|i| noisy.contains(i)).count();
    if excluded.is_empty() {
        return Ok(ExclusionOutcome {
            after: before.report.clone(),
            before: before.report,
            summary: ExclusionSummary {
                fpr: alpha,
                excluded,
                excluded_noisy,
                new_vulnerable: Vec::new(),
                notice: Some(format!("no vulnerable members at FPR {alpha}; retraining skipped")),
            },
        });
    }
    let drop: BTreeSet<usize> = excluded.iter().copied().collect();
    let mut nonmembers = prepared.split.nonmember_indices.clone();
    nonmembers.extend(&excluded);
    nonmembers.sort_unstable();
    let retrain = Prepared {
        dataset: prepared.dataset.clone(),
        noisy_indices: prepared.noisy_indices.clone(),
        split: DataSplit {
            member_indices: prepared
                .split
                .member_indices
                .iter()
                .copied()
                .filter(|i| !drop.contains(i))
                .collect(),
            nonmember_indices: nonmembers,
            seed: prepared.split.seed,
        },
    };
    let after = run_prepared(config, &retrain, None)?;
    let after_set = vulnerable_union(&after, alpha)?;
    let before_set: BTreeSet<usize> = excluded.iter().copied().collect();
    let new_vulnerable = after_set.into_iter().filter(|i| !before_set.contains(i)).collect();
    Ok(ExclusionOutcome {
        before: before.report,
        after: after.report,
        summary: ExclusionSummary {
            fpr: alpha,
            excluded,
            excluded_noisy,
            new_vulnerable,
            notice: None,
        },
    })
}
