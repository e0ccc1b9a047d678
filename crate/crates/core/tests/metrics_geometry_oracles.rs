mod common;

use memscope::attacks::{yeom_decision, AttackKind, AttackScores};
use memscope::geometry::{
    class_centroids, outlier_scores, project_2d, reweight_logits, CentroidTable, ClassCentroid, Grouping,
    ReweightConfig,
};
use memscope::metrics::{advantage, auc, histogram, roc_curve, tpr_at_fpr, vulnerable_members};
use memscope::nn::{softmax, PredictionRecord};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scores_of(s: &[f64], m: &[bool]) -> AttackScores {
    AttackScores::from_labels(AttackKind::Loss, s.to_vec(), m.to_vec()).unwrap()
}

#[test]
fn roc_points_match_threshold_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for trial in 0..50 {
        let ties = if trial % 2 == 0 { Some(4) } else { None };
        let (s, m) = common::random_scores(&mut rng, 10, ties);
        let curve = roc_curve(&scores_of(&s, &m)).unwrap();
        let table = common::threshold_table(&s, &m);
        assert_eq!(curve.len(), table.len());
        for (k, (t, tpr, fpr)) in table.into_iter().enumerate() {
            assert_eq!(curve.thresholds[k], t);
            assert_eq!(curve.tpr[k], tpr);
            assert_eq!(curve.fpr[k], fpr);
        }
    }
}

#[test]
fn auc_advantage_and_tpr_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for trial in 0..60 {
        let n = rng.random_range(2..=120);
        let ties = [None, Some(3), Some(20)][trial % 3];
        let (s, m) = common::random_scores(&mut rng, n, ties);
        let curve = roc_curve(&scores_of(&s, &m)).unwrap();
        assert!((auc(&curve) - common::pairwise_auc(&s, &m)).abs() <= 1e-9);
        assert_eq!(advantage(&curve), common::sweep_advantage(&s, &m));
        for alpha in [0.01, 0.05, 0.1, 0.3, 1.0] {
            assert_eq!(tpr_at_fpr(&curve, alpha), common::scan_tpr_at_fpr(&s, &m, alpha));
        }
    }
}

#[test]
fn vulnerable_set_honours_fpr_by_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for trial in 0..40 {
        let ties = if trial % 2 == 0 { Some(10) } else { None };
        let (s, m) = common::random_scores(&mut rng, 200, ties);
        for alpha in [0.005, 0.01, 0.1] {
            let flagged = vulnerable_members(&scores_of(&s, &m), alpha).unwrap();
            if flagged.is_empty() {
                continue;
            }
            let t = flagged.iter().map(|&i| s[i]).fold(f64::INFINITY, f64::min);
            let neg = m.iter().filter(|&&x| !x).count() as f64;
            let fp = s.iter().zip(&m).filter(|(&v, &x)| !x && v >= t).count() as f64;
            assert!(fp / neg <= alpha);
            let expect: Vec<usize> = (0..s.len()).filter(|&i| m[i] && s[i] >= t).collect();
            assert_eq!(flagged, expect);
        }
    }
}

#[test]
fn histogram_matches_direct_tally() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    for bins in [1, 3, 17] {
        let (s, m) = common::random_scores(&mut rng, 300, None);
        let h = histogram(&scores_of(&s, &m), bins).unwrap();
        let (lo, hi) = (h.edges[0], h.edges[bins]);
        let width = (hi - lo) / bins as f64;
        for b in 0..bins {
            let tally = |member: bool| {
                s.iter()
                    .zip(&m)
                    .filter(|(&v, &x)| {
                        x == member && {
                            let k = (((v - lo) / width).floor() as usize).min(bins - 1);
                            k == b
                        }
                    })
                    .count()
            };
            assert_eq!(h.member_counts[b], tally(true));
            assert_eq!(h.nonmember_counts[b], tally(false));
        }
    }
}

fn record(index: usize, label: usize, latent: Vec<f64>, logits: Vec<f64>, loss: f64, is_member: bool) -> PredictionRecord {
    PredictionRecord {
        index,
        label,
        is_member,
        probs: softmax(&logits),
        logits,
        loss,
        latent,
    }
}

#[test]
fn yeom_never_beats_the_full_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    for _ in 0..30 {
        let records: Vec<PredictionRecord> = (0..60)
            .map(|i| {
                let member = i % 2 == 0;
                let loss = rng.random::<f64>() * if member { 1.0 } else { 1.6 };
                record(i, 0, vec![1.0], vec![0.0, 0.0], loss, member)
            })
            .collect();
        let members: Vec<&PredictionRecord> = records.iter().filter(|r| r.is_member).collect();
        let mean = members.iter().map(|r| r.loss).sum::<f64>() / members.len() as f64;
        let decision = yeom_decision(&records, mean);
        let tp = records.iter().zip(&decision).filter(|(r, &d)| r.is_member && d).count() as f64 / 30.0;
        let fp = records.iter().zip(&decision).filter(|(r, &d)| !r.is_member && d).count() as f64 / 30.0;
        let scores = AttackScores::from_records(AttackKind::Loss, &records);
        let curve = roc_curve(&scores).unwrap();
        assert!(tp - fp <= advantage(&curve) + 1e-12);
    }
}

#[test]
fn projection_variances_match_dense_eigensolver() {
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    for d in [3, 8, 20] {
        let n = 80;
        // anisotropic cloud so the top two eigenvalues are separated
        let scales: Vec<f64> = (0..d).map(|j| 3.0 / (1.0 + j as f64)).collect();
        let latents: Vec<Vec<f64>> = (0..n)
            .map(|_| scales.iter().map(|s| s * rng.random_range(-1.0..1.0)).collect())
            .collect();
        let p = project_2d(&latents).unwrap();

        let mean: Vec<f64> = (0..d).map(|j| latents.iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
        let x = DMatrix::from_fn(n, d, |i, j| latents[i][j] - mean[j]);
        let cov = x.transpose() * &x / n as f64;
        let mut eig: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| b.partial_cmp(a).unwrap());

        for axis in 0..2 {
            let var = p.coords.iter().map(|c| c[axis] * c[axis]).sum::<f64>() / n as f64;
            assert!((var - eig[axis]).abs() <= 1e-6, "d={d} axis {axis}: {var} vs {}", eig[axis]);
            assert!((p.eigenvalues[axis] - eig[axis]).abs() <= 1e-6);
        }
    }
}

#[test]
fn outlier_order_matches_angles() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let centroid: Vec<f64> = (0..5).map(|_| rng.random_range(0.1..1.0)).collect();
    let table = CentroidTable {
        grouping: Grouping::TrueLabel,
        entries: vec![ClassCentroid {
            class: 0,
            count: 1,
            latent_centroid: centroid.clone(),
            centroid_logits: vec![0.0],
        }],
    };
    let records: Vec<PredictionRecord> = (0..10)
        .map(|i| {
            let latent = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            record(i, 0, latent, vec![0.0], 0.0, true)
        })
        .collect();
    let scores = outlier_scores(&records, &table).unwrap();
    let angle = |v: &[f64]| {
        let dot: f64 = v.iter().zip(&centroid).map(|(a, b)| a * b).sum();
        let na = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nb = centroid.iter().map(|a| a * a).sum::<f64>().sqrt();
        (dot / (na * nb)).clamp(-1.0, 1.0).acos()
    };
    let mut by_score: Vec<usize> = (0..10).collect();
    by_score.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut by_angle: Vec<usize> = (0..10).collect();
    by_angle.sort_by(|&a, &b| angle(&records[a].latent).partial_cmp(&angle(&records[b].latent)).unwrap());
    assert_eq!(by_score, by_angle);
}

#[test]
fn centroid_logits_equal_mean_member_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(38);
    let model = common::random_model(&mut rng, &[6, 5, 3]);
    let records: Vec<PredictionRecord> = (0..40)
        .map(|i| {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t = model.forward(&x, None).unwrap();
            record(i, i % 3, t.latent().to_vec(), t.logits.clone(), 0.0, true)
        })
        .collect();
    let table = class_centroids(&records, &model, Grouping::TrueLabel).unwrap();
    for c in 0..3 {
        let group: Vec<&PredictionRecord> = records.iter().filter(|r| r.label == c).collect();
        for k in 0..3 {
            let mean = group.iter().map(|r| r.logits[k]).sum::<f64>() / group.len() as f64;
            assert!((table.get(c).unwrap().centroid_logits[k] - mean).abs() <= 1e-9);
        }
    }
    // every reweighted vector is a convex blend that keeps the prediction
    let predicted = class_centroids(&records, &model, Grouping::Predicted);
    if let Ok(table) = predicted {
        for r in &records {
            let rw = reweight_logits(r, &table, &ReweightConfig::default()).unwrap();
            assert!((0.0..=1.0).contains(&rw.weight));
            assert_eq!(memscope::nn::argmax(&rw.logits), r.predicted());
        }
    }
}
