//! ROC sweep and the leakage metrics derived from it.
//!
//! Decision rule: `score >= threshold` means member. Tied scores share one
//! threshold, so the trapezoidal AUC equals the Mann-Whitney statistic with
//! ties credited one half.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackKind, AttackScores};
use crate::error::{Error, Result};

/// Tie rule recorded in report metadata.
pub const TIE_POLICY: &str = "tied scores share a threshold; AUC credits ties 1/2 (Mann-Whitney)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Descending; the first entry is `+inf` for the `(0, 0)` point, stored
    /// as `null` in JSON.
    #[serde(with = "inf_as_null")]
    pub thresholds: Vec<f64>,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(values.iter().map(|v| v.is_finite().then_some(*v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(raw.into_iter().map(|v| v.unwrap_or(f64::INFINITY)).collect())
    }
}

impl RocCurve {
    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for i in 0..self.len() {
            out.push_str(&format!("{:?},{:?},{:?}\n", self.thresholds[i], self.fpr[i], self.tpr[i]));
        }
        out
    }

    /// Index of the most permissive point whose FPR does not exceed `alpha`.
    fn point_at_fpr(&self, alpha: f64) -> usize {
        // fpr is nondecreasing along the curve
        self.fpr.partition_point(|&f| f <= alpha).saturating_sub(1)
    }
}

pub fn roc_curve(scores: &AttackScores) -> Result<RocCurve> {
    let positives = scores.is_member.iter().filter(|&&m| m).count();
    let negatives = scores.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass {
            members: positives,
            nonmembers: negatives,
        });
    }
    if let Some(bad) = scores.scores.iter().find(|s| s.is_nan()) {
        return Err(Error::InvalidInput(format!("score {bad} is not comparable")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores.scores[b].total_cmp(&scores.scores[a]));

    let (p, n) = (positives as f64, negatives as f64);
    let mut curve = RocCurve {
        thresholds: vec![f64::INFINITY],
        tpr: vec![0.0],
        fpr: vec![0.0],
    };
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores.scores[order[i]];
        while i < order.len() && scores.scores[order[i]] == t {
            if scores.is_member[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.thresholds.push(t);
        curve.tpr.push(tp as f64 / p);
        curve.fpr.push(fp as f64 / n);
    }
    Ok(curve)
}

/// Trapezoidal area under the curve.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .fpr
        .windows(2)
        .zip(curve.tpr.windows(2))
        .map(|(f, t)| (f[1] - f[0]) * (t[1] + t[0]) / 2.0)
        .sum()
}

/// `max (TPR − FPR)` over the curve.
pub fn advantage(curve: &RocCurve) -> f64 {
    curve
        .tpr
        .iter()
        .zip(&curve.fpr)
        .map(|(t, f)| t - f)
        .fold(0.0, f64::max)
}

/// TPR at the most permissive threshold whose FPR is at most `alpha`; no
/// interpolation between curve points.
pub fn tpr_at_fpr(curve: &RocCurve, alpha: f64) -> f64 {
    curve.tpr[curve.point_at_fpr(alpha)]
}

/// Threshold achieving [`tpr_at_fpr`]; `+inf` when no member can be flagged.
pub fn threshold_at_fpr(curve: &RocCurve, alpha: f64) -> f64 {
    curve.thresholds[curve.point_at_fpr(alpha)]
}

/// Member indices flagged at the conservative `alpha`-FPR threshold: the
/// samples an attacker detects most reliably.
pub fn vulnerable_members(scores: &AttackScores, alpha: f64) -> Result<Vec<usize>> {
    check_alpha(alpha)?;
    let curve = roc_curve(scores)?;
    Ok(vulnerable_members_on(scores, &curve, alpha))
}

pub(crate) fn vulnerable_members_on(scores: &AttackScores, curve: &RocCurve, alpha: f64) -> Vec<usize> {
    let t = threshold_at_fpr(curve, alpha);
    let mut out: Vec<usize> = scores
        .scores
        .iter()
        .zip(&scores.is_member)
        .zip(&scores.indices)
        .filter(|((&s, &m), _)| m && s >= t)
        .map(|(_, &i)| i)
        .collect();
    out.sort_unstable();
    out
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("FPR level {alpha} outside (0, 1]")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub member_counts: Vec<usize>,
    pub nonmember_counts: Vec<usize>,
}

impl Histogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,members,nonmembers\n");
        for b in 0..self.member_counts.len() {
            out.push_str(&format!(
                "{:?},{:?},{},{}\n",
                self.edges[b],
                self.edges[b + 1],
                self.member_counts[b],
                self.nonmember_counts[b]
            ));
        }
        out
    }
}

/// Equal-width bins over `[min, max]`; the last bin is closed on the right.
/// A zero-width range collapses into the first bin over `[min, min + 1]`.
pub fn histogram(scores: &AttackScores, bin_count: usize) -> Result<Histogram> {
    if bin_count == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let finite = scores.scores.iter().copied().filter(|s| s.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)));
    let (lo, hi) = if lo > hi { (0.0, 1.0) } else { (lo, hi) };
    let span = if hi > lo { hi - lo } else { 1.0 };
    let width = span / bin_count as f64;
    let edges: Vec<f64> = (0..=bin_count)
        .map(|b| if b == bin_count { lo + span } else { lo + width * b as f64 })
        .collect();
    let mut member_counts = vec![0; bin_count];
    let mut nonmember_counts = vec![0; bin_count];
    for (&s, &m) in scores.scores.iter().zip(&scores.is_member) {
        let b = if s.is_nan() {
            0
        } else {
            (((s - lo) / width).floor().max(0.0) as usize).min(bin_count - 1)
        };
        if m {
            member_counts[b] += 1;
        } else {
            nonmember_counts[b] += 1;
        }
    }
    Ok(Histogram {
        edges,
        member_counts,
        nonmember_counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaReport {
    pub kind: AttackKind,
    pub auc: f64,
    pub advantage: f64,
    /// Keyed by the FPR level as written in the configuration.
    pub tpr_at_fpr: BTreeMap<String, f64>,
    pub vulnerable_member_indices: BTreeMap<String, Vec<usize>>,
}

pub fn alpha_key(alpha: f64) -> String {
    format!("{alpha}")
}

pub fn mia_report(scores: &AttackScores, alphas: &[f64]) -> Result<(MiaReport, RocCurve)> {
    for &a in alphas {
        check_alpha(a)?;
    }
    let curve = roc_curve(scores)?;
    let report = MiaReport {
        kind: scores.kind,
        auc: auc(&curve),
        advantage: advantage(&curve),
        tpr_at_fpr: alphas.iter().map(|&a| (alpha_key(a), tpr_at_fpr(&curve, a))).collect(),
        vulnerable_member_indices: alphas
            .iter()
            .map(|&a| (alpha_key(a), vulnerable_members_on(scores, &curve, a)))
            .collect(),
    };
    Ok((report, curve))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn scores(s: &[f64], m: &[bool]) -> AttackScores {
        AttackScores::from_labels(AttackKind::Loss, s.to_vec(), m.to_vec()).unwrap()
    }

    #[test]
    fn perfect_separation() {
        let sc = scores(&[1.0, 1.0, 0.0, 0.0], &[true, true, false, false]);
        let c = roc_curve(&sc).unwrap();
        assert!(c.fpr.iter().zip(&c.tpr).any(|(&f, &t)| f == 0.0 && t == 1.0));
        assert_eq!(auc(&c), 1.0);
        assert_eq!(advantage(&c), 1.0);
        assert_eq!(tpr_at_fpr(&c, 0.01), 1.0);
        assert_eq!(vulnerable_members(&sc, 0.01).unwrap(), vec![0, 1]);
    }

    #[test]
    fn all_tied_is_diagonal() {
        let sc = scores(&[0.3; 6], &[true, false, true, false, true, false]);
        let c = roc_curve(&sc).unwrap();
        assert_eq!(c.fpr, vec![0.0, 1.0]);
        assert_eq!(c.tpr, vec![0.0, 1.0]);
        assert_eq!(auc(&c), 0.5);
        assert_eq!(advantage(&c), 0.0);
        assert!(vulnerable_members(&sc, 0.01).unwrap().is_empty());
    }

    #[test]
    fn single_class_rejected() {
        assert!(matches!(roc_curve(&scores(&[1.0, 2.0], &[true, true])), Err(Error::SingleClass { .. })));
        assert!(matches!(roc_curve(&scores(&[1.0], &[false])), Err(Error::SingleClass { .. })));
    }

    #[test]
    fn alpha_one_gives_full_tpr() {
        let sc = scores(&[0.1, 0.9, 0.4, 0.2], &[true, false, true, false]);
        assert_eq!(tpr_at_fpr(&roc_curve(&sc).unwrap(), 1.0), 1.0);
        assert!(vulnerable_members(&sc, 0.0).is_err());
    }

    #[test]
    fn histogram_edge_cases() {
        let sc = scores(&[0.1, 0.9, 0.4, 0.2, 0.5], &[true, false, true, false, true]);
        let h = histogram(&sc, 1).unwrap();
        assert_eq!(h.member_counts, vec![3]);
        assert_eq!(h.nonmember_counts, vec![2]);
        let flat = histogram(&scores(&[2.0; 4], &[true, true, false, true]), 5).unwrap();
        assert_eq!(flat.member_counts, vec![3, 0, 0, 0, 0]);
        assert_eq!(flat.nonmember_counts, vec![1, 0, 0, 0, 0]);
        assert!(histogram(&sc, 0).is_err());
    }

    fn arb_scores() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..60).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..6).prop_map(f64::from), n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
        .prop_filter("both classes", |(_, m)| m.iter().any(|&x| x) && m.iter().any(|&x| !x))
    }

    proptest! {
        #[test]
        fn auc_invariant_under_monotone_map((s, m) in arb_scores()) {
            let a = auc(&roc_curve(&scores(&s, &m)).unwrap());
            let t: Vec<f64> = s.iter().map(|x| (x * 0.7).exp() - 3.0).collect();
            let b = auc(&roc_curve(&scores(&t, &m)).unwrap());
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn negation_complements_auc((s, m) in arb_scores()) {
            let a = auc(&roc_curve(&scores(&s, &m)).unwrap());
            let neg: Vec<f64> = s.iter().map(|x| -x).collect();
            let b = auc(&roc_curve(&scores(&neg, &m)).unwrap());
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }

        #[test]
        fn curve_is_monotone_and_bounded((s, m) in arb_scores()) {
            let c = roc_curve(&scores(&s, &m)).unwrap();
            prop_assert_eq!((c.fpr[0], c.tpr[0]), (0.0, 0.0));
            prop_assert_eq!((*c.fpr.last().unwrap(), *c.tpr.last().unwrap()), (1.0, 1.0));
            for w in c.thresholds.windows(2) { prop_assert!(w[0] > w[1]); }
            for i in 1..c.len() {
                prop_assert!(c.fpr[i] >= c.fpr[i - 1] && c.tpr[i] >= c.tpr[i - 1]);
                prop_assert!((0.0..=1.0).contains(&c.fpr[i]) && (0.0..=1.0).contains(&c.tpr[i]));
            }
        }

        #[test]
        fn advantage_bounds_tpr_at_fpr((s, m) in arb_scores(), alpha in 0.001f64..1.0) {
            let c = roc_curve(&scores(&s, &m)).unwrap();
            prop_assert!(advantage(&c) >= tpr_at_fpr(&c, alpha) - alpha - 1e-12);
        }

        #[test]
        fn histogram_counts_sum((s, m) in arb_scores(), bins in 1usize..12) {
            let h = histogram(&scores(&s, &m), bins).unwrap();
            let members = m.iter().filter(|&&x| x).count();
            prop_assert_eq!(h.member_counts.iter().sum::<usize>(), members);
            prop_assert_eq!(h.nonmember_counts.iter().sum::<usize>(), m.len() - members);
        }
    }
}
