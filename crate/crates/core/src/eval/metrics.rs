use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::Scalar;

/// Probability that a random positive outscores a random negative, ties
/// counting one half (rank-sum form).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EvalError::Undefined("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::Undefined(format!("{pos} positives and {neg} negatives")));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of average ranks (1-based) of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Unweighted mean of per-class AUCs.
pub fn mean_auc(per_class: &BTreeMap<String, f64>) -> Result<f64, EvalError> {
    if per_class.is_empty() {
        return Err(EvalError::Undefined("no per-class AUC to average".into()));
    }
    Ok(per_class.values().sum::<f64>() / per_class.len() as f64)
}

/// Fraction of samples whose true label is among the first `k` ranked labels.
pub fn top_k_accuracy(rankings: &[Vec<String>], truth: &[String], k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::Config("k must be at least 1".into()));
    }
    if rankings.len() != truth.len() {
        return Err(EvalError::Shape(format!("{} rankings for {} labels", rankings.len(), truth.len())));
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let hits = rankings
        .iter()
        .zip(truth)
        .filter(|(r, t)| r.iter().take(k).any(|l| l == *t))
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Labels ordered by descending score; ties keep class order.
pub fn rank_labels(scores: &[f64], classes: &[String]) -> Vec<String> {
    let mut idx: Vec<usize> = (0..classes.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx.into_iter().map(|i| classes[i].clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// One-vs-rest AUC of each class's probability column.
    pub per_class_auc: BTreeMap<String, f64>,
    /// Classes without both positives and negatives in the evaluated set.
    pub excluded: Vec<String>,
    /// Unweighted mean over `per_class_auc`.
    pub mauc: f64,
    pub top_k: BTreeMap<usize, f64>,
    /// Evaluated samples per true class.
    pub counts: BTreeMap<String, usize>,
    pub fingerprint: String,
}

impl MetricReport {
    /// Scores `probs` (`samples × classes`) against `truth` class indices.
    pub fn from_scores<F: Scalar>(
        probs: &Array2<F>,
        truth: &[usize],
        classes: &[String],
        ks: &[usize],
        fingerprint: &str,
    ) -> Result<Self, EvalError> {
        if probs.dim() != (truth.len(), classes.len()) {
            return Err(EvalError::Shape(format!(
                "scores {:?} for {} samples over {} classes",
                probs.dim(),
                truth.len(),
                classes.len()
            )));
        }
        let mut per_class_auc = BTreeMap::new();
        let mut excluded = Vec::new();
        for (c, name) in classes.iter().enumerate() {
            let s: Vec<f64> = probs.column(c).iter().map(|v| v.as_f64()).collect();
            let y: Vec<bool> = truth.iter().map(|&t| t == c).collect();
            match roc_auc(&s, &y) {
                Ok(a) => {
                    per_class_auc.insert(name.clone(), a);
                }
                Err(EvalError::Undefined(why)) => {
                    log::warn!("AUC for `{name}` excluded: {why}");
                    excluded.push(name.clone());
                }
                Err(e) => return Err(e),
            }
        }
        let mauc = mean_auc(&per_class_auc)?;
        let rankings: Vec<Vec<String>> = probs
            .rows()
            .into_iter()
            .map(|r| rank_labels(&r.iter().map(|v| v.as_f64()).collect::<Vec<_>>(), classes))
            .collect();
        let truth_names: Vec<String> = truth.iter().map(|&t| classes[t].clone()).collect();
        let mut top_k = BTreeMap::new();
        for &k in ks {
            top_k.insert(k, top_k_accuracy(&rankings, &truth_names, k)?);
        }
        let mut counts: BTreeMap<String, usize> = classes.iter().map(|c| (c.clone(), 0)).collect();
        for t in &truth_names {
            *counts.get_mut(t).expect("known class") += 1;
        }
        Ok(Self {
            per_class_auc,
            excluded,
            mauc,
            top_k,
            counts,
            fingerprint: fingerprint.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn concordance(s: &[f64], y: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if y[i] && !y[j] {
                    den += 1.0;
                    num += if s[i] > s[j] {
                        1.0
                    } else if s[i] == s[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn fixtures() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap(), 0.75);
        assert!(matches!(roc_auc(&[0.1, 0.2], &[true, true]), Err(EvalError::Undefined(_))));
    }

    #[test]
    fn mean_and_top_k() {
        let m: BTreeMap<String, f64> = [("a".to_string(), 0.8), ("b".to_string(), 0.6)].into();
        assert!((mean_auc(&m).unwrap() - 0.7).abs() < 1e-15);
        assert!(mean_auc(&BTreeMap::new()).is_err());
        let r = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let rankings = vec![
            r(&["a", "b", "c"]),
            r(&["b", "a", "c"]),
            r(&["c", "b", "a"]),
            r(&["a", "c", "b"]),
            r(&["b", "c", "a"]),
        ];
        let truth = r(&["a", "a", "a", "b", "c"]);
        // top-1: samples 0 only; top-2: 0, 1, 4
        assert_eq!(top_k_accuracy(&rankings, &truth, 1).unwrap(), 0.2);
        assert_eq!(top_k_accuracy(&rankings, &truth, 2).unwrap(), 0.6);
        assert_eq!(top_k_accuracy(&rankings, &truth, 3).unwrap(), 1.0);
        assert!(top_k_accuracy(&rankings, &truth, 0).is_err());
    }

    #[test]
    fn report_recomputes_one_vs_rest() {
        let probs = ndarray::arr2(&[[0.7, 0.2, 0.1], [0.1, 0.8, 0.1], [0.3, 0.3, 0.4], [0.5, 0.4, 0.1]]);
        let classes: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let rep = MetricReport::from_scores(&probs, &[0, 1, 2, 1], &classes, &[1, 2], "fp").unwrap();
        let x = roc_auc(&[0.7, 0.1, 0.3, 0.5], &[true, false, false, false]).unwrap();
        assert_eq!(rep.per_class_auc["x"], x);
        let mean = rep.per_class_auc.values().sum::<f64>() / 3.0;
        assert_eq!(rep.mauc, mean);
        assert_eq!(rep.counts["y"], 2);
        assert!(rep.top_k[&1] <= rep.top_k[&2]);
        // a class with no positives is excluded, not fatal
        let rep = MetricReport::from_scores(&probs, &[0, 1, 1, 1], &classes, &[1], "fp").unwrap();
        assert_eq!(rep.excluded, vec!["z".to_string()]);
    }

    proptest! {
        #[test]
        fn matches_pairwise_concordance(
            v in prop::collection::vec((0u8..6, any::<bool>()), 2..50)
        ) {
            let s: Vec<f64> = v.iter().map(|(x, _)| *x as f64 / 5.0).collect();
            let y: Vec<bool> = v.iter().map(|(_, l)| *l).collect();
            prop_assume!(y.iter().any(|&l| l) && y.iter().any(|&l| !l));
            let a = roc_auc(&s, &y).unwrap();
            prop_assert_eq!(a, concordance(&s, &y));
            let flipped: Vec<bool> = y.iter().map(|l| !l).collect();
            prop_assert!((a + roc_auc(&s, &flipped).unwrap() - 1.0).abs() < 1e-12);
            let mono: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
            prop_assert_eq!(roc_auc(&mono, &y).unwrap(), a);
        }
    }
}
