//! AUC, one-vs-rest AUC and logloss.

use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{Error, Result};
use crate::kernel::Tensor;
use crate::losses::clamp_prob;

/// Probability that a random positive outranks a random negative, ties
/// counting one half. Uses average ranks, `O(B log B)`.
pub fn auc_binary(labels: &[bool], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::dimension("auc", &[labels.len()], &[scores.len()]));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score in AUC input".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes, got {pos} positives and {neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based average rank of the tie group.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * avg;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Unweighted mean of per-class AUCs (class `c` against the rest, scored by
/// column `c`). Classes absent from `labels` are skipped.
pub fn auc_multiclass(labels: &[usize], scores: &Tensor) -> Result<f64> {
    scores.expect_shape("auc_multiclass", &[labels.len(), scores.cols()])?;
    let k = scores.cols();
    if let Some(&bad) = labels.iter().find(|&&c| c >= k) {
        return Err(Error::Data(format!("class {bad} out of range for {k} score columns")));
    }
    let mut present = vec![false; k];
    labels.iter().for_each(|&c| present[c] = true);
    let classes: Vec<usize> = (0..k).filter(|&c| present[c]).collect();
    if classes.len() < 2 {
        return Err(Error::UndefinedMetric(format!(
            "one-vs-rest AUC needs at least 2 classes present, got {}",
            classes.len()
        )));
    }
    let mut total = 0.0;
    for &c in &classes {
        let is_c: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        let col: Vec<f64> = (0..labels.len()).map(|r| scores.row(r)[c]).collect();
        total += auc_binary(&is_c, &col)?;
    }
    Ok(total / classes.len() as f64)
}

/// Mean negative log-likelihood of the true class. `pred` is `B×1` (binary,
/// probability of class 1) or `B×k`.
pub fn logloss(labels: &[usize], pred: &Tensor) -> Result<f64> {
    if labels.is_empty() || pred.rows() != labels.len() {
        return Err(Error::dimension("logloss", pred.shape(), &[labels.len(), pred.cols()]));
    }
    let binary = pred.cols() == 1;
    let mut total = 0.0;
    for (r, &c) in labels.iter().enumerate() {
        let p = if binary {
            match c {
                0 => 1.0 - pred.row(r)[0],
                1 => pred.row(r)[0],
                _ => return Err(Error::Data(format!("binary label {c} out of range"))),
            }
        } else {
            *pred
                .row(r)
                .get(c)
                .ok_or_else(|| Error::Data(format!("class {c} out of range")))?
        };
        total -= clamp_prob(p).ln();
    }
    Ok(total / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Absent for regression, or when a split holds a single class.
    pub auc: Option<f64>,
    /// Absent for regression.
    pub logloss: Option<f64>,
    /// Present for regression only.
    pub mse: Option<f64>,
    pub n_examples: usize,
}

impl MetricReport {
    pub fn compute(task: Task, labels: &[f64], pred: &Tensor) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::UndefinedMetric("no examples to evaluate".into()));
        }
        match task {
            Task::Regression => {
                let mse = labels
                    .iter()
                    .zip(pred.data())
                    .map(|(y, p)| (p - y) * (p - y))
                    .sum::<f64>()
                    / n as f64;
                Ok(MetricReport {
                    auc: None,
                    logloss: None,
                    mse: Some(mse),
                    n_examples: n,
                })
            }
            _ => {
                let classes: Vec<usize> = labels.iter().map(|&y| y as usize).collect();
                let auc = match task {
                    Task::Binary => {
                        let pos: Vec<bool> = classes.iter().map(|&c| c == 1).collect();
                        auc_binary(&pos, pred.data())
                    }
                    _ => auc_multiclass(&classes, pred),
                };
                let auc = match auc {
                    Ok(v) => Some(v),
                    Err(Error::UndefinedMetric(_)) => None,
                    Err(e) => return Err(e),
                };
                Ok(MetricReport {
                    auc,
                    logloss: Some(logloss(&classes, pred)?),
                    mse: None,
                    n_examples: n,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{LossCatalog, LossHyper, LossKind};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(labels: &[bool], scores: &[f64]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc_binary(&[true, false, true, false], &[0.9, 0.1, 0.8, 0.2]).unwrap(), 1.0);
        assert_eq!(auc_binary(&[true, false, true], &[0.9, 0.8, 0.3]).unwrap(), 0.5);
        assert_eq!(auc_binary(&[true, false, false, true], &[0.4; 4]).unwrap(), 0.5);
        assert!(matches!(auc_binary(&[true, true], &[0.1, 0.2]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn rank_auc_equals_pair_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for trial in 0..100 {
            let n = rng.gen_range(2..=500);
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            labels[0] = true;
            labels[1] = false;
            // Coarse scores on odd trials force ties.
            let scores: Vec<f64> = (0..n)
                .map(|_| if trial % 2 == 1 { rng.gen_range(0..10) as f64 } else { rng.gen() })
                .collect();
            let a = auc_binary(&labels, &scores).unwrap();
            assert!((a - brute_force(&labels, &scores)).abs() < 1e-12);
        }
    }

    #[test]
    fn multiclass_examples() {
        let labels = [0, 1, 2, 1];
        let perfect = Tensor::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 1.0, 0.0],
        ])
        .unwrap();
        assert_eq!(auc_multiclass(&labels, &perfect).unwrap(), 1.0);
        assert!(auc_multiclass(&[1, 1], &Tensor::filled(&[2, 3], 0.3)).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s: Vec<f64> = (0..30).map(|_| rng.gen()).collect();
        let bin: Vec<bool> = (0..30).map(|i| i % 3 == 0).collect();
        let two = Tensor::new(vec![30, 2], s.iter().flat_map(|&p| [1.0 - p, p]).collect()).unwrap();
        let cls: Vec<usize> = bin.iter().map(|&b| b as usize).collect();
        let m = auc_multiclass(&cls, &two).unwrap();
        assert!((m - auc_binary(&bin, &s).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn multiclass_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let labels: Vec<usize> = (0..20).map(|i| if i < 3 { i } else { rng.gen_range(0..3) }).collect();
            let scores = Tensor::new(vec![20, 3], (0..60).map(|_| rng.gen()).collect()).unwrap();
            let mut expected = 0.0;
            for c in 0..3 {
                let l: Vec<bool> = labels.iter().map(|&x| x == c).collect();
                let s: Vec<f64> = (0..20).map(|r| scores.row(r)[c]).collect();
                expected += brute_force(&l, &s);
            }
            assert!((auc_multiclass(&labels, &scores).unwrap() - expected / 3.0).abs() < 1e-12);
        }
        // A class absent from the labels is skipped.
        let labels = [0, 2, 0, 2];
        let scores = Tensor::from_rows(&[
            vec![0.9, 0.0, 0.1],
            vec![0.2, 0.5, 0.3],
            vec![0.6, 0.3, 0.1],
            vec![0.1, 0.1, 0.8],
        ])
        .unwrap();
        assert_eq!(auc_multiclass(&labels, &scores).unwrap(), 1.0);
    }

    #[test]
    fn logloss_examples() {
        let perfect = Tensor::new(vec![2, 1], vec![1.0, 0.0]).unwrap();
        let v = logloss(&[1, 0], &perfect).unwrap();
        assert!(v <= -(1.0f64 - 1e-7).ln() + 1e-15 && v > 0.0);
        let half = Tensor::filled(&[3, 1], 0.5);
        assert!((logloss(&[0, 1, 1], &half).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn logloss_equals_ce_column_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for task in [Task::Binary, Task::Multiclass { classes: 4 }] {
            let k = task.output_dim();
            let catalog = LossCatalog::builtin(task, &[LossKind::CrossEntropy, LossKind::Focal], LossHyper::default()).unwrap();
            let raw = Tensor::new(vec![64, k], (0..64 * k).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
            let pred = if k == 1 {
                raw.map(crate::kernel::layers::sigmoid)
            } else {
                crate::kernel::layers::softmax(&raw)
            };
            let classes: Vec<usize> = (0..64).map(|_| rng.gen_range(0..task.classes().unwrap())).collect();
            let labels: Vec<f64> = classes.iter().map(|&c| c as f64).collect();
            let m = catalog.evaluate(&labels, &pred).unwrap();
            let ce = m.column(0).iter().sum::<f64>() / 64.0;
            assert!((logloss(&classes, &pred).unwrap() - ce).abs() < 1e-12);
        }
    }

    #[test]
    fn report_by_task() {
        let pred = Tensor::new(vec![4, 1], vec![0.9, 0.2, 0.7, 0.4]).unwrap();
        let r = MetricReport::compute(Task::Binary, &[1.0, 0.0, 1.0, 0.0], &pred).unwrap();
        assert_eq!(r.auc, Some(1.0));
        assert_eq!(r.n_examples, 4);
        let r = MetricReport::compute(Task::Regression, &[1.0, 0.0, 1.0, 0.0], &pred).unwrap();
        assert!(r.auc.is_none() && r.logloss.is_none());
        assert!((r.mse.unwrap() - (0.01 + 0.04 + 0.09 + 0.16) / 4.0).abs() < 1e-12);
        let r = MetricReport::compute(Task::Binary, &[1.0; 4], &pred).unwrap();
        assert!(r.auc.is_none() && r.logloss.is_some());
    }

    proptest! {
        #[test]
        fn auc_is_invariant_under_increasing_transforms(
            pairs in prop::collection::vec((any::<bool>(), -5.0f64..5.0), 2..200)
        ) {
            let mut labels: Vec<bool> = pairs.iter().map(|p| p.0).collect();
            labels[0] = true;
            labels[1] = false;
            let s: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let t: Vec<f64> = s.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(auc_binary(&labels, &s).unwrap(), auc_binary(&labels, &t).unwrap());
        }

        #[test]
        fn negated_scores_complement_auc(
            pairs in prop::collection::vec((any::<bool>(), -5.0f64..5.0), 2..200)
        ) {
            let mut labels: Vec<bool> = pairs.iter().map(|p| p.0).collect();
            labels[0] = true;
            labels[1] = false;
            let s: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let mut sorted = s.clone();
            sorted.sort_by(f64::total_cmp);
            prop_assume!(sorted.windows(2).all(|w| w[0] != w[1]));
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            let sum = auc_binary(&labels, &s).unwrap() + auc_binary(&labels, &neg).unwrap();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}
