//! Regression, ranking and classification metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub rmse: f64,
    pub tau: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMetric {
    R2(f64),
    RocAuc(f64),
}

impl TaskMetric {
    pub fn value(self) -> f64 {
        match self {
            TaskMetric::R2(v) | TaskMetric::RocAuc(v) => v,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskMetric::R2(_) => "r2",
            TaskMetric::RocAuc(_) => "roc_auc",
        }
    }
}

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() || pred.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "metric inputs need equal lengths >= 2, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.iter().chain(truth).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("metric input"));
    }
    Ok(())
}

fn is_constant(xs: &[f64]) -> bool {
    xs.iter().all(|&x| x == xs[0])
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let mse = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / pred.len() as f64;
    Ok(mse.sqrt())
}

/// Kendall tau-b. A constant `pred` yields 0.
pub fn kendall_tau(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    if is_constant(truth) {
        return Err(Error::InvalidArgument("constant truth vector".into()));
    }
    let (mut conc, mut disc, mut tie_p, mut tie_t) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..pred.len() {
        for j in i + 1..pred.len() {
            let dp = pred[i] - pred[j];
            let dt = truth[i] - truth[j];
            match (dp == 0.0, dt == 0.0) {
                (true, true) => {}
                (true, false) => tie_p += 1,
                (false, true) => tie_t += 1,
                (false, false) if (dp > 0.0) == (dt > 0.0) => conc += 1,
                _ => disc += 1,
            }
        }
    }
    let denom = (((conc + disc + tie_p) * (conc + disc + tie_t)) as f64).sqrt();
    Ok(if denom == 0.0 {
        0.0
    } else {
        (conc - disc) as f64 / denom
    })
}

/// Ranks starting at 1, ties receiving their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Spearman rho with average ranks. A constant `pred` yields 0.
pub fn spearman_rho(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    if is_constant(truth) {
        return Err(Error::InvalidArgument("constant truth vector".into()));
    }
    Ok(pearson(&average_ranks(pred), &average_ranks(truth)))
}

pub fn rank_metrics(pred: &[f64], truth: &[f64]) -> Result<RankMetrics> {
    Ok(RankMetrics {
        rmse: rmse(pred, truth)?,
        tau: kendall_tau(pred, truth)?,
        rho: spearman_rho(pred, truth)?,
    })
}

pub fn r2(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    if is_constant(truth) {
        return Err(Error::InvalidArgument("constant truth vector".into()));
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (t - p).powi(2)).sum();
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// ROC-AUC as the Mann-Whitney U statistic; labels are positive when > 0.5.
pub fn roc_auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_pair(scores, labels)?;
    let ranks = average_ranks(scores);
    let pos: Vec<bool> = labels.iter().map(|&y| y > 0.5).collect();
    let n_pos = pos.iter().filter(|&&p| p).count();
    let n_neg = pos.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument("ROC-AUC needs both classes".into()));
    }
    let rank_sum: f64 = ranks.iter().zip(&pos).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

pub fn task_metrics(pred: &[f64], truth: &[f64], task: Task) -> Result<TaskMetric> {
    Ok(match task {
        Task::Regression => TaskMetric::R2(r2(pred, truth)?),
        Task::Classification => TaskMetric::RocAuc(roc_auc(pred, truth)?),
    })
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_reversal() {
        let t = [1.0, 4.0, 2.0, 8.0, 5.0];
        let m = rank_metrics(&t, &t).unwrap();
        assert_eq!((m.rmse, m.tau, m.rho), (0.0, 1.0, 1.0));
        let rev: Vec<f64> = t.iter().map(|x| -x).collect();
        let m = rank_metrics(&rev, &t).unwrap();
        assert!((m.tau + 1.0).abs() < 1e-12 && (m.rho + 1.0).abs() < 1e-12);
    }

    #[test]
    fn three_pair_example() {
        // Pairs (0,1) and (0,2) concordant, (1,2) discordant.
        let tau = kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert!((tau - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn tau_b_with_ties() {
        // x = [1,1,2], y = [1,2,3]: C = 2, D = 0, ties in x only = 1.
        let tau = kendall_tau(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((tau - 2.0 / (2.0f64 * 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(average_ranks(&[5.0, 1.0, 5.0, 3.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn errors() {
        assert!(rank_metrics(&[1.0, 2.0], &[3.0, 3.0]).is_err());
        assert!(rmse(&[1.0], &[1.0]).is_err());
        assert!(roc_auc(&[0.1, 0.2], &[1.0, 1.0]).is_err());
        assert!(rmse(&[f64::NAN, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn r2_examples() {
        let t = [1.0, 2.0, 4.0, 7.0];
        assert_eq!(r2(&t, &t).unwrap(), 1.0);
        let mean = [3.5; 4];
        assert!(r2(&mean, &t).unwrap().abs() < 1e-12);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0.0, 0.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5, 0.5], &[0.0, 1.0]).unwrap(), 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let scores: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let labels: Vec<f64> = (0..10_000).map(|i| (i % 2) as f64).collect();
        assert!((roc_auc(&scores, &labels).unwrap() - 0.5).abs() < 0.02);
    }

    #[test]
    fn auc_under_label_permutation_averages_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let scores: Vec<f64> = (0..60).map(|_| rng.random()).collect();
        let mut labels: Vec<f64> = scores.iter().map(|&s| (s > 0.5) as u8 as f64).collect();
        let mut total = 0.0;
        for _ in 0..1000 {
            labels.shuffle(&mut rng);
            total += roc_auc(&scores, &labels).unwrap();
        }
        assert!((total / 1000.0 - 0.5).abs() < 0.02);
    }

    proptest! {
        #[test]
        fn rank_correlations_invariant_under_monotone_maps(
            pred in prop::collection::vec(-3.0f64..3.0, 3..30),
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth: Vec<f64> = pred.iter().map(|p| p + rng.random_range(-1.0..1.0)).collect();
            prop_assume!(!is_constant(&truth));
            let base = rank_metrics(&pred, &truth).unwrap();
            for f in [|x: f64| x.exp(), |x: f64| 3.0 * x - 7.0] {
                let mapped: Vec<f64> = pred.iter().map(|&x| f(x)).collect();
                let m = rank_metrics(&mapped, &truth).unwrap();
                prop_assert!((m.tau - base.tau).abs() < 1e-12);
                prop_assert!((m.rho - base.rho).abs() < 1e-12);
            }
        }

        #[test]
        fn rmse_zero_iff_equal(a in prop::collection::vec(-5.0f64..5.0, 2..20), k in 0usize..20, d in 0.001f64..1.0) {
            prop_assert_eq!(rmse(&a, &a).unwrap(), 0.0);
            let mut b = a.clone();
            let k = k % b.len();
            b[k] += d;
            prop_assert!(rmse(&a, &b).unwrap() > 0.0);
        }
    }
}
