//! Scoring and calibration diagnostics.
//!
//! Probabilistic scores (log loss, Brier, predictive entropy), per-class
//! calibration diagnostics (reliability bins, ECE, MCE), and ranking
//! diagnostics (ROC/AUC by midrank statistic, AUCPR by step summation over
//! recall increments, and the multiclass concordance statistic).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::ClassLabel;
use crate::num::Real;

const PROB_CLAMP: f64 = 1e-15;

fn check_len(left: usize, right: usize) -> Result<()> {
    if left == right {
        Ok(())
    } else {
        Err(Error::LengthMismatch { left, right })
    }
}

/// Mean negative log probability of the true class, clamped at 1e-15.
pub fn log_loss<T: Real>(probs: &[[T; 3]], y: &[ClassLabel]) -> Result<T> {
    check_len(probs.len(), y.len())?;
    if probs.is_empty() {
        return Ok(T::zero());
    }
    let mut acc = T::zero();
    for (p, label) in probs.iter().zip(y) {
        acc = acc - p[label.index()].max(T::of(PROB_CLAMP)).ln();
    }
    Ok(acc / T::of_usize(probs.len()))
}

/// Binary form used for pairwise model scoring; `true` is the positive class.
pub fn log_loss_binary<T: Real>(p_pos: &[T], y: &[bool]) -> Result<T> {
    check_len(p_pos.len(), y.len())?;
    if p_pos.is_empty() {
        return Ok(T::zero());
    }
    let clamp = T::of(PROB_CLAMP);
    let mut acc = T::zero();
    for (&p, &pos) in p_pos.iter().zip(y) {
        let q = if pos { p } else { T::one() - p };
        acc = acc - q.max(clamp).ln();
    }
    Ok(acc / T::of_usize(p_pos.len()))
}

/// Mean over rows of the squared distance between the probability vector
/// and the one-hot truth, summed over classes (range 0..=2).
pub fn brier<T: Real>(probs: &[[T; 3]], y: &[ClassLabel]) -> Result<T> {
    check_len(probs.len(), y.len())?;
    if probs.is_empty() {
        return Ok(T::zero());
    }
    let mut acc = T::zero();
    for (p, label) in probs.iter().zip(y) {
        for (c, &pc) in p.iter().enumerate() {
            let truth = if c == label.index() { T::one() } else { T::zero() };
            acc = acc + (pc - truth) * (pc - truth);
        }
    }
    Ok(acc / T::of_usize(probs.len()))
}

/// Mean Shannon entropy of the predictive distribution, natural log.
pub fn entropy_score<T: Real>(probs: &[[T; 3]]) -> T {
    if probs.is_empty() {
        return T::zero();
    }
    let mut acc = T::zero();
    for p in probs {
        for &pc in p {
            if pc > T::zero() {
                acc = acc - pc * pc.ln();
            }
        }
    }
    acc / T::of_usize(probs.len())
}

/// One reliability bin: predicted-probability range, mean prediction,
/// observed positive frequency, and row count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin<T> {
    pub lo: T,
    pub hi: T,
    pub mean_predicted: T,
    pub observed_freq: T,
    pub count: usize,
}

/// Equal-width reliability bins over predicted probabilities; empty bins are
/// kept (count 0) so edges are auditable, but they do not enter ECE/MCE.
pub fn reliability_bins<T: Real>(p: &[T], y: &[bool], n_bins: usize) -> Result<Vec<ReliabilityBin<T>>> {
    check_len(p.len(), y.len())?;
    let n_bins = n_bins.max(2);
    let width = T::one() / T::of_usize(n_bins);
    let mut sums = vec![(T::zero(), T::zero(), 0usize); n_bins];
    for (&pi, &yi) in p.iter().zip(y) {
        let raw = (pi / width).to_f64().unwrap_or(0.0).floor() as usize;
        let b = raw.min(n_bins - 1);
        sums[b].0 = sums[b].0 + pi;
        if yi {
            sums[b].1 = sums[b].1 + T::one();
        }
        sums[b].2 += 1;
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(b, (psum, ysum, count))| {
            let denom = T::of_usize(count.max(1));
            ReliabilityBin {
                lo: T::of_usize(b) * width,
                hi: T::of_usize(b + 1) * width,
                mean_predicted: psum / denom,
                observed_freq: ysum / denom,
                count,
            }
        })
        .collect())
}

/// Expected and maximum calibration error over the given reliability bins.
pub fn ece_mce<T: Real>(p: &[T], y: &[bool], n_bins: usize) -> Result<(T, T)> {
    let bins = reliability_bins(p, y, n_bins)?;
    let n = T::of_usize(p.len().max(1));
    let mut ece = T::zero();
    let mut mce = T::zero();
    for bin in &bins {
        if bin.count == 0 {
            continue;
        }
        let gap = (bin.observed_freq - bin.mean_predicted).abs();
        ece = ece + T::of_usize(bin.count) / n * gap;
        mce = mce.max(gap);
    }
    Ok((ece, mce))
}

/// One point of the ROC curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint<T> {
    pub fpr: T,
    pub tpr: T,
}

/// ROC curve and AUC. The AUC is the Mann-Whitney rank statistic with
/// midranks for tied scores; curve points come from the descending-score
/// threshold sweep with tied scores collapsed into one step.
pub fn roc_auc<T: Real>(scores: &[T], y: &[bool]) -> Result<(Vec<RocPoint<T>>, T)> {
    check_len(scores.len(), y.len())?;
    let n_pos = y.iter().filter(|&&v| v).count();
    let n_neg = y.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores").then(a.cmp(&b)));

    // Midrank sum over positives.
    let mut rank_sum = T::zero();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let midrank = T::of_usize(i + 1 + j) / T::of(2.0);
        for &idx in &order[i..j] {
            if y[idx] {
                rank_sum = rank_sum + midrank;
            }
        }
        i = j;
    }
    let np = T::of_usize(n_pos);
    let nn = T::of_usize(n_neg);
    let auc = (rank_sum - np * (np + T::one()) / T::of(2.0)) / (np * nn);

    let mut points = vec![RocPoint { fpr: T::zero(), tpr: T::zero() }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut k = order.len();
    while k > 0 {
        let mut j = k;
        while j > 0 && scores[order[j - 1]] == scores[order[k - 1]] {
            if y[order[j - 1]] {
                tp += 1;
            } else {
                fp += 1;
            }
            j -= 1;
        }
        points.push(RocPoint {
            fpr: T::of_usize(fp) / nn,
            tpr: T::of_usize(tp) / np,
        });
        k = j;
    }
    Ok((points, auc))
}

/// Area under the precision-recall step curve, by summation of
/// `precision × Δrecall` over blocks of tied scores in descending order.
pub fn aucpr<T: Real>(scores: &[T], y: &[bool]) -> Result<T> {
    check_len(scores.len(), y.len())?;
    let n_pos = y.iter().filter(|&&v| v).count();
    if n_pos == 0 {
        return Err(Error::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b].partial_cmp(&scores[a]).expect("finite scores").then(a.cmp(&b))
    });
    let np = T::of_usize(n_pos);
    let mut area = T::zero();
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut last_recall = T::zero();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if y[order[j]] {
                tp += 1;
            }
            seen += 1;
            j += 1;
        }
        let recall = T::of_usize(tp) / np;
        let precision = T::of_usize(tp) / T::of_usize(seen);
        area = area + (recall - last_recall) * precision;
        last_recall = recall;
        i = j;
    }
    Ok(area)
}

/// How the multiclass concordance statistic is aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CStatMethod {
    /// Unweighted mean of the per-class one-vs-rest AUCs.
    #[default]
    OvrMacro,
    /// Hand-Till M: mean of pairwise conditional AUCs.
    HandTill,
}

/// Multiclass concordance statistic over coupled class probabilities.
///
/// Classes absent from `y` are skipped; fewer than two present classes is an
/// error. One-vs-rest uses each class's own probability as the score;
/// Hand-Till averages `(Â(i|j) + Â(j|i))/2` over present pairs.
pub fn c_statistic<T: Real>(
    probs: &[[T; 3]],
    y: &[ClassLabel],
    method: CStatMethod,
) -> Result<T> {
    check_len(probs.len(), y.len())?;
    let mut present = [false; 3];
    for label in y {
        present[label.index()] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::DegenerateLabels("need at least two classes present".into()));
    }
    match method {
        CStatMethod::OvrMacro => {
            let mut acc = T::zero();
            let mut k = 0usize;
            for c in 0..3 {
                if !present[c] {
                    continue;
                }
                let scores: Vec<T> = probs.iter().map(|p| p[c]).collect();
                let labels: Vec<bool> = y.iter().map(|l| l.index() == c).collect();
                let (_, auc) = roc_auc(&scores, &labels)?;
                acc = acc + auc;
                k += 1;
            }
            Ok(acc / T::of_usize(k))
        }
        CStatMethod::HandTill => {
            let mut acc = T::zero();
            let mut k = 0usize;
            for i in 0..3 {
                for j in (i + 1)..3 {
                    if !present[i] || !present[j] {
                        continue;
                    }
                    let rows: Vec<usize> = (0..y.len())
                        .filter(|&r| y[r].index() == i || y[r].index() == j)
                        .collect();
                    let labels: Vec<bool> = rows.iter().map(|&r| y[r].index() == i).collect();
                    let score_i: Vec<T> = rows.iter().map(|&r| probs[r][i]).collect();
                    let score_j: Vec<T> = rows.iter().map(|&r| probs[r][j]).collect();
                    let (_, a_ij) = roc_auc(&score_i, &labels)?;
                    let flipped: Vec<bool> = labels.iter().map(|&b| !b).collect();
                    let (_, a_ji) = roc_auc(&score_j, &flipped)?;
                    acc = acc + (a_ij + a_ji) / T::of(2.0);
                    k += 1;
                }
            }
            Ok(acc / T::of_usize(k))
        }
    }
}

/// Per-class calibration and discrimination diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassDiagnostics<T> {
    pub class: u8,
    pub ece: T,
    pub mce: T,
    pub auc: T,
    pub reliability: Vec<ReliabilityBin<T>>,
    pub roc: Vec<RocPoint<T>>,
}

/// Full metric set for one evaluation slice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport<T> {
    pub n_rows: usize,
    pub log_loss: T,
    pub brier: T,
    pub entropy: T,
    pub c_statistic: T,
    pub per_class: Vec<ClassDiagnostics<T>>,
}

/// Computes every report metric in one pass. Per-class diagnostics are
/// emitted only for classes with both positives and negatives present.
pub fn evaluate<T: Real>(
    probs: &[[T; 3]],
    y: &[ClassLabel],
    n_bins: usize,
    method: CStatMethod,
) -> Result<EvaluationReport<T>> {
    check_len(probs.len(), y.len())?;
    let per_class = ClassLabel::ALL
        .iter()
        .filter_map(|&label| {
            let c = label.index();
            let scores: Vec<T> = probs.iter().map(|p| p[c]).collect();
            let labels: Vec<bool> = y.iter().map(|l| l.index() == c).collect();
            let n_pos = labels.iter().filter(|&&v| v).count();
            if n_pos == 0 || n_pos == labels.len() {
                return None;
            }
            let out = (|| -> Result<ClassDiagnostics<T>> {
                let (ece, mce) = ece_mce(&scores, &labels, n_bins)?;
                let reliability = reliability_bins(&scores, &labels, n_bins)?;
                let (roc, auc) = roc_auc(&scores, &labels)?;
                Ok(ClassDiagnostics { class: label.number(), ece, mce, auc, reliability, roc })
            })();
            Some(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationReport {
        n_rows: y.len(),
        log_loss: log_loss(probs, y)?,
        brier: brier(probs, y)?,
        entropy: entropy_score(probs),
        c_statistic: c_statistic(probs, y, method)?,
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const C1: ClassLabel = ClassLabel::SuddenIncrease;
    const C2: ClassLabel = ClassLabel::SustainedHigh;
    const C3: ClassLabel = ClassLabel::BelowThreshold;

    #[test]
    fn perfect_predictions_score_zero() {
        let probs = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let y = [C1, C2, C3];
        assert!(log_loss(&probs, &y).unwrap() < 1e-12);
        assert_eq!(brier(&probs, &y).unwrap(), 0.0);
        assert_eq!(entropy_score(&probs), 0.0);
    }

    #[test]
    fn uniform_predictions_hit_the_closed_forms() {
        let u = [1.0 / 3.0; 3];
        let probs = vec![u; 7];
        let y = vec![C1, C2, C3, C1, C2, C3, C1];
        assert!((log_loss(&probs, &y).unwrap() - 3.0f64.ln()).abs() < 1e-12);
        let want = (2.0f64 / 3.0).powi(2) + 2.0 * (1.0 / 3.0f64).powi(2);
        assert!((brier(&probs, &y).unwrap() - want).abs() < 1e-12);
        assert!((entropy_score(&probs) - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn hand_vector_log_loss_and_brier() {
        let probs = [
            [0.7, 0.2, 0.1],
            [0.1, 0.8, 0.1],
            [0.25, 0.25, 0.5],
            [0.5, 0.3, 0.2],
        ];
        let y = [C1, C2, C3, C2];
        let want_ll = -(0.7f64.ln() + 0.8f64.ln() + 0.5f64.ln() + 0.3f64.ln()) / 4.0;
        assert!((log_loss(&probs, &y).unwrap() - want_ll).abs() < 1e-15);
        let mut want_brier = 0.0;
        for (p, label) in probs.iter().zip(&y) {
            for c in 0..3 {
                let t = if c == label.index() { 1.0 } else { 0.0 };
                want_brier += (p[c] - t) * (p[c] - t);
            }
        }
        want_brier /= 4.0;
        assert!((brier(&probs, &y).unwrap() - want_brier).abs() < 1e-15);
        assert!(matches!(
            log_loss(&probs, &y[..3]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn auc_handles_perfect_reversed_and_tied_rankings() {
        let y = [true, true, false, false];
        let (_, perfect) = roc_auc(&[0.9, 0.8, 0.2, 0.1], &y).unwrap();
        assert_eq!(perfect, 1.0);
        let (_, reversed) = roc_auc(&[0.1, 0.2, 0.8, 0.9], &y).unwrap();
        assert_eq!(reversed, 0.0);
        // One tie across classes: pairs = 4, concordant 3, tied 1 → 0.875.
        let (points, tied) = roc_auc(&[0.9f64, 0.5, 0.5, 0.1], &[true, true, false, false]).unwrap();
        assert!((tied - 0.875).abs() < 1e-15);
        assert_eq!(points.first().copied(), Some(RocPoint { fpr: 0.0, tpr: 0.0 }));
        assert_eq!(points.last().copied(), Some(RocPoint { fpr: 1.0, tpr: 1.0 }));
        assert!(matches!(roc_auc(&[0.5, 0.4], &[true, true]), Err(Error::SingleClass)));
    }

    #[test]
    fn aucpr_known_values() {
        assert_eq!(aucpr(&[0.9, 0.8, 0.2], &[true, true, false]).unwrap(), 1.0);
        // All scores equal → single PR point at precision = prevalence.
        let flat = aucpr(&[0.5f64; 10], &[true, false, false, false, true, false, false, false, false, false])
            .unwrap();
        assert!((flat - 0.2).abs() < 1e-15);
        let v = aucpr(&[0.9f64, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap();
        assert!((v - 5.0 / 6.0).abs() < 1e-15);
        assert!(matches!(aucpr(&[0.5], &[false]), Err(Error::NoPositives)));
    }

    #[test]
    fn calibration_error_honors_definitions() {
        // Constant p=1, all positive: perfectly calibrated.
        let (ece, mce) = ece_mce(&[1.0; 8], &[true; 8], 10).unwrap();
        assert_eq!((ece, mce), (0.0, 0.0));
        // Two occupied bins, hand arithmetic:
        // bin [0.2,0.3): p=0.25,0.25 obs=0.5 → gap 0.25, weight 1/2
        // bin [0.8,0.9): p=0.85,0.85 obs=1.0 → gap 0.15, weight 1/2
        let p = [0.25f64, 0.25, 0.85, 0.85];
        let y = [true, false, true, true];
        let (ece, mce) = ece_mce(&p, &y, 10).unwrap();
        assert!((ece - 0.2).abs() < 1e-12);
        assert!((mce - 0.25).abs() < 1e-12);
        assert!(ece <= mce);
    }

    #[test]
    fn reliability_bins_cover_all_rows() {
        let p = [0.05, 0.15, 0.95, 1.0, 0.51];
        let y = [false, false, true, true, true];
        let bins = reliability_bins(&p, &y, 10).unwrap();
        assert_eq!(bins.len(), 10);
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 5);
        assert_eq!(bins[9].count, 2);
        assert_eq!(bins[9].observed_freq, 1.0);
    }

    #[test]
    fn c_statistic_perfect_and_degenerate() {
        let probs = [[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.1, 0.1, 0.8]];
        let y = [C1, C2, C3];
        assert_eq!(c_statistic(&probs, &y, CStatMethod::OvrMacro).unwrap(), 1.0);
        assert_eq!(c_statistic(&probs, &y, CStatMethod::HandTill).unwrap(), 1.0);
        assert!(matches!(
            c_statistic(&probs, &[C1, C1, C1], CStatMethod::OvrMacro),
            Err(Error::DegenerateLabels(_))
        ));
    }

    #[test]
    fn joint_permutation_leaves_metrics_unchanged() {
        let probs = vec![
            [0.7, 0.2, 0.1],
            [0.2, 0.5, 0.3],
            [0.1, 0.2, 0.7],
            [0.4, 0.4, 0.2],
            [0.3, 0.3, 0.4],
        ];
        let y = vec![C1, C2, C3, C2, C3];
        let perm = [4usize, 2, 0, 3, 1];
        let probs_p: Vec<_> = perm.iter().map(|&i| probs[i]).collect();
        let y_p: Vec<_> = perm.iter().map(|&i| y[i]).collect();
        // Sums accumulate in row order, so permutations may shift the result
        // by rounding error but nothing more.
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs());
        assert!(close(log_loss(&probs, &y).unwrap(), log_loss(&probs_p, &y_p).unwrap()));
        assert!(close(brier(&probs, &y).unwrap(), brier(&probs_p, &y_p).unwrap()));
        assert!(close(entropy_score(&probs), entropy_score(&probs_p)));
        assert!(close(
            c_statistic(&probs, &y, CStatMethod::OvrMacro).unwrap(),
            c_statistic(&probs_p, &y_p, CStatMethod::OvrMacro).unwrap()
        ));
    }

    #[test]
    fn report_assembles_all_pieces() {
        let probs = vec![
            [0.8, 0.15, 0.05],
            [0.2, 0.6, 0.2],
            [0.05, 0.2, 0.75],
            [0.6, 0.3, 0.1],
            [0.1, 0.3, 0.6],
            [0.25, 0.5, 0.25],
        ];
        let y = vec![C1, C2, C3, C1, C3, C2];
        let report = evaluate(&probs, &y, 10, CStatMethod::OvrMacro).unwrap();
        assert_eq!(report.n_rows, 6);
        assert_eq!(report.per_class.len(), 3);
        assert!(report.log_loss > 0.0);
        assert!(report.c_statistic > 0.9);
        for d in &report.per_class {
            assert!(d.ece <= d.mce + 1e-15);
            assert_eq!(d.reliability.iter().map(|b| b.count).sum::<usize>(), 6);
        }
    }
}
