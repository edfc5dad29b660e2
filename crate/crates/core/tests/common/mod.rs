//! Reference implementations shared by the integration suites. Each one
//! recomputes its quantity from the definition by the most direct route
//! available so the library can be checked against an independent answer.
#![allow(dead_code)]

use flowrisk::labeling::ClassLabel;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

/// Mean negative log probability of the true class, clamped at 1e-15.
pub fn log_loss(probs: &[[f64; 3]], y: &[ClassLabel]) -> f64 {
    let total: f64 =
        probs.iter().zip(y).map(|(p, label)| -p[label.index()].max(1e-15).ln()).sum();
    total / probs.len() as f64
}

/// Mean squared distance between the probability vector and the one-hot
/// truth, summed over classes.
pub fn brier(probs: &[[f64; 3]], y: &[ClassLabel]) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(y)
        .map(|(p, label)| {
            (0..3)
                .map(|c| {
                    let truth = if c == label.index() { 1.0 } else { 0.0 };
                    (p[c] - truth) * (p[c] - truth)
                })
                .sum::<f64>()
        })
        .sum();
    total / probs.len() as f64
}

/// Mean Shannon entropy in nats; zero mass contributes zero.
pub fn entropy(probs: &[[f64; 3]]) -> f64 {
    let total: f64 = probs
        .iter()
        .map(|p| p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum::<f64>())
        .sum();
    total / probs.len() as f64
}

/// Expected and maximum calibration error over equal-width bins, the last
/// bin closed at 1, aggregated bin by bin from scratch.
pub fn ece_mce(p: &[f64], y: &[bool], n_bins: usize) -> (f64, f64) {
    let width = 1.0 / n_bins as f64;
    let assigned: Vec<usize> =
        p.iter().map(|&v| ((v / width).floor() as usize).min(n_bins - 1)).collect();
    let mut ece = 0.0;
    let mut mce = 0.0f64;
    for b in 0..n_bins {
        let members: Vec<usize> = (0..p.len()).filter(|&i| assigned[i] == b).collect();
        if members.is_empty() {
            continue;
        }
        let mean_p = members.iter().map(|&i| p[i]).sum::<f64>() / members.len() as f64;
        let freq =
            members.iter().filter(|&&i| y[i]).count() as f64 / members.len() as f64;
        let gap = (freq - mean_p).abs();
        ece += members.len() as f64 / p.len() as f64 * gap;
        mce = mce.max(gap);
    }
    (ece, mce)
}

/// AUC by exhaustive pair counting: the fraction of (positive, negative)
/// pairs ranked correctly, ties counting one half.
pub fn auc(scores: &[f64], y: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        if !y[i] {
            continue;
        }
        for j in 0..scores.len() {
            if y[j] {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Area under the precision-recall step curve by exhaustive threshold
/// enumeration: every distinct score is a cut, counts recomputed from the
/// full arrays at each cut.
pub fn aucpr(scores: &[f64], y: &[bool]) -> f64 {
    let n_pos = y.iter().filter(|&&v| v).count();
    let mut cuts: Vec<f64> = scores.to_vec();
    cuts.sort_by(|a, b| b.partial_cmp(a).expect("finite scores"));
    cuts.dedup();
    let mut area = 0.0;
    let mut last_recall = 0.0;
    for &cut in &cuts {
        let tp = (0..scores.len()).filter(|&i| y[i] && scores[i] >= cut).count();
        let predicted = (0..scores.len()).filter(|&i| scores[i] >= cut).count();
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / predicted as f64;
        area += (recall - last_recall) * precision;
        last_recall = recall;
    }
    area
}

/// Pairwise coupling evaluated in exact rational arithmetic on the exact
/// binary values of the inputs, rounded to `f64` only at the very end.
/// Inputs are the probabilities of the lower class in pairs (0,1), (0,2)
/// and (1,2).
pub fn couple_rational(p01: f64, p02: f64, p12: f64) -> [f64; 3] {
    let one = BigRational::from_integer(BigInt::from(1));
    let exact = |v: f64| BigRational::from_float(v).expect("finite probability");
    let (p01, p02, p12) = (exact(p01), exact(p02), exact(p12));
    let views = [
        (p01.clone(), p02.clone()),
        (&one - &p01, p12.clone()),
        (&one - &p02, &one - &p12),
    ];
    let zero = BigRational::zero();
    let mut q = [zero.clone(), zero.clone(), zero.clone()];
    for (i, (a, b)) in views.iter().enumerate() {
        let product = a * b;
        let denom = a + b - product.clone();
        if denom > zero {
            q[i] = product / denom;
        }
    }
    let total = &q[0] + &q[1] + &q[2];
    if total <= zero {
        return [1.0 / 3.0; 3];
    }
    [
        (&q[0] / &total).to_f64().expect("in unit range"),
        (&q[1] / &total).to_f64().expect("in unit range"),
        (&q[2] / &total).to_f64().expect("in unit range"),
    ]
}
