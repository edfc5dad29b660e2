//! From three pairwise margins to one three-class probability vector.
//!
//! The chain per pair: Platt-scale the margin into a calibrated probability,
//! shift it in normal-quantile space so the pair's decision threshold maps
//! to 0.5, and take the complement for the other class. The three rescaled
//! pair probabilities are then coupled into class probabilities that sum to
//! one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureTransform;
use crate::gbm::{GbmModel, HyperParams};
use crate::matrix::DenseMatrix;
use crate::num::{sigmoid, Real};
use crate::special::{norm_cdf, norm_ppf};

/// Probabilities are clamped to this band before any probit.
pub const PROB_CLAMP: f64 = 1e-6;

/// The three class pairs, each scored by one binary model whose positive
/// class is the pair's first (lower-index) member.
pub const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

/// Fitted logistic map from margin to calibrated probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattParams<T> {
    pub a: T,
    pub b: T,
    /// False when Newton hit the iteration cap before the gradient
    /// tolerance; the parameters are then the best iterate seen.
    pub converged: bool,
}

impl<T: Real> PlattParams<T> {
    pub fn identity() -> Self {
        PlattParams { a: T::one(), b: T::zero(), converged: true }
    }

    pub fn apply(&self, score: T) -> T {
        sigmoid(self.a * score + self.b)
    }
}

fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Fits `sigmoid(a·score + b)` to the labels by Newton descent on the
/// cross-entropy against Platt's smoothed targets.
pub fn fit_platt<T: Real>(scores: &[T], y: &[bool]) -> Result<PlattParams<T>> {
    if scores.len() != y.len() {
        return Err(Error::LengthMismatch { left: scores.len(), right: y.len() });
    }
    let n_pos = y.iter().filter(|&&b| b).count();
    let n_neg = y.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let t_pos = T::of((n_pos as f64 + 1.0) / (n_pos as f64 + 2.0));
    let t_neg = T::of(1.0 / (n_neg as f64 + 2.0));
    let targets: Vec<T> = y.iter().map(|&b| if b { t_pos } else { t_neg }).collect();

    let loss = |a: T, b: T| -> T {
        scores
            .iter()
            .zip(&targets)
            .map(|(&s, &t)| {
                let z = a * s + b;
                t * softplus(-z) + (T::one() - t) * softplus(z)
            })
            .sum()
    };

    let mut a = T::zero();
    let mut b = ((T::of_usize(n_pos) + T::one()) / (T::of_usize(n_neg) + T::one())).ln();
    let mut f = loss(a, b);
    let (mut best, mut best_f) = ((a, b), f);
    let tol = T::of(1e-10);
    let ridge = T::of(1e-12);
    let mut converged = false;
    for _ in 0..100 {
        let mut g_a = T::zero();
        let mut g_b = T::zero();
        let mut h_aa = T::zero();
        let mut h_ab = T::zero();
        let mut h_bb = T::zero();
        for (&s, &t) in scores.iter().zip(&targets) {
            let p = sigmoid(a * s + b);
            let d = p - t;
            let w = p * (T::one() - p);
            g_a = g_a + d * s;
            g_b = g_b + d;
            h_aa = h_aa + w * s * s;
            h_ab = h_ab + w * s;
            h_bb = h_bb + w;
        }
        if g_a.abs().max(g_b.abs()) < tol {
            converged = true;
            break;
        }
        h_aa = h_aa + ridge;
        h_bb = h_bb + ridge;
        let det = h_aa * h_bb - h_ab * h_ab;
        if det <= T::zero() || !det.is_finite() {
            return Err(Error::NumericalFailure("singular Hessian in Platt fit".into()));
        }
        let step_a = (h_bb * g_a - h_ab * g_b) / det;
        let step_b = (h_aa * g_b - h_ab * g_a) / det;

        let mut scale = T::one();
        let mut accepted = false;
        for _ in 0..50 {
            let (na, nb) = (a - scale * step_a, b - scale * step_b);
            let nf = loss(na, nb);
            if nf < f {
                a = na;
                b = nb;
                f = nf;
                accepted = true;
                break;
            }
            scale = scale * T::of(0.5);
        }
        if !accepted {
            break;
        }
        if f < best_f {
            best = (a, b);
            best_f = f;
        }
    }
    if f < best_f {
        best = (a, b);
    }
    Ok(PlattParams { a: best.0, b: best.1, converged })
}

fn f_beta<T: Real>(tp: usize, fp: usize, fn_: usize, beta2: T) -> T {
    let tp = T::of_usize(tp);
    let denom = (T::one() + beta2) * tp + beta2 * T::of_usize(fn_) + T::of_usize(fp);
    if denom == T::zero() {
        T::zero()
    } else {
        (T::one() + beta2) * tp / denom
    }
}

/// Picks the decision cut maximizing F_beta over the observed probability
/// values, with "predict positive" meaning `p >= cut`. Ties go to the
/// larger cut and the result is clamped away from 0 and 1.
pub fn select_threshold<T: Real>(probs: &[T], y: &[bool], beta: f64) -> Result<T> {
    if probs.len() != y.len() {
        return Err(Error::LengthMismatch { left: probs.len(), right: y.len() });
    }
    if probs.is_empty() || y.iter().all(|&b| b) || y.iter().all(|&b| !b) {
        return Err(Error::SingleClass);
    }
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::NumericalFailure("non-finite probability".into()));
    }
    let beta2 = T::of(beta * beta);
    let mut cuts: Vec<T> = probs.to_vec();
    cuts.sort_by(|x, z| x.partial_cmp(z).unwrap());
    cuts.dedup();

    let mut best_cut = cuts[0];
    let mut best_score = T::neg_infinity();
    for &cut in &cuts {
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        for (&p, &label) in probs.iter().zip(y) {
            match (p >= cut, label) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let score = f_beta(tp, fp, fn_, beta2);
        if score >= best_score {
            best_score = score;
            best_cut = cut;
        }
    }
    Ok(best_cut.max(T::of(PROB_CLAMP)).min(T::one() - T::of(PROB_CLAMP)))
}

/// Shifts a calibrated probability in normal-quantile space so the given
/// threshold lands on 0.5: `Phi(Phi^-1(p) - Phi^-1(t))`. Strictly
/// increasing in `p`, and exactly 0.5 at `p = t`.
pub fn rescale<T: Real>(p: T, threshold: T) -> T {
    let lo = T::of(PROB_CLAMP);
    let hi = T::one() - lo;
    let p = p.max(lo).min(hi);
    let t = threshold.max(lo).min(hi);
    norm_cdf(norm_ppf(p) - norm_ppf(t))
}

/// The other class's share of a pairwise probability.
pub fn complement<T: Real>(p: T) -> T {
    T::one() - p
}

/// Rescaled pairwise probabilities; entry `m` is the probability of the
/// lower-index class of `PAIRS[m]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairwiseProbs<T> {
    pub p: [T; 3],
}

/// One coherent class distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassProbs<T> {
    pub p: [T; 3],
    /// Set when every coupled mass was zero and the uniform fallback was
    /// returned.
    pub degenerate: bool,
}

impl<T: Real> ClassProbs<T> {
    pub fn uniform() -> Self {
        let third = T::one() / T::of(3.0);
        ClassProbs { p: [third; 3], degenerate: true }
    }

    /// First class index attaining the maximum probability.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..3 {
            if self.p[i] > self.p[best] {
                best = i;
            }
        }
        best
    }
}

/// Combines the two pairwise views of each class into one distribution.
/// For class `i` with pairwise probabilities `a` and `b`, the unnormalized
/// mass is `a·b / (a + b - a·b)` (zero when the denominator vanishes); the
/// masses are then normalized to sum to one.
pub fn couple<T: Real>(pw: &PairwiseProbs<T>) -> ClassProbs<T> {
    let one = T::one();
    let views = [
        (pw.p[0], pw.p[1]),
        (one - pw.p[0], pw.p[2]),
        (one - pw.p[1], one - pw.p[2]),
    ];
    let mut q = [T::zero(); 3];
    for (i, &(a, b)) in views.iter().enumerate() {
        let denom = a + b - a * b;
        if denom > T::zero() {
            q[i] = a * b / denom;
        }
    }
    let total = q[0] + q[1] + q[2];
    if total <= T::zero() {
        return ClassProbs::uniform();
    }
    ClassProbs { p: [q[0] / total, q[1] / total, q[2] / total], degenerate: false }
}

/// Reweights a class distribution toward explicit priors and renormalizes.
/// `None` is the identity.
pub fn apply_prior_correction<T: Real>(
    probs: ClassProbs<T>,
    priors: Option<&[T; 3]>,
) -> ClassProbs<T> {
    let Some(w) = priors else { return probs };
    let scaled = [probs.p[0] * w[0], probs.p[1] * w[1], probs.p[2] * w[2]];
    let total = scaled[0] + scaled[1] + scaled[2];
    if total <= T::zero() {
        return ClassProbs::uniform();
    }
    ClassProbs {
        p: [scaled[0] / total, scaled[1] / total, scaled[2] / total],
        degenerate: probs.degenerate,
    }
}

/// Everything needed to score one class pair on raw design rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairModel<T> {
    pub pair: (usize, usize),
    pub transform: FeatureTransform<T>,
    pub gbm: GbmModel<T>,
    pub platt: PlattParams<T>,
    pub threshold: T,
    pub best_hp: HyperParams,
    pub mean_aucpr: f64,
}

impl<T: Real> PairModel<T> {
    /// Rescaled probability of the pair's lower-index class, per row.
    pub fn pair_probs(&self, x: &DenseMatrix<T>) -> Result<Vec<T>> {
        let margins = self.gbm.predict_margin(&self.transform.apply(x)?)?;
        Ok(margins.into_iter().map(|m| rescale(self.platt.apply(m), self.threshold)).collect())
    }
}

/// Runs the full chain over raw design rows: margin, Platt, rescale,
/// complement, couple.
pub fn calibrate_predict<T: Real>(
    models: &[PairModel<T>; 3],
    x: &DenseMatrix<T>,
) -> Result<Vec<ClassProbs<T>>> {
    for (model, expected) in models.iter().zip(PAIRS) {
        if model.pair != expected {
            return Err(Error::ConfigInvalid(format!(
                "pair models out of order: found {:?} where {:?} belongs",
                model.pair, expected
            )));
        }
    }
    let per_pair: Vec<Vec<T>> =
        models.iter().map(|m| m.pair_probs(x)).collect::<Result<_>>()?;
    Ok((0..x.n_rows())
        .map(|r| couple(&PairwiseProbs { p: [per_pair[0][r], per_pair[1][r], per_pair[2][r]] }))
        .collect())
}
