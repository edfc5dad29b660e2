//! Gradient-boosted trees for binary classification under logistic loss,
//! with the random hyperparameter search used to pick a configuration per
//! pairwise model.
//!
//! Boosting starts from the log-odds of the positive prevalence and adds
//! one Newton-step tree per round on the current gradients. Row and column
//! subsampling draw from a per-tree RNG substream, so fits are reproducible
//! regardless of how many are running concurrently.

pub mod search;
pub mod tree;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::num::{logit, sigmoid, substream, Real};
use tree::{grow_tree, presort, GrowSpec, Tree};

pub use crate::metrics::aucpr;

/// Additive regularizer on every leaf hessian sum.
pub const LEAF_EPS: f64 = 1e-6;
/// Minimum split gain for a node to stop being a leaf.
pub const MIN_GAIN: f64 = 1e-12;

const TAG_TREE: u64 = 0x7472_6565;

/// One boosting configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_rows: usize,
    pub sample_rate: f64,
    pub col_sample_rate: f64,
}

impl HyperParams {
    /// Sanity bounds; membership in the search grid is a separate question
    /// answered by [`search::hyper_grid`].
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::ConfigInvalid("n_trees must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::ConfigInvalid(format!(
                "learning_rate must lie in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if self.max_depth > 64 {
            return Err(Error::ConfigInvalid(format!(
                "max_depth {} is beyond any sensible tree",
                self.max_depth
            )));
        }
        if self.min_rows == 0 {
            return Err(Error::ConfigInvalid("min_rows must be at least 1".into()));
        }
        for (name, rate) in
            [("sample_rate", self.sample_rate), ("col_sample_rate", self.col_sample_rate)]
        {
            if !(rate > 0.0 && rate <= 1.0) {
                return Err(Error::ConfigInvalid(format!(
                    "{name} must lie in (0, 1], got {rate}"
                )));
            }
        }
        Ok(())
    }
}

/// Fitted boosted ensemble for one binary problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmModel<T> {
    base_score: T,
    learning_rate: T,
    feature_width: usize,
    trees: Vec<Tree<T>>,
}

impl<T: Real> GbmModel<T> {
    /// A model with no trees that always predicts `sigmoid(base_score)`.
    pub fn constant(base_score: T, feature_width: usize) -> Self {
        GbmModel { base_score, learning_rate: T::one(), feature_width, trees: Vec::new() }
    }

    pub fn base_score(&self) -> T {
        self.base_score
    }

    pub fn learning_rate(&self) -> T {
        self.learning_rate
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    pub fn trees(&self) -> &[Tree<T>] {
        &self.trees
    }

    pub fn predict_margin_row(&self, row: &[T]) -> T {
        let mut margin = self.base_score;
        for tree in &self.trees {
            margin = margin + self.learning_rate * tree.predict_row(row);
        }
        margin
    }

    pub fn predict_margin(&self, x: &DenseMatrix<T>) -> Result<Vec<T>> {
        if x.n_cols() != self.feature_width {
            return Err(Error::WidthMismatch { expected: self.feature_width, got: x.n_cols() });
        }
        Ok(x.rows_iter().map(|row| self.predict_margin_row(row)).collect())
    }

    pub fn predict_prob(&self, x: &DenseMatrix<T>) -> Result<Vec<T>> {
        Ok(self.predict_margin(x)?.into_iter().map(sigmoid).collect())
    }
}

/// Draws `floor(rate·n)` (at least one) distinct indices, or everything
/// when the rate is 1.
fn subsample(rng: &mut ChaCha8Rng, n: usize, rate: f64) -> Vec<usize> {
    let count = ((rate * n as f64 + 1e-9).floor() as usize).clamp(1, n);
    if count == n {
        (0..n).collect()
    } else {
        rand::seq::index::sample(rng, n, count).into_vec()
    }
}

fn column_is_constant<T: Real>(x: &DenseMatrix<T>, c: usize) -> bool {
    let first = x.get(0, c);
    (0..x.n_rows()).all(|r| {
        let v = x.get(r, c);
        v == first || (v.is_nan() && first.is_nan())
    })
}

/// Fits a boosted ensemble of `hp.n_trees` regression trees on the logistic
/// loss gradients of `y`.
pub fn fit_gbm<T: Real>(
    x: &DenseMatrix<T>,
    y: &[bool],
    hp: &HyperParams,
    seed: u64,
) -> Result<GbmModel<T>> {
    hp.validate()?;
    let n = x.n_rows();
    if y.len() != n {
        return Err(Error::LengthMismatch { left: n, right: y.len() });
    }
    if n < 2 * hp.min_rows {
        return Err(Error::TooFewRows { rows: n, min_rows: hp.min_rows });
    }
    let n_pos = y.iter().filter(|&&b| b).count();
    if n_pos == 0 || n_pos == n {
        return Err(Error::SingleClass);
    }
    if (0..x.n_cols()).all(|c| column_is_constant(x, c)) {
        return Err(Error::DegenerateFeatures);
    }

    let base = logit(T::of_usize(n_pos) / T::of_usize(n));
    let lr = T::of(hp.learning_rate);
    let spec = GrowSpec {
        max_depth: hp.max_depth,
        min_rows: hp.min_rows,
        leaf_eps: T::of(LEAF_EPS),
        min_gain: T::of(MIN_GAIN),
    };
    let cols = presort(x);
    let mut margins = vec![base; n];
    let mut grad = vec![T::zero(); n];
    let mut hess = vec![T::zero(); n];
    let mut trees = Vec::with_capacity(hp.n_trees);
    for t in 0..hp.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(substream(seed, &[TAG_TREE, t as u64]));
        let rows: Vec<u32> =
            subsample(&mut rng, n, hp.sample_rate).into_iter().map(|r| r as u32).collect();
        let mut features = subsample(&mut rng, x.n_cols(), hp.col_sample_rate);
        features.sort_unstable();

        for r in 0..n {
            let p = sigmoid(margins[r]);
            grad[r] = p - if y[r] { T::one() } else { T::zero() };
            hess[r] = p * (T::one() - p);
        }
        let tree = grow_tree(x, &cols, &grad, &hess, &rows, &features, &spec);
        for (r, margin) in margins.iter_mut().enumerate() {
            *margin = *margin + lr * tree.predict_row(x.row(r));
        }
        trees.push(tree);
    }
    Ok(GbmModel { base_score: base, learning_rate: lr, feature_width: x.n_cols(), trees })
}
