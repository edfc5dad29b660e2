//! Random hyperparameter search over the fixed boosting grid, scored by
//! cross-validated AUCPR on stratified folds crossed with moving time
//! windows.
//!
//! A search cell is one (window, fold) pair: the candidate is fit on the
//! window's train months minus the fold and scored on the fold rows inside
//! those months. Preprocessing is refit per cell on the fit rows only, so
//! validation rows never influence imputation, scaling, or the projection.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_gbm, HyperParams};
use crate::error::{Error, Result};
use crate::features::{DesignColumn, FeatureTransform, KPolicy};
use crate::matrix::DenseMatrix;
use crate::metrics::{aucpr, log_loss_binary};
use crate::num::{sigmoid, substream, Real};
use crate::panel::MonthIndex;

const TAG_FOLD: u64 = 0x666f_6c64;
const TAG_DRAW: u64 = 0x6472_6177;
const TAG_FIT: u64 = 0x6669_7464;

pub const N_TREES_GRID: [usize; 3] = [200, 500, 1000];
pub const LEARNING_RATE_GRID: [f64; 3] = [0.001, 0.01, 0.1];
pub const MAX_DEPTH_GRID: [usize; 4] = [3, 5, 9, 12];
pub const MIN_ROWS_GRID: [usize; 3] = [5, 10, 25];
pub const SAMPLE_RATE_GRID: [f64; 2] = [0.8, 1.0];
pub const COL_SAMPLE_RATE_GRID: [f64; 3] = [0.2, 0.5, 1.0];

/// The full cross product of the tuning sets, in a fixed nesting order
/// (trees outermost, column rate innermost).
pub fn hyper_grid() -> Vec<HyperParams> {
    let mut grid = Vec::new();
    for &n_trees in &N_TREES_GRID {
        for &learning_rate in &LEARNING_RATE_GRID {
            for &max_depth in &MAX_DEPTH_GRID {
                for &min_rows in &MIN_ROWS_GRID {
                    for &sample_rate in &SAMPLE_RATE_GRID {
                        for &col_sample_rate in &COL_SAMPLE_RATE_GRID {
                            grid.push(HyperParams {
                                n_trees,
                                learning_rate,
                                max_depth,
                                min_rows,
                                sample_rate,
                                col_sample_rate,
                            });
                        }
                    }
                }
            }
        }
    }
    grid
}

/// Moving-window layout. `train_len: None` means expanding windows that
/// always start at the first month. `n_windows: Some(k)` keeps only the
/// last `k` windows, the default being four month-long test sets at the
/// end of the panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub train_len: Option<usize>,
    pub test_len: usize,
    pub step: usize,
    pub n_windows: Option<usize>,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig { train_len: None, test_len: 1, step: 1, n_windows: Some(4) }
    }
}

/// One train/test month range; all bounds are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub train_start: MonthIndex,
    pub train_end: MonthIndex,
    pub test_start: MonthIndex,
    pub test_end: MonthIndex,
}

impl TimeWindow {
    pub fn train_contains(&self, m: MonthIndex) -> bool {
        self.train_start <= m && m <= self.train_end
    }

    pub fn test_contains(&self, m: MonthIndex) -> bool {
        self.test_start <= m && m <= self.test_end
    }
}

/// Enumerates windows over a sorted list of distinct months.
pub fn make_windows(months: &[MonthIndex], cfg: &WindowConfig) -> Result<Vec<TimeWindow>> {
    if months.is_empty() {
        return Err(Error::ConfigInvalid("no months to window".into()));
    }
    if months.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::ConfigInvalid("months must be sorted and distinct".into()));
    }
    if cfg.test_len == 0 || cfg.step == 0 || cfg.train_len == Some(0) || cfg.n_windows == Some(0) {
        return Err(Error::ConfigInvalid(
            "window lengths, step, and window count must be positive".into(),
        ));
    }
    let mut windows = Vec::new();
    let mut i = cfg.train_len.unwrap_or(1);
    while i + cfg.test_len <= months.len() {
        let train_start = match cfg.train_len {
            Some(t) => months[i - t],
            None => months[0],
        };
        windows.push(TimeWindow {
            train_start,
            train_end: months[i - 1],
            test_start: months[i],
            test_end: months[i + cfg.test_len - 1],
        });
        i += cfg.step;
    }
    if windows.is_empty() {
        return Err(Error::ConfigInvalid(format!(
            "window config needs more than {} months",
            months.len()
        )));
    }
    if let Some(k) = cfg.n_windows {
        if windows.len() > k {
            windows.drain(..windows.len() - k);
        }
    }
    Ok(windows)
}

/// Deals each class's shuffled rows round-robin across folds, so every fold
/// holds the global class mix up to one row. The starting fold is staggered
/// by class to keep fold sizes level.
pub fn stratified_folds<L: Ord>(labels: &[L], n_folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n_folds < 2 {
        return Err(Error::ConfigInvalid(format!("need at least 2 folds, got {n_folds}")));
    }
    if labels.len() < n_folds {
        return Err(Error::ConfigInvalid(format!(
            "{} rows cannot fill {} folds",
            labels.len(),
            n_folds
        )));
    }
    let mut groups: BTreeMap<&L, Vec<usize>> = BTreeMap::new();
    for (i, label) in labels.iter().enumerate() {
        groups.entry(label).or_default().push(i);
    }
    let mut folds = vec![Vec::new(); n_folds];
    for (ordinal, (_, mut rows)) in groups.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(substream(seed, &[TAG_FOLD, ordinal as u64]));
        rows.shuffle(&mut rng);
        for (j, row) in rows.into_iter().enumerate() {
            folds[(ordinal + j) % n_folds].push(row);
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

/// Cross-validation layout shared by every candidate in one search.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub windows: Vec<TimeWindow>,
    pub folds: Vec<Vec<usize>>,
}

pub fn make_split_plan<L: Ord>(
    months: &[MonthIndex],
    labels: &[L],
    n_folds: usize,
    cfg: &WindowConfig,
    seed: u64,
) -> Result<SplitPlan> {
    if months.len() != labels.len() {
        return Err(Error::LengthMismatch { left: months.len(), right: labels.len() });
    }
    let distinct: Vec<MonthIndex> = months.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    Ok(SplitPlan {
        windows: make_windows(&distinct, cfg)?,
        folds: stratified_folds(labels, n_folds, seed)?,
    })
}

/// Borrowed view of the rows a search runs on. `x` holds raw (unimputed)
/// covariates; each cell fits its own preprocessing on its fit rows.
#[derive(Debug, Clone, Copy)]
pub struct SearchData<'a, T> {
    pub x: &'a DenseMatrix<T>,
    pub y: &'a [bool],
    pub months: &'a [MonthIndex],
    pub columns: &'a [DesignColumn],
    pub policy: KPolicy,
    pub include_conflict: bool,
}

/// One scored candidate. A fit failure in any cell voids the candidate and
/// is kept for the record instead of aborting the search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub hp: HyperParams,
    pub grid_index: usize,
    pub mean_aucpr: Option<f64>,
    pub mean_log_loss: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    /// Position of the winner in `table` (draw order).
    pub best_draw: usize,
    /// Cells each candidate was scored on.
    pub n_cells: usize,
    /// Every drawn candidate in draw order.
    pub table: Vec<CandidateScore>,
}

impl SearchOutcome {
    pub fn best(&self) -> &CandidateScore {
        &self.table[self.best_draw]
    }

    pub fn best_hp(&self) -> &HyperParams {
        &self.best().hp
    }
}

struct Cell<T> {
    fit_x: DenseMatrix<T>,
    fit_y: Vec<bool>,
    val_x: DenseMatrix<T>,
    val_y: Vec<bool>,
}

fn has_both_classes(y: &[bool]) -> bool {
    y.iter().any(|&b| b) && y.iter().any(|&b| !b)
}

fn build_cells<T: Real>(data: &SearchData<T>, plan: &SplitPlan) -> Vec<Cell<T>> {
    let n = data.y.len();
    let mut cells = Vec::new();
    for window in &plan.windows {
        for fold in &plan.folds {
            let in_fold = |r: &usize| fold.binary_search(r).is_ok();
            let fit_rows: Vec<usize> = (0..n)
                .filter(|r| window.train_contains(data.months[*r]) && !in_fold(r))
                .collect();
            let val_rows: Vec<usize> = fold
                .iter()
                .copied()
                .filter(|r| window.train_contains(data.months[*r]))
                .collect();
            let fit_y: Vec<bool> = fit_rows.iter().map(|&r| data.y[r]).collect();
            let val_y: Vec<bool> = val_rows.iter().map(|&r| data.y[r]).collect();
            if !has_both_classes(&fit_y) || !has_both_classes(&val_y) {
                continue;
            }
            let Ok((transform, fit_x)) = FeatureTransform::fit(
                &data.x.select_rows(&fit_rows),
                data.columns,
                data.policy,
                data.include_conflict,
            ) else {
                continue;
            };
            let Ok(val_x) = transform.apply(&data.x.select_rows(&val_rows)) else {
                continue;
            };
            cells.push(Cell { fit_x, fit_y, val_x, val_y });
        }
    }
    cells
}

fn score_candidate<T: Real>(
    hp: &HyperParams,
    grid_index: usize,
    cells: &[Cell<T>],
    seed: u64,
) -> std::result::Result<(f64, f64), Error> {
    let mut aucpr_sum = 0.0;
    let mut loss_sum = 0.0;
    for (ci, cell) in cells.iter().enumerate() {
        let fit_seed = substream(seed, &[TAG_FIT, grid_index as u64, ci as u64]);
        let model = fit_gbm(&cell.fit_x, &cell.fit_y, hp, fit_seed)?;
        let margins = model.predict_margin(&cell.val_x)?;
        aucpr_sum += aucpr(&margins, &cell.val_y)?.to_f64().unwrap_or(f64::NAN);
        let probs: Vec<T> = margins.into_iter().map(sigmoid).collect();
        loss_sum += log_loss_binary(&probs, &cell.val_y)?.to_f64().unwrap_or(f64::NAN);
    }
    Ok((aucpr_sum / cells.len() as f64, loss_sum / cells.len() as f64))
}

/// Draws `n_draws` distinct candidates from the grid and returns the one
/// with the best mean AUCPR, ties broken by lower mean log loss and then
/// draw order. Identical inputs give identical outcomes at any thread
/// count: draw order is fixed by the seed and each (candidate, cell) fit
/// seeds its own RNG substream keyed by grid index.
pub fn random_grid_search<T: Real>(
    data: &SearchData<'_, T>,
    plan: &SplitPlan,
    n_draws: usize,
    seed: u64,
) -> Result<SearchOutcome> {
    let grid = hyper_grid();
    if n_draws == 0 || n_draws > grid.len() {
        return Err(Error::ConfigInvalid(format!(
            "n_draws must lie in 1..={}, got {n_draws}",
            grid.len()
        )));
    }
    if data.y.len() != data.x.n_rows() || data.y.len() != data.months.len() {
        return Err(Error::LengthMismatch { left: data.x.n_rows(), right: data.y.len() });
    }
    let cells = build_cells(data, plan);
    if cells.is_empty() {
        return Err(Error::NoViableCandidate(
            "every window-fold cell was single-class or failed preprocessing".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(substream(seed, &[TAG_DRAW]));
    let draws = rand::seq::index::sample(&mut rng, grid.len(), n_draws).into_vec();
    let table: Vec<CandidateScore> = draws
        .into_par_iter()
        .map(|grid_index| {
            let hp = grid[grid_index];
            match score_candidate(&hp, grid_index, &cells, seed) {
                Ok((a, l)) => CandidateScore {
                    hp,
                    grid_index,
                    mean_aucpr: Some(a),
                    mean_log_loss: Some(l),
                    failure: None,
                },
                Err(e) => CandidateScore {
                    hp,
                    grid_index,
                    mean_aucpr: None,
                    mean_log_loss: None,
                    failure: Some(e.to_string()),
                },
            }
        })
        .collect();

    let mut best: Option<usize> = None;
    for (i, cand) in table.iter().enumerate() {
        let (Some(a), Some(l)) = (cand.mean_aucpr, cand.mean_log_loss) else { continue };
        let better = match best {
            None => true,
            Some(b) => {
                let ba = table[b].mean_aucpr.unwrap();
                let bl = table[b].mean_log_loss.unwrap();
                a > ba || (a == ba && l < bl)
            }
        };
        if better {
            best = Some(i);
        }
    }
    match best {
        Some(best_draw) => Ok(SearchOutcome { best_draw, n_cells: cells.len(), table }),
        None => {
            let first = table
                .iter()
                .find_map(|c| c.failure.clone())
                .unwrap_or_else(|| "no candidates drawn".into());
            Err(Error::NoViableCandidate(first))
        }
    }
}
