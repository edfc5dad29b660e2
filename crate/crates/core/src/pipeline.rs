//! End-to-end orchestration of the pipeline stages.
//!
//! Each stage is a function of the run configuration and the artifacts of
//! earlier stages: [`run_synth`] writes a panel, its truth classes and the
//! archived script; [`run_label`] writes per-threshold scenario labels;
//! [`run_train`] writes the model bundle; [`run_predict`] writes risk-index
//! rows; [`run_evaluate`] writes metric reports for the reserved holdout
//! window. Labels are recomputed from the panel wherever they are needed,
//! so deleting a downstream artifact never invalidates an upstream one.
//!
//! Identical configuration and seed produce byte-identical artifacts at any
//! thread count. Every tabular output starts with `#` comment lines and
//! every JSON output carries fields recording the crate version, the
//! configuration hash and the seed.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{
    apply_prior_correction, calibrate_predict, fit_platt, select_threshold, PairModel, PAIRS,
};
use crate::config::{config_hash, RunConfig};
use crate::error::{Error, Result};
use crate::features::{audit_no_leakage, build_design, DesignMatrix, FeatureTransform, Horizon};
use crate::gbm::search::{make_split_plan, random_grid_search, stratified_folds, SearchData};
use crate::gbm::fit_gbm;
use crate::labeling::{label_panel, ClassLabel, PanelLabels};
use crate::metrics::{evaluate, log_loss, EvaluationReport};
use crate::num::substream;
use crate::panel::{ColumnSchema, FlowPanel, MonthIndex, ThresholdSpec};
use crate::synth::generate;

/// Crate version stamped into every artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Substream tag for fold assignment in the search plan.
const TAG_PLAN: u64 = 0x706c_616e;
/// Substream tag for the hyperparameter search.
const TAG_SEARCH: u64 = 0x7372_6368;
/// Substream tag for out-of-fold calibration fits.
const TAG_CAL: u64 = 0x6361_6c69;
/// Substream tag for the final per-pair refit.
const TAG_REFIT: u64 = 0x7265_6674;

/// Fitted models for one (threshold, horizon) combination.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleCell {
    pub threshold_yearly: f64,
    pub horizon: u32,
    /// First month of the reserved holdout window; training used only
    /// target months before it.
    pub holdout_start: MonthIndex,
    pub n_train_rows: usize,
    pub pairs: [PairModel<f64>; 3],
}

/// Everything `predict` and `evaluate` need, serialized as one JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelBundle {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub cells: Vec<BundleCell>,
}

/// Counts reported after synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub n_countries: usize,
    pub n_months: usize,
    pub truth_counts: [usize; 3],
}

/// Label distribution for one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSummary {
    pub threshold_yearly: f64,
    pub counts: [usize; 3],
    pub proportions: [f64; 3],
}

/// JSON artifact written next to the label file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub thresholds: Vec<ThresholdSummary>,
}

/// One row of the `metrics.csv` report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub threshold_yearly: f64,
    pub horizon: u32,
    pub n_rows: usize,
    pub log_loss: f64,
    /// Log loss of the constant predictor equal to the training class mix.
    pub baseline_log_loss: f64,
    pub brier: f64,
    pub entropy: f64,
    pub c_statistic: f64,
}

#[derive(Serialize, Deserialize)]
struct ScriptArtifact {
    version: String,
    config_hash: String,
    seed: u64,
    script: crate::synth::ScenarioScript,
}

#[derive(Serialize, Deserialize)]
struct CurveArtifact {
    version: String,
    config_hash: String,
    seed: u64,
    cells: Vec<CurveCell>,
}

#[derive(Serialize, Deserialize)]
struct CurveCell {
    threshold_yearly: f64,
    horizon: u32,
    report: EvaluationReport<f64>,
}

fn stamp(config: &RunConfig) -> String {
    format!("# flowrisk {VERSION}\n# config {}\n# seed {}\n", config_hash(config), config.seed)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, contents)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_csv_rows(path: &Path, head: &str, columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut buf = head.as_bytes().to_vec();
    {
        let mut wtr = csv::Writer::from_writer(&mut buf);
        wtr.write_record(columns)?;
        for row in rows {
            wtr.write_record(row)?;
        }
        wtr.flush()?;
    }
    write_file(path, &buf)
}

/// Generates the configured scenario and writes the panel, its truth
/// classes and the archived script.
pub fn run_synth(config: &RunConfig) -> Result<SynthSummary> {
    config.validate()?;
    let script = config.synth.resolve()?;
    let (panel, truth) = generate(&script)?;

    let mut body = Vec::new();
    panel.write_csv(&mut body, &ColumnSchema::default())?;
    let mut out = stamp(config).into_bytes();
    out.extend_from_slice(&body);
    write_file(&config.paths.panel, &out)?;

    let mut counts = [0usize; 3];
    let rows: Vec<Vec<String>> = truth
        .iter()
        .map(|(key, class)| {
            counts[class.index()] += 1;
            vec![
                key.country_id.clone(),
                key.month.year.to_string(),
                key.month.month.to_string(),
                class.to_string(),
            ]
        })
        .collect();
    write_csv_rows(&config.paths.truth, &stamp(config), &["country", "year", "month", "class"], &rows)?;

    write_json(
        &config.paths.script,
        &ScriptArtifact {
            version: VERSION.into(),
            config_hash: config_hash(config),
            seed: config.seed,
            script,
        },
    )?;

    Ok(SynthSummary {
        n_countries: panel.n_countries(),
        n_months: panel.n_months(),
        truth_counts: counts,
    })
}

/// Labels the panel at every configured threshold and writes the label file
/// plus a class-proportion summary.
pub fn run_label(config: &RunConfig) -> Result<LabelSummary> {
    config.validate()?;
    let panel = FlowPanel::<f64>::read_csv_path(&config.paths.panel, &ColumnSchema::default())?;

    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for &yearly in &config.thresholds {
        let threshold = ThresholdSpec::from_yearly(yearly)?;
        let labels = label_panel(&panel, &threshold, &config.changepoint)?;
        for (key, record) in labels.iter() {
            rows.push(vec![
                key.country_id.clone(),
                key.month.year.to_string(),
                key.month.month.to_string(),
                yearly.to_string(),
                record.scenario.to_string(),
                record.class.to_string(),
            ]);
        }
        summaries.push(ThresholdSummary {
            threshold_yearly: yearly,
            counts: labels.counts(),
            proportions: labels.proportions(),
        });
    }
    write_csv_rows(
        &config.paths.labels,
        &stamp(config),
        &["country", "year", "month", "threshold_yearly", "scenario", "class"],
        &rows,
    )?;

    let summary = LabelSummary {
        version: VERSION.into(),
        config_hash: config_hash(config),
        seed: config.seed,
        thresholds: summaries,
    };
    write_json(&config.paths.label_summary, &summary)?;
    Ok(summary)
}

/// First holdout month: the last `holdout_months` distinct target months of
/// the design are reserved for evaluation.
fn holdout_start(design: &DesignMatrix<f64>, holdout_months: usize) -> Result<MonthIndex> {
    let distinct: Vec<MonthIndex> =
        design.keys.iter().map(|k| k.month).collect::<BTreeSet<_>>().into_iter().collect();
    if distinct.len() <= holdout_months {
        return Err(Error::ConfigInvalid(format!(
            "holdout of {holdout_months} months needs more than {} design months",
            distinct.len()
        )));
    }
    Ok(distinct[distinct.len() - holdout_months])
}

fn train_pair(
    config: &RunConfig,
    design: &DesignMatrix<f64>,
    train_rows: &[usize],
    tags: [u64; 3],
    pair: (usize, usize),
) -> Result<PairModel<f64>> {
    let rows: Vec<usize> = train_rows
        .iter()
        .copied()
        .filter(|&r| {
            let c = design.y[r].index();
            c == pair.0 || c == pair.1
        })
        .collect();
    let y: Vec<bool> = rows.iter().map(|&r| design.y[r].index() == pair.0).collect();
    let months: Vec<MonthIndex> = rows.iter().map(|&r| design.keys[r].month).collect();

    let n_folds = config.search.n_folds;
    for class_index in [pair.0, pair.1] {
        let count = rows.iter().filter(|&&r| design.y[r].index() == class_index).count();
        if count < n_folds {
            let class = ClassLabel::from_index(class_index).expect("pair classes are valid");
            return Err(Error::TooFewRowsPerClass {
                class: format!("{class:?}"),
                count,
                folds: n_folds,
            });
        }
    }

    let x = design.x.select_rows(&rows);
    let seed = config.seed;
    let [ti, hi, pi] = tags;
    let plan = make_split_plan(
        &months,
        &y,
        n_folds,
        &config.search.windows,
        substream(seed, &[TAG_PLAN, ti, hi, pi]),
    )?;
    let data = SearchData {
        x: &x,
        y: &y,
        months: &months,
        columns: &design.columns,
        policy: config.features.policy,
        include_conflict: config.features.include_conflict,
    };
    let outcome = random_grid_search(
        &data,
        &plan,
        config.search.n_draws,
        substream(seed, &[TAG_SEARCH, ti, hi, pi]),
    )?;
    let hp = *outcome.best_hp();

    let folds = stratified_folds(&y, n_folds, substream(seed, &[TAG_CAL, ti, hi, pi]))?;
    let mut oof = vec![f64::NAN; rows.len()];
    for (fi, fold) in folds.iter().enumerate() {
        let fit_rows: Vec<usize> =
            (0..rows.len()).filter(|r| fold.binary_search(r).is_err()).collect();
        let fit_y: Vec<bool> = fit_rows.iter().map(|&r| y[r]).collect();
        let (transform, fit_x) = FeatureTransform::fit(
            &x.select_rows(&fit_rows),
            &design.columns,
            config.features.policy,
            config.features.include_conflict,
        )?;
        let model =
            fit_gbm(&fit_x, &fit_y, &hp, substream(seed, &[TAG_CAL, ti, hi, pi, fi as u64]))?;
        let margins = model.predict_margin(&transform.apply(&x.select_rows(fold))?)?;
        for (pos, &r) in fold.iter().enumerate() {
            oof[r] = margins[pos];
        }
    }
    let platt = fit_platt(&oof, &y)?;
    let calibrated: Vec<f64> = oof.iter().map(|&s| platt.apply(s)).collect();
    let threshold = select_threshold(&calibrated, &y, config.calibration.f_beta)?;

    let (transform, fit_x) = FeatureTransform::fit(
        &x,
        &design.columns,
        config.features.policy,
        config.features.include_conflict,
    )?;
    let gbm = fit_gbm(&fit_x, &y, &hp, substream(seed, &[TAG_REFIT, ti, hi, pi]))?;

    Ok(PairModel {
        pair,
        transform,
        gbm,
        platt,
        threshold,
        best_hp: hp,
        mean_aucpr: outcome.best().mean_aucpr.unwrap_or(f64::NAN),
    })
}

fn train_cell(
    config: &RunConfig,
    panel: &FlowPanel<f64>,
    labels: &PanelLabels<f64>,
    ti: usize,
    hi: usize,
    yearly: f64,
    horizon: Horizon,
) -> Result<BundleCell> {
    let design = build_design(panel, labels, horizon, &config.features.roles)?;
    audit_no_leakage(&design, panel, horizon)?;
    let holdout = holdout_start(&design, config.evaluation.holdout_months)?;
    let train_rows: Vec<usize> =
        (0..design.n_rows()).filter(|&r| design.keys[r].month < holdout).collect();

    let mut pairs = Vec::with_capacity(PAIRS.len());
    for (pi, &pair) in PAIRS.iter().enumerate() {
        pairs.push(train_pair(config, &design, &train_rows, [ti as u64, hi as u64, pi as u64], pair)?);
    }
    let pairs: [PairModel<f64>; 3] = pairs.try_into().expect("one model per pair");
    Ok(BundleCell {
        threshold_yearly: yearly,
        horizon: horizon.raw(),
        holdout_start: holdout,
        n_train_rows: train_rows.len(),
        pairs,
    })
}

/// Trains one cell per (threshold, horizon) combination and writes the
/// model bundle.
pub fn run_train(config: &RunConfig) -> Result<ModelBundle> {
    config.validate()?;
    let panel = FlowPanel::<f64>::read_csv_path(&config.paths.panel, &ColumnSchema::default())?;

    let mut cells = Vec::new();
    for (ti, &yearly) in config.thresholds.iter().enumerate() {
        let threshold = ThresholdSpec::from_yearly(yearly)?;
        let labels = label_panel(&panel, &threshold, &config.changepoint)?;
        for (hi, &months_ahead) in config.horizons.iter().enumerate() {
            let horizon = Horizon::new(months_ahead)?;
            cells.push(train_cell(config, &panel, &labels, ti, hi, yearly, horizon)?);
        }
    }
    let bundle = ModelBundle {
        version: VERSION.into(),
        config_hash: config_hash(config),
        seed: config.seed,
        cells,
    };
    let mut text = serde_json::to_string(&bundle)?;
    text.push('\n');
    write_file(&config.paths.bundle, text.as_bytes())?;
    Ok(bundle)
}

/// Reads a model bundle back.
pub fn load_bundle(path: &Path) -> Result<ModelBundle> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

struct ScoredCell {
    yearly: f64,
    horizon: Horizon,
    design: DesignMatrix<f64>,
    kept: Vec<usize>,
    probs: Vec<crate::calibration::ClassProbs<f64>>,
}

/// Rebuilds the design for one bundle cell and scores the rows selected by
/// `keep`.
fn score_cell(
    config: &RunConfig,
    panel: &FlowPanel<f64>,
    cell: &BundleCell,
    keep: impl Fn(MonthIndex) -> bool,
) -> Result<ScoredCell> {
    let threshold = ThresholdSpec::from_yearly(cell.threshold_yearly)?;
    let labels = label_panel(panel, &threshold, &config.changepoint)?;
    let horizon = Horizon::new(cell.horizon)?;
    let design = build_design(panel, &labels, horizon, &config.features.roles)?;
    audit_no_leakage(&design, panel, horizon)?;
    let kept: Vec<usize> = (0..design.n_rows()).filter(|&r| keep(design.keys[r].month)).collect();
    let probs = if kept.is_empty() {
        Vec::new()
    } else {
        let raw = calibrate_predict(&cell.pairs, &design.x.select_rows(&kept))?;
        raw.into_iter()
            .map(|p| apply_prior_correction(p, config.calibration.prior_correction.as_ref()))
            .collect()
    };
    Ok(ScoredCell { yearly: cell.threshold_yearly, horizon, design, kept, probs })
}

/// Scores every bundle cell and writes the risk-index file. `months`
/// restricts output to target months in the inclusive range. Returns the
/// number of rows written.
pub fn run_predict(config: &RunConfig, months: Option<(MonthIndex, MonthIndex)>) -> Result<usize> {
    config.validate()?;
    if let Some((first, last)) = months {
        if first > last {
            return Err(Error::ConfigInvalid(format!(
                "month range starts at {first} but ends at {last}"
            )));
        }
    }
    let panel = FlowPanel::<f64>::read_csv_path(&config.paths.panel, &ColumnSchema::default())?;
    let bundle = load_bundle(&config.paths.bundle)?;

    struct RiskRow {
        country: String,
        month: MonthIndex,
        horizon: u32,
        yearly: f64,
        p: [f64; 3],
        degenerate: bool,
    }
    let mut rows = Vec::new();
    for cell in &bundle.cells {
        let scored = score_cell(config, &panel, cell, |m| {
            months.is_none_or(|(first, last)| first <= m && m <= last)
        })?;
        for (pos, &r) in scored.kept.iter().enumerate() {
            let key = &scored.design.keys[r];
            rows.push(RiskRow {
                country: key.country_id.clone(),
                month: key.month,
                horizon: scored.horizon.raw(),
                yearly: scored.yearly,
                p: scored.probs[pos].p,
                degenerate: scored.probs[pos].degenerate,
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::ConfigInvalid(
            "no design rows fall inside the requested month range".into(),
        ));
    }
    rows.sort_by(|a, b| {
        (&a.country, a.month, a.horizon)
            .cmp(&(&b.country, b.month, b.horizon))
            .then(a.yearly.total_cmp(&b.yearly))
    });

    let head = format!("{}# bundle {}\n", stamp(config), bundle.config_hash);
    let records: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.country.clone(),
                r.month.year.to_string(),
                r.month.month.to_string(),
                r.horizon.to_string(),
                r.yearly.to_string(),
                r.p[0].to_string(),
                r.p[1].to_string(),
                r.p[2].to_string(),
                if r.degenerate { "degenerate" } else { "ok" }.to_string(),
            ]
        })
        .collect();
    write_csv_rows(
        &config.paths.risk,
        &head,
        &[
            "country",
            "year",
            "month",
            "horizon",
            "threshold_yearly",
            "p_class1",
            "p_class2",
            "p_class3",
            "flag",
        ],
        &records,
    )?;
    Ok(rows.len())
}

/// Scores the holdout window of every bundle cell and writes the metric,
/// calibration and curve reports.
pub fn run_evaluate(config: &RunConfig) -> Result<Vec<CellMetrics>> {
    config.validate()?;
    let panel = FlowPanel::<f64>::read_csv_path(&config.paths.panel, &ColumnSchema::default())?;
    let bundle = load_bundle(&config.paths.bundle)?;

    let mut metric_rows = Vec::new();
    let mut calibration_rows = Vec::new();
    let mut curves = Vec::new();
    for cell in &bundle.cells {
        let scored = score_cell(config, &panel, cell, |m| m >= cell.holdout_start)?;
        if scored.kept.is_empty() {
            return Err(Error::ConfigInvalid(format!(
                "holdout window starting {} contains no design rows",
                cell.holdout_start
            )));
        }
        let y: Vec<ClassLabel> = scored.kept.iter().map(|&r| scored.design.y[r]).collect();
        let probs: Vec<[f64; 3]> = scored.probs.iter().map(|c| c.p).collect();
        let report =
            evaluate(&probs, &y, config.evaluation.n_bins, config.evaluation.c_statistic)?;

        let mut prior = [0.0f64; 3];
        let mut n_train = 0usize;
        for (r, key) in scored.design.keys.iter().enumerate() {
            if key.month < cell.holdout_start {
                prior[scored.design.y[r].index()] += 1.0;
                n_train += 1;
            }
        }
        for v in &mut prior {
            *v /= n_train.max(1) as f64;
        }
        let baseline = log_loss(&vec![prior; y.len()], &y)?;

        let scale = if config.evaluation.entropy_log2 { std::f64::consts::LN_2 } else { 1.0 };
        metric_rows.push(CellMetrics {
            threshold_yearly: scored.yearly,
            horizon: cell.horizon,
            n_rows: y.len(),
            log_loss: report.log_loss,
            baseline_log_loss: baseline,
            brier: report.brier,
            entropy: report.entropy / scale,
            c_statistic: report.c_statistic,
        });
        for diag in &report.per_class {
            calibration_rows.push(vec![
                scored.yearly.to_string(),
                cell.horizon.to_string(),
                diag.class.to_string(),
                diag.ece.to_string(),
                diag.mce.to_string(),
                diag.auc.to_string(),
            ]);
        }
        curves.push(CurveCell {
            threshold_yearly: scored.yearly,
            horizon: cell.horizon,
            report,
        });
    }

    let head = format!("{}# bundle {}\n", stamp(config), bundle.config_hash);
    let records: Vec<Vec<String>> = metric_rows
        .iter()
        .map(|m| {
            vec![
                m.threshold_yearly.to_string(),
                m.horizon.to_string(),
                m.n_rows.to_string(),
                m.log_loss.to_string(),
                m.baseline_log_loss.to_string(),
                m.brier.to_string(),
                m.entropy.to_string(),
                m.c_statistic.to_string(),
            ]
        })
        .collect();
    write_csv_rows(
        &config.paths.reports.join("metrics.csv"),
        &head,
        &[
            "threshold_yearly",
            "horizon",
            "n_rows",
            "log_loss",
            "baseline_log_loss",
            "brier",
            "entropy",
            "c_statistic",
        ],
        &records,
    )?;
    write_csv_rows(
        &config.paths.reports.join("calibration.csv"),
        &head,
        &["threshold_yearly", "horizon", "class", "ece", "mce", "auc"],
        &calibration_rows,
    )?;
    write_json(
        &config.paths.reports.join("curves.json"),
        &CurveArtifact {
            version: VERSION.into(),
            config_hash: config_hash(config),
            seed: config.seed,
            cells: curves,
        },
    )?;
    Ok(metric_rows)
}

/// Artifact paths a full run writes, in stage order.
pub fn artifact_paths(config: &RunConfig) -> Vec<PathBuf> {
    vec![
        config.paths.panel.clone(),
        config.paths.truth.clone(),
        config.paths.script.clone(),
        config.paths.labels.clone(),
        config.paths.label_summary.clone(),
        config.paths.bundle.clone(),
        config.paths.risk.clone(),
        config.paths.reports.join("metrics.csv"),
        config.paths.reports.join("calibration.csv"),
        config.paths.reports.join("curves.json"),
    ]
}
