//! Release gate: ten end-to-end checks, one printed line per criterion.
//! Run with `--nocapture` to see every line; any failure also lists the
//! criteria that missed their bar.

mod common;

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use flowrisk::calibration::{couple, fit_platt, rescale, PairwiseProbs};
use flowrisk::config::{Paths, RunConfig, ScriptSource, SearchSettings};
use flowrisk::features::{audit_no_leakage, build_design, Horizon, RoleMap};
use flowrisk::gbm::search::WindowConfig;
use flowrisk::labeling::{
    best_cost_by_enumeration, detect_changepoints, label_panel, optimal_segmentation,
    scenario_at, scenario_to_class, ChangePoint, ClassLabel, CpConfig, Direction, Scenario,
};
use flowrisk::metrics;
use flowrisk::num::sigmoid;
use flowrisk::panel::{ColumnSchema, CountryMonthKey, FlowPanel, MonthIndex, ThresholdSpec};
use flowrisk::pipeline::{load_bundle, run_evaluate, run_predict, run_synth, run_train};
use flowrisk::synth::{demo_script, generate, CountryScript, Regime, ScenarioScript};
use flowrisk::Error;

struct Gate {
    failures: Vec<String>,
}

impl Gate {
    fn report(&mut self, number: usize, pass: bool, what: &str) {
        println!("criterion {number:2}: {} - {what}", if pass { "pass" } else { "FAIL" });
        if !pass {
            self.failures.push(format!("criterion {number}: {what}"));
        }
    }
}

fn criterion_1_changepoint_oracle(gate: &mut Gate) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let cfg = CpConfig::<f64>::default();
    let mut recovered = 0;
    for _ in 0..100 {
        let planted = rng.random_range(10..=38usize);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let shift = sign * (5.0 + 5.0 * rng.random::<f64>());
        let series: Vec<f64> = (0..48)
            .map(|t| {
                let mean = if t < planted { 10.0 } else { 10.0 + shift };
                mean + rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let cps = detect_changepoints(&series, &cfg).unwrap();
        if cps.len() == 1 && cps[0].index.abs_diff(planted) <= 1 {
            recovered += 1;
        }
    }
    let mut false_positives = 0;
    for _ in 0..100 {
        let series: Vec<f64> =
            (0..48).map(|_| 10.0 + rng.sample::<f64, _>(StandardNormal)).collect();
        false_positives += detect_changepoints(&series, &cfg).unwrap().len();
    }
    let elapsed = start.elapsed().as_secs_f64();
    gate.report(
        1,
        recovered >= 95 && false_positives == 0 && elapsed < 5.0,
        &format!(
            "planted 5-sigma shifts recovered within one month in {recovered}/100 series, \
             {false_positives} false change points on 100 constant-mean series, {elapsed:.2}s"
        ),
    );
}

fn criterion_2_segmentation_exactness(gate: &mut Gate) {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut exact = 0;
    let cases = 1000;
    for case in 0..cases {
        let min_segment = 1 + case % 3;
        let n = rng.random_range(2 * min_segment..=20);
        let penalty = 0.5 + 29.5 * rng.random::<f64>();
        let jump_at = rng.random_range(0..n);
        let series: Vec<f64> = (0..n)
            .map(|t| {
                let level = if case % 2 == 0 && t >= jump_at { 8.0 } else { 0.0 };
                level + 3.0 * rng.random::<f64>()
            })
            .collect();
        let (_, dp_cost) = optimal_segmentation(&series, penalty, min_segment).unwrap();
        let brute = best_cost_by_enumeration(&series, penalty, min_segment).unwrap();
        if dp_cost == brute {
            exact += 1;
        }
    }
    gate.report(
        2,
        exact == cases,
        &format!("dynamic-program cost equals full enumeration in {exact}/{cases} random series"),
    );
}

fn criterion_3_scenario_table(gate: &mut Gate) {
    let threshold = ThresholdSpec::from_yearly(1200.0).unwrap();
    let cp = |direction| ChangePoint {
        index: 5,
        direction,
        pre_mean: 10.0,
        post_mean: 500.0,
        pre_var: 1.0,
        post_var: 1.0,
    };
    let above = vec![10.0; 5].into_iter().chain([150.0, 150.0]).collect::<Vec<f64>>();
    let below = vec![10.0; 7];
    let cells = [
        (&above, vec![cp(Direction::Up)], Scenario::A, ClassLabel::SuddenIncrease),
        (&above, vec![], Scenario::B, ClassLabel::SustainedHigh),
        (&above, vec![cp(Direction::Down)], Scenario::C, ClassLabel::SustainedHigh),
        (&below, vec![cp(Direction::Up)], Scenario::D, ClassLabel::BelowThreshold),
        (&below, vec![], Scenario::E, ClassLabel::BelowThreshold),
        (&below, vec![cp(Direction::Down)], Scenario::F, ClassLabel::BelowThreshold),
    ];
    let mut matched = 0;
    for (series, cps, scenario, class) in &cells {
        let got = scenario_at(series, 5, &threshold, cps, 1).unwrap();
        if got == *scenario && scenario_to_class(got) == *class {
            matched += 1;
        }
    }
    gate.report(
        3,
        matched == 6,
        &format!("threshold-side by change-point mapping reproduced in {matched}/6 cells"),
    );
}

fn criterion_4_coupling(gate: &mut Gate) {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut max_sum_err = 0.0f64;
    let mut max_oracle_err = 0.0f64;
    let mut in_range = true;
    for _ in 0..10_000 {
        let pw = PairwiseProbs { p: [rng.random(), rng.random(), rng.random()] };
        let out = couple(&pw);
        in_range &= out.p.iter().all(|v| (0.0..=1.0).contains(v));
        max_sum_err = max_sum_err.max((out.p.iter().sum::<f64>() - 1.0).abs());
        let oracle = common::couple_rational(pw.p[0], pw.p[1], pw.p[2]);
        for (got, want) in out.p.iter().zip(oracle) {
            max_oracle_err = max_oracle_err.max((got - want).abs());
        }
    }
    let symmetric = couple(&PairwiseProbs { p: [0.5; 3] });
    let symmetric_exact = symmetric.p == [1.0 / 3.0; 3];
    gate.report(
        4,
        in_range && max_sum_err <= 1e-9 && max_oracle_err <= 1e-12 && symmetric_exact,
        &format!(
            "10,000 coupled triples in range, sum error {max_sum_err:.1e}, rational-oracle \
             error {max_oracle_err:.1e}, symmetric case exactly uniform: {symmetric_exact}"
        ),
    );
}

fn criterion_5_rescaling(gate: &mut Gate) {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut max_identity_err = 0.0f64;
    for _ in 0..1000 {
        let t = rng.random::<f64>().clamp(1e-6, 1.0 - 1e-6);
        max_identity_err = max_identity_err.max((rescale(t, t) - 0.5).abs());
    }
    let oracle_err = (rescale(0.9f64, 0.3) - 0.9645370873334672).abs();
    let mut monotone = true;
    let mut prev = f64::NEG_INFINITY;
    for i in 1..=10_000 {
        let p = i as f64 / 10_001.0;
        let r = rescale(p, 0.3);
        monotone &= r > prev;
        prev = r;
    }
    gate.report(
        5,
        max_identity_err <= 1e-12 && oracle_err < 1e-4 && monotone,
        &format!(
            "rescale(t, t) off 0.5 by at most {max_identity_err:.1e}, rescale(0.9, 0.3) off \
             the erf oracle by {oracle_err:.1e}, strictly increasing on a 10,000-point grid: \
             {monotone}"
        ),
    );
}

fn criterion_6_platt_recovery(gate: &mut Gate) {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut scores = Vec::with_capacity(10_000);
    let mut y = Vec::with_capacity(10_000);
    for _ in 0..10_000 {
        let s = 8.0 * rng.random::<f64>() - 4.0;
        scores.push(s);
        y.push(rng.random::<f64>() < sigmoid(s));
    }
    let fit = fit_platt(&scores, &y).unwrap();
    gate.report(
        6,
        (fit.a - 1.0).abs() <= 0.1 && fit.b.abs() <= 0.1,
        &format!("known sigmoid recovered as A = {:.4}, B = {:.4}", fit.a, fit.b),
    );
}

fn criterion_7_metric_oracles(gate: &mut Gate) {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(10..=200);
        let probs: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                let raw = [
                    0.05 + rng.random::<f64>(),
                    0.05 + rng.random::<f64>(),
                    0.05 + rng.random::<f64>(),
                ];
                let total: f64 = raw.iter().sum();
                [raw[0] / total, raw[1] / total, raw[2] / total]
            })
            .collect();
        let mut y: Vec<ClassLabel> = (0..n)
            .map(|_| ClassLabel::from_index(rng.random_range(0..3usize)).unwrap())
            .collect();
        y[0] = ClassLabel::SuddenIncrease;
        y[1] = ClassLabel::BelowThreshold;

        let mut gap = |got: f64, want: f64| worst = worst.max((got - want).abs());
        gap(metrics::log_loss(&probs, &y).unwrap(), common::log_loss(&probs, &y));
        gap(metrics::brier(&probs, &y).unwrap(), common::brier(&probs, &y));
        gap(metrics::entropy_score(&probs), common::entropy(&probs));

        let scores: Vec<f64> = probs.iter().map(|p| p[0]).collect();
        let yb: Vec<bool> = y.iter().map(|&l| l == ClassLabel::SuddenIncrease).collect();
        let n_bins = rng.random_range(2..=15);
        let (ece, mce) = metrics::ece_mce(&scores, &yb, n_bins).unwrap();
        let (oracle_ece, oracle_mce) = common::ece_mce(&scores, &yb, n_bins);
        gap(ece, oracle_ece);
        gap(mce, oracle_mce);
        let (_, auc) = metrics::roc_auc(&scores, &yb).unwrap();
        gap(auc, common::auc(&scores, &yb));
        gap(metrics::aucpr(&scores, &yb).unwrap(), common::aucpr(&scores, &yb));
    }
    gate.report(
        7,
        worst <= 1e-12,
        &format!(
            "log loss, Brier, entropy, ECE, MCE, AUC and AUCPR within {worst:.1e} of \
             brute-force references on 50 instances"
        ),
    );
}

fn paths_under(dir: &Path) -> Paths {
    Paths {
        panel: dir.join("panel.csv"),
        truth: dir.join("truth.csv"),
        script: dir.join("script.json"),
        labels: dir.join("labels.csv"),
        label_summary: dir.join("labels_summary.json"),
        bundle: dir.join("bundle.json"),
        risk: dir.join("risk.csv"),
        reports: dir.join("reports"),
    }
}

fn demo_config(dir: &Path, script: ScenarioScript) -> RunConfig {
    let mut config = RunConfig::default();
    config.paths = paths_under(dir);
    config.thresholds = vec![2000.0];
    config.horizons = vec![1];
    config.search.n_draws = 20;
    config.synth = ScriptSource::Inline(script);
    config
}

fn read_records(path: &Path) -> Vec<csv::StringRecord> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).unwrap();
    rdr.records().map(|r| r.unwrap()).collect()
}

/// Class-1 one-vs-rest AUC on the holdout window, read from the written
/// calibration report.
fn class1_auc(config: &RunConfig) -> f64 {
    read_records(&config.paths.reports.join("calibration.csv"))
        .iter()
        .find(|r| &r[2] == "1")
        .map(|r| r[5].parse().unwrap())
        .expect("class 1 present in the holdout report")
}

/// Class-1 AUCPR over holdout risk rows joined against recomputed labels.
fn class1_holdout_aucpr(config: &RunConfig) -> (f64, f64) {
    let bundle = load_bundle(&config.paths.bundle).unwrap();
    let holdout_start = bundle.cells[0].holdout_start;
    let panel =
        FlowPanel::<f64>::read_csv_path(&config.paths.panel, &ColumnSchema::default()).unwrap();
    let threshold = ThresholdSpec::from_yearly(config.thresholds[0]).unwrap();
    let labels = label_panel(&panel, &threshold, &config.changepoint).unwrap();

    let mut scores = Vec::new();
    let mut y = Vec::new();
    for record in read_records(&config.paths.risk) {
        let month = MonthIndex::new(record[1].parse().unwrap(), record[2].parse().unwrap())
            .unwrap();
        if month < holdout_start {
            continue;
        }
        let key = CountryMonthKey { country_id: record[0].to_string(), month };
        let class = labels.get(&key).unwrap().class;
        scores.push(record[5].parse::<f64>().unwrap());
        y.push(class == ClassLabel::SuddenIncrease);
    }
    let prevalence = y.iter().filter(|&&v| v).count() as f64 / y.len() as f64;
    (metrics::aucpr(&scores, &y).unwrap(), prevalence)
}

fn criterion_8_end_to_end_signal(gate: &mut Gate) {
    let start = Instant::now();

    let strong_dir = tempfile::tempdir().unwrap();
    let strong = demo_config(strong_dir.path(), demo_script());
    run_synth(&strong).unwrap();
    run_train(&strong).unwrap();
    let cell = &run_evaluate(&strong).unwrap()[0];
    let auc = class1_auc(&strong);
    let loss_ratio = cell.log_loss / cell.baseline_log_loss;

    let mut null_script = demo_script();
    null_script.beta = 0.0;
    let null_dir = tempfile::tempdir().unwrap();
    let null = demo_config(null_dir.path(), null_script);
    run_synth(&null).unwrap();
    run_train(&null).unwrap();
    run_predict(&null, None).unwrap();
    let (null_aucpr, prevalence) = class1_holdout_aucpr(&null);

    let elapsed = start.elapsed().as_secs_f64();
    gate.report(
        8,
        auc >= 0.85 && loss_ratio <= 0.8 && (null_aucpr - prevalence).abs() <= 0.1 && elapsed < 600.0,
        &format!(
            "demo class-1 AUC {auc:.3}, log loss at {:.0}% of the constant-prior baseline; \
             signal-free AUCPR {null_aucpr:.3} vs prevalence {prevalence:.3}; {elapsed:.0}s",
            100.0 * loss_ratio
        ),
    );
}

fn criterion_9_determinism(gate: &mut Gate) {
    fn steady(name: &str, mean: f64) -> CountryScript {
        CountryScript {
            name: name.into(),
            regimes: vec![Regime { start: 0, duration: 36, mean, sd: 2.0 }],
        }
    }
    fn surging(name: &str, onsets: [usize; 2]) -> CountryScript {
        let mut regimes = Vec::new();
        let mut pos = 0;
        for onset in onsets {
            regimes.push(Regime { start: pos, duration: onset - pos, mean: 20.0, sd: 2.0 });
            regimes.push(Regime { start: onset, duration: 3, mean: 2500.0, sd: 10.0 });
            pos = onset + 3;
        }
        regimes.push(Regime { start: pos, duration: 36 - pos, mean: 20.0, sd: 2.0 });
        CountryScript { name: name.into(), regimes }
    }
    let script = ScenarioScript {
        countries: vec![
            surging("AAA", [8, 20]),
            surging("AAB", [10, 24]),
            surging("AAC", [12, 28]),
            steady("BBA", 800.0),
            steady("BBB", 1200.0),
            steady("CAA", 20.0),
            steady("CAB", 20.0),
            steady("CAC", 20.0),
        ],
        n_months: 36,
        ..ScenarioScript::default()
    };

    let dir = tempfile::tempdir().unwrap();
    let mut config = RunConfig::default();
    config.paths = paths_under(dir.path());
    config.thresholds = vec![2000.0];
    config.horizons = vec![1];
    config.search = SearchSettings {
        n_draws: 4,
        n_folds: 2,
        windows: WindowConfig { n_windows: Some(2), ..WindowConfig::default() },
    };
    config.synth = ScriptSource::Inline(script);
    let run = |jobs: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().unwrap();
        pool.install(|| {
            run_synth(&config).unwrap();
            run_train(&config).unwrap();
            run_predict(&config, None).unwrap();
        });
        (
            std::fs::read(&config.paths.bundle).unwrap(),
            std::fs::read(&config.paths.risk).unwrap(),
        )
    };
    let (bundle_1, risk_1) = run(1);
    let (bundle_4, risk_4) = run(4);
    gate.report(
        9,
        !bundle_1.is_empty() && bundle_1 == bundle_4 && risk_1 == risk_4,
        &format!(
            "single- and four-thread pipeline runs wrote identical bundles ({} bytes) and \
             risk files ({} bytes)",
            bundle_1.len(),
            risk_1.len()
        ),
    );
}

fn criterion_10_leakage_audit(gate: &mut Gate) {
    let (panel, _) = generate(&demo_script()).unwrap();
    let roles = RoleMap::defaults();
    let cp = CpConfig::default();
    let mut rows_audited = 0;
    let mut clean = true;
    for yearly in [2000.0, 5000.0, 10_000.0, 25_000.0] {
        let threshold = ThresholdSpec::from_yearly(yearly).unwrap();
        let labels = label_panel(&panel, &threshold, &cp).unwrap();
        for months_ahead in [1, 3, 6] {
            let horizon = Horizon::new(months_ahead).unwrap();
            let design = build_design(&panel, &labels, horizon, &roles).unwrap();
            clean &= audit_no_leakage(&design, &panel, horizon).is_ok();
            rows_audited += design.n_rows();
        }
    }

    // The audit must also be able to fail: poison one lagged cell.
    let threshold = ThresholdSpec::from_yearly(2000.0).unwrap();
    let labels = label_panel(&panel, &threshold, &cp).unwrap();
    let horizon = Horizon::new(3).unwrap();
    let mut design = build_design(&panel, &labels, horizon, &roles).unwrap();
    let poisoned = design.x.get(0, 0) + 1000.0;
    design.x.set(0, 0, poisoned);
    let caught = matches!(
        audit_no_leakage(&design, &panel, horizon),
        Err(Error::LeakageDetected { .. })
    );

    gate.report(
        10,
        clean && caught,
        &format!(
            "{rows_audited} design rows traced back to their source months across 12 cells; \
             a poisoned cell is caught: {caught}"
        ),
    );
}

#[test]
fn acceptance_criteria() {
    let mut gate = Gate { failures: Vec::new() };
    criterion_1_changepoint_oracle(&mut gate);
    criterion_2_segmentation_exactness(&mut gate);
    criterion_3_scenario_table(&mut gate);
    criterion_4_coupling(&mut gate);
    criterion_5_rescaling(&mut gate);
    criterion_6_platt_recovery(&mut gate);
    criterion_7_metric_oracles(&mut gate);
    criterion_8_end_to_end_signal(&mut gate);
    criterion_9_determinism(&mut gate);
    criterion_10_leakage_audit(&mut gate);
    assert!(gate.failures.is_empty(), "{:#?}", gate.failures);
}
