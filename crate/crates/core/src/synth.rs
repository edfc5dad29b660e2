//! Scripted synthetic panels with known truth.
//!
//! A scenario script tiles each country's months with flow regimes. Flows
//! are Gaussian draws from the active regime, truth labels follow
//! analytically from the regime means and boundaries, and a block of
//! feature columns carries the future truth at fixed leads scaled by a
//! signal strength. That gives tests and demos a panel where both the
//! correct labels and the attainable predictive skill are known by
//! construction.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::ClassLabel;
use crate::num::substream;
use crate::panel::{CountryMonthKey, FlowPanel, MonthIndex};

const TAG_FLOW: u64 = 0x666c_6f77;
const TAG_FEAT: u64 = 0x6665_6174;
const TAG_MISS: u64 = 0x6d69_7373;

/// Months ahead that the three slow signal columns look.
pub const SIGNAL_LEADS: [usize; 3] = [1, 3, 6];

/// One stretch of months with a fixed flow distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub start: usize,
    pub duration: usize,
    pub mean: f64,
    pub sd: f64,
}

impl Regime {
    pub fn contains(&self, month: usize) -> bool {
        self.start <= month && month < self.start + self.duration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryScript {
    pub name: String,
    pub regimes: Vec<Regime>,
}

/// Full generation recipe; a pure function of this value and nothing else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioScript {
    pub countries: Vec<CountryScript>,
    pub start: MonthIndex,
    pub n_months: usize,
    pub n_features: usize,
    /// Scale on the planted class signal in the feature columns; 0 makes
    /// every feature pure noise.
    pub beta: f64,
    pub noise_sd: f64,
    /// Probability that any feature cell is masked to missing.
    pub missing_rate: f64,
    pub truth_threshold_yearly: f64,
    pub seed: u64,
}

impl Default for ScenarioScript {
    fn default() -> Self {
        ScenarioScript {
            countries: Vec::new(),
            start: MonthIndex { year: 2019, month: 1 },
            n_months: 60,
            n_features: 8,
            beta: 8.0,
            noise_sd: 1.0,
            missing_rate: 0.0,
            truth_threshold_yearly: 2000.0,
            seed: 42,
        }
    }
}

impl ScenarioScript {
    pub fn validate(&self) -> Result<()> {
        if self.countries.is_empty() {
            return Err(Error::InvalidScript("no countries".into()));
        }
        if self.n_months == 0 {
            return Err(Error::InvalidScript("n_months must be positive".into()));
        }
        if self.n_features < 4 + 2 {
            return Err(Error::InvalidScript(format!(
                "n_features must be at least 6 (3 lead columns, 1 forecast column, 2 noise), got {}",
                self.n_features
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidScript(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::InvalidScript(format!(
                "noise_sd must be >= 0, got {}",
                self.noise_sd
            )));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::InvalidScript(format!(
                "missing_rate must lie in [0, 1), got {}",
                self.missing_rate
            )));
        }
        if !(self.truth_threshold_yearly > 0.0 && self.truth_threshold_yearly.is_finite()) {
            return Err(Error::InvalidScript(format!(
                "truth threshold must be positive, got {}",
                self.truth_threshold_yearly
            )));
        }
        let mut names = BTreeSet::new();
        for country in &self.countries {
            if country.name.is_empty() {
                return Err(Error::InvalidScript("empty country name".into()));
            }
            if !names.insert(&country.name) {
                return Err(Error::InvalidScript(format!(
                    "duplicate country {:?}",
                    country.name
                )));
            }
            let mut expected_start = 0;
            for regime in &country.regimes {
                if regime.start != expected_start {
                    return Err(Error::InvalidScript(format!(
                        "{}: regime at {} leaves months {}..{} uncovered or overlapping",
                        country.name, regime.start, expected_start, regime.start
                    )));
                }
                if regime.duration == 0 {
                    return Err(Error::InvalidScript(format!(
                        "{}: zero-length regime at {}",
                        country.name, regime.start
                    )));
                }
                if !(regime.mean >= 0.0 && regime.mean.is_finite()) {
                    return Err(Error::InvalidScript(format!(
                        "{}: regime mean must be >= 0, got {}",
                        country.name, regime.mean
                    )));
                }
                if !(regime.sd >= 0.0 && regime.sd.is_finite()) {
                    return Err(Error::InvalidScript(format!(
                        "{}: regime sd must be >= 0, got {}",
                        country.name, regime.sd
                    )));
                }
                expected_start += regime.duration;
            }
            if expected_start != self.n_months {
                return Err(Error::InvalidScript(format!(
                    "{}: regimes cover {} of {} months",
                    country.name, expected_start, self.n_months
                )));
            }
        }
        Ok(())
    }

    /// Analytic truth for one country: the regime mean decides the
    /// threshold side, and an upward regime boundary whose new mean clears
    /// the monthly cut marks its onset month as a sudden increase.
    fn truth_series(&self, country: &CountryScript) -> Vec<ClassLabel> {
        let cut = self.truth_threshold_yearly / 12.0;
        let mut labels = Vec::with_capacity(self.n_months);
        for (j, regime) in country.regimes.iter().enumerate() {
            let above = regime.mean >= cut;
            let onset_is_sudden =
                j > 0 && above && regime.mean > country.regimes[j - 1].mean;
            for month in regime.start..regime.start + regime.duration {
                labels.push(if above {
                    if month == regime.start && onset_is_sudden {
                        ClassLabel::SuddenIncrease
                    } else {
                        ClassLabel::SustainedHigh
                    }
                } else {
                    ClassLabel::BelowThreshold
                });
            }
        }
        labels
    }
}

fn feature_names(n_features: usize) -> Vec<String> {
    let mut names = vec![
        "slow_l1".to_string(),
        "slow_l3".to_string(),
        "slow_l6".to_string(),
        "conflict_risk".to_string(),
    ];
    for i in 0..n_features - 4 {
        names.push(format!("noise_{i}"));
    }
    names
}

fn class_signal(label: ClassLabel) -> f64 {
    match label {
        ClassLabel::SuddenIncrease => 1.0,
        ClassLabel::SustainedHigh => 0.5,
        ClassLabel::BelowThreshold => 0.0,
    }
}

/// Generates the panel and its truth labels. Countries are emitted in name
/// order; every draw comes from a per-country substream of the script seed,
/// so output is identical regardless of scheduling or country count edits
/// elsewhere in the script.
pub fn generate(
    script: &ScenarioScript,
) -> Result<(FlowPanel<f64>, BTreeMap<CountryMonthKey, ClassLabel>)> {
    script.validate()?;
    let mut countries: Vec<&CountryScript> = script.countries.iter().collect();
    countries.sort_by(|a, b| a.name.cmp(&b.name));

    let n = script.n_months;
    let p = script.n_features;
    let mut flows = Vec::with_capacity(countries.len() * n);
    let mut features = Vec::with_capacity(countries.len() * n * p);
    let mut truth = BTreeMap::new();

    for (ci, country) in countries.iter().enumerate() {
        let labels = script.truth_series(country);
        let mut flow_rng =
            ChaCha8Rng::seed_from_u64(substream(script.seed, &[TAG_FLOW, ci as u64]));
        for regime in &country.regimes {
            for _ in 0..regime.duration {
                let z: f64 = flow_rng.sample(StandardNormal);
                flows.push((regime.mean + regime.sd * z).max(0.0));
            }
        }

        let mut feat_rng =
            ChaCha8Rng::seed_from_u64(substream(script.seed, &[TAG_FEAT, ci as u64]));
        for month in 0..n {
            for fi in 0..p {
                let z: f64 = feat_rng.sample(StandardNormal);
                let value = match fi {
                    0..=2 => {
                        let lead = SIGNAL_LEADS[fi];
                        let target = labels[(month + lead).min(n - 1)];
                        script.beta * class_signal(target) + script.noise_sd * z
                    }
                    3 => script.beta * class_signal(labels[month]) + script.noise_sd * z,
                    _ => z,
                };
                features.push(value);
            }
        }

        if script.missing_rate > 0.0 {
            let mut miss_rng =
                ChaCha8Rng::seed_from_u64(substream(script.seed, &[TAG_MISS, ci as u64]));
            let base = (ci * n) * p;
            for cell in 0..n * p {
                if miss_rng.random::<f64>() < script.missing_rate {
                    features[base + cell] = f64::NAN;
                }
            }
        }

        for (mi, &label) in labels.iter().enumerate() {
            truth.insert(
                CountryMonthKey {
                    country_id: country.name.clone(),
                    month: script.start.plus(mi as i64),
                },
                label,
            );
        }
    }

    let panel = FlowPanel::from_parts(
        countries.iter().map(|c| c.name.clone()).collect(),
        script.start,
        n,
        feature_names(p),
        flows,
        features,
    )?;
    Ok((panel, truth))
}

fn steady(name: &str, mean: f64, sd: f64, n_months: usize) -> CountryScript {
    CountryScript {
        name: name.to_string(),
        regimes: vec![Regime { start: 0, duration: n_months, mean, sd }],
    }
}

fn surge_country(name: &str, onsets: &[usize], n_months: usize) -> CountryScript {
    let baseline = |start: usize, duration: usize| Regime { start, duration, mean: 20.0, sd: 4.0 };
    let mut regimes = Vec::new();
    let mut pos = 0;
    for &onset in onsets {
        if onset > pos {
            regimes.push(baseline(pos, onset - pos));
        }
        let duration = 4.min(n_months - onset);
        regimes.push(Regime { start: onset, duration, mean: 3000.0, sd: 50.0 });
        pos = onset + duration;
    }
    if pos < n_months {
        regimes.push(baseline(pos, n_months - pos));
    }
    CountryScript { name: name.to_string(), regimes }
}

/// Thirty countries over five years: three with recurring surges (the only
/// source of sudden-increase months), four steady high-flow countries, and
/// twenty-three quiet ones.
pub fn demo_script() -> ScenarioScript {
    let n_months = 60;
    let mut countries = vec![
        surge_country("AAA", &[10, 26, 42, 57], n_months),
        surge_country("AAB", &[12, 30, 46, 58], n_months),
        surge_country("AAC", &[14, 34, 50, 56], n_months),
        steady("BBA", 600.0, 25.0, n_months),
        steady("BBB", 900.0, 25.0, n_months),
        steady("BBC", 1200.0, 25.0, n_months),
        steady("BBD", 1500.0, 25.0, n_months),
    ];
    for i in 0..23u8 {
        let c = (b'A' + i) as char;
        countries.push(steady(&format!("C{c}{c}"), 20.0, 4.0, n_months));
    }
    ScenarioScript { countries, n_months, ..ScenarioScript::default() }
}

/// Number of sudden-increase months the script plants, counted straight
/// from the regime structure.
pub fn planted_onsets(script: &ScenarioScript) -> usize {
    let cut = script.truth_threshold_yearly / 12.0;
    script
        .countries
        .iter()
        .flat_map(|c| c.regimes.windows(2))
        .filter(|pair| pair[1].mean > pair[0].mean && pair[1].mean >= cut)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::{label_panel, CpConfig};
    use crate::panel::{monthly_threshold, ColumnSchema, ThresholdSpec};

    fn small_script() -> ScenarioScript {
        ScenarioScript {
            countries: vec![
                surge_country("AAA", &[10, 30], 48),
                steady("BBB", 3000.0, 5.0, 48),
                steady("CCC", 10.0, 5.0, 48),
            ],
            n_months: 48,
            ..ScenarioScript::default()
        }
    }

    #[test]
    fn single_regime_countries_plant_no_sudden_increase() {
        let script = ScenarioScript {
            countries: vec![steady("AAA", 5000.0, 10.0, 24), steady("BBB", 10.0, 2.0, 24)],
            n_months: 24,
            ..ScenarioScript::default()
        };
        let (_, truth) = generate(&script).unwrap();
        assert_eq!(planted_onsets(&script), 0);
        for (key, label) in &truth {
            let expected = if key.country_id == "AAA" {
                ClassLabel::SustainedHigh
            } else {
                ClassLabel::BelowThreshold
            };
            assert_eq!(*label, expected);
        }
    }

    #[test]
    fn demo_truth_counts_match_the_planted_onsets() {
        let script = demo_script();
        let (panel, truth) = generate(&script).unwrap();
        assert_eq!(panel.n_countries(), 30);
        assert_eq!(panel.n_months(), 60);
        assert_eq!(truth.len(), 1800);

        let class1 = truth.values().filter(|&&l| l == ClassLabel::SuddenIncrease).count();
        assert_eq!(class1, planted_onsets(&script));
        assert_eq!(class1, 12);

        // Steady high-flow countries are sustained-high every month.
        for (key, label) in &truth {
            if key.country_id.starts_with("BB") {
                assert_eq!(*label, ClassLabel::SustainedHigh);
            }
            if key.country_id.starts_with('C') {
                assert_eq!(*label, ClassLabel::BelowThreshold);
            }
        }
    }

    #[test]
    fn generation_is_bitwise_reproducible() {
        let script = small_script();
        let (a, truth_a) = generate(&script).unwrap();
        let (b, truth_b) = generate(&script).unwrap();
        assert!(a.same_as(&b));
        assert_eq!(truth_a, truth_b);

        let schema = ColumnSchema::default();
        let mut bytes_a = Vec::new();
        let mut bytes_b = Vec::new();
        a.write_csv(&mut bytes_a, &schema).unwrap();
        b.write_csv(&mut bytes_b, &schema).unwrap();
        assert_eq!(bytes_a, bytes_b);

        let different = ScenarioScript { seed: 43, ..script };
        let (c, _) = generate(&different).unwrap();
        assert!(!a.same_as(&c));
    }

    #[test]
    fn labeling_recovers_wide_margin_truth() {
        let script = small_script();
        let (panel, truth) = generate(&script).unwrap();
        let threshold = ThresholdSpec::from_yearly(script.truth_threshold_yearly).unwrap();
        let labels = label_panel(&panel, &threshold, &CpConfig::default()).unwrap();

        let mut agree = 0;
        for (key, want) in &truth {
            let got = labels.get(key).unwrap().class;
            if got == *want {
                agree += 1;
            }
            if *want == ClassLabel::BelowThreshold {
                assert_eq!(got, ClassLabel::BelowThreshold, "{key:?}");
            }
        }
        let rate = agree as f64 / truth.len() as f64;
        assert!(rate >= 0.95, "agreement {rate}");
    }

    /// Correlation between the lead-1 column and next month's class signal.
    fn lead1_truth_correlation(script: &ScenarioScript) -> f64 {
        let (panel, truth) = generate(script).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (ci, country) in panel.countries().iter().enumerate() {
            for mi in 0..panel.n_months() - 1 {
                xs.push(panel.feature(ci, mi, 0));
                let key = CountryMonthKey {
                    country_id: country.clone(),
                    month: panel.month_at(mi + 1),
                };
                ys.push(class_signal(truth[&key]));
            }
        }
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let cov: f64 =
            xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
        let vx = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n;
        let vy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n;
        cov / (vx * vy).sqrt()
    }

    #[test]
    fn zero_beta_breaks_the_feature_signal() {
        let null = lead1_truth_correlation(&ScenarioScript { beta: 0.0, ..demo_script() });
        assert!(null.abs() < 0.1, "residual correlation {null}");
        let planted = lead1_truth_correlation(&demo_script());
        assert!(planted > 0.8, "planted correlation {planted}");
    }

    #[test]
    fn missing_rate_masks_roughly_that_share_of_cells() {
        let script = ScenarioScript { missing_rate: 0.3, ..small_script() };
        let (panel, _) = generate(&script).unwrap();
        let mut missing = 0;
        let mut total = 0;
        for ci in 0..panel.n_countries() {
            for mi in 0..panel.n_months() {
                for fi in 0..panel.n_features() {
                    total += 1;
                    if panel.is_missing(ci, mi, fi) {
                        missing += 1;
                    }
                }
            }
        }
        let rate = missing as f64 / total as f64;
        assert!((rate - 0.3).abs() < 0.05, "missing rate {rate}");
    }

    #[test]
    fn invalid_scripts_are_rejected() {
        let mut gap = small_script();
        gap.countries[0].regimes[1].start += 1;
        assert!(matches!(generate(&gap), Err(Error::InvalidScript(_))));

        let mut short = small_script();
        short.countries[2].regimes[0].duration = 40;
        assert!(matches!(generate(&short), Err(Error::InvalidScript(_))));

        let mut late_start = small_script();
        late_start.countries[1].regimes[0].start = 1;
        assert!(matches!(generate(&late_start), Err(Error::InvalidScript(_))));

        for edit in [
            |s: &mut ScenarioScript| s.n_features = 5,
            |s: &mut ScenarioScript| s.beta = -1.0,
            |s: &mut ScenarioScript| s.missing_rate = 1.0,
            |s: &mut ScenarioScript| s.truth_threshold_yearly = 0.0,
            |s: &mut ScenarioScript| s.countries.clear(),
            |s: &mut ScenarioScript| s.countries[0].regimes[0].mean = -5.0,
            |s: &mut ScenarioScript| s.countries[1].name = "AAA".into(),
        ] {
            let mut script = small_script();
            edit(&mut script);
            assert!(matches!(generate(&script), Err(Error::InvalidScript(_))));
        }
    }

    #[test]
    fn demo_script_passes_validation_and_planted_counts_are_stable() {
        let script = demo_script();
        script.validate().unwrap();
        assert_eq!(script.countries.len(), 30);
        assert_eq!(planted_onsets(&script), 12);
        let monthly = monthly_threshold(script.truth_threshold_yearly).unwrap();
        assert!(3000.0 >= monthly && 600.0 >= monthly && 20.0 < monthly);
    }
}
