//! Balanced country-month panel of displacement flows and feature columns.
//!
//! Ingestion is strict: the month range must be contiguous, every country
//! must have a row for every month, flows must be non-negative, and feature
//! rows must all have the same width. Missing feature cells are kept as
//! explicit gaps (stored as NaN and reported by [`FlowPanel::is_missing`]);
//! imputation belongs to the `features` module.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;

/// Calendar month, addressed as (year, month-of-year in 1..=12).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MonthIndex {
    pub year: i32,
    pub month: u32,
}

impl MonthIndex {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::Parse {
                record: 0,
                column: "month".into(),
                text: month.to_string(),
            });
        }
        Ok(MonthIndex { year, month })
    }

    /// Months since year 0, used for contiguity and lag arithmetic.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    pub fn from_ordinal(o: i64) -> Self {
        MonthIndex { year: o.div_euclid(12) as i32, month: (o.rem_euclid(12) + 1) as u32 }
    }

    pub fn plus(self, months: i64) -> Self {
        Self::from_ordinal(self.ordinal() + months)
    }
}

impl std::fmt::Display for MonthIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{:02}", self.year, self.month)
    }
}

/// Addresses one observation of the panel.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CountryMonthKey {
    pub country_id: String,
    pub month: MonthIndex,
}

/// Operational displacement threshold: a yearly level and its monthly
/// equivalent (exact division by 12, never rounded).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdSpec<T> {
    yearly: T,
    monthly: T,
}

impl<T: Real> ThresholdSpec<T> {
    pub fn from_yearly(yearly: T) -> Result<Self> {
        Ok(ThresholdSpec { yearly, monthly: monthly_threshold(yearly)? })
    }

    pub fn yearly(&self) -> T {
        self.yearly
    }

    pub fn monthly(&self) -> T {
        self.monthly
    }
}

/// Converts a yearly threshold to its monthly equivalent.
pub fn monthly_threshold<T: Real>(yearly: T) -> Result<T> {
    if !(yearly > T::zero()) || !yearly.is_finite() {
        return Err(Error::NonPositiveThreshold(
            yearly.to_f64().unwrap_or(f64::NAN),
        ));
    }
    Ok(yearly / T::of(12.0))
}

/// Column-name mapping for panel ingestion. Any header column not named
/// here is treated as a feature, in header order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSchema {
    pub country: String,
    pub year: String,
    pub month: String,
    pub flow: String,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        ColumnSchema {
            country: "country".into(),
            year: "year".into(),
            month: "month".into(),
            flow: "flow".into(),
        }
    }
}

/// Balanced country-month panel.
///
/// Flows and features are stored dense and row-major by (country, month);
/// countries are kept sorted, and the month range is contiguous from
/// [`FlowPanel::start`]. Immutable after construction.
#[derive(Debug, Clone)]
pub struct FlowPanel<T> {
    countries: Vec<String>,
    start: MonthIndex,
    n_months: usize,
    feature_names: Vec<String>,
    flows: Vec<T>,
    features: Vec<T>,
}

impl<T: Real> FlowPanel<T> {
    /// Builds a panel from already-dense data; used by the synthetic
    /// generator and by tests.
    pub fn from_parts(
        countries: Vec<String>,
        start: MonthIndex,
        n_months: usize,
        feature_names: Vec<String>,
        flows: Vec<T>,
        features: Vec<T>,
    ) -> Result<Self> {
        if countries.is_empty() || n_months == 0 {
            return Err(Error::ConfigInvalid("panel needs at least one country and month".into()));
        }
        if countries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::ConfigInvalid("panel countries must be sorted and unique".into()));
        }
        for c in &countries {
            validate_country_token(c, 0)?;
        }
        let cells = countries.len() * n_months;
        if flows.len() != cells {
            return Err(Error::LengthMismatch { left: flows.len(), right: cells });
        }
        if features.len() != cells * feature_names.len() {
            return Err(Error::LengthMismatch {
                left: features.len(),
                right: cells * feature_names.len(),
            });
        }
        for (i, &f) in flows.iter().enumerate() {
            if f < T::zero() || !f.is_finite() {
                let month = start.plus((i % n_months) as i64);
                return Err(Error::NegativeFlow {
                    country: countries[i / n_months].clone(),
                    year: month.year,
                    month: month.month,
                    value: f.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(FlowPanel { countries, start, n_months, feature_names, flows, features })
    }

    pub fn countries(&self) -> &[String] {
        &self.countries
    }

    pub fn n_countries(&self) -> usize {
        self.countries.len()
    }

    pub fn start(&self) -> MonthIndex {
        self.start
    }

    pub fn n_months(&self) -> usize {
        self.n_months
    }

    pub fn n_observations(&self) -> usize {
        self.countries.len() * self.n_months
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn month_at(&self, pos: usize) -> MonthIndex {
        debug_assert!(pos < self.n_months);
        self.start.plus(pos as i64)
    }

    pub fn months(&self) -> impl Iterator<Item = MonthIndex> + '_ {
        (0..self.n_months).map(|i| self.month_at(i))
    }

    /// Position of a calendar month within the panel range, if covered.
    pub fn month_pos(&self, m: MonthIndex) -> Option<usize> {
        let off = m.ordinal() - self.start.ordinal();
        if (0..self.n_months as i64).contains(&off) {
            Some(off as usize)
        } else {
            None
        }
    }

    pub fn country_pos(&self, country: &str) -> Result<usize> {
        self.countries
            .binary_search_by(|c| c.as_str().cmp(country))
            .map_err(|_| Error::UnknownCountry(country.to_string()))
    }

    /// The full flow series for one country, ordered by month.
    pub fn flow_series(&self, country: &str) -> Result<&[T]> {
        let ci = self.country_pos(country)?;
        Ok(self.flow_series_at(ci))
    }

    pub fn flow_series_at(&self, ci: usize) -> &[T] {
        &self.flows[ci * self.n_months..(ci + 1) * self.n_months]
    }

    pub fn flow(&self, ci: usize, mi: usize) -> T {
        self.flows[ci * self.n_months + mi]
    }

    /// Feature cell; NaN encodes a missing value.
    pub fn feature(&self, ci: usize, mi: usize, fi: usize) -> T {
        self.features[(ci * self.n_months + mi) * self.feature_names.len() + fi]
    }

    pub fn is_missing(&self, ci: usize, mi: usize, fi: usize) -> bool {
        self.feature(ci, mi, fi).is_nan()
    }

    /// Reads a panel from delimiter-separated text with a header row.
    /// Lines starting with `#` are ignored.
    pub fn read_csv<R: io::Read>(reader: R, schema: &ColumnSchema) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let width = headers.len();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::ConfigInvalid(format!("panel is missing column {name:?}")))
        };
        let ci = find(&schema.country)?;
        let yi = find(&schema.year)?;
        let mi = find(&schema.month)?;
        let fi = find(&schema.flow)?;
        let key_cols = [ci, yi, mi, fi];
        let feature_cols: Vec<usize> =
            (0..width).filter(|c| !key_cols.contains(c)).collect();
        let feature_names: Vec<String> =
            feature_cols.iter().map(|&c| headers[c].to_string()).collect();

        let mut cells: BTreeMap<(String, i64), (T, Vec<T>)> = BTreeMap::new();
        for (rec_no, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let record = rec_no + 1;
            if rec.len() != width {
                return Err(Error::RaggedFeatures { record, got: rec.len(), expected: width });
            }
            let country = rec[ci].to_string();
            validate_country_token(&country, record)?;
            let year: i32 = parse_field(&rec[yi], record, &schema.year)?;
            let month_no: u32 = parse_field(&rec[mi], record, &schema.month)?;
            let month = MonthIndex::new(year, month_no).map_err(|_| Error::Parse {
                record,
                column: schema.month.clone(),
                text: rec[mi].to_string(),
            })?;
            let flow_raw: f64 = parse_field(&rec[fi], record, &schema.flow)?;
            if !flow_raw.is_finite() {
                return Err(Error::Parse {
                    record,
                    column: schema.flow.clone(),
                    text: rec[fi].to_string(),
                });
            }
            if flow_raw < 0.0 {
                return Err(Error::NegativeFlow {
                    country,
                    year: month.year,
                    month: month.month,
                    value: flow_raw,
                });
            }
            let mut feats = Vec::with_capacity(feature_cols.len());
            for &c in &feature_cols {
                feats.push(parse_feature_cell(&rec[c], record, &headers[c])?);
            }
            if cells
                .insert((country.clone(), month.ordinal()), (T::of(flow_raw), feats))
                .is_some()
            {
                return Err(Error::DuplicateKey { country, year: month.year, month: month.month });
            }
        }

        if cells.is_empty() {
            return Err(Error::ConfigInvalid("panel has no data rows".into()));
        }
        let first = cells.keys().map(|(_, o)| *o).min().expect("nonempty");
        let last = cells.keys().map(|(_, o)| *o).max().expect("nonempty");
        let n_months = (last - first + 1) as usize;
        let mut countries: Vec<String> = cells.keys().map(|(c, _)| c.clone()).collect();
        countries.dedup();

        let n_feat = feature_names.len();
        let mut flows = Vec::with_capacity(countries.len() * n_months);
        let mut features = Vec::with_capacity(countries.len() * n_months * n_feat);
        for country in &countries {
            for o in first..=last {
                match cells.get(&(country.clone(), o)) {
                    Some((flow, feats)) => {
                        flows.push(*flow);
                        features.extend_from_slice(feats);
                    }
                    None => {
                        let m = MonthIndex::from_ordinal(o);
                        return Err(Error::UnbalancedPanel {
                            country: country.clone(),
                            year: m.year,
                            month: m.month,
                        });
                    }
                }
            }
        }

        FlowPanel::from_parts(
            countries,
            MonthIndex::from_ordinal(first),
            n_months,
            feature_names,
            flows,
            features,
        )
    }

    pub fn read_csv_path(path: &Path, schema: &ColumnSchema) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::read_csv(std::fs::File::open(path)?, schema)
    }

    /// Writes the panel in the same format `read_csv` accepts. Missing
    /// feature cells are written as empty fields; the round trip is exact.
    pub fn write_csv<W: io::Write>(&self, writer: W, schema: &ColumnSchema) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header =
            vec![schema.country.clone(), schema.year.clone(), schema.month.clone(), schema.flow.clone()];
        header.extend(self.feature_names.iter().cloned());
        wtr.write_record(&header)?;
        for (ci, country) in self.countries.iter().enumerate() {
            for mi in 0..self.n_months {
                let m = self.month_at(mi);
                let mut rec = vec![
                    country.clone(),
                    m.year.to_string(),
                    m.month.to_string(),
                    format!("{}", self.flow(ci, mi)),
                ];
                for fi in 0..self.n_features() {
                    let v = self.feature(ci, mi, fi);
                    rec.push(if v.is_nan() { String::new() } else { format!("{v}") });
                }
                wtr.write_record(&rec)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Field-for-field equality with missing cells compared as equal.
    pub fn same_as(&self, other: &Self) -> bool {
        fn cell_eq<T: Real>(a: T, b: T) -> bool {
            a == b || (a.is_nan() && b.is_nan())
        }
        self.countries == other.countries
            && self.start == other.start
            && self.n_months == other.n_months
            && self.feature_names == other.feature_names
            && self.flows.len() == other.flows.len()
            && self.flows.iter().zip(&other.flows).all(|(&a, &b)| cell_eq(a, b))
            && self.features.len() == other.features.len()
            && self.features.iter().zip(&other.features).all(|(&a, &b)| cell_eq(a, b))
    }
}

fn validate_country_token(c: &str, record: usize) -> Result<()> {
    let ok = !c.is_empty() && c.chars().all(|ch| ch.is_ascii_uppercase() || ch.is_ascii_digit());
    if ok {
        Ok(())
    } else {
        Err(Error::Parse { record, column: "country".into(), text: c.to_string() })
    }
}

fn parse_field<V: std::str::FromStr>(text: &str, record: usize, column: &str) -> Result<V> {
    text.parse().map_err(|_| Error::Parse {
        record,
        column: column.to_string(),
        text: text.to_string(),
    })
}

fn parse_feature_cell<T: Real>(text: &str, record: usize, column: &str) -> Result<T> {
    if text.is_empty() || text.eq_ignore_ascii_case("na") || text.eq_ignore_ascii_case("nan")
        || text.eq_ignore_ascii_case("null")
    {
        return Ok(T::nan());
    }
    let v: f64 = parse_field(text, record, column)?;
    Ok(T::of(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_csv() -> String {
        "country,year,month,flow,rain,conflict_risk\n\
         AAA,2020,1,10,1.5,0.2\n\
         AAA,2020,2,11,,0.3\n\
         AAA,2020,3,12,1.7,0.4\n\
         BBB,2020,1,0,2.0,0.0\n\
         BBB,2020,2,5,2.1,0.1\n\
         BBB,2020,3,990,2.2,NA\n"
            .to_string()
    }

    #[test]
    fn loads_a_balanced_panel() {
        let p: FlowPanel<f64> =
            FlowPanel::read_csv(small_csv().as_bytes(), &ColumnSchema::default()).unwrap();
        assert_eq!(p.n_observations(), 6);
        assert_eq!(p.countries(), ["AAA", "BBB"]);
        assert_eq!(p.n_months(), 3);
        assert_eq!(p.feature_names(), ["rain", "conflict_risk"]);
        assert!(p.is_missing(0, 1, 0));
        assert!(p.is_missing(1, 2, 1));
        assert_eq!(p.flow_series("BBB").unwrap(), &[0.0, 5.0, 990.0]);
        assert_eq!(p.flow_series("AAA").unwrap().len(), 3);
        assert!(matches!(p.flow_series("CCC"), Err(Error::UnknownCountry(_))));
    }

    #[test]
    fn missing_row_is_unbalanced() {
        let text = small_csv().lines().take(6).collect::<Vec<_>>().join("\n");
        let err = FlowPanel::<f64>::read_csv(text.as_bytes(), &ColumnSchema::default())
            .unwrap_err();
        assert!(matches!(err, Error::UnbalancedPanel { .. }), "{err}");
    }

    #[test]
    fn duplicate_negative_and_ragged_rows_are_rejected() {
        let dup = format!("{}AAA,2020,2,7,1,1\n", small_csv());
        assert!(matches!(
            FlowPanel::<f64>::read_csv(dup.as_bytes(), &ColumnSchema::default()),
            Err(Error::DuplicateKey { .. })
        ));
        let neg = small_csv().replace("BBB,2020,2,5", "BBB,2020,2,-5");
        assert!(matches!(
            FlowPanel::<f64>::read_csv(neg.as_bytes(), &ColumnSchema::default()),
            Err(Error::NegativeFlow { .. })
        ));
        let ragged = format!("{}CCC,2020,1,3\n", small_csv());
        assert!(matches!(
            FlowPanel::<f64>::read_csv(ragged.as_bytes(), &ColumnSchema::default()),
            Err(Error::RaggedFeatures { .. })
        ));
    }

    #[test]
    fn round_trip_is_field_for_field_identical() {
        let schema = ColumnSchema::default();
        let p: FlowPanel<f64> = FlowPanel::read_csv(small_csv().as_bytes(), &schema).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf, &schema).unwrap();
        let q: FlowPanel<f64> = FlowPanel::read_csv(buf.as_slice(), &schema).unwrap();
        assert!(p.same_as(&q));
        let mut buf2 = Vec::new();
        q.write_csv(&mut buf2, &schema).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn monthly_threshold_is_exact_division() {
        assert_eq!(monthly_threshold(2400.0f64).unwrap(), 200.0);
        assert_eq!(monthly_threshold(12.0f64).unwrap(), 1.0);
        let m = monthly_threshold(2000.0f64).unwrap();
        assert_eq!(m, 2000.0 / 12.0);
        assert!((m - 166.666_666_666_666_66).abs() < 1e-10);
        assert!(matches!(monthly_threshold(0.0f64), Err(Error::NonPositiveThreshold(_))));
        assert!(matches!(monthly_threshold(-5.0f64), Err(Error::NonPositiveThreshold(_))));
    }

    #[test]
    fn full_scale_panel_has_the_expected_observation_count() {
        let mut text = String::from("country,year,month,flow\n");
        for c in 0..219 {
            let name = format!("C{c:03}");
            for m in 0..46i64 {
                let month = MonthIndex { year: 2020, month: 1 }.plus(m);
                text.push_str(&format!("{name},{},{},{}\n", month.year, month.month, c * m as usize));
            }
        }
        let p: FlowPanel<f64> = FlowPanel::read_csv(text.as_bytes(), &ColumnSchema::default()).unwrap();
        assert_eq!(p.n_observations(), 10_074);
        assert_eq!(p.n_countries(), 219);
        assert_eq!(p.n_months(), 46);
        let total: usize = p.countries().iter().map(|c| p.flow_series(c).unwrap().len()).sum();
        assert_eq!(total, p.n_observations());
    }

    #[test]
    fn month_index_arithmetic_crosses_year_boundaries() {
        let m = MonthIndex { year: 2023, month: 12 };
        assert_eq!(m.plus(1), MonthIndex { year: 2024, month: 1 });
        assert_eq!(m.plus(-11), MonthIndex { year: 2023, month: 1 });
        assert_eq!(MonthIndex::from_ordinal(m.ordinal()), m);
        assert!(MonthIndex::new(2024, 13).is_err());
        assert!(MonthIndex::new(2024, 0).is_err());
    }

    #[test]
    fn lowercase_country_tokens_are_rejected() {
        let text = "country,year,month,flow\nabc,2020,1,5\n";
        assert!(FlowPanel::<f64>::read_csv(text.as_bytes(), &ColumnSchema::default()).is_err());
    }
}
