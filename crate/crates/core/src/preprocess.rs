//! The preprocessing stage: outlier removal, rate standardization and
//! z-scoring, feature assembly, and M-estimate encoding of categoricals.
//!
//! Fitting happens once on a training set; the resulting
//! [`FittedPreprocessor`] is immutable and maps any [`ProteinRecord`] to a
//! numeric vector in `feature_order`.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, ProteinRecord};
use crate::error::{Error, Result};

/// Numeric columns, in canonical order.
pub const NUMERIC_FEATURES: [&str; 6] = ["lpdb", "l", "ph", "temp", "ln_ku", "beta_t"];
/// Categorical columns, in canonical order.
pub const CATEGORICAL_FEATURES: [&str; 3] = ["class", "fold", "f_type"];
/// Every model input, numeric first.
pub const ALL_FEATURES: [&str; 9] = [
    "lpdb", "l", "ph", "temp", "ln_ku", "beta_t", "class", "fold", "f_type",
];

/// Version tag written into serialized preprocessors.
pub const PREPROCESSOR_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IqrBounds {
    pub q1: f64,
    pub q3: f64,
    pub lower: f64,
    pub upper: f64,
}

impl IqrBounds {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZScoreParams {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateStandardizationParams {
    /// Reference temperature in Kelvin.
    pub t_ref: f64,
    /// Activation enthalpy in J/mol.
    pub delta_h: f64,
    /// Gas constant in J/(mol K).
    pub r_gas: f64,
}

impl Default for RateStandardizationParams {
    fn default() -> Self {
        RateStandardizationParams {
            t_ref: 298.15,
            delta_h: 0.0,
            r_gas: 8.314,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub count: u64,
    pub target_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MEstimateTable {
    pub m: f64,
    pub prior: f64,
    pub per_category: BTreeMap<String, CategoryStats>,
}

/// Sample quantile with linear interpolation between order statistics,
/// `h = (n - 1) p`. `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn fit_iqr(values: &[f64]) -> Result<IqrBounds> {
    if values.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "IQR bounds need at least 4 values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("NaN in IQR input"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    Ok(IqrBounds {
        q1,
        q3,
        lower: q1 - 1.5 * iqr,
        upper: q3 + 1.5 * iqr,
    })
}

/// Raw (untransformed) value of a numeric column.
pub fn raw_numeric(record: &ProteinRecord, feature: &str) -> Result<f64> {
    Ok(match feature {
        "lpdb" => f64::from(record.lpdb),
        "l" => f64::from(record.l),
        "ph" => record.ph,
        "temp" => record.temp,
        "ln_ku" => record.ln_ku,
        "beta_t" => record.beta_t,
        other => {
            return Err(Error::validation(
                other,
                "not a numeric feature of protein records",
            ))
        }
    })
}

/// Keeps records whose bounded features all lie inside their (inclusive)
/// bounds. Returns the kept records and the number removed.
pub fn filter_outliers(
    data: &Dataset,
    bounds: &BTreeMap<String, IqrBounds>,
) -> Result<(Dataset, usize)> {
    let mut kept = Vec::with_capacity(data.len());
    for r in data.records() {
        let mut inside = true;
        for (name, b) in bounds {
            if !b.contains(raw_numeric(r, name)?) {
                inside = false;
            }
        }
        if inside {
            kept.push(r.clone());
        }
    }
    let removed = data.len() - kept.len();
    Ok((data.with_records(data.label(), kept), removed))
}

fn kelvin(temp_celsius: f64) -> Result<f64> {
    if !temp_celsius.is_finite() || temp_celsius <= -273.15 {
        return Err(Error::validation(
            "temp",
            format!("non-physical temperature {temp_celsius} C"),
        ));
    }
    Ok(temp_celsius + 273.15)
}

/// Moves a log rate measured at `temp_celsius` to the reference temperature
/// with the Eyring transfer
/// `ln k(T_ref) = ln k(T) + ln(T_ref / T) + (dH / R)(1 / T - 1 / T_ref)`.
pub fn standardize_rate(
    ln_k: f64,
    temp_celsius: f64,
    params: &RateStandardizationParams,
) -> Result<f64> {
    let t = kelvin(temp_celsius)?;
    if t == params.t_ref {
        return Ok(ln_k);
    }
    Ok(ln_k
        + (params.t_ref / t).ln()
        + (params.delta_h / params.r_gas) * (1.0 / t - 1.0 / params.t_ref))
}

/// Inverse of [`standardize_rate`]: the log rate at `temp_celsius` given its
/// reference-temperature value.
pub fn unstandardize_rate(ln_k_ref: f64, temp_celsius: f64, params: &RateStandardizationParams) -> f64 {
    let t = temp_celsius + 273.15;
    if t == params.t_ref {
        return ln_k_ref;
    }
    ln_k_ref
        - (params.t_ref / t).ln()
        - (params.delta_h / params.r_gas) * (1.0 / t - 1.0 / params.t_ref)
}

pub fn fit_zscore(values: &[f64]) -> Result<ZScoreParams> {
    if values.is_empty() {
        return Err(Error::InsufficientData("z-score needs at least 1 value".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(ZScoreParams {
        mean,
        std: var.sqrt(),
    })
}

/// `(value - mean) / std`, or 0 for a constant column.
pub fn apply_zscore(value: f64, params: &ZScoreParams) -> f64 {
    if params.std == 0.0 {
        0.0
    } else {
        (value - params.mean) / params.std
    }
}

pub fn fit_m_estimate(categories: &[&str], targets: &[f64], m: f64) -> Result<MEstimateTable> {
    if categories.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: categories.len(),
            actual: targets.len(),
        });
    }
    if targets.is_empty() {
        return Err(Error::InsufficientData("M-estimate needs at least 1 row".into()));
    }
    if !(m >= 0.0) {
        return Err(Error::invalid(format!("smoothing weight m = {m} must be >= 0")));
    }
    let prior = targets.iter().sum::<f64>() / targets.len() as f64;
    let mut per_category: BTreeMap<String, CategoryStats> = BTreeMap::new();
    for (&c, &t) in categories.iter().zip(targets) {
        let s = per_category.entry(c.to_string()).or_insert(CategoryStats {
            count: 0,
            target_sum: 0.0,
        });
        s.count += 1;
        s.target_sum += t;
    }
    Ok(MEstimateTable {
        m,
        prior,
        per_category,
    })
}

/// `(n * mean_c + m * prior) / (n + m)`; unseen categories map to the prior.
pub fn encode_category(cat: &str, table: &MEstimateTable) -> f64 {
    match table.per_category.get(cat) {
        Some(s) => (s.target_sum + table.m * table.prior) / (s.count as f64 + table.m),
        None => table.prior,
    }
}

fn category<'a>(record: &'a ProteinRecord, feature: &str) -> &'a str {
    match feature {
        "class" => &record.class,
        "fold" => &record.fold,
        "f_type" => record.f_type.as_str(),
        _ => unreachable!("checked by caller"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// M-estimate smoothing weight.
    pub m: f64,
    pub rate: RateStandardizationParams,
    /// Numeric columns that are z-scored.
    pub zscore_columns: Vec<String>,
    /// Numeric columns screened by the IQR filter.
    pub outlier_columns: Vec<String>,
    /// Output feature order.
    pub features: Vec<String>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            m: 20.0,
            rate: RateStandardizationParams::default(),
            zscore_columns: ["lpdb", "l", "ph", "temp"].map(String::from).to_vec(),
            outlier_columns: NUMERIC_FEATURES.map(String::from).to_vec(),
            features: ALL_FEATURES.map(String::from).to_vec(),
        }
    }
}

fn check_names(names: &[String], allowed: &[&str], what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for n in names {
        if !allowed.contains(&n.as_str()) {
            return Err(Error::validation(n, format!("unknown {what} column")));
        }
        if !seen.insert(n) {
            return Err(Error::validation(n, format!("duplicate {what} column")));
        }
    }
    Ok(())
}

fn check_feature_order(features: &[String]) -> Result<()> {
    if features.is_empty() {
        return Err(Error::invalid("feature order must not be empty"));
    }
    check_names(features, &ALL_FEATURES, "feature")
}

/// Frozen state of the whole preprocessing stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPreprocessor {
    pub format_version: u32,
    pub iqr_bounds: BTreeMap<String, IqrBounds>,
    pub zscore: BTreeMap<String, ZScoreParams>,
    pub encoders: BTreeMap<String, MEstimateTable>,
    pub rate_params: RateStandardizationParams,
    pub feature_order: Vec<String>,
}

/// Fits every stage on `data`. Targets are required.
pub fn fit_pipeline(data: &Dataset, config: &PreprocessConfig) -> Result<FittedPreprocessor> {
    check_feature_order(&config.features)?;
    check_names(&config.zscore_columns, &NUMERIC_FEATURES, "z-score")?;
    check_names(&config.outlier_columns, &NUMERIC_FEATURES, "outlier")?;
    if config.rate.t_ref <= 0.0 {
        return Err(Error::invalid("reference temperature must be positive"));
    }
    if data.is_empty() {
        return Err(Error::InsufficientData("cannot fit on an empty dataset".into()));
    }
    data.targets()?;

    let mut iqr_bounds = BTreeMap::new();
    for name in &config.outlier_columns {
        let col = data
            .records()
            .iter()
            .map(|r| raw_numeric(r, name))
            .collect::<Result<Vec<_>>>()?;
        iqr_bounds.insert(name.clone(), fit_iqr(&col)?);
    }
    let (kept, _) = filter_outliers(data, &iqr_bounds)?;
    if kept.is_empty() {
        return Err(Error::InsufficientData(
            "outlier removal left no records".into(),
        ));
    }

    let mut fitted = FittedPreprocessor {
        format_version: PREPROCESSOR_FORMAT_VERSION,
        iqr_bounds,
        zscore: BTreeMap::new(),
        encoders: BTreeMap::new(),
        rate_params: config.rate,
        feature_order: config.features.clone(),
    };

    for name in &config.zscore_columns {
        let col = kept
            .records()
            .iter()
            .map(|r| fitted.rate_adjusted(r, name))
            .collect::<Result<Vec<_>>>()?;
        fitted.zscore.insert(name.clone(), fit_zscore(&col)?);
    }

    let targets = kept
        .records()
        .iter()
        .map(|r| Ok(fitted.standardized_target(r)?.expect("targets checked above")))
        .collect::<Result<Vec<_>>>()?;
    for name in CATEGORICAL_FEATURES {
        let cats: Vec<&str> = kept.records().iter().map(|r| category(r, name)).collect();
        fitted
            .encoders
            .insert(name.to_string(), fit_m_estimate(&cats, &targets, config.m)?);
    }
    Ok(fitted)
}

impl FittedPreprocessor {
    /// Applies the fitted IQR filter. Only training data is filtered.
    pub fn filter(&self, data: &Dataset) -> Result<(Dataset, usize)> {
        filter_outliers(data, &self.iqr_bounds)
    }

    /// Numeric value after rate standardization (which only touches `ln_ku`).
    fn rate_adjusted(&self, record: &ProteinRecord, feature: &str) -> Result<f64> {
        match feature {
            "ln_ku" => standardize_rate(record.ln_ku, record.temp, &self.rate_params),
            other => raw_numeric(record, other),
        }
    }

    /// Target moved to the reference temperature, if present.
    pub fn standardized_target(&self, record: &ProteinRecord) -> Result<Option<f64>> {
        record
            .ln_kf
            .map(|y| standardize_rate(y, record.temp, &self.rate_params))
            .transpose()
    }

    /// Standardization and normalization of the numeric columns, in
    /// [`NUMERIC_FEATURES`] order.
    pub fn normalize_numeric(&self, record: &ProteinRecord) -> Result<[f64; 6]> {
        let mut out = [0.0; 6];
        for (slot, name) in out.iter_mut().zip(NUMERIC_FEATURES) {
            let v = self.rate_adjusted(record, name)?;
            *slot = match self.zscore.get(name) {
                Some(p) => apply_zscore(v, p),
                None => v,
            };
        }
        Ok(out)
    }

    /// Encodes categoricals and lays out the vector in `feature_order`.
    pub fn assemble(&self, record: &ProteinRecord, numeric: &[f64; 6]) -> Vec<f64> {
        self.feature_order
            .iter()
            .map(|name| match NUMERIC_FEATURES.iter().position(|n| n == name) {
                Some(i) => numeric[i],
                None => encode_category(category(record, name), &self.encoders[name]),
            })
            .collect()
    }

    pub fn transform(&self, record: &ProteinRecord) -> Result<Vec<f64>> {
        let numeric = self.normalize_numeric(record)?;
        Ok(self.assemble(record, &numeric))
    }

    /// Row-major transformed matrix for a dataset.
    pub fn transform_all(&self, data: &Dataset) -> Result<Vec<Vec<f64>>> {
        data.records().iter().map(|r| self.transform(r)).collect()
    }

    pub fn targets(&self, data: &Dataset) -> Result<Vec<f64>> {
        data.records()
            .iter()
            .map(|r| {
                self.standardized_target(r)?
                    .ok_or_else(|| Error::validation("ln_kf", format!("`{}` has no target", r.psn)))
            })
            .collect()
    }

    /// Same fitted state, emitting only `features` in the given order.
    pub fn select(&self, features: &[String]) -> Result<FittedPreprocessor> {
        check_feature_order(features)?;
        Ok(FittedPreprocessor {
            feature_order: features.to_vec(),
            ..self.clone()
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::invalid("preprocessor JSON lacks format_version"))?;
        if found != u64::from(PREPROCESSOR_FORMAT_VERSION) {
            return Err(Error::Version {
                found: found as u32,
                expected: PREPROCESSOR_FORMAT_VERSION,
            });
        }
        let fitted: FittedPreprocessor = serde_json::from_value(value)?;
        check_feature_order(&fitted.feature_order)?;
        for name in CATEGORICAL_FEATURES {
            if fitted.feature_order.iter().any(|f| f == name) && !fitted.encoders.contains_key(name) {
                return Err(Error::validation(name, "no encoder table for categorical feature"));
            }
        }
        Ok(fitted)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthesize_dataset;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn iqr_constant() {
        let b = fit_iqr(&[5.0; 4]).unwrap();
        assert_eq!((b.q1, b.q3, b.lower, b.upper), (5.0, 5.0, 5.0, 5.0));
    }

    #[test]
    fn iqr_with_outlier() {
        let v = [1., 2., 3., 4., 5., 6., 7., 8., 9., 10., 200.];
        let b = fit_iqr(&v).unwrap();
        assert_eq!(b.q1, 3.5);
        assert_eq!(b.q3, 8.5);
        assert_eq!(b.lower, -4.0);
        assert_eq!(b.upper, 16.0);
        let mut shuffled = v;
        shuffled.reverse();
        shuffled.swap(2, 7);
        assert_eq!(fit_iqr(&shuffled).unwrap(), b);
    }

    #[test]
    fn iqr_needs_four() {
        assert!(fit_iqr(&[1.0, 2.0, 3.0]).is_err());
    }

    fn with_ph(d: &Dataset, phs: &[f64]) -> Dataset {
        let recs = d
            .records()
            .iter()
            .zip(phs)
            .map(|(r, &ph)| ProteinRecord { ph, ..r.clone() })
            .collect();
        d.with_records("t", recs)
    }

    #[test]
    fn outlier_filter_boundaries() {
        let base = synthesize_dataset(4, 0).unwrap();
        let bounds: BTreeMap<String, IqrBounds> = [(
            "ph".to_string(),
            IqrBounds { q1: 3.5, q3: 8.5, lower: -4.0, upper: 10.0 },
        )]
        .into();
        let d = with_ph(&base, &[1.0, 10.0, 10.5, 3.0]);
        let (kept, removed) = filter_outliers(&d, &bounds).unwrap();
        assert_eq!(removed, 1);
        assert_eq!(kept.len(), 3);
        assert!(kept.records().iter().any(|r| r.ph == 10.0));

        let (again, removed) = filter_outliers(&kept, &bounds).unwrap();
        assert_eq!(removed, 0);
        assert_eq!(again.records(), kept.records());

        let bad: BTreeMap<String, IqrBounds> = [("psn".to_string(), bounds["ph"])].into();
        assert!(filter_outliers(&d, &bad).is_err());
    }

    #[test]
    fn rate_standardization() {
        let p = RateStandardizationParams::default();
        assert_eq!(standardize_rate(5.0, 25.0, &p).unwrap(), 5.0);
        let v = standardize_rate(5.0, 37.0, &p).unwrap();
        // ln(298.15 / 310.15) = -0.039459335850012
        assert!(close(v, 4.960540664149988, 1e-12), "{v}");
        assert!(standardize_rate(1.0, -280.0, &p).is_err());

        let hot = RateStandardizationParams { delta_h: 50_000.0, ..p };
        let up = standardize_rate(5.0, 37.0, &hot).unwrap();
        assert!(up < v);
        assert!(close(unstandardize_rate(up, 37.0, &hot), 5.0, 1e-12));
    }

    #[test]
    fn zscore_examples() {
        let p = fit_zscore(&[2.0, 4.0, 6.0]).unwrap();
        assert_eq!(p.mean, 4.0);
        assert!(close(p.std, (8.0f64 / 3.0).sqrt(), 1e-15));
        assert!(close(apply_zscore(2.0, &p), -1.224744871391589, 1e-12));
        assert_eq!(apply_zscore(4.0, &p), 0.0);
        let single = fit_zscore(&[7.0]).unwrap();
        assert_eq!((single.mean, single.std), (7.0, 0.0));
        assert_eq!(apply_zscore(9.0, &single), 0.0);
        assert!(fit_zscore(&[]).is_err());
    }

    #[test]
    fn m_estimate_examples() {
        let t = fit_m_estimate(&["x", "x"], &[3.0, 3.0], 20.0).unwrap();
        assert_eq!(t.prior, 3.0);
        assert_eq!(t.per_category["x"].count, 2);
        assert_eq!(t.per_category["x"].target_sum, 6.0);
        assert_eq!(encode_category("unseen", &t), 3.0);

        let table = MEstimateTable {
            m: 20.0,
            prior: 1.0,
            per_category: [("a".to_string(), CategoryStats { count: 5, target_sum: 10.0 })].into(),
        };
        assert!(close(encode_category("a", &table), 1.2, 1e-15));
        let unsmoothed = MEstimateTable { m: 0.0, ..table.clone() };
        assert_eq!(encode_category("a", &unsmoothed), 2.0);

        assert!(fit_m_estimate(&["a"], &[1.0, 2.0], 20.0).is_err());
    }

    #[test]
    fn fit_and_transform_shape() {
        let d = synthesize_dataset(200, 0).unwrap();
        let cfg = PreprocessConfig::default();
        let f = fit_pipeline(&d, &cfg).unwrap();
        assert_eq!(f, fit_pipeline(&d, &cfg).unwrap());
        for r in d.records() {
            assert_eq!(f.transform(r).unwrap().len(), f.feature_order.len());
        }
        let sub = f.select(&["beta_t".into(), "fold".into()]).unwrap();
        let full = f.transform(&d.records()[0]).unwrap();
        assert_eq!(sub.transform(&d.records()[0]).unwrap(), vec![full[5], full[7]]);
        assert!(f.select(&["psn".into()]).is_err());
    }

    #[test]
    fn mean_record_maps_to_zero() {
        let d = synthesize_dataset(200, 4).unwrap();
        let cfg = PreprocessConfig::default();
        let f = fit_pipeline(&d, &cfg).unwrap();
        let mut r = d.records()[0].clone();
        r.ph = f.zscore["ph"].mean;
        r.temp = f.zscore["temp"].mean;
        let v = f.transform(&r).unwrap();
        assert!(close(v[2], 0.0, 1e-12));
        assert!(close(v[3], 0.0, 1e-12));
    }

    #[test]
    fn degenerate_fit_errors() {
        let d = synthesize_dataset(8, 2).unwrap();
        // Each of four records is the lone outlier in a different column.
        let recs: Vec<_> = d.records()[..4]
            .iter()
            .enumerate()
            .map(|(i, r)| ProteinRecord {
                ph: if i == 0 { 0.0 } else { 7.0 },
                temp: if i == 1 { 90.0 } else { 20.0 },
                beta_t: if i == 2 { 0.0 } else { 0.5 },
                ln_ku: if i == 3 { 40.0 } else { -4.0 },
                ..r.clone()
            })
            .collect();
        assert!(matches!(
            fit_pipeline(&d.with_records("x", recs), &PreprocessConfig::default()),
            Err(Error::InsufficientData(_))
        ));

        let empty = d.with_records("empty", vec![]);
        assert!(fit_pipeline(&empty, &PreprocessConfig::default()).is_err());

        let no_target: Vec<_> = d
            .records()
            .iter()
            .map(|r| ProteinRecord { ln_kf: None, ..r.clone() })
            .collect();
        assert!(fit_pipeline(&d.with_records("x", no_target), &PreprocessConfig::default()).is_err());

        let cfg = PreprocessConfig {
            features: vec!["l".into(), "l".into()],
            ..Default::default()
        };
        assert!(fit_pipeline(&d, &cfg).is_err());
    }

    #[test]
    fn json_round_trip_and_version() {
        let d = synthesize_dataset(50, 1).unwrap();
        let f = fit_pipeline(&d, &PreprocessConfig::default()).unwrap();
        let json = f.to_json().unwrap();
        let back = FittedPreprocessor::from_json(&json).unwrap();
        assert_eq!(back, f);
        for r in d.records() {
            assert_eq!(back.transform(r).unwrap(), f.transform(r).unwrap());
        }
        let bumped = json.replace("\"format_version\": 1", "\"format_version\": 9");
        assert!(matches!(
            FittedPreprocessor::from_json(&bumped),
            Err(Error::Version { found: 9, .. })
        ));
    }
}
