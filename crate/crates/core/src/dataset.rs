//! Protein kinetics records, CSV ingestion, dataset splitting and the
//! synthetic data generator.
//!
//! The CSV layout is fixed:
//!
//! ```text
//! psn,class,fold,lpdb,l,ph,temp,f_type,ln_ku,beta_t,ln_kf
//! ```
//!
//! A header row is expected, `.` is the decimal separator and `ln_kf` may be
//! left empty for records that only need a prediction.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{unstandardize_rate, RateStandardizationParams};

/// Column names in file order.
pub const CSV_COLUMNS: [&str; 11] = [
    "psn", "class", "fold", "lpdb", "l", "ph", "temp", "f_type", "ln_ku", "beta_t", "ln_kf",
];

/// Folding kinetics class: two-state (`2S`) or non-two-state (`N2S`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FoldType {
    #[serde(rename = "2S")]
    TwoState,
    #[serde(rename = "N2S")]
    MultiState,
}

impl FoldType {
    pub fn as_str(self) -> &'static str {
        match self {
            FoldType::TwoState => "2S",
            FoldType::MultiState => "N2S",
        }
    }
}

impl fmt::Display for FoldType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FoldType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "2S" => Ok(FoldType::TwoState),
            "N2S" => Ok(FoldType::MultiState),
            other => Err(Error::validation(
                "f_type",
                format!("unknown fold type `{other}` (expected 2S or N2S)"),
            )),
        }
    }
}

/// One protein's kinetics observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProteinRecord {
    pub psn: String,
    pub class: String,
    pub fold: String,
    pub lpdb: u32,
    pub l: u32,
    pub ph: f64,
    /// Degrees Celsius.
    pub temp: f64,
    pub f_type: FoldType,
    pub ln_ku: f64,
    pub beta_t: f64,
    /// Prediction target; absent for inference-only records.
    pub ln_kf: Option<f64>,
}

impl ProteinRecord {
    pub fn validate(&self) -> Result<()> {
        if self.l == 0 {
            return Err(Error::validation("l", "total residue count must be positive"));
        }
        if self.lpdb > self.l {
            return Err(Error::validation(
                "lpdb",
                format!("lpdb ({}) exceeds l ({})", self.lpdb, self.l),
            ));
        }
        if !(0.0..=14.0).contains(&self.ph) {
            return Err(Error::validation("ph", format!("{} outside [0, 14]", self.ph)));
        }
        if !(0.0..=1.0).contains(&self.beta_t) {
            return Err(Error::validation(
                "beta_t",
                format!("{} outside [0, 1]", self.beta_t),
            ));
        }
        if !self.temp.is_finite() || self.temp <= -273.15 {
            return Err(Error::validation("temp", format!("non-physical temperature {}", self.temp)));
        }
        if !self.ln_ku.is_finite() {
            return Err(Error::validation("ln_ku", "must be finite"));
        }
        if let Some(y) = self.ln_kf {
            if !y.is_finite() {
                return Err(Error::validation("ln_kf", "must be finite"));
            }
        }
        Ok(())
    }
}

/// An immutable, labelled collection of records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    records: Vec<ProteinRecord>,
    label: String,
}

impl Dataset {
    pub fn new(label: impl Into<String>, records: Vec<ProteinRecord>) -> Result<Self> {
        let label = label.into();
        if label.trim().is_empty() {
            return Err(Error::invalid("dataset label must be non-empty"));
        }
        for r in &records {
            r.validate()?;
        }
        Ok(Dataset { records, label })
    }

    pub fn records(&self) -> &[ProteinRecord] {
        &self.records
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Targets of every record, failing if any is missing.
    pub fn targets(&self) -> Result<Vec<f64>> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.ln_kf.ok_or_else(|| {
                    Error::validation("ln_kf", format!("record {i} (`{}`) has no target", r.psn))
                })
            })
            .collect()
    }

    pub(crate) fn with_records(&self, label: impl Into<String>, records: Vec<ProteinRecord>) -> Self {
        Dataset {
            records,
            label: label.into(),
        }
    }
}

/// The A/B split used by the train/test quadrants.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPair {
    pub a: Dataset,
    pub b: Dataset,
}

fn field<'a>(rec: &'a csv::StringRecord, row: usize, col: usize) -> Result<&'a str> {
    rec.get(col).ok_or_else(|| Error::Parse {
        row,
        column: CSV_COLUMNS[col].to_string(),
        message: "missing field".into(),
    })
}

fn parse_num<T: FromStr>(rec: &csv::StringRecord, row: usize, col: usize) -> Result<T>
where
    T::Err: fmt::Display,
{
    let raw = field(rec, row, col)?.trim();
    raw.parse::<T>().map_err(|e| Error::Parse {
        row,
        column: CSV_COLUMNS[col].to_string(),
        message: format!("`{raw}`: {e}"),
    })
}

/// Parses CSV text in the documented column order.
///
/// Rows are numbered from 1 (the first data row) in error messages.
pub fn parse_records(csv_text: &str, has_header: bool) -> Result<Vec<ProteinRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .from_reader(csv_text.as_bytes());

    if has_header {
        let header = reader.headers()?.clone();
        let names: Vec<&str> = header.iter().map(str::trim).collect();
        if names != CSV_COLUMNS {
            return Err(Error::Parse {
                row: 0,
                column: "header".into(),
                message: format!("expected `{}`, found `{}`", CSV_COLUMNS.join(","), names.join(",")),
            });
        }
    }

    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        if rec.len() != CSV_COLUMNS.len() {
            return Err(Error::Parse {
                row,
                column: CSV_COLUMNS.get(rec.len()).unwrap_or(&"ln_kf").to_string(),
                message: format!("expected {} fields, found {}", CSV_COLUMNS.len(), rec.len()),
            });
        }
        let f_type = field(&rec, row, 7)?.parse::<FoldType>().map_err(|e| Error::Parse {
            row,
            column: "f_type".into(),
            message: e.to_string(),
        })?;
        let ln_kf_raw = field(&rec, row, 10)?.trim();
        let ln_kf = if ln_kf_raw.is_empty() {
            None
        } else {
            Some(parse_num::<f64>(&rec, row, 10)?)
        };
        let record = ProteinRecord {
            psn: field(&rec, row, 0)?.trim().to_string(),
            class: field(&rec, row, 1)?.trim().to_string(),
            fold: field(&rec, row, 2)?.trim().to_string(),
            lpdb: parse_num(&rec, row, 3)?,
            l: parse_num(&rec, row, 4)?,
            ph: parse_num(&rec, row, 5)?,
            temp: parse_num(&rec, row, 6)?,
            f_type,
            ln_ku: parse_num(&rec, row, 8)?,
            beta_t: parse_num(&rec, row, 9)?,
            ln_kf,
        };
        record.validate().map_err(|e| match e {
            Error::Validation { field, message } => Error::Parse {
                row,
                column: field,
                message,
            },
            other => other,
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Writes records in the documented layout, header included.
pub fn serialize_records(records: &[ProteinRecord]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(CSV_COLUMNS)?;
    for r in records {
        writer.write_record([
            r.psn.clone(),
            r.class.clone(),
            r.fold.clone(),
            r.lpdb.to_string(),
            r.l.to_string(),
            r.ph.to_string(),
            r.temp.to_string(),
            r.f_type.to_string(),
            r.ln_ku.to_string(),
            r.beta_t.to_string(),
            r.ln_kf.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
}

/// Default A/B rule: 2S proteins go to A, N2S proteins to B.
pub fn split_ab(data: &Dataset) -> SplitPair {
    split_by(data, |r| r.f_type == FoldType::TwoState)
}

/// Splits with a caller-supplied rule; records for which `in_a` holds go to A.
pub fn split_by<F>(data: &Dataset, mut in_a: F) -> SplitPair
where
    F: FnMut(&ProteinRecord) -> bool,
{
    let (a, b): (Vec<_>, Vec<_>) = data.records.iter().cloned().partition(|r| in_a(r));
    SplitPair {
        a: data.with_records("PFDB-A", a),
        b: data.with_records("PFDB-B", b),
    }
}

/// Seeded random halving, an alternative to the fold-type rule.
pub fn split_random_halves(data: &Dataset, seed: u64) -> SplitPair {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let in_a: HashSet<usize> = idx[..data.len() / 2].iter().copied().collect();
    let mut i = 0;
    split_by(data, |_| {
        let keep = in_a.contains(&i);
        i += 1;
        keep
    })
}

/// Deterministic train/test partition. Each side keeps the input order.
pub fn train_test_partition(
    data: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test fraction {test_fraction} must lie in (0, 1)"
        )));
    }
    let n = data.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "partition needs at least 2 records, got {n}"
        )));
    }
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);

    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test_idx = idx[..n_test].to_vec();
    let mut train_idx = idx[n_test..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();

    let pick = |ids: &[usize]| ids.iter().map(|&i| data.records[i].clone()).collect();
    Ok((
        data.with_records(format!("{}-train", data.label), pick(&train_idx)),
        data.with_records(format!("{}-test", data.label), pick(&test_idx)),
    ))
}

const CLASSES: [&str; 4] = ["alpha", "beta", "alpha/beta", "alpha+beta"];

/// SCOP-style fold labels with the additive effect each has on the synthetic
/// 25 °C folding rate.
pub const SYNTHETIC_FOLDS: [(&str, f64); 8] = [
    ("SH3-like barrel", 0.8),
    ("Ferredoxin-like", 0.3),
    ("Immunoglobulin-like beta-sandwich", -0.6),
    ("Lambda repressor-like DNA-binding", 1.0),
    ("Ubiquitin-like", 0.2),
    ("Flavodoxin-like", -0.9),
    ("OB-fold", 0.0),
    ("Four-helical up-and-down bundle", 0.5),
];

/// Noise-free synthetic folding rate at 25 °C.
///
/// ```text
/// ln_kf25 = 4.0
///         - 3.0 * ln(l / 80)
///         + 1.5 * (lpdb / l - 0.92)
///         + 0.35 * (ln_ku25 + 5)
///         + 2.0 * tanh(2.5 * (beta_t - 0.55))
///         - 1.5 * [f_type == N2S]
///         + fold_effect(fold)
///         + 0.15 * cos(ph)
/// ```
pub fn synthetic_ln_kf25(
    l: u32,
    lpdb: u32,
    ln_ku25: f64,
    beta_t: f64,
    f_type: FoldType,
    fold_effect: f64,
    ph: f64,
) -> f64 {
    let l = f64::from(l);
    let coverage = f64::from(lpdb) / l;
    let multistate = if f_type == FoldType::MultiState { 1.0 } else { 0.0 };
    4.0 - 3.0 * (l / 80.0).ln()
        + 1.5 * (coverage - 0.92)
        + 0.35 * (ln_ku25 + 5.0)
        + 2.0 * (2.5 * (beta_t - 0.55)).tanh()
        - 1.5 * multistate
        + fold_effect
        + 0.15 * ph.cos()
}

/// Standard deviation of the Gaussian noise added to the synthetic target.
pub const SYNTHETIC_NOISE_SD: f64 = 0.25;

/// Generates `n` schema-valid records.
///
/// Fields are drawn independently per record from a ChaCha8 stream seeded
/// with `seed`:
///
/// * `f_type`: N2S with probability 0.45;
/// * `l`: uniform integer in 40..=130 (2S) or 80..=300 (N2S);
/// * `lpdb`: `l` minus up to 15 % unresolved residues;
/// * `ph` uniform in [3, 9], `temp` uniform in [5, 40] °C;
/// * `beta_t` uniform in [0.2, 0.95];
/// * `ln_ku` at 25 °C uniform in [-8, -2];
/// * `ln_kf` at 25 °C from [`synthetic_ln_kf25`] plus N(0, 0.25²) noise.
///
/// Both rates are then moved from 25 °C to the record temperature with the
/// inverse of the default (enthalpy-free) rate standardization, so the
/// preprocessing stage recovers the clean 25 °C values exactly.
pub fn synthesize_dataset(n: usize, seed: u64) -> Result<Dataset> {
    if n < 1 {
        return Err(Error::invalid("synthetic dataset needs n >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, SYNTHETIC_NOISE_SD).expect("valid normal");
    let rate = RateStandardizationParams::default();

    let records = (0..n)
        .map(|i| {
            let f_type = if rng.gen_bool(0.45) {
                FoldType::MultiState
            } else {
                FoldType::TwoState
            };
            let l: u32 = match f_type {
                FoldType::TwoState => rng.gen_range(40..=130),
                FoldType::MultiState => rng.gen_range(80..=300),
            };
            let missing = (rng.gen_range(0.0..0.15) * f64::from(l)).floor() as u32;
            let lpdb = l - missing;
            let ph = rng.gen_range(3.0..9.0);
            let temp = rng.gen_range(5.0..40.0);
            let beta_t = rng.gen_range(0.2..0.95);
            let ln_ku25 = rng.gen_range(-8.0..-2.0);
            let class = CLASSES[rng.gen_range(0..CLASSES.len())];
            let (fold, effect) = SYNTHETIC_FOLDS[rng.gen_range(0..SYNTHETIC_FOLDS.len())];
            let ln_kf25 = synthetic_ln_kf25(l, lpdb, ln_ku25, beta_t, f_type, effect, ph)
                + noise.sample(&mut rng);

            ProteinRecord {
                psn: format!("syn{i:05}"),
                class: class.to_string(),
                fold: fold.to_string(),
                lpdb,
                l,
                ph,
                temp,
                f_type,
                ln_ku: unstandardize_rate(ln_ku25, temp, &rate),
                beta_t,
                ln_kf: Some(unstandardize_rate(ln_kf25, temp, &rate)),
            }
        })
        .collect();
    Dataset::new("synthetic", records)
}
