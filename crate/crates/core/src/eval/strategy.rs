//! Four-quadrant train/test evaluation over feature subsets.
//!
//! `D_XY` trains on split X and tests on split Y. Each split is partitioned
//! once into train and test halves with the run seed; training always uses
//! the train part of X and testing the test part of Y, so no record is ever
//! seen on both sides.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::fit_cart;
use crate::bonsai;
use crate::dataset::{train_test_partition, Dataset, SplitPair};
use crate::error::{Error, Result};
use crate::eval::latency::{measure_latency, LatencyReport};
use crate::eval::metrics::MetricsReport;
use crate::features::{subset_intersection, subset_union, top_n, CorrelationRanking, FeatureSubset};
use crate::pipeline::{rank_training_features, PipelineConfig, Regressor};
use crate::preprocess::{fit_pipeline, FittedPreprocessor, PreprocessConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Quadrant {
    #[serde(rename = "D_AA")]
    AA,
    #[serde(rename = "D_BB")]
    BB,
    #[serde(rename = "D_AB")]
    AB,
    #[serde(rename = "D_BA")]
    BA,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [Quadrant::AA, Quadrant::BB, Quadrant::AB, Quadrant::BA];

    pub fn label(self) -> &'static str {
        match self {
            Quadrant::AA => "D_AA",
            Quadrant::BB => "D_BB",
            Quadrant::AB => "D_AB",
            Quadrant::BA => "D_BA",
        }
    }

    pub fn from_label(s: &str) -> Result<Self> {
        Quadrant::ALL
            .into_iter()
            .find(|q| q.label() == s)
            .ok_or_else(|| Error::validation("data", format!("unknown quadrant `{s}`")))
    }

    /// Whether training and testing draw from the same split.
    pub fn is_diagonal(self) -> bool {
        matches!(self, Quadrant::AA | Quadrant::BB)
    }
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Settings for per-cell latency measurement. Timing is the only
/// non-deterministic part of a strategy run, so it is opt-in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    pub warmup: usize,
    pub reps: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig { warmup: 3, reps: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CartSettings {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for CartSettings {
    fn default() -> Self {
        CartSettings {
            max_depth: 4,
            min_samples_leaf: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyConfig {
    pub pipeline: PipelineConfig,
    pub subset_sizes: Vec<usize>,
    pub test_fraction: f64,
    /// Share of each training part held out to pick the best subset used by
    /// the cross quadrants.
    pub validation_fraction: f64,
    /// Drives partitioning and model initialization.
    pub seed: u64,
    pub timing: Option<TimingConfig>,
    /// When set, a CART cell is trained next to every bonsai cell.
    pub cart: Option<CartSettings>,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            pipeline: PipelineConfig::default(),
            subset_sizes: vec![2, 4, 5, 6, 8, 9],
            test_fraction: 0.2,
            validation_fraction: 0.2,
            seed: 0,
            timing: None,
            cart: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyCell {
    pub quadrant: Quadrant,
    pub train_label: String,
    pub test_label: String,
    pub subset: FeatureSubset,
    pub model_kind: String,
    pub metrics: MetricsReport,
    pub model_size_bytes: usize,
    pub latency: Option<LatencyReport>,
    #[serde(skip)]
    pub model_bytes: Vec<u8>,
    #[serde(skip)]
    pub preprocessor: FittedPreprocessor,
}

impl StrategyCell {
    pub fn row(&self) -> StrategyRow {
        StrategyRow {
            data: self.quadrant.label().to_string(),
            subset: self.subset.name.clone(),
            mse: self.metrics.mse,
            mae: self.metrics.mae,
            r2: self.metrics.r2,
            model_size_kb: self.model_size_bytes as f64 / 1024.0,
            model_ift_ms: self.latency.as_ref().map(|l| l.model.median_ms),
            pipeline_ift_ms: self.latency.as_ref().map(|l| l.pipeline.median_ms),
        }
    }
}

/// One line of the results grid. Missing values are empty fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub data: String,
    pub subset: String,
    pub mse: f64,
    pub mae: f64,
    pub r2: Option<f64>,
    pub model_size_kb: f64,
    pub model_ift_ms: Option<f64>,
    pub pipeline_ift_ms: Option<f64>,
}

pub const GRID_HEADER: [&str; 8] = [
    "data",
    "subset",
    "mse",
    "mae",
    "r2",
    "model_size_kb",
    "model_ift_ms",
    "pipeline_ift_ms",
];

pub fn rows_to_csv(rows: &[StrategyRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(GRID_HEADER)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn rows_from_csv(text: &str) -> Result<Vec<StrategyRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header != GRID_HEADER {
        return Err(Error::validation("header", format!("unexpected columns {header:?}")));
    }
    let rows = r.deserialize().collect::<std::result::Result<Vec<StrategyRow>, _>>()?;
    for row in &rows {
        Quadrant::from_label(&row.data)?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyRun {
    pub cells: Vec<StrategyCell>,
    /// CART cells, one per bonsai cell, when requested.
    pub baseline_cells: Vec<StrategyCell>,
    pub ranking_a: Option<CorrelationRanking>,
    pub ranking_b: Option<CorrelationRanking>,
    pub best_a: Option<FeatureSubset>,
    pub best_b: Option<FeatureSubset>,
    pub warnings: Vec<String>,
}

impl StrategyRun {
    pub fn rows(&self) -> Vec<StrategyRow> {
        self.cells.iter().map(StrategyCell::row).collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        rows_to_csv(&self.rows())
    }
}

/// Which regressor a cell trains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellModel {
    Bonsai,
    Cart(CartSettings),
}

fn fit_regressor(
    kind: CellModel,
    train: &Dataset,
    subset: &FeatureSubset,
    cfg: &PipelineConfig,
) -> Result<(FittedPreprocessor, Box<dyn Regressor>)> {
    let pre = PreprocessConfig {
        features: subset.features().to_vec(),
        ..cfg.preprocess.clone()
    };
    let fitted = fit_pipeline(train, &pre)?;
    let (kept, _) = fitted.filter(train)?;
    let x = fitted.transform_all(&kept)?;
    let y = fitted.targets(&kept)?;
    let model: Box<dyn Regressor> = match kind {
        CellModel::Bonsai => {
            let bcfg = bonsai::BonsaiConfig {
                input_dim: subset.len(),
                ..cfg.bonsai.clone()
            };
            Box::new(bonsai::train(&bcfg, &x, &y)?.0)
        }
        CellModel::Cart(s) => Box::new(fit_cart(&x, &y, s.max_depth, s.min_samples_leaf, 0)?),
    };
    Ok((fitted, model))
}

/// Fits on `train`, scores on `test`, and optionally times inference on the
/// test records.
pub fn evaluate_cell(
    quadrant: Quadrant,
    train: &Dataset,
    test: &Dataset,
    subset: &FeatureSubset,
    cfg: &PipelineConfig,
    kind: CellModel,
    timing: Option<TimingConfig>,
) -> Result<StrategyCell> {
    let (fitted, model) = fit_regressor(kind, train, subset, cfg)?;
    let y = fitted.targets(test)?;
    let yhat = test
        .records()
        .iter()
        .map(|r| model.predict_row(&fitted.transform(r)?))
        .collect::<Result<Vec<_>>>()?;
    let latency = timing
        .map(|t| measure_latency(model.as_ref(), &fitted, test.records(), t.warmup, t.reps))
        .transpose()?;
    let model_bytes = model.to_bytes();
    Ok(StrategyCell {
        quadrant,
        train_label: train.label().to_string(),
        test_label: test.label().to_string(),
        subset: subset.clone(),
        model_kind: model.kind().to_string(),
        metrics: MetricsReport::compute(&y, &yhat)?,
        model_size_bytes: model_bytes.len(),
        latency,
        model_bytes,
        preprocessor: fitted,
    })
}

/// Per-batch metrics over consecutive slices of `test`; the last batch may
/// be smaller.
pub fn batch_trend(
    model: &dyn Regressor,
    fitted: &FittedPreprocessor,
    test: &Dataset,
    batch_size: usize,
) -> Result<Vec<MetricsReport>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    test.records()
        .chunks(batch_size)
        .map(|chunk| {
            let mut y = Vec::with_capacity(chunk.len());
            let mut yhat = Vec::with_capacity(chunk.len());
            for r in chunk {
                y.push(fitted.standardized_target(r)?.ok_or_else(|| {
                    Error::validation("ln_kf", format!("`{}` has no target", r.psn))
                })?);
                yhat.push(model.predict_row(&fitted.transform(r)?)?);
            }
            MetricsReport::compute(&y, &yhat)
        })
        .collect()
}

struct SplitParts {
    tag: &'static str,
    train: Dataset,
    test: Dataset,
    ranking: CorrelationRanking,
    subsets: Vec<FeatureSubset>,
}

fn prepare(
    tag: &'static str,
    data: &Dataset,
    cfg: &StrategyConfig,
    warnings: &mut Vec<String>,
) -> Result<Option<SplitParts>> {
    if data.len() < 2 {
        warnings.push(format!(
            "split {tag} has {} records; its quadrants are skipped",
            data.len()
        ));
        return Ok(None);
    }
    let (train, test) = train_test_partition(data, cfg.test_fraction, cfg.seed)?;
    let ranking = rank_training_features(&train, &cfg.pipeline.preprocess)?;
    let subsets = cfg
        .subset_sizes
        .iter()
        .map(|&n| top_n(&ranking, n, tag))
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(SplitParts {
        tag,
        train,
        test,
        ranking,
        subsets,
    }))
}

/// Best subset of a split by MAE on a validation part carved from its
/// training data; ties go to the smaller subset.
fn pick_best(parts: &SplitParts, cfg: &StrategyConfig, warnings: &mut Vec<String>) -> FeatureSubset {
    let fallback = || parts.subsets.iter().max_by_key(|s| s.len()).cloned().unwrap();
    let (fit, val) = match train_test_partition(&parts.train, cfg.validation_fraction, cfg.seed) {
        Ok(p) => p,
        Err(e) => {
            warnings.push(format!("split {}: no validation part ({e}); using the largest subset", parts.tag));
            return fallback();
        }
    };
    let scores: Vec<Result<f64>> = parts
        .subsets
        .par_iter()
        .map(|s| {
            evaluate_cell(Quadrant::AA, &fit, &val, s, &cfg.pipeline, CellModel::Bonsai, None)
                .map(|c| c.metrics.mae)
        })
        .collect();
    let mut best: Option<(f64, &FeatureSubset)> = None;
    for (s, score) in parts.subsets.iter().zip(scores) {
        match score {
            Ok(mae) => {
                let better = best.is_none_or(|(b, bs)| mae < b || (mae == b && s.len() < bs.len()));
                if better {
                    best = Some((mae, s));
                }
            }
            Err(e) => warnings.push(format!("split {}: validation of {} failed: {e}", parts.tag, s.name)),
        }
    }
    best.map(|(_, s)| s.clone()).unwrap_or_else(fallback)
}

/// Runs every applicable (quadrant, subset) cell. Diagonal quadrants get one
/// cell per subset size; cross quadrants get the union and intersection of
/// the two splits' best subsets. Cells are ordered by quadrant, then subset.
pub fn run_strategy(split: &SplitPair, cfg: &StrategyConfig) -> Result<StrategyRun> {
    if cfg.subset_sizes.is_empty() {
        return Err(Error::invalid("no subsets"));
    }
    let mut cfg = cfg.clone();
    cfg.pipeline.bonsai.seed = cfg.seed;
    let cfg = &cfg;

    let mut warnings = Vec::new();
    let a = prepare("A", &split.a, cfg, &mut warnings)?;
    let b = prepare("B", &split.b, cfg, &mut warnings)?;
    let best_a = a.as_ref().map(|p| pick_best(p, cfg, &mut warnings));
    let best_b = b.as_ref().map(|p| pick_best(p, cfg, &mut warnings));

    let mut jobs: Vec<(Quadrant, &SplitParts, &SplitParts, FeatureSubset)> = Vec::new();
    for (q, parts) in [(Quadrant::AA, &a), (Quadrant::BB, &b)] {
        if let Some(p) = parts {
            jobs.extend(p.subsets.iter().map(|s| (q, p, p, s.clone())));
        }
    }
    if let (Some(pa), Some(pb), Some(sa), Some(sb)) = (&a, &b, &best_a, &best_b) {
        let mut cross = vec![subset_union(sa, sb)];
        match subset_intersection(sa, sb) {
            Ok(s) => cross.push(s),
            Err(e) => warnings.push(format!("cross quadrants: {e}; intersection row skipped")),
        }
        for s in &cross {
            jobs.push((Quadrant::AB, pa, pb, s.clone()));
        }
        for s in &cross {
            jobs.push((Quadrant::BA, pb, pa, s.clone()));
        }
    } else {
        warnings.push("cross quadrants need both splits; D_AB and D_BA skipped".to_string());
    }

    let run_all = |kind: CellModel, timing: Option<TimingConfig>| {
        jobs.par_iter()
            .map(|(q, tr, te, s)| evaluate_cell(*q, &tr.train, &te.test, s, &cfg.pipeline, kind, timing))
            .collect::<Result<Vec<_>>>()
    };
    let cells = run_all(CellModel::Bonsai, cfg.timing)?;
    let baseline_cells = match cfg.cart {
        Some(s) => run_all(CellModel::Cart(s), cfg.timing)?,
        None => Vec::new(),
    };

    Ok(StrategyRun {
        cells,
        baseline_cells,
        ranking_a: a.map(|p| p.ranking),
        ranking_b: b.map(|p| p.ranking),
        best_a,
        best_b,
        warnings,
    })
}
