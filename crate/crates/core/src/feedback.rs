//! Feedback-driven optimization: result analysis, hyperparameter sweeps and
//! an iterative narrowing search.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bonsai::MAX_DEPTH;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_cell, CellModel, LatencyStats, MetricsReport, Quadrant, StrategyCell, TimingConfig,
};
use crate::features::FeatureSubset;
use crate::pipeline::{train_pipeline, PipelineConfig, TrainedPipeline};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[default]
    Mae,
    Mse,
    R2,
}

impl Objective {
    /// Value to minimize. R² is negated; a missing R² never wins.
    pub fn score(self, m: &MetricsReport) -> f64 {
        match self {
            Objective::Mae => m.mae,
            Objective::Mse => m.mse,
            Objective::R2 => m.r2.map_or(f64::INFINITY, |r| -r),
        }
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mae" => Ok(Objective::Mae),
            "mse" => Ok(Objective::Mse),
            "r2" => Ok(Objective::R2),
            other => Err(Error::validation("objective", format!("`{other}` is not one of mae, mse, r2"))),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Mae => "mae",
            Objective::Mse => "mse",
            Objective::R2 => "r2",
        })
    }
}

// ---------------------------------------------------------------------------
// Analysis

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestCell {
    pub subset: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrantSummary {
    pub quadrant: Quadrant,
    pub cells: usize,
    pub best_mae: BestCell,
    pub best_mse: BestCell,
    /// Absent when no cell in the quadrant has a defined R².
    pub best_r2: Option<BestCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceSummary {
    pub quadrants: Vec<QuadrantSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub quadrant: Quadrant,
    pub metric: String,
    pub previous: f64,
    pub current: f64,
}

/// First cell (in input order) minimizing `key`.
fn best_by(cells: &[&StrategyCell], key: impl Fn(&StrategyCell) -> Option<f64>) -> Option<BestCell> {
    let mut best: Option<BestCell> = None;
    for c in cells {
        if let Some(v) = key(c) {
            if best.as_ref().is_none_or(|b| v < b.value) {
                best = Some(BestCell {
                    subset: c.subset.name.clone(),
                    value: v,
                });
            }
        }
    }
    best
}

/// Best subset per quadrant by each metric. Ties go to the earlier cell.
pub fn analyze(cells: &[StrategyCell]) -> Result<PerformanceSummary> {
    if cells.is_empty() {
        return Err(Error::InsufficientData("no cells to analyze".into()));
    }
    let mut quadrants = Vec::new();
    for q in Quadrant::ALL {
        let group: Vec<&StrategyCell> = cells.iter().filter(|c| c.quadrant == q).collect();
        if group.is_empty() {
            continue;
        }
        let best_r2 = best_by(&group, |c| c.metrics.r2.map(|r| -r)).map(|b| BestCell {
            value: -b.value,
            ..b
        });
        quadrants.push(QuadrantSummary {
            quadrant: q,
            cells: group.len(),
            best_mae: best_by(&group, |c| Some(c.metrics.mae)).expect("non-empty group"),
            best_mse: best_by(&group, |c| Some(c.metrics.mse)).expect("non-empty group"),
            best_r2,
        });
    }
    Ok(PerformanceSummary { quadrants })
}

impl PerformanceSummary {
    /// Quadrant bests that got worse since `previous`.
    pub fn regressions(&self, previous: &PerformanceSummary) -> Vec<Regression> {
        let mut out = Vec::new();
        for cur in &self.quadrants {
            let Some(prev) = previous.quadrants.iter().find(|p| p.quadrant == cur.quadrant) else {
                continue;
            };
            let mut flag = |metric: &str, p: f64, c: f64, worse: bool| {
                if worse {
                    out.push(Regression {
                        quadrant: cur.quadrant,
                        metric: metric.to_string(),
                        previous: p,
                        current: c,
                    });
                }
            };
            let (pm, cm) = (prev.best_mae.value, cur.best_mae.value);
            flag("mae", pm, cm, cm > pm);
            let (pm, cm) = (prev.best_mse.value, cur.best_mse.value);
            flag("mse", pm, cm, cm > pm);
            if let (Some(p), Some(c)) = (&prev.best_r2, &cur.best_r2) {
                flag("r2", p.value, c.value, c.value < p.value);
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Sweeps

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ParamKind {
    Int,
    Real,
}

/// Hyperparameters a sweep may vary.
pub const SWEEP_PARAMS: [&str; 10] = [
    "batch_size",
    "depth",
    "epochs",
    "l2",
    "learning_rate",
    "m",
    "proj_dim",
    "sigma",
    "sparsity_nodes",
    "sparsity_z",
];

fn param_kind(name: &str) -> Result<ParamKind> {
    match name {
        "batch_size" | "depth" | "epochs" | "proj_dim" => Ok(ParamKind::Int),
        "l2" | "learning_rate" | "m" | "sigma" | "sparsity_nodes" | "sparsity_z" => Ok(ParamKind::Real),
        other => Err(Error::validation(other, "not a sweepable hyperparameter")),
    }
}

/// Sets one named hyperparameter. `cfg` is left untouched when the result
/// would be invalid.
pub fn apply_param(cfg: &mut PipelineConfig, name: &str, value: f64) -> Result<()> {
    if param_kind(name)? == ParamKind::Int && (value.fract() != 0.0 || value < 0.0) {
        return Err(Error::validation(name, format!("{value} is not a non-negative integer")));
    }
    let mut next = cfg.clone();
    let b = &mut next.bonsai;
    match name {
        "batch_size" => b.batch_size = value as usize,
        "depth" => b.depth = value as usize,
        "epochs" => b.epochs = value as usize,
        "proj_dim" => b.proj_dim = value as usize,
        "l2" => b.l2 = value,
        "learning_rate" => b.learning_rate = value,
        "sigma" => b.sigma = value,
        "sparsity_nodes" => b.sparsity_nodes = value,
        "sparsity_z" => b.sparsity_z = value,
        "m" => {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::validation("m", "must be a finite value >= 0"));
            }
            next.preprocess.m = value;
        }
        _ => unreachable!("checked by param_kind"),
    }
    next.bonsai.validate().map_err(|e| Error::validation(name, e.to_string()))?;
    *cfg = next;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub grid: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub objective: Objective,
    /// Maximum number of trials; larger grids are cut after this many
    /// trials in enumeration order.
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub timing: Option<TimingConfig>,
}

fn default_budget() -> usize {
    256
}

impl SweepSpec {
    pub fn new(grid: BTreeMap<String, Vec<f64>>) -> Self {
        SweepSpec {
            grid,
            objective: Objective::default(),
            budget: default_budget(),
            seed: 0,
            timing: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::invalid("sweep grid is empty"));
        }
        if self.budget == 0 {
            return Err(Error::invalid("sweep budget must be at least 1"));
        }
        for (name, values) in &self.grid {
            param_kind(name)?;
            if values.is_empty() {
                return Err(Error::validation(name, "no candidate values"));
            }
        }
        Ok(())
    }

    /// Cartesian product in key order, last key varying fastest, truncated
    /// to the budget.
    pub fn trials(&self) -> Vec<BTreeMap<String, f64>> {
        let mut out = vec![BTreeMap::new()];
        for (name, values) in &self.grid {
            out = out
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.insert(name.clone(), v);
                        q
                    })
                })
                .collect();
        }
        out.truncate(self.budget);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub params: BTreeMap<String, f64>,
    pub metrics: MetricsReport,
    pub model_size_bytes: usize,
    pub latency: Option<LatencyStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub objective: Objective,
    pub trials: Vec<Trial>,
    pub best: usize,
    /// Whether the grid was cut to the budget.
    pub truncated: bool,
}

fn cmp_params(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> Ordering {
    a.iter()
        .zip(b)
        .map(|((ka, va), (kb, vb))| ka.cmp(kb).then(va.total_cmp(vb)))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

/// Ordering under the tie rule: objective, then smaller model, then
/// lexicographic parameters.
pub fn compare_trials(objective: Objective, a: &Trial, b: &Trial) -> Ordering {
    objective
        .score(&a.metrics)
        .total_cmp(&objective.score(&b.metrics))
        .then(a.model_size_bytes.cmp(&b.model_size_bytes))
        .then_with(|| cmp_params(&a.params, &b.params))
}

impl SweepResult {
    pub fn best_trial(&self) -> &Trial {
        &self.trials[self.best]
    }

    pub fn best_score(&self) -> f64 {
        self.objective.score(&self.best_trial().metrics)
    }

    /// `base` with the winning parameters applied.
    pub fn best_config(&self, base: &PipelineConfig) -> Result<PipelineConfig> {
        let mut cfg = base.clone();
        for (k, &v) in &self.best_trial().params {
            apply_param(&mut cfg, k, v)?;
        }
        Ok(cfg)
    }

    /// `trial,<params...>,mae,mse,r2,size_bytes,latency_ms`.
    pub fn to_csv(&self) -> Result<String> {
        let names: Vec<&String> = self.trials.first().map(|t| t.params.keys().collect()).unwrap_or_default();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["trial".to_string()];
        header.extend(names.iter().map(|n| n.to_string()));
        header.extend(["mae", "mse", "r2", "size_bytes", "latency_ms"].map(String::from));
        w.write_record(&header)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for t in &self.trials {
            let mut row = vec![t.index.to_string()];
            row.extend(names.iter().map(|n| t.params[*n].to_string()));
            row.push(t.metrics.mae.to_string());
            row.push(t.metrics.mse.to_string());
            row.push(opt(t.metrics.r2));
            row.push(t.model_size_bytes.to_string());
            row.push(opt(t.latency.map(|l| l.median_ms)));
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Exhaustive grid evaluation: every trial fits on `train` and is scored on
/// `test` with the sweep's seed. Trials run concurrently; the winner depends
/// only on trial results.
pub fn sweep(
    spec: &SweepSpec,
    base: &PipelineConfig,
    subset: &FeatureSubset,
    train: &Dataset,
    test: &Dataset,
) -> Result<SweepResult> {
    spec.validate()?;
    let full: usize = spec.grid.values().map(Vec::len).product();
    let configs = spec
        .trials()
        .into_iter()
        .map(|params| {
            let mut cfg = base.clone();
            cfg.bonsai.seed = spec.seed;
            for (k, &v) in &params {
                apply_param(&mut cfg, k, v)?;
            }
            Ok((params, cfg))
        })
        .collect::<Result<Vec<_>>>()?;

    let trials = configs
        .into_par_iter()
        .enumerate()
        .map(|(index, (params, cfg))| {
            let cell = evaluate_cell(Quadrant::AA, train, test, subset, &cfg, CellModel::Bonsai, spec.timing)?;
            Ok(Trial {
                index,
                params,
                metrics: cell.metrics,
                model_size_bytes: cell.model_size_bytes,
                latency: cell.latency.map(|l| l.model),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let best = trials
        .iter()
        .min_by(|a, b| compare_trials(spec.objective, a, b))
        .map(|t| t.index)
        .expect("validated grid has at least one trial");
    Ok(SweepResult {
        objective: spec.objective,
        truncated: trials.len() < full,
        trials,
        best,
    })
}

// ---------------------------------------------------------------------------
// Iterative refinement

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub grid: BTreeMap<String, Vec<f64>>,
    pub best_params: BTreeMap<String, f64>,
    pub best_objective: f64,
    pub metrics: MetricsReport,
    pub model_size_bytes: usize,
    /// Every trial of the round.
    pub sweep: SweepResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOutcome {
    pub config: PipelineConfig,
    pub model: TrainedPipeline,
    pub history: Vec<RoundRecord>,
}

/// Distance from `center` to its nearest other grid value; 0 for a single
/// point.
fn nearest_gap(values: &[f64], center: f64) -> f64 {
    values
        .iter()
        .map(|v| (v - center).abs())
        .filter(|&d| d > 0.0)
        .min_by(f64::total_cmp)
        .unwrap_or(0.0)
}

/// Next-round candidates for one parameter: `{c - s/2, c, c + s/2}` where
/// `s` is the gap from the winner `c` to its nearest neighbour in the
/// current grid. Integer parameters move by `max(1, round(s/2))`. Values
/// outside the parameter's valid range are dropped.
pub fn narrow(name: &str, values: &[f64], center: f64, base: &PipelineConfig) -> Result<Vec<f64>> {
    let gap = nearest_gap(values, center);
    if gap == 0.0 {
        return Ok(vec![center]);
    }
    let half = match param_kind(name)? {
        ParamKind::Int => (gap / 2.0).round().max(1.0),
        ParamKind::Real => gap / 2.0,
    };
    let mut out: Vec<f64> = [center - half, center, center + half]
        .into_iter()
        .filter(|&v| v == center || apply_param(&mut base.clone(), name, v).is_ok())
        .collect();
    if name == "depth" {
        out.retain(|&v| v <= MAX_DEPTH as f64);
    }
    out.dedup();
    Ok(out)
}

/// Repeated sweeps, each centred on the previous winner with a halved step.
/// The incumbent is always part of the next grid and is kept unless a trial
/// strictly beats it, so the best objective never increases.
pub fn optimize_loop(
    initial: &PipelineConfig,
    spec: &SweepSpec,
    rounds: usize,
    subset: &FeatureSubset,
    train: &Dataset,
    test: &Dataset,
) -> Result<OptimizeOutcome> {
    if rounds == 0 {
        return Err(Error::invalid("optimize_loop needs at least one round"));
    }
    let mut spec = spec.clone();
    let mut history: Vec<RoundRecord> = Vec::with_capacity(rounds);
    let mut incumbent: Option<Trial> = None;

    for round in 1..=rounds {
        let result = sweep(&spec, initial, subset, train, test)?;
        let winner = result.best_trial().clone();
        let keep_old = incumbent
            .as_ref()
            .is_some_and(|inc| spec.objective.score(&inc.metrics) < spec.objective.score(&winner.metrics));
        if !keep_old {
            incumbent = Some(winner);
        }
        let inc = incumbent.as_ref().expect("set above");
        history.push(RoundRecord {
            round,
            grid: spec.grid.clone(),
            best_params: inc.params.clone(),
            best_objective: spec.objective.score(&inc.metrics),
            metrics: inc.metrics,
            model_size_bytes: inc.model_size_bytes,
            sweep: result,
        });

        let mut next = BTreeMap::new();
        for (name, values) in &spec.grid {
            next.insert(name.clone(), narrow(name, values, inc.params[name], initial)?);
        }
        spec.grid = next;
    }

    let inc = incumbent.expect("at least one round");
    let mut config = initial.clone();
    config.bonsai.seed = spec.seed;
    for (k, &v) in &inc.params {
        apply_param(&mut config, k, v)?;
    }
    let (model, _) = train_pipeline(train, subset, &config)?;
    Ok(OptimizeOutcome {
        config,
        model,
        history,
    })
}
