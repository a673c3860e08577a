//! Per-sample inference timing for the regressor alone and for the whole
//! pipeline, with a per-stage breakdown.

use std::hint::black_box;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::ProteinRecord;
use crate::error::{Error, Result};
use crate::pipeline::Regressor;
use crate::preprocess::{quantile_sorted, FittedPreprocessor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub median_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
    pub samples: usize,
}

impl LatencyStats {
    /// Summary of per-sample durations in milliseconds.
    pub fn from_ms(durations: &[f64]) -> Result<Self> {
        if durations.is_empty() {
            return Err(Error::InsufficientData("no latency samples".into()));
        }
        let mut sorted = durations.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(LatencyStats {
            median_ms: quantile_sorted(&sorted, 0.5),
            p95_ms: quantile_sorted(&sorted, 0.95),
            mean_ms: sorted.iter().sum::<f64>() / sorted.len() as f64,
            samples: sorted.len(),
        })
    }
}

/// Share of pipeline time spent in each stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageBreakdown {
    /// Rate standardization and z-scoring.
    pub normalization: f64,
    /// Categorical encoding and vector assembly.
    pub feature_extraction: f64,
    pub regressor: f64,
    /// Output record construction and running error tracking.
    pub post_process: f64,
}

impl StageBreakdown {
    pub fn total(&self) -> f64 {
        self.normalization + self.feature_extraction + self.regressor + self.post_process
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub model: LatencyStats,
    pub pipeline: LatencyStats,
    pub stages: StageBreakdown,
    pub warmup: usize,
    pub reps: usize,
}

/// Output of the post-processing stage for one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub psn: String,
    pub ln_kf_pred: f64,
}

/// Running absolute error, updated during post-processing when a target is
/// available.
#[derive(Debug, Default, Clone, Copy)]
pub struct RunningError {
    pub abs_sum: f64,
    pub n: usize,
}

pub fn post_process(
    record: &ProteinRecord,
    fitted: &FittedPreprocessor,
    prediction: f64,
    tracker: &mut RunningError,
) -> Result<Prediction> {
    if let Some(y) = fitted.standardized_target(record)? {
        tracker.abs_sum += (y - prediction).abs();
        tracker.n += 1;
    }
    Ok(Prediction {
        psn: record.psn.clone(),
        ln_kf_pred: prediction,
    })
}

fn ms(nanos: u128) -> f64 {
    nanos as f64 / 1e6
}

/// Times every sample `reps` times after `warmup` untimed passes.
///
/// Model-only latency covers `predict` on pre-transformed vectors; pipeline
/// latency covers normalization, feature extraction, prediction and
/// post-processing of the raw record.
pub fn measure_latency(
    model: &dyn Regressor,
    fitted: &FittedPreprocessor,
    samples: &[ProteinRecord],
    warmup: usize,
    reps: usize,
) -> Result<LatencyReport> {
    if reps == 0 {
        return Err(Error::invalid("latency measurement needs reps >= 1"));
    }
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples to time".into()));
    }
    let vectors = samples
        .iter()
        .map(|r| fitted.transform(r))
        .collect::<Result<Vec<_>>>()?;
    let mut tracker = RunningError::default();

    for _ in 0..warmup {
        for (r, x) in samples.iter().zip(&vectors) {
            black_box(model.predict_row(black_box(x))?);
            let p = model.predict_row(&fitted.transform(r)?)?;
            black_box(post_process(r, fitted, p, &mut tracker)?);
        }
    }

    let mut model_ms = Vec::with_capacity(samples.len() * reps);
    for _ in 0..reps {
        for x in &vectors {
            let t = Instant::now();
            black_box(model.predict_row(black_box(x))?);
            model_ms.push(ms(t.elapsed().as_nanos()));
        }
    }

    let mut pipeline_ms = Vec::with_capacity(samples.len() * reps);
    let mut stage_ns = [0u128; 4];
    for _ in 0..reps {
        for r in samples {
            let t0 = Instant::now();
            let numeric = fitted.normalize_numeric(black_box(r))?;
            let t1 = Instant::now();
            let x = fitted.assemble(r, &numeric);
            let t2 = Instant::now();
            let p = model.predict_row(&x)?;
            let t3 = Instant::now();
            black_box(post_process(r, fitted, p, &mut tracker)?);
            let t4 = Instant::now();
            let segs = [t1 - t0, t2 - t1, t3 - t2, t4 - t3];
            for (acc, s) in stage_ns.iter_mut().zip(segs) {
                *acc += s.as_nanos();
            }
            pipeline_ms.push(ms((t4 - t0).as_nanos()));
        }
    }

    let total = stage_ns.iter().sum::<u128>().max(1) as f64;
    let frac = |i: usize| stage_ns[i] as f64 / total;
    Ok(LatencyReport {
        model: LatencyStats::from_ms(&model_ms)?,
        pipeline: LatencyStats::from_ms(&pipeline_ms)?,
        stages: StageBreakdown {
            normalization: frac(0),
            feature_extraction: frac(1),
            regressor: frac(2),
            post_process: frac(3),
        },
        warmup,
        reps,
    })
}
