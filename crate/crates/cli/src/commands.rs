use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use foldkin::baseline::{compare_all, Comparison};
use foldkin::bonsai::{self, BonsaiModel, TrainReport};
use foldkin::dataset::{
    parse_records, serialize_records, split_ab, split_random_halves, synthesize_dataset,
    train_test_partition, Dataset,
};
use foldkin::eval::{measure_latency, run_strategy, LatencyReport, MetricsReport, StrategyConfig};
use foldkin::features::{top_n, CorrelationRanking, FeatureSubset};
use foldkin::feedback::{analyze, optimize_loop, PerformanceSummary, RoundRecord};
use foldkin::pipeline::{rank_training_features, train_pipeline};
use foldkin::preprocess::FittedPreprocessor;

use crate::config::{RunConfig, SplitRule};
use crate::error::CliError;
use crate::output::{emit, Artifacts};
use crate::Format;

pub const MODEL_FILE: &str = "model.bnsi";
pub const PREPROCESSOR_FILE: &str = "preprocessor.json";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";

fn json<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text.into_bytes())
}

pub fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let records = parse_records(&text, true)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok(Dataset::new("input", records)?)
}

fn training_subset(train: &Dataset, cfg: &RunConfig) -> Result<(CorrelationRanking, FeatureSubset), CliError> {
    let ranking = rank_training_features(train, &cfg.preprocess)?;
    let subset = top_n(&ranking, cfg.train_subset, "train")?;
    Ok((ranking, subset))
}

#[derive(Serialize)]
struct RecordCounts {
    total: usize,
    train: usize,
    test: usize,
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    seed: u64,
    records: RecordCounts,
    ranking: &'a CorrelationRanking,
    subset: &'a FeatureSubset,
    model_size_bytes: usize,
    training: &'a TrainReport,
    test_metrics: MetricsReport,
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let seed = cfg.seed()?;
    let data = read_dataset(cfg.input()?)?;
    let out = cfg.out()?;
    let (train, test) = train_test_partition(&data, cfg.test_fraction, seed)?;
    let (ranking, subset) = training_subset(&train, cfg)?;
    let (pipe, report) = train_pipeline(&train, &subset, &cfg.pipeline()?)?;
    let test_metrics = MetricsReport::compute(&pipe.targets(&test)?, &pipe.predict_dataset(&test)?)?;
    let model_bytes = bonsai::serialize(&pipe.model);

    let summary = TrainSummary {
        seed,
        records: RecordCounts {
            total: data.len(),
            train: train.len(),
            test: test.len(),
        },
        ranking: &ranking,
        subset: &subset,
        model_size_bytes: model_bytes.len(),
        training: &report,
        test_metrics,
    };
    let mut files = Artifacts::default();
    files.add(MODEL_FILE, model_bytes);
    files.add(PREPROCESSOR_FILE, format!("{}\n", pipe.preprocessor.to_json()?));
    files.add(TRAIN_REPORT_FILE, json(&summary)?);
    files.commit(out)?;
    Ok(())
}

#[derive(Serialize)]
struct EvaluationReport<'a> {
    seed: u64,
    warnings: &'a [String],
    ranking_a: Option<&'a CorrelationRanking>,
    ranking_b: Option<&'a CorrelationRanking>,
    best_a: Option<&'a FeatureSubset>,
    best_b: Option<&'a FeatureSubset>,
    summary: PerformanceSummary,
    cells: &'a [foldkin::eval::StrategyCell],
    baseline_cells: &'a [foldkin::eval::StrategyCell],
    comparisons: Vec<Comparison>,
}

pub fn evaluate(cfg: &RunConfig, format: Format) -> Result<(), CliError> {
    let seed = cfg.seed()?;
    let data = read_dataset(cfg.input()?)?;
    let out = cfg.out()?;
    if cfg.subsets.is_empty() {
        return Err(CliError::Validation("no subsets".into()));
    }
    let split = match cfg.split {
        SplitRule::FoldType => split_ab(&data),
        SplitRule::Random => split_random_halves(&data, seed),
    };
    let strategy = StrategyConfig {
        pipeline: cfg.pipeline()?,
        subset_sizes: cfg.subsets.clone(),
        test_fraction: cfg.test_fraction,
        validation_fraction: cfg.validation_fraction,
        seed,
        timing: cfg.timing,
        cart: cfg.cart,
    };
    let run = run_strategy(&split, &strategy)?;
    for w in &run.warnings {
        eprintln!("warning: {w}");
    }
    if run.cells.is_empty() {
        return Err(CliError::Validation("no quadrant could be evaluated".into()));
    }

    let report = EvaluationReport {
        seed,
        warnings: &run.warnings,
        ranking_a: run.ranking_a.as_ref(),
        ranking_b: run.ranking_b.as_ref(),
        best_a: run.best_a.as_ref(),
        best_b: run.best_b.as_ref(),
        summary: analyze(&run.cells)?,
        cells: &run.cells,
        baseline_cells: &run.baseline_cells,
        comparisons: compare_all(&run.cells, &run.baseline_cells)?,
    };
    let mut files = Artifacts::default();
    match format {
        Format::Csv => files.add("results.csv", run.to_csv()?),
        Format::Json => files.add("results.json", json(&run.rows())?),
    }
    files.add("report.json", json(&report)?);
    files.commit(out)?;
    Ok(())
}

/// Model and preprocessor from explicit paths or an artifact directory.
pub fn load_artifacts(
    model: Option<&Path>,
    preprocessor: Option<&Path>,
    dir: Option<&Path>,
) -> Result<(BonsaiModel, FittedPreprocessor), CliError> {
    let resolve = |given: Option<&Path>, name: &str| -> Result<PathBuf, CliError> {
        given
            .map(Path::to_path_buf)
            .or_else(|| dir.map(|d| d.join(name)))
            .ok_or_else(|| CliError::Validation(format!("no {name} given (--model/--preprocessor or --artifacts)")))
    };
    let model_path = resolve(model, MODEL_FILE)?;
    let pre_path = resolve(preprocessor, PREPROCESSOR_FILE)?;
    let bytes = fs::read(&model_path).map_err(|e| CliError::io(&model_path, e))?;
    let model = bonsai::deserialize(&bytes)
        .map_err(|e| CliError::Validation(format!("{}: {e}", model_path.display())))?;
    let text = fs::read_to_string(&pre_path).map_err(|e| CliError::io(&pre_path, e))?;
    let fitted = FittedPreprocessor::from_json(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", pre_path.display())))?;
    if model.config.input_dim != fitted.feature_order.len() {
        return Err(CliError::Validation(format!(
            "model expects {} features but the preprocessor emits {}",
            model.config.input_dim,
            fitted.feature_order.len()
        )));
    }
    Ok((model, fitted))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct PredictionRow {
    psn: String,
    ln_kf_pred: f64,
}

pub fn predict(
    cfg: &RunConfig,
    format: Format,
    model: Option<&Path>,
    preprocessor: Option<&Path>,
    artifacts: Option<&Path>,
) -> Result<(), CliError> {
    let (model, fitted) = load_artifacts(model, preprocessor, artifacts)?;
    let data = read_dataset(cfg.input()?)?;
    let rows = data
        .records()
        .iter()
        .map(|r| {
            Ok(PredictionRow {
                psn: r.psn.clone(),
                ln_kf_pred: model.predict(&fitted.transform(r)?)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let bytes = match format {
        Format::Json => json(&rows)?,
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in &rows {
                w.serialize(r).map_err(|e| CliError::Internal(e.to_string()))?;
            }
            if rows.is_empty() {
                w.write_record(["psn", "ln_kf_pred"]).map_err(|e| CliError::Internal(e.to_string()))?;
            }
            w.into_inner().map_err(|e| CliError::Internal(e.to_string()))?
        }
    };
    emit(cfg.out.as_deref(), &bytes)
}

#[derive(Serialize)]
struct SweepReport<'a> {
    seed: u64,
    subset: &'a FeatureSubset,
    history: &'a [RoundRecord],
    test_metrics: MetricsReport,
}

pub fn sweep(cfg: &RunConfig, format: Format) -> Result<(), CliError> {
    let seed = cfg.seed()?;
    let mut spec = cfg
        .sweep
        .clone()
        .ok_or_else(|| CliError::Validation("the config has no `sweep` section".into()))?;
    spec.seed = seed;
    let data = read_dataset(cfg.input()?)?;
    let out = cfg.out()?;
    let (train, test) = train_test_partition(&data, cfg.test_fraction, seed)?;
    let (fit, val) = train_test_partition(&train, cfg.validation_fraction, seed)?;
    let (_, subset) = training_subset(&fit, cfg)?;

    let outcome = optimize_loop(&cfg.pipeline()?, &spec, cfg.rounds.max(1), &subset, &fit, &val)?;
    let last = &outcome.history.last().expect("at least one round").sweep;
    let pipe = &outcome.model;
    let test_metrics = MetricsReport::compute(&pipe.targets(&test)?, &pipe.predict_dataset(&test)?)?;

    let best = RunConfig {
        preprocess: outcome.config.preprocess.clone(),
        bonsai: outcome.config.bonsai.clone(),
        sweep: None,
        seed: Some(seed),
        input: None,
        out: None,
        ..cfg.clone()
    };
    let report = SweepReport {
        seed,
        subset: &subset,
        history: &outcome.history,
        test_metrics,
    };
    let mut files = Artifacts::default();
    match format {
        Format::Csv => files.add("sweep.csv", last.to_csv()?),
        Format::Json => files.add("sweep.json", json(last)?),
    }
    files.add("best_config.json", json(&best)?);
    files.add("sweep_report.json", json(&report)?);
    files.commit(out)?;
    Ok(())
}

#[derive(Serialize)]
struct BenchmarkReport {
    samples: usize,
    model_size_bytes: usize,
    #[serde(flatten)]
    latency: LatencyReport,
}

pub fn benchmark(
    cfg: &RunConfig,
    model: Option<&Path>,
    preprocessor: Option<&Path>,
    artifacts: Option<&Path>,
) -> Result<(), CliError> {
    let seed = cfg.seed()?;
    let data = read_dataset(cfg.input()?)?;
    let (train, test) = train_test_partition(&data, cfg.test_fraction, seed)?;
    let (model, fitted) = if model.is_some() || preprocessor.is_some() || artifacts.is_some() {
        load_artifacts(model, preprocessor, artifacts)?
    } else {
        let (_, subset) = training_subset(&train, cfg)?;
        let (pipe, _) = train_pipeline(&train, &subset, &cfg.pipeline()?)?;
        (pipe.model, pipe.preprocessor)
    };
    let t = cfg.benchmark;
    let latency = measure_latency(&model, &fitted, test.records(), t.warmup, t.reps)?;
    let report = BenchmarkReport {
        samples: test.len(),
        model_size_bytes: bonsai::model_size(&model),
        latency,
    };
    let bytes = json(&report)?;
    match cfg.out.as_deref() {
        None => emit(None, &bytes),
        Some(dir) => {
            let mut files = Artifacts::default();
            files.add("latency.json", bytes);
            files.commit(dir).map(|_| ())
        }
    }
}

pub fn synth(cfg: &RunConfig, format: Format) -> Result<(), CliError> {
    let data = synthesize_dataset(cfg.synth_records, cfg.seed()?)?;
    let bytes = match format {
        Format::Csv => serialize_records(data.records())?.into_bytes(),
        Format::Json => json(&data.records())?,
    };
    emit(cfg.out.as_deref(), &bytes)
}
