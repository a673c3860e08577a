//! Preprocessing and regressor glued into one trainable unit.

use serde::{Deserialize, Serialize};

use crate::baseline::{fit_cart, predict_cart, CartModel};
use crate::bonsai::{self, BonsaiConfig, BonsaiModel, TrainReport};
use crate::dataset::{Dataset, ProteinRecord};
use crate::error::Result;
use crate::features::{rank_features, top_n, CorrelationRanking, FeatureSubset};
use crate::preprocess::{fit_pipeline, FittedPreprocessor, PreprocessConfig, ALL_FEATURES};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub preprocess: PreprocessConfig,
    pub bonsai: BonsaiConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPipeline {
    pub preprocessor: FittedPreprocessor,
    pub model: BonsaiModel,
}

impl TrainedPipeline {
    /// Predicted ln(k_f) at the reference temperature.
    pub fn predict_record(&self, record: &ProteinRecord) -> Result<f64> {
        self.model.predict(&self.preprocessor.transform(record)?)
    }

    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<f64>> {
        data.records().iter().map(|r| self.predict_record(r)).collect()
    }

    /// Standardized targets of `data`, comparable with the predictions.
    pub fn targets(&self, data: &Dataset) -> Result<Vec<f64>> {
        self.preprocessor.targets(data)
    }
}

/// Ranks all features on the outlier-filtered training set.
pub fn rank_training_features(
    train: &Dataset,
    config: &PreprocessConfig,
) -> Result<CorrelationRanking> {
    let all = PreprocessConfig {
        features: ALL_FEATURES.map(String::from).to_vec(),
        ..config.clone()
    };
    let fitted = fit_pipeline(train, &all)?;
    let (kept, _) = fitted.filter(train)?;
    let rows = fitted.transform_all(&kept)?;
    let target = fitted.targets(&kept)?;
    rank_features(&fitted.feature_order, &rows, &target)
}

/// Top-`n` subset of the training ranking, tagged with `tag`.
pub fn select_subset(
    train: &Dataset,
    config: &PreprocessConfig,
    n: usize,
    tag: &str,
) -> Result<FeatureSubset> {
    top_n(&rank_training_features(train, config)?, n, tag)
}

/// Fits preprocessing on `train` (emitting `subset`) and trains the
/// regressor on the outlier-filtered, transformed rows.
pub fn train_pipeline(
    train: &Dataset,
    subset: &FeatureSubset,
    config: &PipelineConfig,
) -> Result<(TrainedPipeline, TrainReport)> {
    let pre = PreprocessConfig {
        features: subset.features().to_vec(),
        ..config.preprocess.clone()
    };
    let preprocessor = fit_pipeline(train, &pre)?;
    let (kept, _) = preprocessor.filter(train)?;
    let x = preprocessor.transform_all(&kept)?;
    let y = preprocessor.targets(&kept)?;
    let bonsai_cfg = BonsaiConfig {
        input_dim: subset.len(),
        ..config.bonsai.clone()
    };
    let (model, report) = bonsai::train(&bonsai_cfg, &x, &y)?;
    Ok((TrainedPipeline { preprocessor, model }, report))
}

/// Anything that maps a transformed feature vector to a prediction and has
/// a byte encoding.
pub trait Regressor: Sync {
    fn kind(&self) -> &'static str;
    fn predict_row(&self, x: &[f64]) -> Result<f64>;
    fn to_bytes(&self) -> Vec<u8>;
}

impl Regressor for BonsaiModel {
    fn kind(&self) -> &'static str {
        "bonsai"
    }

    fn predict_row(&self, x: &[f64]) -> Result<f64> {
        self.predict(x)
    }

    fn to_bytes(&self) -> Vec<u8> {
        bonsai::serialize(self)
    }
}

impl Regressor for CartModel {
    fn kind(&self) -> &'static str {
        "cart"
    }

    fn predict_row(&self, x: &[f64]) -> Result<f64> {
        predict_cart(self, x)
    }

    fn to_bytes(&self) -> Vec<u8> {
        CartModel::to_bytes(self)
    }
}

/// Trains a CART baseline on exactly the rows and features
/// [`train_pipeline`] would use.
pub fn train_cart_pipeline(
    train: &Dataset,
    subset: &FeatureSubset,
    config: &PreprocessConfig,
    max_depth: usize,
    min_samples_leaf: usize,
) -> Result<(FittedPreprocessor, CartModel)> {
    let pre = PreprocessConfig {
        features: subset.features().to_vec(),
        ..config.clone()
    };
    let preprocessor = fit_pipeline(train, &pre)?;
    let (kept, _) = preprocessor.filter(train)?;
    let x = preprocessor.transform_all(&kept)?;
    let y = preprocessor.targets(&kept)?;
    let cart = fit_cart(&x, &y, max_depth, min_samples_leaf, 0)?;
    Ok((preprocessor, cart))
}
