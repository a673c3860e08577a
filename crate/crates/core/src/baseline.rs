//! CART regression tree used as an in-repo comparison point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::StrategyCell;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CartNode {
    Leaf {
        value: f64,
        samples: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<CartNode>,
        right: Box<CartNode>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartModel {
    pub root: CartNode,
    pub input_dim: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

fn sse(y: &[f64], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64;
    idx.iter().map(|&i| (y[i] - mean) * (y[i] - mean)).sum()
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Exhaustive search over midpoints of consecutive distinct values. Earlier
/// features and lower thresholds win ties.
fn best_split(x: &[Vec<f64>], y: &[f64], idx: &[usize], min_leaf: usize) -> Option<BestSplit> {
    let parent = sse(y, idx);
    let mut best: Option<BestSplit> = None;
    let dims = x[idx[0]].len();
    for f in 0..dims {
        let mut order = idx.to_vec();
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));

        // Prefix sums give O(n) evaluation of every cut.
        let n = order.len();
        let total: f64 = order.iter().map(|&i| y[i]).sum();
        let total_sq: f64 = order.iter().map(|&i| y[i] * y[i]).sum();
        let (mut ls, mut lsq) = (0.0, 0.0);
        for cut in 1..n {
            let prev = order[cut - 1];
            ls += y[prev];
            lsq += y[prev] * y[prev];
            let (lo, hi) = (x[prev][f], x[order[cut]][f]);
            if lo == hi || cut < min_leaf || n - cut < min_leaf {
                continue;
            }
            let nl = cut as f64;
            let nr = (n - cut) as f64;
            let rs = total - ls;
            let rsq = total_sq - lsq;
            let child = (lsq - ls * ls / nl) + (rsq - rs * rs / nr);
            let gain = parent - child;
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(BestSplit {
                    feature: f,
                    threshold: lo + (hi - lo) / 2.0,
                    gain,
                });
            }
        }
    }
    best.filter(|b| b.gain > 1e-12 * parent.max(1.0))
}

fn grow(
    x: &[Vec<f64>],
    y: &[f64],
    idx: Vec<usize>,
    depth: usize,
    max_depth: usize,
    min_leaf: usize,
) -> CartNode {
    let leaf = |idx: &[usize]| CartNode::Leaf {
        value: idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64,
        samples: idx.len(),
    };
    if depth >= max_depth || idx.len() < 2 * min_leaf {
        return leaf(&idx);
    }
    match best_split(x, y, &idx, min_leaf) {
        None => leaf(&idx),
        Some(s) => {
            let (l, r): (Vec<usize>, Vec<usize>) =
                idx.iter().partition(|&&i| x[i][s.feature] <= s.threshold);
            CartNode::Split {
                feature: s.feature,
                threshold: s.threshold,
                left: Box::new(grow(x, y, l, depth + 1, max_depth, min_leaf)),
                right: Box::new(grow(x, y, r, depth + 1, max_depth, min_leaf)),
            }
        }
    }
}

/// Greedy variance-reduction tree. `_seed` is accepted for interface parity;
/// the search is exhaustive and deterministic.
pub fn fit_cart(
    x: &[Vec<f64>],
    y: &[f64],
    max_depth: usize,
    min_samples_leaf: usize,
    _seed: u64,
) -> Result<CartModel> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    let min_leaf = min_samples_leaf.max(1);
    if x.is_empty() || x.len() < min_leaf {
        return Err(Error::InsufficientData(format!(
            "CART needs at least {min_leaf} rows, got {}",
            x.len()
        )));
    }
    let input_dim = x[0].len();
    if input_dim == 0 || x.iter().any(|r| r.len() != input_dim) {
        return Err(Error::invalid("ragged or empty feature rows"));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in CART training data"));
    }
    Ok(CartModel {
        root: grow(x, y, (0..x.len()).collect(), 0, max_depth, min_leaf),
        input_dim,
        max_depth,
        min_samples_leaf: min_leaf,
    })
}

pub fn predict_cart(model: &CartModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.input_dim {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim,
            actual: x.len(),
        });
    }
    let mut node = &model.root;
    loop {
        match node {
            CartNode::Leaf { value, .. } => return Ok(*value),
            CartNode::Split {
                feature,
                threshold,
                left,
                right,
            } => node = if x[*feature] <= *threshold { left } else { right },
        }
    }
}

impl CartModel {
    pub fn depth(&self) -> usize {
        fn d(n: &CartNode) -> usize {
            match n {
                CartNode::Leaf { .. } => 0,
                CartNode::Split { left, right, .. } => 1 + d(left).max(d(right)),
            }
        }
        d(&self.root)
    }

    pub fn leaves(&self) -> Vec<(f64, usize)> {
        fn walk(n: &CartNode, out: &mut Vec<(f64, usize)>) {
            match n {
                CartNode::Leaf { value, samples } => out.push((*value, *samples)),
                CartNode::Split { left, right, .. } => {
                    walk(left, out);
                    walk(right, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }

    /// Compact encoding: `CART`, version byte, input dimension (u8), then
    /// nodes in pre-order. A leaf is tag 0 and an f32 value; a split is tag
    /// 1, a u16 feature index and an f32 threshold.
    pub fn to_bytes(&self) -> Vec<u8> {
        fn emit(n: &CartNode, out: &mut Vec<u8>) {
            match n {
                CartNode::Leaf { value, .. } => {
                    out.push(0);
                    out.extend_from_slice(&(*value as f32).to_le_bytes());
                }
                CartNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    out.push(1);
                    out.extend_from_slice(&(*feature as u16).to_le_bytes());
                    out.extend_from_slice(&(*threshold as f32).to_le_bytes());
                    emit(left, out);
                    emit(right, out);
                }
            }
        }
        let mut out = b"CART".to_vec();
        out.push(1);
        out.push(self.input_dim as u8);
        emit(&self.root, &mut out);
        out
    }
}

/// Bonsai-to-CART ratios for one strategy cell. A ratio is `None` when
/// either side lacks the value or the CART value is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub quadrant: String,
    pub subset: String,
    pub bonsai_r2: Option<f64>,
    pub cart_r2: Option<f64>,
    pub r2_ratio: Option<f64>,
    pub mse_ratio: Option<f64>,
    pub mae_ratio: Option<f64>,
    pub bonsai_size_bytes: usize,
    pub cart_size_bytes: usize,
    pub size_ratio: Option<f64>,
    pub model_ift_ratio: Option<f64>,
    pub pipeline_ift_ratio: Option<f64>,
}

fn ratio(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) if b != 0.0 => Some(a / b),
        _ => None,
    }
}

/// Compares two cells trained and tested on the same data and subset.
pub fn compare(bonsai_cell: &StrategyCell, cart_cell: &StrategyCell) -> Result<Comparison> {
    let same = bonsai_cell.quadrant == cart_cell.quadrant
        && bonsai_cell.train_label == cart_cell.train_label
        && bonsai_cell.test_label == cart_cell.test_label
        && bonsai_cell.subset == cart_cell.subset
        && bonsai_cell.metrics.n == cart_cell.metrics.n;
    if !same {
        return Err(Error::invalid(format!(
            "cells come from different runs: {} {} on {} vs {} {} on {}",
            bonsai_cell.quadrant,
            bonsai_cell.subset.name,
            bonsai_cell.test_label,
            cart_cell.quadrant,
            cart_cell.subset.name,
            cart_cell.test_label
        )));
    }
    let (b, c) = (bonsai_cell, cart_cell);
    let lat = |cell: &StrategyCell, pipeline: bool| {
        cell.latency
            .as_ref()
            .map(|l| if pipeline { l.pipeline.median_ms } else { l.model.median_ms })
    };
    Ok(Comparison {
        quadrant: b.quadrant.label().to_string(),
        subset: b.subset.name.clone(),
        bonsai_r2: b.metrics.r2,
        cart_r2: c.metrics.r2,
        r2_ratio: ratio(b.metrics.r2, c.metrics.r2),
        mse_ratio: ratio(Some(b.metrics.mse), Some(c.metrics.mse)),
        mae_ratio: ratio(Some(b.metrics.mae), Some(c.metrics.mae)),
        bonsai_size_bytes: b.model_size_bytes,
        cart_size_bytes: c.model_size_bytes,
        size_ratio: ratio(Some(b.model_size_bytes as f64), Some(c.model_size_bytes as f64)),
        model_ift_ratio: ratio(lat(b, false), lat(c, false)),
        pipeline_ift_ratio: ratio(lat(b, true), lat(c, true)),
    })
}

/// Pairs every bonsai cell with the CART cell of the same quadrant and
/// subset.
pub fn compare_all(bonsai: &[StrategyCell], cart: &[StrategyCell]) -> Result<Vec<Comparison>> {
    bonsai
        .iter()
        .filter_map(|b| {
            cart.iter()
                .find(|c| c.quadrant == b.quadrant && c.subset == b.subset)
                .map(|c| compare(b, c))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthesize_dataset;
    use crate::eval::{evaluate_cell, CartSettings, CellModel, Quadrant, StrategyCell};
    use crate::features::FeatureSubset;
    use crate::pipeline::PipelineConfig;
    use crate::preprocess::ALL_FEATURES;

    fn cells() -> (StrategyCell, StrategyCell) {
        let d = synthesize_dataset(200, 3).unwrap();
        let (train, test) = crate::dataset::train_test_partition(&d, 0.2, 3).unwrap();
        let subset = FeatureSubset::new("all", ALL_FEATURES.map(String::from).to_vec()).unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.bonsai.epochs = 20;
        let b = evaluate_cell(Quadrant::AA, &train, &test, &subset, &cfg, CellModel::Bonsai, None).unwrap();
        let cart = CellModel::Cart(CartSettings { max_depth: 6, min_samples_leaf: 1 });
        let c = evaluate_cell(Quadrant::AA, &train, &test, &subset, &cfg, cart, None).unwrap();
        (b, c)
    }

    #[test]
    fn compare_examples() {
        let (b, c) = cells();
        let same = compare(&b, &b).unwrap();
        assert_eq!(same.mse_ratio, Some(1.0));
        assert_eq!(same.mae_ratio, Some(1.0));
        assert_eq!(same.size_ratio, Some(1.0));
        assert_eq!(same.r2_ratio, Some(1.0));

        let cmp = compare(&b, &c).unwrap();
        // 6-byte header, 5 bytes per leaf, 7 per split, one fewer split than leaves.
        assert_eq!((c.model_size_bytes - 6 + 7) % 12, 0);
        assert!(c.model_size_bytes > 6 + 5 * 8 + 7 * 7);
        assert_eq!(cmp.size_ratio, Some(b.model_size_bytes as f64 / c.model_size_bytes as f64));
        assert!(cmp.mse_ratio.is_some() && cmp.model_ift_ratio.is_none());

        let mut other = c.clone();
        other.test_label = "elsewhere".into();
        assert!(compare(&b, &other).is_err());
        assert_eq!(compare_all(&[b], &[c]).unwrap().len(), 1);
    }

    #[test]
    fn constant_target_is_single_leaf() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let m = fit_cart(&x, &[4.0; 10], 5, 1, 0).unwrap();
        assert_eq!(m.root, CartNode::Leaf { value: 4.0, samples: 10 });
        assert_eq!(predict_cart(&m, &[123.0]).unwrap(), 4.0);
    }

    #[test]
    fn step_function_split() {
        // feature 1 carries the step at 4.5; feature 0 is noise.
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![((i * 7) % 10) as f64, i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| if i < 5 { 1.0 } else { 3.0 }).collect();
        let m = fit_cart(&x, &y, 1, 1, 0).unwrap();
        match &m.root {
            CartNode::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 1);
                assert_eq!(*threshold, 4.5);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(m, fit_cart(&x, &y, 1, 1, 0).unwrap());
    }

    #[test]
    fn hand_traced_depth_two() {
        let root = CartNode::Split {
            feature: 0,
            threshold: 0.0,
            left: Box::new(CartNode::Leaf { value: -1.0, samples: 1 }),
            right: Box::new(CartNode::Split {
                feature: 1,
                threshold: 2.0,
                left: Box::new(CartNode::Leaf { value: 5.0, samples: 1 }),
                right: Box::new(CartNode::Leaf { value: 7.0, samples: 1 }),
            }),
        };
        let m = CartModel { root, input_dim: 2, max_depth: 2, min_samples_leaf: 1 };
        assert_eq!(predict_cart(&m, &[-0.5, 9.0]).unwrap(), -1.0);
        assert_eq!(predict_cart(&m, &[0.5, 2.0]).unwrap(), 5.0);
        assert_eq!(predict_cart(&m, &[0.5, 2.5]).unwrap(), 7.0);
        assert!(predict_cart(&m, &[0.5]).is_err());
        assert_eq!(m.to_bytes().len(), 6 + 7 * 2 + 5 * 3);
    }

    #[test]
    fn respects_min_leaf_and_depth() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let y: Vec<f64> = (0..40).map(|i| ((i * i) % 11) as f64).collect();
        let m = fit_cart(&x, &y, 3, 4, 0).unwrap();
        assert!(m.depth() <= 3);
        assert!(m.leaves().iter().all(|&(_, n)| n >= 4));
        assert!(fit_cart(&[], &[], 3, 1, 0).is_err());
    }
}
