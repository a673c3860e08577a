//! Joint mini-batch training with iterative hard thresholding.
//!
//! The objective is
//!
//! ```text
//! L = 1/(2n) sum_i (y_hat_i - y_i)^2 + l2/2 * (|Z|^2 + |W|^2 + |V|^2 + |Theta|^2)
//! ```
//!
//! Routing is held fixed inside a gradient step: each sample's path is
//! computed with the current parameters and treated as a constant, so
//! `theta` only receives the L2 term. Steps are plain gradient descent on
//! the batch gradient, with the gradient norm clipped to [`GRADIENT_CLIP`].
//! Every epoch ends by projecting each parameter group onto its sparsity
//! budget.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{dot, init_model, BonsaiConfig, BonsaiModel};
use crate::error::{Error, Result};

/// Mini-batch gradients are rescaled to at most this Euclidean norm.
pub const GRADIENT_CLIP: f64 = 5.0;

/// Gradient of the objective, laid out like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub projection: Vec<f64>,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Training MSE after each epoch.
    pub epoch_loss: Vec<f64>,
    pub nnz_projection: usize,
    pub nnz_w: usize,
    pub nnz_v: usize,
    pub nnz_theta: usize,
    pub seed: u64,
    #[serde(skip)]
    pub elapsed_secs: f64,
}

/// Number of entries a budget keeps out of `len`.
pub fn budget_count(budget: f64, len: usize) -> usize {
    // Guard against 0.3 * 70 = 21.000000000000004.
    ((budget * len as f64 - 1e-9).ceil().max(0.0) as usize).min(len)
}

/// Keeps the `ceil(budget * len)` largest-magnitude entries and zeroes the
/// rest. Equal magnitudes favour the lower index.
pub fn hard_threshold(values: &mut [f64], budget: f64) {
    let keep = budget_count(budget, values.len());
    if keep >= values.len() {
        return;
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .abs()
            .total_cmp(&values[a].abs())
            .then(a.cmp(&b))
    });
    for &i in &order[keep..] {
        values[i] = 0.0;
    }
}

fn check_data(model: &BonsaiModel, x: &[Vec<f64>], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::InsufficientData("no training rows".into()));
    }
    for row in x {
        if row.len() != model.config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: model.config.input_dim,
                actual: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite value in training inputs"));
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in training targets"));
    }
    Ok(())
}

/// Objective value on a batch, with routing from the current parameters.
pub fn objective(model: &BonsaiModel, x: &[Vec<f64>], y: &[f64]) -> Result<f64> {
    check_data(model, x, y)?;
    let mut sse = 0.0;
    for (row, &target) in x.iter().zip(y) {
        let r = model.predict(row)? - target;
        sse += r * r;
    }
    let sq = |v: &[f64]| v.iter().map(|p| p * p).sum::<f64>();
    let reg = sq(&model.projection) + sq(&model.w) + sq(&model.v) + sq(&model.theta);
    Ok(sse / (2.0 * x.len() as f64) + 0.5 * model.config.l2 * reg)
}

/// Analytic gradient of [`objective`] with every sample's path frozen.
pub fn gradient(model: &BonsaiModel, x: &[Vec<f64>], y: &[f64]) -> Result<Gradient> {
    check_data(model, x, y)?;
    let cfg = &model.config;
    let d = cfg.proj_dim;
    let cols = cfg.projection_cols();
    let mut g = Gradient {
        projection: vec![0.0; model.projection.len()],
        w: vec![0.0; model.w.len()],
        v: vec![0.0; model.v.len()],
        theta: vec![0.0; model.theta.len()],
    };
    let mut dz = vec![0.0; d];

    for (row, &target) in x.iter().zip(y) {
        let z = model.project(row)?;
        let path = model.path(&z);
        let outputs: Vec<(f64, f64)> = path
            .iter()
            .map(|&k| {
                let g = dot(model.node_w(k), &z);
                let t = (cfg.sigma * dot(model.node_v(k), &z)).tanh();
                (g, t)
            })
            .collect();
        let r = model.offset + outputs.iter().map(|(g, t)| g * t).sum::<f64>() - target;

        dz.iter_mut().for_each(|e| *e = 0.0);
        for (&k, &(gk, tk)) in path.iter().zip(&outputs) {
            let gate = r * gk * cfg.sigma * (1.0 - tk * tk);
            let wk = model.node_w(k);
            let vk = model.node_v(k);
            for j in 0..d {
                g.w[k * d + j] += r * tk * z[j];
                g.v[k * d + j] += gate * z[j];
                dz[j] += r * tk * wk[j] + gate * vk[j];
            }
        }
        for i in 0..d {
            let grow = &mut g.projection[i * cols..(i + 1) * cols];
            for (c, &xc) in row.iter().enumerate() {
                grow[c] += dz[i] * xc;
            }
            grow[cols - 1] += dz[i];
        }
    }

    let n = x.len() as f64;
    let l2 = cfg.l2;
    let finish = |grad: &mut [f64], params: &[f64]| {
        for (gi, p) in grad.iter_mut().zip(params) {
            *gi = *gi / n + l2 * p;
        }
    };
    finish(&mut g.projection, &model.projection);
    finish(&mut g.w, &model.w);
    finish(&mut g.v, &model.v);
    finish(&mut g.theta, &model.theta);
    Ok(g)
}

fn step(params: &mut [f64], grad: &[f64], lr: f64) {
    for (p, g) in params.iter_mut().zip(grad) {
        *p -= lr * g;
    }
}

fn training_mse(model: &BonsaiModel, x: &[Vec<f64>], y: &[f64]) -> Result<f64> {
    let mut sse = 0.0;
    for (row, &t) in x.iter().zip(y) {
        let r = model.predict(row)? - t;
        sse += r * r;
    }
    Ok(sse / x.len() as f64)
}

/// Trains `model` on `(x, y)`.
///
/// The prediction offset is set to the target mean before the first step.
/// Batches are drawn from a per-epoch shuffle seeded by `config.seed`; a
/// training set smaller than `batch_size` is used as a single batch. The
/// returned parameters are rounded to single precision so the serialized
/// model predicts identically.
pub fn fit(model: &BonsaiModel, x: &[Vec<f64>], y: &[f64]) -> Result<(BonsaiModel, TrainReport)> {
    check_data(model, x, y)?;
    model.config.validate()?;
    let start = Instant::now();
    let cfg = model.config.clone();
    let mut m = model.clone();
    m.offset = y.iter().sum::<f64>() / y.len() as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ba5e);
    let mut order: Vec<usize> = (0..x.len()).collect();
    let batch = cfg.batch_size.min(x.len());
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut bx: Vec<Vec<f64>> = Vec::with_capacity(batch);
    let mut by: Vec<f64> = Vec::with_capacity(batch);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            bx.clear();
            by.clear();
            for &i in chunk {
                bx.push(x[i].clone());
                by.push(y[i]);
            }
            let mut g = gradient(&m, &bx, &by)?;
            let norm = [&g.projection, &g.w, &g.v, &g.theta]
                .iter()
                .flat_map(|v| v.iter())
                .map(|p| p * p)
                .sum::<f64>()
                .sqrt();
            if norm > GRADIENT_CLIP {
                let s = GRADIENT_CLIP / norm;
                for p in g.projection.iter_mut().chain(&mut g.w).chain(&mut g.v).chain(&mut g.theta) {
                    *p *= s;
                }
            }
            step(&mut m.projection, &g.projection, cfg.learning_rate);
            step(&mut m.w, &g.w, cfg.learning_rate);
            step(&mut m.v, &g.v, cfg.learning_rate);
            step(&mut m.theta, &g.theta, cfg.learning_rate);
        }
        hard_threshold(&mut m.projection, cfg.sparsity_z);
        hard_threshold(&mut m.w, cfg.sparsity_nodes);
        hard_threshold(&mut m.v, cfg.sparsity_nodes);
        hard_threshold(&mut m.theta, cfg.sparsity_nodes);

        let loss = training_mse(&m, x, y)?;
        if !loss.is_finite() {
            return Err(Error::invalid(
                "training diverged; lower the learning rate",
            ));
        }
        epoch_loss.push(loss);
    }

    m.round_to_wire();
    let (nnz_projection, nnz_w, nnz_v, nnz_theta) = m.nonzeros();
    Ok((
        m,
        TrainReport {
            epoch_loss,
            nnz_projection,
            nnz_w,
            nnz_v,
            nnz_theta,
            seed: cfg.seed,
            elapsed_secs: start.elapsed().as_secs_f64(),
        },
    ))
}

/// [`init_model`] followed by [`fit`].
pub fn train(config: &BonsaiConfig, x: &[Vec<f64>], y: &[f64]) -> Result<(BonsaiModel, TrainReport)> {
    fit(&init_model(config)?, x, y)
}
