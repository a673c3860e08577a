//! Shallow tree regressor over a sparse low-dimensional projection.
//!
//! An input `x` (length `D`) is extended with a constant 1 and projected to
//! `z = Z [x; 1]` (length `d`). Every node `k` owns a predictor `w_k`, a gate
//! `v_k`, and internal nodes a branching vector `theta_k`. A sample follows a
//! single root-to-leaf path, going left when `theta_k . z <= 0`, and the
//! prediction sums the node outputs along it:
//!
//! ```text
//! y = offset + sum_{k in path} (w_k . z) * tanh(sigma * (v_k . z))
//! ```
//!
//! All parameters are trained jointly and kept sparse by iterative hard
//! thresholding; see [`train`]. [`format`] holds the compact wire format.

pub mod format;
pub mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::{deserialize, model_size, serialize};
pub use train::{fit, gradient, hard_threshold, train, Gradient, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BonsaiConfig {
    pub depth: usize,
    pub proj_dim: usize,
    pub input_dim: usize,
    pub sigma: f64,
    pub sparsity_z: f64,
    pub sparsity_nodes: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub l2: f64,
}

impl Default for BonsaiConfig {
    fn default() -> Self {
        BonsaiConfig {
            depth: 3,
            proj_dim: 10,
            input_dim: 9,
            sigma: 1.0,
            sparsity_z: 0.3,
            sparsity_nodes: 0.5,
            learning_rate: 0.05,
            epochs: 200,
            batch_size: 16,
            seed: 0,
            l2: 1e-4,
        }
    }
}

pub const MAX_DEPTH: usize = 8;

impl BonsaiConfig {
    pub fn node_count(&self) -> usize {
        (1 << (self.depth + 1)) - 1
    }

    pub fn internal_count(&self) -> usize {
        (1 << self.depth) - 1
    }

    /// Columns of the projection: the inputs plus the constant.
    pub fn projection_cols(&self) -> usize {
        self.input_dim + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth > MAX_DEPTH {
            return Err(Error::invalid(format!("depth {} exceeds {MAX_DEPTH}", self.depth)));
        }
        if self.proj_dim == 0 || self.proj_dim > 255 {
            return Err(Error::invalid(format!("proj_dim {} outside 1..=255", self.proj_dim)));
        }
        if self.input_dim == 0 || self.input_dim > 254 {
            return Err(Error::invalid(format!("input_dim {} outside 1..=254", self.input_dim)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("sigma must be positive"));
        }
        for (name, b) in [("sparsity_z", self.sparsity_z), ("sparsity_nodes", self.sparsity_nodes)] {
            if !(b > 0.0 && b <= 1.0) {
                return Err(Error::invalid(format!("{name} = {b} outside (0, 1]")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be >= 1"));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::invalid("l2 must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BonsaiModel {
    pub config: BonsaiConfig,
    /// Row-major `proj_dim x (input_dim + 1)`; the last column multiplies
    /// the constant input.
    pub projection: Vec<f64>,
    /// Row-major `node_count x proj_dim`.
    pub w: Vec<f64>,
    /// Row-major `node_count x proj_dim`.
    pub v: Vec<f64>,
    /// Row-major `internal_count x proj_dim`.
    pub theta: Vec<f64>,
    /// Constant added to every prediction.
    pub offset: f64,
}

pub(crate) fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Seeded model with parameters uniform in `[-1, 1] / sqrt(d)`.
pub fn init_model(config: &BonsaiConfig) -> Result<BonsaiModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let scale = 1.0 / (config.proj_dim as f64).sqrt();
    let mut draw = |len: usize| -> Vec<f64> {
        (0..len)
            .map(|_| round_f32(rng.gen_range(-1.0..=1.0) * scale))
            .collect()
    };
    let d = config.proj_dim;
    let projection = draw(d * config.projection_cols());
    let w = draw(config.node_count() * d);
    let v = draw(config.node_count() * d);
    let theta = draw(config.internal_count() * d);
    let mut config = config.clone();
    config.sigma = round_f32(config.sigma);
    Ok(BonsaiModel {
        config,
        projection,
        w,
        v,
        theta,
        offset: 0.0,
    })
}

impl BonsaiModel {
    pub fn node_count(&self) -> usize {
        self.config.node_count()
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        node >= self.config.internal_count()
    }

    pub fn node_w(&self, node: usize) -> &[f64] {
        let d = self.config.proj_dim;
        &self.w[node * d..(node + 1) * d]
    }

    pub fn node_v(&self, node: usize) -> &[f64] {
        let d = self.config.proj_dim;
        &self.v[node * d..(node + 1) * d]
    }

    pub fn node_theta(&self, node: usize) -> &[f64] {
        let d = self.config.proj_dim;
        &self.theta[node * d..(node + 1) * d]
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// `z = Z [x; 1]`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let cols = self.config.projection_cols();
        Ok(self
            .projection
            .chunks_exact(cols)
            .map(|row| dot(&row[..cols - 1], x) + row[cols - 1])
            .collect())
    }

    /// Nodes visited from the root to a leaf for projected input `z`.
    pub fn path(&self, z: &[f64]) -> Vec<usize> {
        let mut path = Vec::with_capacity(self.config.depth + 1);
        let mut k = 0;
        loop {
            path.push(k);
            if self.is_leaf(k) {
                return path;
            }
            k = if dot(self.node_theta(k), z) <= 0.0 {
                2 * k + 1
            } else {
                2 * k + 2
            };
        }
    }

    pub(crate) fn node_output(&self, node: usize, z: &[f64]) -> f64 {
        dot(self.node_w(node), z) * (self.config.sigma * dot(self.node_v(node), z)).tanh()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let z = self.project(x)?;
        Ok(self.predict_projected(&z))
    }

    pub(crate) fn predict_projected(&self, z: &[f64]) -> f64 {
        self.offset
            + self
                .path(z)
                .into_iter()
                .map(|k| self.node_output(k, z))
                .sum::<f64>()
    }

    pub fn predict_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter().map(|x| self.predict(x)).collect()
    }

    /// Nonzero counts of (projection, w, v, theta).
    pub fn nonzeros(&self) -> (usize, usize, usize, usize) {
        let nz = |v: &[f64]| v.iter().filter(|&&p| p != 0.0).count();
        (nz(&self.projection), nz(&self.w), nz(&self.v), nz(&self.theta))
    }

    pub(crate) fn round_to_wire(&mut self) {
        for p in self
            .projection
            .iter_mut()
            .chain(&mut self.w)
            .chain(&mut self.v)
            .chain(&mut self.theta)
        {
            *p = round_f32(*p);
        }
        self.offset = round_f32(self.offset);
        self.config.sigma = round_f32(self.config.sigma);
    }
}
