//! Two-dimensional loss slices around a known optimum.
//!
//! Two seeded Gaussian direction fields are rescaled channel by channel to
//! the norm of the matching channel of the optimum, then the loss is
//! evaluated on `theta* + a * delta + b * eta` over a square `(a, b)` grid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{softmax, LogitField, ProbabilityField};
use crate::losses::{value, LossKind, PairWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeConfig {
    pub loss: LossKind,
    pub seed: u64,
    /// Grid points per axis. Odd values put `(0, 0)` on the grid.
    pub resolution: usize,
    pub span: f64,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Jc,
            seed: 0,
            resolution: 21,
            span: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeMatrix {
    /// Axis coordinates, shared by `a` (rows) and `b` (columns).
    pub axis: Vec<f64>,
    /// Row-major loss values; non-finite cells are stored as NaN.
    pub values: Vec<f64>,
    /// `(row, col)` of every non-finite cell.
    pub flagged: Vec<(usize, usize)>,
}

impl LandscapeMatrix {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.axis.len() + col]
    }

    /// Position of the smallest finite value.
    pub fn argmin(&self) -> Option<(usize, usize)> {
        let n = self.axis.len();
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| (i / n, i % n))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("a\\b");
        for b in &self.axis {
            out.push_str(&format!(",{b}"));
        }
        out.push('\n');
        for (r, a) in self.axis.iter().enumerate() {
            out.push_str(&a.to_string());
            for c in 0..self.axis.len() {
                out.push_str(&format!(",{}", self.get(r, c)));
            }
            out.push('\n');
        }
        out
    }
}

/// Gaussian direction with each channel scaled to the norm of that channel
/// of `reference`.
fn direction(rng: &mut ChaCha8Rng, reference: &LogitField) -> Vec<f64> {
    let c = reference.channels();
    let mut d: Vec<f64> = (0..reference.values().len())
        .map(|_| StandardNormal.sample(rng))
        .collect();
    for l in 0..c {
        let norm_of = |v: &[f64]| v.iter().skip(l).step_by(c).map(|x| x * x).sum::<f64>().sqrt();
        let target = norm_of(reference.values());
        let current = norm_of(&d);
        let scale = if current > 0.0 { target / current } else { 0.0 };
        for x in d.iter_mut().skip(l).step_by(c) {
            *x *= scale;
        }
    }
    d
}

pub fn landscape_scan(
    y: &ProbabilityField,
    theta: &LogitField,
    w: &PairWeights,
    cfg: &LandscapeConfig,
) -> Result<LandscapeMatrix> {
    if cfg.resolution < 2 {
        return Err(Error::InvalidConfig("resolution must be >= 2".into()));
    }
    if !(cfg.span.is_finite() && cfg.span > 0.0) {
        return Err(Error::InvalidConfig("span must be positive".into()));
    }
    if y.shape() != theta.shape() || y.channels() != theta.channels() {
        return Err(Error::ShapeMismatch("target and optimum differ in shape".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let delta = direction(&mut rng, theta);
    let eta = direction(&mut rng, theta);
    let n = cfg.resolution;
    let axis: Vec<f64> = (0..n)
        .map(|i| -cfg.span + 2.0 * cfg.span * i as f64 / (n - 1) as f64)
        .collect();

    let values: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|cell| {
            let (a, b) = (axis[cell / n], axis[cell % n]);
            let shifted: Vec<f64> = theta
                .values()
                .iter()
                .zip(&delta)
                .zip(&eta)
                .map(|((t, d), e)| t + a * d + b * e)
                .collect();
            let logits = LogitField::new(theta.shape().clone(), theta.channels(), shifted).ok()?;
            let z = softmax(&logits).ok()?;
            let v = value(cfg.loss, y, &z, w).ok()?.total;
            v.is_finite().then_some(v)
        })
        .map(|v| v.unwrap_or(f64::NAN))
        .collect();
    let flagged = values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_nan())
        .map(|(i, _)| (i / n, i % n))
        .collect();
    Ok(LandscapeMatrix {
        axis,
        values,
        flagged,
    })
}
