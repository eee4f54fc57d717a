//! Central finite-difference checks of the analytic loss gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{one_hot, GridShape, LogitField, ProbabilityField, SemanticMap};
use crate::losses::{evaluate_logits, value, LossKind, PairWeights};
use crate::reduce;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Magnitude below which single entries are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-8;

/// Seeded one-hot target with uniform classes and standard normal logits.
pub fn random_problem(
    seed: u64,
    dims: &[usize],
    channels: usize,
) -> Result<(ProbabilityField, LogitField)> {
    let shape = GridShape::new(dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes: Vec<u8> = (0..shape.len())
        .map(|_| rng.random_range(0..channels) as u8)
        .collect();
    let y = one_hot(&SemanticMap::new(shape.clone(), classes)?, channels)?;
    let logits = (0..shape.len() * channels)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Ok((y, LogitField::new(shape, channels, logits)?))
}

/// Agreement between an analytic gradient `a` and its finite-difference
/// estimate `n`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GradCheck {
    /// `|a - n| / max(|a|, |n|)` over whole gradient vectors.
    pub max_rel_err: f64,
    /// Largest per-entry `|a_i - n_i| / max(|a_i|, |n_i|, REL_FLOOR)`.
    pub max_entry_rel_err: f64,
    pub max_abs_err: f64,
}

impl GradCheck {
    fn merge(self, other: GradCheck) -> GradCheck {
        GradCheck {
            max_rel_err: self.max_rel_err.max(other.max_rel_err),
            max_entry_rel_err: self.max_entry_rel_err.max(other.max_entry_rel_err),
            max_abs_err: self.max_abs_err.max(other.max_abs_err),
        }
    }
}

/// Compares the analytic gradient of `kind` at `logits` against central
/// differences with the given step.
pub fn check_gradient(
    kind: LossKind,
    y: &ProbabilityField,
    logits: &LogitField,
    w: &PairWeights,
    step: f64,
) -> Result<GradCheck> {
    if !(step > 0.0) {
        return Err(Error::InvalidConfig("finite-difference step must be positive".into()));
    }
    let analytic = evaluate_logits(kind, y, logits, w)?
        .gradient
        .expect("evaluate returns a gradient");
    let loss_at =
        |theta: &LogitField| -> Result<f64> { Ok(value(kind, y, &theta.softmax()?, w)?.total) };

    let mut probe = logits.clone();
    let mut numeric = Vec::with_capacity(analytic.values().len());
    for i in 0..analytic.values().len() {
        let x = logits.values()[i];
        probe.values_mut()[i] = x + step;
        let up = loss_at(&probe)?;
        probe.values_mut()[i] = x - step;
        let down = loss_at(&probe)?;
        probe.values_mut()[i] = x;
        numeric.push((up - down) / (2.0 * step));
    }

    let mut out = GradCheck::default();
    for (&a, &n) in analytic.values().iter().zip(&numeric) {
        let abs = (a - n).abs();
        out.max_abs_err = out.max_abs_err.max(abs);
        out.max_entry_rel_err = out
            .max_entry_rel_err
            .max(abs / a.abs().max(n.abs()).max(REL_FLOOR));
    }
    let diff: Vec<f64> = analytic.values().iter().zip(&numeric).map(|(a, n)| a - n).collect();
    let scale = reduce::norm(analytic.values()).max(reduce::norm(&numeric));
    out.max_rel_err = if scale > 0.0 { reduce::norm(&diff) / scale } else { 0.0 };
    Ok(out)
}

/// Worst result over `trials` seeded random problems of the given shape.
pub fn check_random(
    kind: LossKind,
    seed: u64,
    trials: usize,
    dims: &[usize],
    channels: usize,
    step: f64,
) -> Result<GradCheck> {
    let w = PairWeights::uniform(channels);
    let mut worst = GradCheck::default();
    for t in 0..trials {
        let (y, logits) = random_problem(seed.wrapping_add(t as u64), dims, channels)?;
        worst = worst.merge(check_gradient(kind, &y, &logits, &w, step)?);
    }
    Ok(worst)
}
