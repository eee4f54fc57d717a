//! Segmentation losses and their analytic gradients.
//!
//! Every loss is evaluated on a target one-hot field `y` and a probability
//! field `z`, and reports its gradient with respect to the logits that
//! produce `z` under softmax. Internally each loss computes `dL/dz` and the
//! shared softmax backward pass maps it to logit space.
//!
//! The J regularizer sums pairwise binary surrogates of Youden's index:
//!
//! ```text
//! L_J = - sum_{i != k} lambda[i][k] * ln(1/2 + sum_p z_i(p) * (phi_i(p) - phi_k(p)) / 2)
//! phi_l(p) = y_l(p) / n_l
//! ```
//!
//! where pairs involving an absent class (`n_l = 0`) are skipped.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{LogitField, ProbabilityField};
use crate::reduce;

/// Lower clamp for every logarithm argument.
pub const LOG_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Ce,
    J,
    Jc,
    Bwm,
    Dsc,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Ce,
        LossKind::J,
        LossKind::Jc,
        LossKind::Bwm,
        LossKind::Dsc,
    ];

    pub fn id(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::J => "j",
            LossKind::Jc => "jc",
            LossKind::Bwm => "bwm",
            LossKind::Dsc => "dsc",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown loss {s:?}")))
    }
}

/// Pairwise class weights `lambda[i][k]`. The diagonal is never used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct PairWeights {
    channels: usize,
    values: Vec<f64>,
}

impl PairWeights {
    /// One off the diagonal, zero on it.
    pub fn uniform(channels: usize) -> Self {
        let mut values = vec![1.0; channels * channels];
        for i in 0..channels {
            values[i * channels + i] = 0.0;
        }
        Self { channels, values }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let channels = rows.len();
        if channels == 0 || rows.iter().any(|r| r.len() != channels) {
            return Err(Error::InvalidConfig("pair weights must be a square matrix".into()));
        }
        let values: Vec<f64> = rows.into_iter().flatten().collect();
        if values.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidConfig(
                "pair weights must be finite and non-negative".into(),
            ));
        }
        Ok(Self { channels, values })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.channels + k]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            channels: self.channels,
            values: self.values.iter().map(|w| w * c).collect(),
        }
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.channels).map(<[f64]>::to_vec).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for PairWeights {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        PairWeights::from_rows(rows)
    }
}

impl From<PairWeights> for Vec<Vec<f64>> {
    fn from(w: PairWeights) -> Self {
        w.rows()
    }
}

#[derive(Debug, Clone)]
pub struct LossValue {
    pub total: f64,
    pub components: Vec<(&'static str, f64)>,
    /// Gradient with respect to the logits behind `z`.
    pub gradient: Option<LogitField>,
}

impl LossValue {
    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.iter().find(|(n, _)| *n == name).map(|c| c.1)
    }
}

/// Class index and class counts of a one-hot target.
struct Target {
    class: Vec<usize>,
    counts: Vec<usize>,
}

impl Target {
    fn new(y: &ProbabilityField, z: &ProbabilityField) -> Result<Self> {
        if y.shape() != z.shape() || y.channels() != z.channels() {
            return Err(Error::ShapeMismatch(format!(
                "target {:?}x{} vs prediction {:?}x{}",
                y.shape().dims(),
                y.channels(),
                z.shape().dims(),
                z.channels()
            )));
        }
        let class = y.one_hot_classes()?;
        let mut counts = vec![0; y.channels()];
        for &c in &class {
            counts[c] += 1;
        }
        Ok(Self { class, counts })
    }

    fn len(&self) -> usize {
        self.class.len()
    }
}

/// Raw loss parts and `dL/dz` before the softmax backward pass.
struct Parts {
    components: Vec<(&'static str, f64)>,
    dz: Vec<f64>,
}

fn ce_parts(t: &Target, z: &ProbabilityField) -> Parts {
    let c = z.channels();
    let n = t.len() as f64;
    let zv = z.values();
    let value = -reduce::sum_map(t.len(), |p| zv[p * c + t.class[p]].max(LOG_EPS).ln()) / n;
    let mut dz = vec![0.0; zv.len()];
    for (p, &cls) in t.class.iter().enumerate() {
        let zp = zv[p * c + cls];
        if zp >= LOG_EPS {
            dz[p * c + cls] = -1.0 / (n * zp);
        }
    }
    Parts {
        components: vec![("ce", value)],
        dz,
    }
}

fn j_parts(t: &Target, z: &ProbabilityField, w: &PairWeights) -> Result<Parts> {
    let c = z.channels();
    if w.channels() != c {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} pair weights for {c} channels",
            w.channels(),
            w.channels()
        )));
    }
    let zv = z.values();

    // mean[i][l]: average of z_i over the elements of class l.
    let mut mean = vec![0.0; c * c];
    for (p, &cls) in t.class.iter().enumerate() {
        for i in 0..c {
            mean[i * c + cls] += zv[p * c + i];
        }
    }
    for i in 0..c {
        for l in 0..c {
            if t.counts[l] > 0 {
                mean[i * c + l] /= t.counts[l] as f64;
            }
        }
    }

    // coef[i][l]: dL/dz_i at an element of class l.
    let mut coef = vec![0.0; c * c];
    let mut value = 0.0;
    for i in 0..c {
        for k in 0..c {
            if i == k || t.counts[i] == 0 || t.counts[k] == 0 {
                continue;
            }
            let lambda = w.get(i, k);
            let arg = 0.5 + 0.5 * (mean[i * c + i] - mean[i * c + k]);
            value -= lambda * arg.clamp(LOG_EPS, 1.0).ln();
            if arg >= LOG_EPS {
                coef[i * c + i] -= lambda / (2.0 * t.counts[i] as f64 * arg);
                coef[i * c + k] += lambda / (2.0 * t.counts[k] as f64 * arg);
            }
        }
    }

    let mut dz = vec![0.0; zv.len()];
    for (p, &cls) in t.class.iter().enumerate() {
        for i in 0..c {
            dz[p * c + i] = coef[i * c + cls];
        }
    }
    Ok(Parts {
        components: vec![("j", value)],
        dz,
    })
}

fn bwm_parts(t: &Target, z: &ProbabilityField) -> Parts {
    let c = z.channels();
    let n = t.len();
    let weight: Vec<f64> = t
        .counts
        .iter()
        .map(|&nl| if nl > 0 { n as f64 / (c * nl) as f64 } else { 0.0 })
        .collect();
    let zv = z.values();
    let value = -reduce::sum_map(n, |p| {
        let cls = t.class[p];
        weight[cls] * zv[p * c + cls].max(LOG_EPS).ln()
    }) / n as f64;
    let mut dz = vec![0.0; zv.len()];
    for (p, &cls) in t.class.iter().enumerate() {
        let zp = zv[p * c + cls];
        if zp >= LOG_EPS {
            dz[p * c + cls] = -weight[cls] / (n as f64 * zp);
        }
    }
    Parts {
        components: vec![("bwm", value)],
        dz,
    }
}

fn dice_parts(t: &Target, z: &ProbabilityField) -> Parts {
    let c = z.channels();
    let zv = z.values();
    let mut overlap = vec![0.0; c];
    let mut squares = vec![0.0; c];
    for (p, &cls) in t.class.iter().enumerate() {
        overlap[cls] += zv[p * c + cls];
        for l in 0..c {
            squares[l] += zv[p * c + l] * zv[p * c + l];
        }
    }
    let present: Vec<usize> = (0..c).filter(|&l| t.counts[l] > 0).collect();
    let m = present.len() as f64;
    let denom: Vec<f64> = (0..c).map(|l| squares[l] + t.counts[l] as f64).collect();
    let mean_dice = present
        .iter()
        .map(|&l| 2.0 * overlap[l] / denom[l])
        .sum::<f64>()
        / m;

    let mut dz = vec![0.0; zv.len()];
    for (p, &cls) in t.class.iter().enumerate() {
        for &l in &present {
            let zl = zv[p * c + l];
            let y = if l == cls { 1.0 } else { 0.0 };
            let d = 2.0 * y / denom[l] - 4.0 * overlap[l] * zl / (denom[l] * denom[l]);
            dz[p * c + l] = -d / m;
        }
    }
    Parts {
        components: vec![("dice", 1.0 - mean_dice)],
        dz,
    }
}

/// `dL/dtheta_j = z_j * (dL/dz_j - sum_l z_l dL/dz_l)` per element.
pub fn softmax_backward(z: &ProbabilityField, dz: &[f64]) -> LogitField {
    let c = z.channels();
    let mut out = vec![0.0; dz.len()];
    for ((zp, gp), op) in z
        .values()
        .chunks_exact(c)
        .zip(dz.chunks_exact(c))
        .zip(out.chunks_exact_mut(c))
    {
        let dot: f64 = zp.iter().zip(gp).map(|(a, b)| a * b).sum();
        for j in 0..c {
            op[j] = zp[j] * (gp[j] - dot);
        }
    }
    LogitField::from_raw(z.shape().clone(), c, out)
}

fn combine(z: &ProbabilityField, parts: Vec<Parts>, with_grad: bool) -> LossValue {
    let components: Vec<(&'static str, f64)> =
        parts.iter().flat_map(|p| p.components.iter().copied()).collect();
    let total = components.iter().map(|c| c.1).sum();
    let gradient = with_grad.then(|| {
        let mut dz = vec![0.0; z.values().len()];
        for part in &parts {
            for (d, x) in dz.iter_mut().zip(&part.dz) {
                *d += x;
            }
        }
        softmax_backward(z, &dz)
    });
    LossValue {
        total,
        components,
        gradient,
    }
}

fn evaluate_inner(
    kind: LossKind,
    y: &ProbabilityField,
    z: &ProbabilityField,
    w: &PairWeights,
    with_grad: bool,
) -> Result<LossValue> {
    let t = Target::new(y, z)?;
    let parts = match kind {
        LossKind::Ce => vec![ce_parts(&t, z)],
        LossKind::J => vec![j_parts(&t, z, w)?],
        LossKind::Jc => vec![ce_parts(&t, z), j_parts(&t, z, w)?],
        LossKind::Bwm => vec![bwm_parts(&t, z)],
        LossKind::Dsc => vec![ce_parts(&t, z), dice_parts(&t, z)],
    };
    Ok(combine(z, parts, with_grad))
}

/// Loss value and logit gradient. `w` is only read by the J-based losses.
pub fn evaluate(
    kind: LossKind,
    y: &ProbabilityField,
    z: &ProbabilityField,
    w: &PairWeights,
) -> Result<LossValue> {
    evaluate_inner(kind, y, z, w, true)
}

/// Loss value without the gradient.
pub fn value(
    kind: LossKind,
    y: &ProbabilityField,
    z: &ProbabilityField,
    w: &PairWeights,
) -> Result<LossValue> {
    evaluate_inner(kind, y, z, w, false)
}

pub fn evaluate_logits(
    kind: LossKind,
    y: &ProbabilityField,
    logits: &LogitField,
    w: &PairWeights,
) -> Result<LossValue> {
    evaluate(kind, y, &logits.softmax()?, w)
}

pub fn cross_entropy(y: &ProbabilityField, z: &ProbabilityField) -> Result<LossValue> {
    evaluate(LossKind::Ce, y, z, &PairWeights::uniform(z.channels()))
}

pub fn j_loss(y: &ProbabilityField, z: &ProbabilityField, w: &PairWeights) -> Result<LossValue> {
    evaluate(LossKind::J, y, z, w)
}

pub fn jc_loss(y: &ProbabilityField, z: &ProbabilityField, w: &PairWeights) -> Result<LossValue> {
    evaluate(LossKind::Jc, y, z, w)
}

/// Class-balanced weighted cross entropy.
pub fn bwm_loss(y: &ProbabilityField, z: &ProbabilityField) -> Result<LossValue> {
    evaluate(LossKind::Bwm, y, z, &PairWeights::uniform(z.channels()))
}

/// Cross entropy plus one minus the mean soft Dice over present classes.
pub fn dsc_loss(y: &ProbabilityField, z: &ProbabilityField) -> Result<LossValue> {
    evaluate(LossKind::Dsc, y, z, &PairWeights::uniform(z.channels()))
}
