//! Binary confusion measures, Pearson correlation and panoptic instance metrics.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::InstanceMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    /// Counts from paired binary labels.
    pub fn from_labels(truth: &[bool], pred: &[bool]) -> Self {
        let mut c = Self::default();
        for (&t, &p) in truth.iter().zip(pred) {
            match (t, p) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Named scalar measures. Measures whose denominator was zero are reported
/// as 0 and listed in `undefined`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub values: BTreeMap<String, f64>,
    pub undefined: Vec<String>,
    pub metadata: BTreeMap<String, String>,
}

impl MetricReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    fn ratio(&mut self, name: &str, num: f64, den: f64) {
        let v = if den == 0.0 {
            self.undefined.push(name.to_string());
            0.0
        } else {
            num / den
        };
        self.values.insert(name.to_string(), v);
    }
}

pub const BINARY_MEASURES: [&str; 6] = ["j", "mcc", "jaccard", "f1", "tversky", "accuracy"];

/// J, MCC, Jaccard, F1, Tversky and accuracy. Tversky weighs false negatives
/// by `alpha` and false positives by `beta`.
pub fn binary_measures(c: &ConfusionCounts, alpha: f64, beta: f64) -> Result<MetricReport> {
    if c.total() == 0 {
        return Err(Error::InvalidValue("empty confusion matrix".into()));
    }
    let (tp, fp, fn_, tn) = (c.tp as f64, c.fp as f64, c.fn_ as f64, c.tn as f64);
    let mut r = MetricReport::default();
    // TPR + TNR - 1 over a common denominator.
    r.ratio("j", tp * tn - fp * fn_, (tp + fn_) * (tn + fp));
    r.ratio(
        "mcc",
        tp * tn - fp * fn_,
        ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt(),
    );
    r.ratio("jaccard", tp, tp + fp + fn_);
    r.ratio("f1", 2.0 * tp, 2.0 * tp + fp + fn_);
    r.ratio("tversky", tp, tp + alpha * fn_ + beta * fp);
    r.ratio("accuracy", tp + tn, tp + fp + fn_ + tn);
    r.metadata.insert("tversky_alpha".into(), alpha.to_string());
    r.metadata.insert("tversky_beta".into(), beta.to_string());
    Ok(r)
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} vs {} samples",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::InvalidValue("pearson needs at least two samples".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("first sample"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("second sample"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMatch {
    pub gt: u32,
    pub pred: u32,
    pub iou: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceMatching {
    pub matches: Vec<InstanceMatch>,
    pub unmatched_gt: Vec<u32>,
    pub unmatched_pred: Vec<u32>,
}

/// Pairs of instances with IoU above 0.5. Such pairs are unique: no label
/// can overlap two others by more than half of the union.
pub fn match_instances(gt: &InstanceMap, pred: &InstanceMap) -> Result<InstanceMatching> {
    if gt.shape() != pred.shape() {
        return Err(Error::ShapeMismatch(format!(
            "ground truth {:?} vs prediction {:?}",
            gt.shape().dims(),
            pred.shape().dims()
        )));
    }
    let mut area_gt: BTreeMap<u32, u64> = BTreeMap::new();
    let mut area_pred: BTreeMap<u32, u64> = BTreeMap::new();
    let mut overlap: HashMap<(u32, u32), u64> = HashMap::new();
    for (&a, &b) in gt.labels().iter().zip(pred.labels()) {
        if a != 0 {
            *area_gt.entry(a).or_default() += 1;
        }
        if b != 0 {
            *area_pred.entry(b).or_default() += 1;
        }
        if a != 0 && b != 0 {
            *overlap.entry((a, b)).or_default() += 1;
        }
    }

    let mut pairs: Vec<_> = overlap.into_iter().collect();
    pairs.sort_unstable_by_key(|p| p.0);
    let mut out = InstanceMatching::default();
    for ((a, b), inter) in pairs {
        let union = area_gt[&a] + area_pred[&b] - inter;
        // inter / union > 1/2
        if 2 * inter > union {
            out.matches.push(InstanceMatch {
                gt: a,
                pred: b,
                iou: inter as f64 / union as f64,
            });
        }
    }
    out.unmatched_gt = area_gt
        .keys()
        .filter(|l| !out.matches.iter().any(|m| m.gt == **l))
        .copied()
        .collect();
    out.unmatched_pred = area_pred
        .keys()
        .filter(|l| !out.matches.iter().any(|m| m.pred == **l))
        .copied()
        .collect();
    Ok(out)
}

/// P05, RQ, SQ and PQ together with the TP/FP/FN counts.
pub fn panoptic(gt: &InstanceMap, pred: &InstanceMap) -> Result<MetricReport> {
    let m = match_instances(gt, pred)?;
    Ok(panoptic_from_matching(&m))
}

pub fn panoptic_from_matching(m: &InstanceMatching) -> MetricReport {
    let tp = m.matches.len() as f64;
    let fp = m.unmatched_pred.len() as f64;
    let fn_ = m.unmatched_gt.len() as f64;
    let iou_sum: f64 = m.matches.iter().map(|x| x.iou).sum();
    let mut r = MetricReport::default();
    r.ratio("p05", tp, tp + fp);
    r.ratio("rq", 2.0 * tp, 2.0 * tp + fp + fn_);
    r.ratio("sq", iou_sum, tp);
    r.ratio("pq", iou_sum, tp + 0.5 * fp + 0.5 * fn_);
    r.values.insert("tp".into(), tp);
    r.values.insert("fp".into(), fp);
    r.values.insert("fn".into(), fn_);
    r.metadata.insert("match_rule".into(), "iou > 0.5".into());
    r
}
