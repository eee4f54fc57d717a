//! Gradient norms along a prescribed segmentation trajectory.
//!
//! The prediction starts as the target cells dilated by `initial_margin`
//! and shrinks by one element every `shrink_period` iterations. Inside the
//! mask the cell class gets probability `c`, outside background does, and
//! the other classes share the rest. The prescribed field is blended toward
//! the true one-hot target with a weight that reaches `truth_blend` when the
//! margin hits zero (the shrinkwrap point) and 1 after `iterations` steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{one_hot, ProbabilityField, BACKGROUND, CELL};
use crate::losses::{evaluate, LossKind, PairWeights};
use crate::reduce;
use crate::scene::{generate_scene, SceneKind, SceneSpec};
use crate::transform::{dilate, to_semantic, TransformConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkwrapConfig {
    pub scene: SceneSpec,
    /// Total number of recorded iterations, including iteration 0.
    pub iterations: usize,
    pub initial_margin: usize,
    /// Iterations spent at each margin.
    pub shrink_period: usize,
    pub confidence_start: f64,
    pub confidence_end: f64,
    /// Weight of the true target at the shrinkwrap point.
    pub truth_blend: f64,
    pub transform: TransformConfig,
}

impl Default for ShrinkwrapConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default_notch(),
            iterations: 89,
            initial_margin: 6,
            shrink_period: 8,
            confidence_start: 0.55,
            confidence_end: 0.95,
            truth_blend: 0.45,
            transform: TransformConfig::default(),
        }
    }
}

impl ShrinkwrapConfig {
    /// Iteration at which the margin first reaches zero.
    pub fn shrinkwrap_iteration(&self) -> usize {
        self.initial_margin * self.shrink_period
    }

    pub fn validate(&self) -> Result<()> {
        if self.scene.kind != SceneKind::TwoSquaresNotch {
            return Err(Error::InvalidConfig("shrinkwrap needs a two-squares scene".into()));
        }
        if self.initial_margin == 0 || self.shrink_period == 0 {
            return Err(Error::InvalidConfig(
                "initial margin and shrink period must be >= 1".into(),
            ));
        }
        let (c0, c1) = (self.confidence_start, self.confidence_end);
        if !(c0 > 0.25 && c0 <= c1 && c1 < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "confidence schedule {c0} -> {c1} must satisfy 0.25 < start <= end < 1"
            )));
        }
        if !(0.0..1.0).contains(&self.truth_blend) {
            return Err(Error::InvalidConfig("truth blend must lie in [0, 1)".into()));
        }
        if self.iterations <= self.shrinkwrap_iteration() + 1 {
            return Err(Error::InvalidConfig(format!(
                "{} iterations never get past the shrinkwrap point at iteration {}",
                self.iterations,
                self.shrinkwrap_iteration()
            )));
        }
        self.transform.validate()
    }

    /// Margin, confidence and truth weight at iteration `t`.
    pub fn schedule(&self, t: usize) -> (usize, f64, f64) {
        let sw = self.shrinkwrap_iteration();
        if t < sw {
            let f = t as f64 / sw as f64;
            (
                self.initial_margin - t / self.shrink_period,
                self.confidence_start + (self.confidence_end - self.confidence_start) * f,
                self.truth_blend * f,
            )
        } else {
            let ramp = (self.iterations - 1 - sw) as f64;
            let f = (t - sw) as f64 / ramp;
            (
                0,
                self.confidence_end,
                self.truth_blend + (1.0 - self.truth_blend) * f,
            )
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShrinkwrapRecord {
    pub iteration: usize,
    pub margin: usize,
    pub confidence: f64,
    pub blend: f64,
    pub grad_ce: f64,
    pub grad_j: f64,
    pub grad_jc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkwrapTrace {
    pub records: Vec<ShrinkwrapRecord>,
    pub shrinkwrap_iteration: usize,
}

impl ShrinkwrapTrace {
    /// Largest `(ce, j, jc)` gradient norms along the trajectory.
    pub fn peaks(&self) -> (f64, f64, f64) {
        self.records.iter().fold((0.0, 0.0, 0.0), |p, r| {
            (p.0.max(r.grad_ce), p.1.max(r.grad_j), p.2.max(r.grad_jc))
        })
    }

    pub fn at_shrinkwrap(&self) -> &ShrinkwrapRecord {
        &self.records[self.shrinkwrap_iteration]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,margin,confidence,blend,grad_ce,grad_j,grad_jc\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.iteration, r.margin, r.confidence, r.blend, r.grad_ce, r.grad_j, r.grad_jc
            ));
        }
        out
    }
}

pub fn run_shrinkwrap(cfg: &ShrinkwrapConfig, w: &PairWeights) -> Result<ShrinkwrapTrace> {
    cfg.validate()?;
    let g = generate_scene(&cfg.scene)?;
    let h = to_semantic(&g, &cfg.transform)?;
    let channels = cfg.transform.mode.channels();
    let y = one_hot(&h, channels)?;
    let shape = g.shape().clone();
    let fg: Vec<bool> = g.labels().iter().map(|&l| l != 0).collect();

    let mut records = Vec::with_capacity(cfg.iterations);
    for t in 0..cfg.iterations {
        let (margin, c, blend) = cfg.schedule(t);
        let mask = dilate(&shape, &fg, margin);
        let rest = (1.0 - c) / (channels - 1) as f64;
        let mut values = Vec::with_capacity(y.values().len());
        for (inside, target) in mask.iter().zip(y.elements()) {
            let class = if *inside { CELL } else { BACKGROUND } as usize;
            for (l, &yl) in target.iter().enumerate() {
                let prescribed = if l == class { c } else { rest };
                values.push((1.0 - blend) * prescribed + blend * yl);
            }
        }
        let z = ProbabilityField::new(shape.clone(), channels, values)?;
        let ce = evaluate(LossKind::Ce, &y, &z, w)?.gradient.expect("gradient");
        let j = evaluate(LossKind::J, &y, &z, w)?.gradient.expect("gradient");
        let jc: Vec<f64> = ce.values().iter().zip(j.values()).map(|(a, b)| a + b).collect();
        records.push(ShrinkwrapRecord {
            iteration: t,
            margin,
            confidence: c,
            blend,
            grad_ce: reduce::norm(ce.values()),
            grad_j: reduce::norm(j.values()),
            grad_jc: reduce::norm(&jc),
        });
    }
    Ok(ShrinkwrapTrace {
        records,
        shrinkwrap_iteration: cfg.shrinkwrap_iteration(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let cfg = ShrinkwrapConfig::default();
        assert_eq!(cfg.schedule(0), (6, 0.55, 0.0));
        assert_eq!(cfg.schedule(7).0, 6);
        assert_eq!(cfg.schedule(8).0, 5);
        assert_eq!(cfg.schedule(47).0, 1);
        let (m, c, b) = cfg.schedule(48);
        assert_eq!((m, c), (0, 0.95));
        assert!((b - 0.45).abs() < 1e-15);
        assert_eq!(cfg.schedule(88).2, 1.0);
    }

    #[test]
    fn schedule_must_reach_zero_margin() {
        let cfg = ShrinkwrapConfig {
            iterations: 40,
            ..Default::default()
        };
        assert!(matches!(run_shrinkwrap(&cfg, &PairWeights::uniform(4)), Err(Error::InvalidConfig(_))));
        let cfg = ShrinkwrapConfig {
            confidence_start: 0.2,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn final_iteration_is_the_optimum() {
        let trace = run_shrinkwrap(&ShrinkwrapConfig::default(), &PairWeights::uniform(4)).unwrap();
        assert_eq!(trace.records.len(), 89);
        let last = trace.records.last().unwrap();
        assert_eq!((last.grad_ce, last.grad_j, last.grad_jc), (0.0, 0.0, 0.0));
        assert_eq!(trace.to_csv().lines().count(), 90);
    }
}
