//! Direct optimization of a per-element logit field against one loss.
//!
//! There is no network: the parameters are the logits themselves. This keeps
//! the comparison about the losses, at the price that cross entropy alone
//! also converges eventually.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{argmax, InstanceMap, LogitField, ProbabilityField, GAP};
use crate::losses::{evaluate, LossKind, PairWeights};
use crate::metrics::panoptic;
use crate::postprocess::{postprocess, GapMode, PostprocessConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Optimizer {
    Gd,
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub step_size: f64,
    pub iterations: usize,
    pub log_every: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Standard deviation of the initial logits. Zero starts from uniform
    /// probabilities.
    pub init_scale: f64,
    /// Pipeline used to score PQ. Gap elements default to background: with
    /// no image evidence, the ranking of the first three classes at a
    /// converged gap element is left over from initialization.
    pub postprocess: PostprocessConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Jc,
            step_size: 1.0,
            iterations: 5000,
            log_every: 50,
            seed: 0,
            optimizer: Optimizer::Gd,
            init_scale: 0.5,
            postprocess: PostprocessConfig {
                gap_mode: GapMode::Background,
                ..PostprocessConfig::default()
            },
        }
    }
}

impl TrainConfig {
    /// Adam with learning rate 1e-4.
    pub fn adam(loss: LossKind) -> Self {
        Self {
            loss,
            step_size: 1e-4,
            optimizer: Optimizer::adam(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig("step size must be positive".into()));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidConfig("log period must be >= 1".into()));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidConfig("init scale must be non-negative".into()));
        }
        self.postprocess.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: usize,
    pub loss: f64,
    pub components: Vec<(String, f64)>,
    pub pq: f64,
    pub notch_correct: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    /// One record per log period, plus the first and last iteration.
    pub records: Vec<TrainRecord>,
    /// Loss at every iteration.
    pub losses: Vec<f64>,
    /// First iteration where every gap element of the target is decided as
    /// gap by MAP.
    pub first_notch_correct: Option<usize>,
    /// First iteration where every element is decided correctly.
    pub first_all_correct: Option<usize>,
    /// First logged iteration with PQ = 1.
    pub first_pq_one: Option<usize>,
    pub final_logits: LogitField,
}

impl TrainTrace {
    pub fn final_pq(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.pq)
    }

    pub fn to_csv(&self) -> String {
        let names: Vec<&str> = self
            .records
            .first()
            .map(|r| r.components.iter().map(|c| c.0.as_str()).collect())
            .unwrap_or_default();
        let mut out = String::from("iteration,loss");
        for n in &names {
            out.push(',');
            out.push_str(n);
        }
        out.push_str(",pq,notch_correct\n");
        for r in &self.records {
            out.push_str(&format!("{},{}", r.iteration, r.loss));
            for c in &r.components {
                out.push_str(&format!(",{}", c.1));
            }
            out.push_str(&format!(",{},{}\n", r.pq, r.notch_correct as u8));
        }
        out
    }
}

fn initial_logits(y: &ProbabilityField, cfg: &TrainConfig) -> Result<LogitField> {
    let mut theta = LogitField::zeros(y.shape().clone(), y.channels());
    if cfg.init_scale > 0.0 {
        let normal = Normal::new(0.0, cfg.init_scale)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for v in theta.values_mut() {
            *v = normal.sample(&mut rng);
        }
    }
    Ok(theta)
}

/// Trains logits so that their softmax matches `y`, scoring the
/// postprocessed prediction against `source` every `log_every` iterations.
pub fn train(
    source: &InstanceMap,
    y: &ProbabilityField,
    cfg: &TrainConfig,
    w: &PairWeights,
) -> Result<TrainTrace> {
    cfg.validate()?;
    if source.shape() != y.shape() {
        return Err(Error::ShapeMismatch(
            "instance map and target differ in shape".into(),
        ));
    }
    let target = y.one_hot_classes()?;
    let notch: Vec<usize> = (0..target.len())
        .filter(|&p| y.channels() > GAP as usize && target[p] == GAP as usize)
        .collect();

    let mut theta = initial_logits(y, cfg)?;
    let n = theta.values().len();
    let (mut m1, mut m2) = (vec![0.0; n], vec![0.0; n]);

    let mut records = Vec::new();
    let mut losses = Vec::with_capacity(cfg.iterations + 1);
    let mut first_notch_correct = None;
    let mut first_all_correct = None;
    let mut first_pq_one = None;

    for t in 0..=cfg.iterations {
        let z = theta.softmax()?;
        let lv = evaluate(cfg.loss, y, &z, w)?;
        if !lv.total.is_finite() {
            return Err(Error::Diverged {
                iteration: t,
                loss: lv.total,
            });
        }
        losses.push(lv.total);

        let decided: Vec<usize> = z.elements().map(argmax).collect();
        let notch_correct = notch.iter().all(|&p| decided[p] == GAP as usize);
        if notch_correct && first_notch_correct.is_none() {
            first_notch_correct = Some(t);
        }
        if first_all_correct.is_none() && decided == target {
            first_all_correct = Some(t);
        }

        if t % cfg.log_every == 0 || t == cfg.iterations {
            let pred = postprocess(&z, &cfg.postprocess)?;
            let pq = panoptic(source, &pred)?.values["pq"];
            if pq == 1.0 && first_pq_one.is_none() {
                first_pq_one = Some(t);
            }
            records.push(TrainRecord {
                iteration: t,
                loss: lv.total,
                components: lv
                    .components
                    .iter()
                    .map(|(k, v)| (k.to_string(), *v))
                    .collect(),
                pq,
                notch_correct,
            });
        }

        if t == cfg.iterations {
            break;
        }
        let grad = lv.gradient.expect("evaluate returns a gradient");
        let params = theta.values_mut();
        match cfg.optimizer {
            Optimizer::Gd => {
                for (p, g) in params.iter_mut().zip(grad.values()) {
                    *p -= cfg.step_size * g;
                }
            }
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                let step = (t + 1) as i32;
                let c1 = 1.0 - beta1.powi(step);
                let c2 = 1.0 - beta2.powi(step);
                for (i, (p, g)) in params.iter_mut().zip(grad.values()).enumerate() {
                    m1[i] = beta1 * m1[i] + (1.0 - beta1) * g;
                    m2[i] = beta2 * m2[i] + (1.0 - beta2) * g * g;
                    *p -= cfg.step_size * (m1[i] / c1) / ((m2[i] / c2).sqrt() + epsilon);
                }
            }
        }
    }

    Ok(TrainTrace {
        records,
        losses,
        first_notch_correct,
        first_all_correct,
        first_pq_one,
        final_logits: theta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::one_hot;
    use crate::scene::{generate_scene, SceneSpec};
    use crate::transform::{to_semantic, TransformConfig};

    fn problem() -> (InstanceMap, ProbabilityField) {
        let g = generate_scene(&SceneSpec::two_squares(&[20, 12], 6, 1, 3)).unwrap();
        let h = to_semantic(&g, &TransformConfig::default()).unwrap();
        let y = one_hot(&h, 4).unwrap();
        (g, y)
    }

    #[test]
    fn zero_iterations_from_uniform() {
        let (g, y) = problem();
        let cfg = TrainConfig {
            iterations: 0,
            init_scale: 0.0,
            ..Default::default()
        };
        let trace = train(&g, &y, &cfg, &PairWeights::uniform(4)).unwrap();
        assert_eq!(trace.losses.len(), 1);
        assert_eq!(trace.records.len(), 1);
        let ce = trace.records[0].components[0].1;
        assert!((ce - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn deterministic_and_decreasing() {
        let (g, y) = problem();
        let cfg = TrainConfig {
            iterations: 60,
            log_every: 20,
            seed: 9,
            ..Default::default()
        };
        let w = PairWeights::uniform(4);
        let a = train(&g, &y, &cfg, &w).unwrap();
        let b = train(&g, &y, &cfg, &w).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 4);
        assert!(a.losses.windows(2).all(|p| p[1] <= p[0]));
    }

    #[test]
    fn adam_moves_the_loss() {
        let (g, y) = problem();
        let cfg = TrainConfig {
            iterations: 20,
            step_size: 1e-2,
            ..TrainConfig::adam(LossKind::Ce)
        };
        let trace = train(&g, &y, &cfg, &PairWeights::uniform(4)).unwrap();
        assert!(trace.losses[20] < trace.losses[0]);
    }

    #[test]
    fn invalid_config() {
        let (g, y) = problem();
        let cfg = TrainConfig {
            step_size: 0.0,
            ..Default::default()
        };
        assert!(train(&g, &y, &cfg, &PairWeights::uniform(4)).is_err());
    }
}
