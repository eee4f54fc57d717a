use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;

use jcseg::gradcheck::{check_gradient, check_random, DEFAULT_STEP};
use jcseg::io::{read_grid, write_grid, GridData, RawGrid};
use jcseg::losses::{self, LossKind, PairWeights};
use jcseg::metrics::panoptic;
use jcseg::postprocess::{Connectivity, GapMode, PostprocessConfig};
use jcseg::simulators::{
    landscape_scan, mcc_j_correlation, run_imbalance_sim, run_shrinkwrap, Classifier,
    ImbalanceSimConfig, LandscapeConfig, ShrinkwrapConfig,
};
use jcseg::trainer::{train, Optimizer, TrainConfig};
use jcseg::{
    generate_scene, one_hot, ClassMode, InstanceMap, LogitField, ProbabilityField, SceneKind,
    SceneSpec, TransformConfig,
};

use crate::config::{fill_seed, required, resolve, write_json, write_text, Overrides};
use crate::{Common, Failure, Outcome};

fn outcome<S: Serialize>(
    name: &'static str,
    seed: Option<u64>,
    settings: &S,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
) -> Outcome {
    Outcome {
        name,
        seed,
        config: serde_json::to_value(settings).expect("settings serialize"),
        inputs,
        outputs,
    }
}

fn load_weights(path: Option<&Path>, channels: usize) -> Result<PairWeights, Failure> {
    let Some(path) = path else {
        return Ok(PairWeights::uniform(channels));
    };
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading weights {}", path.display()))
        .map_err(Failure::Data)?;
    let w: PairWeights = serde_json::from_str(&text)
        .with_context(|| format!("parsing weights {}", path.display()))
        .map_err(Failure::Data)?;
    if w.channels() != channels {
        return Err(Failure::Data(anyhow::anyhow!(
            "{}: {}x{} weights for {channels} channels",
            path.display(),
            w.channels(),
            w.channels()
        )));
    }
    Ok(w)
}

fn class_mode(classes: u8) -> Result<ClassMode, Failure> {
    match classes {
        3 => Ok(ClassMode::Three),
        4 => Ok(ClassMode::Four),
        n => Err(Failure::usage(format!("--classes must be 3 or 4, got {n}"))),
    }
}

fn write_instances(g: &InstanceMap, path: &Path) -> Result<(), Failure> {
    write_grid(&RawGrid::try_from(g)?, path)?;
    Ok(())
}

/// Scene geometry flags shared by the commands that build the notch scene.
#[derive(Args, Debug, Clone)]
pub struct SceneArgs {
    /// Grid extent per axis, e.g. 32,24
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    /// Square side in elements
    #[arg(long)]
    side: Option<usize>,
    #[arg(long)]
    notch_width: Option<usize>,
    #[arg(long)]
    notch_length: Option<usize>,
    /// Chebyshev radius of the touching neighborhood
    #[arg(long)]
    k: Option<usize>,
    /// Radius of the closing ball
    #[arg(long)]
    gap_radius: Option<usize>,
}

impl SceneArgs {
    fn apply(&self, o: &mut Overrides) {
        o.set("dims", self.dims.clone())
            .set("side", self.side)
            .set("notch_width", self.notch_width)
            .set("notch_length", self.notch_length)
            .set("k", self.k)
            .set("gap_radius", self.gap_radius);
    }
}

#[derive(Serialize, Deserialize, Debug, Clone)]
struct SceneSettings {
    dims: Vec<usize>,
    side: usize,
    notch_width: usize,
    notch_length: usize,
    k: usize,
    gap_radius: usize,
}

impl Default for SceneSettings {
    fn default() -> Self {
        let s = SceneSpec::default_notch();
        let t = TransformConfig::default();
        Self {
            dims: s.dims,
            side: s.side,
            notch_width: s.notch_width,
            notch_length: s.notch_length,
            k: t.k,
            gap_radius: t.gap_radius,
        }
    }
}

impl SceneSettings {
    fn spec(&self) -> SceneSpec {
        SceneSpec::two_squares(&self.dims, self.side, self.notch_width, self.notch_length)
    }

    fn transform(&self) -> TransformConfig {
        TransformConfig {
            k: self.k,
            gap_radius: self.gap_radius,
            mode: ClassMode::Four,
        }
    }

    /// Source instance map and its one-hot four-class target.
    fn build(&self) -> Result<(InstanceMap, ProbabilityField), Failure> {
        let g = generate_scene(&self.spec())?;
        let h = jcseg::to_semantic(&g, &self.transform())?;
        let y = one_hot(&h, 4)?;
        Ok((g, y))
    }
}

// gen-scene

#[derive(Args, Debug)]
pub struct GenSceneArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_parser = ["two-squares-notch", "random-blobs"])]
    kind: Option<String>,
    /// Grid extent per axis, e.g. 32,24
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    /// Square side, or minimum blob diameter
    #[arg(long)]
    side: Option<usize>,
    #[arg(long)]
    notch_width: Option<usize>,
    #[arg(long)]
    notch_length: Option<usize>,
    #[arg(long)]
    blobs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output instance map (.grd, or .pgm for 2D)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct GenSceneSettings {
    kind: SceneKind,
    dims: Vec<usize>,
    side: usize,
    notch_width: usize,
    notch_length: usize,
    blobs: usize,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

pub fn gen_scene(a: &GenSceneArgs) -> Result<Outcome, Failure> {
    let d = SceneSpec::default_notch();
    let defaults = GenSceneSettings {
        kind: d.kind,
        dims: d.dims,
        side: d.side,
        notch_width: d.notch_width,
        notch_length: d.notch_length,
        blobs: 3,
        seed: None,
        out: None,
    };
    let mut o = Overrides::default();
    o.set("kind", a.kind.clone())
        .set("dims", a.dims.clone())
        .set("side", a.side)
        .set("notch_width", a.notch_width)
        .set("notch_length", a.notch_length)
        .set("blobs", a.blobs)
        .set("seed", a.seed)
        .set("out", a.out.clone());
    let mut s: GenSceneSettings = resolve(defaults, a.common.config.as_deref(), o)?;
    let seed = fill_seed(&mut s.seed);
    let out = required(&s.out, "out")?;
    let spec = SceneSpec {
        kind: s.kind,
        dims: s.dims.clone(),
        side: s.side,
        notch_width: s.notch_width,
        notch_length: s.notch_length,
        blobs: s.blobs,
        seed,
    };
    let g = generate_scene(&spec)?;
    write_instances(&g, &out)?;
    Ok(outcome("gen-scene", Some(seed), &s, vec![], vec![out]))
}

// transform

#[derive(Args, Debug)]
pub struct TransformArgs {
    #[command(flatten)]
    pub common: Common,
    /// Input instance map
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Output semantic map
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    gap_radius: Option<usize>,
    /// 3 or 4
    #[arg(long)]
    classes: Option<u8>,
}

#[derive(Serialize, Deserialize)]
struct TransformSettings {
    input: Option<PathBuf>,
    out: Option<PathBuf>,
    k: usize,
    gap_radius: usize,
    classes: u8,
}

pub fn transform(a: &TransformArgs) -> Result<Outcome, Failure> {
    let t = TransformConfig::default();
    let defaults = TransformSettings {
        input: None,
        out: None,
        k: t.k,
        gap_radius: t.gap_radius,
        classes: 4,
    };
    let mut o = Overrides::default();
    o.set("input", a.input.clone())
        .set("out", a.out.clone())
        .set("k", a.k)
        .set("gap_radius", a.gap_radius)
        .set("classes", a.classes);
    let s: TransformSettings = resolve(defaults, a.common.config.as_deref(), o)?;
    let input = required(&s.input, "in")?;
    let out = required(&s.out, "out")?;
    let cfg = TransformConfig {
        k: s.k,
        gap_radius: s.gap_radius,
        mode: class_mode(s.classes)?,
    };
    cfg.validate()?;
    let g = read_grid(&input)?.into_instance_map()?;
    let h = jcseg::to_semantic(&g, &cfg)?;
    write_grid(&RawGrid::from(&h), &out)?;
    Ok(outcome("transform", None, &s, vec![input], vec![out]))
}

// loss-eval

#[derive(Args, Debug)]
pub struct LossEvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_parser = ["ce", "j", "jc", "bwm", "dsc"])]
    loss: Option<String>,
    /// Target: semantic map (u16) or one-hot probability field (f32)
    #[arg(long)]
    target: Option<PathBuf>,
    /// Predicted probability field
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Predicted logit field, instead of --pred
    #[arg(long)]
    logits: Option<PathBuf>,
    /// JSON matrix of pair weights [default: 1 off the diagonal]
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Finite-difference step for the gradient check
    #[arg(long)]
    step: Option<f64>,
    /// Skip the finite-difference gradient check
    #[arg(long)]
    no_grad_check: bool,
    /// Write the logit gradient as a grid
    #[arg(long)]
    gradient_out: Option<PathBuf>,
    /// JSON result [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct LossEvalSettings {
    loss: LossKind,
    target: Option<PathBuf>,
    pred: Option<PathBuf>,
    logits: Option<PathBuf>,
    weights: Option<PathBuf>,
    step: f64,
    no_grad_check: bool,
    gradient_out: Option<PathBuf>,
    out: Option<PathBuf>,
}

fn read_target(path: &Path, channels: usize) -> Result<ProbabilityField, Failure> {
    let raw = read_grid(path)?;
    Ok(match raw.data {
        GridData::U16(_) => one_hot(&raw.into_semantic_map()?, channels)?,
        GridData::F32(_) => raw.into_probability_field()?,
    })
}

pub fn loss_eval(a: &LossEvalArgs) -> Result<Outcome, Failure> {
    let defaults = LossEvalSettings {
        loss: LossKind::Jc,
        target: None,
        pred: None,
        logits: None,
        weights: None,
        step: DEFAULT_STEP,
        no_grad_check: false,
        gradient_out: None,
        out: None,
    };
    let mut o = Overrides::default();
    o.set("loss", a.loss.clone())
        .set("target", a.target.clone())
        .set("pred", a.pred.clone())
        .set("logits", a.logits.clone())
        .set("weights", a.weights.clone())
        .set("step", a.step)
        .flag("no_grad_check", a.no_grad_check)
        .set("gradient_out", a.gradient_out.clone())
        .set("out", a.out.clone());
    let s: LossEvalSettings = resolve(defaults, a.common.config.as_deref(), o)?;
    let target_path = required(&s.target, "target")?;
    let mut inputs = vec![target_path.clone()];

    let (z, logits) = match (&s.pred, &s.logits) {
        (Some(p), None) => {
            inputs.push(p.clone());
            let z = read_grid(p)?.into_probability_field()?;
            let logits = z.to_logits().ok();
            (z, logits)
        }
        (None, Some(p)) => {
            inputs.push(p.clone());
            let t = read_grid(p)?.into_logit_field()?;
            (t.softmax()?, Some(t))
        }
        _ => return Err(Failure::usage("give exactly one of --pred and --logits")),
    };
    let y = read_target(&target_path, z.channels())?;
    if let Some(w) = &s.weights {
        inputs.push(w.clone());
    }
    let w = load_weights(s.weights.as_deref(), z.channels())?;
    let value = losses::evaluate(s.loss, &y, &z, &w)?;

    let grad_err = match (&logits, s.no_grad_check) {
        (Some(t), false) => Some(check_gradient(s.loss, &y, t, &w, s.step)?.max_rel_err),
        _ => None,
    };
    let components: serde_json::Map<String, serde_json::Value> = value
        .components
        .iter()
        .map(|(k, v)| (k.to_string(), json!(v)))
        .collect();
    let result = json!({
        "loss": value.total,
        "components": components,
        "grad_max_rel_err": grad_err,
    });

    let mut outputs = Vec::new();
    if let Some(p) = &s.gradient_out {
        let g = value.gradient.as_ref().expect("evaluate returns a gradient");
        write_grid(&RawGrid::from(g), p)?;
        outputs.push(p.clone());
    }
    write_json(s.out.as_deref(), &result)?;
    if let Some(p) = &s.out {
        outputs.insert(0, p.clone());
    }
    Ok(outcome("loss-eval", None, &s, inputs, outputs))
}

// grad-check

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_parser = ["ce", "j", "jc", "bwm", "dsc"])]
    loss: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Grid extent per axis, e.g. 8,8 or 4,4,4
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    step: Option<f64>,
    /// JSON result [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct GradCheckSettings {
    loss: LossKind,
    seed: Option<u64>,
    trials: usize,
    dims: Vec<usize>,
    channels: usize,
    step: f64,
    out: Option<PathBuf>,
}

pub fn grad_check(a: &GradCheckArgs) -> Result<Outcome, Failure> {
    let defaults = GradCheckSettings {
        loss: LossKind::Jc,
        seed: None,
        trials: 100,
        dims: vec![8, 8],
        channels: 4,
        step: DEFAULT_STEP,
        out: None,
    };
    let mut o = Overrides::default();
    o.set("loss", a.loss.clone())
        .set("seed", a.seed)
        .set("trials", a.trials)
        .set("dims", a.dims.clone())
        .set("channels", a.channels)
        .set("step", a.step)
        .set("out", a.out.clone());
    let mut s: GradCheckSettings = resolve(defaults, a.common.config.as_deref(), o)?;
    let seed = fill_seed(&mut s.seed);
    if s.channels < 2 {
        return Err(Failure::usage("--channels must be >= 2"));
    }
    let r = check_random(s.loss, seed, s.trials, &s.dims, s.channels, s.step)?;
    let result = json!({
        "loss": s.loss.id(),
        "trials": s.trials,
        "dims": s.dims,
        "channels": s.channels,
        "step": s.step,
        "grad_max_rel_err": r.max_rel_err,
        "grad_max_entry_rel_err": r.max_entry_rel_err,
        "grad_max_abs_err": r.max_abs_err,
    });
    write_json(s.out.as_deref(), &result)?;
    let outputs = s.out.iter().cloned().collect();
    Ok(outcome("grad-check", Some(seed), &s, vec![], outputs))
}

// sim-imbalance

#[derive(Serialize, Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum SimMode {
    Sweep,
    Correlation,
}

#[derive(Args, Debug)]
pub struct SimImbalanceArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_parser = ["sweep", "correlation"])]
    mode: Option<String>,
    #[arg(long, value_parser = ["c1", "c3"])]
    classifier: Option<String>,
    /// Imbalance ratios, e.g. 0.01,0.25,0.5
    #[arg(long, value_delimiter = ',')]
    pis: Option<Vec<f64>>,
    /// Samples per trial
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tversky_alpha: Option<f64>,
    #[arg(long)]
    tversky_beta: Option<f64>,
    /// Per-trial CSV
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-pi summary CSV
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct SimImbalanceSettings {
    mode: SimMode,
    classifier: Option<Classifier>,
    pis: Option<Vec<f64>>,
    samples: Option<usize>,
    trials: usize,
    seed: Option<u64>,
    tversky_alpha: f64,
    tversky_beta: f64,
    out: Option<PathBuf>,
    summary: Option<PathBuf>,
}

pub fn sim_imbalance(a: &SimImbalanceArgs) -> Result<Outcome, Failure> {
    let base = ImbalanceSimConfig::default();
    let defaults = SimImbalanceSettings {
        mode: SimMode::Sweep,
        classifier: None,
        pis: None,
        samples: None,
        trials: base.trials,
        seed: None,
        tversky_alpha: base.tversky_alpha,
        tversky_beta: base.tversky_beta,
        out: None,
        summary: None,
    };
    let mut o = Overrides::default();
    o.set("mode", a.mode.clone())
        .set("classifier", a.classifier.clone())
        .set("pis", a.pis.clone())
        .set("samples", a.samples)
        .set("trials", a.trials)
        .set("seed", a.seed)
        .set("tversky_alpha", a.tversky_alpha)
        .set("tversky_beta", a.tversky_beta)
        .set("out", a.out.clone())
        .set("summary", a.summary.clone());
    let mut s: SimImbalanceSettings = resolve(defaults, a.common.config.as_deref(), o)?;
    let seed = fill_seed(&mut s.seed);
    let out = required(&s.out, "out")?;

    // Unset fields take the defaults of the chosen mode.
    let mode_defaults = match s.mode {
        SimMode::Sweep => ImbalanceSimConfig::default(),
        SimMode::Correlation => ImbalanceSimConfig::correlation(),
    };
    let s_classifier = *s.classifier.get_or_insert(mode_defaults.classifier);
    let pis = s.pis.get_or_insert(mode_defaults.pis).clone();
    let samples = *s.samples.get_or_insert(mode_defaults.samples);
    let cfg = ImbalanceSimConfig {
        pis,
        samples,
        trials: s.trials,
        seed,
        classifier: s_classifier,
        tversky_alpha: s.tversky_alpha,
        tversky_beta: s.tversky_beta,
    };

    let mut outputs = vec![out.clone()];
    match s.mode {
        SimMode::Sweep => {
            let table = run_imbalance_sim(&cfg)?;
            write_text(&out, &table.to_csv())?;
            if let Some(p) = &s.summary {
                write_text(p, &table.summary_csv())?;
                outputs.push(p.clone());
            }
            eprintln!("resampled trials: {}", table.resampled);
        }
        SimMode::Correlation => {
            let result = mcc_j_correlation(&cfg)?;
            write_text(&out, &result.scatter_csv())?;
            if let Some(p) = &s.summary {
                write_text(p, &result.summary_csv())?;
                outputs.push(p.clone());
            }
            for (pi, r) in &result.r {
                eprintln!("pi = {pi}: r = {r:.4}");
            }
        }
    }
    Ok(outcome("sim-imbalance", Some(seed), &s, vec![], outputs))
}

// sim-shrinkwrap

#[derive(Args, Debug)]
pub struct SimShrinkwrapArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    scene: SceneArgs,
    /// Recorded iterations, including iteration 0
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    initial_margin: Option<usize>,
    /// Iterations spent at each margin
    #[arg(long)]
    shrink_period: Option<usize>,
    #[arg(long)]
    confidence_start: Option<f64>,
    #[arg(long)]
    confidence_end: Option<f64>,
    /// Weight of the true target when the margin reaches zero
    #[arg(long)]
    truth_blend: Option<f64>,
    /// JSON matrix of pair weights
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Per-iteration CSV
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct SimShrinkwrapSettings {
    #[serde(flatten)]
    scene: SceneSettings,
    iterations: usize,
    initial_margin: usize,
    shrink_period: usize,
    confidence_start: f64,
    confidence_end: f64,
    truth_blend: f64,
    weights: Option<PathBuf>,
    out: Option<PathBuf>,
}

pub fn sim_shrinkwrap(a: &SimShrinkwrapArgs) -> Result<Outcome, Failure> {
    let d = ShrinkwrapConfig::default();
    let defaults = SimShrinkwrapSettings {
        scene: SceneSettings::default(),
        iterations: d.iterations,
        initial_margin: d.initial_margin,
        shrink_period: d.shrink_period,
        confidence_start: d.confidence_start,
        confidence_end: d.confidence_end,
        truth_blend: d.truth_blend,
        weights: None,
        out: None,
    };
    let mut o = Overrides::default();
    a.scene.apply(&mut o);
    o.set("iterations", a.iterations)
        .set("initial_margin", a.initial_margin)
        .set("shrink_period", a.shrink_period)
        .set("confidence_start", a.confidence_start)
        .set("confidence_end", a.confidence_end)
        .set("truth_blend", a.truth_blend)
        .set("weights", a.weights.clone())
        .set("out", a.out.clone());
    let s: SimShrinkwrapSettings = resolve(defaults, a.common.config.as_deref(), o)?;
    let out = required(&s.out, "out")?;
    let cfg = ShrinkwrapConfig {
        scene: s.scene.spec(),
        iterations: s.iterations,
        initial_margin: s.initial_margin,
        shrink_period: s.shrink_period,
        confidence_start: s.confidence_start,
        confidence_end: s.confidence_end,
        truth_blend: s.truth_blend,
        transform: s.scene.transform(),
    };
    let w = load_weights(s.weights.as_deref(), 4)?;
    let trace = run_shrinkwrap(&cfg, &w)?;
    write_text(&out, &trace.to_csv())?;
    let (ce, j, _) = trace.peaks();
    let sw = trace.at_shrinkwrap();
    eprintln!(
        "shrinkwrap iteration {}: |grad CE| / peak = {:.3}, |grad J| / peak = {:.3}",
        trace.shrinkwrap_iteration,
        sw.grad_ce / ce,
        sw.grad_j / j
    );
    let inputs = s.weights.iter().cloned().collect();
    Ok(outcome("sim-shrinkwrap", None, &s, inputs, vec![out]))
}

// landscape

#[derive(Args, Debug)]
pub struct LandscapeArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long, value_parser = ["ce", "j", "jc", "bwm", "dsc"])]
    loss: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Grid points per axis
    #[arg(long)]
    resolution: Option<usize>,
    /// Half-width of the scanned square
    #[arg(long)]
    span: Option<f64>,
    /// Logit of the true class at the optimum (others are 0)
    #[arg(long)]
    margin: Option<f64>,
    /// Instance map to use instead of the generated scene
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// JSON matrix of pair weights
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Loss matrix CSV
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct LandscapeSettings {
    #[serde(flatten)]
    scene: SceneSettings,
    loss: LossKind,
    seed: Option<u64>,
    resolution: usize,
    span: f64,
    margin: f64,
    input: Option<PathBuf>,
    weights: Option<PathBuf>,
    out: Option<PathBuf>,
}

pub fn landscape(a: &LandscapeArgs) -> Result<Outcome, Failure> {
    let d = LandscapeConfig::default();
    let defaults = LandscapeSettings {
        scene: SceneSettings::default(),
        loss: d.loss,
        seed: None,
        resolution: d.resolution,
        span: d.span,
        margin: 12.0,
        input: None,
        weights: None,
        out: None,
    };
    let mut o = Overrides::default();
    a.scene.apply(&mut o);
    o.set("loss", a.loss.clone())
        .set("seed", a.seed)
        .set("resolution", a.resolution)
        .set("span", a.span)
        .set("margin", a.margin)
        .set("input", a.input.clone())
        .set("weights", a.weights.clone())
        .set("out", a.out.clone());
    let mut s: LandscapeSettings = resolve(defaults, a.common.config.as_deref(), o)?;
    let seed = fill_seed(&mut s.seed);
    let out = required(&s.out, "out")?;
    let mut inputs = Vec::new();
    let y = match &s.input {
        Some(p) => {
            inputs.push(p.clone());
            let g = read_grid(p)?.into_instance_map()?;
            one_hot(&jcseg::to_semantic(&g, &s.scene.transform())?, 4)?
        }
        None => s.scene.build()?.1,
    };
    if !(s.margin.is_finite() && s.margin > 0.0) {
        return Err(Failure::usage("--margin must be positive"));
    }
    let theta = LogitField::new(
        y.shape().clone(),
        y.channels(),
        y.values().iter().map(|v| s.margin * v).collect(),
    )?;
    let w = load_weights(s.weights.as_deref(), 4)?;
    let cfg = LandscapeConfig {
        loss: s.loss,
        seed,
        resolution: s.resolution,
        span: s.span,
    };
    let m = landscape_scan(&y, &theta, &w, &cfg)?;
    write_text(&out, &m.to_csv())?;
    if !m.flagged.is_empty() {
        eprintln!("{} cells with non-finite loss", m.flagged.len());
    }
    Ok(outcome("landscape", Some(seed), &s, inputs, vec![out]))
}

// postprocess

#[derive(Serialize, Deserialize, Debug, Clone, Copy)]
#[serde(rename_all = "lowercase")]
enum GapChoice {
    Map3,
    Background,
    Dubious,
}

fn postprocess_config(gap: GapChoice, tau: f64, connectivity: Connectivity) -> PostprocessConfig {
    PostprocessConfig {
        gap_mode: match gap {
            GapChoice::Map3 => GapMode::Map3,
            GapChoice::Background => GapMode::Background,
            GapChoice::Dubious => GapMode::Dubious { tau },
        },
        connectivity,
    }
}

#[derive(Args, Debug)]
pub struct PostprocessArgs {
    #[command(flatten)]
    pub common: Common,
    /// Input probability field
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Output instance map (.grd, or .pgm for 2D)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = ["map3", "background", "dubious"])]
    gap_mode: Option<String>,
    /// Threshold of the dubious gap mode
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, value_parser = ["face", "full"])]
    connectivity: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct PostprocessSettings {
    input: Option<PathBuf>,
    out: Option<PathBuf>,
    gap_mode: GapChoice,
    tau: f64,
    connectivity: Connectivity,
}

pub fn postprocess(a: &PostprocessArgs) -> Result<Outcome, Failure> {
    let defaults = PostprocessSettings {
        input: None,
        out: None,
        gap_mode: GapChoice::Map3,
        tau: 0.1,
        connectivity: Connectivity::Face,
    };
    let mut o = Overrides::default();
    o.set("input", a.input.clone())
        .set("out", a.out.clone())
        .set("gap_mode", a.gap_mode.clone())
        .set("tau", a.tau)
        .set("connectivity", a.connectivity.clone());
    let s: PostprocessSettings = resolve(defaults, a.common.config.as_deref(), o)?;
    let input = required(&s.input, "in")?;
    let out = required(&s.out, "out")?;
    let cfg = postprocess_config(s.gap_mode, s.tau, s.connectivity);
    let z = read_grid(&input)?.into_probability_field()?;
    let g = jcseg::postprocess::postprocess(&z, &cfg)?;
    write_instances(&g, &out)?;
    Ok(outcome("postprocess", None, &s, vec![input], vec![out]))
}

// evaluate

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Ground-truth instance maps (repeat, paired with --pred)
    #[arg(long)]
    gt: Vec<PathBuf>,
    /// Predicted instance maps
    #[arg(long)]
    pred: Vec<PathBuf>,
    /// Per-image CSV
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON summary [default: stdout]
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct EvaluateSettings {
    gt: Vec<PathBuf>,
    pred: Vec<PathBuf>,
    out: Option<PathBuf>,
    summary: Option<PathBuf>,
}

pub fn evaluate(a: &EvaluateArgs) -> Result<Outcome, Failure> {
    let defaults = EvaluateSettings {
        gt: vec![],
        pred: vec![],
        out: None,
        summary: None,
    };
    let mut o = Overrides::default();
    o.set("gt", (!a.gt.is_empty()).then(|| a.gt.clone()))
        .set("pred", (!a.pred.is_empty()).then(|| a.pred.clone()))
        .set("out", a.out.clone())
        .set("summary", a.summary.clone());
    let s: EvaluateSettings = resolve(defaults, a.common.config.as_deref(), o)?;
    let out = required(&s.out, "out")?;
    if s.gt.is_empty() || s.gt.len() != s.pred.len() {
        return Err(Failure::usage(format!(
            "need matching --gt and --pred lists, got {} and {}",
            s.gt.len(),
            s.pred.len()
        )));
    }

    let names = ["p05", "rq", "sq", "pq"];
    let mut csv = String::from("image,p05,rq,sq,pq\n");
    let mut sums = [0.0; 4];
    let mut counts = [0.0; 3];
    for (gt_path, pred_path) in s.gt.iter().zip(&s.pred) {
        let gt = read_grid(gt_path)?.into_instance_map()?;
        let pred = read_grid(pred_path)?.into_instance_map()?;
        let r = panoptic(&gt, &pred)?;
        let image = pred_path
            .file_stem()
            .map(|x| x.to_string_lossy().into_owned())
            .unwrap_or_default();
        csv.push_str(&image);
        for (i, n) in names.iter().enumerate() {
            let v = r.values[*n];
            sums[i] += v;
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
        for (c, n) in counts.iter_mut().zip(["tp", "fp", "fn"]) {
            *c += r.values[n];
        }
    }
    write_text(&out, &csv)?;

    let n = s.gt.len() as f64;
    let mean: serde_json::Map<String, serde_json::Value> = names
        .iter()
        .zip(sums)
        .map(|(k, v)| (k.to_string(), json!(v / n)))
        .collect();
    let summary = json!({
        "images": s.gt.len(),
        "mean": mean,
        "tp": counts[0],
        "fp": counts[1],
        "fn": counts[2],
    });
    write_json(s.summary.as_deref(), &summary)?;

    let mut outputs = vec![out];
    outputs.extend(s.summary.iter().cloned());
    let inputs = s.gt.iter().chain(&s.pred).cloned().collect();
    Ok(outcome("evaluate", None, &s, inputs, outputs))
}

// train-toy

#[derive(Args, Debug)]
pub struct TrainToyArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long, value_parser = ["ce", "j", "jc", "bwm", "dsc"])]
    loss: Option<String>,
    /// Step size [default: 1.0 for gd, 1e-4 for adam]
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    log_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["gd", "adam"])]
    optimizer: Option<String>,
    /// Standard deviation of the initial logits
    #[arg(long)]
    init_scale: Option<f64>,
    #[arg(long, value_parser = ["map3", "background", "dubious"])]
    gap_mode: Option<String>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, value_parser = ["face", "full"])]
    connectivity: Option<String>,
    /// JSON matrix of pair weights
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Trace CSV
    #[arg(long)]
    out: Option<PathBuf>,
    /// Final logits as a grid
    #[arg(long)]
    logits_out: Option<PathBuf>,
    /// Final probabilities as a grid, input for `postprocess`
    #[arg(long)]
    probs_out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum OptimizerChoice {
    Gd,
    Adam,
}

#[derive(Serialize, Deserialize)]
struct TrainToySettings {
    #[serde(flatten)]
    scene: SceneSettings,
    loss: LossKind,
    step_size: Option<f64>,
    iterations: usize,
    log_every: usize,
    seed: Option<u64>,
    optimizer: OptimizerChoice,
    init_scale: f64,
    gap_mode: GapChoice,
    tau: f64,
    connectivity: Connectivity,
    weights: Option<PathBuf>,
    out: Option<PathBuf>,
    logits_out: Option<PathBuf>,
    probs_out: Option<PathBuf>,
}

pub fn train_toy(a: &TrainToyArgs) -> Result<Outcome, Failure> {
    let d = TrainConfig::default();
    let defaults = TrainToySettings {
        scene: SceneSettings::default(),
        loss: d.loss,
        step_size: None,
        iterations: d.iterations,
        log_every: d.log_every,
        seed: None,
        optimizer: OptimizerChoice::Gd,
        init_scale: d.init_scale,
        gap_mode: GapChoice::Background,
        tau: 0.1,
        connectivity: d.postprocess.connectivity,
        weights: None,
        out: None,
        logits_out: None,
        probs_out: None,
    };
    let mut o = Overrides::default();
    a.scene.apply(&mut o);
    o.set("loss", a.loss.clone())
        .set("step_size", a.step_size)
        .set("iterations", a.iterations)
        .set("log_every", a.log_every)
        .set("seed", a.seed)
        .set("optimizer", a.optimizer.clone())
        .set("init_scale", a.init_scale)
        .set("gap_mode", a.gap_mode.clone())
        .set("tau", a.tau)
        .set("connectivity", a.connectivity.clone())
        .set("weights", a.weights.clone())
        .set("out", a.out.clone())
        .set("logits_out", a.logits_out.clone())
        .set("probs_out", a.probs_out.clone());
    let mut s: TrainToySettings = resolve(defaults, a.common.config.as_deref(), o)?;
    let seed = fill_seed(&mut s.seed);
    let out = required(&s.out, "out")?;
    let (optimizer, default_step) = match s.optimizer {
        OptimizerChoice::Gd => (Optimizer::Gd, 1.0),
        OptimizerChoice::Adam => (Optimizer::adam(), 1e-4),
    };
    let step_size = *s.step_size.get_or_insert(default_step);
    let cfg = TrainConfig {
        loss: s.loss,
        step_size,
        iterations: s.iterations,
        log_every: s.log_every,
        seed,
        optimizer,
        init_scale: s.init_scale,
        postprocess: postprocess_config(s.gap_mode, s.tau, s.connectivity),
    };
    let (g, y) = s.scene.build()?;
    let w = load_weights(s.weights.as_deref(), 4)?;
    let trace = train(&g, &y, &cfg, &w)?;
    write_text(&out, &trace.to_csv())?;
    let mut outputs = vec![out];
    if let Some(p) = &s.logits_out {
        write_grid(&RawGrid::from(&trace.final_logits), p)?;
        outputs.push(p.clone());
    }
    if let Some(p) = &s.probs_out {
        write_grid(&RawGrid::from(&trace.final_logits.softmax()?), p)?;
        outputs.push(p.clone());
    }
    let summary = json!({
        "loss": s.loss.id(),
        "final_loss": trace.losses.last(),
        "final_pq": trace.final_pq(),
        "first_notch_correct": trace.first_notch_correct,
        "first_all_correct": trace.first_all_correct,
        "first_pq_one": trace.first_pq_one,
    });
    write_json(None, &summary)?;
    let inputs = s.weights.iter().cloned().collect();
    Ok(outcome("train-toy", Some(seed), &s, inputs, outputs))
}
