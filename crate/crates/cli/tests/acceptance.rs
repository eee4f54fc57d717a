//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use jcseg::gradcheck::{check_random, random_problem, GradCheck, DEFAULT_STEP};
use jcseg::grid::{BACKGROUND, CELL, GAP, TOUCHING};
use jcseg::losses::{jc_loss, j_loss};
use jcseg::metrics::{panoptic, panoptic_from_matching, InstanceMatch, InstanceMatching};
use jcseg::postprocess::{map_decision, resolve_gaps, to_instances};
use jcseg::simulators::{
    mcc_j_correlation, run_imbalance_sim, run_shrinkwrap, Classifier, ImbalanceSimConfig,
    ShrinkwrapConfig,
};
use jcseg::trainer::{train, TrainConfig};
use jcseg::{
    generate_scene, one_hot, to_semantic, ClassMode, Connectivity, GapMode, GridShape,
    InstanceMap, LossKind, PairWeights, PostprocessConfig, ProbabilityField, SceneSpec,
    SemanticMap, TransformConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

// 1

fn gradients() -> Verdict {
    let start = Instant::now();
    let mut worst = Vec::new();
    for kind in LossKind::ALL {
        let mut g = GradCheck::default();
        for dims in [&[8, 8][..], &[4, 4, 4]] {
            let r = check_random(kind, 7, 100, dims, 4, DEFAULT_STEP).unwrap();
            g.max_rel_err = g.max_rel_err.max(r.max_rel_err);
            g.max_entry_rel_err = g.max_entry_rel_err.max(r.max_entry_rel_err);
        }
        worst.push((kind, g));
    }
    let t = secs(start);
    let max = worst.iter().map(|w| w.1.max_rel_err).fold(0.0, f64::max);
    let per: Vec<String> = worst
        .iter()
        .map(|(k, g)| format!("{k} {:.1e} (entry {:.1e})", g.max_rel_err, g.max_entry_rel_err))
        .collect();
    verdict(
        max < 1e-4 && t < 30.0,
        format!(
            "gradient rel err {} < 1e-4 over 100 8x8 + 100 4x4x4 problems; {t:.1} s < 30 s",
            per.join(", ")
        ),
    )
}

// 2

fn optimum() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut seed = 0;
    let mut done = 0;
    while done < 50 {
        let (y, _) = random_problem(seed, &[8, 8], 4).unwrap();
        seed += 1;
        if y.channel_sums().iter().any(|&s| s == 0.0) {
            continue;
        }
        worst = worst.max(jc_loss(&y, &y, &PairWeights::uniform(4)).unwrap().total);
        done += 1;
    }
    verdict(worst < 1e-6, format!("max L_JC(y, y) = {worst:.1e} < 1e-6 over 50 targets"))
}

// 3

fn hand_oracle() -> Verdict {
    let shape = GridShape::new(&[1, 2]).unwrap();
    let y = one_hot(&SemanticMap::new(shape.clone(), vec![0, 1]).unwrap(), 2).unwrap();
    let z = ProbabilityField::new(shape, 2, vec![0.6, 0.4, 0.3, 0.7]).unwrap();
    let w = PairWeights::uniform(2);
    let j = j_loss(&y, &z, &w).unwrap().total;
    let jc = jc_loss(&y, &z, &w).unwrap().total;
    // alpha = 0.6 and 0.7, beta = 0.7 and 0.6, so each pair term is -ln 0.65.
    let oracle_j = -2.0 * 0.65f64.ln();
    let oracle_jc = oracle_j - (0.6f64.ln() + 0.7f64.ln()) / 2.0;
    verdict(
        (j - 0.8616).abs() < 1e-3
            && (jc - 1.2954).abs() < 1e-3
            && (j - oracle_j).abs() < 1e-12
            && (jc - oracle_jc).abs() < 1e-12,
        format!("j = {j:.4} (0.8616), jc = {jc:.4} (1.2954), tolerance 1e-3"),
    )
}

// 4

fn imbalance() -> Verdict {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for classifier in [Classifier::C1, Classifier::C3] {
        let cfg = ImbalanceSimConfig {
            classifier,
            ..ImbalanceSimConfig::default()
        };
        let table = run_imbalance_sim(&cfg).unwrap();
        let max_abs = |name: &str| table.means(name).iter().map(|v| v.abs()).fold(0.0, f64::max);
        let range = |name: &str| {
            let m = table.means(name);
            m.iter().cloned().fold(f64::MIN, f64::max) - m.iter().cloned().fold(f64::MAX, f64::min)
        };
        let (j, mcc) = (max_abs("j"), max_abs("mcc"));
        let (f1, jac) = (range("f1"), range("jaccard"));
        pass &= j < 0.02 && mcc < 0.02 && f1 > 0.3 && jac > 0.3;
        parts.push(format!(
            "{classifier:?}: |J| {j:.4}, |MCC| {mcc:.4} (< 0.02), F1 range {f1:.3}, Jaccard range {jac:.3} (> 0.3)"
        ));
        if classifier == Classifier::C1 {
            let acc = table.means("accuracy")[0];
            pass &= (acc - 0.9802).abs() < 0.02;
            parts.push(format!("C1 accuracy at pi=0.01 {acc:.4} (0.9802 +- 0.02)"));
        }
    }
    let t = secs(start);
    pass &= t < 60.0;
    parts.push(format!("{t:.1} s < 60 s"));
    verdict(pass, parts.join("; "))
}

// 5

fn correlation() -> Verdict {
    let r = mcc_j_correlation(&ImbalanceSimConfig::correlation()).unwrap().r;
    let at = |pi: f64| r.iter().find(|x| (x.0 - pi).abs() < 1e-12).unwrap().1;
    let (a, b, c) = (at(0.01), at(0.25), at(0.5));
    verdict(
        (0.80..=0.98).contains(&a) && b >= 0.95 && c >= 0.99,
        format!("r = {a:.4} in [0.80, 0.98] at pi=0.01, {b:.4} >= 0.95 at 0.25, {c:.5} >= 0.99 at 0.5"),
    )
}

// 6

fn shrinkwrap() -> Verdict {
    let start = Instant::now();
    let trace = run_shrinkwrap(&ShrinkwrapConfig::default(), &PairWeights::uniform(4)).unwrap();
    let t = secs(start);
    let (ce, j, jc) = trace.peaks();
    let sw = trace.at_shrinkwrap();
    let last = trace.records.last().unwrap();
    let (rce, rj) = (sw.grad_ce / ce, sw.grad_j / j);
    let fin = (last.grad_ce / ce).max(last.grad_j / j).max(last.grad_jc / jc);
    verdict(
        rce < 0.2 && rj > 0.5 && fin < 1e-6 && t < 10.0,
        format!(
            "at iteration {}: CE {rce:.3} < 0.2 of peak, J {rj:.3} > 0.5 of peak; final {fin:.1e} < 1e-6 of peak; {t:.2} s < 10 s",
            trace.shrinkwrap_iteration
        ),
    )
}

// 7

fn at(s: &GridShape, p: [isize; 3]) -> Option<usize> {
    let e = s.padded();
    (0..3)
        .all(|a| p[a] >= 0 && (p[a] as usize) < e[a])
        .then(|| s.index([p[0] as usize, p[1] as usize, p[2] as usize]))
}

fn window(ndim: usize, r: isize, keep: impl Fn(isize, isize, isize) -> bool) -> Vec<[isize; 3]> {
    let rz = if ndim == 3 { r } else { 0 };
    let mut out = Vec::new();
    for dz in -rz..=rz {
        for dy in -r..=r {
            for dx in -r..=r {
                if keep(dz, dy, dx) {
                    out.push([dz, dy, dx]);
                }
            }
        }
    }
    out
}

/// Semantic classes from the definition: Euclidean-ball closing with the
/// outside treated as background by the dilation and skipped by the erosion,
/// then the background / gap / touching / cell cascade.
fn brute_semantic(g: &InstanceMap, k: usize, r: usize, mode: ClassMode) -> Vec<u8> {
    let s = g.shape();
    let n = g.labels().len();
    let pos = |i: usize| {
        let c = s.coords(i);
        [c[0] as isize, c[1] as isize, c[2] as isize]
    };
    let shift = |p: [isize; 3], d: [isize; 3]| at(s, [p[0] + d[0], p[1] + d[1], p[2] + d[2]]);
    let ri = r as isize;
    let ball = window(s.ndim(), ri, |a, b, c| a * a + b * b + c * c <= ri * ri);
    let cube = window(s.ndim(), k as isize, |_, _, _| true);
    let fg: Vec<bool> = g.labels().iter().map(|&l| l != 0).collect();
    let dil: Vec<bool> = (0..n)
        .map(|i| ball.iter().any(|&d| shift(pos(i), d).is_some_and(|q| fg[q])))
        .collect();
    (0..n)
        .map(|i| {
            let l = g.labels()[i];
            if l == 0 {
                let closed = ball.iter().all(|&d| shift(pos(i), d).is_none_or(|q| dil[q]));
                return if mode == ClassMode::Four && closed { GAP } else { BACKGROUND };
            }
            let touching = cube.iter().any(|&d| {
                shift(pos(i), d).is_some_and(|q| g.labels()[q] != 0 && g.labels()[q] != l)
            });
            if touching {
                TOUCHING
            } else {
                CELL
            }
        })
        .collect()
}

fn transform_scenes() -> (Vec<InstanceMap>, Vec<InstanceMap>) {
    let mut two = vec![generate_scene(&SceneSpec::default_notch()).unwrap()];
    for seed in 0..199u64 {
        let d = 3 + (seed % 4) as usize;
        let blobs = 2 + (seed % 5) as usize;
        two.push(generate_scene(&SceneSpec::random_blobs(&[40, 36], d, blobs, seed)).unwrap());
    }
    let three = (0..20u64)
        .map(|seed| {
            let d = 3 + (seed % 3) as usize;
            generate_scene(&SceneSpec::random_blobs(&[20, 18, 16], d, 3, seed)).unwrap()
        })
        .collect();
    (two, three)
}

fn transform_oracle() -> Verdict {
    let start = Instant::now();
    let (two, three) = transform_scenes();
    let mut checked = 0;
    let mut bad = Vec::new();
    for (i, g) in two.iter().chain(&three).enumerate() {
        for k in [1, 2] {
            for r in [1, 3] {
                for mode in [ClassMode::Four, ClassMode::Three] {
                    let cfg = TransformConfig { k, gap_radius: r, mode };
                    checked += 1;
                    if to_semantic(g, &cfg).unwrap().classes() != brute_semantic(g, k, r, mode) {
                        bad.push(format!("scene {i} k={k} r={r} {mode:?}"));
                    }
                }
            }
        }
    }
    let t = secs(start);
    verdict(
        bad.is_empty() && t < 60.0,
        format!(
            "{checked} comparisons on {} 2D and {} 3D scenes, {} mismatches {bad:?}; {t:.1} s < 60 s",
            two.len(),
            three.len(),
            bad.len()
        ),
    )
}

// 8

fn panoptic_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let tp = rng.random_range(1..10u32);
        let m = InstanceMatching {
            matches: (1..=tp)
                .map(|i| InstanceMatch {
                    gt: i,
                    pred: i,
                    iou: rng.random_range(0.5001..=1.0),
                })
                .collect(),
            unmatched_gt: (0..rng.random_range(0..6u32)).map(|i| 100 + i).collect(),
            unmatched_pred: (0..rng.random_range(0..6u32)).map(|i| 200 + i).collect(),
        };
        let r = panoptic_from_matching(&m);
        let (pq, sq, rq) = (r.get("pq").unwrap(), r.get("sq").unwrap(), r.get("rq").unwrap());
        worst = worst.max((pq - sq * rq).abs());
    }

    let g = generate_scene(&SceneSpec::default_notch()).unwrap();
    let perfect = panoptic(&g, &g).unwrap();
    let all_one = ["p05", "rq", "sq", "pq"]
        .iter()
        .all(|n| perfect.get(n) == Some(1.0));

    // 4x5 ground-truth cell; prediction drops its last row of 4 elements
    // and adds nothing, IoU = 16/20.
    let shape = GridShape::new(&[6, 6]).unwrap();
    let gt: Vec<u32> = (0..36).map(|i| (i / 6 < 5 && i % 6 < 4) as u32).collect();
    let pred: Vec<u32> = (0..36).map(|i| (i / 6 < 4 && i % 6 < 4) as u32 * 7).collect();
    let pq = panoptic(
        &InstanceMap::new(shape.clone(), gt).unwrap(),
        &InstanceMap::new(shape, pred).unwrap(),
    )
    .unwrap()
    .get("pq")
    .unwrap();
    verdict(
        worst < 1e-12 && all_one && (pq - 0.8).abs() < 1e-12,
        format!("max |PQ - SQ*RQ| = {worst:.1e} < 1e-12; perfect -> all 1: {all_one}; IoU-0.8 case PQ = {pq}"),
    )
}

// 9

fn recovers(g: &InstanceMap) -> bool {
    let h = to_semantic(g, &TransformConfig::default()).unwrap();
    let z = one_hot(&h, 4).unwrap();
    let cfg = PostprocessConfig {
        gap_mode: GapMode::Map3,
        connectivity: Connectivity::Face,
    };
    let h3 = resolve_gaps(&map_decision(&z).unwrap(), &z, &cfg).unwrap();
    let back = to_instances(&h3, cfg.connectivity).unwrap();
    panoptic(g, &back).unwrap().get("pq") == Some(1.0)
}

fn round_trip() -> Verdict {
    // Default k = 2, so cells are at least 5 elements wide.
    let failed_2d: Vec<u64> = (0..100)
        .filter(|&s| !recovers(&generate_scene(&SceneSpec::random_blobs(&[48, 48], 5, 4, s)).unwrap()))
        .collect();
    let failed_3d: Vec<u64> = (0..20)
        .filter(|&s| {
            !recovers(&generate_scene(&SceneSpec::random_blobs(&[24, 24, 24], 5, 3, s)).unwrap())
        })
        .collect();
    verdict(
        failed_2d.is_empty() && failed_3d.is_empty(),
        format!("PQ = 1 on 100 2D and 20 3D scenes; failing seeds 2D {failed_2d:?}, 3D {failed_3d:?}"),
    )
}

// 10

fn toy_training() -> Verdict {
    let start = Instant::now();
    let spec = SceneSpec::default_notch();
    let g = generate_scene(&spec).unwrap();
    let y = one_hot(&to_semantic(&g, &TransformConfig::default()).unwrap(), 4).unwrap();
    let w = PairWeights::uniform(4);
    let run = |loss| {
        let cfg = TrainConfig {
            loss,
            ..TrainConfig::default()
        };
        train(&g, &y, &cfg, &w).unwrap()
    };
    let jc = run(LossKind::Jc);
    let ce = run(LossKind::Ce);
    let t = secs(start);
    let faster = match (jc.first_notch_correct, ce.first_notch_correct) {
        (Some(a), Some(b)) => a < b,
        (Some(_), None) => true,
        _ => false,
    };
    verdict(
        jc.first_pq_one.is_some() && faster && t < 120.0,
        format!(
            "JC first PQ=1 at {:?} (<= 5000), notch correct JC {:?} vs CE {:?}; {t:.1} s < 120 s",
            jc.first_pq_one, jc.first_notch_correct, ce.first_notch_correct
        ),
    )
}

// 11

fn jcseg(dir: &Path, threads: &str, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_jcseg"))
        .current_dir(dir)
        .arg("--threads")
        .arg(threads)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn determinism() -> Verdict {
    let steps: &[(&str, &[&str])] = &[
        ("g.grd", &["gen-scene", "--out", "g.grd", "--seed", "4"]),
        ("b.pgm", &["gen-scene", "--kind", "random-blobs", "--dims", "48,48", "--side", "5", "--blobs", "4", "--out", "b.pgm"]),
        ("h.grd", &["transform", "--in", "g.grd", "--out", "h.grd"]),
        ("gc.json", &["grad-check", "--loss", "jc", "--trials", "10", "--dims", "4,4,4", "--out", "gc.json"]),
        ("imb.csv", &["sim-imbalance", "--classifier", "c3", "--trials", "200", "--out", "imb.csv", "--summary", "imb-summary.csv"]),
        ("corr.csv", &["sim-imbalance", "--mode", "correlation", "--trials", "200", "--out", "corr.csv"]),
        ("sw.csv", &["sim-shrinkwrap", "--out", "sw.csv"]),
        ("land.csv", &["landscape", "--out", "land.csv"]),
        ("train.csv", &["train-toy", "--iterations", "400", "--out", "train.csv", "--probs-out", "p.grd", "--logits-out", "t.grd"]),
        ("le.json", &["loss-eval", "--loss", "dsc", "--target", "h.grd", "--logits", "t.grd", "--out", "le.json", "--gradient-out", "grad.grd"]),
        ("pred.grd", &["postprocess", "--in", "p.grd", "--out", "pred.grd"]),
        ("ev.csv", &["evaluate", "--gt", "g.grd", "--pred", "pred.grd", "--out", "ev.csv", "--summary", "ev.json"]),
    ];
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (a, b) = (a.path(), b.path());
    let mut problems = Vec::new();
    let mut subcommands = std::collections::BTreeSet::new();
    for (first_out, args) in steps {
        subcommands.insert(args[0]);
        let manifest = a.join(format!("{first_out}.manifest.json"));
        let replay = ["x", "--config", manifest.to_str().unwrap()];
        let result = jcseg(a, "1", args).and_then(|s1| {
            let mut r = replay;
            r[0] = args[0];
            jcseg(b, "8", &r).map(|s8| (s1, s8))
        });
        match result {
            Ok((s1, s8)) if s1 != s8 => problems.push(format!("{} stdout differs", args[0])),
            Ok(_) => {}
            Err(e) => problems.push(e),
        }
    }
    let mut files = 0;
    for entry in fs::read_dir(a).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        if name.ends_with(".manifest.json") {
            continue;
        }
        files += 1;
        if fs::read(a.join(&name)).ok() != fs::read(b.join(&name)).ok() {
            problems.push(format!("{name} differs"));
        }
    }
    verdict(
        problems.is_empty() && subcommands.len() == 10,
        format!(
            "{} subcommands, {files} output files compared between --threads 1 and --threads 8 (replayed from the manifest); problems {problems:?}",
            subcommands.len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 11] = [
        ("gradient correctness", gradients),
        ("optimum consistency", optimum),
        ("hand-oracle values", hand_oracle),
        ("imbalance invariance", imbalance),
        ("MCC-J correlation", correlation),
        ("shrinkwrap dynamics", shrinkwrap),
        ("transform oracle equivalence", transform_oracle),
        ("panoptic identities", panoptic_identities),
        ("end-to-end round trip", round_trip),
        ("toy training", toy_training),
        ("determinism", determinism),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if only.is_some_and(|n| n != i + 1) {
            continue;
        }
        let v = check();
        println!(
            "criterion {:>2} {}: {}: {}",
            i + 1,
            if v.pass { "PASS" } else { "FAIL" },
            name,
            v.detail
        );
        failed += !v.pass as usize;
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
