use jcseg::losses::{evaluate, evaluate_logits, softmax_backward, value};
use jcseg::{one_hot, GridShape, LogitField, LossKind, PairWeights, ProbabilityField, SemanticMap};
use proptest::prelude::*;

const C: usize = 4;

fn problem() -> impl Strategy<Value = (ProbabilityField, LogitField)> {
    (1usize..4, 2usize..5).prop_flat_map(|(h, w)| {
        let n = h * w;
        (
            prop::collection::vec(0u8..C as u8, n),
            prop::collection::vec(-4.0f64..4.0, n * C),
        )
            .prop_map(move |(cls, t)| {
                let shape = GridShape::new(&[h, w]).unwrap();
                let y = one_hot(&SemanticMap::new(shape.clone(), cls).unwrap(), C).unwrap();
                (y, LogitField::new(shape, C, t).unwrap())
            })
    })
}

fn weights() -> impl Strategy<Value = PairWeights> {
    prop::collection::vec(0.1f64..3.0, C * C).prop_map(|v| {
        let rows = (0..C)
            .map(|i| (0..C).map(|k| if i == k { 0.0 } else { v[i * C + k] }).collect())
            .collect();
        PairWeights::from_rows(rows).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_simplex_vectors((_, t) in problem()) {
        let z = t.softmax().unwrap();
        for e in z.elements() {
            prop_assert!((e.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(e.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn softmax_ignores_per_element_shifts((_, t) in problem(), shift in -50.0f64..50.0) {
        let moved = LogitField::new(
            t.shape().clone(),
            C,
            t.values().iter().map(|x| x + shift).collect(),
        ).unwrap();
        let a = t.softmax().unwrap();
        let b = moved.softmax().unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn one_hot_round_trips((y, _) in problem()) {
        let cls = y.one_hot_classes().unwrap();
        let h = SemanticMap::new(y.shape().clone(), cls.iter().map(|&c| c as u8).collect()).unwrap();
        prop_assert_eq!(one_hot(&h, C).unwrap(), y);
    }

    #[test]
    fn losses_are_nonnegative_and_total_is_component_sum((y, t) in problem()) {
        for kind in LossKind::ALL {
            let v = evaluate_logits(kind, &y, &t, &PairWeights::uniform(C)).unwrap();
            prop_assert!(v.total >= 0.0, "{kind}: {}", v.total);
            let sum: f64 = v.components.iter().map(|c| c.1).sum();
            prop_assert!((v.total - sum).abs() < 1e-12);
        }
    }

    #[test]
    fn j_term_is_linear_in_the_weights((y, t) in problem(), w in weights(), s in 0.1f64..5.0) {
        let z = t.softmax().unwrap();
        let a = evaluate(LossKind::J, &y, &z, &w).unwrap().total;
        let b = evaluate(LossKind::J, &y, &z, &w.scaled(s)).unwrap().total;
        prop_assert!((b - s * a).abs() < 1e-9 * (1.0 + b.abs()));
    }

    #[test]
    fn jc_is_ce_plus_j((y, t) in problem(), w in weights()) {
        let z = t.softmax().unwrap();
        let ce = evaluate(LossKind::Ce, &y, &z, &w).unwrap();
        let j = evaluate(LossKind::J, &y, &z, &w).unwrap();
        let jc = evaluate(LossKind::Jc, &y, &z, &w).unwrap();
        prop_assert!((jc.total - ce.total - j.total).abs() < 1e-12);
        let (gce, gj, gjc) = (ce.gradient.unwrap(), j.gradient.unwrap(), jc.gradient.unwrap());
        for i in 0..gjc.values().len() {
            prop_assert!((gjc.values()[i] - gce.values()[i] - gj.values()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn relabeling_classes_permutes_nothing_but_the_channels(
        (y, t) in problem(),
        perm in Just([0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let permute = |v: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; v.len()];
            for (src, dst) in v.chunks_exact(C).zip(out.chunks_exact_mut(C)) {
                for l in 0..C {
                    dst[perm[l]] = src[l];
                }
            }
            out
        };
        let y2 = ProbabilityField::new(y.shape().clone(), C, permute(y.values())).unwrap();
        let t2 = LogitField::new(t.shape().clone(), C, permute(t.values())).unwrap();
        for kind in LossKind::ALL {
            let a = evaluate_logits(kind, &y, &t, &PairWeights::uniform(C)).unwrap();
            let b = evaluate_logits(kind, &y2, &t2, &PairWeights::uniform(C)).unwrap();
            prop_assert!((a.total - b.total).abs() < 1e-12, "{kind}");
            let ga = permute(a.gradient.unwrap().values());
            for (x, y) in ga.iter().zip(b.gradient.unwrap().values()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_sums_to_zero_per_element((y, t) in problem()) {
        // Softmax outputs are invariant to a common shift of the logits.
        for kind in LossKind::ALL {
            let g = evaluate_logits(kind, &y, &t, &PairWeights::uniform(C)).unwrap().gradient.unwrap();
            for e in g.values().chunks_exact(C) {
                prop_assert!(e.iter().sum::<f64>().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn value_matches_evaluate((y, t) in problem()) {
        let z = t.softmax().unwrap();
        for kind in LossKind::ALL {
            let w = PairWeights::uniform(C);
            let a = evaluate(kind, &y, &z, &w).unwrap();
            let b = value(kind, &y, &z, &w).unwrap();
            prop_assert_eq!(a.total, b.total);
            prop_assert!(b.gradient.is_none());
        }
    }
}

#[test]
fn jc_vanishes_at_one_hot_targets() {
    for seed in 0..20u64 {
        let n = 12;
        let cls: Vec<u8> = (0..n).map(|p| ((p as u64 * 7 + seed) % C as u64) as u8).collect();
        let y = one_hot(&SemanticMap::new(GridShape::new(&[3, 4]).unwrap(), cls).unwrap(), C).unwrap();
        let v = evaluate(LossKind::Jc, &y, &y, &PairWeights::uniform(C)).unwrap();
        assert!(v.total.abs() < 1e-12, "seed {seed}: {}", v.total);
    }
}

#[test]
fn softmax_backward_of_a_linear_loss() {
    // L = sum_j a_j z_j at a single element; dL/dtheta_j = z_j (a_j - a.z).
    let t = LogitField::new(GridShape::new(&[1, 1]).unwrap(), 3, vec![1.0, 2.0, 3.0]).unwrap();
    let z = t.softmax().unwrap();
    let a = [0.5, -1.0, 2.0];
    let g = softmax_backward(&z, &a);
    let dot: f64 = a.iter().zip(z.values()).map(|(x, y)| x * y).sum();
    for j in 0..3 {
        let expect = z.values()[j] * (a[j] - dot);
        assert!((g.values()[j] - expect).abs() < 1e-15);
    }
    let frozen = [0.09003057, 0.24472847, 0.66524096];
    for (x, f) in z.values().iter().zip(frozen) {
        assert!((x - f).abs() < 1e-8);
    }
}
