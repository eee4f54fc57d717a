use jcseg::metrics::{binary_measures, match_instances, panoptic, panoptic_from_matching, pearson};
use jcseg::metrics::{InstanceMatch, InstanceMatching};
use jcseg::{ConfusionCounts, GridShape, InstanceMap};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn counts() -> impl Strategy<Value = ConfusionCounts> {
    (1u64..500, 0u64..500, 0u64..500, 1u64..500)
        .prop_map(|(tp, fp, fn_, tn)| ConfusionCounts::new(tp, fp, fn_, tn))
}

proptest! {
    #[test]
    fn tversky_with_equal_halves_is_f1(c in counts()) {
        let r = binary_measures(&c, 0.5, 0.5).unwrap();
        prop_assert!((r.get("tversky").unwrap() - r.get("f1").unwrap()).abs() < 1e-12);
    }

    #[test]
    fn j_is_sensitivity_plus_specificity_minus_one(c in counts()) {
        let r = binary_measures(&c, 0.5, 0.5).unwrap();
        let sens = c.tp as f64 / (c.tp + c.fn_) as f64;
        let spec = c.tn as f64 / (c.tn + c.fp) as f64;
        prop_assert!((r.get("j").unwrap() - (sens + spec - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn mcc_and_j_share_their_sign(c in counts()) {
        let r = binary_measures(&c, 0.5, 0.5).unwrap();
        let (j, m) = (r.get("j").unwrap(), r.get("mcc").unwrap());
        prop_assert!(j * m >= 0.0, "j {j} mcc {m}");
        prop_assert!(j.abs() <= 1.0 && m.abs() <= 1.0);
    }

    #[test]
    fn panoptic_ignores_label_names(seed in any::<u64>(), offset in 1u32..1000) {
        let (gt, pred) = random_pair(seed);
        let renamed = InstanceMap::new(
            pred.shape().clone(),
            pred.labels().iter().map(|&l| if l == 0 { 0 } else { l + offset }).collect(),
        ).unwrap();
        let a = panoptic(&gt, &pred).unwrap();
        let b = panoptic(&gt, &renamed).unwrap();
        prop_assert_eq!(a.values, b.values);
    }
}

fn random_pair(seed: u64) -> (InstanceMap, InstanceMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = GridShape::new(&[10, 10]).unwrap();
    let gt: Vec<u32> = (0..100).map(|i| ((i / 10) / 3 + 1) as u32 * ((i % 10 > 1) as u32)).collect();
    let pred = gt
        .iter()
        .map(|&l| if rng.random_bool(0.15) { rng.random_range(0..5) } else { l })
        .collect();
    (
        InstanceMap::new(shape.clone(), gt).unwrap(),
        InstanceMap::new(shape, pred).unwrap(),
    )
}

#[test]
fn pq_is_sq_times_rq_on_random_matchings() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..100 {
        let tp = rng.random_range(0..8u32);
        let m = InstanceMatching {
            matches: (0..tp)
                .map(|i| InstanceMatch { gt: i + 1, pred: i + 1, iou: rng.random_range(0.5001..1.0) })
                .collect(),
            unmatched_gt: (0..rng.random_range(0..5u32)).map(|i| 100 + i).collect(),
            unmatched_pred: (0..rng.random_range(0..5u32)).map(|i| 200 + i).collect(),
        };
        let r = panoptic_from_matching(&m);
        let (pq, sq, rq) = (r.get("pq").unwrap(), r.get("sq").unwrap(), r.get("rq").unwrap());
        assert!((pq - sq * rq).abs() < 1e-12, "{m:?}");
    }
}

#[test]
fn single_cell_with_iou_point_eight() {
    // Prediction covers 8 of 10 ground-truth elements and nothing else.
    let shape = GridShape::new(&[1, 12]).unwrap();
    let gt = InstanceMap::new(shape.clone(), [vec![1; 10], vec![0; 2]].concat()).unwrap();
    let pred = InstanceMap::new(shape, [vec![3; 8], vec![0; 4]].concat()).unwrap();
    let r = panoptic(&gt, &pred).unwrap();
    assert!((r.get("pq").unwrap() - 0.8).abs() < 1e-12);
    assert_eq!(r.get("rq"), Some(1.0));
}

#[test]
fn iou_of_exactly_one_half_does_not_match() {
    let shape = GridShape::new(&[1, 4]).unwrap();
    let gt = InstanceMap::new(shape.clone(), vec![1, 1, 0, 0]).unwrap();
    let pred = InstanceMap::new(shape, vec![0, 1, 1, 0]).unwrap();
    // inter 1, union 3
    assert!(match_instances(&gt, &pred).unwrap().matches.is_empty());
    let shape = GridShape::new(&[1, 4]).unwrap();
    let gt = InstanceMap::new(shape.clone(), vec![1, 1, 0, 0]).unwrap();
    let pred = InstanceMap::new(shape, vec![1, 0, 0, 0]).unwrap();
    // inter 1, union 2
    assert!(match_instances(&gt, &pred).unwrap().matches.is_empty());
}

#[test]
fn pearson_of_a_line_and_a_constant() {
    let x = [1.0, 2.0, 3.0, 4.0];
    assert!((pearson(&x, &[3.0, 5.0, 7.0, 9.0]).unwrap() - 1.0).abs() < 1e-15);
    assert!((pearson(&x, &[-1.0, -2.0, -3.0, -4.0]).unwrap() + 1.0).abs() < 1e-15);
    assert!(pearson(&x, &[2.0; 4]).is_err());
}
