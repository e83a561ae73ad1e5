mod common;

use common::*;
use milab_core::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;

#[test]
fn ap_matches_enumeration_oracle() {
    assert_eq!(ap_oracle_mismatches(200, 11), 0);
}

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    prop::collection::vec((prop_oneof![0.0f64..1.0, (0u8..4).prop_map(|v| v as f64 / 4.0)], any::<bool>()), 1..200).prop_map(|v| {
        let (s, mut y): (Vec<f64>, Vec<bool>) = v.into_iter().unzip();
        y[0] = true;
        (s, y)
    })
}

proptest! {
    #[test]
    fn ap_in_unit_interval((s, y) in scored()) {
        let c = average_precision(&s, &y).unwrap();
        prop_assert!((0.0..=1.0).contains(&c.ap));
        prop_assert!(c.points.windows(2).all(|w| w[0].recall <= w[1].recall && w[0].threshold > w[1].threshold));
        prop_assert_eq!(c.points.last().unwrap().recall, 1.0);
    }

    #[test]
    fn ap_invariant_under_increasing_maps((s, y) in scored()) {
        let base = average_precision(&s, &y).unwrap().ap;
        let cfg = SynthSpec::default().config;
        let lifted: Vec<f64> = s.iter().map(|&v| f_prime_from_f(v, &cfg).unwrap()).collect();
        prop_assert_eq!(average_precision(&lifted, &y).unwrap().ap, base);
        let warped: Vec<f64> = s.iter().map(|&v| (3.0 * v).exp() - 7.0).collect();
        prop_assert_eq!(average_precision(&warped, &y).unwrap().ap, base);
    }

    #[test]
    fn ap_ignores_input_order((s, y) in scored(), seed in any::<u64>()) {
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.shuffle(&mut rng(seed));
        let s2: Vec<f64> = idx.iter().map(|&i| s[i]).collect();
        let y2: Vec<bool> = idx.iter().map(|&i| y[i]).collect();
        prop_assert_eq!(average_precision(&s2, &y2).unwrap(), average_precision(&s, &y).unwrap());
    }

    #[test]
    fn constant_scores_give_prevalence(y in prop::collection::vec(any::<bool>(), 1..300)) {
        let mut y = y;
        y[0] = true;
        let prevalence = y.iter().filter(|&&t| t).count() as f64 / y.len() as f64;
        let ap = average_precision(&vec![0.5; y.len()], &y).unwrap().ap;
        prop_assert!((ap - prevalence).abs() < 1e-12);
    }
}

#[test]
fn f32_and_f64_scores_agree() {
    let mut r = rng(3);
    let (s, y) = ap_case(&mut r, false);
    let s32: Vec<f32> = s.iter().map(|&v| v as f32).collect();
    let a = average_precision(&s, &y).unwrap().ap;
    let b = average_precision(&s32, &y).unwrap().ap;
    assert!((a - b).abs() < 1e-9);
}

#[test]
fn random_ranking_is_near_prevalence() {
    // Expected AP of a random ranking slightly exceeds the prevalence
    // (roughly 1.12x here, from the first few positives).
    let ds = generate::<f64>(&SynthSpec::default()).unwrap();
    let mut order: Vec<f64> = (0..ds.len()).map(|i| i as f64).collect();
    let mut r = rng(17);
    let mut total = 0.0;
    for _ in 0..100 {
        order.shuffle(&mut r);
        total += average_precision(&order, ds.truth_labels()).unwrap().ap;
    }
    let prevalence = 100.0 / 210_000.0;
    let mean = total / 100.0;
    assert!(mean > prevalence && mean < 1.3 * prevalence, "mean AP {mean}");
}

#[test]
fn pr_curve_csv_columns() {
    let c = average_precision(&[0.3, 0.3, 0.9], &[true, false, true]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("pr.csv");
    c.write_csv(&p).unwrap();
    let mut rdr = csv::Reader::from_path(&p).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["threshold", "precision", "recall"]);
    let rows: Vec<(f64, f64, f64)> = rdr.deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(rows, vec![(0.9, 1.0, 0.5), (0.3, 2.0 / 3.0, 1.0)]);
}
