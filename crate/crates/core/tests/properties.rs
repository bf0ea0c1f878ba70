use proptest::prelude::*;

use ctxvad::data::{decode_flo, encode_flo, FlowField};
use ctxvad::eval::{pca_project_2d, roc_auc};
use ctxvad::features::{first_order_stats, histogram_bin};
use ctxvad::inference::classify_object;

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..80).prop_flat_map(|n| {
        (
            prop::collection::vec(0u32..20, n).prop_map(|v| v.into_iter().map(|x| x as f64 / 20.0).collect()),
            prop::collection::vec(any::<bool>(), n),
        )
    })
    .prop_filter("needs both classes", |(_, l)| l.iter().any(|&x| x) && l.iter().any(|&x| !x))
}

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                den += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

proptest! {
    #[test]
    fn auc_matches_pair_counting((scores, labels) in scored_labels()) {
        let auc = roc_auc(&scores, &labels).unwrap().auc;
        prop_assert!((auc - brute_auc(&scores, &labels)).abs() < 1e-12);
    }

    #[test]
    fn auc_invariant_under_increasing_maps((scores, labels) in scored_labels(), k in 0.1f64..5.0) {
        let warped: Vec<f64> = scores.iter().map(|s| (k * s).exp() + 3.0).collect();
        let a = roc_auc(&scores, &labels).unwrap().auc;
        let b = roc_auc(&warped, &labels).unwrap().auc;
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn flipping_labels_mirrors_auc((scores, labels) in scored_labels()) {
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let a = roc_auc(&scores, &labels).unwrap().auc;
        let b = roc_auc(&scores, &flipped).unwrap().auc;
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn roc_curve_is_monotone((scores, labels) in scored_labels()) {
        let roc = roc_auc(&scores, &labels).unwrap();
        prop_assert_eq!(roc.points.first().copied(), Some((0.0, 0.0)));
        prop_assert_eq!(roc.points.last().copied(), Some((1.0, 1.0)));
        for w in roc.points.windows(2) {
            prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn stats_are_shift_aware(values in prop::collection::vec(0.0f64..0.5, 2..200), shift in 0.0f64..0.5) {
        let a = first_order_stats(&values).unwrap();
        let moved: Vec<f64> = values.iter().map(|v| v + shift).collect();
        let b = first_order_stats(&moved).unwrap();
        prop_assert!((b.mean - a.mean - shift).abs() < 1e-12);
        prop_assert!((b.variance - a.variance).abs() < 1e-12);
        prop_assert!(a.variance >= 0.0 && a.energy >= a.mean * a.mean - 1e-15);
        prop_assert!(a.entropy >= 0.0 && a.entropy <= 8.0);
    }

    #[test]
    fn histogram_bins_stay_in_range(x in -2.0f64..3.0) {
        let b = histogram_bin(x);
        prop_assert!(b < 256);
        if (0.0..1.0).contains(&x) {
            prop_assert_eq!(b, (x * 256.0).floor() as usize);
        }
    }

    #[test]
    fn pca_axes_are_orthonormal(
        rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 5..40)
    ) {
        let p = pca_project_2d(&rows).unwrap();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let [c0, c1] = &p.components;
        prop_assert!((dot(c0, c0) - 1.0).abs() < 1e-9);
        prop_assert!((dot(c1, c1) - 1.0).abs() < 1e-9);
        prop_assert!(dot(c0, c1).abs() < 1e-9);
        prop_assert!(p.explained[0] >= p.explained[1] - 1e-12);
        prop_assert!(p.explained[0] + p.explained[1] <= 1.0 + 1e-9);
        prop_assert_eq!(p.points.len(), rows.len());
    }

    #[test]
    fn object_score_stays_in_unit_interval(a in 0.0f64..=1.0, b in 0.0f64..=1.0, mu in 0.01f64..0.99, eta in 0.01f64..0.99) {
        let v = classify_object(a, b, mu, eta);
        prop_assert!((0.0..=1.0).contains(&v.score));
    }

    #[test]
    fn flo_round_trips(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
        let mut rng = ctxvad::rng::Rng64::new(seed);
        let u: Vec<f32> = (0..w * h).map(|_| rng.range(-50.0, 50.0) as f32).collect();
        let v: Vec<f32> = (0..w * h).map(|_| rng.range(-50.0, 50.0) as f32).collect();
        let flow = FlowField::new(w, h, u, v).unwrap();
        let bytes = encode_flo(&flow);
        prop_assert_eq!(bytes.len(), 12 + 8 * w * h);
        prop_assert_eq!(decode_flo(&bytes).unwrap(), flow);
    }
}

#[test]
fn pca_on_a_line_explains_everything() {
    let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
    let p = pca_project_2d(&rows).unwrap();
    assert!((p.explained[0] - 1.0).abs() < 1e-9);
    assert!(p.explained[1].abs() < 1e-9);
    let norm = 6f64.sqrt();
    let expected = [1.0 / norm, 2.0 / norm, -1.0 / norm];
    for (c, e) in p.components[0].iter().zip(expected) {
        assert!((c - e).abs() < 1e-9);
    }
}
