mod common;

use common::{bisection_sparsemax, dist2, exact_sparsestmax};
use proptest::prelude::*;
use trinas_core::projections::{argmax, circumradius, softmax_norm, sparsemax, sparsestmax};

fn logits(k: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    k.prop_flat_map(|k| prop::collection::vec(-3.0f64..3.0, k))
}

fn unique_argmax(v: &[f64]) -> bool {
    let m = v[argmax(v)];
    v.iter().filter(|&&x| x == m).count() == 1
}

proptest! {
    #[test]
    fn outputs_are_simplex_points(v in logits(1..=7), frac in 0.0f64..=1.0) {
        let r = frac * circumradius(v.len());
        for p in [sparsemax(&v).unwrap(), sparsestmax(&v, r).unwrap()] {
            prop_assert!((p.values().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(p.values().iter().all(|&x| x >= 0.0));
        }
        let s = softmax_norm(&v);
        prop_assert!(s.iter().all(|&x| x > 0.0));
        prop_assert!((s.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn sparsemax_matches_bisection_and_is_shift_invariant(v in logits(1..=8), c in -5.0f64..5.0) {
        let p = sparsemax(&v).unwrap();
        prop_assert!(dist2(p.values(), &bisection_sparsemax(&v)).sqrt() <= 1e-9);
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let q = sparsemax(&shifted).unwrap();
        prop_assert!(dist2(p.values(), q.values()).sqrt() <= 1e-12);
    }

    #[test]
    fn radius_constraint_holds_and_zero_radius_is_sparsemax(v in logits(2..=7), frac in 0.0f64..=1.0) {
        let r = frac * circumradius(v.len());
        let p = sparsestmax(&v, r).unwrap();
        prop_assert!(p.distance_to_center() >= r - 1e-9);
        prop_assert_eq!(sparsestmax(&v, 0.0).unwrap(), sparsemax(&v).unwrap());
    }

    #[test]
    fn dominant_candidate_survives(v in logits(2..=7), frac in 0.0f64..=1.0) {
        prop_assume!(unique_argmax(&v));
        let k = v.len();
        let p = sparsestmax(&v, frac * circumradius(k)).unwrap();
        prop_assert_eq!(p.argmax(), argmax(&v));
        let end = sparsestmax(&v, circumradius(k)).unwrap();
        prop_assert!(end.is_one_hot());
        prop_assert_eq!(end.argmax(), argmax(&v));
    }

    /// The projection is never worse than the best KKT point over all faces.
    #[test]
    fn agrees_with_face_enumeration(v in logits(2..=5), frac in 0.0f64..=1.0) {
        let r = frac * circumradius(v.len());
        let p = sparsestmax(&v, r).unwrap();
        let q = exact_sparsestmax(&v, r);
        let (fp, fq) = (dist2(p.values(), &v), dist2(&q, &v));
        prop_assert!(fp <= fq + 1e-9, "objective {} vs oracle {} for {:?} r={}", fp, fq, v, r);
    }
}

#[test]
fn face_enumeration_solutions_coincide_on_seeded_inputs() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
    let mut worst: f64 = 0.0;
    for _ in 0..400 {
        let k = rng.gen_range(4..=5);
        let v: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = rng.gen_range(0.0..=1.0) * circumradius(k);
        let p = sparsestmax(&v, r).unwrap();
        worst = worst.max(dist2(p.values(), &exact_sparsestmax(&v, r)).sqrt());
    }
    assert!(worst <= 1e-6, "largest deviation {worst}");
}
