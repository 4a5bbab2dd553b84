use galforge_core::acquisition::{entropy, least_confidence, margin_score, select_top_scores};
use galforge_core::embedding::project_to_ball;
use galforge_core::generator::NoiseSchedule;
use galforge_core::tensor::l2_dist;
use proptest::prelude::*;

fn vec_pair(max_dim: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max_dim).prop_flat_map(|d| {
        (
            prop::collection::vec(-100.0..100.0f64, d),
            prop::collection::vec(-100.0..100.0f64, d),
        )
    })
}

fn distribution() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, 2..12).prop_filter_map("nonzero mass", |w| {
        let z: f64 = w.iter().sum();
        (z > 1e-9).then(|| w.iter().map(|v| v / z).collect())
    })
}

proptest! {
    #[test]
    fn projection_lands_in_ball_and_is_idempotent((s, c) in vec_pair(16), eps in 0.0..50.0f64) {
        let p = project_to_ball(&s, &c, eps).unwrap();
        prop_assert!(l2_dist(&p, &c) <= eps + 1e-9);
        prop_assert_eq!(project_to_ball(&p, &c, eps).unwrap(), p.clone());
        if l2_dist(&s, &c) <= eps {
            prop_assert_eq!(p, s);
        }
    }

    #[test]
    fn projection_is_non_expansive((a, c) in vec_pair(8), seed in any::<u64>(), eps in 0.0..20.0f64) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v + ((seed >> (i % 64)) & 7) as f64 - 3.5).collect();
        let pa = project_to_ball(&a, &c, eps).unwrap();
        let pb = project_to_ball(&b, &c, eps).unwrap();
        prop_assert!(l2_dist(&pa, &pb) <= l2_dist(&a, &b) + 1e-9);
    }

    #[test]
    fn selection_is_shift_invariant(scores in prop::collection::vec(-5i32..5, 1..40), shift in -1000i32..1000, b in 0usize..40) {
        // integer-valued scores keep the shift exact
        let s: Vec<f64> = scores.iter().map(|&v| v as f64).collect();
        let shifted: Vec<f64> = s.iter().map(|v| v + shift as f64).collect();
        let b = b.min(s.len());
        prop_assert_eq!(select_top_scores(&s, b).unwrap(), select_top_scores(&shifted, b).unwrap());
    }

    #[test]
    fn score_ranges(p in distribution()) {
        let c = p.len() as f64;
        let h = entropy(&p);
        prop_assert!(h >= -1e-12 && h <= c.ln() + 1e-12);
        let lc = least_confidence(&p);
        prop_assert!(lc >= -1e-12 && lc <= 1.0 - 1.0 / c + 1e-12);
        let m = margin_score(&p);
        prop_assert!((-1.0..=0.0).contains(&m));
    }

    #[test]
    fn schedules_are_monotone(t in 2usize..200) {
        let s = NoiseSchedule::scaled_linear(t).unwrap();
        let ab = s.alpha_bars();
        prop_assert_eq!(ab[0], 1.0);
        prop_assert!(ab.windows(2).all(|w| w[1] < w[0]));
        prop_assert!(ab[t] < 0.05);
        let mut prod = 1.0;
        for i in 1..=t {
            prod *= 1.0 - s.beta(i);
            prop_assert!((prod - ab[i]).abs() < 1e-12);
        }
    }
}
