mod common;

use proptest::prelude::*;
use raw2raw_core::nnmap::loss::{loss_a, loss_m, loss_r, total_loss, LossComponents, LossSwitches};

#[test]
fn losses_match_scalar_loops() {
    assert!(common::loss_oracle_suite(150, 21) < 1e-6);
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let g = common::gradient_check(100, 4);
    assert_eq!(g.failures, 0, "max relative error {}", g.max_rel);
}

#[test]
fn ablations_sum_enabled_terms() {
    let c = LossComponents { r: 0.1, a: 0.2, m: 0.3 };
    assert!((total_loss(c, LossSwitches::default()).unwrap() - 0.6).abs() < 1e-15);
    assert_eq!(total_loss(c, LossSwitches::ablation("m-only").unwrap()).unwrap(), 0.3);
    assert!((total_loss(c, LossSwitches::ablation("no-Lr").unwrap()).unwrap() - 0.5).abs() < 1e-15);
    assert!(total_loss(c, LossSwitches { use_r: false, use_a: false, use_m: false }).is_err());
}

fn tensor(seed: u64, c: usize, h: usize, w: usize) -> ndarray::Array3<f64> {
    common::random_tensor(&mut common::rng(seed), (c, h, w))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn anchor_loss_is_symmetric(seed in any::<u64>(), depth in 1usize..4, n in 1usize..4) {
        let sa: Vec<Vec<_>> = (0..n).map(|i| (0..depth).map(|e| tensor(seed ^ (i * 7 + e) as u64, 2, 4, 4)).collect()).collect();
        let sb: Vec<Vec<_>> = (0..n).map(|i| (0..depth).map(|e| tensor(!seed ^ (i * 7 + e) as u64, 2, 4, 4)).collect()).collect();
        prop_assert_eq!(loss_a(&sa, &sb).unwrap(), loss_a(&sb, &sa).unwrap());
    }

    #[test]
    fn losses_non_negative_and_zero_at_equality(seed in any::<u64>(), n in 1usize..4, c in 1usize..4) {
        let x: Vec<_> = (0..n).map(|i| tensor(seed.wrapping_add(i as u64), c, 3, 5)).collect();
        let y: Vec<_> = (0..n).map(|i| tensor(seed.wrapping_mul(31).wrapping_add(i as u64), c, 3, 5)).collect();
        prop_assert!(loss_r(&x, &y).unwrap() > 0.0);
        prop_assert_eq!(loss_r(&x, &x).unwrap(), 0.0);
        prop_assert!(loss_m(&x, &y, &y, &x).unwrap() > 0.0);
        prop_assert_eq!(loss_m(&x, &x, &y, &y).unwrap(), 0.0);
        let s: Vec<Vec<_>> = x.iter().map(|t| vec![t.clone()]).collect();
        prop_assert_eq!(loss_a(&s, &s).unwrap(), 0.0);
    }
}
