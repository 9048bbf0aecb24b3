mod common;

use common::{distill_gradient_error, grad_rel_err, loss_gradient_errors};
use mono3d::losses::depth_laplacian;

const TOL: f64 = 1e-4;

#[test]
fn loss_gradients_match_finite_differences() {
    for seed in [1, 2, 3] {
        for (name, err) in loss_gradient_errors(seed) {
            assert!(err < TOL, "{name} seed {seed}: {err:e}");
        }
    }
}

#[test]
fn distill_gradient_random_pairings() {
    let err = distill_gradient_error(6, 50);
    assert!(err < TOL, "{err:e}");
}

#[test]
fn depth_hand_cases() {
    let sqrt2 = std::f64::consts::SQRT_2;
    let v = depth_laplacian(&[10.0], &[10.0], &[1.0]).unwrap().value;
    assert_eq!(v, 0.0);
    let v = depth_laplacian(&[10.0], &[10.0], &[std::f64::consts::E]).unwrap().value;
    assert!((v - 0.5).abs() < 1e-12);
    let v = depth_laplacian(&[1.0], &[0.0], &[sqrt2]).unwrap().value;
    assert!((v - (1.0 + 0.25 * 2f64.ln())).abs() < 1e-12);
    let v = depth_laplacian(&[10.0], &[9.0], &[2.0]).unwrap().value;
    assert!((v - (sqrt2 / 2.0 + 0.5 * 2f64.ln())).abs() < 1e-12);
    let v = depth_laplacian(&[10.0, 20.0], &[11.0, 20.0], &[1.0, 0.5]).unwrap().value;
    assert!((v - 0.5 * (sqrt2 + 0.5 * 0.5f64.ln())).abs() < 1e-12);
}

#[test]
fn checker_rejects_a_wrong_gradient() {
    let z = [10.0, 20.0];
    let zh = [12.0, 17.0];
    let s = [1.0, 2.0];
    let d = depth_laplacian(&z, &zh, &s).unwrap();
    let flipped: Vec<f64> = d.grad_depth.iter().map(|g| -g).collect();
    let f = |x: &[f64]| depth_laplacian(&z, x, &s).unwrap().value;
    assert!(grad_rel_err(&f, &zh, &flipped, &|_| true) > 1.0);
}
