use ide_stability::fundamental::{fundamental_matrix, identity_residuals};
use ide_stability::lyapunov::{lyapunov_collocate, lyapunov_direct, property_residuals};
use ide_stability::simulator::{cauchy_check, decay_slope, random_initial};
use ide_stability::{KernelSpec, Piece};
use nalgebra::{dmatrix, DMatrix};

fn half() -> KernelSpec {
    KernelSpec::constant(1.0, dmatrix![0.5]).unwrap()
}

fn orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

#[test]
fn k_residuals_are_second_order() {
    let k = half();
    let c = k.derive_constants(&DMatrix::identity(1, 1)).unwrap();
    let mut left = Vec::new();
    let mut right = Vec::new();
    for step in [4e-3, 2e-3, 1e-3] {
        let kk = fundamental_matrix(&k, &c, 3.0, step).unwrap();
        let r = identity_residuals(&k, &c, &kk).unwrap();
        left.push(r.left_form);
        right.push(r.right_form);
    }
    for o in orders(&left).into_iter().chain(orders(&right)) {
        assert!(o > 1.8, "left {left:?}, right {right:?}");
    }
}

#[test]
fn stable_k_decays() {
    let k = half();
    let c = k.derive_constants(&DMatrix::identity(1, 1)).unwrap();
    let kk = fundamental_matrix(&k, &c, 20.0, 1e-2).unwrap();
    assert!(decay_slope(&kk, 1.0) < -0.5);
}

#[test]
fn cauchy_formula_converges() {
    let k = KernelSpec::scalar_affine(1.0, 0.3, -0.8).unwrap();
    let c = k.derive_constants(&DMatrix::identity(1, 1)).unwrap();
    let mut dev = Vec::new();
    for step in [2e-2, 1e-2, 5e-3] {
        let kk = fundamental_matrix(&k, &c, 3.0, step).unwrap();
        let phi = random_initial(1, 1.0, step, 4, 3, 0).unwrap();
        dev.push(cauchy_check(&k, &kk, &phi, &[0.5, 1.5, 2.5]).unwrap());
    }
    for o in orders(&dev) {
        assert!(o > 0.9, "{dev:?}");
    }
}

#[test]
fn direct_and_collocation_tables_converge_together() {
    let k = half();
    let c = k.derive_constants(&DMatrix::identity(1, 1)).unwrap();
    let kk = fundamental_matrix(&k, &c, 22.0, 1e-3).unwrap();
    let mut gap = Vec::new();
    for n in [25, 50, 100] {
        let a = lyapunov_collocate(&k, &c, n).unwrap();
        let b = lyapunov_direct(&k, &c, &kk, n).unwrap();
        gap.push(a.values().iter().zip(b.values()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max));
    }
    for o in orders(&gap) {
        assert!(o > 1.0, "{gap:?}");
    }
}

#[test]
fn lyapunov_residuals_shrink_and_symmetry_holds_for_a_matrix_kernel() {
    let k = KernelSpec::new(
        2,
        1.0,
        vec![
            Piece { start: -1.0, end: -0.4, coeffs: vec![dmatrix![0.2, -0.5; 0.3, 0.1], dmatrix![0.1, 0.0; -0.2, 0.3]] },
            Piece { start: -0.4, end: 0.0, coeffs: vec![dmatrix![-0.3, 0.2; 0.0, 0.4]] },
        ],
    )
    .unwrap();
    let w = dmatrix![1.5, 0.2; 0.2, 1.0];
    let c = k.derive_constants(&w).unwrap();
    let mut worst = Vec::new();
    for n in [20, 40, 80] {
        let t = lyapunov_collocate(&k, &c, n).unwrap();
        let u0 = t.node(0);
        assert!((&u0 - u0.transpose() - &c.p).amax() < 1e-8);
        let kk = fundamental_matrix(&k, &c, 2.0, t.step() / 4.0).unwrap();
        let r = property_residuals(&t, &k, &kk).unwrap();
        worst.push(r.max());
    }
    assert!(worst.windows(2).all(|w| w[1] < 0.5 * w[0]), "{worst:?}");
}
