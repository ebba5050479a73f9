use ide_stability::criterion::l_matrix;
use ide_stability::functional::{approximate_by_special, build_special, QKernel};
use ide_stability::fundamental::{fundamental_derivative, fundamental_matrix};
use ide_stability::lyapunov::{lyapunov_collocate, LyapunovTable};
use ide_stability::simulator::{random_initial, solve_ide};
use ide_stability::{GridFunction, KernelSpec};
use nalgebra::{dmatrix, DMatrix, DVector};

fn half(segments: usize) -> (KernelSpec, LyapunovTable, GridFunction) {
    let kernel = KernelSpec::constant(1.0, dmatrix![0.5]).unwrap();
    let c = kernel.derive_constants(&DMatrix::identity(1, 1)).unwrap();
    let table = lyapunov_collocate(&kernel, &c, segments).unwrap();
    let k = fundamental_matrix(&kernel, &c, 2.0, table.step() / 4.0).unwrap();
    (kernel, table, k)
}

#[test]
fn z_of_special_pairs_is_l() {
    let (kernel, table, k) = half(120);
    let q = QKernel::new(&table, &kernel).unwrap();
    for (t1, t2, g1, g2) in [(0.25, 0.75, 1.0, -0.5), (0.5, 0.5, 2.0, 1.0), (1.0, 1.0 / 3.0, -1.0, 0.7)] {
        let one = |t: f64, g: f64| {
            build_special(&k, 1.0, vec![t], vec![DVector::from_element(1, g)]).unwrap().sample(120).unwrap()
        };
        let z = q.z(&one(t1, g1), &one(t2, g2)).unwrap();
        let l = g1 * l_matrix(&table, t1, t2).unwrap()[(0, 0)] * g2;
        assert!((z - l).abs() < 1e-2 * l.abs(), "τ = ({t1}, {t2}): z {z}, γLγ {l}");
    }
}

#[test]
fn v1_is_positive_on_random_functions() {
    let (kernel, table, _) = half(60);
    let q = QKernel::new(&table, &kernel).unwrap();
    for trial in 0..50 {
        let phi = random_initial(1, 1.0, table.step(), 8, 11, trial).unwrap();
        let v = q.v1(&phi).unwrap();
        assert!(v > 0.0, "trial {trial}: v1 = {v}");
    }
}

#[test]
fn v1_is_the_energy_of_the_solution() {
    let (kernel, table, _) = half(120);
    let q = QKernel::new(&table, &kernel).unwrap();
    let du = table.step();
    let phi = GridFunction::new(-1.0, du, vec![dmatrix![1.0]; 121]).unwrap();
    let x = solve_ide(&kernel, &phi, 20.0, du).unwrap();
    let energy = x.map(|v| v.transpose() * v).unwrap().cumulative_integral().last().unwrap()[(0, 0)];
    let expect = energy + 1.0;
    let v1 = q.v1(&phi).unwrap();
    assert!((v1 - expect).abs() < 1e-2 * expect, "v1 {v1}, energy + weight term {expect}");
}

#[test]
fn q_at_origin_matches_time_integral_of_k_prime() {
    let (kernel, table, _) = half(120);
    let q = QKernel::new(&table, &kernel).unwrap();
    let c = table.constants();
    let k = fundamental_matrix(&kernel, c, 20.0, 1e-3).unwrap();
    let kp = fundamental_derivative(&kernel, &k).unwrap();
    let g = kp.map(|m| m.transpose() * &c.w * m).unwrap();
    let oracle = g.cumulative_integral().last().unwrap().clone();
    let got = q.at(0, 0);
    assert!((got - &oracle).amax() < 5e-2 * oracle.amax(), "Q(0,0) {got} vs {oracle}");
}

#[test]
fn approximation_error_shrinks_with_r() {
    let (_, table, _) = half(96);
    let kernel = KernelSpec::constant(1.0, dmatrix![0.5]).unwrap();
    let k = fundamental_matrix(&kernel, table.constants(), 1.0, table.step()).unwrap();
    let phi = GridFunction::new(-1.0, 1.0 / 9600.0, (0..=9600).map(|i| dmatrix![(i as f64 / 9600.0 - 1.0).powi(2)]).collect())
        .unwrap();
    let mut last = f64::INFINITY;
    for r in [4, 8, 16, 32] {
        let psi = approximate_by_special(&k, 1.0, &phi, r).unwrap();
        // midpoint rule on a fine grid
        let m = 4000;
        let dist: f64 = (0..m)
            .map(|i| {
                let th = -1.0 + (i as f64 + 0.5) / m as f64;
                (psi.eval(th).unwrap()[0] - th * th).abs() / m as f64
            })
            .sum();
        assert!(dist < last, "r = {r}: {dist} not below {last}");
        last = dist;
    }
    assert!(last < 2e-2);
}

#[test]
fn zero_kernel_special_function_is_a_step() {
    let kernel = KernelSpec::zero(2, 1.0).unwrap();
    let c = kernel.derive_constants(&DMatrix::identity(2, 2)).unwrap();
    let k = fundamental_matrix(&kernel, &c, 1.0, 0.05).unwrap();
    let e1 = DVector::from_vec(vec![1.0, 0.0]);
    let s = build_special(&k, 1.0, vec![1.0], vec![e1.clone()]).unwrap();
    for th in [-1.0, -0.6, -0.05] {
        assert_eq!(s.eval(th).unwrap(), e1);
    }
    let v = DVector::from_vec(vec![0.3, -2.0]);
    let phi = GridFunction::new(-1.0, 0.05, vec![DMatrix::from_column_slice(2, 1, v.as_slice()); 21]).unwrap();
    let psi = approximate_by_special(&k, 1.0, &phi, 4).unwrap();
    assert_eq!(psi.gammas()[3], v);
    assert!(psi.gammas()[..3].iter().all(|g| g.amax() == 0.0));
}
