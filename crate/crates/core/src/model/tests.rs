use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(n: usize, m: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0))
}

fn finite_difference_check(arch: &ArchSpec, w: &[f64], x: &DenseMatrix) {
    let jac = jacobian(arch, w, x).unwrap();
    let c = arch.output_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let total = jac.rows() * jac.params();
    let picks = (total / 20).max(20);
    for _ in 0..picks {
        let r = rng.random_range(0..jac.rows());
        let k = rng.random_range(0..jac.params());
        let (i, j) = (r / c, r % c);
        let h = 1e-5 * (1.0 + w[k].abs());
        let mut wp = w.to_vec();
        let mut wm = w.to_vec();
        wp[k] += h;
        wm[k] -= h;
        let xi = x.select_rows(&[i]);
        let fp = forward(arch, &wp, &xi).unwrap()[(0, j)];
        let fm = forward(arch, &wm, &xi).unwrap()[(0, j)];
        let fd = (fp - fm) / (2.0 * h);
        let an = jac.matrix()[(r, k)];
        let rel = (fd - an).abs() / an.abs().max(1e-6);
        assert!(rel <= 1e-4 || (fd - an).abs() < 1e-9, "entry ({r},{k}): fd {fd} vs {an}");
    }
}

#[test]
fn linear_zero_weights_give_zero_outputs() {
    let arch = ArchSpec::linear(3, 2);
    let out = forward(&arch, &[0.0; 6], &random_matrix(4, 3, 1)).unwrap();
    assert_eq!(out.max_abs(), 0.0);
}

#[test]
fn linear_identity_weights() {
    let arch = ArchSpec::linear(3, 3);
    let w = DenseMatrix::identity(3).into_vec();
    let x = random_matrix(5, 3, 2);
    assert_eq!(forward(&arch, &w, &x).unwrap(), x);
}

#[test]
fn forward_rejects_bad_shapes() {
    let arch = ArchSpec::linear(3, 2);
    assert!(matches!(forward(&arch, &[0.0; 5], &random_matrix(1, 3, 0)), Err(Error::ShapeMismatch(_))));
    assert!(matches!(forward(&arch, &[0.0; 6], &random_matrix(1, 4, 0)), Err(Error::ShapeMismatch(_))));
}

#[test]
fn mlp_golden_forward() {
    // Frozen after the finite-difference test below passed for this model.
    let arch = ArchSpec::mlp(3, &[4], 2, Activation::Tanh);
    let w = arch.init_weights(7);
    let x = DenseMatrix::from_rows(&[[0.5, -1.0, 2.0]]).unwrap();
    let out = forward(&arch, &w, &x).unwrap();
    let golden = [GOLDEN_0, GOLDEN_1];
    for (o, g) in out.row(0).iter().zip(golden) {
        assert!((o - g).abs() < 1e-12, "{o} vs {g}");
    }
}

const GOLDEN_0: f64 = 0.25778789703637084;
const GOLDEN_1: f64 = -0.03509881949539595;

#[test]
fn linear_jacobian_is_kronecker_pattern() {
    let arch = ArchSpec::linear(3, 2);
    let x = random_matrix(2, 3, 4);
    let jac = jacobian(&arch, &[0.3; 6], &x).unwrap();
    assert_eq!(jac.matrix().shape(), (4, 6));
    for i in 0..2 {
        for j in 0..2 {
            let row = jac.matrix().row(i * 2 + j);
            for cls in 0..2 {
                for k in 0..3 {
                    let want = if cls == j { x[(i, k)] } else { 0.0 };
                    assert_eq!(row[cls * 3 + k], want);
                }
            }
        }
    }
}

#[test]
fn jacobian_of_empty_input() {
    let arch = ArchSpec::mlp(3, &[4], 2, Activation::Relu);
    let jac = jacobian(&arch, &arch.init_weights(0), &DenseMatrix::zeros(0, 3)).unwrap();
    assert_eq!(jac.matrix().shape(), (0, arch.param_count()));
}

#[test]
fn jacobian_matches_finite_differences() {
    let x = random_matrix(6, 5, 10);
    let lin = ArchSpec::linear(5, 3);
    finite_difference_check(&lin, &lin.init_weights(1), &x);
    let tanh = ArchSpec::mlp(5, &[7, 4], 3, Activation::Tanh);
    finite_difference_check(&tanh, &tanh.init_weights(2), &x);
    let relu = ArchSpec::mlp(5, &[6], 3, Activation::Relu);
    finite_difference_check(&relu, &relu.init_weights(3), &x);
}

#[test]
fn linear_model_linearization_is_exact() {
    let arch = ArchSpec::linear(4, 3);
    let w0 = arch.init_weights(1);
    let w = arch.init_weights(2);
    let x = random_matrix(5, 4, 3);
    let jac = jacobian(&arch, &w0, &x).unwrap();
    let f0 = forward(&arch, &w0, &x).unwrap();
    let lin = jac.apply(&crate::numerics::sub(&w, &w0)).unwrap();
    let f = forward(&arch, &w, &x).unwrap();
    for (k, v) in f.as_slice().iter().enumerate() {
        assert!((v - f0.as_slice()[k] - lin[k]).abs() < 1e-12);
    }
}

fn mse_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.05,
        momentum: 0.0,
        weight_decay: 0.0,
        batch_size: 64,
        epochs,
        loss: LossKind::Mse,
        stop_at_zero_error: false,
        zero_error_patience: 5,
    }
}

#[test]
fn zero_epochs_returns_anchor() {
    let arch = ArchSpec::mlp(3, &[4], 2, Activation::Tanh);
    let w0 = arch.init_weights(5);
    let data = LabeledSet::classification(random_matrix(6, 3, 1), &[0, 1, 0, 1, 1, 0], 2).unwrap();
    let m = train(&arch, &w0, &data, &mse_cfg(0), 1).unwrap();
    assert_eq!(m.w, w0);
    assert_eq!(m.w0, w0);
}

#[test]
fn scalar_gradient_flow_is_monotone() {
    // f(x) = W x with c = 2; only the first output is fitted towards 1.
    let arch = ArchSpec::linear(1, 2);
    let data = LabeledSet::new(DenseMatrix::from_rows(&[[1.0]]).unwrap(), DenseMatrix::from_rows(&[[1.0, 0.0]]).unwrap())
        .unwrap();
    let mut trace = alloc::vec::Vec::new();
    let mut obs = |_: usize, w: &[f64]| {
        trace.push(w[0]);
        true
    };
    let cfg = TrainConfig { learning_rate: 0.1, ..mse_cfg(60) };
    train_from(&arch, &[0.0, 0.0], &[0.0, 0.0], &data, &cfg, 0, Some(&mut obs)).unwrap();
    assert!(trace.windows(2).all(|p| p[1] > p[0] && p[1] <= 1.0));
    assert!((trace.last().unwrap() - 1.0).abs() < 1e-2);
}

#[test]
fn anchored_ridge_matches_closed_form() {
    let (n, d, c) = (12, 4, 3);
    let arch = ArchSpec::linear(d, c);
    let x = random_matrix(n, d, 21);
    let y = random_matrix(n, c, 22);
    let data = LabeledSet::new(x.clone(), y.clone()).unwrap();
    let w0 = arch.init_weights(23);
    let wd = 0.1;
    let cfg = TrainConfig { learning_rate: 0.2, momentum: 0.5, weight_decay: wd, batch_size: n, epochs: 3000, ..mse_cfg(0) };
    let trained = train(&arch, &w0, &data, &cfg, 4).unwrap();

    // Oracle: (X^T X / n + wd I) W_j = X^T y_j / n + wd W0_j for each output row.
    let xm = nalgebra::DMatrix::from_row_slice(n, d, x.as_slice());
    let a = xm.transpose() * &xm / n as f64 + nalgebra::DMatrix::identity(d, d) * wd;
    let chol = a.cholesky().unwrap();
    for j in 0..c {
        let yj = nalgebra::DVector::from_iterator(n, (0..n).map(|i| y[(i, j)]));
        let w0j = nalgebra::DVector::from_row_slice(&w0[j * d..(j + 1) * d]);
        let rhs = xm.transpose() * yj / n as f64 + w0j * wd;
        let sol = chol.solve(&rhs);
        for k in 0..d {
            assert!((sol[k] - trained.w[j * d + k]).abs() < 1e-4, "{} vs {}", sol[k], trained.w[j * d + k]);
        }
    }
}

#[test]
fn training_is_deterministic() {
    let arch = ArchSpec::mlp(3, &[5], 2, Activation::Tanh);
    let w0 = arch.init_weights(1);
    let data = LabeledSet::classification(random_matrix(20, 3, 7), &[0, 1].repeat(10), 2).unwrap();
    let cfg = TrainConfig { batch_size: 4, epochs: 10, ..TrainConfig::default() };
    let a = train(&arch, &w0, &data, &cfg, 3).unwrap();
    let b = train(&arch, &w0, &data, &cfg, 3).unwrap();
    let c = train(&arch, &w0, &data, &cfg, 4).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.w, c.w);
}

#[test]
fn divergence_is_reported() {
    let arch = ArchSpec::linear(2, 2);
    let data = LabeledSet::new(DenseMatrix::from_rows(&[[100.0, 100.0]]).unwrap(), DenseMatrix::from_rows(&[[1.0, 0.0]]).unwrap())
        .unwrap();
    let cfg = TrainConfig { learning_rate: 10.0, ..mse_cfg(200) };
    assert!(matches!(train(&arch, &[0.0; 4], &data, &cfg, 0), Err(Error::Divergence { .. })));
}

#[test]
fn stops_after_patience() {
    let arch = ArchSpec::linear(2, 2);
    let x = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
    let data = LabeledSet::classification(x, &[0, 1], 2).unwrap();
    let mut epochs = 0;
    let mut obs = |e: usize, _: &[f64]| {
        epochs = e;
        true
    };
    let cfg = TrainConfig { batch_size: 2, epochs: 100, learning_rate: 0.1, ..TrainConfig::default() };
    // Identity weights classify both points correctly after the first epoch.
    let w = DenseMatrix::identity(2).into_vec();
    train_from(&arch, &w, &w, &data, &cfg, 0, Some(&mut obs)).unwrap();
    assert_eq!(epochs, 6);
}

#[test]
fn loss_and_error_readouts() {
    let arch = ArchSpec::linear(2, 2);
    let x = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
    let data = LabeledSet::classification(x.clone(), &[0, 1], 2).unwrap();
    let w = DenseMatrix::identity(2).into_vec();
    assert_eq!(loss_and_error(&arch, &w, &data, LossKind::CrossEntropy).unwrap().1, 0.0);

    // Hand computation: logits (1, 0) and (0, 1) with labels 0, 1.
    // CE = -log(e / (e + 1)) for each sample.
    let e = core::f64::consts::E;
    let (loss, _) = loss_and_error(&arch, &w, &data, LossKind::CrossEntropy).unwrap();
    assert!((loss - (-libm::log(e / (e + 1.0)))).abs() < 1e-14);
    // MSE: 0.5 * ||(1,0) - (1,0)||^2 = 0.
    assert_eq!(loss_and_error(&arch, &w, &data, LossKind::Mse).unwrap().0, 0.0);
    // Swapped labels: both wrong, MSE 0.5 * 2 = 1 per sample.
    let swapped = LabeledSet::classification(x, &[1, 0], 2).unwrap();
    assert_eq!(loss_and_error(&arch, &w, &swapped, LossKind::Mse).unwrap(), (1.0, 1.0));
}

#[test]
fn constant_predictor_is_at_chance() {
    let arch = ArchSpec::linear(1, 5);
    let mut w = alloc::vec![0.0; 5];
    w[2] = 1.0;
    let x = DenseMatrix::from_fn(10, 1, |_, _| 1.0);
    let labels: alloc::vec::Vec<usize> = (0..10).map(|i| i % 5).collect();
    let data = LabeledSet::classification(x, &labels, 5).unwrap();
    let (_, err) = loss_and_error(&arch, &w, &data, LossKind::CrossEntropy).unwrap();
    assert!((err - 0.8).abs() < 1e-12);
}

#[test]
fn fisher_of_saturated_model_is_near_zero() {
    let arch = ArchSpec::linear(2, 2);
    let x = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
    let w = [60.0, 0.0, 0.0, 60.0];
    let CovarianceSpec::Diagonal(f) = fisher_diag(&arch, &w, &x).unwrap() else { unreachable!() };
    assert!(f.iter().all(|v| *v <= 1e-8));
}

#[test]
fn fisher_is_invariant_to_duplication_and_order() {
    let arch = ArchSpec::mlp(3, &[4], 3, Activation::Tanh);
    let w = arch.init_weights(8);
    let x = random_matrix(5, 3, 9);
    let doubled = x.vstack(&x).unwrap();
    let reversed = x.select_rows(&[4, 3, 2, 1, 0]);
    let f1 = fisher_diag(&arch, &w, &x).unwrap();
    let CovarianceSpec::Diagonal(a) = &f1 else { unreachable!() };
    for other in [fisher_diag(&arch, &w, &doubled).unwrap(), fisher_diag(&arch, &w, &reversed).unwrap()] {
        let CovarianceSpec::Diagonal(b) = other else { unreachable!() };
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() <= 1e-12 * u.abs().max(1e-12));
        }
    }
}

#[test]
fn fisher_matches_analytic_logistic() {
    // Two-logit softmax = logistic in the logit difference; the Fisher block
    // of the first logit's weights is p (1 - p) x x^T per sample.
    let arch = ArchSpec::linear(2, 2);
    let w = [0.7, -0.3, -0.2, 0.4];
    let x = DenseMatrix::from_rows(&[[1.0, 2.0], [-0.5, 0.3], [0.2, -1.5]]).unwrap();
    let CovarianceSpec::Diagonal(f) = fisher_diag(&arch, &w, &x).unwrap() else { unreachable!() };
    let mut want = [0.0; 4];
    for i in 0..3 {
        let xi = x.row(i);
        let z0 = w[0] * xi[0] + w[1] * xi[1];
        let z1 = w[2] * xi[0] + w[3] * xi[1];
        let p = 1.0 / (1.0 + libm::exp(z1 - z0));
        for cls in 0..2 {
            for k in 0..2 {
                want[cls * 2 + k] += p * (1.0 - p) * xi[k] * xi[k] / 3.0;
            }
        }
    }
    for (a, b) in f.iter().zip(want) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
}
