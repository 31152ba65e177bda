use super::*;
use crate::numerics::DenseMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(n: usize, m: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0))
}

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn jac(m: DenseMatrix, c: usize) -> Jacobian {
    Jacobian::new(m, c).unwrap()
}

fn to_na(m: &DenseMatrix) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// `w_anchor + J^T (J J^T + ridge)^{-1} r` through an explicit LU inverse.
fn direct_solution(j: &DenseMatrix, r: &[f64], anchor: &[f64], ridge: f64) -> Vec<f64> {
    let jn = to_na(j);
    let theta = &jn * jn.transpose() + nalgebra::DMatrix::identity(j.rows(), j.rows()) * ridge;
    let inv = theta.try_inverse().expect("invertible");
    let w = jn.transpose() * inv * nalgebra::DVector::from_row_slice(r);
    w.iter().zip(anchor).map(|(a, b)| a + b).collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num = norm2(&sub(a, b));
    num / norm2(b).max(1e-300)
}

#[test]
fn empty_forget_blocks() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let jr = jac(random_matrix(4, 6, &mut rng), 2);
    let jf = Jacobian::empty(2, 6);
    let b = assemble_blocks(&jr, &jf, 0.1).unwrap();
    assert_eq!(b.theta_ff.shape(), (0, 0));
    assert_eq!(b.theta_rf.shape(), (4, 0));
}

#[test]
fn orthonormal_rows_give_identity_kernel() {
    let m = DenseMatrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
    let b = assemble_blocks(&jac(m, 1), &Jacobian::empty(1, 3), 0.0).unwrap();
    assert_eq!(b.theta_rr, DenseMatrix::identity(2));
}

#[test]
fn block_assembly_matches_direct_assembly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let jr = random_matrix(6, 9, &mut rng);
    let jf = random_matrix(4, 9, &mut rng);
    let blocks = assemble_blocks(&jac(jr.clone(), 2), &jac(jf.clone(), 2), 0.3).unwrap();
    let stacked = jr.vstack(&jf).unwrap();
    let mut direct = stacked.matmul(&stacked.transpose()).unwrap();
    direct.add_diagonal(0.3);
    assert!(blocks.full().sub(&direct).unwrap().max_abs() <= 1e-12);
}

#[test]
fn assemble_rejects_mismatched_jacobians() {
    let jr = jac(DenseMatrix::zeros(2, 3), 1);
    let jf = jac(DenseMatrix::zeros(2, 4), 1);
    assert!(matches!(assemble_blocks(&jr, &jf, 0.1), Err(Error::ShapeMismatch(_))));
}

#[test]
fn zero_residual_returns_anchor() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let j = jac(random_matrix(4, 7, &mut rng), 2);
    let f0 = random_vec(4, &mut rng);
    let anchor = random_vec(7, &mut rng);
    assert_eq!(linearized_solution(&j, &f0, &f0, &anchor, 0.5).unwrap(), anchor);
}

#[test]
fn one_equation_fit() {
    let j = jac(DenseMatrix::from_rows(&[[1.0, 0.0, 0.0]]).unwrap(), 1);
    let w = linearized_solution(&j, &[0.0], &[1.0], &[0.5, 0.5, 0.5], 0.0).unwrap();
    assert_eq!(w, vec![1.5, 0.5, 0.5]);
}

#[test]
fn singular_kernel_without_ridge_fails() {
    let j = jac(DenseMatrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]]).unwrap(), 1);
    assert!(matches!(
        linearized_solution(&j, &[0.0, 0.0], &[1.0, 1.0], &[0.0, 0.0], 0.0),
        Err(Error::NotPositiveDefinite { .. })
    ));
}

#[test]
fn dual_solution_matches_primal_ridge() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (rows, p, ridge) = (6, 10, 0.2);
    let jm = random_matrix(rows, p, &mut rng);
    let f0 = random_vec(rows, &mut rng);
    let y = random_vec(rows, &mut rng);
    let anchor = random_vec(p, &mut rng);
    let got = linearized_solution(&jac(jm.clone(), 2), &f0, &y, &anchor, ridge).unwrap();
    // Primal normal equations: (J^T J + ridge I) (w - w0) = J^T (y - f0).
    let jn = to_na(&jm);
    let h = jn.transpose() * &jn + nalgebra::DMatrix::identity(p, p) * ridge;
    let rhs = jn.transpose() * nalgebra::DVector::from_iterator(rows, y.iter().zip(&f0).map(|(a, b)| a - b));
    let delta = h.cholesky().unwrap().solve(&rhs);
    let want: Vec<f64> = delta.iter().zip(&anchor).map(|(d, a)| d + a).collect();
    assert!(rel_err(&got, &want) < 1e-8);
}

#[test]
fn empty_forget_set_gives_zero_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let jr = jac(random_matrix(4, 8, &mut rng), 2);
    let jf = Jacobian::empty(2, 8);
    let blocks = assemble_blocks(&jr, &jf, 0.1).unwrap();
    let f0 = random_vec(4, &mut rng);
    let y = random_vec(4, &mut rng);
    let s = scrub_shift_ntk(&blocks, &jr, &jf, &f0, &[], &y, &[]).unwrap();
    assert!(s.delta_w.iter().all(|v| *v == 0.0));
}

#[test]
fn redundant_forget_sample_gives_near_zero_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let jr_m = random_matrix(3, 8, &mut rng);
    let coef = [0.5, -1.0, 2.0];
    let row: Vec<f64> = (0..8).map(|k| (0..3).map(|i| coef[i] * jr_m[(i, k)]).sum()).collect();
    let jf_m = DenseMatrix::from_rows(&[row]).unwrap();
    let f0_r = random_vec(3, &mut rng);
    let y_r = random_vec(3, &mut rng);
    let r_f: f64 = (0..3).map(|i| coef[i] * (y_r[i] - f0_r[i])).sum();
    let (jr, jf) = (jac(jr_m, 1), jac(jf_m, 1));
    let blocks = assemble_blocks(&jr, &jf, 1e-10).unwrap();
    let s = scrub_shift_ntk(&blocks, &jr, &jf, &f0_r, &[0.0], &y_r, &[r_f]).unwrap();
    assert!(s.diagnostics.delta_norm < 1e-6, "{}", s.diagnostics.delta_norm);
}

/// `w_lin(D_r) - w_lin(D)` by explicit inversion of the full kernel.
fn direct_shift(jr: &DenseMatrix, jf: &DenseMatrix, rr: &[f64], rf: &[f64], anchor: &[f64], ridge: f64) -> Vec<f64> {
    let full = jr.vstack(jf).unwrap();
    let mut r = rr.to_vec();
    r.extend_from_slice(rf);
    sub(&direct_solution(jr, rr, anchor, ridge), &direct_solution(&full, &r, anchor, ridge))
}

#[test]
fn shift_equals_difference_of_direct_solutions() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut count = 0;
    for &p in &[10usize, 50, 200] {
        for &nr in &[4usize, 20] {
            for &nf in &[2usize, 6] {
                for _ in 0..2 {
                    let ridge = 10f64.powf(rng.random_range(-3.0..0.0));
                    let jr = random_matrix(nr, p, &mut rng);
                    let jf = random_matrix(nf, p, &mut rng);
                    let (f0r, f0f) = (random_vec(nr, &mut rng), random_vec(nf, &mut rng));
                    let (yr, yf) = (random_vec(nr, &mut rng), random_vec(nf, &mut rng));
                    let anchor = random_vec(p, &mut rng);
                    let (jrj, jfj) = (jac(jr.clone(), 2), jac(jf.clone(), 2));
                    let blocks = assemble_blocks(&jrj, &jfj, ridge).unwrap();
                    let got = scrub_shift_ntk(&blocks, &jrj, &jfj, &f0r, &f0f, &yr, &yf).unwrap();
                    let want = direct_shift(&jr, &jf, &sub(&yr, &f0r), &sub(&yf, &f0f), &anchor, ridge);
                    let err = rel_err(&got.delta_w, &want);
                    assert!(err <= 1e-8, "p={p} nr={nr} nf={nf} err={err}");
                    count += 1;
                }
            }
        }
    }
    assert!(count >= 20);
}

#[test]
fn projector_is_idempotent_and_annihilates_retain_span() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let jr = jac(random_matrix(6, 15, &mut rng), 2);
    let proj = RetainProjector::new(&jr, 1e-10).unwrap();
    let v = random_vec(15, &mut rng);
    let pv = proj.apply(&v).unwrap();
    let ppv = proj.apply(&pv).unwrap();
    assert!(norm2(&sub(&ppv, &pv)) <= 1e-9 * norm2(&pv).max(1.0));
    let z = random_vec(6, &mut rng);
    let g = jr.apply_transpose(&z).unwrap();
    assert!(norm2(&proj.apply(&g).unwrap()) <= 1e-9 * norm2(&g));
}

fn gaussian_matrix(n: usize, m: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(n, m, |_, _| rng.sample(rand_distr::StandardNormal))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // With ridge > 0 the defect is about ridge / sigma_min^2; Gaussian
    // Jacobians with at least four parameters per row keep sigma_min^2 >= 0.1.
    #[test]
    fn projector_properties_hold_for_random_instances(seed in 0u64..100_000, rows in 1usize..10, extra in 0usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = 4 * rows + 4 + extra;
        let jr = jac(gaussian_matrix(rows, p, &mut rng), 1);
        let proj = RetainProjector::new(&jr, 1e-10).unwrap();
        let v = random_vec(p, &mut rng);
        let pv = proj.apply(&v).unwrap();
        let ppv = proj.apply(&pv).unwrap();
        prop_assert!(norm2(&sub(&ppv, &pv)) <= 1e-9 * norm2(&pv).max(1.0));
        let g = jr.apply_transpose(&random_vec(rows, &mut rng)).unwrap();
        prop_assert!(norm2(&proj.apply(&g).unwrap()) <= 1e-9 * norm2(&g));
    }
}

#[test]
fn newton_shift_vanishes_at_zero_gradient() {
    let arch = ArchSpec::linear(2, 2);
    let w = [1.0, 0.0, 0.0, 1.0];
    let x = DenseMatrix::from_rows(&[[0.3, -0.2], [1.0, 2.0]]).unwrap();
    let y = crate::model::forward(&arch, &w, &x).unwrap();
    let data = LabeledSet::new(x, y).unwrap();
    let s = newton_fisher_shift(&arch, &w, &data, 0.1, LossKind::Mse).unwrap();
    assert!(s.delta_w.iter().all(|v| v.abs() < 1e-15));
}

#[test]
fn newton_on_scalar_quadratic_jumps_to_minimum() {
    // One input x = sqrt(h), c = 2 with target only on output 0: the loss in
    // w[0] is 0.5 h (w - a)^2.
    let (h, a, w0) = (3.0_f64, 0.7, -1.2);
    let arch = ArchSpec::linear(1, 2);
    let x = DenseMatrix::from_rows(&[[libm::sqrt(h)]]).unwrap();
    let y = DenseMatrix::from_rows(&[[libm::sqrt(h) * a, 0.0]]).unwrap();
    let data = LabeledSet::new(x, y).unwrap();
    let s = newton_fisher_shift(&arch, &[w0, 0.0], &data, 1e-12, LossKind::Mse).unwrap();
    assert!((s.delta_w[0] - (a - w0)).abs() < 1e-9);
}

#[test]
fn tall_newton_matches_pseudo_inverse_and_ntk() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // 8 samples, c = 2, p = 3 * 2 = 6 < 16 rows.
    let arch = ArchSpec::linear(3, 2);
    let x = random_matrix(8, 3, &mut rng);
    let y = random_matrix(8, 2, &mut rng);
    let w = random_vec(6, &mut rng);
    let data = LabeledSet::new(x.clone(), y.clone()).unwrap();
    let s = newton_fisher_shift(&arch, &w, &data, 1e-10, LossKind::Mse).unwrap();
    let j = jacobian(&arch, &w, &x).unwrap();
    let f = crate::model::forward(&arch, &w, &x).unwrap();
    let g = sub(f.as_slice(), y.as_slice());
    let pinv = crate::numerics::pseudo_inverse(j.matrix());
    let want: Vec<f64> = pinv.mat_vec(&g).unwrap().iter().map(|v| -v).collect();
    assert!(rel_err(&s.delta_w, &want) < 1e-6);
    let ntk = linearized_solution(&j, f.as_slice(), y.as_slice(), &w, 1e-10).unwrap();
    assert!(rel_err(&sub(&ntk, &w), &s.delta_w) < 1e-6);
}

#[test]
fn wide_newton_matches_ntk_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let arch = ArchSpec::linear(6, 2);
    let x = random_matrix(3, 6, &mut rng);
    let y = random_matrix(3, 2, &mut rng);
    let w = random_vec(12, &mut rng);
    let data = LabeledSet::new(x.clone(), y.clone()).unwrap();
    let s = newton_fisher_shift(&arch, &w, &data, 0.05, LossKind::Mse).unwrap();
    let j = jacobian(&arch, &w, &x).unwrap();
    let f = crate::model::forward(&arch, &w, &x).unwrap();
    let ntk = linearized_solution(&j, f.as_slice(), y.as_slice(), &w, 0.05).unwrap();
    assert!(rel_err(&sub(&ntk, &w), &s.delta_w) < 1e-10);
}

#[test]
fn trapezium_collapses_to_base() {
    let w = trapezium_correct(&[0.3, 0.1], &[0.3, 0.1], &[1.0, -2.0]).unwrap();
    assert!(norm2(&sub(&w, &[1.0, -2.0])) < 1e-15);
}

#[test]
fn trapezium_rectangle() {
    let w = trapezium_correct(&[0.0, 1.0], &[0.0, 0.0], &[1.0, 0.0]).unwrap();
    assert_eq!(w, vec![1.0, 1.0]);
}

fn check_trapezium(w_d: &[f64], lin_d: &[f64], lin_dr: &[f64]) -> Vec<f64> {
    let out = trapezium_correct(w_d, lin_d, lin_dr).unwrap();
    let top = sub(&out, w_d);
    let base = sub(lin_dr, lin_d);
    // Parallel bases: the 2-D cross product vanishes.
    assert!((top[0] * base[1] - top[1] * base[0]).abs() < 1e-12);
    let leg_a = norm2(&sub(w_d, lin_d));
    let leg_b = norm2(&sub(&out, lin_dr));
    assert!((leg_a - leg_b).abs() < 1e-12);
    out
}

#[test]
fn trapezium_geometric_constraints() {
    // Leg leaning towards the other base vertex: the top base shrinks.
    assert_eq!(check_trapezium(&[1.0, 1.0], &[0.0, 0.0], &[2.0, 0.0]), vec![1.0, 1.0]);
    // Legs flaring outwards: top base = base + 2 sin(a) * leg = 2 + 2.
    assert_eq!(check_trapezium(&[-1.0, 1.0], &[0.0, 0.0], &[2.0, 0.0]), vec![3.0, 1.0]);
    check_trapezium(&[0.4, -0.9], &[0.1, 0.2], &[-1.3, 0.7]);
}

#[test]
fn trapezium_rejects_degenerate_base() {
    assert_eq!(trapezium_correct(&[1.0], &[0.5], &[0.5]), Err(Error::DegenerateDirection));
}

#[test]
fn identity_curvature_equals_plain_blocks() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let jr = jac(random_matrix(4, 7, &mut rng), 2);
    let jf = jac(random_matrix(2, 7, &mut rng), 2);
    let f0r = random_matrix(2, 2, &mut rng);
    let f0f = random_matrix(1, 2, &mut rng);
    let a = ce_curvature_blocks(&jr, &jf, &f0r, &f0f, 0.1, Curvature::Identity).unwrap();
    assert_eq!(a, assemble_blocks(&jr, &jf, 0.1).unwrap());
}

#[test]
fn uniform_logits_softmax_hessian() {
    let h = softmax_hessian(&[0.3, 0.3]);
    let want = DenseMatrix::from_rows(&[[0.25, -0.25], [-0.25, 0.25]]).unwrap();
    assert!(h.sub(&want).unwrap().max_abs() < 1e-15);
}

#[test]
fn softmax_hessian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let logits = random_vec(4, &mut rng);
    let y = [0.0, 0.0, 1.0, 0.0];
    let h = softmax_hessian(&logits);
    let step = 1e-4;
    for a in 0..4 {
        let mut up = logits.clone();
        let mut dn = logits.clone();
        up[a] += step;
        dn[a] -= step;
        let gu = LossKind::CrossEntropy.output_gradient(&up, &y);
        let gd = LossKind::CrossEntropy.output_gradient(&dn, &y);
        for b in 0..4 {
            let fd = (gu[b] - gd[b]) / (2.0 * step);
            assert!((fd - h[(b, a)]).abs() < 1e-6);
        }
    }
}

#[test]
fn softmax_curvature_shift_matches_direct_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (c, nr, nf, p, ridge) = (3, 4, 2, 30, 0.05);
    let jr_m = random_matrix(nr * c, p, &mut rng);
    let jf_m = random_matrix(nf * c, p, &mut rng);
    let f0r = random_matrix(nr, c, &mut rng);
    let f0f = random_matrix(nf, c, &mut rng);
    let (jr, jf) = (jac(jr_m.clone(), c), jac(jf_m.clone(), c));
    let blocks = ce_curvature_blocks(&jr, &jf, &f0r, &f0f, ridge, Curvature::Softmax).unwrap();
    assert!(!blocks.is_symmetric());
    let rr = random_vec(nr * c, &mut rng);
    let rf = random_vec(nf * c, &mut rng);
    let zeros_r = vec![0.0; nr * c];
    let zeros_f = vec![0.0; nf * c];
    let got = scrub_shift_ntk(&blocks, &jr, &jf, &zeros_r, &zeros_f, &rr, &rf).unwrap();

    // Direct: w(D) = J^T (H J J^T + ridge)^{-1} r for each data set.
    let solve = |jm: &DenseMatrix, logits: &DenseMatrix, r: &[f64]| -> Vec<f64> {
        let n = logits.rows();
        let mut hb = nalgebra::DMatrix::zeros(n * c, n * c);
        for s in 0..n {
            let h = softmax_hessian(logits.row(s));
            for a in 0..c {
                for b in 0..c {
                    hb[(s * c + a, s * c + b)] = h[(a, b)];
                }
            }
        }
        let jn = to_na(jm);
        let theta = hb * &jn * jn.transpose() + nalgebra::DMatrix::identity(n * c, n * c) * ridge;
        let x = theta.lu().solve(&nalgebra::DVector::from_row_slice(r)).unwrap();
        (jn.transpose() * x).iter().copied().collect()
    };
    let full_j = jr_m.vstack(&jf_m).unwrap();
    let full_logits = f0r.vstack(&f0f).unwrap();
    let mut r = rr.clone();
    r.extend_from_slice(&rf);
    let want = sub(&solve(&jr_m, &f0r, &rr), &solve(&full_j, &full_logits, &r));
    assert!(rel_err(&got.delta_w, &want) < 1e-8);
}

#[test]
fn digest_tracks_weights() {
    assert_eq!(weights_digest(&[1.0, 2.0]), weights_digest(&[1.0, 2.0]));
    assert_ne!(weights_digest(&[1.0, 2.0]), weights_digest(&[2.0, 1.0]));
}
