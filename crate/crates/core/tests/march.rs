use cqmot::cq::InteractionSequence;
use cqmot::linalg::RMat;
use cqmot::march::{gmres, mot_solve, SolverKind};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn seq(mats: Vec<RMat>) -> InteractionSequence {
    InteractionSequence { mats, stages: 1, tail_ratio: 0.0 }
}

fn scalars(v: &[f64]) -> InteractionSequence {
    seq(v.iter().map(|x| RMat::from_element(1, 1, *x)).collect())
}

fn rhs(v: &[f64]) -> Vec<DVector<f64>> {
    v.iter().map(|x| DVector::from_element(1, *x)).collect()
}

/// Solves the whole history at once: block lower-triangular Toeplitz system.
fn toeplitz_solve(mats: &[RMat], k: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let d = mats[0].nrows();
    let n = k.len();
    let mut big = DMatrix::<f64>::zeros(n * d, n * d);
    for i in 0..n {
        for j in 0..=i.min(mats.len() - 1) {
            big.view_mut((i * d, (i - j) * d), (d, d)).copy_from(&mats[j]);
        }
    }
    let b = DVector::from_iterator(n * d, k.iter().flat_map(|v| v.iter().copied()));
    let x = big.lu().solve(&b).unwrap();
    (0..n).map(|i| x.rows(i * d, d).into_owned()).collect()
}

#[test]
fn scalar_recursion_by_hand() {
    // 2 f_i + f_{i-1} = 1: f = 1/2, 1/4, 3/8, 5/16.
    let r = mot_solve(&scalars(&[2.0, 1.0]), &rhs(&[1.0; 4]), SolverKind::Direct).unwrap();
    let want = [0.5, 0.25, 0.375, 0.3125];
    for (f, w) in r.solution.iter().zip(want) {
        assert!((f[0] - w).abs() < 1e-15);
    }
}

#[test]
fn summation_stops_at_the_retained_length() {
    // Accumulator: f_i = k_i - sum_{j=1}^{min(i, 2)} f_{i-j}.
    let r = mot_solve(&scalars(&[1.0, 1.0, 1.0]), &rhs(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]), SolverKind::Direct).unwrap();
    let got: Vec<f64> = r.solution.iter().map(|v| v[0]).collect();
    assert_eq!(got, vec![1.0, -1.0, 0.0, 1.0, -1.0, 0.0]);
    assert_eq!(r.records.len(), 6);
    assert!(r.records.iter().all(|s| s.converged && s.iterations == 0));
}

#[test]
fn gmres_iteration_counts_on_simple_spectra() {
    let n = 20;
    let b = DVector::from_fn(n, |i, _| 1.0 + i as f64);
    let x0 = DVector::zeros(n);
    let r = gmres(&DMatrix::identity(n, n), &b, &x0, 1e-12, 50);
    assert_eq!(r.iterations, 1);
    assert!((r.x - &b).amax() < 1e-13);
    // Two distinct eigenvalues: the minimal polynomial has degree two.
    let two = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            if i % 2 == 0 {
                1.0
            } else {
                5.0
            }
        } else {
            0.0
        }
    });
    let r = gmres(&two, &b, &x0, 1e-12, 50);
    assert!(r.converged && r.iterations <= 2, "{}", r.iterations);
    let r = gmres(&two, &DVector::zeros(n), &x0, 1e-12, 50);
    assert_eq!((r.iterations, r.residual), (0, 0.0));
    // An exact warm start needs no iterations.
    let exact = two.clone().lu().solve(&b).unwrap();
    let r = gmres(&two, &b, &exact, 1e-12, 50);
    assert_eq!(r.iterations, 0);
    assert!(r.converged);
}

#[test]
fn solver_arguments_are_validated() {
    let s = scalars(&[1.0]);
    assert!(mot_solve(&s, &[DVector::zeros(2)], SolverKind::Direct).is_err());
    assert!(mot_solve(&s, &rhs(&[1.0]), SolverKind::Gmres { tol: 0.0, max_iter: 10 }).is_err());
    assert!(mot_solve(&s, &rhs(&[1.0]), SolverKind::Gmres { tol: 1e-6, max_iter: 0 }).is_err());
    assert!(mot_solve(&scalars(&[0.0]), &rhs(&[1.0]), SolverKind::Direct).is_err());
}

fn block_sequence() -> impl Strategy<Value = (Vec<RMat>, Vec<DVector<f64>>)> {
    (1usize..5, 1usize..4, 2usize..12).prop_flat_map(|(d, terms, steps)| {
        let mats = proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, d * d), terms + 1);
        let k = proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, d), steps);
        (mats, k).prop_map(move |(m, k)| {
            let mats = m
                .into_iter()
                .enumerate()
                .map(|(j, v)| {
                    let mut a = RMat::from_vec(d, d, v);
                    if j == 0 {
                        a += RMat::identity(d, d) * (2.0 * d as f64);
                    }
                    a
                })
                .collect();
            (mats, k.into_iter().map(DVector::from_vec).collect())
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn marching_matches_the_global_toeplitz_solve((mats, k) in block_sequence()) {
        let want = toeplitz_solve(&mats, &k);
        let s = seq(mats);
        let direct = mot_solve(&s, &k, SolverKind::Direct).unwrap();
        let iter = mot_solve(&s, &k, SolverKind::Gmres { tol: 1e-13, max_iter: 50 }).unwrap();
        for ((a, b), w) in direct.solution.iter().zip(&iter.solution).zip(&want) {
            let scale = w.amax().max(1.0);
            prop_assert!((a - w).amax() < 1e-10 * scale);
            prop_assert!((b - w).amax() < 1e-9 * scale);
        }
        prop_assert!(iter.records.iter().all(|r| r.converged && r.iterations <= s.block_dim()));
    }
}
