use std::collections::HashSet;

use cqmot::analysis::condition_number;
use cqmot::basis::{gram, BasisSet, DualBases, FaceExpansion, RwgSystem};
use cqmot::linalg::RMat;
use cqmot::mesh::{Topology, TriangleMesh};
use cqmot::qhelm::{loop_matrix, range_projector, star_matrix, QuasiHelmholtz};
use cqmot::quadrature::gauss_legendre_unit;
use cqmot::Vec3;
use proptest::prelude::*;

fn rank(m: &RMat) -> usize {
    let sv = m.clone().singular_values();
    let tol = sv.max() * 1e-10;
    sv.iter().filter(|s| **s > tol).count()
}

/// Flux of each function on face `t` through the edge `a -> b` of that face,
/// counted along the in-plane outward normal of the face.
fn outward_edge_flux(sys: &RwgSystem, exp: &FaceExpansion, t: usize, a: &Vec3, b: &Vec3, m: usize) -> f64 {
    let Some((_, c)) = exp.per_face[t].iter().find(|(k, _)| *k == m) else { return 0.0 };
    let centroid = sys.mesh.centroid(t);
    let mut nu = (b - a).cross(&sys.normal[t]);
    if nu.dot(&(a - centroid)) < 0.0 {
        nu = -nu;
    }
    let (x, w) = gauss_legendre_unit(3);
    x.iter().zip(&w).map(|(u, w)| w * FaceExpansion::value(sys, t, c, &(a + (b - a) * *u)).dot(&nu)).sum()
}

/// Normal continuity: across every interior edge of the support mesh the two
/// outward fluxes cancel.
fn assert_div_conforming(set: &BasisSet) {
    let sys = &set.support;
    let exp = set.expansion();
    for ed in &sys.topo.edges {
        let (a, b) = (sys.mesh.vertices[ed.v[0]], sys.mesh.vertices[ed.v[1]]);
        let funcs: HashSet<usize> =
            exp.per_face[ed.left].iter().chain(&exp.per_face[ed.right]).map(|(m, _)| *m).collect();
        for m in funcs {
            let fl = outward_edge_flux(sys, &exp, ed.left, &a, &b, m);
            let fr = outward_edge_flux(sys, &exp, ed.right, &a, &b, m);
            assert!((fl + fr).abs() < 1e-12, "function {m}: fluxes {fl} and {fr}");
        }
    }
}

fn total_charge(exp: &FaceExpansion, m: usize) -> f64 {
    exp.per_face.iter().flatten().filter(|(k, _)| *k == m).map(|(_, c)| FaceExpansion::charge(c)).sum()
}

#[test]
fn rwg_functions_on_the_tetrahedron() {
    let sys = RwgSystem::new(TriangleMesh::tetrahedron(1.0).unwrap()).unwrap();
    let set = BasisSet::rwg(sys.clone());
    assert_eq!(set.len(), 6);
    let exp = set.expansion();
    for supp in exp.supports() {
        assert_eq!(supp.len(), 2);
    }
    for m in 0..6 {
        assert_eq!(total_charge(&exp, m), 0.0);
    }
    assert_div_conforming(&set);
}

#[test]
fn bc_functions_on_the_sphere() {
    let db = DualBases::new(TriangleMesh::uv_sphere(1.0, 10, 10).unwrap()).unwrap();
    assert_eq!(db.rwg.len(), 270);
    assert_eq!(db.bc.len(), 270);
    let exp = db.bc.expansion();
    let supports = exp.supports();
    for (e, ed) in db.coarse.topo.edges.iter().enumerate() {
        assert!(total_charge(&exp, e).abs() < 1e-12);
        // Every fine face of the support lies in a coarse face touching an endpoint.
        for &t in &supports[e] {
            let coarse = db.coarse.mesh.faces[t / 6];
            assert!(coarse.contains(&ed.v[0]) || coarse.contains(&ed.v[1]), "edge {e} reaches fine face {t}");
        }
    }
    assert_div_conforming(&db.bc);
    assert_div_conforming(&BasisSet::lift_rwg(&db.coarse, db.fine.clone()).unwrap());
}

#[test]
fn lifted_rwg_matches_coarse_values() {
    let db = DualBases::new(TriangleMesh::icosphere(1.0, 1).unwrap()).unwrap();
    let lifted = BasisSet::lift_rwg(&db.coarse, db.fine.clone()).unwrap();
    let (ce, fe) = (db.rwg.expansion(), lifted.expansion());
    for t in 0..db.coarse.face_count() {
        for k in 6 * t..6 * t + 6 {
            let x = db.fine.mesh.centroid(k);
            for (m, v) in db.rwg.evaluate_on_face(&ce, t, &x) {
                let w = lifted
                    .evaluate_on_face(&fe, k, &x)
                    .into_iter()
                    .find(|(n, _)| *n == m)
                    .map(|(_, w)| w)
                    .unwrap_or_else(Vec3::zeros);
                assert!((v - w).norm() < 1e-12);
            }
        }
    }
}

#[test]
fn rotated_self_gram_has_zero_diagonal() {
    let sys = RwgSystem::new(TriangleMesh::icosphere(1.0, 1).unwrap()).unwrap();
    let set = BasisSet::rwg(sys);
    let g = gram(&set, &set, true).unwrap();
    assert!(g.diagonal().amax() < 1e-15);
    let g = gram(&set, &set, false).unwrap();
    assert!((&g - g.transpose()).amax() < 1e-15);
}

#[test]
fn mixed_gram_is_well_conditioned_under_refinement() {
    let mut conds = Vec::new();
    let mut hs = Vec::new();
    for n in [6, 9, 14] {
        let db = DualBases::new(TriangleMesh::uv_sphere(1.0, n, n).unwrap()).unwrap();
        let g = db.mixed_gram().unwrap();
        for r in 0..g.nrows() {
            assert!(g.row(r).norm() > 0.0);
        }
        conds.push(condition_number(&g).unwrap());
        hs.push(db.coarse.topo.h);
    }
    assert!(conds.iter().all(|c| c.is_finite()));
    // Growth slower than 1/h.
    assert!(conds[2] / conds[0] < hs[0] / hs[2], "{conds:?} vs h {hs:?}");
}

#[test]
fn incidence_matrices_on_the_sphere() {
    let topo = Topology::new(&TriangleMesh::uv_sphere(1.0, 10, 10).unwrap()).unwrap();
    let (sigma, lambda) = (star_matrix(&topo), loop_matrix(&topo));
    assert_eq!((sigma.nrows, sigma.ncols), (270, 180));
    for r in 0..270 {
        let row: Vec<f64> = sigma.row(r).map(|(_, v)| v).collect();
        assert_eq!(row.len(), 2);
        assert_eq!(row[0], -row[1]);
    }
    assert!(sigma.mul_vec(&vec![1.0; 180]).iter().all(|v| *v == 0.0));
    assert!(lambda.mul_vec(&vec![1.0; 92]).iter().all(|v| *v == 0.0));
    assert_eq!(rank(&sigma.to_dense()), 179);
    assert_eq!(rank(&lambda.to_dense()), 91);
}

#[test]
fn torus_ranks_leave_a_two_dimensional_harmonic_space() {
    let topo = Topology::new(&TriangleMesh::torus(0.2, 0.5, 1).unwrap()).unwrap();
    let (rs, rl) = (rank(&star_matrix(&topo).to_dense()), rank(&loop_matrix(&topo).to_dense()));
    assert_eq!(rs, topo.face_count - 1);
    assert_eq!(rl, topo.vertex_count - 1);
    assert_eq!(rs + rl + 2, topo.edge_count());
    let qh = QuasiHelmholtz::new(&topo).unwrap();
    assert!((qh.p_lambda_h().trace() - rl as f64 - 2.0).abs() < 1e-9);
}

#[test]
fn star_projector_fixes_the_star_space() {
    let topo = Topology::new(&TriangleMesh::icosphere(1.0, 1).unwrap()).unwrap();
    let qh = QuasiHelmholtz::new(&topo).unwrap();
    let sigma = qh.sigma.to_dense();
    assert!((&qh.p_sigma * &sigma - &sigma).amax() < 1e-12);
    assert!((qh.p_lambda_h() * &sigma).amax() < 1e-12);
    let lambda = qh.lambda.to_dense();
    assert!((&qh.p_lambda * &lambda - &lambda).amax() < 1e-12);
    assert!((qh.p_sigma_h() * &lambda).amax() < 1e-12);
}

fn check_projector_algebra(topo: &Topology) -> Result<(), TestCaseError> {
    let qh = QuasiHelmholtz::new(topo).unwrap();
    let n = topo.edge_count();
    let eye = RMat::identity(n, n);
    for p in [&qh.p_sigma, &qh.p_lambda] {
        prop_assert!((p * p - p).amax() <= 1e-12 * p.amax().max(1.0));
        prop_assert!((p - p.transpose()).amax() <= 1e-12);
    }
    let (q, qb) = (qh.p_lambda_h(), qh.p_sigma_h());
    prop_assert!((&qh.p_sigma + &q - &eye).amax() <= 1e-12);
    prop_assert!((&qh.p_sigma * &q).amax() <= 1e-12);
    prop_assert!((&qh.p_lambda * &qb).amax() <= 1e-12);
    // Loops and stars are orthogonal, so the loop projector lives inside Q.
    prop_assert!((&q * &qh.p_lambda - &qh.p_lambda).amax() <= 1e-12);
    let harmonic = q.trace() - qh.p_lambda.trace();
    prop_assert!((harmonic - 2.0 * topo.genus as f64).abs() < 1e-9);
    // Independent oracle: eigenvectors of Sigma Sigma^T with nonzero eigenvalue.
    let dense = qh.sigma.to_dense();
    let eig = (&dense * dense.transpose()).symmetric_eigen();
    let tol = eig.eigenvalues.amax() * 1e-10;
    let mut oracle = RMat::zeros(n, n);
    for (k, l) in eig.eigenvalues.iter().enumerate() {
        if *l > tol {
            oracle += eig.eigenvectors.column(k) * eig.eigenvectors.column(k).transpose();
        }
    }
    prop_assert!((oracle - &qh.p_sigma).amax() <= 1e-11);
    prop_assert!((range_projector(&qh.lambda).unwrap() - &qh.p_lambda).amax() <= 1e-14);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn projector_algebra_on_spheres(n_lon in 3usize..10, n_lat in 2usize..8) {
        check_projector_algebra(&Topology::new(&TriangleMesh::uv_sphere(1.0, n_lon, n_lat).unwrap()).unwrap())?;
    }

    #[test]
    fn projector_algebra_on_tori(n_ring in 6usize..14, n_tube in 3usize..7) {
        check_projector_algebra(&Topology::new(&TriangleMesh::torus_grid(0.35, 0.15, n_ring, n_tube).unwrap()).unwrap())?;
    }
}
