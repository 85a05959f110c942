use std::collections::HashSet;

use cqmot::analysis::{
    condition_csv, condition_number, eig_csv, iters_csv, late_envelope_ratio, locate, polynomial_eigenvalues,
    probe_csv, probe_current, sweep_dt, EigenMethod, SweepAxis, SweepResult, TargetedEigen,
};
use cqmot::basis::RwgSystem;
use cqmot::cq::{CqConfig, InteractionSequence, RkTableau};
use cqmot::formulations::{build_interaction_matrices, FormulationContext, FormulationKind};
use cqmot::kernel::KernelConfig;
use cqmot::linalg::RMat;
use cqmot::march::StepRecord;
use cqmot::mesh::TriangleMesh;
use cqmot::{Vec3, C64};
use nalgebra::DVector;

fn seq(mats: Vec<RMat>) -> InteractionSequence {
    InteractionSequence { mats, stages: 1, tail_ratio: 0.0 }
}

#[test]
fn hilbert_condition_number() {
    let h = RMat::from_fn(4, 4, |i, j| 1.0 / (i + j + 1) as f64);
    // Symmetric positive definite: the ratio of extreme eigenvalues.
    let eig = h.clone().symmetric_eigen().eigenvalues;
    let want = eig.max() / eig.min();
    let got = condition_number(&h).unwrap();
    assert!((got - want).abs() < 1e-9 * want);
    assert!((got - 15513.738).abs() < 1e-2);
    assert!(condition_number(&RMat::zeros(3, 3)).unwrap().is_infinite());
    assert!(condition_number(&RMat::zeros(2, 3)).is_err());
}

#[test]
fn companion_roots_of_known_recursions() {
    // Z_0 = I, Z_1 = -M with triangular M: eigenvalues are its diagonal.
    let m = RMat::from_row_slice(3, 3, &[0.5, 0.3, -0.2, 0.0, -0.3, 0.7, 0.0, 0.0, 0.9]);
    let map = polynomial_eigenvalues(&seq(vec![RMat::identity(3, 3), -m]), EigenMethod::default()).unwrap();
    let mut re: Vec<f64> = map.eigenvalues.iter().map(|l| l.re).collect();
    re.sort_by(f64::total_cmp);
    for (a, b) in re.iter().zip([-0.3, 0.5, 0.9]) {
        assert!((a - b).abs() < 1e-13);
    }
    assert!((map.spectral_radius() - 0.9).abs() < 1e-13);
    // l^2 - 1.5 l + 0.56 = (l - 0.8)(l - 0.7).
    let s = |v: f64| RMat::from_element(1, 1, v);
    let map = polynomial_eigenvalues(&seq(vec![s(1.0), s(-1.5), s(0.56)]), EigenMethod::default()).unwrap();
    assert_eq!(map.companion_dim(), 2);
    assert!((map.eigenvalues[0] - C64::new(0.7, 0.0)).norm() < 1e-13);
    assert!((map.eigenvalues[1] - C64::new(0.8, 0.0)).norm() < 1e-13);
    let err = polynomial_eigenvalues(&seq(vec![s(1.0), s(-1.5), s(0.56)]), EigenMethod::Dense { cap: 1 });
    assert!(err.is_err());
}

#[test]
fn targeted_eigenvalues_agree_with_the_dense_spectrum() {
    // Block recursion with a tight cluster near one and a spread elsewhere.
    let d = 12;
    let diag: Vec<f64> = (0..d).map(|i| if i < 4 { 1.0 - 1e-7 * i as f64 } else { 0.9 - 0.15 * i as f64 }).collect();
    let mut z1 = RMat::from_diagonal(&DVector::from_vec(diag)) * -1.0;
    let mix = RMat::from_fn(d, d, |i, j| ((i * 3 + j * 5) % 7) as f64 / 70.0);
    z1 += &mix * 0.01;
    let z2 = RMat::from_fn(d, d, |i, j| if i == j { 0.05 } else { 0.0 });
    let s = seq(vec![RMat::identity(d, d), z1, z2]);
    let dense = polynomial_eigenvalues(&s, EigenMethod::default()).unwrap();
    let opts = TargetedEigen { count: 6, ..TargetedEigen::default() };
    let targeted = polynomial_eigenvalues(&s, EigenMethod::Targeted(opts)).unwrap();
    assert_eq!(targeted.eigenvalues.len(), 6);
    let mut nearest = dense.eigenvalues.clone();
    nearest.sort_by(|a, b| (*a - opts.shift).norm().total_cmp(&(*b - opts.shift).norm()));
    for l in &targeted.eigenvalues {
        let best = nearest[..6].iter().map(|m| (*m - l).norm()).fold(f64::INFINITY, f64::min);
        assert!(best < 1e-9, "{l} not among the dense eigenvalues nearest the shift");
    }
    assert_eq!(dense.cluster_at_one(1e-3), targeted.cluster_at_one(1e-3));
}

#[test]
fn td_efie_has_a_static_cluster_at_one() {
    let ctx = FormulationContext::new(TriangleMesh::icosphere(1.0, 0).unwrap(), KernelConfig::default()).unwrap();
    let set = build_interaction_matrices(FormulationKind::TdEfie, &ctx, &CqConfig::new(1e-8, 64), false).unwrap();
    let map = polynomial_eigenvalues(&set.system, EigenMethod::default()).unwrap();
    assert_eq!(map.eigenvalues.len(), map.companion_dim());
    // Each loop gives a double root at one (the symbol vanishes like s^2);
    // tail truncation splits the pair by about sqrt(tail ratio).
    let loops = ctx.bases.coarse.topo.vertex_count - 1;
    let spread = 10.0 * set.system.tail_ratio.sqrt();
    assert_eq!(map.cluster_at_one(spread.max(1e-6)), 2 * loops);
    assert_eq!(map.cluster_at_one(0.5), 2 * loops);
    assert!(map.spectral_radius() < 1.0 + spread);
}

#[test]
fn probe_reads_the_rwg_field_at_a_face_centroid() {
    let sys = RwgSystem::new(TriangleMesh::tetrahedron(1.0).unwrap()).unwrap();
    let tab = RkTableau::radau_iia(2).unwrap();
    let e = 2;
    let ed = sys.topo.edges[e];
    let t = ed.left;
    let c = sys.mesh.centroid(t);
    let opposite = *sys.mesh.faces[t].iter().find(|&&k| k != ed.v[0] && k != ed.v[1]).unwrap();
    let want = (c - sys.mesh.vertices[opposite]) / (2.0 * sys.mesh.face_area(t));
    // Step 0 is zero; step 1 carries edge e in the last stage and noise in
    // the first stage, which the probe ignores.
    let n = sys.edge_count();
    let mut one = DVector::zeros(2 * n);
    one[2 * e + 1] = 3.0;
    one[0] = 100.0;
    let currents = vec![DVector::zeros(2 * n), one];
    let dt = 1e-9;
    let trace = probe_current(&sys, &tab, dt, &currents, &(c * 1.0000001)).unwrap();
    assert_eq!(trace.face, t);
    assert_eq!(trace.samples.len(), 2);
    assert_eq!(trace.samples[0].j, Vec3::zeros());
    assert!((trace.samples[1].j - want * 3.0).norm() < 1e-12);
    assert!((trace.samples[1].t - 2.0 * dt).abs() < 1e-24);
    assert_eq!(trace.magnitudes()[0], 0.0);
    // Points away from the surface are rejected.
    assert!(locate(&sys, &Vec3::zeros()).is_err());
    assert!(probe_current(&sys, &tab, dt, &[DVector::zeros(3)], &c).is_err());
}

#[test]
fn envelope_ratio_and_sweep_fits() {
    let mags = [0.0, 2.0, 4.0, 1.0, 0.5, 0.25];
    assert_eq!(late_envelope_ratio(&mags, 3), 0.25);
    assert_eq!(late_envelope_ratio(&[0.0; 4], 1), 0.0);
    let r = SweepResult {
        kind: FormulationKind::TdEfie,
        axis: SweepAxis::Dt,
        points: (0..6).map(|i| (10f64.powi(i), 3.0 * 10f64.powi(2 * i).max(100.0))).collect(),
    };
    assert!((r.loglog_slope(2..6) - 2.0).abs() < 1e-12);
    assert!(r.loglog_slope(0..2).abs() < 1e-12);
    assert!((r.spread() - 1e8).abs() < 1e-3);
}

#[test]
fn csv_outputs_have_fixed_headers() {
    let ctx = FormulationContext::new(TriangleMesh::tetrahedron(1.0).unwrap(), KernelConfig::default()).unwrap();
    let sweep = sweep_dt(FormulationKind::QhEfie, &ctx, 2, &[1e-9, 1e-8, 1e-7]).unwrap();
    assert!(sweep_dt(FormulationKind::QhEfie, &ctx, 2, &[1e-8, 1e-9]).is_err());
    let text = condition_csv(&[sweep]);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "axis,value,cond");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("dt,1.00000000000000006e-9,"));

    let s = |v: f64| RMat::from_element(1, 1, v);
    let map = polynomial_eigenvalues(&seq(vec![s(1.0), s(-0.5)]), EigenMethod::default()).unwrap();
    assert_eq!(eig_csv(&map), format!("re,im\n{:.17e},{:.17e}\n", 0.5, 0.0));

    let records = [StepRecord { step: 0, iterations: 3, residual: 1e-7, converged: true }];
    assert_eq!(iters_csv(&records), format!("step,iters,residual,converged\n0,3,{:.17e},true\n", 1e-7));

    let sys = RwgSystem::new(TriangleMesh::tetrahedron(1.0).unwrap()).unwrap();
    let tab = RkTableau::radau_iia(1).unwrap();
    let c = sys.mesh.centroid(0);
    let trace = probe_current(&sys, &tab, 1.0, &[DVector::from_element(6, 1.0)], &c).unwrap();
    let text = probe_csv(&trace);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,t,jx,jy,jz,jmag");
    let fields: Vec<f64> = lines[1].split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(fields.len(), 6);
    assert!((fields[5] - trace.samples[0].j.norm()).abs() < 1e-15);
    let unique: HashSet<&str> = text.lines().skip(1).collect();
    assert_eq!(unique.len(), 1);
}
