//! Galerkin matrices of the time-domain EFIE operator parts in the Laplace
//! domain:
//!
//! * `T_s[m, n] = <f_m, f_n g>` (vector potential),
//! * `T_h[m, n] = -<div f_m, div f_n g>` (scalar potential),
//!
//! with `g(R) = exp(-s R / c0) / (4 pi R)`. The kernel is split into the
//! static part `1 / (4 pi R)`, assembled once per basis pair with analytic
//! inner integrals, and the smooth remainder `(exp(-s R / c0) - 1) / (4 pi R)`,
//! assembled per Laplace value on a point cloud.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;

use crate::basis::{BasisSet, FaceExpansion, RwgSystem};
use crate::error::{invalid, Error, Result};
use crate::linalg::{CMat, Csr, RMat};
use crate::quadrature::{Grading, TriRule};
use crate::{Vec3, C0, C64};

/// Quadrature controls for operator assembly.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelConfig {
    /// Gauss points per direction of the graded outer rules used for faces
    /// sharing a vertex, an edge, or coinciding.
    pub near_points: usize,
    /// Polynomial grading exponent of those rules.
    pub grade: u32,
    /// Outer-rule degree for faces that do not touch.
    pub far_degree: usize,
    /// Faces closer than `near_factor` times the larger edge length (centroid
    /// distance) use a `near_points` tensor rule without grading.
    pub near_factor: f64,
    /// Point-cloud rule degree for the smooth remainder on RWG supports.
    pub dynamic_degree: usize,
    /// Point-cloud rule degree for the smooth remainder on refined (BC)
    /// supports, whose faces are six times smaller.
    pub dynamic_degree_refined: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            near_points: 12,
            grade: 3,
            far_degree: 6,
            near_factor: 1.5,
            dynamic_degree: 2,
            dynamic_degree_refined: 1,
        }
    }
}

impl KernelConfig {
    /// Configuration with every quadrature order roughly doubled.
    pub fn refined(&self) -> Self {
        KernelConfig {
            near_points: 2 * self.near_points,
            grade: self.grade,
            far_degree: 2 * self.far_degree,
            near_factor: self.near_factor,
            dynamic_degree: (2 * self.dynamic_degree).max(2),
            dynamic_degree_refined: (2 * self.dynamic_degree_refined).max(2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.near_points < 2 || self.grade == 0 || self.far_degree == 0 {
            return Err(invalid("kernel rules need near_points >= 2, grade >= 1 and far_degree >= 1"));
        }
        if !(self.near_factor >= 0.0) {
            return Err(invalid("near_factor must be non-negative"));
        }
        Ok(())
    }

    fn far_rule(&self) -> TriRule {
        if self.far_degree <= 5 {
            TriRule::symmetric_degree(self.far_degree)
        } else {
            TriRule::collapsed(self.far_degree / 2 + 1, None)
        }
    }
}

fn dynamic_rule(degree: usize) -> TriRule {
    if degree <= 5 {
        TriRule::symmetric_degree(degree)
    } else {
        TriRule::collapsed(degree / 2 + 1, None)
    }
}

/// `ln((R+ + l+) / (R- + l-))` without cancellation for negative `l`.
fn log_ratio(rp: f64, lp: f64, rm: f64, lm: f64, r0sq: f64) -> f64 {
    let term = |r: f64, l: f64| if l >= 0.0 { (r + l).ln() } else { r0sq.ln() - (r - l).ln() };
    term(rp, lp) - term(rm, lm)
}

/// Analytic integrals over a flat triangle with unit normal `n`:
/// `(int 1/R dS', int (r' - r)/R dS')` for observation point `r`.
pub fn triangle_potentials(p: &[Vec3; 3], n: &Vec3, r: &Vec3) -> (f64, Vec3) {
    let d = n.dot(&(r - p[0]));
    let ad = d.abs();
    let rho = r - n * d;
    let mut i0 = 0.0;
    let mut iv = Vec3::zeros();
    for i in 0..3 {
        let (a, b) = (p[i], p[(i + 1) % 3]);
        let edge = b - a;
        let len = edge.norm();
        let l = edge / len;
        let u = l.cross(n);
        let t0 = (a - rho).dot(&u);
        let lp = (b - rho).dot(&l);
        let lm = (a - rho).dot(&l);
        let r0sq = t0 * t0 + d * d;
        let rp = (r - b).norm();
        let rm = (r - a).norm();
        let tiny = 1e-28 * len * len;
        let f = if r0sq > tiny { log_ratio(rp, lp, rm, lm, r0sq) } else { 0.0 };
        i0 += t0 * f;
        if ad > 0.0 {
            i0 -= ad * ((t0 * lp).atan2(r0sq + ad * rp) - (t0 * lm).atan2(r0sq + ad * rm));
        }
        iv += u * (0.5 * (r0sq * f + lp * rp - lm * rm));
    }
    (i0, iv - n * (d * i0))
}

/// Static-kernel interaction of one face pair: local 3x3 block `V[i][j] =
/// int_t phi_i . int_t' phi'_j / (4 pi R)` and scalar `S = int_t int_t' 1 /
/// (4 pi R)`.
#[derive(Debug, Clone, Copy)]
struct PairBlock {
    v: [[f64; 3]; 3],
    s: f64,
}

struct StaticRules {
    far: TriRule,
    near: TriRule,
    coincident: TriRule,
    edge: [TriRule; 3],
    vertex: [TriRule; 3],
    near_factor: f64,
}

impl StaticRules {
    fn new(cfg: &KernelConfig) -> Self {
        let n = cfg.near_points;
        let edge = TriRule::collapsed(n, Some((cfg.grade, Grading::Edge)));
        let vertex = TriRule::collapsed(n, Some((cfg.grade, Grading::Vertex)));
        StaticRules {
            far: cfg.far_rule(),
            near: TriRule::collapsed(n, None),
            coincident: TriRule::all_edges_graded(n, cfg.grade),
            edge: [edge.rotated(0), edge.rotated(1), edge.rotated(2)],
            vertex: [vertex.rotated(0), vertex.rotated(1), vertex.rotated(2)],
            near_factor: cfg.near_factor,
        }
    }

    fn pick(&self, sys: &RwgSystem, size: &[f64], t: usize, tp: usize) -> &TriRule {
        let f = sys.mesh.faces[t];
        let g = sys.mesh.faces[tp];
        let shared: Vec<usize> = (0..3).filter(|&i| g.contains(&f[i])).collect();
        match shared.len() {
            3 => &self.coincident,
            2 => {
                let apex = (0..3).find(|i| !shared.contains(i)).unwrap();
                &self.edge[apex]
            }
            1 => &self.vertex[shared[0]],
            _ => {
                let dist = (sys.mesh.centroid(t) - sys.mesh.centroid(tp)).norm();
                if dist < self.near_factor * size[t].max(size[tp]) {
                    &self.near
                } else {
                    &self.far
                }
            }
        }
    }
}

fn pair_block(sys: &RwgSystem, rule: &TriRule, t: usize, tp: usize) -> PairBlock {
    let pt = sys.mesh.corners(t);
    let pp = sys.mesh.corners(tp);
    let (at, ap) = (sys.area[t], sys.area[tp]);
    let np = sys.normal[tp];
    let mut v = [[0.0; 3]; 3];
    let mut s = 0.0;
    for (x, w) in rule.map(&pt) {
        let (i0, i1) = triangle_potentials(&pp, &np, &x);
        let wa = w * at;
        s += wa * i0;
        let inner: [Vec3; 3] = std::array::from_fn(|j| (i1 + (x - pp[j]) * i0) / (2.0 * ap));
        for i in 0..3 {
            let outer = (x - pt[i]) / (2.0 * at);
            for j in 0..3 {
                v[i][j] += wa * outer.dot(&inner[j]);
            }
        }
    }
    let c = 1.0 / (4.0 * PI);
    for row in &mut v {
        for e in row.iter_mut() {
            *e *= c;
        }
    }
    PairBlock { v, s: s * c }
}

/// Static-kernel matrices of a basis pair: `T_s` and the face-level scalar
/// matrix `K[t, t'] = int_t int_t' 1 / (4 pi R)`.
fn assemble_static(sys: &RwgSystem, test: &FaceExpansion, trial: &FaceExpansion, cfg: &KernelConfig) -> (RMat, RMat) {
    let nf = sys.face_count();
    let rules = StaticRules::new(cfg);
    let size: Vec<f64> = (0..nf)
        .map(|t| {
            let p = sys.mesh.corners(t);
            (0..3).map(|i| (p[i] - p[(i + 1) % 3]).norm()).fold(0.0, f64::max)
        })
        .collect();
    let mut ts = RMat::zeros(test.n_functions, trial.n_functions);
    let mut k = RMat::zeros(nf, nf);
    let chunk = 16;
    for start in (0..nf).step_by(chunk) {
        let rows: Vec<Vec<PairBlock>> = (start..(start + chunk).min(nf))
            .into_par_iter()
            .map(|t| (t..nf).map(|tp| pair_block(sys, rules.pick(sys, &size, t, tp), t, tp)).collect())
            .collect();
        for (dt, row) in rows.iter().enumerate() {
            let t = start + dt;
            for (off, blk) in row.iter().enumerate() {
                let tp = t + off;
                k[(t, tp)] = blk.s;
                k[(tp, t)] = blk.s;
                accumulate(&mut ts, &blk.v, &test.per_face[t], &trial.per_face[tp]);
                if tp != t {
                    let vt = transpose3(&blk.v);
                    accumulate(&mut ts, &vt, &test.per_face[tp], &trial.per_face[t]);
                }
            }
        }
    }
    (ts, k)
}

fn transpose3(v: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| v[j][i]))
}

fn accumulate(ts: &mut RMat, v: &[[f64; 3]; 3], test: &[(usize, [f64; 3])], trial: &[(usize, [f64; 3])]) {
    for (n, cn) in trial {
        let u: [f64; 3] = std::array::from_fn(|i| (0..3).map(|j| v[i][j] * cn[j]).sum());
        for (m, cm) in test {
            ts[(*m, *n)] += cm[0] * u[0] + cm[1] * u[1] + cm[2] * u[2];
        }
    }
}

/// `(exp(-x) - 1) / x` for complex `x`, accurate near zero.
fn expm1_ratio(x: C64) -> C64 {
    if x.norm() < 0.2 {
        let mut term = C64::new(-1.0, 0.0);
        let mut sum = term;
        for k in 2..=14 {
            term *= -x / k as f64;
            sum += term;
        }
        sum
    } else {
        ((-x).exp() - 1.0) / x
    }
}

/// Smooth remainder `(exp(-s R / c0) - 1) / (4 pi R)`.
pub fn smooth_kernel(s: C64, r: f64) -> C64 {
    let sc = s / C0;
    expm1_ratio(sc * r) * sc / (4.0 * PI)
}

/// Full kernel `exp(-s R / c0) / (4 pi R)`.
pub fn full_kernel(s: C64, r: f64) -> C64 {
    (-s * r / C0).exp() / (4.0 * PI * r)
}

/// Quadrature points of a support mesh with weighted basis data.
struct PointCloud {
    points: Vec<Vec3>,
    /// Per function: `(point, weight * f(x))`.
    test_vals: Vec<Vec<(usize, Vec3)>>,
    trial_vals: Vec<Vec<(usize, Vec3)>>,
    /// Per function: `(point, weight * div f)`.
    test_div: Vec<Vec<(usize, f64)>>,
    trial_div: Vec<Vec<(usize, f64)>>,
}

impl PointCloud {
    fn new(sys: &RwgSystem, test: &FaceExpansion, trial: &FaceExpansion, rule: &TriRule) -> Self {
        let mut points = Vec::with_capacity(rule.len() * sys.face_count());
        let mut test_vals = vec![Vec::new(); test.n_functions];
        let mut trial_vals = vec![Vec::new(); trial.n_functions];
        let mut test_div = vec![Vec::new(); test.n_functions];
        let mut trial_div = vec![Vec::new(); trial.n_functions];
        for t in 0..sys.face_count() {
            if test.per_face[t].is_empty() && trial.per_face[t].is_empty() {
                continue;
            }
            let corners = sys.mesh.corners(t);
            for (x, w) in rule.map(&corners) {
                let wa = w * sys.area[t];
                let a = points.len();
                points.push(x);
                for (exp, vals, div) in
                    [(test, &mut test_vals, &mut test_div), (trial, &mut trial_vals, &mut trial_div)]
                {
                    for (m, c) in &exp.per_face[t] {
                        vals[*m].push((a, FaceExpansion::value(sys, t, c, &x) * wa));
                        div[*m].push((a, FaceExpansion::charge(c) / sys.area[t] * wa));
                    }
                }
            }
        }
        PointCloud { points, test_vals, trial_vals, test_div, trial_div }
    }

    fn kernel_matrix(&self, s: C64) -> Vec<C64> {
        let p = self.points.len();
        let mut k = vec![C64::new(0.0, 0.0); p * p];
        let rows: Vec<Vec<C64>> = (0..p)
            .into_par_iter()
            .map(|a| (a..p).map(|b| smooth_kernel(s, (self.points[a] - self.points[b]).norm())).collect())
            .collect();
        for (a, row) in rows.into_iter().enumerate() {
            for (off, v) in row.into_iter().enumerate() {
                k[a * p + a + off] = v;
                k[(a + off) * p + a] = v;
            }
        }
        k
    }

    /// Smooth-remainder parts of `(T_s, T_h)`.
    fn assemble(&self, s: C64) -> (CMat, CMat) {
        let p = self.points.len();
        let k = self.kernel_matrix(s);
        let (nm, nn) = (self.test_vals.len(), self.trial_vals.len());
        let rows: Vec<(Vec<C64>, Vec<C64>)> = (0..nm)
            .into_par_iter()
            .map(|m| {
                let zero = C64::new(0.0, 0.0);
                let mut rv = vec![[zero; 3]; p];
                let mut rd = vec![zero; p];
                for &(a, fa) in &self.test_vals[m] {
                    let row = &k[a * p..(a + 1) * p];
                    for (b, kab) in row.iter().enumerate() {
                        rv[b][0] += kab * fa.x;
                        rv[b][1] += kab * fa.y;
                        rv[b][2] += kab * fa.z;
                    }
                }
                for &(a, da) in &self.test_div[m] {
                    let row = &k[a * p..(a + 1) * p];
                    for (b, kab) in row.iter().enumerate() {
                        rd[b] += kab * da;
                    }
                }
                let ts_row = (0..nn)
                    .map(|n| {
                        self.trial_vals[n]
                            .iter()
                            .map(|&(b, fb)| rv[b][0] * fb.x + rv[b][1] * fb.y + rv[b][2] * fb.z)
                            .sum()
                    })
                    .collect();
                let th_row =
                    (0..nn).map(|n| -self.trial_div[n].iter().map(|&(b, db)| rd[b] * db).sum::<C64>()).collect();
                (ts_row, th_row)
            })
            .collect();
        let mut ts = CMat::zeros(nm, nn);
        let mut th = CMat::zeros(nm, nn);
        for (m, (a, b)) in rows.into_iter().enumerate() {
            for n in 0..nn {
                ts[(m, n)] = a[n];
                th[(m, n)] = b[n];
            }
        }
        (ts, th)
    }
}

/// Cached assembler of `T_s(s)` and `T_h(s)` for one test/trial basis pair.
pub struct OperatorAssembler {
    pub n_test: usize,
    pub n_trial: usize,
    ts0: RMat,
    th0: RMat,
    cloud: PointCloud,
}

impl OperatorAssembler {
    pub fn new(test: &BasisSet, trial: &BasisSet, cfg: &KernelConfig) -> Result<Self> {
        cfg.validate()?;
        if !Arc::ptr_eq(&test.support, &trial.support) {
            return Err(Error::Dimension(
                "test and trial sets must share a support mesh (lift RWG functions first)".into(),
            ));
        }
        let sys = &test.support;
        let (et, er) = (test.expansion(), trial.expansion());
        let (ts0, k0) = assemble_static(sys, &et, &er, cfg);
        let charges = |e: &FaceExpansion| {
            let trip = e
                .per_face
                .iter()
                .enumerate()
                .flat_map(|(t, list)| list.iter().map(move |(m, c)| (*m, t, FaceExpansion::charge(c) / sys.area[t])))
                .collect();
            Csr::from_triplets(e.n_functions, sys.face_count(), trip)
        };
        let (qt, qr) = (charges(&et), charges(&er));
        let th0 = -qt.mul_dense(&qr.mul_dense(&k0).transpose());
        let refined = test.kind == crate::basis::BasisKind::Bc || trial.kind == crate::basis::BasisKind::Bc;
        let degree = if refined { cfg.dynamic_degree_refined } else { cfg.dynamic_degree };
        let cloud = PointCloud::new(sys, &et, &er, &dynamic_rule(degree));
        Ok(OperatorAssembler { n_test: test.len(), n_trial: trial.len(), ts0, th0, cloud })
    }

    /// Static (`s = 0`) matrices `(T_s, T_h)`.
    pub fn static_parts(&self) -> (&RMat, &RMat) {
        (&self.ts0, &self.th0)
    }

    /// `(T_s(s), T_h(s))`. Requires `Re s >= 0`.
    pub fn assemble(&self, s: C64) -> Result<(CMat, CMat)> {
        if !(s.re >= 0.0) || !s.im.is_finite() {
            return Err(Error::InvalidArgument(format!("Laplace value {s} must have Re s >= 0")));
        }
        let (mut ts, mut th) = if s == C64::new(0.0, 0.0) {
            (CMat::zeros(self.n_test, self.n_trial), CMat::zeros(self.n_test, self.n_trial))
        } else {
            self.cloud.assemble(s)
        };
        for (z, r) in ts.iter_mut().zip(self.ts0.iter()) {
            *z += r;
        }
        for (z, r) in th.iter_mut().zip(self.th0.iter()) {
            *z += r;
        }
        Ok((ts, th))
    }
}

/// One-off `T_s(s)` for a test/trial pair.
pub fn assemble_ts(s: C64, trial: &BasisSet, test: &BasisSet, cfg: &KernelConfig) -> Result<CMat> {
    Ok(OperatorAssembler::new(test, trial, cfg)?.assemble(s)?.0)
}

/// One-off `T_h(s)` for a test/trial pair.
pub fn assemble_th(s: C64, trial: &BasisSet, test: &BasisSet, cfg: &KernelConfig) -> Result<CMat> {
    Ok(OperatorAssembler::new(test, trial, cfg)?.assemble(s)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::TriRule;

    fn brute(p: &[Vec3; 3], r: &Vec3) -> (f64, Vec3) {
        // Split at the projection of r and use Duffy rules towards it.
        let n = (p[1] - p[0]).cross(&(p[2] - p[0])).normalize();
        let rho = r - n * n.dot(&(r - p[0]));
        let rule = TriRule::collapsed(40, Some((2, Grading::Vertex)));
        let mut i0 = 0.0;
        let mut i1 = Vec3::zeros();
        for k in 0..3 {
            let sub = [rho, p[k], p[(k + 1) % 3]];
            let signed = 0.5 * (sub[1] - sub[0]).cross(&(sub[2] - sub[0])).dot(&n);
            for (x, w) in rule.map(&sub) {
                let rr = (x - r).norm();
                i0 += w * signed / rr;
                i1 += (x - r) * (w * signed / rr);
            }
        }
        (i0, i1)
    }

    #[test]
    fn analytic_potentials_match_quadrature() {
        let p = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.1, 0.0), Vec3::new(0.3, 0.8, 0.0)];
        let n = (p[1] - p[0]).cross(&(p[2] - p[0])).normalize();
        for r in [
            Vec3::new(0.4, 0.3, 0.0),
            Vec3::new(0.4, 0.3, 0.2),
            Vec3::new(1.5, -0.4, 0.0),
            Vec3::new(-0.3, 1.1, -0.5),
            Vec3::new(2.0, 0.2, 0.0),
        ] {
            let (a0, a1) = triangle_potentials(&p, &n, &r);
            let (b0, b1) = brute(&p, &r);
            assert!((a0 - b0).abs() < 1e-9 * b0.abs(), "{r:?}: {a0} vs {b0}");
            assert!((a1 - b1).norm() < 1e-9 * b1.norm().max(b0.abs()), "{r:?}");
        }
    }

    #[test]
    fn smooth_kernel_is_continuous_across_series_switch() {
        let s = C64::new(3e8, 2e8);
        for r in [0.19, 0.2, 0.21, 1e-9, 0.0] {
            let direct = if r > 0.0 { full_kernel(s, r) - 1.0 / (4.0 * PI * r) } else { C64::new(0.0, 0.0) };
            let k = smooth_kernel(s, r);
            if r > 1e-3 {
                assert!((k - direct).norm() < 1e-12 * k.norm().max(1e-3));
            } else {
                assert!((k + s / C0 / (4.0 * PI)).norm() < 1e-6 * k.norm());
            }
        }
    }
}
