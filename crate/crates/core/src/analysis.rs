//! Conditioning sweeps, polynomial eigenvalues of the marching recursion,
//! current probes and the CSV artifacts written from them.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::basis::RwgSystem;
use crate::cq::{InteractionSequence, RkTableau};
use crate::error::{invalid, Error, Result};
use crate::formulations::{z0_matrix, FormulationContext, FormulationKind};
use crate::kernel::KernelConfig;
use crate::linalg::{RMat, RealLu};
use crate::mesh::TriangleMesh;
use crate::{Vec3, C64};

/// 2-norm condition number; `+inf` when the smallest singular value
/// vanishes to working precision.
pub fn condition_number(m: &RMat) -> Result<f64> {
    if !m.is_square() || m.is_empty() {
        return Err(Error::Dimension("condition number needs a nonempty square matrix".into()));
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if !(max > 0.0) || min <= max * f64::EPSILON * m.nrows() as f64 * 0.5 {
        return Ok(f64::INFINITY);
    }
    Ok(max / min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Dt,
    H,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Dt => "dt",
            SweepAxis::H => "h",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub kind: FormulationKind,
    pub axis: SweepAxis,
    /// `(parameter value, cond(Z_0))`.
    pub points: Vec<(f64, f64)>,
}

impl SweepResult {
    /// Least-squares slope of `log cond` against `log value` over the points
    /// with index in `range`.
    pub fn loglog_slope(&self, range: std::ops::Range<usize>) -> f64 {
        let pts: Vec<(f64, f64)> = self.points[range].iter().map(|(x, y)| (x.ln(), y.ln())).collect();
        loglog_fit(&pts)
    }

    /// `max cond / min cond`.
    pub fn spread(&self) -> f64 {
        let max = self.points.iter().map(|p| p.1).fold(0.0, f64::max);
        let min = self.points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        max / min
    }
}

fn loglog_fit(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

fn check_sorted(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(invalid("sweep needs at least one value"));
    }
    if values.windows(2).any(|w| !(w[0] < w[1])) || values.iter().any(|v| !(*v > 0.0)) {
        return Err(invalid("sweep values must be positive and strictly increasing"));
    }
    Ok(())
}

/// Condition number of `Z_0` for each time step on one scatterer.
pub fn sweep_dt(kind: FormulationKind, ctx: &FormulationContext, stages: usize, dts: &[f64]) -> Result<SweepResult> {
    check_sorted(dts)?;
    let tab = RkTableau::radau_iia(stages)?;
    let mut points = Vec::with_capacity(dts.len());
    for &dt in dts {
        let cond = condition_number(&z0_matrix(kind, ctx, &tab, dt)?)?;
        log::debug!("{kind}: dt = {dt:.3e}, cond = {cond:.3e}");
        points.push((dt, cond));
    }
    Ok(SweepResult { kind, axis: SweepAxis::Dt, points })
}

/// Condition number of `Z_0` at a fixed time step over a family of meshes,
/// keyed by the measured average edge length (sorted ascending).
pub fn sweep_h(
    kind: FormulationKind,
    meshes: &[TriangleMesh],
    kernel: &KernelConfig,
    stages: usize,
    dt: f64,
) -> Result<SweepResult> {
    if meshes.is_empty() {
        return Err(invalid("sweep needs at least one mesh"));
    }
    let tab = RkTableau::radau_iia(stages)?;
    let mut points = Vec::with_capacity(meshes.len());
    for mesh in meshes {
        let ctx = FormulationContext::new(mesh.clone(), kernel.clone())?;
        let h = ctx.bases.coarse.topo.h;
        let cond = condition_number(&z0_matrix(kind, &ctx, &tab, dt)?)?;
        log::debug!("{kind}: h = {h:.4}, E = {}, cond = {cond:.3e}", ctx.n());
        points.push((h, cond));
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(SweepResult { kind, axis: SweepAxis::H, points })
}

/// Eigenvalues of `P(l) = sum_j Z_j l^(n - j)`, the characteristic polynomial
/// of the marching recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenMap {
    pub eigenvalues: Vec<C64>,
    pub n_conv_used: usize,
    pub n_s: usize,
    pub stages: usize,
}

impl EigenMap {
    pub fn companion_dim(&self) -> usize {
        self.n_s * self.stages * self.n_conv_used
    }

    /// Eigenvalues with `|l - 1| < tol`.
    pub fn cluster_at_one(&self, tol: f64) -> usize {
        self.eigenvalues.iter().filter(|l| (**l - 1.0).norm() < tol).count()
    }

    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l.norm()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EigenMethod {
    /// Full spectrum of the block companion matrix.
    Dense { cap: usize },
    /// Shift-invert Arnoldi on the companion matrix about a real shift.
    Targeted(TargetedEigen),
}

impl Default for EigenMethod {
    fn default() -> Self {
        EigenMethod::Dense { cap: 40_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetedEigen {
    pub shift: f64,
    /// Number of eigenvalues nearest the shift to report.
    pub count: usize,
    /// Largest Krylov dimension tried.
    pub max_krylov: usize,
    /// Relative Ritz residual accepted as converged.
    pub tol: f64,
}

impl Default for TargetedEigen {
    fn default() -> Self {
        TargetedEigen { shift: 1.0 + 2e-3, count: 12, max_krylov: 160, tol: 1e-8 }
    }
}

pub fn polynomial_eigenvalues(seq: &InteractionSequence, method: EigenMethod) -> Result<EigenMap> {
    let np = seq.block_dim();
    let n = seq.n_conv();
    let stages = seq.stages.max(1);
    let mut map = EigenMap { eigenvalues: Vec::new(), n_conv_used: n, n_s: np / stages, stages };
    if n == 0 {
        return Ok(map);
    }
    match method {
        EigenMethod::Dense { cap } => {
            let dim = np * n;
            if dim > cap {
                return Err(invalid(format!("companion dimension {dim} exceeds the dense cap {cap}")));
            }
            let lu = RealLu::new(&seq.mats[0], "Z_0")?;
            let mut c = DMatrix::<f64>::zeros(dim, dim);
            for j in 1..=n {
                let blk = lu.solve(&seq.mats[j]);
                c.view_mut((0, (j - 1) * np), (np, np)).copy_from(&(-blk));
            }
            for k in 1..n {
                for i in 0..np {
                    c[(k * np + i, (k - 1) * np + i)] = 1.0;
                }
            }
            map.eigenvalues = c.complex_eigenvalues().iter().copied().collect();
            sort_eigs(&mut map.eigenvalues);
        }
        EigenMethod::Targeted(opts) => {
            map.eigenvalues = shift_invert_arnoldi(seq, &opts)?;
        }
    }
    if map.eigenvalues.iter().any(|l| !l.re.is_finite() || !l.im.is_finite()) {
        return Err(Error::Numerical("non-finite polynomial eigenvalue".into()));
    }
    Ok(map)
}

fn sort_eigs(v: &mut [C64]) {
    v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
}

/// `(C - sigma)^-1` for the block companion matrix `C` of the recursion,
/// applied through one factorization of
/// `M(sigma) = sigma Z_0 + sum_j Z_j sigma^(1-j)`.
struct ShiftInvert<'a> {
    seq: &'a InteractionSequence,
    sigma: f64,
    lu: RealLu,
}

impl<'a> ShiftInvert<'a> {
    fn new(seq: &'a InteractionSequence, sigma: f64) -> Result<Self> {
        let mut m = &seq.mats[0] * sigma;
        for j in 1..=seq.n_conv() {
            m += &seq.mats[j] * sigma.powi(1 - j as i32);
        }
        Ok(ShiftInvert { seq, sigma, lu: RealLu::new(&m, "shifted matrix polynomial")? })
    }

    fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        let np = self.seq.block_dim();
        let n = self.seq.n_conv();
        let blk = |v: &DVector<f64>, k: usize| v.rows(k * np, np).clone_owned();
        let mut rhs = -(&self.seq.mats[0] * blk(y, 0));
        let mut w = DVector::<f64>::zeros(np);
        for j in 2..=n {
            w = (w + blk(y, j - 1)) / self.sigma;
            rhs.gemv(1.0, &self.seq.mats[j], &w, 1.0);
        }
        let mut x = DVector::<f64>::zeros(np * n);
        let mut prev = self.lu.solve_vec(&rhs);
        x.rows_mut(0, np).copy_from(&prev);
        for k in 1..n {
            prev = (prev - blk(y, k)) / self.sigma;
            x.rows_mut(k * np, np).copy_from(&prev);
        }
        x
    }
}

fn shift_invert_arnoldi(seq: &InteractionSequence, opts: &TargetedEigen) -> Result<Vec<C64>> {
    if !(opts.shift.is_finite() && opts.shift != 0.0) || opts.count == 0 || opts.max_krylov < 2 {
        return Err(invalid("targeted eigen-analysis needs a nonzero shift and positive sizes"));
    }
    let op = ShiftInvert::new(seq, opts.shift)?;
    let dim = seq.block_dim() * seq.n_conv();
    let m_max = opts.max_krylov.min(dim);
    // Deterministic start vector.
    let mut v0 = DVector::from_fn(dim, |i, _| 1.0 + ((i * 7919) % 104_729) as f64 / 104_729.0);
    v0 /= v0.norm();
    let mut basis: Vec<DVector<f64>> = vec![v0];
    let mut h = DMatrix::<f64>::zeros(m_max + 1, m_max);
    let mut next_check = (3 * opts.count).max(20).min(m_max);
    for k in 0..m_max {
        let mut w = op.apply(&basis[k]);
        // Two passes of classical Gram-Schmidt.
        for _ in 0..2 {
            for (i, vi) in basis.iter().enumerate() {
                let c = vi.dot(&w);
                h[(i, k)] += c;
                w.axpy(-c, vi, 1.0);
            }
        }
        let beta = w.norm();
        h[(k + 1, k)] = beta;
        let m = k + 1;
        let exhausted = beta <= 1e-14 * h.view((0, 0), (m, m)).norm();
        if m == next_check || m == m_max || exhausted {
            let ritz = converged_ritz(&h, m, if exhausted { 0.0 } else { beta }, opts.tol);
            if ritz.len() >= opts.count || m == m_max || exhausted {
                let mut lam: Vec<C64> = ritz.into_iter().map(|mu| opts.shift + 1.0 / mu).collect();
                lam.sort_by(|a, b| (*a - opts.shift).norm().total_cmp(&(*b - opts.shift).norm()));
                lam.truncate(opts.count);
                log::debug!("shift-invert Arnoldi: {} eigenvalues after {m} steps", lam.len());
                return Ok(lam);
            }
            next_check = (next_check + next_check / 2).min(m_max);
        }
        basis.push(w / beta);
    }
    unreachable!("Arnoldi loop always returns by m_max")
}

/// Ritz values of the leading `m x m` Hessenberg block whose residual
/// estimate `beta |y_m|` is below `tol |mu|`.
fn converged_ritz(h: &DMatrix<f64>, m: usize, beta: f64, tol: f64) -> Vec<C64> {
    let hm = h.view((0, 0), (m, m)).clone_owned();
    let mu = hm.clone().complex_eigenvalues();
    let hc = hm.map(|x| C64::new(x, 0.0));
    let mut out = Vec::new();
    for &l in mu.iter() {
        if l.norm() == 0.0 {
            continue;
        }
        // Inverse iteration for the Ritz vector.
        let shifted = &hc - DMatrix::<C64>::identity(m, m) * (l * (1.0 + 1e-13) + C64::new(1e-300, 0.0));
        let lu = shifted.lu();
        let mut y = DVector::from_element(m, C64::new(1.0, 0.0));
        for _ in 0..2 {
            match lu.solve(&y) {
                Some(z) => {
                    let nz = z.norm();
                    if !(nz > 0.0 && nz.is_finite()) {
                        break;
                    }
                    y = z / C64::new(nz, 0.0);
                }
                None => break,
            }
        }
        let est = beta * y[m - 1].norm();
        if est <= tol * l.norm() {
            out.push(l);
        }
    }
    out
}

/// Time trace of the surface current at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeTrace {
    /// Face containing the (projected) probe point.
    pub face: usize,
    pub point: Vec3,
    pub samples: Vec<ProbeSample>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeSample {
    pub step: usize,
    pub t: f64,
    pub j: Vec3,
}

impl ProbeTrace {
    pub fn magnitudes(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.j.norm()).collect()
    }
}

/// Closest point of triangle `abc` to `p`.
fn closest_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let (ab, ac, ap) = (b - a, c - a, p - a);
    let (d1, d2) = (ab.dot(&ap), ac.dot(&ap));
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let (d3, d4) = (ab.dot(&bp), ac.dot(&bp));
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let (d5, d6) = (ab.dot(&cp), ac.dot(&cp));
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Locates `point` on the surface: the nearest face, accepted when the
/// distance is at most a tenth of the average edge length.
pub fn locate(sys: &RwgSystem, point: &Vec3) -> Result<(usize, Vec3)> {
    let mut best = (usize::MAX, Vec3::zeros(), f64::INFINITY);
    for t in 0..sys.face_count() {
        let [a, b, c] = sys.mesh.corners(t);
        let q = closest_on_triangle(point, &a, &b, &c);
        let d = (q - point).norm();
        if d < best.2 {
            best = (t, q, d);
        }
    }
    if best.2 > 0.1 * sys.topo.h {
        return Err(invalid(format!(
            "probe point ({:.4}, {:.4}, {:.4}) is {:.3e} m from the surface",
            point.x, point.y, point.z, best.2
        )));
    }
    Ok((best.0, best.1))
}

/// RWG basis values `(edge, f_n(r))` at a point of face `t`.
pub fn rwg_values(sys: &RwgSystem, t: usize, r: &Vec3) -> Vec<(usize, Vec3)> {
    sys.topo.face_edges[t]
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let sign = if sys.plus[e].0 == t { 1.0 } else { -1.0 };
            (e, sys.shape(t, i, r) * sign)
        })
        .collect()
}

/// Current at `point` for each step, taken from the last stage of the
/// stage-stacked RWG coefficients (`p m + k` layout), at `t = dt (i + c_p)`.
pub fn probe_current(
    sys: &RwgSystem,
    tab: &RkTableau,
    dt: f64,
    currents: &[DVector<f64>],
    point: &Vec3,
) -> Result<ProbeTrace> {
    let p = tab.stages();
    let n = sys.edge_count();
    if currents.iter().any(|c| c.len() != n * p) {
        return Err(Error::Dimension(format!("current vectors must have length {}", n * p)));
    }
    let (face, q) = locate(sys, point)?;
    let vals = rwg_values(sys, face, &q);
    let c_last = tab.c[p - 1];
    let samples = currents
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let j = vals.iter().fold(Vec3::zeros(), |acc, (e, f)| acc + f * c[p * e + p - 1]);
            ProbeSample { step: i, t: dt * (i as f64 + c_last), j }
        })
        .collect();
    Ok(ProbeTrace { face, point: q, samples })
}

/// Largest magnitude at or after `from` divided by the overall peak.
pub fn late_envelope_ratio(mags: &[f64], from: usize) -> f64 {
    let peak = mags.iter().copied().fold(0.0, f64::max);
    let late = mags[from.min(mags.len())..].iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        late / peak
    } else {
        0.0
    }
}

fn g(x: f64) -> String {
    format!("{x:.17e}")
}

pub fn condition_csv(results: &[SweepResult]) -> String {
    let mut s = String::from("axis,value,cond\n");
    for r in results {
        for (v, c) in &r.points {
            let _ = writeln!(s, "{},{},{}", r.axis.name(), g(*v), g(*c));
        }
    }
    s
}

pub fn eig_csv(map: &EigenMap) -> String {
    let mut s = String::from("re,im\n");
    for l in &map.eigenvalues {
        let _ = writeln!(s, "{},{}", g(l.re), g(l.im));
    }
    s
}

pub fn probe_csv(trace: &ProbeTrace) -> String {
    let mut s = String::from("step,t,jx,jy,jz,jmag\n");
    for p in &trace.samples {
        let _ = writeln!(s, "{},{},{},{},{},{}", p.step, g(p.t), g(p.j.x), g(p.j.y), g(p.j.z), g(p.j.norm()));
    }
    s
}

pub fn iters_csv(records: &[crate::march::StepRecord]) -> String {
    let mut s = String::from("step,iters,residual,converged\n");
    for r in records {
        let _ = writeln!(s, "{},{},{},{}", r.step, r.iterations, g(r.residual), r.converged);
    }
    s
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &std::path::Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_of_diagonal() {
        let m = RMat::from_diagonal(&DVector::from_vec(vec![1.0, 10.0]));
        assert!((condition_number(&m).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(condition_number(&RMat::zeros(2, 2)).unwrap(), f64::INFINITY);
    }

    #[test]
    fn scalar_recursion_root() {
        let seq = InteractionSequence {
            mats: vec![RMat::identity(3, 3), RMat::identity(3, 3) * -0.5],
            stages: 1,
            tail_ratio: 0.5,
        };
        let map = polynomial_eigenvalues(&seq, EigenMethod::default()).unwrap();
        assert_eq!(map.eigenvalues.len(), map.companion_dim());
        assert!(map.eigenvalues.iter().all(|l| (*l - 0.5).norm() < 1e-14));
    }

    #[test]
    fn closest_point_inside_and_outside() {
        let (a, b, c) = (Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0));
        let q = closest_on_triangle(&Vec3::new(0.2, 0.2, 0.5), &a, &b, &c);
        assert!((q - Vec3::new(0.2, 0.2, 0.0)).norm() < 1e-15);
        let q = closest_on_triangle(&Vec3::new(1.0, 1.0, 0.0), &a, &b, &c);
        assert!((q - Vec3::new(0.5, 0.5, 0.0)).norm() < 1e-15);
    }
}
