//! Marching-on-in-time: `Z_0 f_i = k_i - sum_{j=1}^{min(i, n_conv)} Z_j f_{i-j}`.

use nalgebra::{DMatrix, DVector};

use crate::cq::{CqConfig, InteractionSequence, RkTableau};
use crate::error::{invalid, Error, Result};
use crate::excitation::GaussianPlaneWave;
use crate::formulations::{
    build_interaction_matrices, recover_current, rhs_sequence, FormulationContext, FormulationKind,
};
use crate::linalg::RealLu;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolverKind {
    /// LU of `Z_0`, factored once.
    Direct,
    /// Full (unrestarted) GMRES warm-started from the previous step.
    Gmres { tol: f64, max_iter: usize },
}

impl Default for SolverKind {
    fn default() -> Self {
        SolverKind::Gmres { tol: 1e-6, max_iter: 200 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmresResult {
    pub x: DVector<f64>,
    pub iterations: usize,
    /// Final relative residual `||b - A x|| / ||b||`.
    pub residual: f64,
    pub converged: bool,
}

/// Unrestarted GMRES with modified Gram-Schmidt and Givens rotations.
pub fn gmres(a: &DMatrix<f64>, b: &DVector<f64>, x0: &DVector<f64>, tol: f64, max_iter: usize) -> GmresResult {
    let n = b.len();
    let bnorm = b.norm();
    if bnorm == 0.0 {
        return GmresResult { x: DVector::zeros(n), iterations: 0, residual: 0.0, converged: true };
    }
    let mut x = x0.clone();
    let r0 = b - a * &x;
    let beta = r0.norm();
    if beta <= tol * bnorm {
        return GmresResult { x, iterations: 0, residual: beta / bnorm, converged: true };
    }
    let m = max_iter.min(n).max(1);
    let mut v: Vec<DVector<f64>> = Vec::with_capacity(m + 1);
    v.push(r0 / beta);
    let mut h = DMatrix::<f64>::zeros(m + 1, m);
    let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
    let mut g = DVector::<f64>::zeros(m + 1);
    g[0] = beta;
    let mut k = 0;
    while k < m {
        let mut w = a * &v[k];
        for (i, vi) in v.iter().enumerate() {
            h[(i, k)] = w.dot(vi);
            w.axpy(-h[(i, k)], vi, 1.0);
        }
        let hnext = w.norm();
        h[(k + 1, k)] = hnext;
        for i in 0..k {
            let t = cs[i] * h[(i, k)] + sn[i] * h[(i + 1, k)];
            h[(i + 1, k)] = -sn[i] * h[(i, k)] + cs[i] * h[(i + 1, k)];
            h[(i, k)] = t;
        }
        let denom = h[(k, k)].hypot(hnext);
        cs[k] = h[(k, k)] / denom;
        sn[k] = hnext / denom;
        h[(k, k)] = denom;
        h[(k + 1, k)] = 0.0;
        g[k + 1] = -sn[k] * g[k];
        g[k] *= cs[k];
        let residual = g[k + 1].abs();
        let breakdown = hnext <= 1e-14 * beta;
        if !breakdown {
            v.push(w / hnext);
        }
        k += 1;
        if residual <= tol * bnorm || breakdown {
            break;
        }
    }
    // Back substitution on the k x k triangle.
    let mut y = vec![0.0; k];
    for i in (0..k).rev() {
        let s: f64 = (i + 1..k).map(|j| h[(i, j)] * y[j]).sum();
        y[i] = (g[i] - s) / h[(i, i)];
    }
    for (i, yi) in y.iter().enumerate() {
        x.axpy(*yi, &v[i], 1.0);
    }
    let true_res = (b - a * &x).norm() / bnorm;
    GmresResult { x, iterations: k, residual: true_res, converged: true_res <= tol * 1.0001 }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct MotResult {
    /// Stage-stacked unknowns per step.
    pub solution: Vec<DVector<f64>>,
    pub records: Vec<StepRecord>,
}

impl MotResult {
    pub fn max_iterations(&self) -> usize {
        self.records.iter().map(|r| r.iterations).max().unwrap_or(0)
    }
}

/// Marches the system for `rhs.len()` steps.
pub fn mot_solve(seq: &InteractionSequence, rhs: &[DVector<f64>], solver: SolverKind) -> Result<MotResult> {
    let dim = seq.block_dim();
    if rhs.iter().any(|k| k.len() != dim) {
        return Err(Error::Dimension(format!("right-hand sides must have length {dim}")));
    }
    let lu = match solver {
        SolverKind::Direct => Some(RealLu::new(&seq.mats[0], "Z_0")?),
        SolverKind::Gmres { tol, max_iter } => {
            if !(tol > 0.0) || max_iter == 0 {
                return Err(invalid("GMRES needs tol > 0 and max_iter > 0"));
            }
            None
        }
    };
    let mut solution: Vec<DVector<f64>> = Vec::with_capacity(rhs.len());
    let mut records = Vec::with_capacity(rhs.len());
    for (i, k) in rhs.iter().enumerate() {
        let mut b = k.clone();
        for j in 1..=seq.n_conv().min(i) {
            b.gemv(-1.0, &seq.mats[j], &solution[i - j], 1.0);
        }
        let (x, rec) = match (&lu, solver) {
            (Some(lu), _) => {
                let x = lu.solve_vec(&b);
                let res = if b.norm() > 0.0 { (&b - &seq.mats[0] * &x).norm() / b.norm() } else { 0.0 };
                (x, StepRecord { step: i, iterations: 0, residual: res, converged: true })
            }
            (None, SolverKind::Gmres { tol, max_iter }) => {
                let x0 = solution.last().cloned().unwrap_or_else(|| DVector::zeros(dim));
                let r = gmres(&seq.mats[0], &b, &x0, tol, max_iter);
                if !r.converged {
                    log::warn!(
                        "step {i}: GMRES stopped at residual {:.3e} after {} iterations",
                        r.residual,
                        r.iterations
                    );
                }
                (r.x, StepRecord { step: i, iterations: r.iterations, residual: r.residual, converged: r.converged })
            }
            _ => unreachable!(),
        };
        solution.push(x);
        records.push(rec);
    }
    Ok(MotResult { solution, records })
}

/// Output of a full run: solver log plus RWG current coefficients.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub kind: FormulationKind,
    pub n_conv: usize,
    pub mot: MotResult,
    /// Stage-stacked RWG coefficients per step.
    pub currents: Vec<DVector<f64>>,
}

/// Builds the interaction sequences, right-hand sides and marches one
/// formulation under a plane-wave excitation.
pub fn simulate(
    kind: FormulationKind,
    ctx: &FormulationContext,
    cq: &CqConfig,
    exc: &GaussianPlaneWave,
    solver: SolverKind,
) -> Result<Simulation> {
    let set = build_interaction_matrices(kind, ctx, cq, true)?;
    log::info!("{kind}: {} interaction matrices, tail ratio {:.2e}", set.system.n_conv() + 1, set.system.tail_ratio);
    let rhs = rhs_sequence(&set, ctx, exc, cq)?;
    let mot = mot_solve(&set.system, &rhs, solver)?;
    let tab = RkTableau::radau_iia(cq.stages)?;
    let currents = recover_current(kind, ctx, &tab, cq.dt, &mot.solution);
    Ok(Simulation { kind, n_conv: set.system.n_conv(), mot, currents })
}
