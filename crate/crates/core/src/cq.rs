//! Runge-Kutta convolution quadrature.
//!
//! A Laplace-domain operator `theta(s)` is turned into a causal sequence of
//! interaction matrices `Z_0, Z_1, ...` acting on stage-stacked unknowns.
//! Unknown `m` at stage `k` sits at index `p * m + k`.
//!
//! Convention: the time-shift variable `z` is the one for which `z^-1` is a
//! one-step delay, so `theta_Z(z) = sum_j Z_j z^-j`. Sequences are recovered
//! from samples on the circle `|z^-1| = rho` by a discrete Fourier sum.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::linalg::{fro_norm, CMat, RMat};
use crate::C64;

/// Butcher tableau of an implicit Runge-Kutta method.
#[derive(Debug, Clone)]
pub struct RkTableau {
    pub a: RMat,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub a_inv: RMat,
}

impl RkTableau {
    /// Radau IIA with 1, 2 or 3 stages (orders 1, 3, 5).
    pub fn radau_iia(stages: usize) -> Result<Self> {
        let (a, c): (Vec<f64>, Vec<f64>) = match stages {
            1 => (vec![1.0], vec![1.0]),
            2 => (vec![5.0 / 12.0, -1.0 / 12.0, 3.0 / 4.0, 1.0 / 4.0], vec![1.0 / 3.0, 1.0]),
            3 => {
                let r6 = 6f64.sqrt();
                (
                    vec![
                        (88.0 - 7.0 * r6) / 360.0,
                        (296.0 - 169.0 * r6) / 1800.0,
                        (-2.0 + 3.0 * r6) / 225.0,
                        (296.0 + 169.0 * r6) / 1800.0,
                        (88.0 + 7.0 * r6) / 360.0,
                        (-2.0 - 3.0 * r6) / 225.0,
                        (16.0 - r6) / 36.0,
                        (16.0 + r6) / 36.0,
                        1.0 / 9.0,
                    ],
                    vec![(4.0 - r6) / 10.0, (4.0 + r6) / 10.0, 1.0],
                )
            }
            _ => return Err(invalid(format!("Radau IIA is available for 1 to 3 stages, not {stages}"))),
        };
        let a = DMatrix::from_row_slice(stages, stages, &a);
        let b = a.row(stages - 1).iter().copied().collect();
        let a_inv = a.clone().try_inverse().ok_or_else(|| Error::Singular("Butcher matrix".into()))?;
        Ok(RkTableau { a, b, c, a_inv })
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }

    /// `A^-1 1 b^T A^-1`.
    pub fn a_inv_1b_a_inv(&self) -> RMat {
        let p = self.stages();
        let ones = DVector::from_element(p, 1.0);
        let b = DVector::from_column_slice(&self.b);
        &self.a_inv * ones * b.transpose() * &self.a_inv
    }
}

/// Stage-frequency matrix `(A + 1 b^T zeta / (1 - zeta))^-1 / dt` in terms
/// of the delay variable `zeta = z^-1`; equals `A^-1 / dt` at `zeta = 0`.
pub fn stage_frequency_delay(tab: &RkTableau, zeta: C64, dt: f64) -> Result<CMat> {
    let p = tab.stages();
    if (zeta - 1.0).norm() < 1e-14 {
        return Err(Error::Singular("stage frequency at z = 1".into()));
    }
    let alpha = zeta / (1.0 - zeta);
    let m = CMat::from_fn(p, p, |i, j| C64::new(tab.a[(i, j)], 0.0) + alpha * tab.b[j]);
    let inv = m.try_inverse().ok_or_else(|| Error::Singular("stage frequency".into()))?;
    Ok(inv / C64::new(dt, 0.0))
}

/// Stage-frequency matrix `s_cq(z) = (A + 1 b^T / (z - 1))^-1 / dt`.
pub fn stage_frequency(tab: &RkTableau, z: C64, dt: f64) -> Result<CMat> {
    if z.norm() == 0.0 {
        return Err(invalid("z = 0 is outside the transform domain"));
    }
    stage_frequency_delay(tab, z.inv(), dt)
}

/// Eigendecomposition `M = Q diag(lambda) Q^-1` of a small complex matrix
/// with simple eigenvalues.
#[derive(Debug, Clone)]
pub struct StageEigen {
    pub lambda: Vec<C64>,
    pub q: CMat,
    pub q_inv: CMat,
}

pub fn stage_eigen(m: &CMat) -> Result<StageEigen> {
    let p = m.nrows();
    let lambda: Vec<C64> = m
        .clone()
        .schur()
        .eigenvalues()
        .ok_or_else(|| Error::Numerical("stage eigenvalues".into()))?
        .iter()
        .copied()
        .collect();
    let scale = m.norm().max(f64::MIN_POSITIVE);
    for i in 0..p {
        for j in 0..i {
            if (lambda[i] - lambda[j]).norm() < 1e-10 * scale {
                return Err(Error::Numerical("stage frequency has a repeated eigenvalue".into()));
            }
        }
    }
    let mut q = CMat::zeros(p, p);
    for (r, &l) in lambda.iter().enumerate() {
        let shifted = m - CMat::identity(p, p) * l;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.ok_or_else(|| Error::Numerical("stage eigenvector".into()))?;
        let k = (0..p).min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b])).unwrap();
        for i in 0..p {
            q[(i, r)] = v_t[(k, i)].conj();
        }
    }
    let q_inv = q.clone().try_inverse().ok_or_else(|| Error::Singular("stage eigenvectors".into()))?;
    Ok(StageEigen { lambda, q, q_inv })
}

/// Z-domain block matrix from per-eigenvalue Laplace matrices:
/// `[theta_Z]_{(m,k),(n,l)} = sum_r Q[k,r] theta_r[m,n] Q^-1[r,l]`.
pub fn zdomain_block(eig: &StageEigen, theta: &[CMat]) -> Result<CMat> {
    let p = eig.lambda.len();
    if theta.len() != p {
        return Err(Error::Dimension(format!("expected {p} Laplace matrices, got {}", theta.len())));
    }
    let (nr, nc) = theta[0].shape();
    let mut out = CMat::zeros(p * nr, p * nc);
    for (r, th) in theta.iter().enumerate() {
        if th.shape() != (nr, nc) {
            return Err(Error::Dimension("Laplace matrices differ in shape".into()));
        }
        for k in 0..p {
            for l in 0..p {
                let w = eig.q[(k, r)] * eig.q_inv[(r, l)];
                if w == C64::new(0.0, 0.0) {
                    continue;
                }
                for n in 0..nc {
                    for m in 0..nr {
                        out[(p * m + k, p * n + l)] += w * th[(m, n)];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Evaluates `theta_Z(z)` for a Laplace operator given as a closure.
pub fn zdomain_apply<F>(tab: &RkTableau, dt: f64, z: C64, mut theta: F) -> Result<CMat>
where
    F: FnMut(C64) -> Result<CMat>,
{
    let eig = stage_eigen(&stage_frequency(tab, z, dt)?)?;
    let mats = eig.lambda.iter().map(|&s| theta(s)).collect::<Result<Vec<_>>>()?;
    zdomain_block(&eig, &mats)
}

/// Exact CQ weights of the time derivative: `Z_0 = A^-1 / dt`,
/// `Z_1 = -A^-1 1 b^T A^-1 / dt`, all later weights zero.
pub fn derivative_weights(tab: &RkTableau, dt: f64) -> [RMat; 2] {
    [&tab.a_inv / dt, -tab.a_inv_1b_a_inv() / dt]
}

/// Sampling circle for the inverse transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourPlan {
    /// Number of samples (a power of two).
    pub n_z: usize,
    /// Radius of the circle in the delay variable `z^-1`.
    pub rho: f64,
}

impl ContourPlan {
    /// Plan recovering `horizon + 1` coefficients: `n_z` is the first power of
    /// two at least `2 (horizon + 1)` and `rho = eps^(1 / (2 n_z))`, so that
    /// aliasing enters with weight `sqrt(eps)`.
    pub fn new(horizon: usize, eps: f64) -> Result<Self> {
        Self::with_length((2 * (horizon + 1)).next_power_of_two().max(8), eps)
    }

    pub fn with_length(n_z: usize, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(invalid("contour accuracy must lie in (0, 1)"));
        }
        if n_z < 2 || !n_z.is_power_of_two() {
            return Err(invalid("contour length must be a power of two >= 2"));
        }
        let rho = eps.powf(1.0 / (2.0 * n_z as f64));
        Ok(ContourPlan { n_z, rho })
    }

    /// Delay variable at sample `k`.
    pub fn zeta(&self, k: usize) -> C64 {
        C64::from_polar(self.rho, 2.0 * PI * k as f64 / self.n_z as f64)
    }
}

/// Accumulates real coefficients `Z_0..=Z_h` from conjugate-symmetric samples
/// at `k = 0..=n_z/2`.
pub struct TransformAccumulator {
    plan: ContourPlan,
    pub coeffs: Vec<RMat>,
    pub imag_residue: f64,
}

impl TransformAccumulator {
    pub fn new(plan: ContourPlan, horizon: usize, rows: usize, cols: usize) -> Result<Self> {
        if 2 * horizon >= plan.n_z + 1 {
            return Err(invalid("contour too short for the requested horizon"));
        }
        Ok(TransformAccumulator {
            plan,
            coeffs: (0..=horizon).map(|_| RMat::zeros(rows, cols)).collect(),
            imag_residue: 0.0,
        })
    }

    pub fn add(&mut self, k: usize, sample: &CMat) {
        let n = self.plan.n_z;
        let self_conjugate = k == 0 || 2 * k == n;
        let mult = if self_conjugate { 1.0 } else { 2.0 };
        if self_conjugate {
            let im = sample.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
            let re = sample.iter().map(|z| z.re.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
            self.imag_residue = self.imag_residue.max(im / re);
        }
        let re = sample.map(|z| z.re);
        let im = sample.map(|z| z.im);
        for (j, zj) in self.coeffs.iter_mut().enumerate() {
            let phase = C64::from_polar(1.0, -2.0 * PI * ((j * k) % n) as f64 / n as f64);
            let w = phase * (mult * self.plan.rho.powi(-(j as i32)) / n as f64);
            zj.zip_zip_apply(&re, &im, |z, r, i| *z += w.re * r - w.im * i);
        }
    }

    pub fn finish(self) -> Result<Vec<RMat>> {
        if self.imag_residue > 1e-10 {
            return Err(Error::Numerical(format!(
                "samples are not conjugate symmetric (imaginary residue {:.3e})",
                self.imag_residue
            )));
        }
        Ok(self.coeffs)
    }
}

/// Inverse Z-transform of a block operator given by samples `theta_Z(z)`:
/// returns `Z_0..=Z_horizon`. The closure receives `z` (with `|z^-1| = rho`).
pub fn inverse_ztransform<F>(plan: ContourPlan, horizon: usize, mut sample: F) -> Result<Vec<RMat>>
where
    F: FnMut(C64) -> Result<CMat>,
{
    let first = sample(plan.zeta(0).inv())?;
    let mut acc = TransformAccumulator::new(plan, horizon, first.nrows(), first.ncols())?;
    acc.add(0, &first);
    for k in 1..=plan.n_z / 2 {
        let s = sample(plan.zeta(k).inv())?;
        if s.shape() != first.shape() {
            return Err(Error::Dimension("samples change shape".into()));
        }
        acc.add(k, &s);
    }
    acc.finish()
}

/// Rule for the number of retained interaction matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConvLength {
    /// Keep `Z_0..=Z_n` regardless of decay.
    Fixed(usize),
    /// Truncate once `||Z_j||_F <= tail_tol ||Z_0||_F` for all later `j`,
    /// searching up to `cap` (enlarged automatically up to the step count
    /// when the tail has not decayed).
    Auto { cap: usize, tail_tol: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CqConfig {
    pub dt: f64,
    pub n_steps: usize,
    pub stages: usize,
    pub conv: ConvLength,
    /// Accuracy parameter of the sampling circle.
    pub contour_eps: f64,
    /// Forces the number of contour samples instead of deriving it from the
    /// horizon.
    pub transform_length: Option<usize>,
}

impl CqConfig {
    pub fn new(dt: f64, n_steps: usize) -> Self {
        CqConfig {
            dt,
            n_steps,
            stages: 2,
            conv: ConvLength::Auto { cap: 64, tail_tol: 1e-10 },
            contour_eps: 1e-12,
            transform_length: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid("time step must be positive"));
        }
        if self.n_steps == 0 {
            return Err(invalid("number of time steps must be positive"));
        }
        if !(self.contour_eps > 0.0 && self.contour_eps < 1.0) {
            return Err(invalid("contour accuracy must lie in (0, 1)"));
        }
        if let Some(n) = self.transform_length {
            if n < 8 || !n.is_power_of_two() {
                return Err(invalid("transform length must be a power of two >= 8"));
            }
        }
        if let ConvLength::Fixed(n) = self.conv {
            if n > self.n_steps {
                return Err(invalid("retained interaction count exceeds the step count"));
            }
        }
        Ok(())
    }
}

/// Causal block-matrix sequence `Z_0..=Z_{n_conv}`.
#[derive(Debug, Clone)]
pub struct InteractionSequence {
    pub mats: Vec<RMat>,
    pub stages: usize,
    /// `||Z_last||_F / ||Z_0||_F`.
    pub tail_ratio: f64,
}

impl InteractionSequence {
    pub fn n_conv(&self) -> usize {
        self.mats.len() - 1
    }

    pub fn block_dim(&self) -> usize {
        self.mats[0].nrows()
    }

    /// Truncates according to `tail_tol`; returns whether the tail decayed.
    pub fn truncated(mats: Vec<RMat>, stages: usize, tail_tol: Option<f64>) -> (Self, bool) {
        let norms: Vec<f64> = mats.iter().map(fro_norm).collect();
        let z0 = norms[0].max(f64::MIN_POSITIVE);
        let mut keep = mats.len();
        let mut decayed = false;
        if let Some(tol) = tail_tol {
            // Smallest j such that every later norm is below tolerance.
            let mut j = norms.len();
            while j > 1 && norms[j - 1] <= tol * z0 {
                j -= 1;
            }
            if j < norms.len() {
                keep = j + 1;
                decayed = true;
            }
        }
        let mut mats = mats;
        mats.truncate(keep);
        let tail_ratio = norms[keep - 1] / z0;
        (InteractionSequence { mats, stages, tail_ratio }, decayed)
    }
}
