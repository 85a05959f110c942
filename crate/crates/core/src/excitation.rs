//! Gaussian plane-wave excitation and its projection onto a basis.

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::basis::{BasisSet, FaceExpansion};
use crate::cq::RkTableau;
use crate::error::{invalid, Result};
use crate::quadrature::TriRule;
use crate::{Vec3, C0};

/// `e(r, t) = A0 exp(-tau^2 / (2 sigma^2)) p`, with retarded time
/// `tau = t - k.r / c0 - t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPlaneWave {
    pub amplitude: f64,
    pub sigma: f64,
    pub t0: f64,
    pub direction: Vec3,
    pub polarization: Vec3,
}

/// Which time function of the field to sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signal {
    Field,
    /// Time derivative.
    Derivative,
    /// Time integral from minus infinity.
    Primitive,
}

impl GaussianPlaneWave {
    pub fn new(amplitude: f64, sigma: f64, t0: f64, direction: Vec3, polarization: Vec3) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(invalid("pulse width must be positive"));
        }
        let (k, p) = (direction.normalize(), polarization.normalize());
        if !k.iter().all(|v| v.is_finite()) || !p.iter().all(|v| v.is_finite()) {
            return Err(invalid("propagation and polarization directions must be nonzero"));
        }
        if k.dot(&p).abs() > 1e-12 {
            return Err(invalid("polarization must be orthogonal to the propagation direction"));
        }
        Ok(GaussianPlaneWave { amplitude, sigma, t0, direction: k, polarization: p })
    }

    /// Pulse with bandwidth `f_bw`: `sigma = 6 / (2 pi f_bw)`, `t0 = 6 sigma`,
    /// travelling along `-z` and polarized along `x`.
    pub fn with_bandwidth(f_bw: f64) -> Result<Self> {
        if !(f_bw > 0.0) {
            return Err(invalid("bandwidth must be positive"));
        }
        let sigma = 6.0 / (2.0 * PI * f_bw);
        Self::new(1.0, sigma, 6.0 * sigma, Vec3::new(0.0, 0.0, -1.0), Vec3::new(1.0, 0.0, 0.0))
    }

    fn tau(&self, r: &Vec3, t: f64) -> f64 {
        t - self.direction.dot(r) / C0 - self.t0
    }

    /// Scalar time profile of the requested signal at retarded time `tau`.
    pub fn profile(&self, signal: Signal, tau: f64) -> f64 {
        let g = self.amplitude * (-tau * tau / (2.0 * self.sigma * self.sigma)).exp();
        match signal {
            Signal::Field => g,
            Signal::Derivative => -tau / (self.sigma * self.sigma) * g,
            Signal::Primitive => {
                self.amplitude * self.sigma * (PI / 2.0).sqrt() * (1.0 + libm::erf(tau / (self.sigma * 2f64.sqrt())))
            }
        }
    }

    pub fn sample(&self, signal: Signal, r: &Vec3, t: f64) -> Vec3 {
        self.polarization * self.profile(signal, self.tau(r, t))
    }

    pub fn field(&self, r: &Vec3, t: f64) -> Vec3 {
        self.sample(Signal::Field, r, t)
    }
}

/// Tested excitation `<f_m, e(., t)>` for every function and every requested
/// time: `out[i][m]`.
pub fn project_excitation(
    exc: &GaussianPlaneWave,
    basis: &BasisSet,
    times: &[f64],
    signal: Signal,
    rule_degree: usize,
) -> Vec<DVector<f64>> {
    let sys = &basis.support;
    let exp = basis.expansion();
    let rule = TriRule::symmetric_degree(rule_degree);
    // Per quadrature point: retarded delay and weighted p . f_m values.
    let mut points: Vec<(f64, Vec<(usize, f64)>)> = Vec::new();
    for t in 0..sys.face_count() {
        if exp.per_face[t].is_empty() {
            continue;
        }
        let corners = sys.mesh.corners(t);
        for (x, w) in rule.map(&corners) {
            let wa = w * sys.area[t];
            let vals = exp.per_face[t]
                .iter()
                .map(|(m, c)| (*m, wa * exc.polarization.dot(&FaceExpansion::value(sys, t, c, &x))))
                .collect();
            points.push((exc.direction.dot(&x) / C0, vals));
        }
    }
    times
        .iter()
        .map(|&t| {
            let mut v = DVector::zeros(basis.len());
            for (delay, vals) in &points {
                let g = exc.profile(signal, t - delay - exc.t0);
                for &(m, f) in vals {
                    v[m] += g * f;
                }
            }
            v
        })
        .collect()
}

/// Stage-sampled excitation for a time-stepping run: entry `i` is the stacked
/// vector over stages `t = dt (i + c_k)` in the `p m + k` layout.
pub fn stage_excitation(
    exc: &GaussianPlaneWave,
    basis: &BasisSet,
    tab: &RkTableau,
    dt: f64,
    n_steps: usize,
    signal: Signal,
) -> Vec<DVector<f64>> {
    let p = tab.stages();
    let times: Vec<f64> = (0..n_steps).flat_map(|i| tab.c.iter().map(move |c| dt * (i as f64 + c))).collect();
    let samples = project_excitation(exc, basis, &times, signal, 4);
    let n = basis.len();
    (0..n_steps)
        .map(|i| {
            let mut v = DVector::zeros(n * p);
            for k in 0..p {
                let s = &samples[i * p + k];
                for m in 0..n {
                    v[p * m + k] = s[m];
                }
            }
            v
        })
        .collect()
}
