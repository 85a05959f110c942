//! Quasi-Helmholtz decomposition: star and loop incidence matrices and the
//! orthogonal projectors built from them.
//!
//! `sigma` (E x F): `+1` on the plus face of each edge, `-1` on the minus face.
//! `lambda` (E x V): `+1` on the lower vertex of each edge, `-1` on the higher
//! one; column `v` holds the RWG coefficients of the loop around vertex `v`.
//! On BC functions the roles swap: their divergence matrix equals `lambda`.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{Csr, RMat};
use crate::mesh::Topology;

pub fn star_matrix(topo: &Topology) -> Csr {
    let trip = topo.edges.iter().enumerate().flat_map(|(e, ed)| [(e, ed.left, 1.0), (e, ed.right, -1.0)]).collect();
    Csr::from_triplets(topo.edges.len(), topo.face_count, trip)
}

pub fn loop_matrix(topo: &Topology) -> Csr {
    let trip = topo.edges.iter().enumerate().flat_map(|(e, ed)| [(e, ed.v[0], 1.0), (e, ed.v[1], -1.0)]).collect();
    Csr::from_triplets(topo.edges.len(), topo.vertex_count, trip)
}

/// Connected components of the graph whose Laplacian is `a^T a` for an
/// incidence matrix `a` with two entries per row.
fn incidence_components(a: &Csr) -> Vec<usize> {
    let n = a.ncols;
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for r in 0..a.nrows {
        let cols: Vec<usize> = a.row(r).map(|(c, _)| c).collect();
        for w in cols.windows(2) {
            let (x, y) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
            if x != y {
                parent[x] = y;
            }
        }
    }
    (0..n).map(|i| find(&mut parent, i)).collect()
}

/// Dense orthogonal projector `a (a^T a)^+ a^T` onto the range of an
/// incidence matrix. The graph Laplacian is regularized by the component
/// averaging operators, which leaves the projector unchanged, and factored
/// by Cholesky.
pub fn range_projector(a: &Csr) -> Result<RMat> {
    let n = a.ncols;
    let at = a.transpose();
    let mut lap = at.mul(a).to_dense();
    let comp = incidence_components(a);
    let mut sizes = std::collections::HashMap::new();
    for &c in &comp {
        *sizes.entry(c).or_insert(0usize) += 1;
    }
    for i in 0..n {
        for j in 0..n {
            if comp[i] == comp[j] {
                lap[(i, j)] += 1.0 / sizes[&comp[i]] as f64;
            }
        }
    }
    let chol = Cholesky::new(lap).ok_or_else(|| Error::Singular("regularized graph Laplacian".into()))?;
    let y = chol.solve(&at.to_dense());
    let mut p = a.mul_dense(&y);
    // Symmetrize away rounding asymmetry.
    let pt = p.transpose();
    p += pt;
    p *= 0.5;
    Ok(p)
}

/// Star/loop incidence matrices of a mesh and their range projectors.
#[derive(Debug, Clone)]
pub struct QuasiHelmholtz {
    pub sigma: Csr,
    pub lambda: Csr,
    /// Projector onto the range of `sigma` (non-solenoidal RWG part).
    pub p_sigma: RMat,
    /// Projector onto the range of `lambda` (RWG loops, BC non-solenoidal part).
    pub p_lambda: RMat,
}

impl QuasiHelmholtz {
    pub fn new(topo: &Topology) -> Result<Self> {
        let sigma = star_matrix(topo);
        let lambda = loop_matrix(topo);
        let p_sigma = range_projector(&sigma)?;
        let p_lambda = range_projector(&lambda)?;
        Ok(QuasiHelmholtz { sigma, lambda, p_sigma, p_lambda })
    }

    /// `I - P^Sigma`: RWG solenoidal plus harmonic part.
    pub fn p_lambda_h(&self) -> RMat {
        complement(&self.p_sigma)
    }

    /// `I - P^Lambda`: BC solenoidal plus harmonic part.
    pub fn p_sigma_h(&self) -> RMat {
        complement(&self.p_lambda)
    }
}

pub fn complement(p: &RMat) -> RMat {
    RMat::identity(p.nrows(), p.ncols()) - p
}

/// Matrix-free projector onto the range of an incidence matrix, applying
/// `a (a^T a)^+ a^T x` by conjugate gradients on the graph Laplacian with the
/// per-component constant vectors deflated.
pub struct CgProjector {
    a: Csr,
    at: Csr,
    comp: Vec<usize>,
    pub tol: f64,
    pub max_iter: usize,
}

impl CgProjector {
    pub fn new(a: Csr) -> Self {
        let at = a.transpose();
        let comp = incidence_components(&a);
        let max_iter = 10 * a.ncols.max(10);
        CgProjector { a, at, comp, tol: 1e-13, max_iter }
    }

    fn deflate(&self, v: &mut [f64]) {
        let mut sum = std::collections::HashMap::new();
        for (i, &c) in self.comp.iter().enumerate() {
            let e = sum.entry(c).or_insert((0.0, 0usize));
            e.0 += v[i];
            e.1 += 1;
        }
        for (i, &c) in self.comp.iter().enumerate() {
            let (s, n) = sum[&c];
            v[i] -= s / n as f64;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.a.nrows {
            return Err(Error::Dimension(format!("projector expects {} entries", self.a.nrows)));
        }
        let mut b = self.at.mul_vec(x);
        self.deflate(&mut b);
        let lap = |v: &[f64]| self.at.mul_vec(&self.a.mul_vec(v));
        let bnorm = DVector::from_column_slice(&b).norm();
        let mut y = vec![0.0; b.len()];
        if bnorm > 0.0 {
            let mut r = b.clone();
            let mut p = r.clone();
            let mut rr: f64 = r.iter().map(|v| v * v).sum();
            let mut converged = false;
            for _ in 0..self.max_iter {
                let ap = lap(&p);
                let alpha = rr / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
                for i in 0..y.len() {
                    y[i] += alpha * p[i];
                    r[i] -= alpha * ap[i];
                }
                self.deflate(&mut r);
                let rr_new: f64 = r.iter().map(|v| v * v).sum();
                if rr_new.sqrt() <= self.tol * bnorm {
                    converged = true;
                    break;
                }
                let beta = rr_new / rr;
                for i in 0..p.len() {
                    p[i] = r[i] + beta * p[i];
                }
                rr = rr_new;
            }
            if !converged {
                return Err(Error::NotConverged("projector CG".into()));
            }
        }
        Ok(self.a.mul_vec(&y))
    }
}

/// Dense matrix of a projector given as an operator, column by column.
pub fn cg_projector_dense(proj: &CgProjector) -> Result<RMat> {
    let n = proj.a.nrows;
    let mut out = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = proj.apply(&e)?;
        out.column_mut(j).copy_from_slice(&col);
        e[j] = 0.0;
    }
    Ok(out)
}
