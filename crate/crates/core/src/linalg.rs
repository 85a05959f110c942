//! Dense and sparse linear-algebra helpers.
//!
//! Complex products are split into real GEMMs, which are much faster than
//! the generic complex path on a single core.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::C64;

pub type CMat = DMatrix<C64>;
pub type RMat = DMatrix<f64>;

pub fn split(a: &CMat) -> (RMat, RMat) {
    (a.map(|z| z.re), a.map(|z| z.im))
}

pub fn join(re: &RMat, im: &RMat) -> CMat {
    re.zip_map(im, C64::new)
}

/// Complex product `a * b`.
pub fn cmul(a: &CMat, b: &CMat) -> CMat {
    let (ar, ai) = split(a);
    let (br, bi) = split(b);
    let re = &ar * &br - &ai * &bi;
    let im = &ar * &bi + &ai * &br;
    join(&re, &im)
}

/// Real-by-complex product `r * c`.
pub fn rcmul(r: &RMat, c: &CMat) -> CMat {
    let (cr, ci) = split(c);
    join(&(r * cr), &(r * ci))
}

/// Complex-by-real product `c * r`.
pub fn crmul(c: &CMat, r: &RMat) -> CMat {
    let (cr, ci) = split(c);
    join(&(cr * r), &(ci * r))
}

pub fn to_complex(r: &RMat) -> CMat {
    r.map(|x| C64::new(x, 0.0))
}

pub fn fro_norm(a: &RMat) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// LU factorization of a real square matrix, reused for many solves.
pub struct RealLu {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    n: usize,
}

impl RealLu {
    pub fn new(a: &RMat, what: &str) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension(format!("{what} is not square")));
        }
        let n = a.nrows();
        let lu = a.clone().lu();
        // Reject exactly singular or wildly ill-conditioned pivots.
        let u = lu.u();
        let dmax = (0..n).map(|i| u[(i, i)].abs()).fold(0.0, f64::max);
        let dmin = (0..n).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
        if n > 0 && (!(dmin > 0.0) || dmin < 1e-15 * dmax) {
            return Err(Error::Singular(format!("{what} is numerically singular")));
        }
        Ok(RealLu { lu, n })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &RMat) -> RMat {
        self.lu.solve(b).expect("factorization checked at construction")
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.lu.solve(b).expect("factorization checked at construction")
    }

    pub fn solve_complex(&self, b: &CMat) -> CMat {
        let (br, bi) = split(b);
        join(&self.solve(&br), &self.solve(&bi))
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csr {
    /// Builds from triplets; duplicates are summed and exact zeros dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, mut trip: Vec<(usize, usize, f64)>) -> Self {
        trip.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0; nrows + 1];
        let mut indices = Vec::with_capacity(trip.len());
        let mut values: Vec<f64> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trip {
            assert!(r < nrows && c < ncols, "triplet out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        let mut out = Csr { nrows, ncols, indptr, indices, values };
        out.prune();
        out
    }

    fn prune(&mut self) {
        let mut indptr = vec![0; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.indices.len());
        let mut values = Vec::with_capacity(self.values.len());
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                if self.values[k] != 0.0 {
                    indices.push(self.indices[k]);
                    values.push(self.values[k]);
                }
            }
            indptr[r + 1] = indices.len();
        }
        self.indptr = indptr;
        self.indices = indices;
        self.values = values;
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.indptr[r]..self.indptr[r + 1]).map(move |k| (self.indices[k], self.values[k]))
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn transpose(&self) -> Csr {
        let mut trip = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            trip.extend(self.row(r).map(|(c, v)| (c, r, v)));
        }
        Csr::from_triplets(self.ncols, self.nrows, trip)
    }

    pub fn to_dense(&self) -> RMat {
        let mut d = RMat::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                d[(r, c)] += v;
            }
        }
        d
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum()).collect()
    }

    /// Sparse-by-sparse product.
    pub fn mul(&self, other: &Csr) -> Csr {
        assert_eq!(self.ncols, other.nrows);
        let mut trip = Vec::new();
        for r in 0..self.nrows {
            let mut acc = std::collections::BTreeMap::new();
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    *acc.entry(c).or_insert(0.0) += a * b;
                }
            }
            trip.extend(acc.into_iter().map(|(c, v)| (r, c, v)));
        }
        Csr::from_triplets(self.nrows, other.ncols, trip)
    }

    /// Sparse-by-dense product.
    pub fn mul_dense(&self, b: &RMat) -> RMat {
        assert_eq!(self.ncols, b.nrows());
        let mut out = RMat::zeros(self.nrows, b.ncols());
        for r in 0..self.nrows {
            for (k, v) in self.row(r) {
                for c in 0..b.ncols() {
                    out[(r, c)] += v * b[(k, c)];
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_products_match_naive() {
        let a = CMat::from_fn(3, 4, |i, j| C64::new(i as f64 - j as f64, (i * j) as f64 * 0.5));
        let b = CMat::from_fn(4, 2, |i, j| C64::new(1.0 + i as f64, j as f64 - 0.25));
        let naive = &a * &b;
        assert!((cmul(&a, &b) - naive).norm() < 1e-12);
    }

    #[test]
    fn csr_round_trip() {
        let m = Csr::from_triplets(2, 3, vec![(0, 2, 1.0), (1, 0, -2.0), (0, 2, 0.5), (1, 1, 0.0)]);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.to_dense()[(0, 2)], 1.5);
        assert_eq!(m.transpose().transpose(), m);
    }
}
