//! Div-conforming basis functions: RWG functions on a mesh and
//! Buffa-Christiansen (BC) functions on its barycentric refinement.
//!
//! RWG normalization: on face `t` with vertices `v_i`, local shape functions
//! are `phi_i(r) = (r - v_i) / (2 A_t)`, so each RWG carries unit flux across
//! its edge (divergence `+-1/A`). The plus face of an edge is the face that
//! traverses it from its lower to its higher vertex index.
//!
//! Every basis set is stored as sparse combinations of the RWG functions of a
//! support mesh, so RWG, BC and lifted RWG sets share one assembly path.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mesh::{barycentric_refine, FanMap, RefinedMesh, Topology, TriangleMesh};
use crate::quadrature::TriRule;
use crate::Vec3;

/// Mesh plus its RWG edge data.
#[derive(Debug)]
pub struct RwgSystem {
    pub mesh: TriangleMesh,
    pub topo: Topology,
    pub area: Vec<f64>,
    pub normal: Vec<Vec3>,
    /// Plus face and the local index of its vertex opposite the edge.
    pub plus: Vec<(usize, usize)>,
    /// Minus face and the local index of its vertex opposite the edge.
    pub minus: Vec<(usize, usize)>,
    pub length: Vec<f64>,
}

impl RwgSystem {
    pub fn new(mesh: TriangleMesh) -> Result<Arc<Self>> {
        let topo = Topology::new(&mesh)?;
        let nf = mesh.faces.len();
        let area = (0..nf).map(|t| mesh.face_area(t)).collect();
        let normal = (0..nf).map(|t| mesh.face_normal(t)).collect();
        let local = |t: usize, e: usize| topo.face_edges[t].iter().position(|&x| x == e).unwrap();
        let plus = topo.edges.iter().enumerate().map(|(e, ed)| (ed.left, local(ed.left, e))).collect();
        let minus = topo.edges.iter().enumerate().map(|(e, ed)| (ed.right, local(ed.right, e))).collect();
        let length = topo.edges.iter().map(|ed| (mesh.vertices[ed.v[0]] - mesh.vertices[ed.v[1]]).norm()).collect();
        Ok(Arc::new(RwgSystem { mesh, topo, area, normal, plus, minus, length }))
    }

    pub fn edge_count(&self) -> usize {
        self.topo.edges.len()
    }

    pub fn face_count(&self) -> usize {
        self.mesh.faces.len()
    }

    /// Local shape function `phi_i` of face `t` at point `r`.
    pub fn shape(&self, t: usize, i: usize, r: &Vec3) -> Vec3 {
        (r - self.mesh.vertices[self.mesh.faces[t][i]]) / (2.0 * self.area[t])
    }

    /// Flux of a single-face field `sum_i c_i phi_i` on face `t` across the
    /// segment `a -> b`, positive to the right of the segment seen from outside.
    fn segment_flux(&self, t: usize, c: &[f64; 3], a: &Vec3, b: &Vec3) -> f64 {
        let mid = (a + b) * 0.5;
        let nu = (b - a).cross(&self.normal[t]);
        (0..3).map(|i| c[i] * self.shape(t, i, &mid).dot(&nu)).sum()
    }
}

/// Per-face local coefficients of a basis set: `per_face[t]` lists
/// `(function, [c_0, c_1, c_2])` meaning `f = sum_i c_i phi_i` on face `t`.
#[derive(Debug, Clone)]
pub struct FaceExpansion {
    pub n_functions: usize,
    pub per_face: Vec<Vec<(usize, [f64; 3])>>,
}

impl FaceExpansion {
    /// Net charge (integral of the divergence) of each function on face `t`.
    pub fn charge(c: &[f64; 3]) -> f64 {
        c[0] + c[1] + c[2]
    }

    pub fn value(sys: &RwgSystem, t: usize, c: &[f64; 3], r: &Vec3) -> Vec3 {
        (0..3).map(|i| sys.shape(t, i, r) * c[i]).sum()
    }

    /// Faces carrying each function.
    pub fn supports(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_functions];
        for (t, list) in self.per_face.iter().enumerate() {
            for &(m, _) in list {
                out[m].push(t);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    Rwg,
    Bc,
}

#[derive(Debug, Clone)]
pub struct BasisSet {
    pub kind: BasisKind,
    pub support: Arc<RwgSystem>,
    /// Function `m` is `sum (k, w)` of support RWG `k` with weight `w`.
    pub combos: Vec<Vec<(usize, f64)>>,
}

impl BasisSet {
    pub fn rwg(support: Arc<RwgSystem>) -> Self {
        let combos = (0..support.edge_count()).map(|e| vec![(e, 1.0)]).collect();
        BasisSet { kind: BasisKind::Rwg, support, combos }
    }

    pub fn len(&self) -> usize {
        self.combos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.combos.is_empty()
    }

    pub fn expansion(&self) -> FaceExpansion {
        let sys = &self.support;
        let mut acc: Vec<BTreeMap<usize, [f64; 3]>> = vec![BTreeMap::new(); sys.face_count()];
        for (m, combo) in self.combos.iter().enumerate() {
            for &(k, w) in combo {
                let (tp, ip) = sys.plus[k];
                let (tm, im) = sys.minus[k];
                acc[tp].entry(m).or_insert([0.0; 3])[ip] += w;
                acc[tm].entry(m).or_insert([0.0; 3])[im] -= w;
            }
        }
        FaceExpansion {
            n_functions: self.len(),
            per_face: acc.into_iter().map(|map| map.into_iter().collect()).collect(),
        }
    }

    /// Function values at `r` on face `t`, as `(function, vector)` pairs.
    pub fn evaluate_on_face(&self, exp: &FaceExpansion, t: usize, r: &Vec3) -> Vec<(usize, Vec3)> {
        exp.per_face[t].iter().map(|(m, c)| (*m, FaceExpansion::value(&self.support, t, c, r))).collect()
    }

    /// Expresses coarse RWG functions exactly on the refined support (a coarse
    /// RWG is a member of the fine RWG space).
    pub fn lift_rwg(coarse: &RwgSystem, fine: Arc<RwgSystem>) -> Result<Self> {
        if fine.face_count() != 6 * coarse.face_count() {
            return Err(Error::Dimension("fine support is not a barycentric refinement".into()));
        }
        let mut combos = vec![Vec::new(); coarse.edge_count()];
        for (k, ed) in fine.topo.edges.iter().enumerate() {
            let (a, b) = (fine.mesh.vertices[ed.v[0]], fine.mesh.vertices[ed.v[1]]);
            // Parent faces of the two fine faces; use whichever carries each
            // coarse function (normal components agree across coarse edges).
            let parents = [ed.left / 6, ed.right / 6];
            let mut seen = Vec::new();
            for &t in &parents {
                for (i, &e) in coarse.topo.face_edges[t].iter().enumerate() {
                    if seen.contains(&e) {
                        continue;
                    }
                    let mut c = [0.0; 3];
                    c[i] = if coarse.plus[e].0 == t { 1.0 } else { -1.0 };
                    let flux = coarse.segment_flux(t, &c, &a, &b);
                    seen.push(e);
                    if flux.abs() > 1e-13 {
                        combos[e].push((k, flux));
                    }
                }
            }
        }
        Ok(BasisSet { kind: BasisKind::Rwg, support: fine, combos })
    }

    /// Buffa-Christiansen functions, one per coarse edge, on the barycentric
    /// refinement. Function `e` has total divergence `+1` on the dual cell of
    /// the lower vertex of edge `e` and `-1` on the dual cell of the higher one.
    pub fn buffa_christiansen(coarse: &RwgSystem, refined: &RefinedMesh, fine: Arc<RwgSystem>) -> Result<Self> {
        let fan = FanMap::new(&coarse.mesh);
        let ftopo = &fine.topo;
        let fine_edge = |a: usize, b: usize| -> Result<usize> {
            ftopo.find_edge(a, b).ok_or_else(|| Error::Mesh(format!("refined mesh lacks edge ({a}, {b})")))
        };
        // Coefficient of fine RWG `k` for a flux `phi` from fine face `from`.
        let signed = |k: usize, from: usize, phi: f64| -> Result<f64> {
            let ed = ftopo.edges[k];
            if ed.left == from {
                Ok(phi)
            } else if ed.right == from {
                Ok(-phi)
            } else {
                Err(Error::Mesh(format!("fine edge {k} does not border face {from}")))
            }
        };
        let mut combos = Vec::with_capacity(coarse.edge_count());
        for (e0, ed) in coarse.topo.edges.iter().enumerate() {
            let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
            for (v, other, q) in [(ed.v[0], ed.v[1], 1.0), (ed.v[1], ed.v[0], -1.0)] {
                let spokes = fan.spokes_from(v, other)?;
                let n = spokes.len();
                let mut tri = Vec::with_capacity(2 * n);
                let mut radial = Vec::with_capacity(2 * n);
                for &(s, t) in &spokes {
                    let i = coarse.mesh.faces[t].iter().position(|&x| x == v).unwrap();
                    tri.push(refined.fine_face_after(t, i));
                    tri.push(refined.fine_face_before(t, i));
                    let ce = coarse.topo.find_edge(v, s).unwrap();
                    radial.push(fine_edge(v, refined.midpoint(ce))?);
                    radial.push(fine_edge(v, refined.barycenter(t))?);
                }
                let nn = 2 * n;
                for j in 1..nn {
                    let phi = q * (j as f64 - n as f64) / nn as f64;
                    if phi != 0.0 {
                        *acc.entry(radial[j]).or_default() += signed(radial[j], tri[j - 1], phi)?;
                    }
                }
                if q > 0.0 {
                    let m = refined.midpoint(e0);
                    let first = fine_edge(m, refined.barycenter(spokes[0].1))?;
                    let last = fine_edge(m, refined.barycenter(spokes[n - 1].1))?;
                    *acc.entry(first).or_default() += signed(first, tri[0], 0.5)?;
                    *acc.entry(last).or_default() += signed(last, tri[nn - 1], 0.5)?;
                }
            }
            combos.push(acc.into_iter().filter(|(_, w)| *w != 0.0).collect());
        }
        Ok(BasisSet { kind: BasisKind::Bc, support: fine, combos })
    }
}

/// RWG set on a mesh together with the BC set on its barycentric refinement.
#[derive(Debug, Clone)]
pub struct DualBases {
    pub coarse: Arc<RwgSystem>,
    pub fine: Arc<RwgSystem>,
    pub refined: Arc<RefinedMesh>,
    pub rwg: BasisSet,
    pub bc: BasisSet,
}

impl DualBases {
    pub fn new(mesh: TriangleMesh) -> Result<Self> {
        let coarse = RwgSystem::new(mesh)?;
        let refined = barycentric_refine(&coarse.mesh, &coarse.topo)?;
        let fine = RwgSystem::new(refined.mesh.clone())?;
        let rwg = BasisSet::rwg(coarse.clone());
        let bc = BasisSet::buffa_christiansen(&coarse, &refined, fine.clone())?;
        Ok(DualBases { coarse, fine, refined: Arc::new(refined), rwg, bc })
    }

    /// Mixed Gram matrix `G[m, n] = <n x f_m^rwg, f_n^bc>`.
    pub fn mixed_gram(&self) -> Result<DMatrix<f64>> {
        let lifted = BasisSet::lift_rwg(&self.coarse, self.fine.clone())?;
        gram(&lifted, &self.bc, true)
    }
}

/// Gram matrix `<test, trial>` (or `<n x test, trial>` when `rotate_test`).
/// Both sets must share a support mesh.
pub fn gram(test: &BasisSet, trial: &BasisSet, rotate_test: bool) -> Result<DMatrix<f64>> {
    if !Arc::ptr_eq(&test.support, &trial.support) {
        return Err(Error::Dimension("gram needs test and trial on one support mesh".into()));
    }
    let sys = &test.support;
    let (et, er) = (test.expansion(), trial.expansion());
    let rule = TriRule::symmetric_degree(2);
    let mut g = DMatrix::zeros(test.len(), trial.len());
    for t in 0..sys.face_count() {
        if et.per_face[t].is_empty() || er.per_face[t].is_empty() {
            continue;
        }
        let corners = sys.mesh.corners(t);
        let n = sys.normal[t];
        for (x, w) in rule.map(&corners) {
            let wa = w * sys.area[t];
            let tv: Vec<(usize, Vec3)> = et.per_face[t]
                .iter()
                .map(|(m, c)| {
                    let f = FaceExpansion::value(sys, t, c, &x);
                    (*m, if rotate_test { n.cross(&f) } else { f })
                })
                .collect();
            for (nn, c) in &er.per_face[t] {
                let f = FaceExpansion::value(sys, t, c, &x);
                for (m, fm) in &tv {
                    g[(*m, *nn)] += wa * fm.dot(&f);
                }
            }
        }
    }
    Ok(g)
}
