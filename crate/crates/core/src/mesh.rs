//! Closed triangle surface meshes: parsing, generators, topology and
//! barycentric refinement.
//!
//! Mesh text format: `v x y z` vertex lines and `f i j k` face lines with
//! 1-based vertex indices; `#` starts a comment.

use std::collections::{HashMap, VecDeque};
use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};
use crate::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    /// Counter-clockwise when viewed from outside (outward normals).
    pub faces: Vec<[usize; 3]>,
}

fn mesh_err(msg: impl Into<String>) -> Error {
    Error::Mesh(msg.into())
}

impl TriangleMesh {
    /// Validates the mesh and reorients faces consistently with outward
    /// normals. Errors on open boundaries, non-manifold edges or vertices,
    /// degenerate faces and non-orientable surfaces.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if faces.is_empty() {
            return Err(mesh_err("mesh has no faces"));
        }
        let nv = vertices.len();
        let mut used = vec![false; nv];
        for (t, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= nv {
                    return Err(mesh_err(format!("face {t} references missing vertex {v}")));
                }
                used[v] = true;
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(mesh_err(format!("face {t} repeats a vertex")));
            }
        }
        if let Some(v) = used.iter().position(|u| !u) {
            return Err(mesh_err(format!("vertex {v} is not used by any face")));
        }
        let mut mesh = TriangleMesh { vertices, faces };
        let scale = mesh.bounding_extent().max(f64::MIN_POSITIVE);
        for t in 0..mesh.faces.len() {
            if mesh.face_area(t) <= 1e-14 * scale * scale {
                return Err(mesh_err(format!("face {t} is degenerate")));
            }
        }
        mesh.orient()?;
        mesh.check_vertex_fans()?;
        Ok(mesh)
    }

    fn bounding_extent(&self) -> f64 {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &self.vertices {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (hi - lo).norm()
    }

    fn orient(&mut self) -> Result<()> {
        let nf = self.faces.len();
        let mut edge_faces: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (t, f) in self.faces.iter().enumerate() {
            for i in 0..3 {
                let (a, b) = (f[i], f[(i + 1) % 3]);
                edge_faces.entry((a.min(b), a.max(b))).or_default().push(t);
            }
        }
        for (&(a, b), fs) in &edge_faces {
            match fs.len() {
                2 => {}
                1 => return Err(mesh_err(format!("open boundary at edge ({a}, {b})"))),
                n => return Err(mesh_err(format!("non-manifold edge ({a}, {b}) shared by {n} faces"))),
            }
        }
        let directed =
            |f: &[usize; 3], a: usize, b: usize| -> bool { (0..3).any(|i| f[i] == a && f[(i + 1) % 3] == b) };
        let mut component = vec![usize::MAX; nf];
        let mut n_comp = 0;
        for seed in 0..nf {
            if component[seed] != usize::MAX {
                continue;
            }
            component[seed] = n_comp;
            let mut queue = VecDeque::from([seed]);
            while let Some(t) = queue.pop_front() {
                let f = self.faces[t];
                for i in 0..3 {
                    let (a, b) = (f[i], f[(i + 1) % 3]);
                    let fs = &edge_faces[&(a.min(b), a.max(b))];
                    let u = if fs[0] == t { fs[1] } else { fs[0] };
                    // A consistent neighbour traverses the shared edge as b -> a.
                    let consistent = directed(&self.faces[u], b, a);
                    if component[u] == usize::MAX {
                        if !consistent {
                            self.faces[u].swap(1, 2);
                        }
                        component[u] = n_comp;
                        queue.push_back(u);
                    } else if !consistent {
                        return Err(mesh_err("surface is not orientable"));
                    }
                }
            }
            n_comp += 1;
        }
        // Flip any component with negative enclosed volume.
        let mut volume = vec![0.0; n_comp];
        for (t, f) in self.faces.iter().enumerate() {
            let (a, b, c) = (self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]);
            volume[component[t]] += a.dot(&b.cross(&c)) / 6.0;
        }
        for (t, f) in self.faces.iter_mut().enumerate() {
            if volume[component[t]] < 0.0 {
                f.swap(1, 2);
            }
        }
        Ok(())
    }

    fn check_vertex_fans(&self) -> Result<()> {
        let mut incident = vec![0usize; self.vertices.len()];
        for f in &self.faces {
            for &v in f {
                incident[v] += 1;
            }
        }
        let fan = FanMap::new(self);
        for (v, &count) in incident.iter().enumerate() {
            if fan.spokes(v)?.len() != count {
                return Err(mesh_err(format!("vertex {v} is non-manifold")));
            }
        }
        Ok(())
    }

    /// Parses the `v`/`f` text format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let tag = parts.next().unwrap_or("");
            let rest: Vec<&str> = parts.collect();
            let perr = |msg: String| Error::Parse { line: line_no, msg };
            match tag {
                "v" => {
                    if rest.len() != 3 {
                        return Err(perr(format!("expected 3 coordinates, found {}", rest.len())));
                    }
                    let mut p = [0.0; 3];
                    for (k, s) in rest.iter().enumerate() {
                        p[k] = s.parse::<f64>().map_err(|_| perr(format!("bad coordinate '{s}'")))?;
                        if !p[k].is_finite() {
                            return Err(perr(format!("non-finite coordinate '{s}'")));
                        }
                    }
                    vertices.push(Vec3::new(p[0], p[1], p[2]));
                }
                "f" => {
                    if rest.len() != 3 {
                        return Err(perr(format!("expected 3 vertex indices, found {}", rest.len())));
                    }
                    let mut f = [0usize; 3];
                    for (k, s) in rest.iter().enumerate() {
                        let i = s.parse::<usize>().map_err(|_| perr(format!("bad vertex index '{s}'")))?;
                        if i == 0 {
                            return Err(perr("vertex indices are 1-based".into()));
                        }
                        f[k] = i - 1;
                    }
                    faces.push((line_no, f));
                }
                other => return Err(perr(format!("unknown record '{other}'"))),
            }
        }
        for &(line, f) in &faces {
            if let Some(&bad) = f.iter().find(|&&i| i >= vertices.len()) {
                return Err(Error::Parse {
                    line,
                    msg: format!("vertex index {} out of range (have {})", bad + 1, vertices.len()),
                });
            }
        }
        TriangleMesh::new(vertices, faces.into_iter().map(|(_, f)| f).collect())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.vertices {
            out.push_str(&format!("v {:.17e} {:.17e} {:.17e}\n", p.x, p.y, p.z));
        }
        for f in &self.faces {
            out.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
        }
        out
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        let f = self.faces[t];
        [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]]
    }

    pub fn face_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn face_normal(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.corners(t);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn centroid(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.corners(t);
        (a + b + c) / 3.0
    }

    /// Regular tetrahedron inscribed in a sphere of the given radius.
    pub fn tetrahedron(radius: f64) -> Result<Self> {
        let s = radius / 3f64.sqrt();
        let vertices = vec![Vec3::new(s, s, s), Vec3::new(s, -s, -s), Vec3::new(-s, s, -s), Vec3::new(-s, -s, s)];
        Self::new(vertices, vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    }

    /// Subdivided icosahedron projected onto a sphere; each refinement level
    /// multiplies the face count by 4 (level 0 has 20 faces).
    pub fn icosphere(radius: f64, refinement: usize) -> Result<Self> {
        if radius <= 0.0 {
            return Err(crate::error::invalid("sphere radius must be positive"));
        }
        let g = (1.0 + 5f64.sqrt()) / 2.0;
        let mut vertices: Vec<Vec3> = [
            (-1.0, g, 0.0),
            (1.0, g, 0.0),
            (-1.0, -g, 0.0),
            (1.0, -g, 0.0),
            (0.0, -1.0, g),
            (0.0, 1.0, g),
            (0.0, -1.0, -g),
            (0.0, 1.0, -g),
            (g, 0.0, -1.0),
            (g, 0.0, 1.0),
            (-g, 0.0, -1.0),
            (-g, 0.0, 1.0),
        ]
        .iter()
        .map(|&(x, y, z)| Vec3::new(x, y, z).normalize() * radius)
        .collect();
        let mut faces: Vec<[usize; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..refinement {
            let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
            let mut next = Vec::with_capacity(faces.len() * 4);
            for f in &faces {
                let mut m = [0usize; 3];
                for i in 0..3 {
                    let (a, b) = (f[i], f[(i + 1) % 3]);
                    let key = (a.min(b), a.max(b));
                    m[i] = *mid.entry(key).or_insert_with(|| {
                        vertices.push(((vertices[a] + vertices[b]) * 0.5).normalize() * radius);
                        vertices.len() - 1
                    });
                }
                next.push([f[0], m[0], m[2]]);
                next.push([f[1], m[1], m[0]]);
                next.push([f[2], m[2], m[1]]);
                next.push([m[0], m[1], m[2]]);
            }
            faces = next;
        }
        Self::new(vertices, faces)
    }

    /// Latitude/longitude sphere with `n_lon` meridian segments and `n_lat`
    /// segments from pole to pole: `3 n_lon (n_lat - 1)` edges.
    pub fn uv_sphere(radius: f64, n_lon: usize, n_lat: usize) -> Result<Self> {
        if radius <= 0.0 || n_lon < 3 || n_lat < 2 {
            return Err(crate::error::invalid("uv sphere needs radius > 0, n_lon >= 3, n_lat >= 2"));
        }
        let mut vertices = vec![Vec3::new(0.0, 0.0, radius)];
        for i in 1..n_lat {
            let th = PI * i as f64 / n_lat as f64;
            for j in 0..n_lon {
                let ph = 2.0 * PI * j as f64 / n_lon as f64;
                vertices.push(radius * Vec3::new(th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()));
            }
        }
        vertices.push(Vec3::new(0.0, 0.0, -radius));
        let south = vertices.len() - 1;
        let ring = |i: usize, j: usize| 1 + (i - 1) * n_lon + (j % n_lon);
        let mut faces = Vec::new();
        for j in 0..n_lon {
            faces.push([0, ring(1, j), ring(1, j + 1)]);
        }
        for i in 1..n_lat - 1 {
            for j in 0..n_lon {
                faces.push([ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)]);
                faces.push([ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)]);
            }
        }
        for j in 0..n_lon {
            faces.push([south, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)]);
        }
        Self::new(vertices, faces)
    }

    /// Torus around the z axis with major radius `major` and tube radius
    /// `minor`, sampled on an `n_ring x n_tube` grid.
    pub fn torus_grid(major: f64, minor: f64, n_ring: usize, n_tube: usize) -> Result<Self> {
        if !(minor > 0.0 && major > minor) || n_ring < 3 || n_tube < 3 {
            return Err(crate::error::invalid("torus needs 0 < minor < major and grid >= 3x3"));
        }
        let mut vertices = Vec::with_capacity(n_ring * n_tube);
        for i in 0..n_ring {
            let ph = 2.0 * PI * i as f64 / n_ring as f64;
            for j in 0..n_tube {
                let th = 2.0 * PI * j as f64 / n_tube as f64;
                let rho = major + minor * th.cos();
                vertices.push(Vec3::new(rho * ph.cos(), rho * ph.sin(), minor * th.sin()));
            }
        }
        let id = |i: usize, j: usize| (i % n_ring) * n_tube + (j % n_tube);
        let mut faces = Vec::with_capacity(2 * n_ring * n_tube);
        for i in 0..n_ring {
            for j in 0..n_tube {
                faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        Self::new(vertices, faces)
    }

    /// Torus with the given inner and outer radii (distances of the hole rim
    /// and outer rim from the axis). Refinement `r` uses `4 * 2^r` segments
    /// around the tube and twice as many around the ring.
    pub fn torus(inner: f64, outer: f64, refinement: usize) -> Result<Self> {
        if !(inner > 0.0 && outer > inner) {
            return Err(crate::error::invalid("torus needs 0 < inner < outer"));
        }
        let n_tube = 4usize << refinement;
        Self::torus_grid(0.5 * (inner + outer), 0.5 * (outer - inner), 2 * n_tube, n_tube)
    }
}

/// Counter-clockwise vertex fans: for each directed edge `v -> a` of some
/// face, the next spoke `b` and the face `(v, a, b)`.
pub(crate) struct FanMap {
    next: HashMap<(usize, usize), (usize, usize)>,
    start: Vec<usize>,
}

impl FanMap {
    pub(crate) fn new(mesh: &TriangleMesh) -> Self {
        let mut next = HashMap::with_capacity(3 * mesh.faces.len());
        let mut start = vec![usize::MAX; mesh.vertices.len()];
        for (t, f) in mesh.faces.iter().enumerate() {
            for i in 0..3 {
                let (v, a, b) = (f[i], f[(i + 1) % 3], f[(i + 2) % 3]);
                next.insert((v, a), (b, t));
                if start[v] == usize::MAX {
                    start[v] = a;
                }
            }
        }
        FanMap { next, start }
    }

    /// Spokes around `v` in counter-clockwise order with the face following
    /// each spoke, starting from `first` (or an arbitrary spoke).
    pub(crate) fn spokes_from(&self, v: usize, first: usize) -> Result<Vec<(usize, usize)>> {
        let mut out = Vec::new();
        let mut a = first;
        loop {
            let &(b, t) =
                self.next.get(&(v, a)).ok_or_else(|| mesh_err(format!("vertex {v} fan is broken at spoke {a}")))?;
            out.push((a, t));
            a = b;
            if a == first {
                break;
            }
            if out.len() > self.next.len() {
                return Err(mesh_err(format!("vertex {v} fan does not close")));
            }
        }
        Ok(out)
    }

    pub(crate) fn spokes(&self, v: usize) -> Result<Vec<(usize, usize)>> {
        self.spokes_from(v, self.start[v])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    /// `v[0] < v[1]`.
    pub v: [usize; 2],
    /// Face traversing the edge as `v[0] -> v[1]`.
    pub left: usize,
    /// Face traversing the edge as `v[1] -> v[0]`.
    pub right: usize,
}

#[derive(Debug, Clone)]
pub struct Topology {
    /// Sorted lexicographically by vertex pair.
    pub edges: Vec<Edge>,
    pub vertex_count: usize,
    pub face_count: usize,
    /// `face_edges[t][i]` is the edge opposite local vertex `i` of face `t`.
    pub face_edges: Vec<[usize; 3]>,
    pub euler: i64,
    pub components: usize,
    pub genus: usize,
    /// Average edge length.
    pub h: f64,
    /// Largest vertex-to-vertex distance.
    pub diameter: f64,
}

impl Topology {
    pub fn new(mesh: &TriangleMesh) -> Result<Self> {
        let mut map: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
        for (t, f) in mesh.faces.iter().enumerate() {
            for i in 0..3 {
                let (a, b) = (f[i], f[(i + 1) % 3]);
                let e = map.entry((a.min(b), a.max(b))).or_insert((usize::MAX, usize::MAX));
                let slot = if a < b { &mut e.0 } else { &mut e.1 };
                if *slot != usize::MAX {
                    return Err(mesh_err(format!("edge ({a}, {b}) is traversed twice in one direction")));
                }
                *slot = t;
            }
        }
        let mut keys: Vec<_> = map.keys().copied().collect();
        keys.sort_unstable();
        let mut index = HashMap::with_capacity(keys.len());
        let mut edges = Vec::with_capacity(keys.len());
        for (k, key) in keys.iter().enumerate() {
            let (left, right) = map[key];
            if left == usize::MAX || right == usize::MAX {
                return Err(mesh_err(format!("edge {key:?} is not shared by two faces")));
            }
            index.insert(*key, k);
            edges.push(Edge { v: [key.0, key.1], left, right });
        }
        let face_edges = mesh
            .faces
            .iter()
            .map(|f| {
                let mut fe = [0; 3];
                for (i, slot) in fe.iter_mut().enumerate() {
                    let (a, b) = (f[(i + 1) % 3], f[(i + 2) % 3]);
                    *slot = index[&(a.min(b), a.max(b))];
                }
                fe
            })
            .collect();
        let h = edges.iter().map(|e| (mesh.vertices[e.v[0]] - mesh.vertices[e.v[1]]).norm()).sum::<f64>()
            / edges.len() as f64;
        let mut diameter: f64 = 0.0;
        for (i, p) in mesh.vertices.iter().enumerate() {
            for q in &mesh.vertices[i + 1..] {
                diameter = diameter.max((p - q).norm_squared());
            }
        }
        let components = count_components(mesh.vertices.len(), &edges);
        let (nv, ne, nf) = (mesh.vertices.len(), edges.len(), mesh.faces.len());
        let euler = nv as i64 - ne as i64 + nf as i64;
        let twice_genus = 2 * components as i64 - euler;
        if twice_genus < 0 || twice_genus % 2 != 0 {
            return Err(mesh_err(format!("inconsistent Euler characteristic {euler}")));
        }
        Ok(Topology {
            edges,
            vertex_count: nv,
            face_count: nf,
            face_edges,
            euler,
            components,
            genus: (twice_genus / 2) as usize,
            h,
            diameter: diameter.sqrt(),
        })
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Index of the edge joining `a` and `b`, if any.
    pub fn find_edge(&self, a: usize, b: usize) -> Option<usize> {
        let key = [a.min(b), a.max(b)];
        self.edges.binary_search_by(|e| e.v.cmp(&key)).ok()
    }
}

fn count_components(nv: usize, edges: &[Edge]) -> usize {
    let mut parent: Vec<usize> = (0..nv).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for e in edges {
        let (a, b) = (find(&mut parent, e.v[0]), find(&mut parent, e.v[1]));
        if a != b {
            parent[a] = b;
        }
    }
    (0..nv).filter(|&v| find(&mut parent, v) == v).count()
}

/// Barycentric refinement of a coarse mesh.
///
/// Fine vertices are the coarse vertices, then one midpoint per coarse edge
/// (edge order), then one barycenter per coarse face (face order). Coarse
/// face `t = (a, b, c)` becomes fine faces `6t..6t+6`:
/// `(a,m_ab,g) (m_ab,b,g) (b,m_bc,g) (m_bc,c,g) (c,m_ca,g) (m_ca,a,g)`.
#[derive(Debug, Clone)]
pub struct RefinedMesh {
    pub mesh: TriangleMesh,
    pub coarse_vertices: usize,
    pub coarse_edges: usize,
    pub coarse_faces: usize,
}

impl RefinedMesh {
    pub fn midpoint(&self, coarse_edge: usize) -> usize {
        self.coarse_vertices + coarse_edge
    }

    pub fn barycenter(&self, coarse_face: usize) -> usize {
        self.coarse_vertices + self.coarse_edges + coarse_face
    }

    /// Fine face at local corner `i` of coarse face `t` adjacent to the
    /// coarse edge leaving that corner (counter-clockwise).
    pub fn fine_face_after(&self, t: usize, i: usize) -> usize {
        6 * t + 2 * i
    }

    /// Fine face at local corner `i` of coarse face `t` adjacent to the
    /// coarse edge arriving at that corner.
    pub fn fine_face_before(&self, t: usize, i: usize) -> usize {
        6 * t + (2 * i + 5) % 6
    }
}

pub fn barycentric_refine(mesh: &TriangleMesh, topo: &Topology) -> Result<RefinedMesh> {
    let (nv, ne) = (mesh.vertices.len(), topo.edges.len());
    let mut vertices = mesh.vertices.clone();
    vertices.extend(topo.edges.iter().map(|e| (mesh.vertices[e.v[0]] + mesh.vertices[e.v[1]]) * 0.5));
    vertices.extend((0..mesh.faces.len()).map(|t| mesh.centroid(t)));
    let mut faces = Vec::with_capacity(6 * mesh.faces.len());
    for (t, f) in mesh.faces.iter().enumerate() {
        let fe = topo.face_edges[t];
        // Edge opposite local vertex i joins vertices i+1 and i+2.
        let m_ab = nv + fe[2];
        let m_bc = nv + fe[0];
        let m_ca = nv + fe[1];
        let g = nv + ne + t;
        let [a, b, c] = *f;
        faces.extend_from_slice(&[[a, m_ab, g], [m_ab, b, g], [b, m_bc, g], [m_bc, c, g], [c, m_ca, g], [m_ca, a, g]]);
    }
    // Orientation is inherited, so validation leaves face order intact.
    let fine = TriangleMesh::new(vertices, faces)?;
    Ok(RefinedMesh { mesh: fine, coarse_vertices: nv, coarse_edges: ne, coarse_faces: mesh.faces.len() })
}
