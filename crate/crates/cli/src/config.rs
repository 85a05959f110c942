//! `key=value` run configuration with dotted sections.
//!
//! ```text
//! # unit sphere, stabilized Calderon scheme
//! geometry.kind=uv-sphere
//! geometry.n=10
//! formulation=qh-cp-efie
//! excitation.f_bw=25e3
//! time.psi=3
//! time.f_max=25e3
//! time.n_steps=512
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use cqmot::analysis::{EigenMethod, SweepAxis, TargetedEigen};
use cqmot::cq::{ConvLength, CqConfig};
use cqmot::excitation::GaussianPlaneWave;
use cqmot::formulations::FormulationKind;
use cqmot::kernel::KernelConfig;
use cqmot::march::SolverKind;
use cqmot::mesh::TriangleMesh;
use cqmot::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    File(PathBuf),
    Tetrahedron { radius: f64 },
    Icosphere { radius: f64, refinement: usize },
    UvSphere { radius: f64, n_lon: usize, n_lat: usize },
    Torus { inner: f64, outer: f64, refinement: usize },
}

impl Geometry {
    pub fn build(&self) -> Result<TriangleMesh> {
        Ok(match self {
            Geometry::File(p) => TriangleMesh::from_file(p).with_context(|| format!("reading mesh {}", p.display()))?,
            Geometry::Tetrahedron { radius } => TriangleMesh::tetrahedron(*radius)?,
            Geometry::Icosphere { radius, refinement } => TriangleMesh::icosphere(*radius, *refinement)?,
            Geometry::UvSphere { radius, n_lon, n_lat } => TriangleMesh::uv_sphere(*radius, *n_lon, *n_lat)?,
            Geometry::Torus { inner, outer, refinement } => TriangleMesh::torus(*inner, *outer, *refinement)?,
        })
    }

    /// Same generator with its resolution parameter replaced (h sweeps).
    pub fn with_resolution(&self, n: usize) -> Result<Geometry> {
        Ok(match self {
            Geometry::File(_) | Geometry::Tetrahedron { .. } => {
                bail!("sweep.axis=h needs a refinable generator (uv-sphere, icosphere or torus)")
            }
            Geometry::Icosphere { radius, .. } => Geometry::Icosphere { radius: *radius, refinement: n },
            Geometry::UvSphere { radius, .. } => Geometry::UvSphere { radius: *radius, n_lon: n, n_lat: n },
            Geometry::Torus { inner, outer, .. } => Geometry::Torus { inner: *inner, outer: *outer, refinement: n },
        })
    }

    fn echo(&self, out: &mut String) {
        let _ = match self {
            Geometry::File(p) => writeln!(out, "geometry.kind=file\ngeometry.path={}", p.display()),
            Geometry::Tetrahedron { radius } => writeln!(out, "geometry.kind=tetrahedron\ngeometry.radius={radius:?}"),
            Geometry::Icosphere { radius, refinement } => writeln!(
                out,
                "geometry.kind=icosphere\ngeometry.radius={radius:?}\ngeometry.refinement={refinement}"
            ),
            Geometry::UvSphere { radius, n_lon, n_lat } => writeln!(
                out,
                "geometry.kind=uv-sphere\ngeometry.radius={radius:?}\ngeometry.n_lon={n_lon}\ngeometry.n_lat={n_lat}"
            ),
            Geometry::Torus { inner, outer, refinement } => writeln!(
                out,
                "geometry.kind=torus\ngeometry.inner={inner:?}\ngeometry.outer={outer:?}\ngeometry.refinement={refinement}"
            ),
        };
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    /// Time steps (dt axis) or generator resolutions (h axis).
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub geometry: Geometry,
    pub formulation: FormulationKind,
    pub excitation: GaussianPlaneWave,
    pub f_bw: f64,
    pub cq: CqConfig,
    pub kernel: KernelConfig,
    pub solver: SolverKind,
    pub probe: Option<Vec3>,
    pub sweep: Option<SweepConfig>,
    pub eig: EigenMethod,
}

/// Raw entries, remembering which keys were read.
struct Entries {
    map: BTreeMap<String, (usize, String)>,
    used: std::cell::RefCell<std::collections::BTreeSet<String>>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| anyhow!("line {}: expected key=value, got '{line}'", i + 1))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if k.is_empty() {
                bail!("line {}: empty key", i + 1);
            }
            if map.insert(k.clone(), (i + 1, v)).is_some() {
                bail!("line {}: duplicate key '{k}'", i + 1);
            }
        }
        Ok(Entries { map, used: Default::default() })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.map.get(key).map(|(_, v)| v.as_str())
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|e| anyhow!("{key}: cannot parse '{v}': {e}")),
        }
    }

    fn or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn require<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| anyhow!("{key}: missing"))
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|e| anyhow!("{key}: cannot parse '{x}': {e}")))
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    fn vec3(&self, key: &str) -> Result<Option<Vec3>> {
        match self.list(key)? {
            None => Ok(None),
            Some(v) if v.len() == 3 => Ok(Some(Vec3::new(v[0], v[1], v[2]))),
            Some(_) => bail!("{key}: expected three comma-separated numbers"),
        }
    }

    fn unused(&self) -> Vec<String> {
        let used = self.used.borrow();
        self.map.keys().filter(|k| !used.contains(*k)).cloned().collect()
    }
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        bail!("{key}: must be positive, got {v}")
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let e = Entries::parse(text)?;
        let cfg = Self::from_entries(&e)?;
        let unused = e.unused();
        if !unused.is_empty() {
            bail!("unknown keys: {}", unused.join(", "));
        }
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    fn from_entries(e: &Entries) -> Result<Self> {
        let kind: String = e.require("geometry.kind")?;
        let geometry = match kind.as_str() {
            "file" => Geometry::File(PathBuf::from(e.require::<String>("geometry.path")?)),
            "tetrahedron" => {
                Geometry::Tetrahedron { radius: positive("geometry.radius", e.or("geometry.radius", 1.0)?)? }
            }
            "icosphere" => Geometry::Icosphere {
                radius: positive("geometry.radius", e.or("geometry.radius", 1.0)?)?,
                refinement: e.or("geometry.refinement", 1)?,
            },
            "uv-sphere" => {
                let n: Option<usize> = e.get("geometry.n")?;
                Geometry::UvSphere {
                    radius: positive("geometry.radius", e.or("geometry.radius", 1.0)?)?,
                    n_lon: e.get("geometry.n_lon")?.or(n).unwrap_or(10),
                    n_lat: e.get("geometry.n_lat")?.or(n).unwrap_or(10),
                }
            }
            "torus" => Geometry::Torus {
                inner: positive("geometry.inner", e.or("geometry.inner", 0.2)?)?,
                outer: positive("geometry.outer", e.or("geometry.outer", 0.5)?)?,
                refinement: e.or("geometry.refinement", 1)?,
            },
            other => bail!("geometry.kind: unknown generator '{other}'"),
        };
        let formulation: FormulationKind =
            e.require::<String>("formulation")?.parse().map_err(|err| anyhow!("formulation: {err}"))?;

        let f_bw = positive("excitation.f_bw", e.require("excitation.f_bw")?)?;
        let mut excitation = GaussianPlaneWave::with_bandwidth(f_bw)?;
        let amplitude: f64 = e.or("excitation.amplitude", 1.0)?;
        let direction = e.vec3("excitation.direction")?.unwrap_or(excitation.direction);
        let polarization = e.vec3("excitation.polarization")?.unwrap_or(excitation.polarization);
        excitation = GaussianPlaneWave::new(amplitude, excitation.sigma, excitation.t0, direction, polarization)
            .map_err(|err| anyhow!("excitation: {err}"))?;

        let dt: Option<f64> = e.get("time.dt")?;
        let psi: Option<f64> = e.get("time.psi")?;
        let f_max: Option<f64> = e.get("time.f_max")?;
        let dt = match (dt, psi, f_max) {
            (Some(dt), None, None) => positive("time.dt", dt)?,
            (None, Some(psi), Some(f)) => 1.0 / (positive("time.psi", psi)? * positive("time.f_max", f)?),
            (None, Some(_), None) | (None, None, Some(_)) => bail!("time: time.psi and time.f_max go together"),
            (None, None, None) => bail!("time: give time.dt or time.psi with time.f_max"),
            _ => bail!("time: give either time.dt or time.psi with time.f_max, not both"),
        };
        let n_steps: usize = e.require("time.n_steps")?;
        if n_steps == 0 {
            bail!("time.n_steps: must be positive");
        }
        let mut cq = CqConfig::new(dt, n_steps);
        cq.stages = e.or("cq.stages", cq.stages)?;
        cq.contour_eps = e.or("cq.contour_eps", cq.contour_eps)?;
        cq.transform_length = e.get("cq.transform_length")?;
        let (cap, tail_tol) = match cq.conv {
            ConvLength::Auto { cap, tail_tol } => (cap, tail_tol),
            ConvLength::Fixed(_) => unreachable!(),
        };
        cq.conv = match e.or("cq.n_conv", "auto".to_string())?.as_str() {
            "auto" => ConvLength::Auto { cap: e.or("cq.n_conv_cap", cap)?, tail_tol: e.or("cq.tail_tol", tail_tol)? },
            n => ConvLength::Fixed(n.parse().map_err(|err| anyhow!("cq.n_conv: expected 'auto' or a count: {err}"))?),
        };
        cq.validate().map_err(|err| anyhow!("cq: {err}"))?;
        if !(1..=3).contains(&cq.stages) {
            bail!("cq.stages: Radau IIA is available with 1, 2 or 3 stages");
        }

        let mut kernel = KernelConfig::default();
        kernel.near_points = e.or("kernel.near_points", kernel.near_points)?;
        kernel.grade = e.or("kernel.grade", kernel.grade)?;
        kernel.far_degree = e.or("kernel.far_degree", kernel.far_degree)?;
        kernel.near_factor = e.or("kernel.near_factor", kernel.near_factor)?;
        kernel.dynamic_degree = e.or("kernel.dynamic_degree", kernel.dynamic_degree)?;
        kernel.dynamic_degree_refined = e.or("kernel.dynamic_degree_refined", kernel.dynamic_degree_refined)?;

        let solver = match e.or("solver.kind", "gmres".to_string())?.as_str() {
            "direct" => SolverKind::Direct,
            "gmres" => {
                let SolverKind::Gmres { tol, max_iter } = SolverKind::default() else { unreachable!() };
                SolverKind::Gmres {
                    tol: positive("solver.tol", e.or("solver.tol", tol)?)?,
                    max_iter: e.or("solver.max_iter", max_iter)?,
                }
            }
            other => bail!("solver.kind: expected 'gmres' or 'direct', got '{other}'"),
        };

        let probe = e.vec3("probe.point")?;

        let sweep = match e.get::<String>("sweep.axis")? {
            None => None,
            Some(axis) => {
                let axis = match axis.as_str() {
                    "dt" => SweepAxis::Dt,
                    "h" => SweepAxis::H,
                    other => bail!("sweep.axis: expected 'dt' or 'h', got '{other}'"),
                };
                let values = match e.list("sweep.values")? {
                    Some(v) => v,
                    None => {
                        let from = positive("sweep.from", e.require("sweep.from")?)?;
                        let to = positive("sweep.to", e.require("sweep.to")?)?;
                        let count: usize = e.require("sweep.count")?;
                        if count < 2 || !(to > from) {
                            bail!("sweep: need sweep.count >= 2 and sweep.to > sweep.from");
                        }
                        (0..count).map(|i| from * (to / from).powf(i as f64 / (count - 1) as f64)).collect()
                    }
                };
                if values.is_empty() || values.windows(2).any(|w| !(w[0] < w[1])) {
                    bail!("sweep.values: must be strictly increasing");
                }
                if axis == SweepAxis::H && values.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
                    bail!("sweep.values: h sweeps take generator resolutions (non-negative integers)");
                }
                Some(SweepConfig { axis, values })
            }
        };

        let eig = match e.or("eig.method", "dense".to_string())?.as_str() {
            "dense" => EigenMethod::Dense { cap: e.or("eig.cap", 40_000)? },
            "targeted" => {
                let d = TargetedEigen::default();
                EigenMethod::Targeted(TargetedEigen {
                    shift: e.or("eig.shift", d.shift)?,
                    count: e.or("eig.count", d.count)?,
                    max_krylov: e.or("eig.max_krylov", d.max_krylov)?,
                    tol: e.or("eig.tol", d.tol)?,
                })
            }
            other => bail!("eig.method: expected 'dense' or 'targeted', got '{other}'"),
        };

        Ok(RunConfig { geometry, formulation, excitation, f_bw, cq, kernel, solver, probe, sweep, eig })
    }

    /// Resolved parameters in config syntax; parsing the result reproduces
    /// this configuration.
    pub fn manifest(&self) -> String {
        let mut s = String::new();
        self.geometry.echo(&mut s);
        let _ = writeln!(s, "formulation={}", self.formulation);
        let x = &self.excitation;
        let _ = writeln!(s, "excitation.f_bw={:?}", self.f_bw);
        let _ = writeln!(s, "excitation.amplitude={:?}", x.amplitude);
        let _ = writeln!(s, "excitation.direction={:?},{:?},{:?}", x.direction.x, x.direction.y, x.direction.z);
        let _ =
            writeln!(s, "excitation.polarization={:?},{:?},{:?}", x.polarization.x, x.polarization.y, x.polarization.z);
        let _ = writeln!(s, "time.dt={:?}", self.cq.dt);
        let _ = writeln!(s, "time.n_steps={}", self.cq.n_steps);
        let _ = writeln!(s, "cq.stages={}", self.cq.stages);
        let _ = writeln!(s, "cq.contour_eps={:?}", self.cq.contour_eps);
        if let Some(n) = self.cq.transform_length {
            let _ = writeln!(s, "cq.transform_length={n}");
        }
        match self.cq.conv {
            ConvLength::Fixed(n) => {
                let _ = writeln!(s, "cq.n_conv={n}");
            }
            ConvLength::Auto { cap, tail_tol } => {
                let _ = writeln!(s, "cq.n_conv=auto\ncq.n_conv_cap={cap}\ncq.tail_tol={tail_tol:?}");
            }
        }
        let k = &self.kernel;
        let _ = writeln!(s, "kernel.near_points={}", k.near_points);
        let _ = writeln!(s, "kernel.grade={}", k.grade);
        let _ = writeln!(s, "kernel.far_degree={}", k.far_degree);
        let _ = writeln!(s, "kernel.near_factor={:?}", k.near_factor);
        let _ = writeln!(s, "kernel.dynamic_degree={}", k.dynamic_degree);
        let _ = writeln!(s, "kernel.dynamic_degree_refined={}", k.dynamic_degree_refined);
        match self.solver {
            SolverKind::Direct => {
                let _ = writeln!(s, "solver.kind=direct");
            }
            SolverKind::Gmres { tol, max_iter } => {
                let _ = writeln!(s, "solver.kind=gmres\nsolver.tol={tol:?}\nsolver.max_iter={max_iter}");
            }
        }
        if let Some(p) = self.probe {
            let _ = writeln!(s, "probe.point={:?},{:?},{:?}", p.x, p.y, p.z);
        }
        if let Some(sw) = &self.sweep {
            let vals: Vec<String> = sw.values.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(s, "sweep.axis={}\nsweep.values={}", sw.axis.name(), vals.join(","));
        }
        match self.eig {
            EigenMethod::Dense { cap } => {
                let _ = writeln!(s, "eig.method=dense\neig.cap={cap}");
            }
            EigenMethod::Targeted(t) => {
                let _ = writeln!(
                    s,
                    "eig.method=targeted\neig.shift={:?}\neig.count={}\neig.max_krylov={}\neig.tol={:?}",
                    t.shift, t.count, t.max_krylov, t.tol
                );
            }
        }
        s
    }
}
