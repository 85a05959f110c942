use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use cqmot::analysis::{
    condition_csv, eig_csv, iters_csv, polynomial_eigenvalues, probe_csv, probe_current, sweep_dt, sweep_h, write_text,
    SweepAxis,
};
use cqmot::basis::RwgSystem;
use cqmot::cq::RkTableau;
use cqmot::formulations::{build_interaction_matrices, FormulationContext};
use cqmot::march::simulate;
use cqmot::mesh::TriangleMesh;
use nalgebra::DVector;

use crate::config::RunConfig;

pub fn write_manifest(out: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    let text = format!("# cqmot {} {command}\n{}", env!("CARGO_PKG_VERSION"), cfg.manifest());
    write_text(&out.join("manifest.txt"), &text)?;
    Ok(())
}

fn context(cfg: &RunConfig) -> Result<FormulationContext> {
    let mesh = cfg.geometry.build()?;
    let ctx = FormulationContext::new(mesh, cfg.kernel.clone())?;
    log::info!(
        "mesh: {} vertices, {} edges, {} faces, genus {}",
        ctx.bases.coarse.topo.vertex_count,
        ctx.n(),
        ctx.bases.coarse.topo.face_count,
        ctx.bases.coarse.topo.genus
    );
    Ok(ctx)
}

/// Long-format coefficients: one row per step, edge and stage.
fn currents_csv(currents: &[DVector<f64>], stages: usize) -> String {
    let mut s = String::from("step,edge,stage,value\n");
    for (i, c) in currents.iter().enumerate() {
        for (idx, v) in c.iter().enumerate() {
            let _ = writeln!(s, "{i},{},{},{v:.17e}", idx / stages, idx % stages);
        }
    }
    s
}

fn read_currents(path: &Path, edges: usize, stages: usize) -> Result<Vec<DVector<f64>>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("step,edge,stage,value") {
        bail!("{}: unexpected header", path.display());
    }
    let mut out: Vec<DVector<f64>> = Vec::new();
    for (no, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || anyhow!("{}: malformed row {}", path.display(), no + 2);
        if f.len() != 4 {
            return Err(bad());
        }
        let step: usize = f[0].parse().map_err(|_| bad())?;
        let edge: usize = f[1].parse().map_err(|_| bad())?;
        let stage: usize = f[2].parse().map_err(|_| bad())?;
        let value: f64 = f[3].parse().map_err(|_| bad())?;
        if edge >= edges || stage >= stages {
            bail!("{}: row {} does not match the configured mesh and stages", path.display(), no + 2);
        }
        while out.len() <= step {
            out.push(DVector::zeros(edges * stages));
        }
        out[step][stages * edge + stage] = value;
    }
    Ok(out)
}

/// Returns whether every step converged.
pub fn solve(cfg: &RunConfig, out: &Path) -> Result<bool> {
    let ctx = context(cfg)?;
    let sim = simulate(cfg.formulation, &ctx, &cfg.cq, &cfg.excitation, cfg.solver)?;
    write_text(&out.join("iters.csv"), &iters_csv(&sim.mot.records))?;
    write_text(&out.join("currents.csv"), &currents_csv(&sim.currents, cfg.cq.stages))?;
    if let Some(p) = cfg.probe {
        let tab = RkTableau::radau_iia(cfg.cq.stages)?;
        let trace = probe_current(&ctx.bases.coarse, &tab, cfg.cq.dt, &sim.currents, &p)?;
        write_text(&out.join("probe.csv"), &probe_csv(&trace))?;
    }
    log::info!("{}: {} steps, max GMRES iterations {}", cfg.formulation, cfg.cq.n_steps, sim.mot.max_iterations());
    Ok(sim.mot.records.iter().all(|r| r.converged))
}

pub fn sweep_cond(cfg: &RunConfig, out: &Path) -> Result<()> {
    let sweep = cfg.sweep.as_ref().ok_or_else(|| anyhow!("sweep.axis: missing"))?;
    let result = match sweep.axis {
        SweepAxis::Dt => sweep_dt(cfg.formulation, &context(cfg)?, cfg.cq.stages, &sweep.values)?,
        SweepAxis::H => {
            let meshes = sweep
                .values
                .iter()
                .map(|&n| cfg.geometry.with_resolution(n as usize)?.build())
                .collect::<Result<Vec<TriangleMesh>>>()?;
            sweep_h(cfg.formulation, &meshes, &cfg.kernel, cfg.cq.stages, cfg.cq.dt)?
        }
    };
    write_text(&out.join("condition.csv"), &condition_csv(&[result]))?;
    Ok(())
}

pub fn eig(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ctx = context(cfg)?;
    let set = build_interaction_matrices(cfg.formulation, &ctx, &cfg.cq, false)?;
    let map = polynomial_eigenvalues(&set.system, cfg.eig)?;
    log::info!(
        "{}: {} eigenvalues, {} within 1e-3 of one",
        cfg.formulation,
        map.eigenvalues.len(),
        map.cluster_at_one(1e-3)
    );
    write_text(&out.join("eig.csv"), &eig_csv(&map))?;
    Ok(())
}

pub fn probe(cfg: &RunConfig, out: &Path) -> Result<()> {
    let point = cfg.probe.ok_or_else(|| anyhow!("probe.point: missing"))?;
    let sys = RwgSystem::new(cfg.geometry.build()?)?;
    let currents = read_currents(&out.join("currents.csv"), sys.edge_count(), cfg.cq.stages)?;
    let tab = RkTableau::radau_iia(cfg.cq.stages)?;
    let trace = probe_current(&sys, &tab, cfg.cq.dt, &currents, &point)?;
    write_text(&out.join("probe.csv"), &probe_csv(&trace))?;
    Ok(())
}
