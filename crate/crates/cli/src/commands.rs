use std::path::Path;

use serde::{Deserialize, Serialize};

use nib_core::oracle::{
    dense_eigenvalues, exact_density, exact_percolation_enumeration, mc_percolation, MAX_ENUMERATION_EDGES,
};
use nib_core::percolation::{self, PercConfig};
use nib_core::spectra::{self, trapezoid};
use nib_core::{load_edge_list, load_matrix, Error, NeighborhoodSystem, ScheduleOrder, SpectralConfig, WeightedGraph, XGrid};

use crate::error::{CliError, CliResult};
use crate::manifest::{emit, read_input, with_manifest, RunManifest};
use crate::{Format, GridArgs, InputArgs, NeighArgs, OracleKind, OraclePercolationArgs, OracleSpectrumArgs, PercolationArgs, SpectrumArgs};

/// Loads the graph and records its path and hash in the manifest.
fn load(input: &InputArgs, manifest: &mut RunManifest) -> CliResult<WeightedGraph> {
    let (path, parse): (&Path, fn(&str) -> nib_core::Result<WeightedGraph>) = match (&input.graph, &input.matrix) {
        (Some(path), _) => (path, load_edge_list),
        (None, Some(path)) => (path, load_matrix),
        (None, None) => unreachable!("clap requires one input"),
    };
    let (text, bytes) = read_input(path)?;
    manifest.input(path, &bytes);
    parse(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn schedule_order(seed: Option<u64>) -> ScheduleOrder {
    seed.map_or(ScheduleOrder::Canonical, ScheduleOrder::Shuffled)
}

#[derive(Serialize)]
struct NeighOutput {
    classing: nib_core::neighborhoods::ClassingDump,
    sizes: nib_core::neighborhoods::SizeReport,
}

pub fn neigh(args: &NeighArgs, out: Option<&Path>) -> CliResult<()> {
    let mut manifest = RunManifest::start("neigh");
    let g = load(&args.input, &mut manifest)?;
    let r = args.r.unwrap_or(0);
    manifest.config(&serde_json::json!({ "r": r }));
    let system = NeighborhoodSystem::build(&g, r);
    let output = NeighOutput {
        classing: system.classify(&g).dump(&g),
        sizes: system.size_report(&g),
    };
    manifest.finish();
    emit(out, &with_manifest(&output, &manifest), &manifest)
}

fn percolation_config(args: &PercolationArgs) -> PercConfig {
    let d = PercConfig::default();
    PercConfig {
        p: args.p,
        r: args.r.unwrap_or(d.r),
        mode: args.mode.map_or(d.mode, Into::into),
        z: args.z.unwrap_or(d.z),
        s_max: args.smax.or(d.s_max),
        tol: args.tol.unwrap_or(d.tol),
        max_iter: args.max_iter.unwrap_or(d.max_iter),
        damping: args.damping.unwrap_or(d.damping),
        enum_threshold: args.enum_threshold.unwrap_or(d.enum_threshold),
        mc_samples: args.mc_samples.unwrap_or(d.mc_samples),
        seed: args.seed.unwrap_or(d.seed),
        init: args.init.map_or(d.init, Into::into),
        schedule_order: schedule_order(args.schedule_seed),
        region_rule: args.region_rule.map_or(d.region_rule, Into::into),
    }
}

pub fn percolation(args: &PercolationArgs, out: Option<&Path>) -> CliResult<()> {
    let mut manifest = RunManifest::start("percolation");
    let g = load(&args.input, &mut manifest)?;
    let config = percolation_config(args);
    manifest.config(&config);
    manifest.seed = Some(config.seed);
    let (report, failure) = match percolation::run(&g, &config) {
        Ok(report) => (report, None),
        Err(Error::PercolationNotConverged(report)) => {
            let message = format!(
                "percolation did not converge within {} sweeps (delta {:e}); partial report written",
                report.iterations, report.delta
            );
            (*report, Some(CliError::NotConverged(message)))
        }
        Err(e) => return Err(e.into()),
    };
    manifest.finish();
    let body = match args.format {
        Format::Json => with_manifest(&report, &manifest),
        Format::Csv => {
            manifest.summary = Some(serde_json::json!({
                "p": report.p,
                "r": report.r,
                "mode": report.mode,
                "loop_bound_fulfilled": report.loop_bound_fulfilled,
                "S": report.s,
                "iterations": report.iterations,
                "delta": report.delta,
                "converged": report.converged,
            }));
            report.to_csv()
        }
    };
    emit(out, &body, &manifest)?;
    failure.map_or(Ok(()), Err)
}

fn grid(args: &GridArgs) -> (f64, XGrid) {
    let d = SpectralConfig::default();
    (
        args.eta.unwrap_or(d.eta),
        XGrid::new(
            args.xmin.unwrap_or(d.grid.min),
            args.xmax.unwrap_or(d.grid.max),
            args.points.unwrap_or(d.grid.count),
        ),
    )
}

pub fn spectrum(args: &SpectrumArgs, out: Option<&Path>) -> CliResult<()> {
    let mut manifest = RunManifest::start("spectrum");
    let g = load(&args.input, &mut manifest)?;
    let d = SpectralConfig::default();
    let (eta, grid) = grid(&args.grid);
    let node_factor = if args.literal_d {
        nib_core::NodeFactor::Literal
    } else {
        args.node_factor.map_or(d.node_factor, Into::into)
    };
    let config = SpectralConfig {
        eta,
        grid,
        r: args.r.unwrap_or(d.r),
        mode: args.mode.map_or(d.mode, Into::into),
        tol: args.tol.unwrap_or(d.tol),
        max_iter: args.max_iter.unwrap_or(d.max_iter),
        damping: args.damping.unwrap_or(d.damping),
        warm_start: args.warm_start,
        node_factor,
        schedule_order: schedule_order(args.schedule_seed),
    };
    manifest.config(&config);
    let report = spectra::sweep(&g, &config)?;
    let unconverged = report.rows.iter().filter(|r| !r.converged || r.error.is_some()).count();
    manifest.finish();
    let body = match args.format {
        Format::Json => with_manifest(&report, &manifest),
        Format::Csv => {
            manifest.summary = Some(serde_json::to_value(&report.metadata).expect("metadata serializes"));
            report.to_csv()
        }
    };
    emit(out, &body, &manifest)?;
    if unconverged > 0 {
        return Err(CliError::NotConverged(format!(
            "{unconverged} of {} grid points failed or did not converge",
            report.rows.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OracleNode {
    pub id: usize,
    /// Absent for sampling, where every cluster of a finite graph is small.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h1: Option<f64>,
    pub mean_size: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_size_stderr: Option<f64>,
    pub pi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi_stderr: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OraclePercolationReport {
    pub kind: String,
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Zero for enumeration: a finite graph has no percolating cluster.
    #[serde(rename = "S", default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    /// Largest cluster as a fraction of n, sampling only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub giant_fraction: Option<Estimate>,
    pub nodes: Vec<OracleNode>,
}

impl OraclePercolationReport {
    fn to_csv(&self) -> String {
        let sampled = self.kind == "mc";
        let mut out = String::from(if sampled { "node,s,pi,stderr\n" } else { "node,s,pi\n" });
        for node in &self.nodes {
            for (k, pi) in node.pi.iter().enumerate() {
                out += &format!("{},{},{:.16e}", node.id, k + 1, pi);
                if let Some(err) = &node.pi_stderr {
                    out += &format!(",{:.16e}", err[k]);
                }
                out.push('\n');
            }
        }
        out
    }
}

pub fn oracle_percolation(args: &OraclePercolationArgs, out: Option<&Path>) -> CliResult<()> {
    let mut manifest = RunManifest::start("oracle percolation");
    let g = load(&args.input, &mut manifest)?;
    if !(0.0..=1.0).contains(&args.p) {
        return Err(CliError::Input(format!("p = {} outside [0, 1]", args.p)));
    }
    let exact = match args.kind {
        OracleKind::Exact => true,
        OracleKind::Mc => false,
        OracleKind::Auto => g.edge_count() <= MAX_ENUMERATION_EDGES,
    };
    let s_max = args.smax.unwrap_or(g.n()).min(g.n());
    let report = if exact {
        manifest.config(&serde_json::json!({ "kind": "exact", "p": args.p, "s_max": s_max }));
        let e = exact_percolation_enumeration(&g, args.p)?;
        OraclePercolationReport {
            kind: "exact".into(),
            p: args.p,
            trials: None,
            seed: None,
            s: Some(0.0),
            giant_fraction: None,
            nodes: (0..g.n())
                .map(|i| OracleNode {
                    id: i,
                    h1: Some(e.h1[i]),
                    mean_size: e.mean_size[i],
                    mean_size_stderr: None,
                    pi: e.pi[i][..s_max].to_vec(),
                    pi_stderr: None,
                })
                .collect(),
        }
    } else {
        if args.trials == 0 {
            return Err(CliError::Input("trials must be at least 1".into()));
        }
        manifest.config(&serde_json::json!({
            "kind": "mc", "p": args.p, "trials": args.trials, "seed": args.seed, "s_max": s_max
        }));
        manifest.seed = Some(args.seed);
        let mc = mc_percolation(&g, args.p, args.trials, args.seed, s_max);
        OraclePercolationReport {
            kind: "mc".into(),
            p: args.p,
            trials: Some(args.trials),
            seed: Some(args.seed),
            s: None,
            giant_fraction: Some(Estimate {
                mean: mc.giant_fraction.mean,
                stderr: mc.giant_fraction.stderr,
            }),
            nodes: (0..g.n())
                .map(|i| OracleNode {
                    id: i,
                    h1: None,
                    mean_size: mc.mean_size[i].mean,
                    mean_size_stderr: Some(mc.mean_size[i].stderr),
                    pi: mc.pi[i].iter().map(|e| e.mean).collect(),
                    pi_stderr: Some(mc.pi[i].iter().map(|e| e.stderr).collect()),
                })
                .collect(),
        }
    };
    manifest.finish();
    let body = match args.format {
        Format::Json => with_manifest(&report, &manifest),
        Format::Csv => report.to_csv(),
    };
    emit(out, &body, &manifest)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DensityRow {
    pub x: f64,
    pub rho: f64,
}

#[derive(Debug, Serialize)]
struct OracleSpectrumReport {
    eta: f64,
    mass_estimate: f64,
    eigenvalues: Vec<f64>,
    rows: Vec<DensityRow>,
}

pub fn oracle_spectrum(args: &OracleSpectrumArgs, out: Option<&Path>) -> CliResult<()> {
    let mut manifest = RunManifest::start("oracle spectrum");
    let g = load(&args.input, &mut manifest)?;
    let (eta, grid) = grid(&args.grid);
    if !(eta > 0.0) {
        return Err(CliError::Input(format!("eta must be positive, got {eta}")));
    }
    manifest.config(&serde_json::json!({ "eta": eta, "grid": grid, "eigen_tol": 1e-12 }));
    let eigenvalues = dense_eigenvalues(&g.to_dense(), 1e-12)?;
    let xs = grid.points();
    let rhos: Vec<f64> = xs.iter().map(|&x| exact_density(&eigenvalues, x, eta)).collect();
    let report = OracleSpectrumReport {
        eta,
        mass_estimate: trapezoid(&xs, &rhos),
        eigenvalues,
        rows: xs.into_iter().zip(rhos).map(|(x, rho)| DensityRow { x, rho }).collect(),
    };
    manifest.finish();
    let body = match args.format {
        Format::Json => with_manifest(&report, &manifest),
        Format::Csv => {
            manifest.summary = Some(serde_json::json!({
                "eta": report.eta,
                "mass_estimate": report.mass_estimate,
                "eigenvalues": report.eigenvalues,
            }));
            let mut csv = String::from("x,rho\n");
            for row in &report.rows {
                csv += &format!("{:.16e},{:.16e}\n", row.x, row.rho);
            }
            csv
        }
    };
    emit(out, &body, &manifest)
}
