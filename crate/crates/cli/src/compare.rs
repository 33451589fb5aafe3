use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::commands::{DensityRow, OraclePercolationReport};
use crate::error::{CliError, CliResult};
use crate::manifest::{emit, read_input, sidecar_path, with_manifest, RunManifest};
use crate::{ComparePercolationArgs, CompareSpectrumArgs};

/// Size bins with fewer expected sample counts than this are reported but
/// not judged against the sampling oracle.
const MIN_EXPECTED_COUNTS: f64 = 20.0;

fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> CliResult<T> {
    serde_json::from_str(text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn input_hash(manifest: &RunManifest, path: &Path) -> CliResult<String> {
    manifest
        .inputs
        .first()
        .map(|input| input.sha256.clone())
        .ok_or_else(|| CliError::Input(format!("{}: manifest records no input", path.display())))
}

/// Both outputs must come from byte-identical input files.
fn same_input(a: (&RunManifest, &Path), b: (&RunManifest, &Path)) -> CliResult<String> {
    let (ha, hb) = (input_hash(a.0, a.1)?, input_hash(b.0, b.1)?);
    if ha != hb {
        return Err(CliError::Input(format!(
            "input hashes differ: {} has {ha}, {} has {hb}",
            a.1.display(),
            b.1.display()
        )));
    }
    Ok(ha)
}

#[derive(Deserialize)]
struct MethodNode {
    id: usize,
    h1: f64,
    mean_size: f64,
    pi: Vec<f64>,
}

#[derive(Deserialize)]
struct MethodPercolation {
    p: f64,
    #[serde(rename = "S")]
    s: f64,
    nodes: Vec<MethodNode>,
    manifest: RunManifest,
}

#[derive(Deserialize)]
struct OraclePercolation {
    #[serde(flatten)]
    report: OraclePercolationReport,
    manifest: RunManifest,
}

#[derive(Debug, Default, Serialize)]
struct NodeDiff {
    id: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    h1: Option<f64>,
    mean_size: f64,
    /// Largest `|Δπ(s)|` over the sizes both reports carry.
    pi: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigmas: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Worst {
    node: usize,
    observable: String,
    method: f64,
    oracle: f64,
}

#[derive(Debug, Serialize)]
struct PercolationComparison {
    method: PathBuf,
    oracle: PathBuf,
    oracle_kind: String,
    input_sha256: String,
    p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_band: Option<(f64, f64)>,
    max_abs_dev: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    worst_sigmas: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    worst: Option<Worst>,
    pi_compared: bool,
    flagged: bool,
    pass: bool,
    nodes: Vec<NodeDiff>,
}

/// Running maximum that remembers where it was attained.
struct Tracker {
    value: f64,
    worst: Option<Worst>,
}

impl Tracker {
    fn see(&mut self, score: f64, node: usize, observable: String, method: f64, oracle: f64) {
        if score > self.value || self.worst.is_none() {
            self.value = self.value.max(score);
            self.worst = Some(Worst {
                node,
                observable,
                method,
                oracle,
            });
        }
    }
}

fn sigmas(value: f64, mean: f64, stderr: f64, trials: u64) -> f64 {
    (value - mean).abs() / stderr.max(1.0 / trials.max(1) as f64)
}

pub fn percolation(args: &ComparePercolationArgs, out: Option<&Path>) -> CliResult<()> {
    let mut manifest = RunManifest::start("compare percolation");
    let (method_text, method_bytes) = read_input(&args.method)?;
    let (oracle_text, oracle_bytes) = read_input(&args.oracle)?;
    manifest.input(&args.method, &method_bytes);
    manifest.input(&args.oracle, &oracle_bytes);
    manifest.config(&serde_json::json!({
        "tol": args.tol, "sigmas": args.sigmas, "flag_sigmas": args.flag_sigmas,
        "min_expected_counts": MIN_EXPECTED_COUNTS,
    }));
    let method: MethodPercolation = parse_json(&args.method, &method_text)?;
    let oracle: OraclePercolation = parse_json(&args.oracle, &oracle_text)?;
    let hash = same_input((&method.manifest, &args.method), (&oracle.manifest, &args.oracle))?;
    let oracle = oracle.report;
    if method.p != oracle.p {
        return Err(CliError::Input(format!("p differs: {} vs {}", method.p, oracle.p)));
    }
    if method.nodes.len() != oracle.nodes.len() {
        return Err(CliError::Input("node counts differ".into()));
    }
    let trials = oracle.trials;
    let sampled = trials.is_some();

    let mut abs = Tracker { value: 0.0, worst: None };
    let mut sig = Tracker { value: 0.0, worst: None };
    let mut pi_compared = false;
    let mut nodes = Vec::new();
    for (m, o) in method.nodes.iter().zip(&oracle.nodes) {
        if m.id != o.id {
            return Err(CliError::Input(format!("node ids differ: {} vs {}", m.id, o.id)));
        }
        let mut diff = NodeDiff {
            id: m.id,
            ..NodeDiff::default()
        };
        if let Some(h1) = o.h1 {
            let d = (m.h1 - h1).abs();
            diff.h1 = Some(d);
            abs.see(d, m.id, "h1".into(), m.h1, h1);
        }
        diff.mean_size = (m.mean_size - o.mean_size).abs();
        abs.see(diff.mean_size, m.id, "mean_size".into(), m.mean_size, o.mean_size);
        for (k, (&a, &b)) in m.pi.iter().zip(&o.pi).enumerate() {
            pi_compared = true;
            let d = (a - b).abs();
            diff.pi = diff.pi.max(d);
            abs.see(d, m.id, format!("pi({})", k + 1), a, b);
        }
        if let Some(t) = trials {
            let mut worst = sigmas(m.mean_size, o.mean_size, o.mean_size_stderr.unwrap_or(0.0), t);
            sig.see(worst, m.id, "mean_size".into(), m.mean_size, o.mean_size);
            let errs = o.pi_stderr.as_deref().unwrap_or(&[]);
            for (k, ((&a, &b), &e)) in m.pi.iter().zip(&o.pi).zip(errs).enumerate() {
                if a * t as f64 >= MIN_EXPECTED_COUNTS {
                    let s = sigmas(a, b, e, t);
                    worst = worst.max(s);
                    sig.see(s, m.id, format!("pi({})", k + 1), a, b);
                }
            }
            diff.sigmas = Some(worst);
        }
        nodes.push(diff);
    }
    if let Some(s) = oracle.s {
        abs.see((method.s - s).abs(), 0, "S".into(), method.s, s);
    }

    let (pass, flagged) = if sampled {
        (sig.value <= args.flag_sigmas, sig.value > args.sigmas)
    } else {
        (abs.value <= args.tol, false)
    };
    let comparison = PercolationComparison {
        method: args.method.clone(),
        oracle: args.oracle.clone(),
        oracle_kind: oracle.kind,
        input_sha256: hash,
        p: method.p,
        tolerance: (!sampled).then_some(args.tol),
        sigma_band: sampled.then_some((args.sigmas, args.flag_sigmas)),
        max_abs_dev: abs.value,
        worst_sigmas: sampled.then_some(sig.value),
        worst: if sampled { sig.worst } else { abs.worst },
        pi_compared,
        flagged,
        pass,
        nodes,
    };
    manifest.finish();
    emit(out, &with_manifest(&comparison, &manifest), &manifest)?;
    if pass {
        Ok(())
    } else if sampled {
        Err(CliError::ComparisonFailed(format!(
            "worst deviation {:.2} sigma exceeds {}",
            comparison.worst_sigmas.unwrap_or(0.0),
            args.flag_sigmas
        )))
    } else {
        Err(CliError::ComparisonFailed(format!(
            "max |dev| {:e} exceeds {:e}",
            comparison.max_abs_dev, args.tol
        )))
    }
}

#[derive(Deserialize)]
struct DensityDoc {
    rows: Vec<DensityRow>,
    manifest: RunManifest,
}

/// Rows and manifest of a spectrum output: a JSON document, or CSV with the
/// manifest in its sidecar file.
fn load_density(path: &Path) -> CliResult<(Vec<DensityRow>, RunManifest)> {
    let (text, _) = read_input(path)?;
    if text.trim_start().starts_with('{') {
        let doc: DensityDoc = parse_json(path, &text)?;
        return Ok((doc.rows, doc.manifest));
    }
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("x,rho") {
        return Err(CliError::Input(format!("{}: expected an \"x,rho\" header", path.display())));
    }
    let rows = lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, line)| {
            let bad = || CliError::Input(format!("{}: line {}: malformed row", path.display(), k + 2));
            let (x, rho) = line.split_once(',').ok_or_else(bad)?;
            Ok(DensityRow {
                x: x.trim().parse().map_err(|_| bad())?,
                rho: rho.trim().parse().map_err(|_| bad())?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let sidecar = sidecar_path(path);
    let (manifest_text, _) = read_input(&sidecar)?;
    Ok((rows, parse_json(&sidecar, &manifest_text)?))
}

#[derive(Debug, Serialize)]
struct RowDiff {
    x: f64,
    method: f64,
    oracle: f64,
    abs_dev: f64,
}

#[derive(Debug, Serialize)]
struct SpectrumComparison {
    method: PathBuf,
    oracle: PathBuf,
    input_sha256: String,
    tolerance: f64,
    max_abs_dev: f64,
    worst_x: f64,
    pass: bool,
    rows: Vec<RowDiff>,
}

pub fn spectrum(args: &CompareSpectrumArgs, out: Option<&Path>) -> CliResult<()> {
    let mut manifest = RunManifest::start("compare spectrum");
    let (method_rows, method_manifest) = load_density(&args.method)?;
    let (oracle_rows, oracle_manifest) = load_density(&args.oracle)?;
    for path in [&args.method, &args.oracle] {
        let (_, bytes) = read_input(path)?;
        manifest.input(path, &bytes);
    }
    manifest.config(&serde_json::json!({ "tol": args.tol }));
    let hash = same_input((&method_manifest, &args.method), (&oracle_manifest, &args.oracle))?;
    let eta = |m: &RunManifest| m.config.get("eta").and_then(serde_json::Value::as_f64);
    if eta(&method_manifest) != eta(&oracle_manifest) {
        return Err(CliError::Input(format!(
            "eta differs: {:?} vs {:?}",
            eta(&method_manifest),
            eta(&oracle_manifest)
        )));
    }
    if method_rows.len() != oracle_rows.len() {
        return Err(CliError::Input(format!(
            "grid sizes differ: {} vs {}",
            method_rows.len(),
            oracle_rows.len()
        )));
    }
    let mut rows = Vec::with_capacity(method_rows.len());
    for (m, o) in method_rows.iter().zip(&oracle_rows) {
        if (m.x - o.x).abs() > 1e-12 * m.x.abs().max(1.0) {
            return Err(CliError::Input(format!("grids differ at x = {} vs {}", m.x, o.x)));
        }
        rows.push(RowDiff {
            x: m.x,
            method: m.rho,
            oracle: o.rho,
            abs_dev: (m.rho - o.rho).abs(),
        });
    }
    let (max_abs_dev, worst_x) = rows
        .iter()
        .map(|r| (r.abs_dev, r.x))
        .fold((0.0, f64::NAN), |a, b| if b.0 > a.0 || a.1.is_nan() { b } else { a });
    let comparison = SpectrumComparison {
        method: args.method.clone(),
        oracle: args.oracle.clone(),
        input_sha256: hash,
        tolerance: args.tol,
        max_abs_dev,
        worst_x,
        pass: max_abs_dev <= args.tol,
        rows,
    };
    manifest.finish();
    emit(out, &with_manifest(&comparison, &manifest), &manifest)?;
    if comparison.pass {
        Ok(())
    } else {
        Err(CliError::ComparisonFailed(format!(
            "max |dev| {:e} at x = {} exceeds {:e}",
            max_abs_dev, worst_x, args.tol
        )))
    }
}
