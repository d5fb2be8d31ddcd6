//! Command-line pipelines: `solve`, `analyze`, `oracle` and `verify`.
//!
//! Every command reads one JSON config, writes its artifacts atomically
//! into an output directory, and maps failures onto exit codes
//! (0 success, 1 usage/config error, 2 convergence failure, 3 verification
//! failure).

use crate::analysis::{
    characteristics_csv, decomposition_json, render_svg, run_diagnostics, AnalysisConfig, AnalysisReport, Check,
    DiagnosticOptions, FanKind, FieldView,
};
use crate::mesh::{triangulate, Domain, Mesh};
use crate::oracles::{oracle_fields_on_mesh, Oracle, OracleFile, OracleSpec};
use crate::solver::{minimize, SolveResult, SolverConfig, SolverError, StageSummary};
use crate::Vec2;
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_VERIFY_FAILED: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {msg}")]
    Config { path: String, msg: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path} line {line}: {msg}")]
    Fields { path: String, line: usize, msg: String },
}

impl CliError {
    fn io(path: &Path, source: std::io::Error) -> CliError {
        CliError::Io { path: path.display().to_string(), source }
    }

    fn config(path: &Path, msg: impl ToString) -> CliError {
        CliError::Config { path: path.display().to_string(), msg: msg.to_string() }
    }
}

/// A solver problem: domain, mesh resolution and the tolerances of both
/// pipeline stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub domain: Domain,
    pub h: f64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ProblemConfig {
    /// Parses and validates; errors carry line and column.
    pub fn parse(text: &str) -> Result<ProblemConfig, String> {
        let cfg: ProblemConfig = serde_json::from_str(text).map_err(|e| format_json_error(&e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(format!("h must be positive, got {}", self.h));
        }
        self.solver.validate().map_err(|e| e.to_string())?;
        self.analysis.validate().map_err(|e| e.to_string())?;
        Ok(())
    }
}

fn format_json_error(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    // serde_json appends " at line L column C"; lead with the position instead
    match msg.rfind(" at line ") {
        Some(i) if e.line() > 0 => format!("line {} column {}: {}", e.line(), e.column(), &msg[..i]),
        _ => msg,
    }
}

/// Writes via a temporary sibling and a rename, so readers never observe
/// a partially written file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, contents).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn json_bytes(v: &impl Serialize) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

/// `tri_id,cx,cy,sigma_x,sigma_y,p_x,p_y,p_norm`.
pub fn fields_tri_csv(mesh: &Mesh, r: &SolveResult) -> String {
    let mut out = String::from("tri_id,cx,cy,sigma_x,sigma_y,p_x,p_y,p_norm\n");
    for t in 0..mesh.n_triangles() {
        let c = mesh.centroid(t);
        let (s, p) = (r.sigma[t], r.p[t]);
        let _ = writeln!(out, "{t},{},{},{},{},{},{},{}", num(c.x), num(c.y), num(s.x), num(s.y), num(p.x), num(p.y), num(r.p_norm[t]));
    }
    out
}

/// `node_id,x,y,u`.
pub fn fields_node_csv(mesh: &Mesh, r: &SolveResult) -> String {
    let mut out = String::from("node_id,x,y,u\n");
    for (i, p) in mesh.nodes.iter().enumerate() {
        let _ = writeln!(out, "{i},{},{},{}", num(p.x), num(p.y), num(r.u[i]));
    }
    out
}

/// `eps,iteration,energy`.
pub fn energy_history_csv(r: &SolveResult) -> String {
    let mut out = String::from("eps,iteration,energy\n");
    for e in &r.energy_history {
        let _ = writeln!(out, "{},{},{}", num(e.eps), e.iteration, num(e.energy));
    }
    out
}

/// Parses a numeric CSV with the given header; each row must start with
/// its own zero-based index.
pub fn parse_indexed_csv(text: &str, header: &str) -> Result<Vec<Vec<f64>>, (usize, String)> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == header => {}
        _ => return Err((1, format!("expected header `{header}`"))),
    }
    let width = header.split(',').count();
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.trim_end().split(',').collect();
        if cells.len() != width {
            return Err((lineno, format!("expected {width} columns, found {}", cells.len())));
        }
        let id: usize = cells[0].parse().map_err(|_| (lineno, format!("bad index `{}`", cells[0])))?;
        if id != rows.len() {
            return Err((lineno, format!("index {id} out of sequence")));
        }
        let vals = cells[1..]
            .iter()
            .map(|c| match c.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err((lineno, format!("bad number `{c}`"))),
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(vals);
    }
    Ok(rows)
}

const TRI_HEADER: &str = "tri_id,cx,cy,sigma_x,sigma_y,p_x,p_y,p_norm";
const NODE_HEADER: &str = "node_id,x,y,u";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct SolveReport {
    source: String,
    converged: bool,
    div_residual: f64,
    eps_final: f64,
    h: f64,
    n_nodes: usize,
    n_triangles: usize,
    #[serde(default)]
    stages: Vec<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn stage_json(s: &StageSummary) -> Value {
    serde_json::to_value(s).expect("serializable")
}

/// Everything a fields directory holds.
pub struct FieldsDir {
    pub problem: ProblemConfig,
    pub mesh: Mesh,
    pub result: SolveResult,
    source: String,
}

fn write_fields(dir: &Path, problem: &ProblemConfig, mesh: &Mesh, r: &SolveResult, report: &SolveReport) -> Result<(), CliError> {
    let mut problem = problem.clone();
    problem.output_dir = None;
    write_atomic(&dir.join("problem.json"), &json_bytes(&problem))?;
    write_atomic(&dir.join("mesh.txt"), mesh.to_dump().as_bytes())?;
    write_atomic(&dir.join("fields_tri.csv"), fields_tri_csv(mesh, r).as_bytes())?;
    write_atomic(&dir.join("fields_node.csv"), fields_node_csv(mesh, r).as_bytes())?;
    write_atomic(&dir.join("energy_history.csv"), energy_history_csv(r).as_bytes())?;
    write_atomic(&dir.join("solve_report.json"), &json_bytes(report))
}

pub fn load_fields(dir: &Path) -> Result<FieldsDir, CliError> {
    let problem_path = dir.join("problem.json");
    let problem = ProblemConfig::parse(&read(&problem_path)?).map_err(|m| CliError::config(&problem_path, m))?;
    let mesh_path = dir.join("mesh.txt");
    let mesh = Mesh::from_dump(&read(&mesh_path)?, problem.h).map_err(|e| CliError::config(&mesh_path, e))?;
    let fields_err = |path: &Path, (line, msg): (usize, String)| CliError::Fields { path: path.display().to_string(), line, msg };
    let tri_path = dir.join("fields_tri.csv");
    let tri = parse_indexed_csv(&read(&tri_path)?, TRI_HEADER).map_err(|e| fields_err(&tri_path, e))?;
    let node_path = dir.join("fields_node.csv");
    let node = parse_indexed_csv(&read(&node_path)?, NODE_HEADER).map_err(|e| fields_err(&node_path, e))?;
    if tri.len() != mesh.n_triangles() {
        return Err(CliError::config(&tri_path, format!("{} rows for {} triangles", tri.len(), mesh.n_triangles())));
    }
    if node.len() != mesh.n_nodes() {
        return Err(CliError::config(&node_path, format!("{} rows for {} nodes", node.len(), mesh.n_nodes())));
    }
    let report_path = dir.join("solve_report.json");
    let report: SolveReport = match fs::read_to_string(&report_path) {
        Ok(text) => serde_json::from_str(&text).map_err(|e| CliError::config(&report_path, format_json_error(&e)))?,
        Err(_) => SolveReport { source: "unknown".into(), ..Default::default() },
    };
    let result = SolveResult {
        u: node.iter().map(|r| r[2]).collect(),
        sigma: tri.iter().map(|r| Vec2::new(r[2], r[3])).collect(),
        p: tri.iter().map(|r| Vec2::new(r[4], r[5])).collect(),
        p_norm: tri.iter().map(|r| r[6]).collect(),
        energy_history: Vec::new(),
        div_residual: report.div_residual,
        eps_final: report.eps_final,
        stages: Vec::new(),
    };
    Ok(FieldsDir { problem, mesh, result, source: report.source })
}

#[derive(Parser, Debug)]
#[command(name = "hencky", version, about = "Scalar Hencky plasticity: solve, analyze and verify")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Minimize the regularized energy and write the fields.
    Solve {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        h: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Run the plastic-zone analysis on a fields directory.
    Analyze {
        dir: PathBuf,
        config: PathBuf,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        reproducible: bool,
    },
    /// Sample a closed-form solution onto a mesh.
    Oracle {
        oracle: PathBuf,
        #[arg(long)]
        h: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Run every diagnostic, optionally against an oracle truth file.
    Verify {
        dir: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        reproducible: bool,
        #[arg(long)]
        delta: Option<f64>,
    },
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Solve { config, out, h, delta } => cmd_solve(&config, out.as_deref(), h, delta),
        Command::Analyze { dir, config, delta, reproducible } => cmd_analyze(&dir, &config, delta, reproducible),
        Command::Oracle { oracle, h, out, delta } => cmd_oracle(&oracle, h, &out, delta),
        Command::Verify { dir, truth, reproducible, delta } => cmd_verify(&dir, truth.as_deref(), delta, reproducible),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn load_problem(path: &Path, h: Option<f64>, delta: Option<f64>) -> Result<ProblemConfig, CliError> {
    let mut cfg = ProblemConfig::parse(&read(path)?).map_err(|m| CliError::config(path, m))?;
    if let Some(h) = h {
        cfg.h = h;
    }
    if let Some(d) = delta {
        cfg.analysis.delta = d;
    }
    cfg.validate().map_err(|m| CliError::config(path, m))?;
    Ok(cfg)
}

pub fn cmd_solve(config: &Path, out: Option<&Path>, h: Option<f64>, delta: Option<f64>) -> Result<i32, CliError> {
    let cfg = load_problem(config, h, delta)?;
    let dir = out.map(Path::to_path_buf).or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let mesh = triangulate(&cfg.domain, cfg.h).map_err(|e| CliError::config(config, e))?;
    let (result, code, error) = match minimize(&mesh, &cfg.domain, &cfg.solver) {
        Ok(r) => (r, EXIT_OK, None),
        Err(SolverError::NotConverged { eps, iterations, scaled_gradient, best }) => {
            let msg = format!("not converged at eps = {eps} after {iterations} iterations (scaled gradient {scaled_gradient:e})");
            (*best, EXIT_NOT_CONVERGED, Some(msg))
        }
        Err(e) => return Err(CliError::config(config, e)),
    };
    let report = SolveReport {
        source: "solver".into(),
        converged: code == EXIT_OK,
        div_residual: result.div_residual,
        eps_final: result.eps_final,
        h: cfg.h,
        n_nodes: mesh.n_nodes(),
        n_triangles: mesh.n_triangles(),
        stages: result.stages.iter().map(stage_json).collect(),
        error: error.clone(),
    };
    write_fields(&dir, &cfg, &mesh, &result, &report)?;
    if let Some(msg) = error {
        eprintln!("warning: {msg}");
    }
    println!("div_residual = {:.6e}, stages = {}, output in {}", result.div_residual, result.stages.len(), dir.display());
    Ok(code)
}

/// Expected structure of an oracle field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleTruth {
    pub oracle: OracleSpec,
    pub domain: Domain,
    pub h: f64,
    pub fans: Vec<TruthFan>,
    pub constant_zones: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthFan {
    pub apex: Vec2,
    pub alpha: f64,
}

fn truth_of(spec: &OracleSpec, oracle: &Oracle, domain: &Domain, h: f64) -> OracleTruth {
    let (fans, constant_zones) = match oracle {
        Oracle::Fan(f) => (vec![TruthFan { apex: f.apex, alpha: f.alpha }], vec![]),
        Oracle::Trapezoid(_) => (vec![], vec![[std::f64::consts::FRAC_1_SQRT_2; 2]]),
        Oracle::Family453(_) => (vec![], vec![]),
    };
    OracleTruth { oracle: spec.clone(), domain: domain.clone(), h, fans, constant_zones }
}

pub fn cmd_oracle(path: &Path, h: f64, out: &Path, delta: Option<f64>) -> Result<i32, CliError> {
    let file = OracleFile::parse(&read(path)?).map_err(|e| CliError::config(path, format_json_error(&e)))?;
    let oracle = file.spec.build().map_err(|e| CliError::config(path, e))?;
    let domain = file.domain(&oracle).map_err(|e| CliError::config(path, e))?;
    let mut problem = ProblemConfig { domain, h, solver: SolverConfig::default(), analysis: AnalysisConfig::default(), output_dir: None };
    if let Some(d) = delta {
        problem.analysis.delta = d;
    }
    problem.validate().map_err(|m| CliError::config(path, m))?;
    let mesh = triangulate(&problem.domain, h).map_err(|e| CliError::config(path, e))?;
    let result = oracle_fields_on_mesh(&oracle, &mesh).map_err(|e| CliError::config(path, e))?;
    let report = SolveReport {
        source: "oracle".into(),
        converged: true,
        div_residual: result.div_residual,
        eps_final: 0.0,
        h,
        n_nodes: mesh.n_nodes(),
        n_triangles: mesh.n_triangles(),
        stages: Vec::new(),
        error: None,
    };
    write_fields(out, &problem, &mesh, &result, &report)?;
    let truth = truth_of(&file.spec, &oracle, &problem.domain, h);
    write_atomic(&out.join("oracle_truth.json"), &json_bytes(&truth))?;
    println!("{} oracle sampled on {} triangles, output in {}", oracle.name(), mesh.n_triangles(), out.display());
    Ok(EXIT_OK)
}

fn write_analysis(dir: &Path, fields: &FieldsDir, report: &AnalysisReport, reproducible: bool) -> Result<(), CliError> {
    let (lines, fans) = match &report.decomposition {
        Some(d) => (&d.lines[..], &d.fans[..]),
        None => (&[][..], &[][..]),
    };
    let decomposition = match (&report.zone, &report.decomposition) {
        (Some(z), Some(d)) => decomposition_json(z, d),
        _ => json!({"zone_area": 0.0, "n_lines": 0, "fans": [], "constant_zones": [], "other_components": [], "unclassified_area_fraction": 0.0}),
    };
    write_atomic(&dir.join("decomposition.json"), &json_bytes(&decomposition))?;
    write_atomic(&dir.join("characteristics.csv"), characteristics_csv(lines).as_bytes())?;
    let svg = render_svg(&fields.mesh, &fields.problem.domain, report.zone.as_ref(), lines, fans, reproducible);
    write_atomic(&dir.join("characteristics.svg"), svg.as_bytes())?;
    let diagnostics = json!({
        "seed": fields.problem.analysis.seed,
        "all_required_pass": report.all_required_pass(),
        "checks": report.checks,
    });
    write_atomic(&dir.join("diagnostics.json"), &json_bytes(&diagnostics))
}

fn options_for(source: &str, strict: bool) -> DiagnosticOptions {
    DiagnosticOptions { strict, flow_rule: source == "solver" }
}

pub fn cmd_analyze(dir: &Path, config: &Path, delta: Option<f64>, reproducible: bool) -> Result<i32, CliError> {
    let cfg = load_problem(config, None, delta)?;
    let mut fields = load_fields(dir)?;
    fields.problem.domain = cfg.domain;
    fields.problem.analysis = cfg.analysis;
    let view = FieldView::from_result(&fields.mesh, &fields.result).map_err(|e| CliError::config(dir, e))?;
    let report = run_diagnostics(&view, &fields.problem.domain, &fields.result, &fields.problem.analysis, options_for(&fields.source, false))
        .map_err(|e| CliError::config(dir, e))?;
    write_analysis(dir, &fields, &report, reproducible)?;
    print_table(&report.checks);
    Ok(EXIT_OK)
}

fn relative_l2(a: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (num, den) = a.fold((0.0, 0.0), |(n, d), (e, w)| (n + e, d + w));
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

fn truth_checks(fields: &FieldsDir, truth: &OracleTruth, oracle: &Oracle, report: &AnalysisReport) -> Vec<Check> {
    let mesh = &fields.mesh;
    let h = mesh.h;
    let mut checks = Vec::new();
    let exact = match oracle_fields_on_mesh(oracle, mesh) {
        Ok(e) => e,
        Err(e) => {
            checks.push(Check::simple("truth_coverage", json!({"error": e.to_string()}), 1.0, 0.0, false));
            return checks;
        }
    };
    let sig = relative_l2((0..mesh.n_triangles()).map(|t| {
        let a = mesh.signed_area(t);
        (a * (fields.result.sigma[t] - exact.sigma[t]).norm_sq(), a * exact.sigma[t].norm_sq())
    }));
    checks.push(Check::simple("sigma_rel_l2_vs_truth", json!({}), sig, 1e-9, sig <= 1e-9));
    let u = relative_l2(fields.result.u.iter().zip(&exact.u).map(|(a, b)| ((a - b).powi(2), b * b)));
    checks.push(Check::simple("u_rel_l2_vs_truth", json!({}), u, 1e-9, u <= 1e-9));

    let (fans, constants) = match &report.decomposition {
        Some(d) => (d.fans.clone(), d.constant_zones.iter().map(|c| c.sigma_bar).collect::<Vec<_>>()),
        None => (Vec::new(), Vec::new()),
    };
    let fan_count_ok = fans.len() == truth.fans.len();
    checks.push(Check::simple(
        "fan_count",
        json!({"expected": truth.fans.len()}),
        fans.len() as f64,
        truth.fans.len() as f64,
        fan_count_ok,
    ));
    for (i, tf) in truth.fans.iter().enumerate() {
        let nearest = fans.iter().min_by(|a, b| a.apex.dist(tf.apex).total_cmp(&b.apex.dist(tf.apex)));
        let dist = nearest.map_or(f64::INFINITY, |f| f.apex.dist(tf.apex));
        let alpha_ok = nearest.is_some_and(|f| f.alpha == tf.alpha);
        let kind = nearest.map(|f| match f.kind {
            FanKind::Boundary => "boundary",
            FanKind::Exterior => "exterior",
        });
        checks.push(Check::simple(
            "fan_apex",
            json!({"fan": i, "truth": [tf.apex.x, tf.apex.y], "alpha_match": alpha_ok, "kind": kind}),
            if dist.is_finite() { dist } else { 1e300 },
            2.0 * h,
            dist <= 2.0 * h && alpha_ok,
        ));
    }
    checks.push(Check::simple(
        "constant_zone_count",
        json!({"expected": truth.constant_zones.len()}),
        constants.len() as f64,
        truth.constant_zones.len() as f64,
        constants.len() == truth.constant_zones.len(),
    ));
    for (i, s) in truth.constant_zones.iter().enumerate() {
        let t = Vec2::new(s[0], s[1]);
        let d = constants.iter().map(|c| c.dist(t)).fold(f64::INFINITY, f64::min);
        checks.push(Check::simple("constant_zone_sigma", json!({"zone": i, "truth": s}), if d.is_finite() { d } else { 1e300 }, 0.05, d <= 0.05));
    }
    checks
}

pub fn cmd_verify(dir: &Path, truth: Option<&Path>, delta: Option<f64>, reproducible: bool) -> Result<i32, CliError> {
    let mut fields = load_fields(dir)?;
    if let Some(d) = delta {
        fields.problem.analysis.delta = d;
    }
    let truth = match truth {
        Some(p) => {
            let t: OracleTruth = serde_json::from_str(&read(p)?).map_err(|e| CliError::config(p, format_json_error(&e)))?;
            let o = t.oracle.build().map_err(|e| CliError::config(p, e))?;
            Some((t, o))
        }
        None => None,
    };
    let mut view = FieldView::from_result(&fields.mesh, &fields.result).map_err(|e| CliError::config(dir, e))?;
    if let Some((_, o)) = &truth {
        view = view.with_exact(o);
    }
    let mut report = run_diagnostics(
        &view,
        &fields.problem.domain,
        &fields.result,
        &fields.problem.analysis,
        options_for(&fields.source, truth.is_some()),
    )
    .map_err(|e| CliError::config(dir, e))?;
    if let Some((t, o)) = &truth {
        let extra = truth_checks(&fields, t, o, &report);
        report.checks.extend(extra);
    }
    write_analysis(dir, &fields, &report, reproducible)?;
    print_table(&report.checks);
    if report.all_required_pass() {
        println!("verdict: PASS");
        Ok(EXIT_OK)
    } else {
        println!("verdict: FAIL");
        Ok(EXIT_VERIFY_FAILED)
    }
}

fn print_table(checks: &[Check]) {
    println!("{:<28} {:>24} {:>24}  verdict", "check", "value", "threshold");
    for c in checks {
        let verdict = match (c.pass, c.required()) {
            (true, true) => "PASS",
            (false, true) => "FAIL",
            (true, false) => "info",
            (false, false) => "info (fail)",
        };
        println!("{:<28} {:>24.6e} {:>24.6e}  {verdict}", c.name, c.value, c.threshold);
    }
}
