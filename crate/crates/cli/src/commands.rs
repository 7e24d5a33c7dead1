//! Command dispatch and artifact output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use cascade_core::export::{write_solution, write_tensor, write_vtk};
use cascade_core::femspace::integrate_mesh;
use cascade_core::geometry::{Point, SegmentTag};
use cascade_core::lifting::lift_inflow;
use cascade_core::mesh::generate_mesh_with_cut;
use cascade_core::solver::{outflow_flux, outflow_residual, solve_problem, Discretization, FullSolution};
use cascade_core::tensorfield::{build_tensor, divergence_defect, RightInverse};
use cascade_core::verify::{
    default_deltas, dq_boundedness, fit_order, max_nodal_on, pairwise_orders, run_convergence_on,
    shift_equivalence, space_membership_report, ConvergenceCase, ShiftMode,
};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const REPORT_VERSION: &str = "# cascade-report v1";
pub const SUMMARY_VERSION: &str = "# cascade-summary v1";
pub const DQ_VERSION: &str = "# cascade-dq v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    /// Generate the mesh and write it.
    Mesh,
    /// Solve once and write fields and a summary row.
    Solve,
    /// Convergence study on a built-in case.
    Convergence,
    /// Check the inflow lifting.
    LiftCheck,
    /// Check the stress tensor representation of the data.
    TensorCheck,
    /// Solve, then check difference-quotient bounds.
    DqCheck,
    /// Compare solutions on the original and the shifted period window.
    ShiftCheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Mesh => "mesh",
            Command::Solve => "solve",
            Command::Convergence => "convergence",
            Command::LiftCheck => "lift-check",
            Command::TensorCheck => "tensor-check",
            Command::DqCheck => "dq-check",
            Command::ShiftCheck => "shift-check",
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Options {
    /// Refinement level of the base mesh.
    pub level: usize,
    /// Overrides the configured output directory.
    pub out: Option<PathBuf>,
}

/// Outcome of a command that ran to completion.
#[derive(Clone, Debug)]
pub struct Report {
    pub passed: bool,
    pub lines: Vec<String>,
    pub artifacts: Vec<PathBuf>,
}

/// 0 on pass, 1 on a failed gate, 2 on error.
pub fn exit_status(r: &Result<Report>) -> u8 {
    match r {
        Ok(rep) if rep.passed => 0,
        Ok(_) => 1,
        Err(_) => 2,
    }
}

struct Output {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Output {
    fn new(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
        Ok(Self { dir, written: Vec::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|source| CliError::Io { path: path.clone(), source })?;
        self.written.push(path);
        Ok(())
    }

    fn write_with(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> cascade_core::error::Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }
}

/// `key value` lines under a version header, closed by the gate status.
struct KeyValues {
    text: String,
}

impl KeyValues {
    fn new(cmd: Command) -> Self {
        Self { text: format!("{REPORT_VERSION}\ncommand {}\n", cmd.name()) }
    }

    fn add(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.text, "{key} {value}");
    }

    fn finish(mut self, passed: bool) -> String {
        self.add("status", if passed { "pass" } else { "fail" });
        self.text
    }
}

fn sci(x: f64) -> String {
    format!("{x:.10e}")
}

pub fn dispatch(cmd: Command, cfg: &RunConfig, opts: &Options) -> Result<Report> {
    let dir = opts.out.clone().unwrap_or_else(|| cfg.output.directory.clone());
    let mut out = Output::new(dir)?;
    let (passed, lines) = match cmd {
        Command::Mesh => mesh(cfg, opts, &mut out)?,
        Command::Solve => solve(cfg, opts, &mut out)?,
        Command::Convergence => convergence(cfg, &mut out)?,
        Command::LiftCheck => lift_check(cfg, opts, &mut out)?,
        Command::TensorCheck => tensor_check(cfg, opts, &mut out)?,
        Command::DqCheck => dq_check(cfg, opts, &mut out)?,
        Command::ShiftCheck => shift_check(cfg, opts, &mut out)?,
    };
    Ok(Report { passed, lines, artifacts: out.written })
}

type Outcome = Result<(bool, Vec<String>)>;

fn mesh(cfg: &RunConfig, opts: &Options, out: &mut Output) -> Outcome {
    let m = cfg.mesh(opts.level)?;
    out.write_with("mesh.txt", |w| m.write_to(w))?;
    Ok((
        true,
        vec![format!(
            "level {}: {} vertices, {} triangles, h_max {:.4e}",
            opts.level,
            m.num_vertices(),
            m.num_triangles(),
            m.h_max()
        )],
    ))
}

fn solve_at(cfg: &RunConfig, level: usize) -> Result<(Discretization, FullSolution)> {
    let disc = Discretization::new(cfg.mesh(level)?);
    let full = solve_problem(&disc, &cfg.data, &cfg.solver_config())?;
    Ok((disc, full))
}

fn solve(cfg: &RunConfig, opts: &Options, out: &mut Output) -> Outcome {
    let (disc, full) = solve_at(cfg, opts.level)?;
    let sol = &full.solution;
    if cfg.output.text {
        out.write_with("solution.txt", |w| write_solution(&sol.u, &sol.p, w))?;
        out.write_with("tensor.txt", |w| write_tensor(&full.tensor.tensor, w))?;
    }
    if cfg.output.vtk {
        out.write_with("solution.vtk", |w| write_vtk(&sol.u, &sol.p, w))?;
    }
    let membership = space_membership_report(&full, &cfg.data, cfg.nu);
    let out_flux = outflow_flux(&sol.u);
    let res = outflow_residual(sol, &cfg.data.h, cfg.nu);
    let mut csv = format!(
        "{SUMMARY_VERSION}\nlevel,h_max,triangles,unknowns,inflow_flux,outflow_flux,outflow_res,divergence,solver_residual\n"
    );
    let _ = writeln!(
        csv,
        "{},{},{},{},{},{},{},{},{}",
        opts.level,
        sci(disc.mesh.h_max()),
        disc.mesh.num_triangles(),
        sol.stats.unknowns,
        sci(full.lifting.flux),
        sci(out_flux),
        sci(res),
        sci(membership.divergence),
        sci(sol.stats.residual)
    );
    out.write("summary.csv", csv.as_bytes())?;
    Ok((
        true,
        vec![
            format!("level {}: {} unknowns, solver residual {:.2e}", opts.level, sol.stats.unknowns, sol.stats.residual),
            format!("flux in {:.6e}, out {:.6e}; outflow residual {:.3e}", full.lifting.flux, out_flux, res),
        ],
    ))
}

fn require_case(cfg: &RunConfig) -> Result<&ConvergenceCase> {
    cfg.case.as_ref().ok_or_else(|| {
        CliError::validation("case", "this command needs a built-in case (manufactured or constant-flow)")
    })
}

fn convergence(cfg: &RunConfig, out: &mut Output) -> Outcome {
    let case = require_case(cfg)?;
    if cfg.levels < 3 {
        return Err(CliError::validation("levels", "a convergence study needs at least 3 levels"));
    }
    let offset = cfg.cut_offset.unwrap_or(case.shift());
    let mut meshes = vec![generate_mesh_with_cut(&cfg.domain, cfg.target_h, offset)?];
    while meshes.len() < cfg.levels {
        let next = meshes[meshes.len() - 1].refine();
        meshes.push(next);
    }
    let study = run_convergence_on(case, meshes, &cfg.solver_config())?;
    out.write_with("convergence.csv", |w| study.write_csv(w))?;
    let o = &study.orders;
    let mut lines = vec![format!(
        "{} levels; orders u_H1 {:.3}, u_L2 {:.3}, p_L2 {:.3}, outflow residual {:.3}",
        study.rows.len(),
        o.u_h1,
        o.u_l2,
        o.p_l2,
        o.outflow_res
    )];
    let passed = match case {
        ConvergenceCase::ConstantFlow => {
            let worst = study.rows.iter().map(|r| r.errors.u_h1.max(r.errors.p_l2)).fold(0.0, f64::max);
            lines.push(format!("largest error {worst:.3e} (gate 1e-9)"));
            worst <= 1e-9
        }
        ConvergenceCase::Manufactured { .. } => {
            let h = study.column(|r| r.h_max);
            let outflow = pairwise_orders(&h, &study.column(|r| r.outflow_res));
            lines.push("gates: u_H1 in [1.7, 2.3], u_L2 in [2.6, 3.3], p_L2 in [1.7, 2.6], outflow orders >= 1".into());
            (1.7..=2.3).contains(&o.u_h1)
                && (2.6..=3.3).contains(&o.u_l2)
                && (1.7..=2.6).contains(&o.p_l2)
                && outflow.iter().all(|&r| r >= 1.0)
        }
    };
    Ok((passed, lines))
}

fn lift_check(cfg: &RunConfig, opts: &Options, out: &mut Output) -> Outcome {
    let disc = Discretization::new(cfg.mesh(opts.level)?);
    let dom = disc.mesh.domain();
    let deltas = match (cfg.delta_in, cfg.delta_out) {
        (None, None) => None,
        (i, o) => Some((i.unwrap_or(dom.default_inflow_delta()), o.unwrap_or(dom.default_outflow_delta()))),
    };
    let r = lift_inflow(&disc.vspace, &disc.pspace, &cfg.data.g, deltas, &cfg.backend)?;
    let plug = Point::new(r.flux / dom.tau(), 0.0);
    let layout = disc.vspace.layout();
    let strip_error = (0..layout.num_nodes())
        .filter(|&n| layout.node_point(n).x >= dom.d() - r.delta_out)
        .map(|n| {
            let k = disc.vspace.nodes().dof(n);
            Point::new(r.g_star.coeffs[2 * k], r.g_star.coeffs[2 * k + 1]).dist(plug)
        })
        .fold(0.0, f64::max);
    let profile = max_nodal_on(&r.g_star, SegmentTag::Profile);
    let flux_identity = (outflow_flux(&r.g_star) - r.flux).abs();
    let passed = r.divergence_residual <= 1e-8 && flux_identity <= 1e-10 && strip_error == 0.0 && profile == 0.0;
    let mut kv = KeyValues::new(Command::LiftCheck);
    kv.add("level", opts.level);
    kv.add("flux", sci(r.flux));
    kv.add("divergence_residual", sci(r.divergence_residual));
    kv.add("flux_identity", sci(flux_identity));
    kv.add("outflow_strip_error", sci(strip_error));
    kv.add("profile_max", sci(profile));
    out.write("lift-check.txt", kv.finish(passed).as_bytes())?;
    Ok((
        passed,
        vec![format!(
            "divergence residual {:.3e}, flux identity {:.3e}, strip error {:.1e}, profile {:.1e}",
            r.divergence_residual, flux_identity, strip_error, profile
        )],
    ))
}

fn tensor_check(cfg: &RunConfig, opts: &Options, out: &mut Output) -> Outcome {
    let disc = Discretization::new(cfg.mesh(opts.level)?);
    let ri = RightInverse::new(&disc.layout, cfg.right_inverse)?;
    let (f, h) = (&cfg.data.f, &cfg.data.h);
    let b = build_tensor(&disc.vspace, f, h, cfg.delta_out, &ri)?;
    let fnorm = integrate_mesh(&disc.mesh, |_, _, _, x| f.eval(x).dot(f.eval(x))).sqrt();
    let div = divergence_defect(&b.tensor, f, ri.pressure_space(), false)?;
    let profile = b.tensor.max_on(SegmentTag::Profile);
    let nodal = b.tensor.outflow_nodal_error(h);
    let trace = b.tensor.outflow_trace_error(h);
    let passed = div <= 1e-8 * (1.0 + fnorm) && profile == 0.0 && nodal <= 1e-12;
    let mut kv = KeyValues::new(Command::TensorCheck);
    kv.add("level", opts.level);
    kv.add("force_norm", sci(fnorm));
    kv.add("divergence_defect", sci(div));
    kv.add("outflow_nodal_error", sci(nodal));
    kv.add("outflow_trace_error", sci(trace));
    kv.add("profile_max", sci(profile));
    out.write("tensor-check.txt", kv.finish(passed).as_bytes())?;
    if cfg.output.text {
        out.write_with("tensor.txt", |w| write_tensor(&b.tensor, w))?;
    }
    Ok((
        passed,
        vec![format!(
            "divergence defect {div:.3e} (|f| {fnorm:.3e}), outflow nodal error {nodal:.1e}, L2 trace error {trace:.3e}"
        )],
    ))
}

fn dq_check(cfg: &RunConfig, opts: &Options, out: &mut Output) -> Outcome {
    let (_, full) = solve_at(cfg, opts.level)?;
    let oracle = cfg.case.as_ref().map(|c| c.oracle());
    let dq = dq_boundedness(&full.solution, &default_deltas(cfg.domain.tau()), oracle.as_deref())?;
    let with_oracle = !dq.oracle_error_u.is_empty();
    let mut csv = format!("{DQ_VERSION}\ndelta,grad_u_norm,p_norm");
    if with_oracle {
        csv.push_str(",oracle_error_u,oracle_error_p");
    }
    csv.push('\n');
    for (k, delta) in dq.deltas.iter().enumerate() {
        let _ = write!(csv, "{},{},{}", sci(*delta), sci(dq.grad_u_norms[k]), sci(dq.p_norms[k]));
        if with_oracle {
            let _ = write!(csv, ",{},{}", sci(dq.oracle_error_u[k]), sci(dq.oracle_error_p[k]));
        }
        csv.push('\n');
    }
    out.write("dq.csv", csv.as_bytes())?;
    // Quotients of a field that is constant in x2 are round-off over δ; their
    // ratio carries no information.
    let scale = full.solution.u.coeffs.iter().chain(&full.solution.p.coeffs).fold(1.0f64, |m, c| m.max(c.abs()));
    let bounded = |ratio: f64, norms: &[f64]| ratio <= 1.2 || norms.iter().all(|&n| n <= 1e-10 * scale);
    let passed = bounded(dq.ratio_u, &dq.grad_u_norms) && bounded(dq.ratio_p, &dq.p_norms);
    let mut lines =
        vec![format!("{} probes; max/min ratios u {:.4}, p {:.4} (gate 1.2)", dq.samples, dq.ratio_u, dq.ratio_p)];
    if with_oracle {
        lines.push(format!(
            "oracle error orders in delta: u {:.3}, p {:.3}",
            fit_order(&dq.deltas, &dq.oracle_error_u),
            fit_order(&dq.deltas, &dq.oracle_error_p)
        ));
    }
    Ok((passed, lines))
}

fn shift_check(cfg: &RunConfig, opts: &Options, out: &mut Output) -> Outcome {
    let offset = cfg
        .cut_offset
        .ok_or_else(|| CliError::validation("cut_offset", "shift-check needs a cut line below the profile"))?;
    let scfg = cfg.solver_config();
    let mut rows = Vec::new();
    for level in [opts.level, opts.level + 1] {
        let mesh = cfg.mesh(level)?;
        let r = shift_equivalence(&mesh, &cfg.data, &scfg, offset, ShiftMode::Independent, None)?;
        rows.push((mesh.h_max(), r));
    }
    let (coarse, fine) = (&rows[0], &rows[1]);
    let tiny = |m: f64, norm: f64| m <= 1e-9 * norm.max(1.0);
    let order = (coarse.1.mismatch / fine.1.mismatch).ln() / (coarse.0 / fine.0).ln();
    let passed = (tiny(coarse.1.mismatch, coarse.1.reference_norm) && tiny(fine.1.mismatch, fine.1.reference_norm))
        || order >= 1.9;
    let mut kv = KeyValues::new(Command::ShiftCheck);
    kv.add("delta", sci(offset));
    for (k, (h, r)) in rows.iter().enumerate() {
        kv.add(&format!("h_max_{k}"), sci(*h));
        kv.add(&format!("mismatch_{k}"), sci(r.mismatch));
        kv.add(&format!("p_mismatch_{k}"), sci(r.p_mismatch));
        kv.add(&format!("reference_norm_{k}"), sci(r.reference_norm));
    }
    kv.add("order", format!("{order:.4}"));
    out.write("shift-check.txt", kv.finish(passed).as_bytes())?;
    Ok((
        passed,
        vec![format!(
            "shift {offset}: mismatch {:.3e} -> {:.3e} (order {order:.3})",
            coarse.1.mismatch, fine.1.mismatch
        )],
    ))
}

/// Reads a configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    crate::config::parse_config(&text)
}
