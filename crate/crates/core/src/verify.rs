//! Regularity harness: convergence studies, difference-quotient bounds,
//! periodicity and shift checks, and strong-form residuals.

use std::io::Write;
use std::sync::Arc;

use crate::data::{BodyForce, InflowData, OutflowTrace};
use crate::element::gauss_legendre01;
use crate::error::{Error, Result};
use crate::femspace::{element_affine, integrate_mesh, ScalarField, VectorField};
use crate::geometry::{CascadeDomain, Point, SegmentTag};
use crate::manufactured::{circle_cascade, ManufacturedCase};
use crate::mesh::{edge_key, generate_mesh_with_cut, Locator, Mesh};
use crate::solver::{
    outflow_flux, outflow_residual, pressure_ratio, solve_problem, solve_weak, Discretization,
    FullSolution, ProblemData, SolverConfig, StokesSolution,
};
use crate::tensorfield::TensorField;

/// Closed-form reference solution.
pub trait Oracle {
    fn velocity(&self, p: Point) -> Point;
    fn velocity_gradient(&self, p: Point) -> [[f64; 2]; 2];
    fn pressure(&self, p: Point) -> f64;
    fn velocity_dx2(&self, p: Point) -> Point {
        let g = self.velocity_gradient(p);
        Point::new(g[0][1], g[1][1])
    }
    fn pressure_dx2(&self, p: Point) -> f64;
}

impl Oracle for ManufacturedCase {
    fn velocity(&self, p: Point) -> Point {
        ManufacturedCase::velocity(self, p)
    }
    fn velocity_gradient(&self, p: Point) -> [[f64; 2]; 2] {
        ManufacturedCase::velocity_gradient(self, p)
    }
    fn pressure(&self, p: Point) -> f64 {
        ManufacturedCase::pressure(self, p)
    }
    fn pressure_dx2(&self, p: Point) -> f64 {
        self.pressure_gradient(p).y
    }
}

/// Uniform flow `u = (c, 0)`, `p = 0`.
pub struct ConstantFlow(pub f64);

impl Oracle for ConstantFlow {
    fn velocity(&self, _: Point) -> Point {
        Point::new(self.0, 0.0)
    }
    fn velocity_gradient(&self, _: Point) -> [[f64; 2]; 2] {
        [[0.0; 2]; 2]
    }
    fn pressure(&self, _: Point) -> f64 {
        0.0
    }
    fn pressure_dx2(&self, _: Point) -> f64 {
        0.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorNorms {
    /// Full `H¹` norm of the velocity error.
    pub u_h1: f64,
    pub u_l2: f64,
    pub p_l2: f64,
}

pub fn solution_errors(u: &VectorField, p: &ScalarField, oracle: &dyn Oracle) -> ErrorNorms {
    let mesh = u.space.mesh();
    let l2 = integrate_mesh(mesh, |t, _, l, x| {
        let e = u.eval(t, l) - oracle.velocity(x);
        e.dot(e)
    });
    let semi = integrate_mesh(mesh, |t, aff, l, x| {
        let g = u.grad(t, aff, l);
        let ge = oracle.velocity_gradient(x);
        (0..2).map(|i| (0..2).map(|j| (g[i][j] - ge[i][j]).powi(2)).sum::<f64>()).sum()
    });
    let pl2 = integrate_mesh(mesh, |t, _, l, x| (p.eval(t, l) - oracle.pressure(x)).powi(2));
    ErrorNorms { u_h1: (l2 + semi).sqrt(), u_l2: l2.sqrt(), p_l2: pl2.sqrt() }
}

/// Least-squares slope of `log e` against `log h`.
pub fn fit_order(h: &[f64], e: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> =
        h.iter().zip(e).filter(|(_, &e)| e > 0.0).map(|(&h, &e)| (h.ln(), e.ln())).collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Observed orders between consecutive levels.
pub fn pairwise_orders(h: &[f64], e: &[f64]) -> Vec<f64> {
    h.windows(2).zip(e.windows(2)).map(|(h, e)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln()).collect()
}

/// Built-in convergence cases.
#[derive(Clone, Debug, PartialEq)]
pub enum ConvergenceCase {
    /// Channel `d = 1`, `τ = 1`, `g = (1, 0)`: the exact solution is representable.
    ConstantFlow,
    /// Smooth stream-function solution on the circle cascade.
    Manufactured { nu: f64 },
}

impl ConvergenceCase {
    pub fn name(&self) -> &'static str {
        match self {
            ConvergenceCase::ConstantFlow => "constant-flow",
            ConvergenceCase::Manufactured { .. } => "manufactured",
        }
    }

    pub fn domain(&self) -> CascadeDomain {
        match self {
            ConvergenceCase::ConstantFlow => CascadeDomain::channel(1.0, 1.0),
            ConvergenceCase::Manufactured { .. } => circle_cascade(),
        }
    }

    pub fn base_h(&self) -> f64 {
        match self {
            ConvergenceCase::ConstantFlow => 0.25,
            ConvergenceCase::Manufactured { .. } => 0.1,
        }
    }

    /// Offset of the cut line used for the shift check (below the profile).
    pub fn shift(&self) -> f64 {
        match self {
            ConvergenceCase::ConstantFlow => 0.5,
            ConvergenceCase::Manufactured { .. } => 0.125,
        }
    }

    pub fn nu(&self) -> f64 {
        match self {
            ConvergenceCase::ConstantFlow => 1.0,
            ConvergenceCase::Manufactured { nu } => *nu,
        }
    }

    pub fn data(&self) -> ProblemData {
        match self {
            ConvergenceCase::ConstantFlow => {
                ProblemData { g: InflowData::Constant { g1: 1.0, g2: 0.0 }, ..ProblemData::zero() }
            }
            ConvergenceCase::Manufactured { nu } => ManufacturedCase::standard(*nu).problem_data(),
        }
    }

    pub fn oracle(&self) -> Box<dyn Oracle> {
        match self {
            ConvergenceCase::ConstantFlow => Box::new(ConstantFlow(1.0)),
            ConvergenceCase::Manufactured { nu } => Box::new(ManufacturedCase::standard(*nu)),
        }
    }

    /// Nested meshes: a base mesh with a cut line and its red refinements.
    pub fn meshes(&self, levels: usize) -> Result<Vec<Mesh>> {
        self.meshes_from(self.base_h(), levels)
    }

    pub fn meshes_from(&self, base_h: f64, levels: usize) -> Result<Vec<Mesh>> {
        let mut m = generate_mesh_with_cut(&self.domain(), base_h, self.shift())?;
        let mut out = Vec::with_capacity(levels);
        for k in 0..levels {
            if k > 0 {
                m = m.refine();
            }
            out.push(m.clone());
        }
        Ok(out)
    }
}

pub const CSV_VERSION: &str = "# cascade-convergence v1";
pub const CSV_HEADER: &str = "case,level,h_max,err_u_h1,err_u_l2,err_p_l2,outflow_res,flux_res,dq_ratio_u,dq_ratio_p,shift_mismatch";

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub case: String,
    pub level: usize,
    pub h_max: f64,
    pub errors: ErrorNorms,
    pub outflow_res: f64,
    pub flux_res: f64,
    pub dq_ratio_u: f64,
    pub dq_ratio_p: f64,
    pub shift_mismatch: f64,
    pub pressure_ratio: f64,
    /// Diagnostics kept out of the CSV.
    pub periodicity: PeriodicityReport,
    pub interior_residual: f64,
    pub dq: DqReport,
}

#[derive(Clone, Debug)]
pub struct FittedOrders {
    pub u_h1: f64,
    pub u_l2: f64,
    pub p_l2: f64,
    pub outflow_res: f64,
    pub pressure_ratio: f64,
}

#[derive(Clone, Debug)]
pub struct ConvergenceStudy {
    pub rows: Vec<ConvergenceRow>,
    pub orders: FittedOrders,
}

impl ConvergenceStudy {
    pub fn column(&self, f: impl Fn(&ConvergenceRow) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        write_csv(&self.rows, w)
    }
}

pub fn write_csv<W: Write>(rows: &[ConvergenceRow], w: &mut W) -> Result<()> {
    writeln!(w, "{CSV_VERSION}")?;
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}",
            r.case,
            r.level,
            r.h_max,
            r.errors.u_h1,
            r.errors.u_l2,
            r.errors.p_l2,
            r.outflow_res,
            r.flux_res,
            r.dq_ratio_u,
            r.dq_ratio_p,
            r.shift_mismatch
        )?;
    }
    Ok(())
}

/// Solves the case on `levels` nested meshes and fits orders.
pub fn run_convergence(case: &ConvergenceCase, levels: usize, cfg: &SolverConfig) -> Result<ConvergenceStudy> {
    run_convergence_on(case, case.meshes(levels)?, cfg)
}

/// As [`run_convergence`] on caller-supplied meshes of decreasing size, each with
/// a cut line.
pub fn run_convergence_on(case: &ConvergenceCase, meshes: Vec<Mesh>, cfg: &SolverConfig) -> Result<ConvergenceStudy> {
    if meshes.len() < 3 {
        return Err(Error::Incompatible(format!("a study needs at least 3 levels, got {}", meshes.len())));
    }
    if meshes.windows(2).any(|w| w[1].h_max() >= w[0].h_max()) {
        return Err(Error::Incompatible("mesh sizes must decrease strictly".into()));
    }
    let cfg = SolverConfig { nu: case.nu(), ..cfg.clone() };
    let data = case.data();
    let oracle = case.oracle();
    let mut rows = Vec::new();
    for (level, mesh) in meshes.into_iter().enumerate() {
        let h_max = mesh.h_max();
        let disc = Discretization::new(mesh.clone());
        let full = solve_problem(&disc, &data, &cfg)?;
        let sol = &full.solution;
        let errors = solution_errors(&sol.u, &sol.p, oracle.as_ref());
        let dq = dq_boundedness(sol, &default_deltas(mesh.domain().tau()), Some(oracle.as_ref()))?;
        let membership = space_membership_report(&full, &data, cfg.nu);
        let offset = mesh.cut().map(|c| c.offset).ok_or(Error::NoCutLine)?;
        let shift = shift_equivalence(&mesh, &data, &cfg, offset, ShiftMode::Matching, Some(&full))?;
        rows.push(ConvergenceRow {
            case: case.name().to_string(),
            level,
            h_max,
            errors,
            outflow_res: outflow_residual(sol, &data.h, cfg.nu),
            flux_res: (outflow_flux(&sol.u) - full.lifting.flux).abs(),
            dq_ratio_u: dq.ratio_u,
            dq_ratio_p: dq.ratio_p,
            shift_mismatch: shift.mismatch,
            pressure_ratio: pressure_ratio(sol, &full.tensor.tensor),
            periodicity: membership.periodicity,
            interior_residual: membership.interior_residual,
            dq,
        });
    }
    let h: Vec<f64> = rows.iter().map(|r| r.h_max).collect();
    let col = |f: &dyn Fn(&ConvergenceRow) -> f64| -> Vec<f64> { rows.iter().map(f).collect() };
    let orders = FittedOrders {
        u_h1: fit_order(&h, &col(&|r| r.errors.u_h1)),
        u_l2: fit_order(&h, &col(&|r| r.errors.u_l2)),
        p_l2: fit_order(&h, &col(&|r| r.errors.p_l2)),
        outflow_res: fit_order(&h, &col(&|r| r.outflow_res)),
        pressure_ratio: fit_order(&h, &col(&|r| r.pressure_ratio)),
    };
    Ok(ConvergenceStudy { rows, orders })
}

/// `τ · {1/8, 1/16, 1/32, 1/64}`.
pub fn default_deltas(tau: f64) -> Vec<f64> {
    [8.0, 16.0, 32.0, 64.0].iter().map(|k| tau / k).collect()
}

/// Point evaluation of finite element fields with `τ`-wraparound.
pub struct FieldProbe<'a> {
    mesh: &'a Mesh,
    locator: Locator<'a>,
}

impl<'a> FieldProbe<'a> {
    pub fn new(mesh: &'a Mesh) -> Self {
        Self { mesh, locator: Locator::new(mesh) }
    }

    /// Triangle and barycentric coordinates of `wrap(p)`.
    pub fn locate(&self, p: Point) -> Option<(usize, [f64; 3])> {
        self.locator.locate(self.mesh.domain().wrap(p), 1e-9)
    }

    pub fn velocity(&self, u: &VectorField, p: Point) -> Option<Point> {
        self.locate(p).map(|(t, l)| u.eval(t, l))
    }

    pub fn velocity_gradient(&self, u: &VectorField, p: Point) -> Option<[[f64; 2]; 2]> {
        self.locate(p).map(|(t, l)| u.grad(t, &element_affine(self.mesh, t), l))
    }

    pub fn pressure(&self, q: &ScalarField, p: Point) -> Option<f64> {
        self.locate(p).map(|(t, l)| q.eval(t, l))
    }

    pub fn tensor(&self, f: &TensorField, p: Point) -> Option<[[f64; 2]; 2]> {
        self.locate(p).map(|(t, l)| f.eval(t, l))
    }
}

/// Tensor-product probe grid of `n × n` cell centres in `(x1, x2 − x2_Γ0(x1))`,
/// with the area weight of each cell.
pub fn probe_grid(dom: &CascadeDomain, n: usize) -> (Vec<Point>, f64) {
    let (d, tau) = (dom.d(), dom.tau());
    let mut pts = Vec::with_capacity(n * n);
    for i in 0..n {
        let x = (i as f64 + 0.5) * d / n as f64;
        for j in 0..n {
            let y = dom.lower(x) + (j as f64 + 0.5) * tau / n as f64;
            pts.push(Point::new(x, y));
        }
    }
    (pts, d * tau / (n * n) as f64)
}

/// Which field a difference quotient is taken of.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuotientComponent {
    /// `∇ D₂^δ u`.
    VelocityGradient,
    /// `D₂^δ u`.
    Velocity,
    /// `D₂^δ p`.
    Pressure,
}

/// `D₂^δ` of a sampled quantity: `(s(x + δe2) − s(x))/δ` entrywise, `None` where
/// either sample is missing.
pub fn quotient(sample: impl Fn(Point) -> Option<Vec<f64>>, points: &[Point], delta: f64) -> Vec<Option<Vec<f64>>> {
    points
        .iter()
        .map(|&p| {
            let a = sample(p)?;
            let b = sample(p + Point::new(0.0, delta))?;
            Some(a.iter().zip(&b).map(|(x, y)| (y - x) / delta).collect())
        })
        .collect()
}

/// `D₂^δ` of a solution component sampled at `points`; `None` where a sample
/// (or its translate) falls outside the discrete domain. Entries are flattened.
pub fn difference_quotient(
    probe: &FieldProbe,
    sol: &StokesSolution,
    points: &[Point],
    delta: f64,
    component: QuotientComponent,
) -> Vec<Option<Vec<f64>>> {
    match component {
        QuotientComponent::VelocityGradient => quotient(
            |p| probe.velocity_gradient(&sol.u, p).map(|g| vec![g[0][0], g[0][1], g[1][0], g[1][1]]),
            points,
            delta,
        ),
        QuotientComponent::Velocity => quotient(|p| probe.velocity(&sol.u, p).map(|v| vec![v.x, v.y]), points, delta),
        QuotientComponent::Pressure => quotient(|p| probe.pressure(&sol.p, p).map(|v| vec![v]), points, delta),
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DqReport {
    pub deltas: Vec<f64>,
    /// `‖∇D₂^δ u_h‖` per δ on the probe grid.
    pub grad_u_norms: Vec<f64>,
    /// `‖D₂^δ p_h‖` per δ.
    pub p_norms: Vec<f64>,
    /// max/min over δ (1 when all norms vanish).
    pub ratio_u: f64,
    pub ratio_p: f64,
    /// `‖D₂^δ u_h − ∂₂u‖` and `‖D₂^δ p_h − ∂₂p‖` against an oracle, per δ.
    pub oracle_error_u: Vec<f64>,
    pub oracle_error_p: Vec<f64>,
    /// Number of probe points used (the same for every δ).
    pub samples: usize,
}

fn max_min_ratio(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(0.0, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    if max == 0.0 {
        1.0
    } else {
        max / min
    }
}

/// Difference-quotient norms over `deltas` on the fixed 64×64 probe grid. Probe
/// points are kept only if every translate lies in the discrete domain.
pub fn dq_boundedness(sol: &StokesSolution, deltas: &[f64], oracle: Option<&dyn Oracle>) -> Result<DqReport> {
    let mesh = sol.u.space.mesh();
    let dom = mesh.domain();
    if deltas.iter().any(|&d| !(d > 0.0 && d <= dom.tau() / 4.0)) {
        return Err(Error::Incompatible("quotient steps must lie in (0, tau/4]".into()));
    }
    let probe = FieldProbe::new(mesh);
    let (grid, cell) = probe_grid(dom, 64);
    let points: Vec<Point> = grid
        .into_iter()
        .filter(|&p| {
            probe.locate(p).is_some() && deltas.iter().all(|&d| probe.locate(p + Point::new(0.0, d)).is_some())
        })
        .collect();
    let norm = |v: &[Option<Vec<f64>>]| -> f64 {
        v.iter().flatten().map(|x| x.iter().map(|y| y * y).sum::<f64>()).sum::<f64>().sqrt() * cell.sqrt()
    };
    let mut rep = DqReport { deltas: deltas.to_vec(), samples: points.len(), ..Default::default() };
    for &delta in deltas {
        let gu = difference_quotient(&probe, sol, &points, delta, QuotientComponent::VelocityGradient);
        let dp = difference_quotient(&probe, sol, &points, delta, QuotientComponent::Pressure);
        rep.grad_u_norms.push(norm(&gu));
        rep.p_norms.push(norm(&dp));
        if let Some(o) = oracle {
            let du = difference_quotient(&probe, sol, &points, delta, QuotientComponent::Velocity);
            let (mut eu, mut ep) = (0.0, 0.0);
            for (k, &p) in points.iter().enumerate() {
                if let (Some(u), Some(q)) = (&du[k], &dp[k]) {
                    let ex = o.velocity_dx2(p);
                    eu += (u[0] - ex.x).powi(2) + (u[1] - ex.y).powi(2);
                    ep += (q[0] - o.pressure_dx2(p)).powi(2);
                }
            }
            rep.oracle_error_u.push((eu * cell).sqrt());
            rep.oracle_error_p.push((ep * cell).sqrt());
        }
    }
    rep.ratio_u = max_min_ratio(&rep.grad_u_norms);
    rep.ratio_p = max_min_ratio(&rep.p_norms);
    Ok(rep)
}

/// Traces across `Γ_0`/`Γ_1`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PeriodicityReport {
    /// `‖u|Γ_1 − u|Γ_0‖` from the edge dofs.
    pub u_mismatch: f64,
    pub p_mismatch: f64,
    /// `‖∂u/∂n|Γ_0 + ∂u/∂n|Γ_1‖` with outward normals (one-sided element traces).
    pub dudn_mismatch: f64,
}

pub fn periodicity_report(sol: &StokesSolution) -> PeriodicityReport {
    let space = &sol.u.space;
    let mesh = space.mesh();
    let layout = space.layout();
    let geo = crate::femspace::boundary_edge_geometry(mesh);
    let partner: std::collections::BTreeMap<usize, usize> =
        mesh.periodic_pairs().iter().map(|&(a, b)| (a, b)).collect();
    let gl = gauss_legendre01(5);
    let (mut su, mut sp, mut sd) = (0.0, 0.0, 0.0);
    let coef = |n: usize| {
        let k = space.nodes().dof(n);
        Point::new(sol.u.coeffs[2 * k], sol.u.coeffs[2 * k + 1])
    };
    for e in mesh.boundary_edges() {
        if e.tag != SegmentTag::Per0 {
            continue;
        }
        let [a0, b0] = e.v;
        let (a1, b1) = (partner[&a0], partner[&b0]);
        let m0 = layout.edge_node(a0, b0).expect("edge node");
        let m1 = layout.edge_node(a1, b1).expect("partner edge node");
        let (t0, n0, len) = geo[&edge_key(a0, b0)];
        let (t1, n1, _) = geo[&edge_key(a1, b1)];
        let (aff0, aff1) = (element_affine(mesh, t0), element_affine(mesh, t1));
        let (pa0, pb0) = (mesh.vertices()[a0], mesh.vertices()[b0]);
        let (pa1, pb1) = (mesh.vertices()[a1], mesh.vertices()[b1]);
        let pd = sol.p.space.as_ref();
        for &(s, w) in &gl {
            // One-dimensional quadratic trace through the three edge nodes.
            let phi = [(1.0 - s) * (1.0 - 2.0 * s), 4.0 * s * (1.0 - s), s * (2.0 * s - 1.0)];
            let u0 = coef(a0) * phi[0] + coef(m0) * phi[1] + coef(b0) * phi[2];
            let u1 = coef(a1) * phi[0] + coef(m1) * phi[1] + coef(b1) * phi[2];
            let du = u1 - u0;
            su += w * len * du.dot(du);
            let p0 = sol.p.coeffs[pd.dof(a0)] * (1.0 - s) + sol.p.coeffs[pd.dof(b0)] * s;
            let p1 = sol.p.coeffs[pd.dof(a1)] * (1.0 - s) + sol.p.coeffs[pd.dof(b1)] * s;
            sp += w * len * (p1 - p0).powi(2);
            let x0 = pa0 + (pb0 - pa0) * s;
            let x1 = pa1 + (pb1 - pa1) * s;
            let g0 = sol.u.grad(t0, &aff0, aff0.barycentric(x0));
            let g1 = sol.u.grad(t1, &aff1, aff1.barycentric(x1));
            let dn = |g: [[f64; 2]; 2], n: Point| Point::new(g[0][0] * n.x + g[0][1] * n.y, g[1][0] * n.x + g[1][1] * n.y);
            let r = dn(g0, n0) + dn(g1, n1);
            sd += w * len * r.dot(r);
        }
    }
    PeriodicityReport { u_mismatch: su.sqrt(), p_mismatch: sp.sqrt(), dudn_mismatch: sd.sqrt() }
}

/// How data reach the shifted window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShiftMode {
    /// `𝔽` and `g_*` are transported from the original window node by node.
    Matching,
    /// Lifting and tensor representation are rebuilt on the shifted window.
    Independent,
}

#[derive(Clone, Debug)]
pub struct ShiftReport {
    pub delta: f64,
    /// `‖u_h^δ − u_h ∘ wrap‖_{L²(Ω^δ)}`.
    pub mismatch: f64,
    pub p_mismatch: f64,
    pub reference_norm: f64,
}

/// Solves on the window shifted by `delta` (zero, or the cut offset of `mesh`) and
/// compares with the solution on the original window. `base` reuses an existing
/// solution on `mesh`.
pub fn shift_equivalence(
    mesh: &Mesh,
    data: &ProblemData,
    cfg: &SolverConfig,
    delta: f64,
    mode: ShiftMode,
    base: Option<&FullSolution>,
) -> Result<ShiftReport> {
    let dom = mesh.domain().clone();
    let owned;
    let base = match base {
        Some(b) => b,
        None => {
            owned = solve_problem(&Discretization::new(mesh.clone()), data, cfg)?;
            &owned
        }
    };
    if delta == 0.0 {
        // The window is unchanged: a fresh solve must reproduce the coefficients.
        let again = solve_problem(&Discretization::new(mesh.clone()), data, cfg)?.solution;
        let bu = &base.solution;
        return Ok(ShiftReport {
            delta,
            mismatch: again.u.sub(&bu.u).l2_norm(),
            p_mismatch: ScalarField {
                space: again.p.space.clone(),
                coeffs: again.p.coeffs.iter().zip(&bu.p.coeffs).map(|(a, b)| a - b).collect(),
            }
            .l2_norm(),
            reference_norm: bu.u.l2_norm(),
        });
    }
    let shifted = Discretization::new(mesh.shift_window(&dom, delta)?);
    let probe = FieldProbe::new(base.solution.u.space.mesh());

    let sol = match mode {
        ShiftMode::Matching => {
            let g_star = VectorField::from_fn(shifted.vspace.clone(), &|p| {
                probe.velocity(&base.lifting.g_star, p).unwrap_or(Point::new(f64::NAN, f64::NAN))
            });
            let tensor = TensorField::from_fn(shifted.vspace.clone(), &|p| {
                probe.tensor(&base.tensor.tensor, p).unwrap_or([[f64::NAN; 2]; 2])
            });
            let lost = g_star.coeffs.iter().chain(tensor.coeffs.iter().flatten()).any(|x| x.is_nan());
            if lost {
                return Err(Error::Incompatible("transfer to the shifted window left nodes unlocated".into()));
            }
            solve_weak(&shifted.vspace, &shifted.pspace, &tensor, &g_star, cfg)?
        }
        ShiftMode::Independent => solve_problem(&shifted, &absolute_data(data, &dom), cfg)?.solution,
    };

    let bu = &base.solution;
    let mut unlocated = 0usize;
    let sq = integrate_mesh(&shifted.mesh, |t, _, l, x| match probe.velocity(&bu.u, x) {
        Some(v) => {
            let e = sol.u.eval(t, l) - v;
            e.dot(e)
        }
        None => {
            unlocated += 1;
            0.0
        }
    });
    if unlocated > 0 {
        return Err(Error::Incompatible(format!("{unlocated} quadrature points of the shifted window not located")));
    }
    let sq_p = integrate_mesh(&shifted.mesh, |t, _, l, x| {
        probe.pressure(&bu.p, x).map_or(0.0, |q| (sol.p.eval(t, l) - q).powi(2))
    });
    Ok(ShiftReport { delta, mismatch: sq.sqrt(), p_mismatch: sq_p.sqrt(), reference_norm: bu.u.l2_norm() })
}

/// Data with the catalog phase pinned to the original window, so that they are
/// the same functions of absolute `x2` on any shifted window.
fn absolute_data(data: &ProblemData, dom: &CascadeDomain) -> ProblemData {
    let (a02, b02, tau) = (dom.a02(), dom.b02(), dom.tau());
    let g = data.g.clone();
    let f = data.f.clone();
    let h = data.h.clone();
    let d2 = dom.clone();
    ProblemData {
        g: InflowData::Custom { name: "absolute".into(), eval: Arc::new(move |x2| g.eval(x2, a02, tau)) },
        f: BodyForce::Custom { name: "absolute".into(), eval: Arc::new(move |p| f.eval(d2.wrap(p))) },
        h: OutflowTrace::Custom { name: "absolute".into(), eval: Arc::new(move |x2| h.eval(x2, b02, tau)) },
    }
}

/// Strong-form residuals and trace mismatches of a solution.
#[derive(Clone, Debug, Default)]
pub struct MembershipReport {
    /// Broken `‖−νΔu_h + ∇p_h − div 𝔽_h‖`.
    pub interior_residual: f64,
    /// Broken `‖div u_h‖`.
    pub divergence: f64,
    /// `‖u_h − g‖_{L²(Γ_in)}`.
    pub inflow_trace: f64,
    /// Largest nodal `|u_h|` on `Γ_p`.
    pub profile_trace: f64,
    pub outflow_residual: f64,
    pub periodicity: PeriodicityReport,
}

pub fn space_membership_report(full: &FullSolution, data: &ProblemData, nu: f64) -> MembershipReport {
    let sol = &full.solution;
    let tf = &full.tensor.tensor;
    let mesh = sol.u.space.mesh();
    let interior = integrate_mesh(mesh, |t, aff, l, _| {
        let h = sol.u.hessian(t, aff);
        let lap = Point::new(h[0][0] + h[0][2], h[1][0] + h[1][2]);
        let r = lap * (-nu) + sol.p.grad(t, aff) - tf.divergence(t, aff, l);
        r.dot(r)
    });
    let div = integrate_mesh(mesh, |t, aff, l, _| {
        let g = sol.u.grad(t, aff, l);
        (g[0][0] + g[1][1]).powi(2)
    });
    MembershipReport {
        interior_residual: interior.sqrt(),
        divergence: div.sqrt(),
        inflow_trace: inflow_trace_error(&sol.u, &data.g),
        profile_trace: max_nodal_on(&sol.u, SegmentTag::Profile),
        outflow_residual: outflow_residual(sol, &data.h, nu),
        periodicity: periodicity_report(sol),
    }
}

/// `‖u − g‖_{L²(Γ_in)}` by five-point Gauss quadrature per edge.
pub fn inflow_trace_error(u: &VectorField, g: &InflowData) -> f64 {
    let mesh = u.space.mesh();
    let dom = mesh.domain();
    let geo = crate::femspace::boundary_edge_geometry(mesh);
    let gl = gauss_legendre01(5);
    let mut s = 0.0;
    for e in mesh.boundary_edges() {
        if e.tag != SegmentTag::In {
            continue;
        }
        let (t, _, len) = geo[&edge_key(e.v[0], e.v[1])];
        let aff = element_affine(mesh, t);
        let (pa, pb) = (mesh.vertices()[e.v[0]], mesh.vertices()[e.v[1]]);
        for &(x, w) in &gl {
            let p = pa + (pb - pa) * x;
            let r = u.eval(t, aff.barycentric(p)) - g.value(p.y, dom.a02(), dom.tau());
            s += w * len * r.dot(r);
        }
    }
    s.sqrt()
}

/// Largest nodal magnitude of `u` on nodes carrying `tag`.
pub fn max_nodal_on(u: &VectorField, tag: SegmentTag) -> f64 {
    let layout = u.space.layout();
    let tags = layout.node_tags();
    (0..layout.num_nodes())
        .filter(|&n| tags[n].contains(&tag))
        .map(|n| {
            let k = u.space.nodes().dof(n);
            Point::new(u.coeffs[2 * k], u.coeffs[2 * k + 1]).norm()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_mesh;
    use std::f64::consts::PI;

    #[test]
    fn fitted_order_of_a_power_law() {
        let h = [0.4, 0.2, 0.1, 0.05];
        let e: Vec<f64> = h.iter().map(|h| 3.0 * h * h * h).collect();
        assert!((fit_order(&h, &e) - 3.0).abs() < 1e-12);
        assert!(pairwise_orders(&h, &e).iter().all(|o| (o - 3.0).abs() < 1e-12));
    }

    #[test]
    fn quotient_examples() {
        let pts = [Point::new(0.3, 0.1), Point::new(1.2, 0.6)];
        let d = 1.0 / 8.0;
        let c = quotient(|_| Some(vec![2.5]), &pts, d);
        assert!(c.iter().all(|v| v.as_ref().unwrap()[0] == 0.0));
        let s = |p: Point| (2.0 * PI * p.y).sin();
        let q = quotient(|p| Some(vec![s(p)]), &pts, d);
        for (p, v) in pts.iter().zip(&q) {
            assert_eq!(v.as_ref().unwrap()[0], (s(*p + Point::new(0.0, d)) - s(*p)) / d);
        }
        let lin = quotient(|p| Some(vec![3.0 * p.y - p.x]), &pts, d);
        assert!(lin.iter().all(|v| (v.as_ref().unwrap()[0] - 3.0).abs() < 1e-13));
        assert!(quotient(|p| (p.y < 0.5).then(|| vec![1.0]), &pts, d)[1].is_none());
    }

    #[test]
    fn constant_flow_has_zero_quotients() {
        let case = ConvergenceCase::ConstantFlow;
        let disc = Discretization::new(case.meshes(1).unwrap().remove(0));
        let cfg = SolverConfig::default();
        let full = solve_problem(&disc, &case.data(), &cfg).unwrap();
        let rep = dq_boundedness(&full.solution, &default_deltas(1.0), None).unwrap();
        assert!(rep.grad_u_norms.iter().chain(&rep.p_norms).all(|&n| n < 1e-9));
        assert_eq!(rep.samples, 64 * 64);
        assert!(dq_boundedness(&full.solution, &[0.5], None).is_err());
    }

    #[test]
    fn zero_shift_is_exact_and_channel_shift_is_a_permutation() {
        let case = ConvergenceCase::ConstantFlow;
        let mesh = case.meshes(1).unwrap().remove(0);
        let data = ProblemData {
            g: InflowData::Fourier { mode: 1, amp1: 0.0, amp2: 1.0 },
            f: BodyForce::Fourier { mode: 1, amp1: 1.0, amp2: 0.5, tau: 1.0 },
            h: OutflowTrace::Constant { h1: 0.2, h2: 0.0 },
        };
        let cfg = SolverConfig::default();
        let zero = shift_equivalence(&mesh, &data, &cfg, 0.0, ShiftMode::Matching, None).unwrap();
        assert_eq!(zero.mismatch, 0.0);
        let half = shift_equivalence(&mesh, &data, &cfg, 0.5, ShiftMode::Matching, None).unwrap();
        assert!(half.mismatch < 1e-9, "{}", half.mismatch);
        assert!(half.reference_norm > 0.1);
        assert!(shift_equivalence(&mesh, &data, &cfg, 0.25, ShiftMode::Matching, None).is_err());
    }

    #[test]
    fn constant_flow_membership_report_is_clean() {
        let disc = Discretization::new(generate_mesh(&CascadeDomain::channel(1.0, 1.0), 0.25).unwrap());
        let data = ConvergenceCase::ConstantFlow.data();
        let full = solve_problem(&disc, &data, &SolverConfig::default()).unwrap();
        let r = space_membership_report(&full, &data, 1.0);
        for v in [r.interior_residual, r.divergence, r.inflow_trace, r.profile_trace, r.outflow_residual] {
            assert!(v < 1e-9, "{r:?}");
        }
        assert_eq!(r.periodicity.u_mismatch, 0.0);
    }

    #[test]
    fn csv_has_version_and_header() {
        let row = ConvergenceRow {
            case: "x".into(),
            level: 0,
            h_max: 0.1,
            errors: ErrorNorms::default(),
            outflow_res: 0.0,
            flux_res: 0.0,
            dq_ratio_u: 1.0,
            dq_ratio_p: 1.0,
            shift_mismatch: 0.0,
            pressure_ratio: 0.0,
            periodicity: PeriodicityReport::default(),
            interior_residual: 0.0,
            dq: DqReport::default(),
        };
        let mut out = Vec::new();
        write_csv(&[row], &mut out).unwrap();
        let s = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], CSV_VERSION);
        assert_eq!(lines[1], CSV_HEADER);
        assert_eq!(lines[2].split(',').count(), CSV_HEADER.split(',').count());
    }
}
