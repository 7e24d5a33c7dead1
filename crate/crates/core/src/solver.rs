//! Discrete weak formulation: assembly of the saddle system, linear solve and
//! reconstruction `u = v + g_*`, `p = −π`.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::data::{BodyForce, InflowData, OutflowTrace};
use crate::element::gauss_legendre01;
use crate::error::{Error, Result};
use crate::femspace::{
    apply_constraints, assemble_divergence, assemble_functional_f, assemble_functional_g, assemble_stiffness,
    boundary_edge_geometry, element_affine, outflow_flux_functional, ConstrainedSystem, P2Layout,
    PressureSpace, SaddleSystem, ScalarField, VectorField, VelocitySpace,
};
use crate::geometry::{Point, SegmentTag};
use crate::lifting::{lift_inflow, LiftingResult};
use crate::linsolve::{minres, residual, solve_direct, BlockDiagonal};
use crate::mesh::{edge_key, Mesh};
use crate::sparse::norm2;
use crate::tensorfield::{build_tensor, RightInverse, RightInverseKind, TensorBuild, TensorField};

#[derive(Clone, Debug, PartialEq)]
pub enum Backend {
    Direct,
    Minres { tol: f64, max_iter: usize },
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub nu: f64,
    pub backend: Backend,
    /// Check `∫_{Γ_out} u·n = Φ_h` after the solve. The identity follows from
    /// testing the discrete divergence with the constant pressure, so it is
    /// verified rather than imposed (imposing it would make the system singular).
    pub check_outflow_flux: bool,
    pub right_inverse: RightInverseKind,
    pub delta_in: Option<f64>,
    pub delta_out: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            nu: 1.0,
            backend: Backend::Direct,
            check_outflow_flux: false,
            right_inverse: RightInverseKind::FreeInflow,
            delta_in: None,
            delta_out: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SolveStats {
    pub unknowns: usize,
    pub iterations: usize,
    /// Relative residual of the constrained system.
    pub residual: f64,
}

/// Solves a constrained saddle system with the requested backend.
pub fn solve_constrained(cs: &ConstrainedSystem, backend: &Backend) -> Result<(Vec<f64>, SolveStats)> {
    let n = cs.matrix.rows();
    let bnorm = norm2(&cs.rhs);
    match *backend {
        Backend::Direct => {
            let x = solve_direct(&cs.matrix, &cs.rhs)?;
            let r = residual(&cs.matrix, &x, &cs.rhs) / bnorm.max(1e-300);
            Ok((x, SolveStats { unknowns: n, iterations: 1, residual: r }))
        }
        Backend::Minres { tol, max_iter } => {
            let diag: Vec<f64> = vec![1.0; cs.np + cs.nb];
            let pc = BlockDiagonal::new(&cs.a_block, &pressure_scaling(cs, &diag))?;
            let (x, st) = minres(&cs.matrix, &cs.rhs, &pc, tol, max_iter)?;
            Ok((x, SolveStats { unknowns: n, iterations: st.iterations, residual: st.residual }))
        }
    }
}

/// Diagonal of the pressure Schur complement surrogate: row sums of `|B|`
/// squared over the velocity diagonal (a lumped `B diag(A)⁻¹ Bᵀ`).
fn pressure_scaling(cs: &ConstrainedSystem, fallback: &[f64]) -> Vec<f64> {
    let ad = cs.a_block.diagonal();
    let mut s = fallback.to_vec();
    for (k, sk) in s.iter_mut().enumerate() {
        let row = cs.nv + k;
        let v: f64 = cs
            .matrix
            .row(row)
            .filter(|&(j, _)| j < cs.nv)
            .map(|(j, b)| b * b / ad[j].max(1e-300))
            .sum();
        if v > 0.0 {
            *sk = v;
        }
    }
    s
}

/// Eliminates `dirichlet` and solves; returns the full unknown vector.
pub fn solve_saddle(
    sys: &SaddleSystem,
    dirichlet: &BTreeMap<usize, f64>,
    backend: &Backend,
) -> Result<Vec<f64>> {
    let cs = apply_constraints(sys, dirichlet)?;
    Ok(solve_constrained(&cs, backend)?.0)
}

#[derive(Clone, Debug)]
pub struct StokesSolution {
    pub u: VectorField,
    pub p: ScalarField,
    /// Homogeneous part `v = u − g_*`.
    pub v: VectorField,
    pub stats: SolveStats,
}

/// Finds `v`, vanishing on `Γ_in ∪ Γ_p`, and `π` with
/// `ν(∇v, ∇φ) + (π, div φ) = −(𝔽, ∇φ) − ν(∇g_*, ∇φ)` and
/// `(q, div v) = −(q, div g_*)`; returns `u = v + g_*`, `p = −π`.
pub fn solve_weak(
    vspace: &Arc<VelocitySpace>,
    pspace: &Arc<PressureSpace>,
    tensor: &TensorField,
    g_star: &VectorField,
    cfg: &SolverConfig,
) -> Result<StokesSolution> {
    if !(cfg.nu > 0.0) {
        return Err(Error::Incompatible(format!("viscosity must be positive, got {}", cfg.nu)));
    }
    let a = assemble_stiffness(vspace, cfg.nu);
    let b = assemble_divergence(vspace, pspace);
    let f = assemble_functional_f(vspace, &|t, l| tensor.eval(t, l));
    let ag = a.matvec(&g_star.coeffs);
    let rhs_v: Vec<f64> = f.iter().zip(&ag).map(|(fi, gi)| fi - gi).collect();
    let rhs_p: Vec<f64> = b.matvec(&g_star.coeffs).into_iter().map(|x| -x).collect();
    let nv = a.rows();
    let dirichlet: BTreeMap<usize, f64> =
        vspace.dirichlet_dofs().into_iter().map(|k| (k, 0.0)).collect();
    let sys = SaddleSystem { a, b, rhs_v, rhs_p, borders: Vec::new() };
    let cs = apply_constraints(&sys, &dirichlet)?;
    let (x, stats) = solve_constrained(&cs, &cfg.backend)?;
    let v = VectorField { space: vspace.clone(), coeffs: x[..nv].to_vec() };
    let p = ScalarField { space: pspace.clone(), coeffs: x[nv..nv + cs.np].iter().map(|x| -x).collect() };
    let u = v.add(g_star);
    Ok(StokesSolution { u, p, v, stats })
}

/// Data of one boundary-value problem.
#[derive(Clone, Debug)]
pub struct ProblemData {
    pub g: InflowData,
    pub f: BodyForce,
    pub h: OutflowTrace,
}

impl ProblemData {
    pub fn zero() -> Self {
        Self { g: InflowData::zero(), f: BodyForce::Zero, h: OutflowTrace::Zero }
    }
}

/// Mesh with its Taylor–Hood spaces.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub mesh: Arc<Mesh>,
    pub layout: Arc<P2Layout>,
    pub vspace: Arc<VelocitySpace>,
    pub pspace: Arc<PressureSpace>,
}

impl Discretization {
    pub fn new(mesh: Mesh) -> Self {
        let mesh = Arc::new(mesh);
        let layout = Arc::new(P2Layout::new(mesh.clone()));
        let vspace = Arc::new(VelocitySpace::new(layout.clone()));
        let pspace = Arc::new(PressureSpace::new(mesh.clone()));
        Self { mesh, layout, vspace, pspace }
    }
}

#[derive(Clone, Debug)]
pub struct FullSolution {
    pub solution: StokesSolution,
    pub lifting: LiftingResult,
    pub tensor: TensorBuild,
}

/// Lifting, tensor representation and weak solve in one call.
pub fn solve_problem(disc: &Discretization, data: &ProblemData, cfg: &SolverConfig) -> Result<FullSolution> {
    let deltas = match (cfg.delta_in, cfg.delta_out) {
        (None, None) => None,
        (i, o) => {
            let dom = disc.mesh.domain();
            Some((i.unwrap_or(dom.default_inflow_delta()), o.unwrap_or(dom.default_outflow_delta())))
        }
    };
    let lifting = lift_inflow(&disc.vspace, &disc.pspace, &data.g, deltas, &cfg.backend)?;
    let ri = RightInverse::new(&disc.layout, cfg.right_inverse)?;
    let tensor = build_tensor(&disc.vspace, &data.f, &data.h, cfg.delta_out, &ri)?;
    let solution = solve_weak(&disc.vspace, &disc.pspace, &tensor.tensor, &lifting.g_star, cfg)?;
    if cfg.check_outflow_flux {
        let flux = outflow_flux(&solution.u);
        let tol = 1e-8 * (1.0 + lifting.flux.abs());
        if (flux - lifting.flux).abs() > tol {
            return Err(Error::Incompatible(format!(
                "outflow flux {flux:e} differs from inflow flux {:e}",
                lifting.flux
            )));
        }
    }
    Ok(FullSolution { solution, lifting, tensor })
}

/// `∫_{Γ_out} u · n`.
pub fn outflow_flux(u: &VectorField) -> f64 {
    let c = outflow_flux_functional(&u.space);
    c.iter().zip(&u.coeffs).map(|(a, b)| a * b).sum()
}

/// `‖ν ∂_n u − p n + h‖_{L²(Γ_out)}`: the residual of the natural outflow condition.
pub fn outflow_residual(sol: &StokesSolution, h: &OutflowTrace, nu: f64) -> f64 {
    let mesh = sol.u.space.mesh();
    let dom = mesh.domain();
    let geo = boundary_edge_geometry(mesh);
    let gl = gauss_legendre01(5);
    let mut s = 0.0;
    for e in mesh.boundary_edges() {
        if e.tag != SegmentTag::Out {
            continue;
        }
        let (t, n, len) = geo[&edge_key(e.v[0], e.v[1])];
        let aff = element_affine(mesh, t);
        let (pa, pb) = (mesh.vertices()[e.v[0]], mesh.vertices()[e.v[1]]);
        for &(x, w) in &gl {
            let pt = pa + (pb - pa) * x;
            let l = aff.barycentric(pt);
            let g = sol.u.grad(t, &aff, l);
            let p = sol.p.eval(t, l);
            let dn = Point::new(g[0][0] * n.x + g[0][1] * n.y, g[1][0] * n.x + g[1][1] * n.y);
            let r = dn * nu - n * p + h.eval(pt.y, dom.b02(), dom.tau());
            s += w * len * r.dot(r);
        }
    }
    s.sqrt()
}

/// `(ν‖∇v‖², ⟨F, v⟩ + ν⟨G, v⟩)`; equal when `g_*` is discretely divergence-free.
pub fn energy_balance(sol: &StokesSolution, tensor: &TensorField, nu: f64) -> (f64, f64) {
    let space = &sol.v.space;
    let g_star = sol.u.sub(&sol.v);
    let f = assemble_functional_f(space, &|t, l| tensor.eval(t, l));
    let g = assemble_functional_g(space, &g_star, nu);
    let v = &sol.v.coeffs;
    let lhs = nu * sol.v.h1_seminorm().powi(2);
    let rhs = f.iter().zip(&g).zip(v).map(|((a, b), x)| (a + b) * x).sum();
    (lhs, rhs)
}

/// `‖p‖ / (‖∇u‖ + ‖𝔽‖)`.
pub fn pressure_ratio(sol: &StokesSolution, tensor: &TensorField) -> f64 {
    let den = sol.u.h1_seminorm() + tensor.l2_norm();
    if den == 0.0 {
        0.0
    } else {
        sol.p.l2_norm() / den
    }
}
