//! Cutoff functions, polynomial trace extensions and the discretely
//! divergence-free lifting of the inflow datum.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::data::{integrate, InflowData};
use crate::error::{Error, Result};
use crate::femspace::{
    assemble_divergence, assemble_stiffness, p1_dual_norm, pressure_weights, Border, NodeSpace,
    PressureSpace, SaddleSystem, VectorField, VelocitySpace,
};
use crate::geometry::{CascadeDomain, Point, SegmentTag};
use crate::solver::{solve_saddle, Backend};

/// `S5(t) = 10t³ − 15t⁴ + 6t⁵` on `[0, 1]`, clamped outside; value and derivative.
pub fn smoothstep5(t: f64) -> (f64, f64) {
    if t <= 0.0 {
        (0.0, 0.0)
    } else if t >= 1.0 {
        (1.0, 0.0)
    } else {
        let t2 = t * t;
        (t2 * t * (10.0 - 15.0 * t + 6.0 * t2), 30.0 * t2 * (1.0 - t) * (1.0 - t))
    }
}

/// `S7(t) = 35t⁴ − 84t⁵ + 70t⁶ − 20t⁷`, clamped outside; value and derivative.
pub fn smoothstep7(t: f64) -> (f64, f64) {
    if t <= 0.0 {
        (0.0, 0.0)
    } else if t >= 1.0 {
        (1.0, 0.0)
    } else {
        let t3 = t * t * t;
        let v = t3 * t * (35.0 + t * (-84.0 + t * (70.0 - 20.0 * t)));
        let s = 1.0 - t;
        (v, 140.0 * t3 * s * s * s)
    }
}

/// Cutoff in the distance `r ≥ 0` from a boundary: `1` for `r ≤ δ/2`, `0` for
/// `r ≥ δ`, with a C³ transition. Returns value and `d/dr`.
pub fn cutoff(r: f64, delta: f64) -> (f64, f64) {
    let h = 0.5 * delta;
    let (s, ds) = smoothstep7((r - h) / h);
    (1.0 - s, -ds / h)
}

/// Which end of the period a trace lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    In,
    Out,
}

/// A trace `x2 ↦ (value, d/dx2)`.
pub type Trace = Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>;

/// `ψ(x) = η(x1) Σ_k g_k(x2) s^k / k!` with `s = x1 − x0` the signed distance to
/// `Γ_in` (`x0 = 0`) or `Γ_out` (`x0 = d`), so that `∂1^k ψ = g_k` there.
#[derive(Clone)]
pub struct TraceExtension {
    side: Side,
    x0: f64,
    delta: f64,
    traces: Vec<Trace>,
}

impl TraceExtension {
    pub fn new(dom: &CascadeDomain, side: Side, delta: f64, traces: Vec<Trace>) -> Result<Self> {
        let d = dom.d();
        if !(delta > 0.0 && delta < d) {
            return Err(Error::StripHitsProfile(format!("strip width {delta} outside (0, {d})")));
        }
        if let Some((lo, hi)) = dom.profile().bounds() {
            let hits = match side {
                Side::In => lo.x <= delta,
                Side::Out => hi.x >= d - delta,
            };
            if hits {
                return Err(Error::StripHitsProfile(format!(
                    "{side:?} strip of width {delta} reaches the profile (x1 in [{:.4}, {:.4}])",
                    lo.x, hi.x
                )));
            }
        }
        let x0 = if side == Side::In { 0.0 } else { d };
        Ok(Self { side, x0, delta, traces })
    }

    /// Value and gradient.
    pub fn eval(&self, p: Point) -> (f64, Point) {
        let s = p.x - self.x0;
        let (eta, deta_dr) = cutoff(s.abs(), self.delta);
        if eta == 0.0 {
            return (0.0, Point::default());
        }
        let deta = match self.side {
            Side::In => deta_dr,
            Side::Out => -deta_dr,
        };
        let (mut v, mut d1, mut d2) = (0.0, 0.0, 0.0);
        let mut pow = 1.0; // s^k / k!
        let mut pow_prev = 0.0; // s^(k-1) / (k-1)!
        for (k, g) in self.traces.iter().enumerate() {
            let (gv, gd) = g(p.y);
            v += gv * pow;
            d2 += gd * pow;
            d1 += gv * pow_prev;
            pow_prev = pow;
            pow *= s / (k + 1) as f64;
        }
        (eta * v, Point::new(deta * v + eta * d1, eta * d2))
    }

    /// Coefficients of the quadratic nodal interpolant.
    pub fn interpolate(&self, nodes: &NodeSpace) -> Vec<f64> {
        nodes.interpolate(&|p| self.eval(p).0)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// Convenience constructor mirroring the operator notation.
pub fn trace_extension(
    dom: &CascadeDomain,
    traces: Vec<Trace>,
    side: Side,
    delta: f64,
) -> Result<TraceExtension> {
    TraceExtension::new(dom, side, delta, traces)
}

/// `∫_{a}^{y} f` for `y` reduced into `[a, a + τ)`.
pub(crate) fn periodic_primitive(a: f64, tau: f64, y: f64, f: &dyn Fn(f64) -> f64) -> f64 {
    let y = a + (y - a).rem_euclid(tau);
    let panels = ((64.0 * (y - a) / tau).ceil() as usize).max(1);
    integrate(a, y, panels, |x| Point::new(f(x), 0.0)).x
}

#[derive(Clone, Debug)]
pub struct LiftingResult {
    /// Discretely divergence-free lifting `g_*`.
    pub g_star: VectorField,
    /// Stream-function part `∇⊥ψ` before the correction solve.
    pub stream_part: VectorField,
    /// Discrete inflow flux `∫_{Γ_in} I_h g1`.
    pub flux: f64,
    /// Exact mean `τ⁻¹ ∫ g1`.
    pub mean: f64,
    pub delta_in: f64,
    pub delta_out: f64,
    /// `‖B g_*‖` in the dual P1 norm.
    pub divergence_residual: f64,
}

/// Discrete inflow flux `∫_{Γ_in} I_h g · e1` (Simpson on each edge is exact).
pub fn discrete_inflow_flux(space: &VelocitySpace, g: &InflowData) -> f64 {
    let mesh = space.mesh();
    let dom = mesh.domain();
    let (a02, tau) = (dom.a02(), dom.tau());
    let mut phi = 0.0;
    for e in mesh.boundary_edges() {
        if e.tag != SegmentTag::In {
            continue;
        }
        let (pa, pb) = (mesh.vertices()[e.v[0]], mesh.vertices()[e.v[1]]);
        let len = pa.dist(pb);
        let gm = g.value(pa.midpoint(pb).y, a02, tau).x;
        phi += len * (g.value(pa.y, a02, tau).x + 4.0 * gm + g.value(pb.y, a02, tau).x) / 6.0;
    }
    phi
}

/// Builds `g_*` with `g_*|Γ_in = I_h g`, `g_*|Γ_p = 0`, `g_* = (Φ_h/τ) e1` on
/// `x1 ≥ d − δ_out` and `B g_* = 0`.
///
/// The stream function `ψ = η_in(x1)(G0(x2) − x1 g2(x2))`, `G0' = g1 − ḡ1`,
/// carries the oscillating part of `g`; an auxiliary Stokes solve with those
/// boundary values adds the plug flow and removes the discrete divergence.
pub fn lift_inflow(
    space: &Arc<VelocitySpace>,
    pspace: &Arc<PressureSpace>,
    g: &InflowData,
    deltas: Option<(f64, f64)>,
    backend: &Backend,
) -> Result<LiftingResult> {
    let mesh = space.mesh();
    let dom = mesh.domain();
    let (d, a02, tau) = (dom.d(), dom.a02(), dom.tau());
    if !g.is_periodic(a02, tau) {
        return Err(Error::Incompatible(format!("inflow datum {g:?} is not tau-periodic")));
    }
    let (delta_in, delta_out) =
        deltas.unwrap_or((dom.default_inflow_delta(), dom.default_outflow_delta()));
    if delta_in + delta_out >= d {
        return Err(Error::StripHitsProfile(format!(
            "inflow and outflow strips overlap ({delta_in} + {delta_out} >= {d})"
        )));
    }
    let mean =
        integrate(a02, a02 + tau, 64, |x| Point::new(g.value(x, a02, tau).x, 0.0)).x / tau;

    let g0 = {
        let g = g.clone();
        let g_for_prim = g.clone();
        Arc::new(move |x2: f64| {
            let prim = periodic_primitive(a02, tau, x2, &|x| g_for_prim.value(x, a02, tau).x - mean);
            (prim, g.value(x2, a02, tau).x - mean)
        }) as Trace
    };
    let g1 = {
        let g = g.clone();
        Arc::new(move |x2: f64| {
            let [v, dv] = g.eval(x2, a02, tau);
            (-v.y, -dv.y)
        }) as Trace
    };
    let psi = TraceExtension::new(dom, Side::In, delta_in, vec![g0, g1])?;
    let stream_part = VectorField::from_fn(space.clone(), &|p| {
        let (_, grad) = psi.eval(p);
        Point::new(grad.y, -grad.x)
    });

    let flux = discrete_inflow_flux(space, g);
    let plug = Point::new(flux / tau, 0.0);
    let strip = d - delta_out - 1e-12;
    let aux = VelocitySpace::with_constraints(
        space.layout().clone(),
        true,
        &[SegmentTag::In, SegmentTag::Profile],
        &|p| p.x >= strip,
    );
    let tags = space.layout().node_tags();
    let mut dirichlet = BTreeMap::new();
    for k in 0..aux.nodes().num_dofs() {
        if !aux.nodes().is_dirichlet(k) {
            continue;
        }
        let n = aux.nodes().node_of(k);
        let p = space.layout().node_point(n);
        let target = if tags[n].contains(&SegmentTag::In) {
            g.value(p.y, a02, tau)
        } else if tags[n].contains(&SegmentTag::Profile) {
            Point::default()
        } else {
            plug
        };
        dirichlet.insert(2 * k, target.x - stream_part.coeffs[2 * k]);
        dirichlet.insert(2 * k + 1, target.y - stream_part.coeffs[2 * k + 1]);
    }

    let a = assemble_stiffness(&aux, 1.0);
    let b = assemble_divergence(&aux, pspace);
    let trivial = stream_part.coeffs.iter().all(|&c| c == 0.0) && dirichlet.values().all(|&v| v == 0.0);
    let g_star = if trivial {
        stream_part.clone()
    } else {
        let rhs_v: Vec<f64> = a.matvec(&stream_part.coeffs).into_iter().map(|x| -x).collect();
        let rhs_p: Vec<f64> = b.matvec(&stream_part.coeffs).into_iter().map(|x| -x).collect();
        let nv = a.rows();
        let w = pressure_weights(pspace);
        let border =
            Border { coeffs: w.iter().enumerate().map(|(q, &c)| (nv + q, c)).collect(), value: 0.0 };
        let sys = SaddleSystem { a, b: b.clone(), rhs_v, rhs_p, borders: vec![border] };
        let x = solve_saddle(&sys, &dirichlet, backend)
            .map_err(|e| Error::AuxSolveFailure(format!("inflow lifting: {e}")))?;
        let coeffs: Vec<f64> = stream_part.coeffs.iter().zip(&x[..nv]).map(|(s, v)| s + v).collect();
        VectorField { space: space.clone(), coeffs }
    };
    let div = b.matvec(&g_star.coeffs);
    let divergence_residual = p1_dual_norm(pspace, &div)?;
    Ok(LiftingResult {
        g_star,
        stream_part,
        flux,
        mean,
        delta_in,
        delta_out,
        divergence_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::femspace::P2Layout;
    use crate::geometry::{build_domain, PeriodicCurve, ProfileCurve};
    use crate::mesh::generate_mesh;

    fn spaces(dom: &CascadeDomain, h: f64) -> (Arc<VelocitySpace>, Arc<PressureSpace>) {
        let mesh = Arc::new(generate_mesh(dom, h).unwrap());
        let layout = Arc::new(P2Layout::new(mesh.clone()));
        (Arc::new(VelocitySpace::new(layout)), Arc::new(PressureSpace::new(mesh)))
    }

    #[test]
    fn smoothsteps_are_monotone_and_flat() {
        for k in 0..=100 {
            let t = k as f64 / 100.0;
            let (v5, d5) = smoothstep5(t);
            let (v7, d7) = smoothstep7(t);
            assert!((0.0..=1.0).contains(&v5) && d5 >= 0.0);
            assert!((0.0..=1.0).contains(&v7) && d7 >= 0.0);
        }
        assert_eq!(smoothstep7(1.0).0, 1.0);
        let e = 1e-6;
        let fd = (smoothstep7(0.3 + e).0 - smoothstep7(0.3 - e).0) / (2.0 * e);
        assert!((fd - smoothstep7(0.3).1).abs() < 1e-7);
        let fd = (cutoff(0.7 + e, 1.0).0 - cutoff(0.7 - e, 1.0).0) / (2.0 * e);
        assert!((fd - cutoff(0.7, 1.0).1).abs() < 1e-7);
    }

    #[test]
    fn trace_extension_reproduces_traces_and_normal_derivative() {
        let dom = CascadeDomain::channel(2.0, 1.0);
        let g0: Trace = Arc::new(|y: f64| (y.sin(), y.cos()));
        let g1: Trace = Arc::new(|y: f64| (y * y, 2.0 * y));
        for side in [Side::In, Side::Out] {
            let ext = TraceExtension::new(&dom, side, 0.5, vec![g0.clone(), g1.clone()]).unwrap();
            let x = if side == Side::In { 0.0 } else { 2.0 };
            for k in 0..5 {
                let y = 0.2 * k as f64;
                let (v, grad) = ext.eval(Point::new(x, y));
                assert!((v - y.sin()).abs() < 1e-14);
                assert!((grad.x - y * y).abs() < 1e-14);
                assert!((grad.y - y.cos()).abs() < 1e-14);
            }
            let far = if side == Side::In { 0.6 } else { 1.4 };
            assert_eq!(ext.eval(Point::new(far, 0.3)).0, 0.0);
            // Gradient against central differences inside the transition.
            let p = Point::new(if side == Side::In { 0.35 } else { 1.65 }, 0.4);
            let e = 1e-6;
            let fx = (ext.eval(p + Point::new(e, 0.0)).0 - ext.eval(p - Point::new(e, 0.0)).0) / (2.0 * e);
            let fy = (ext.eval(p + Point::new(0.0, e)).0 - ext.eval(p - Point::new(0.0, e)).0) / (2.0 * e);
            let (_, g) = ext.eval(p);
            assert!((g.x - fx).abs() < 1e-7 && (g.y - fy).abs() < 1e-7);
        }
    }

    #[test]
    fn strip_reaching_profile_is_rejected() {
        let dom = build_domain(
            2.0,
            1.0,
            ProfileCurve::Circle { center: Point::new(1.0, 0.5), radius: 0.2 },
            PeriodicCurve::straight(0.0, 0.0),
        )
        .unwrap();
        let t: Trace = Arc::new(|_| (0.0, 0.0));
        assert!(matches!(
            TraceExtension::new(&dom, Side::Out, 1.1, vec![t.clone()]),
            Err(Error::StripHitsProfile(_))
        ));
        assert!(TraceExtension::new(&dom, Side::Out, 0.7, vec![t]).is_ok());
    }

    #[test]
    fn constant_inflow_lifts_to_plug_flow() {
        let dom = CascadeDomain::channel(1.0, 1.0);
        let (vs, ps) = spaces(&dom, 0.25);
        let g = InflowData::Constant { g1: 1.0, g2: 0.0 };
        let r = lift_inflow(&vs, &ps, &g, None, &Backend::Direct).unwrap();
        assert!((r.flux - 1.0).abs() < 1e-14);
        for k in 0..vs.nodes().num_dofs() {
            assert!((r.g_star.coeffs[2 * k] - 1.0).abs() < 1e-10);
            assert!(r.g_star.coeffs[2 * k + 1].abs() < 1e-10);
        }
    }

    #[test]
    fn fourier_inflow_lifting_properties() {
        let dom = build_domain(
            2.0,
            1.0,
            ProfileCurve::Circle { center: Point::new(1.0, 0.5), radius: 0.2 },
            PeriodicCurve::straight(0.0, 0.0),
        )
        .unwrap();
        let (vs, ps) = spaces(&dom, 0.15);
        let g = InflowData::Fourier { mode: 1, amp1: 1.0, amp2: 0.5 };
        let r = lift_inflow(&vs, &ps, &g, None, &Backend::Direct).unwrap();
        assert!(r.divergence_residual < 1e-10, "{}", r.divergence_residual);
        assert!(r.mean.abs() < 1e-14);
        let tags = vs.layout().node_tags();
        for k in 0..vs.nodes().num_dofs() {
            let n = vs.nodes().node_of(k);
            let p = vs.layout().node_point(n);
            let v = Point::new(r.g_star.coeffs[2 * k], r.g_star.coeffs[2 * k + 1]);
            if tags[n].contains(&SegmentTag::Profile) {
                assert!(v.norm() < 1e-12);
            }
            if tags[n].contains(&SegmentTag::In) {
                assert!((v - g.value(p.y, 0.0, 1.0)).norm() < 1e-12);
            }
            if p.x >= 2.0 - r.delta_out {
                assert!((v - Point::new(r.flux, 0.0)).norm() < 1e-12);
            }
        }
    }
}
