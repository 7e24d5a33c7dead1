//! Tensor representation `𝔽` of the body force and outflow traction:
//! `div 𝔽 = f` in `Ω`, `𝔽 n = h` on `Γ_out`, `𝔽 = 0` on `Γ_p`.
//!
//! `𝔽 = 𝔽₀ + ℍ₀ + ℍ₁ + ℍ₂` where `𝔽₀` is a discrete right inverse of the
//! divergence applied to `f`, `ℍ₀` rotates gradients of stream functions carrying
//! the oscillating part of `h`, `ℍ₁ = ζ(x1) H̄` carries its mean, and `ℍ₂` removes
//! the discrete divergence of `ℍ₀ + ℍ₁`.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::data::{BodyForce, OutflowTrace};
use crate::element::{bary, gauss_legendre01, p2_values, tri_quad7, Affine};
use crate::error::{Error, Result};
use crate::femspace::{
    assemble_divergence, assemble_p1_load, assemble_pressure_mass, assemble_stiffness,
    boundary_edge_geometry, element_affine, p1_dual_norm, pressure_weights, apply_constraints,
    Border, P2Layout, PressureSpace, SaddleSystem, VectorField, VelocitySpace,
};
use crate::geometry::{Point, SegmentTag};
use crate::lifting::{periodic_primitive, smoothstep5, Side, Trace, TraceExtension};
use crate::linsolve::SparseLu;
use crate::mesh::edge_key;

pub type Tensor = [[f64; 2]; 2];

/// Continuous piecewise-quadratic tensor field on the (periodic) velocity nodes;
/// `coeffs[k] = [T11, T12, T21, T22]` at node-dof `k`.
#[derive(Clone, Debug)]
pub struct TensorField {
    pub space: Arc<VelocitySpace>,
    pub coeffs: Vec<[f64; 4]>,
}

impl TensorField {
    pub fn zeros(space: Arc<VelocitySpace>) -> Self {
        let n = space.nodes().num_dofs();
        Self { space, coeffs: vec![[0.0; 4]; n] }
    }

    pub fn from_fn(space: Arc<VelocitySpace>, f: &dyn Fn(Point) -> Tensor) -> Self {
        let nodes = space.nodes();
        let coeffs = (0..nodes.num_dofs())
            .map(|k| {
                let t = f(space.layout().node_point(nodes.node_of(k)));
                [t[0][0], t[0][1], t[1][0], t[1][1]]
            })
            .collect();
        Self { space, coeffs }
    }

    /// Tensor whose `i`-th row is `rows[i]`.
    pub fn from_rows(rows: [&VectorField; 2]) -> Self {
        let space = rows[0].space.clone();
        let coeffs = (0..space.nodes().num_dofs())
            .map(|k| {
                [
                    rows[0].coeffs[2 * k],
                    rows[0].coeffs[2 * k + 1],
                    rows[1].coeffs[2 * k],
                    rows[1].coeffs[2 * k + 1],
                ]
            })
            .collect();
        Self { space, coeffs }
    }

    pub fn row(&self, i: usize) -> VectorField {
        let coeffs = self.coeffs.iter().flat_map(|c| [c[2 * i], c[2 * i + 1]]).collect();
        VectorField { space: self.space.clone(), coeffs }
    }

    pub fn eval(&self, t: usize, l: [f64; 3]) -> Tensor {
        let phi = p2_values(l);
        let d = self.space.nodes().tri_dofs(t);
        let mut out = [[0.0; 2]; 2];
        for k in 0..6 {
            let c = self.coeffs[d[k]];
            out[0][0] += c[0] * phi[k];
            out[0][1] += c[1] * phi[k];
            out[1][0] += c[2] * phi[k];
            out[1][1] += c[3] * phi[k];
        }
        out
    }

    /// Row-wise divergence `(∂_j T_1j, ∂_j T_2j)`.
    pub fn divergence(&self, t: usize, aff: &Affine, l: [f64; 3]) -> Point {
        let g = aff.p2_grads(l);
        let d = self.space.nodes().tri_dofs(t);
        let mut out = Point::default();
        for k in 0..6 {
            let c = self.coeffs[d[k]];
            out.x += c[0] * g[k].x + c[1] * g[k].y;
            out.y += c[2] * g[k].x + c[3] * g[k].y;
        }
        out
    }

    pub fn add(&self, o: &TensorField) -> TensorField {
        self.zip(o, |a, b| a + b)
    }

    pub fn sub(&self, o: &TensorField) -> TensorField {
        self.zip(o, |a, b| a - b)
    }

    pub fn scaled(&self, s: f64) -> TensorField {
        let coeffs = self.coeffs.iter().map(|c| c.map(|x| s * x)).collect();
        TensorField { space: self.space.clone(), coeffs }
    }

    fn zip(&self, o: &TensorField, f: impl Fn(f64, f64) -> f64) -> TensorField {
        let coeffs = self
            .coeffs
            .iter()
            .zip(&o.coeffs)
            .map(|(a, b)| [f(a[0], b[0]), f(a[1], b[1]), f(a[2], b[2]), f(a[3], b[3])])
            .collect();
        TensorField { space: self.space.clone(), coeffs }
    }

    /// `‖𝔽‖_{L²(Ω)}` (Frobenius norm pointwise).
    pub fn l2_norm(&self) -> f64 {
        let mesh = self.space.mesh();
        let q = tri_quad7();
        let mut s = 0.0;
        for t in 0..mesh.num_triangles() {
            let area2 = mesh.signed_area(t).abs() * 2.0;
            for (&(xi, eta), &w) in q.points.iter().zip(&q.weights) {
                let v = self.eval(t, bary(xi, eta));
                s += w * area2 * (v[0][0].powi(2) + v[0][1].powi(2) + v[1][0].powi(2) + v[1][1].powi(2));
            }
        }
        s.sqrt()
    }

    /// Largest nodal value (max norm over entries) on nodes carrying `tag`.
    pub fn max_on(&self, tag: SegmentTag) -> f64 {
        let tags = self.space.layout().node_tags();
        let nodes = self.space.nodes();
        (0..self.space.layout().num_nodes())
            .filter(|&n| tags[n].contains(&tag))
            .map(|n| self.coeffs[nodes.dof(n)].iter().fold(0.0f64, |m, x| m.max(x.abs())))
            .fold(0.0, f64::max)
    }

    /// Largest `|𝔽 e1 − h|` over `Γ_out` nodes.
    pub fn outflow_nodal_error(&self, h: &OutflowTrace) -> f64 {
        let layout = self.space.layout();
        let dom = layout.mesh().domain();
        let tags = layout.node_tags();
        (0..layout.num_nodes())
            .filter(|&n| tags[n].contains(&SegmentTag::Out))
            .map(|n| {
                let c = self.coeffs[self.space.nodes().dof(n)];
                let x = layout.node_point(n);
                (Point::new(c[0], c[2]) - h.eval(x.y, dom.b02(), dom.tau())).norm()
            })
            .fold(0.0, f64::max)
    }

    /// `‖𝔽 n − h‖_{L²(Γ_out)}`.
    pub fn outflow_trace_error(&self, h: &OutflowTrace) -> f64 {
        let mesh = self.space.mesh();
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
                let p = pa + (pb - pa) * x;
                let v = self.eval(t, aff.barycentric(p));
                let fn_ = Point::new(v[0][0] * n.x + v[0][1] * n.y, v[1][0] * n.x + v[1][1] * n.y);
                let r = fn_ - h.eval(p.y, dom.b02(), dom.tau());
                s += w * len * r.dot(r);
            }
        }
        s.sqrt()
    }
}

/// Dual functional of the row-wise divergence on a P1 space: `r_i[q] = ∫ φ_q div(row_i)`.
pub fn weak_divergence(tf: &TensorField, pspace: &PressureSpace) -> [Vec<f64>; 2] {
    let mesh = tf.space.mesh();
    let q = tri_quad7();
    let mut r = [vec![0.0; pspace.num_dofs()], vec![0.0; pspace.num_dofs()]];
    for t in 0..mesh.num_triangles() {
        let aff = element_affine(mesh, t);
        let area2 = aff.det.abs();
        let d = pspace.tri_dofs(t);
        for (&(xi, eta), &w) in q.points.iter().zip(&q.weights) {
            let l = bary(xi, eta);
            let div = tf.divergence(t, &aff, l);
            for a in 0..3 {
                r[0][d[a]] += w * area2 * div.x * l[a];
                r[1][d[a]] += w * area2 * div.y * l[a];
            }
        }
    }
    r
}

/// Pointwise divergence at the quadrature points of every triangle.
pub fn divergence_of(tf: &TensorField) -> Vec<[Point; 7]> {
    let mesh = tf.space.mesh();
    let q = tri_quad7();
    (0..mesh.num_triangles())
        .map(|t| {
            let aff = element_affine(mesh, t);
            let mut out = [Point::default(); 7];
            for (o, &(xi, eta)) in out.iter_mut().zip(&q.points) {
                *o = tf.divergence(t, &aff, bary(xi, eta));
            }
            out
        })
        .collect()
}

/// How the discrete right inverse of the divergence is realised.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RightInverseKind {
    /// Stokes solve on `Ω`, zero on `Γ_0 ∪ Γ_1 ∪ Γ_out ∪ Γ_p`, natural on `Γ_in`.
    /// Reproduces `(q, div w) = (q, r)` for every P1 `q`.
    FreeInflow,
    /// Stokes solve on `Ω` and its mirror image across `Γ_in` with the odd
    /// extension of the datum. Reproduces the functional only for P1 `q`
    /// vanishing on `Γ_in`.
    Mirrored,
}

/// Factorized discrete right inverse of the divergence, `r ↦ w` with
/// `(q, div w) = r[q]` and `w = 0` on `Γ_0 ∪ Γ_1 ∪ Γ_out ∪ Γ_p`.
pub struct RightInverse {
    kind: RightInverseKind,
    /// Original layout; input functionals live on its non-periodic P1 space.
    layout: Arc<P2Layout>,
    pspace: Arc<PressureSpace>,
    lu: SparseLu,
    solve_nv: usize,
    solve_np: usize,
    solve_nb: usize,
    /// Dirichlet flags of the solve space (values are all zero).
    fixed: Vec<bool>,
    vertex_image: Vec<usize>,
    /// Solve-space node of each original node.
    node_map: Vec<usize>,
}

impl RightInverse {
    pub fn new(layout: &Arc<P2Layout>, kind: RightInverseKind) -> Result<Self> {
        let mesh = layout.mesh().clone();
        let pspace = Arc::new(PressureSpace::with_periodicity(mesh.clone(), false));
        let tags = [SegmentTag::Per0, SegmentTag::Per1, SegmentTag::Out, SegmentTag::Profile];
        let (solve_layout, vertex_image, node_map) = match kind {
            RightInverseKind::FreeInflow => {
                let n = layout.num_nodes();
                (layout.clone(), (0..mesh.num_vertices()).collect(), (0..n).collect::<Vec<_>>())
            }
            RightInverseKind::Mirrored => {
                let mm = mesh.mirror_across_inflow();
                let nv_orig = mesh.num_vertices();
                let nv_m = mm.mesh.num_vertices();
                let ml = Arc::new(P2Layout::new(Arc::new(mm.mesh)));
                // Original triangles come first, so the first edges coincide.
                let map = (0..layout.num_nodes())
                    .map(|n| if n < nv_orig { n } else { nv_m + (n - nv_orig) })
                    .collect();
                (ml, mm.vertex_image, map)
            }
        };
        let vs = VelocitySpace::with_constraints(solve_layout.clone(), false, &tags, &|_| false);
        let ps = PressureSpace::with_periodicity(solve_layout.mesh().clone(), false);
        let a = assemble_stiffness(&vs, 1.0);
        let b = assemble_divergence(&vs, &ps);
        let (nv, np) = (a.rows(), b.rows());
        let borders = match kind {
            RightInverseKind::FreeInflow => Vec::new(),
            RightInverseKind::Mirrored => {
                let w = pressure_weights(&ps);
                vec![Border { coeffs: w.iter().enumerate().map(|(q, &c)| (nv + q, c)).collect(), value: 0.0 }]
            }
        };
        let nb = borders.len();
        let fixed: Vec<bool> = (0..nv).map(|i| vs.is_dirichlet(i)).collect();
        let dirichlet: BTreeMap<usize, f64> =
            (0..nv).filter(|&i| fixed[i]).map(|i| (i, 0.0)).collect();
        let sys = SaddleSystem { a, b, rhs_v: vec![0.0; nv], rhs_p: vec![0.0; np], borders };
        let cs = apply_constraints(&sys, &dirichlet)?;
        let lu = SparseLu::new(&cs.matrix)
            .map_err(|e| Error::AuxSolveFailure(format!("divergence right inverse: {e}")))?;
        Ok(Self {
            kind,
            layout: layout.clone(),
            pspace,
            lu,
            solve_nv: nv,
            solve_np: np,
            solve_nb: nb,
            fixed,
            vertex_image,
            node_map,
        })
    }

    pub fn kind(&self) -> RightInverseKind {
        self.kind
    }

    /// Non-periodic P1 space on which input functionals are indexed.
    pub fn pressure_space(&self) -> &Arc<PressureSpace> {
        &self.pspace
    }

    /// Applies the right inverse to a P1 functional; returns the value at every
    /// node of the original layout.
    pub fn apply(&self, r: &[f64]) -> Result<Vec<Point>> {
        let (nv, np) = (self.solve_nv, self.solve_np);
        let mut rhs = vec![0.0; nv + np + self.solve_nb];
        match self.kind {
            RightInverseKind::FreeInflow => rhs[nv..nv + np].copy_from_slice(r),
            RightInverseKind::Mirrored => {
                // Odd extension: image hats see −r; shared Γ_in hats cancel exactly.
                for (v, &rv) in r.iter().enumerate() {
                    rhs[nv + v] += rv;
                    rhs[nv + self.vertex_image[v]] -= rv;
                }
            }
        }
        for (i, f) in self.fixed.iter().enumerate() {
            if *f {
                rhs[i] = 0.0;
            }
        }
        let x = self.lu.solve(&rhs)?;
        Ok(self.node_map.iter().map(|&m| Point::new(x[2 * m], x[2 * m + 1])).collect())
    }

    /// `r ↦ w`, packaged as a vector field on `space` (which must share the layout).
    pub fn apply_field(&self, space: &Arc<VelocitySpace>, r: &[f64]) -> Result<VectorField> {
        debug_assert!(Arc::ptr_eq(space.layout(), &self.layout));
        let w = self.apply(r)?;
        let nodes = space.nodes();
        let coeffs = (0..nodes.num_dofs())
            .flat_map(|k| {
                let v = w[nodes.node_of(k)];
                [v.x, v.y]
            })
            .collect();
        Ok(VectorField { space: space.clone(), coeffs })
    }
}

/// The four parts of the tensor representation and their sum.
#[derive(Clone, Debug)]
pub struct TensorBuild {
    pub tensor: TensorField,
    pub f0: TensorField,
    pub h0: TensorField,
    pub h1: TensorField,
    pub h2: TensorField,
    /// `τ⁻¹ ∫_{Γ_out} h`.
    pub h_mean: Point,
    pub delta_out: f64,
}

/// Builds `𝔽` on the periodic velocity space from `(f, h)`.
pub fn build_tensor(
    space: &Arc<VelocitySpace>,
    f: &BodyForce,
    h: &OutflowTrace,
    delta_out: Option<f64>,
    ri: &RightInverse,
) -> Result<TensorBuild> {
    let mesh = space.mesh();
    let dom = mesh.domain();
    let (d, b02, tau) = (dom.d(), dom.b02(), dom.tau());
    if !h.is_periodic(b02, tau) {
        return Err(Error::Incompatible(format!("outflow datum {h:?} is not tau-periodic")));
    }
    let delta = delta_out.unwrap_or_else(|| dom.default_outflow_delta());
    let pnp = ri.pressure_space();

    // 𝔽₀: right inverse applied to each component of f.
    let f0 = if f.is_zero() {
        TensorField::zeros(space.clone())
    } else {
        let r1 = assemble_p1_load(pnp, &|p| f.eval(p).x);
        let r2 = assemble_p1_load(pnp, &|p| f.eval(p).y);
        TensorField::from_rows([&ri.apply_field(space, &r1)?, &ri.apply_field(space, &r2)?])
    };

    let h_mean = h.mean(b02, tau);
    let mut rows = Vec::new();
    for i in 0..2 {
        let comp = move |v: Point| if i == 0 { v.x } else { v.y };
        let hm = comp(h_mean);
        let hh = h.clone();
        let hh2 = h.clone();
        let trace: Trace = Arc::new(move |x2: f64| {
            let prim = periodic_primitive(b02, tau, x2, &|y| comp(hh.eval(y, b02, tau)) - hm);
            (prim, comp(hh2.eval(x2, b02, tau)) - hm)
        });
        rows.push(TraceExtension::new(dom, Side::Out, delta, vec![trace])?);
    }
    let h0 = TensorField::from_fn(space.clone(), &|p| {
        let g: Vec<Point> = rows.iter().map(|r| r.eval(p).1).collect();
        [[g[0].y, -g[0].x], [g[1].y, -g[1].x]]
    });
    let h1 = TensorField::from_fn(space.clone(), &|p| {
        let z = smoothstep5((p.x - (d - delta)) / delta).0;
        [[z * h_mean.x, 0.0], [z * h_mean.y, 0.0]]
    });

    let hsum = h0.add(&h1);
    let h2 = if hsum.coeffs.iter().all(|c| c.iter().all(|&x| x == 0.0)) {
        TensorField::zeros(space.clone())
    } else {
        let [r1, r2] = weak_divergence(&hsum, pnp);
        let neg = |r: Vec<f64>| r.into_iter().map(|x| -x).collect::<Vec<_>>();
        TensorField::from_rows([
            &ri.apply_field(space, &neg(r1))?,
            &ri.apply_field(space, &neg(r2))?,
        ])
    };
    let tensor = f0.add(&hsum).add(&h2);
    Ok(TensorBuild { tensor, f0, h0, h1, h2, h_mean, delta_out: delta })
}

/// `‖div_h 𝔽 − f‖`: dual P1 norm of `q ↦ (q, div 𝔽 − f)` over all P1 `q`
/// (optionally only those vanishing on `Γ_in`), summed over both rows.
pub fn divergence_defect(
    tf: &TensorField,
    f: &BodyForce,
    pspace: &PressureSpace,
    exclude_inflow: bool,
) -> Result<f64> {
    let [mut r1, mut r2] = weak_divergence(tf, pspace);
    let l1 = assemble_p1_load(pspace, &|p| f.eval(p).x);
    let l2 = assemble_p1_load(pspace, &|p| f.eval(p).y);
    for q in 0..r1.len() {
        r1[q] -= l1[q];
        r2[q] -= l2[q];
    }
    if exclude_inflow {
        let tags = pspace.mesh().vertex_tags();
        for q in 0..r1.len() {
            if tags[pspace.vertex_of(q)].contains(&SegmentTag::In) {
                r1[q] = 0.0;
                r2[q] = 0.0;
            }
        }
        // Restrict the Riesz map to the subspace as well.
        return restricted_dual_norm(pspace, &[r1, r2], |q| {
            tags[pspace.vertex_of(q)].contains(&SegmentTag::In)
        });
    }
    let a = p1_dual_norm(pspace, &r1)?;
    let b = p1_dual_norm(pspace, &r2)?;
    Ok((a * a + b * b).sqrt())
}

fn restricted_dual_norm(
    pspace: &PressureSpace,
    rs: &[Vec<f64>; 2],
    drop: impl Fn(usize) -> bool,
) -> Result<f64> {
    let m = assemble_pressure_mass(pspace);
    let keep: Vec<usize> = (0..pspace.num_dofs()).filter(|&q| !drop(q)).collect();
    let mut idx = vec![usize::MAX; pspace.num_dofs()];
    for (k, &q) in keep.iter().enumerate() {
        idx[q] = k;
    }
    let mut b = crate::sparse::TripletBuilder::new(keep.len(), keep.len());
    for (i, j, v) in m.triplets() {
        if idx[i] != usize::MAX && idx[j] != usize::MAX {
            b.push(idx[i], idx[j], v);
        }
    }
    let lu = SparseLu::new(&b.build())?;
    let mut s = 0.0;
    for r in rs {
        let rr: Vec<f64> = keep.iter().map(|&q| r[q]).collect();
        let y = lu.solve(&rr)?;
        s += crate::sparse::dot(&rr, &y);
    }
    Ok(s.max(0.0).sqrt())
}

/// Relative defect of `build(αa + βb) − α build(a) − β build(b)` in `L²`.
pub fn bilinearity_defect(
    space: &Arc<VelocitySpace>,
    ri: &RightInverse,
    (f_a, h_a): (&BodyForce, &OutflowTrace),
    (f_b, h_b): (&BodyForce, &OutflowTrace),
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    let dom = space.mesh().domain();
    let (b02, tau) = (dom.b02(), dom.tau());
    let (fa, fb) = (f_a.clone(), f_b.clone());
    let f = BodyForce::Custom {
        name: "combination".into(),
        eval: Arc::new(move |p| fa.eval(p) * alpha + fb.eval(p) * beta),
    };
    let (ha, hb) = (h_a.clone(), h_b.clone());
    let h = OutflowTrace::Custom {
        name: "combination".into(),
        eval: Arc::new(move |y| ha.eval(y, b02, tau) * alpha + hb.eval(y, b02, tau) * beta),
    };
    let c = build_tensor(space, &f, &h, None, ri)?.tensor;
    let a = build_tensor(space, f_a, h_a, None, ri)?.tensor;
    let b = build_tensor(space, f_b, h_b, None, ri)?.tensor;
    let diff = c.sub(&a.scaled(alpha)).sub(&b.scaled(beta));
    Ok(diff.l2_norm() / c.l2_norm().max(1e-300))
}
