//! Taylor–Hood P2/P1 spaces with periodic aliasing, assembly of the Stokes
//! blocks and load functionals, and Dirichlet elimination.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::element::{tri_quad7, Affine, EDGES};
use crate::error::{Error, Result};
use crate::geometry::{Point, SegmentTag};
use crate::mesh::{edge_key, Mesh};
use crate::sparse::{CsrMatrix, TripletBuilder};

/// Node numbering of the quadratic space: vertices first, then edge midpoints.
#[derive(Debug)]
pub struct P2Layout {
    mesh: Arc<Mesh>,
    edges: Vec<[usize; 2]>,
    tri_edges: Vec<[usize; 3]>,
    edge_index: BTreeMap<(usize, usize), usize>,
}

impl P2Layout {
    pub fn new(mesh: Arc<Mesh>) -> Self {
        let mut edges = Vec::new();
        let mut edge_index = BTreeMap::new();
        let mut tri_edges = Vec::with_capacity(mesh.num_triangles());
        for t in mesh.triangles() {
            let mut te = [0; 3];
            for (k, &(i, j)) in EDGES.iter().enumerate() {
                let key = edge_key(t[i], t[j]);
                te[k] = *edge_index.entry(key).or_insert_with(|| {
                    edges.push([key.0, key.1]);
                    edges.len() - 1
                });
            }
            tri_edges.push(te);
        }
        Self { mesh, edges, tri_edges, edge_index }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn num_nodes(&self) -> usize {
        self.mesh.num_vertices() + self.edges.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edge(&self, e: usize) -> [usize; 2] {
        self.edges[e]
    }

    pub fn edge_node(&self, a: usize, b: usize) -> Option<usize> {
        self.edge_index.get(&edge_key(a, b)).map(|e| self.mesh.num_vertices() + e)
    }

    /// Global node indices in local order `v0, v1, v2, m01, m12, m20`.
    pub fn tri_nodes(&self, t: usize) -> [usize; 6] {
        let nv = self.mesh.num_vertices();
        let [a, b, c] = self.mesh.triangles()[t];
        let [e0, e1, e2] = self.tri_edges[t];
        [a, b, c, nv + e0, nv + e1, nv + e2]
    }

    pub fn node_point(&self, n: usize) -> Point {
        let nv = self.mesh.num_vertices();
        if n < nv {
            self.mesh.vertices()[n]
        } else {
            let [a, b] = self.edges[n - nv];
            self.mesh.vertices()[a].midpoint(self.mesh.vertices()[b])
        }
    }

    /// Boundary tags of every node (vertices inherit those of adjacent boundary edges).
    pub fn node_tags(&self) -> Vec<Vec<SegmentTag>> {
        let mut tags = self.mesh.vertex_tags();
        tags.resize(self.num_nodes(), Vec::new());
        let nv = self.mesh.num_vertices();
        for e in self.mesh.boundary_edges() {
            let n = nv + self.edge_index[&edge_key(e.v[0], e.v[1])];
            tags[n].push(e.tag);
        }
        tags
    }

    /// Map from each node to itself, or to its `Γ_0` partner if it lies on `Γ_1`.
    pub fn periodic_representatives(&self) -> Vec<usize> {
        let mut rep: Vec<usize> = (0..self.num_nodes()).collect();
        let pairs = self.mesh.periodic_pairs();
        for &(a, b) in pairs {
            rep[b] = a;
        }
        let partner: BTreeMap<usize, usize> = pairs.iter().map(|&(a, b)| (b, a)).collect();
        for e in self.mesh.boundary_edges() {
            if e.tag == SegmentTag::Per1 {
                let n1 = self.edge_node(e.v[0], e.v[1]).expect("boundary edge in layout");
                let n0 = self
                    .edge_node(partner[&e.v[0]], partner[&e.v[1]])
                    .expect("periodic partner edge exists");
                rep[n1] = n0;
            }
        }
        rep
    }
}

/// Scalar quadratic degrees of freedom: node aliasing plus Dirichlet flags.
#[derive(Debug)]
pub struct NodeSpace {
    layout: Arc<P2Layout>,
    node_dof: Vec<usize>,
    dof_node: Vec<usize>,
    dirichlet: Vec<bool>,
}

impl NodeSpace {
    fn build(
        layout: Arc<P2Layout>,
        periodic: bool,
        dirichlet_tags: &[SegmentTag],
        extra: &dyn Fn(Point) -> bool,
    ) -> Self {
        let nn = layout.num_nodes();
        let rep = if periodic { layout.periodic_representatives() } else { (0..nn).collect() };
        let mut node_dof = vec![usize::MAX; nn];
        let mut dof_node = Vec::new();
        for n in 0..nn {
            if rep[n] == n {
                node_dof[n] = dof_node.len();
                dof_node.push(n);
            }
        }
        for n in 0..nn {
            node_dof[n] = node_dof[rep[n]];
        }
        let tags = layout.node_tags();
        let mut dirichlet = vec![false; dof_node.len()];
        for n in 0..nn {
            if tags[n].iter().any(|t| dirichlet_tags.contains(t)) || extra(layout.node_point(n)) {
                dirichlet[node_dof[n]] = true;
            }
        }
        Self { layout, node_dof, dof_node, dirichlet }
    }

    pub fn layout(&self) -> &Arc<P2Layout> {
        &self.layout
    }

    pub fn num_dofs(&self) -> usize {
        self.dof_node.len()
    }

    pub fn dof(&self, node: usize) -> usize {
        self.node_dof[node]
    }

    /// Representative node of a degree of freedom.
    pub fn node_of(&self, dof: usize) -> usize {
        self.dof_node[dof]
    }

    pub fn is_dirichlet(&self, dof: usize) -> bool {
        self.dirichlet[dof]
    }

    pub fn tri_dofs(&self, t: usize) -> [usize; 6] {
        self.layout.tri_nodes(t).map(|n| self.node_dof[n])
    }

    /// Coefficients of the nodal interpolant of `f` (evaluated at representative nodes).
    pub fn interpolate(&self, f: &dyn Fn(Point) -> f64) -> Vec<f64> {
        self.dof_node.iter().map(|&n| f(self.layout.node_point(n))).collect()
    }
}

/// Vector-valued quadratic space; component `c` of node-dof `k` has index `2k + c`.
#[derive(Debug)]
pub struct VelocitySpace {
    nodes: NodeSpace,
}

impl VelocitySpace {
    /// Periodic space with Dirichlet conditions on `Γ_in ∪ Γ_p`.
    pub fn new(layout: Arc<P2Layout>) -> Self {
        Self::with_constraints(layout, true, &[SegmentTag::In, SegmentTag::Profile], &|_| false)
    }

    pub fn with_constraints(
        layout: Arc<P2Layout>,
        periodic: bool,
        dirichlet_tags: &[SegmentTag],
        extra: &dyn Fn(Point) -> bool,
    ) -> Self {
        Self { nodes: NodeSpace::build(layout, periodic, dirichlet_tags, extra) }
    }

    pub fn nodes(&self) -> &NodeSpace {
        &self.nodes
    }

    pub fn layout(&self) -> &Arc<P2Layout> {
        self.nodes.layout()
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        self.nodes.layout.mesh()
    }

    pub fn num_dofs(&self) -> usize {
        2 * self.nodes.num_dofs()
    }

    pub fn dof(&self, node: usize, comp: usize) -> usize {
        2 * self.nodes.dof(node) + comp
    }

    pub fn is_dirichlet(&self, dof: usize) -> bool {
        self.nodes.is_dirichlet(dof / 2)
    }

    pub fn dirichlet_dofs(&self) -> Vec<usize> {
        (0..self.num_dofs()).filter(|&i| self.is_dirichlet(i)).collect()
    }

    pub fn dof_point(&self, dof: usize) -> Point {
        self.nodes.layout.node_point(self.nodes.node_of(dof / 2))
    }

    pub fn interpolate(&self, f: &dyn Fn(Point) -> Point) -> Vec<f64> {
        let mut c = Vec::with_capacity(self.num_dofs());
        for k in 0..self.nodes.num_dofs() {
            let v = f(self.nodes.layout.node_point(self.nodes.node_of(k)));
            c.push(v.x);
            c.push(v.y);
        }
        c
    }
}

/// Continuous piecewise-linear pressure space (periodic by vertex aliasing).
#[derive(Debug)]
pub struct PressureSpace {
    mesh: Arc<Mesh>,
    vertex_dof: Vec<usize>,
    dof_vertex: Vec<usize>,
}

impl PressureSpace {
    pub fn new(mesh: Arc<Mesh>) -> Self {
        Self::with_periodicity(mesh, true)
    }

    pub fn with_periodicity(mesh: Arc<Mesh>, periodic: bool) -> Self {
        let nv = mesh.num_vertices();
        let mut rep: Vec<usize> = (0..nv).collect();
        if periodic {
            for &(a, b) in mesh.periodic_pairs() {
                rep[b] = a;
            }
        }
        let mut vertex_dof = vec![usize::MAX; nv];
        let mut dof_vertex = Vec::new();
        for v in 0..nv {
            if rep[v] == v {
                vertex_dof[v] = dof_vertex.len();
                dof_vertex.push(v);
            }
        }
        for v in 0..nv {
            vertex_dof[v] = vertex_dof[rep[v]];
        }
        Self { mesh, vertex_dof, dof_vertex }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn num_dofs(&self) -> usize {
        self.dof_vertex.len()
    }

    pub fn dof(&self, vertex: usize) -> usize {
        self.vertex_dof[vertex]
    }

    pub fn vertex_of(&self, dof: usize) -> usize {
        self.dof_vertex[dof]
    }

    pub fn tri_dofs(&self, t: usize) -> [usize; 3] {
        self.mesh.triangles()[t].map(|v| self.vertex_dof[v])
    }

    pub fn interpolate(&self, f: &dyn Fn(Point) -> f64) -> Vec<f64> {
        self.dof_vertex.iter().map(|&v| f(self.mesh.vertices()[v])).collect()
    }
}

/// Velocity coefficients; `u_i(x) = Σ_k c[2k+i] φ_k(x)`.
#[derive(Clone, Debug)]
pub struct VectorField {
    pub space: Arc<VelocitySpace>,
    pub coeffs: Vec<f64>,
}

impl VectorField {
    pub fn zeros(space: Arc<VelocitySpace>) -> Self {
        let n = space.num_dofs();
        Self { space, coeffs: vec![0.0; n] }
    }

    pub fn from_fn(space: Arc<VelocitySpace>, f: &dyn Fn(Point) -> Point) -> Self {
        let coeffs = space.interpolate(f);
        Self { space, coeffs }
    }

    fn local(&self, t: usize) -> [[f64; 2]; 6] {
        self.space.nodes.tri_dofs(t).map(|k| [self.coeffs[2 * k], self.coeffs[2 * k + 1]])
    }

    pub fn eval(&self, t: usize, l: [f64; 3]) -> Point {
        let phi = crate::element::p2_values(l);
        let c = self.local(t);
        let mut u = Point::default();
        for k in 0..6 {
            u = u + Point::new(c[k][0], c[k][1]) * phi[k];
        }
        u
    }

    /// `g[i][j] = ∂_j u_i`.
    pub fn grad(&self, t: usize, aff: &Affine, l: [f64; 3]) -> [[f64; 2]; 2] {
        let dphi = aff.p2_grads(l);
        let c = self.local(t);
        let mut g = [[0.0; 2]; 2];
        for k in 0..6 {
            for i in 0..2 {
                g[i][0] += c[k][i] * dphi[k].x;
                g[i][1] += c[k][i] * dphi[k].y;
            }
        }
        g
    }

    /// Second derivatives `[u_i]_{xx, xy, yy}`, constant per element.
    pub fn hessian(&self, t: usize, aff: &Affine) -> [[f64; 3]; 2] {
        let hs = aff.p2_hessians();
        let c = self.local(t);
        let mut h = [[0.0; 3]; 2];
        for k in 0..6 {
            for i in 0..2 {
                for m in 0..3 {
                    h[i][m] += c[k][i] * hs[k][m];
                }
            }
        }
        h
    }

    pub fn scaled(&self, s: f64) -> VectorField {
        VectorField { space: self.space.clone(), coeffs: self.coeffs.iter().map(|c| c * s).collect() }
    }

    pub fn add(&self, other: &VectorField) -> VectorField {
        VectorField {
            space: self.space.clone(),
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &VectorField) -> VectorField {
        self.add(&other.scaled(-1.0))
    }

    pub fn l2_norm(&self) -> f64 {
        integrate_mesh(self.space.mesh(), |t, _, l, _| {
            let u = self.eval(t, l);
            u.dot(u)
        })
        .sqrt()
    }

    /// `‖∇u‖_{L²}`.
    pub fn h1_seminorm(&self) -> f64 {
        integrate_mesh(self.space.mesh(), |t, aff, l, _| {
            let g = self.grad(t, aff, l);
            g[0][0] * g[0][0] + g[0][1] * g[0][1] + g[1][0] * g[1][0] + g[1][1] * g[1][1]
        })
        .sqrt()
    }
}

/// Pressure coefficients at vertex dofs.
#[derive(Clone, Debug)]
pub struct ScalarField {
    pub space: Arc<PressureSpace>,
    pub coeffs: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(space: Arc<PressureSpace>) -> Self {
        let n = space.num_dofs();
        Self { space, coeffs: vec![0.0; n] }
    }

    pub fn from_fn(space: Arc<PressureSpace>, f: &dyn Fn(Point) -> f64) -> Self {
        let coeffs = space.interpolate(f);
        Self { space, coeffs }
    }

    pub fn eval(&self, t: usize, l: [f64; 3]) -> f64 {
        let d = self.space.tri_dofs(t);
        (0..3).map(|k| self.coeffs[d[k]] * l[k]).sum()
    }

    pub fn grad(&self, t: usize, aff: &Affine) -> Point {
        let d = self.space.tri_dofs(t);
        let mut g = Point::default();
        for k in 0..3 {
            g = g + aff.grad_l[k] * self.coeffs[d[k]];
        }
        g
    }
}

impl ScalarField {
    pub fn l2_norm(&self) -> f64 {
        integrate_mesh(self.space.mesh(), |t, _, l, _| self.eval(t, l).powi(2)).sqrt()
    }
}

/// `Σ_T ∫_T f` with the degree-5 rule; `f(t, affine, barycentric, x)`.
pub fn integrate_mesh(mesh: &Mesh, mut f: impl FnMut(usize, &Affine, [f64; 3], Point) -> f64) -> f64 {
    let q = tri_quad7();
    let mut s = 0.0;
    for t in 0..mesh.num_triangles() {
        let aff = element_affine(mesh, t);
        let area2 = aff.det.abs();
        for (&(xi, eta), &w) in q.points.iter().zip(&q.weights) {
            let l = crate::element::bary(xi, eta);
            s += w * area2 * f(t, &aff, l, aff.map(l));
        }
    }
    s
}

pub fn element_affine(mesh: &Mesh, t: usize) -> Affine {
    Affine::new(mesh.triangle_points(t))
}

/// `M[i][j] = ν ∫ ∇φ_i : ∇φ_j` on the aliased velocity dofs (no constraints applied).
pub fn assemble_stiffness(space: &VelocitySpace, nu: f64) -> CsrMatrix {
    let mesh = space.mesh();
    let q = tri_quad7();
    let n = space.num_dofs();
    let mut b = TripletBuilder::new(n, n);
    for t in 0..mesh.num_triangles() {
        let aff = element_affine(mesh, t);
        let area2 = aff.det.abs();
        let mut ke = [[0.0; 6]; 6];
        for (&(xi, eta), &w) in q.points.iter().zip(&q.weights) {
            let g = aff.p2_grads(crate::element::bary(xi, eta));
            for i in 0..6 {
                for j in 0..6 {
                    ke[i][j] += w * area2 * g[i].dot(g[j]);
                }
            }
        }
        let dofs = space.nodes.tri_dofs(t);
        for i in 0..6 {
            for j in 0..6 {
                for c in 0..2 {
                    b.push(2 * dofs[i] + c, 2 * dofs[j] + c, nu * ke[i][j]);
                }
            }
        }
    }
    b.build()
}

/// `B[q][v] = ∫ φ_q div ψ_v`.
pub fn assemble_divergence(vspace: &VelocitySpace, pspace: &PressureSpace) -> CsrMatrix {
    let mesh = vspace.mesh();
    let q = tri_quad7();
    let mut b = TripletBuilder::new(pspace.num_dofs(), vspace.num_dofs());
    for t in 0..mesh.num_triangles() {
        let aff = element_affine(mesh, t);
        let area2 = aff.det.abs();
        let mut be = [[[0.0; 2]; 6]; 3];
        for (&(xi, eta), &w) in q.points.iter().zip(&q.weights) {
            let l = crate::element::bary(xi, eta);
            let g = aff.p2_grads(l);
            for a in 0..3 {
                for k in 0..6 {
                    be[a][k][0] += w * area2 * l[a] * g[k].x;
                    be[a][k][1] += w * area2 * l[a] * g[k].y;
                }
            }
        }
        let vd = vspace.nodes.tri_dofs(t);
        let pd = pspace.tri_dofs(t);
        for a in 0..3 {
            for k in 0..6 {
                for c in 0..2 {
                    b.push(pd[a], 2 * vd[k] + c, be[a][k][c]);
                }
            }
        }
    }
    b.build()
}

/// P1 mass matrix on the given pressure space.
pub fn assemble_pressure_mass(pspace: &PressureSpace) -> CsrMatrix {
    let mesh = pspace.mesh();
    let n = pspace.num_dofs();
    let mut b = TripletBuilder::new(n, n);
    for t in 0..mesh.num_triangles() {
        let area = mesh.signed_area(t).abs();
        let d = pspace.tri_dofs(t);
        for i in 0..3 {
            for j in 0..3 {
                let m = if i == j { area / 6.0 } else { area / 12.0 };
                b.push(d[i], d[j], m);
            }
        }
    }
    b.build()
}

/// Row sums of the P1 mass matrix, `∫ φ_q`.
pub fn pressure_weights(pspace: &PressureSpace) -> Vec<f64> {
    let mesh = pspace.mesh();
    let mut w = vec![0.0; pspace.num_dofs()];
    for t in 0..mesh.num_triangles() {
        let a = mesh.signed_area(t).abs() / 3.0;
        for d in pspace.tri_dofs(t) {
            w[d] += a;
        }
    }
    w
}

/// `∫ φ_q f` for every pressure dof.
pub fn assemble_p1_load(pspace: &PressureSpace, f: &dyn Fn(Point) -> f64) -> Vec<f64> {
    let mesh = pspace.mesh();
    let q = tri_quad7();
    let mut r = vec![0.0; pspace.num_dofs()];
    for t in 0..mesh.num_triangles() {
        let aff = element_affine(mesh, t);
        let area2 = aff.det.abs();
        let d = pspace.tri_dofs(t);
        for (&(xi, eta), &w) in q.points.iter().zip(&q.weights) {
            let l = crate::element::bary(xi, eta);
            let fx = f(aff.map(l));
            for a in 0..3 {
                r[d[a]] += w * area2 * fx * l[a];
            }
        }
    }
    r
}

/// `sqrt(rᵀ M⁻¹ r)` with `M` the P1 mass matrix: the L² norm of the P1 Riesz
/// representative of the functional `r`.
pub fn p1_dual_norm(pspace: &PressureSpace, r: &[f64]) -> Result<f64> {
    if r.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    let m = assemble_pressure_mass(pspace);
    let y = crate::linsolve::SparseLu::new(&m)?.solve(r)?;
    Ok(crate::sparse::dot(r, &y).max(0.0).sqrt())
}

/// Tensor evaluation callback: `(triangle, barycentric) ↦ [[T11, T12], [T21, T22]]`.
pub type TensorEval<'a> = dyn Fn(usize, [f64; 3]) -> [[f64; 2]; 2] + 'a;

/// `⟨F, φ_i⟩ = −∫ 𝔽 : ∇φ_i`.
pub fn assemble_functional_f(space: &VelocitySpace, tensor: &TensorEval) -> Vec<f64> {
    let mesh = space.mesh();
    let q = tri_quad7();
    let mut rhs = vec![0.0; space.num_dofs()];
    for t in 0..mesh.num_triangles() {
        let aff = element_affine(mesh, t);
        let area2 = aff.det.abs();
        let dofs = space.nodes.tri_dofs(t);
        let mut fe = [[0.0; 2]; 6];
        for (&(xi, eta), &w) in q.points.iter().zip(&q.weights) {
            let l = crate::element::bary(xi, eta);
            let g = aff.p2_grads(l);
            let f = tensor(t, l);
            for k in 0..6 {
                for c in 0..2 {
                    fe[k][c] -= w * area2 * (f[c][0] * g[k].x + f[c][1] * g[k].y);
                }
            }
        }
        for k in 0..6 {
            for c in 0..2 {
                rhs[2 * dofs[k] + c] += fe[k][c];
            }
        }
    }
    rhs
}

/// `⟨G, φ_i⟩ = −ν ∫ ∇g_* : ∇φ_i`.
pub fn assemble_functional_g(space: &VelocitySpace, g_star: &VectorField, nu: f64) -> Vec<f64> {
    let a = assemble_stiffness(space, nu);
    a.matvec(&g_star.coeffs).into_iter().map(|x| -x).collect()
}

/// Load vector of a body force, `∫ f · φ_i`.
pub fn assemble_load(space: &VelocitySpace, f: &dyn Fn(Point) -> Point) -> Vec<f64> {
    let mesh = space.mesh();
    let q = tri_quad7();
    let mut rhs = vec![0.0; space.num_dofs()];
    for t in 0..mesh.num_triangles() {
        let aff = element_affine(mesh, t);
        let area2 = aff.det.abs();
        let dofs = space.nodes.tri_dofs(t);
        for (&(xi, eta), &w) in q.points.iter().zip(&q.weights) {
            let l = crate::element::bary(xi, eta);
            let phi = crate::element::p2_values(l);
            let fx = f(aff.map(l));
            for k in 0..6 {
                rhs[2 * dofs[k]] += w * area2 * fx.x * phi[k];
                rhs[2 * dofs[k] + 1] += w * area2 * fx.y * phi[k];
            }
        }
    }
    rhs
}

/// Extra scalar equation `Σ c_k x_k = value` over the combined unknown vector,
/// enforced through a Lagrange multiplier.
#[derive(Clone, Debug)]
pub struct Border {
    pub coeffs: Vec<(usize, f64)>,
    pub value: f64,
}

/// `[[A, Bᵀ], [B, 0]] [v; π] = [rhs_v; rhs_p]`, optionally bordered.
#[derive(Clone, Debug)]
pub struct SaddleSystem {
    pub a: CsrMatrix,
    pub b: CsrMatrix,
    pub rhs_v: Vec<f64>,
    pub rhs_p: Vec<f64>,
    pub borders: Vec<Border>,
}

impl SaddleSystem {
    pub fn nv(&self) -> usize {
        self.a.rows()
    }

    pub fn np(&self) -> usize {
        self.b.rows()
    }
}

/// Symmetric system after Dirichlet elimination.
#[derive(Clone, Debug)]
pub struct ConstrainedSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub nv: usize,
    pub np: usize,
    pub nb: usize,
    /// Velocity block after elimination (for preconditioning).
    pub a_block: CsrMatrix,
}

/// Eliminates the listed velocity dofs symmetrically: rows and columns zeroed,
/// unit diagonal, right-hand side corrected. Pressure dofs left without a free
/// velocity neighbour are set to zero.
pub fn apply_constraints(
    sys: &SaddleSystem,
    dirichlet: &BTreeMap<usize, f64>,
) -> Result<ConstrainedSystem> {
    let (nv, np, nb) = (sys.nv(), sys.np(), sys.borders.len());
    let n = nv + np + nb;
    if let Some((&k, _)) = dirichlet.iter().find(|(&k, _)| k >= nv) {
        return Err(Error::UnknownDof(format!("{k} is not a velocity dof (count {nv})")));
    }
    let mut fixed = vec![None; nv];
    for (&k, &v) in dirichlet {
        fixed[k] = Some(v);
    }
    let mut rhs: Vec<f64> = sys.rhs_v.iter().chain(&sys.rhs_p).copied().collect();
    rhs.extend(sys.borders.iter().map(|b| b.value));
    let mut t = TripletBuilder::new(n, n);
    let mut ta = TripletBuilder::new(nv, nv);
    let add = |i: usize, j: usize, v: f64, rhs: &mut Vec<f64>, t: &mut TripletBuilder| {
        // Entry (i, j) of the full symmetric matrix, with j possibly a fixed velocity dof.
        let fi = if i < nv { fixed[i] } else { None };
        let fj = if j < nv { fixed[j] } else { None };
        match (fi, fj) {
            (None, None) => t.push(i, j, v),
            (None, Some(val)) => rhs[i] -= v * val,
            _ => {}
        }
    };
    for (i, j, v) in sys.a.triplets() {
        add(i, j, v, &mut rhs, &mut t);
        if fixed[i].is_none() && fixed[j].is_none() {
            ta.push(i, j, v);
        }
    }
    // Pressure rows without any free velocity column (e.g. inside a region where
    // the velocity is fully prescribed) are pinned to zero. Entries at round-off
    // level relative to the row do not count as coupling.
    let mut row_max = vec![0.0f64; np];
    for (q, _, v) in sys.b.triplets() {
        row_max[q] = row_max[q].max(v.abs());
    }
    let mut coupled = vec![false; np];
    for (q, j, v) in sys.b.triplets() {
        if v.abs() > 1e-10 * row_max[q] && fixed[j].is_none() {
            coupled[q] = true;
        }
    }
    for (q, j, v) in sys.b.triplets() {
        if coupled[q] {
            add(nv + q, j, v, &mut rhs, &mut t);
            add(j, nv + q, v, &mut rhs, &mut t);
        }
    }
    for (q, c) in coupled.iter().enumerate() {
        if !c {
            t.push(nv + q, nv + q, 1.0);
            rhs[nv + q] = 0.0;
        }
    }
    for (bi, border) in sys.borders.iter().enumerate() {
        let r = nv + np + bi;
        for &(j, v) in &border.coeffs {
            if j >= nv && j < nv + np && !coupled[j - nv] {
                continue;
            }
            add(r, j, v, &mut rhs, &mut t);
            add(j, r, v, &mut rhs, &mut t);
        }
    }
    for (k, f) in fixed.iter().enumerate() {
        if let Some(val) = f {
            t.push(k, k, 1.0);
            ta.push(k, k, 1.0);
            rhs[k] = *val;
        }
    }
    Ok(ConstrainedSystem { matrix: t.build(), rhs, nv, np, nb, a_block: ta.build() })
}

/// Outward unit normal and length of a boundary edge, oriented by its triangle.
pub fn boundary_edge_geometry(mesh: &Mesh) -> BTreeMap<(usize, usize), (usize, Point, f64)> {
    let bmap = mesh.boundary_edge_map();
    let mut out = BTreeMap::new();
    for (t, tri) in mesh.triangles().iter().enumerate() {
        for (i, j) in EDGES {
            let key = edge_key(tri[i], tri[j]);
            if bmap.contains_key(&key) {
                let (a, b) = (mesh.vertices()[tri[i]], mesh.vertices()[tri[j]]);
                let e = b - a;
                let len = e.norm();
                // Counterclockwise triangles have the domain on the left of a → b.
                let n = Point::new(e.y / len, -e.x / len);
                out.insert(key, (t, n, len));
            }
        }
    }
    out
}

/// Coefficients of `∫_{Γ_out} v · n` on the velocity dofs (outflow flux functional).
pub fn outflow_flux_functional(space: &VelocitySpace) -> Vec<f64> {
    let mesh = space.mesh();
    let geo = boundary_edge_geometry(mesh);
    let mut c = vec![0.0; space.num_dofs()];
    for e in mesh.boundary_edges() {
        if e.tag != SegmentTag::Out {
            continue;
        }
        let (_, n, len) = geo[&edge_key(e.v[0], e.v[1])];
        let m = space.layout().edge_node(e.v[0], e.v[1]).unwrap();
        // Simpson weights integrate the quadratic trace exactly.
        for (node, w) in [(e.v[0], 1.0 / 6.0), (m, 4.0 / 6.0), (e.v[1], 1.0 / 6.0)] {
            c[space.dof(node, 0)] += w * len * n.x;
            c[space.dof(node, 1)] += w * len * n.y;
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CascadeDomain;
    use crate::mesh::generate_mesh;

    fn channel_spaces() -> (Arc<VelocitySpace>, Arc<PressureSpace>) {
        let dom = CascadeDomain::channel(1.0, 1.0);
        let mesh = Arc::new(generate_mesh(&dom, 0.25).unwrap());
        let layout = Arc::new(P2Layout::new(mesh.clone()));
        (Arc::new(VelocitySpace::new(layout)), Arc::new(PressureSpace::new(mesh)))
    }

    #[test]
    fn reference_element_stiffness() {
        // Exact P2 Laplacian on the reference triangle (0,0),(1,0),(0,1).
        let exact = [
            [1.0, 1.0 / 6.0, 1.0 / 6.0, -2.0 / 3.0, 0.0, -2.0 / 3.0],
            [1.0 / 6.0, 0.5, 0.0, -2.0 / 3.0, 0.0, 0.0],
            [1.0 / 6.0, 0.0, 0.5, 0.0, 0.0, -2.0 / 3.0],
            [-2.0 / 3.0, -2.0 / 3.0, 0.0, 8.0 / 3.0, -4.0 / 3.0, 0.0],
            [0.0, 0.0, 0.0, -4.0 / 3.0, 8.0 / 3.0, -4.0 / 3.0],
            [-2.0 / 3.0, 0.0, -2.0 / 3.0, 0.0, -4.0 / 3.0, 8.0 / 3.0],
        ];
        let aff = Affine::new([Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(0.0, 1.0)]);
        let q = tri_quad7();
        for i in 0..6 {
            for j in 0..6 {
                let mut s = 0.0;
                for (&(xi, eta), &w) in q.points.iter().zip(&q.weights) {
                    let g = aff.p2_grads(crate::element::bary(xi, eta));
                    s += w * g[i].dot(g[j]);
                }
                assert!((s - exact[i][j]).abs() < 1e-14, "({i},{j}) {s}");
            }
        }
    }

    #[test]
    fn stiffness_scales_and_kills_constants() {
        let (vs, _) = channel_spaces();
        let a1 = assemble_stiffness(&vs, 1.0);
        let a2 = assemble_stiffness(&vs, 2.0);
        for (i, j, v) in a1.triplets() {
            assert_eq!(a2.get(i, j), 2.0 * v);
        }
        let c = vs.interpolate(&|_| Point::new(1.0, 0.0));
        assert!(a1.matvec(&c).iter().all(|x| x.abs() < 1e-12));
        assert!(a1.is_symmetric(1e-12));
    }

    #[test]
    fn divergence_of_linear_field_recovers_area() {
        let (vs, ps) = channel_spaces();
        let b = assemble_divergence(&vs, &ps);
        let c = VectorField::from_fn(vs.clone(), &|p| Point::new(p.x, 0.0));
        let bv = b.matvec(&c.coeffs);
        let total: f64 = bv.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        let c = vs.interpolate(&|_| Point::new(1.0, 0.0));
        assert!(b.matvec(&c).iter().all(|x| x.abs() < 1e-13));
    }

    #[test]
    fn periodic_aliasing_covers_gamma1() {
        let (vs, ps) = channel_spaces();
        let mesh = vs.mesh();
        for &(a, b) in mesh.periodic_pairs() {
            assert_eq!(vs.dof(a, 0), vs.dof(b, 0));
            assert_eq!(ps.dof(a), ps.dof(b));
        }
        let tags = vs.layout().node_tags();
        for (n, t) in tags.iter().enumerate() {
            let d = vs.dof(n, 0);
            let expect = t.contains(&SegmentTag::In) || t.contains(&SegmentTag::Profile);
            if expect {
                assert!(vs.is_dirichlet(d));
            }
            if t.contains(&SegmentTag::Per1) {
                assert!(tags[vs.nodes().node_of(d / 2)].contains(&SegmentTag::Per0));
            }
        }
    }

    #[test]
    fn functional_f_of_single_entry_tensor() {
        let (vs, _) = channel_spaces();
        let rhs = assemble_functional_f(&vs, &|t, l| {
            let p = element_affine(vs.mesh(), t).map(l);
            [[p.x, 0.0], [0.0, 0.0]]
        });
        let w = vs.interpolate(&|p| Point::new(p.x, 0.0));
        let val: f64 = rhs.iter().zip(&w).map(|(a, b)| a * b).sum();
        // −∫ x1 · ∂1(x1) = −d²τ/2
        assert!((val + 0.5).abs() < 1e-12);
    }

    #[test]
    fn elimination_is_symmetric() {
        let (vs, ps) = channel_spaces();
        let sys = SaddleSystem {
            a: assemble_stiffness(&vs, 1.0),
            b: assemble_divergence(&vs, &ps),
            rhs_v: vec![0.0; vs.num_dofs()],
            rhs_p: vec![0.0; ps.num_dofs()],
            borders: Vec::new(),
        };
        let dir: BTreeMap<usize, f64> = vs.dirichlet_dofs().into_iter().map(|d| (d, 0.5)).collect();
        let c = apply_constraints(&sys, &dir).unwrap();
        assert!(c.matrix.is_symmetric(1e-14));
        let mut bad = BTreeMap::new();
        bad.insert(vs.num_dofs() + 3, 1.0);
        assert!(matches!(apply_constraints(&sys, &bad), Err(Error::UnknownDof(_))));
    }
}
