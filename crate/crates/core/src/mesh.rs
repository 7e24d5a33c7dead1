//! Conforming triangulations of one period with periodic node pairing.
//!
//! Boundary nodes on `Γ_1` are exact `τ`-translates of the nodes on `Γ_0`, so the
//! two sides can be identified degree-of-freedom by degree-of-freedom.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};

use spade::{
    AngleLimit, ConstrainedDelaunayTriangulation, Point2, RefinementParameters, Triangulation,
};

use crate::error::{Error, Result};
use crate::geometry::{point_in_polygon, CascadeDomain, Point, ProfileCurve, SegmentTag};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub v: [usize; 2],
    pub tag: SegmentTag,
}

/// Interior polyline at height `Γ_0 + offset·e2`, kept as mesh edges so the
/// strip below it can be cut off and translated.
#[derive(Clone, Debug, PartialEq)]
pub struct CutLine {
    pub offset: f64,
    /// Vertex indices ordered by increasing `x1`, from `Γ_in` to `Γ_out`.
    pub vertices: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    domain: CascadeDomain,
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    /// `(Γ_0 vertex, Γ_1 vertex)`, ordered by `x1`.
    periodic_pairs: Vec<(usize, usize)>,
    cut: Option<CutLine>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefinementLevel {
    pub level: usize,
    pub target_h: f64,
}

impl Mesh {
    pub fn domain(&self) -> &CascadeDomain {
        &self.domain
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn periodic_pairs(&self) -> &[(usize, usize)] {
        &self.periodic_pairs
    }

    pub fn cut(&self) -> Option<&CutLine> {
        self.cut.as_ref()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        0.5 * (b - a).cross(c - a)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.signed_area(t)).sum()
    }

    pub fn h_max(&self) -> f64 {
        let mut h: f64 = 0.0;
        for t in &self.triangles {
            for (i, j) in [(0, 1), (1, 2), (2, 0)] {
                h = h.max(self.vertices[t[i]].dist(self.vertices[t[j]]));
            }
        }
        h
    }

    /// Tags per vertex; a vertex on several pieces keeps all of them.
    pub fn vertex_tags(&self) -> Vec<Vec<SegmentTag>> {
        let mut tags = vec![Vec::new(); self.vertices.len()];
        for e in &self.boundary_edges {
            for &v in &e.v {
                if !tags[v].contains(&e.tag) {
                    tags[v].push(e.tag);
                }
            }
        }
        for t in &mut tags {
            t.sort();
        }
        tags
    }

    pub fn boundary_edge_map(&self) -> BTreeMap<(usize, usize), SegmentTag> {
        self.boundary_edges.iter().map(|e| (edge_key(e.v[0], e.v[1]), e.tag)).collect()
    }

    /// Checks every structural invariant of the triangulation.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::MeshFailure(m));
        for t in 0..self.triangles.len() {
            if self.signed_area(t) <= 0.0 {
                return fail(format!("triangle {t} has non-positive area"));
            }
        }
        let mut count: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for t in &self.triangles {
            for (i, j) in [(0, 1), (1, 2), (2, 0)] {
                *count.entry(edge_key(t[i], t[j])).or_default() += 1;
            }
        }
        let tagged = self.boundary_edge_map();
        if tagged.len() != self.boundary_edges.len() {
            return fail("duplicate boundary edge".into());
        }
        for (k, &c) in &count {
            if c > 2 {
                return fail(format!("edge {k:?} shared by {c} triangles"));
            }
            if c == 1 && !tagged.contains_key(k) {
                return fail(format!("untagged boundary edge {k:?}"));
            }
            if c == 2 && tagged.contains_key(k) {
                return fail(format!("tagged edge {k:?} is interior"));
            }
        }
        for k in tagged.keys() {
            if !count.contains_key(k) {
                return fail(format!("tagged edge {k:?} is not a triangle edge"));
            }
        }
        let tau = self.domain.tau();
        let tags = self.vertex_tags();
        let mut seen0 = vec![false; self.vertices.len()];
        let mut seen1 = vec![false; self.vertices.len()];
        for &(i, j) in &self.periodic_pairs {
            let (a, b) = (self.vertices[i], self.vertices[j]);
            if (b.x - a.x).abs() > 1e-12 || (b.y - a.y - tau).abs() > 1e-12 {
                return fail(format!("periodic pair ({i}, {j}) is not a tau-translate"));
            }
            if seen0[i] || seen1[j] {
                return fail(format!("periodic pair ({i}, {j}) is not a bijection"));
            }
            seen0[i] = true;
            seen1[j] = true;
        }
        for (v, t) in tags.iter().enumerate() {
            if t.contains(&SegmentTag::Per0) && !seen0[v] {
                return fail(format!("Γ_0 vertex {v} has no partner"));
            }
            if t.contains(&SegmentTag::Per1) && !seen1[v] {
                return fail(format!("Γ_1 vertex {v} has no partner"));
            }
        }
        Ok(())
    }

    /// Uniform red refinement: every triangle splits into four, boundary midpoints
    /// are moved onto the exact curves.
    pub fn refine(&self) -> Mesh {
        let dom = &self.domain;
        let btags = self.boundary_edge_map();
        let cut_edges: BTreeMap<(usize, usize), ()> = self
            .cut
            .iter()
            .flat_map(|c| c.vertices.windows(2).map(|w| (edge_key(w[0], w[1]), ())))
            .collect();
        let partner: HashMap<usize, usize> =
            self.periodic_pairs.iter().map(|&(a, b)| (b, a)).collect();

        let mut vertices = self.vertices.clone();
        let mut mid: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut new_mid = |a: usize, b: usize, vertices: &mut Vec<Point>| -> usize {
            let key = edge_key(a, b);
            if let Some(&m) = mid.get(&key) {
                return m;
            }
            let (pa, pb) = (self.vertices[a], self.vertices[b]);
            let xm = 0.5 * (pa.x + pb.x);
            let p = match btags.get(&key) {
                Some(SegmentTag::Profile) => {
                    let ta = dom.profile().closest_param(pa);
                    let tb = dom.profile().closest_param(pb);
                    let mut dt = tb - ta;
                    dt -= dt.round();
                    dom.profile().point(ta + 0.5 * dt)
                }
                Some(SegmentTag::Per0) => Point::new(xm, dom.lower(xm)),
                Some(SegmentTag::Per1) => {
                    let (qa, qb) = (partner[&a], partner[&b]);
                    let q = self.vertices[qa].midpoint(self.vertices[qb]);
                    let xq = q.x;
                    Point::new(xq, dom.lower(xq) + dom.tau())
                }
                _ if cut_edges.contains_key(&key) => {
                    let off = self.cut.as_ref().map(|c| c.offset).unwrap_or(0.0);
                    Point::new(xm, dom.lower(xm) + off)
                }
                _ => pa.midpoint(pb),
            };
            vertices.push(p);
            mid.insert(key, vertices.len() - 1);
            vertices.len() - 1
        };

        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for &[a, b, c] in &self.triangles {
            let ab = new_mid(a, b, &mut vertices);
            let bc = new_mid(b, c, &mut vertices);
            let ca = new_mid(c, a, &mut vertices);
            triangles.push([a, ab, ca]);
            triangles.push([ab, b, bc]);
            triangles.push([ca, bc, c]);
            triangles.push([ab, bc, ca]);
        }
        let mut boundary_edges = Vec::with_capacity(2 * self.boundary_edges.len());
        for e in &self.boundary_edges {
            let m = mid[&edge_key(e.v[0], e.v[1])];
            boundary_edges.push(BoundaryEdge { v: [e.v[0], m], tag: e.tag });
            boundary_edges.push(BoundaryEdge { v: [m, e.v[1]], tag: e.tag });
        }
        let mut periodic_pairs = self.periodic_pairs.clone();
        let pair_of: HashMap<usize, usize> = self.periodic_pairs.iter().copied().collect();
        for e in &self.boundary_edges {
            if e.tag == SegmentTag::Per0 {
                let (p, q) = (pair_of[&e.v[0]], pair_of[&e.v[1]]);
                periodic_pairs
                    .push((mid[&edge_key(e.v[0], e.v[1])], mid[&edge_key(p, q)]));
            }
        }
        periodic_pairs.sort_by(|a, b| {
            vertices[a.0].x.total_cmp(&vertices[b.0].x).then(a.0.cmp(&b.0))
        });
        let cut = self.cut.as_ref().map(|c| {
            let mut vs = Vec::with_capacity(2 * c.vertices.len());
            for w in c.vertices.windows(2) {
                vs.push(w[0]);
                vs.push(mid[&edge_key(w[0], w[1])]);
            }
            vs.extend(c.vertices.last());
            CutLine { offset: c.offset, vertices: vs }
        });
        Mesh { domain: self.domain.clone(), vertices, triangles, boundary_edges, periodic_pairs, cut }
    }

    /// Splits every triangle whose three vertices lie on the boundary or the cut
    /// line at its centroid, so each triangle keeps an interior vertex (and the
    /// property survives red refinement).
    fn split_boundary_triangles(mut self) -> Mesh {
        let mut on_bdry = vec![false; self.vertices.len()];
        for e in &self.boundary_edges {
            on_bdry[e.v[0]] = true;
            on_bdry[e.v[1]] = true;
        }
        if let Some(c) = &self.cut {
            for &v in &c.vertices {
                on_bdry[v] = true;
            }
        }
        let mut tris = Vec::with_capacity(self.triangles.len());
        for &[a, b, c] in &self.triangles {
            if on_bdry[a] && on_bdry[b] && on_bdry[c] {
                let z = self.vertices.len();
                let p = self.triangle_points_of([a, b, c]);
                self.vertices.push((p[0] + p[1] + p[2]) * (1.0 / 3.0));
                tris.extend([[a, b, z], [b, c, z], [c, a, z]]);
            } else {
                tris.push([a, b, c]);
            }
        }
        self.triangles = tris;
        self
    }

    fn triangle_points_of(&self, t: [usize; 3]) -> [Point; 3] {
        t.map(|v| self.vertices[v])
    }

    pub fn refine_n(&self, levels: usize) -> Mesh {
        let mut m = self.clone();
        for _ in 0..levels {
            m = m.refine();
        }
        m
    }

    /// Builds the mesh of the shifted period `Ω^δ`: the strip between `Γ_0` and the
    /// cut line is translated by `τ e2` and glued to `Γ_1`.
    pub fn shift_window(&self, dom: &CascadeDomain, delta: f64) -> Result<Mesh> {
        if delta == 0.0 {
            return Ok(self.clone());
        }
        let cut = self.cut.as_ref().ok_or(Error::NoCutLine)?;
        if (cut.offset - delta).abs() > 1e-12 * dom.tau() {
            return Err(Error::NoCutLine);
        }
        if !(delta > 0.0 && delta < dom.tau()) {
            return Err(Error::InvalidDomain(format!("shift {delta} outside (0, tau)")));
        }
        check_profile_above(dom, delta)?;
        let tau = dom.tau();
        let on_cut: BTreeMap<usize, ()> = cut.vertices.iter().map(|&v| (v, ())).collect();
        let pair_of: HashMap<usize, usize> = self.periodic_pairs.iter().copied().collect();
        let below = |t: &[usize; 3]| {
            let c = (self.vertices[t[0]] + self.vertices[t[1]] + self.vertices[t[2]]) * (1.0 / 3.0);
            c.y < dom.lower(c.x) + delta
        };
        let lower_tri: Vec<bool> = self.triangles.iter().map(below).collect();
        let mut is_lower_vertex = vec![false; self.vertices.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            if lower_tri[t] {
                for &v in tri {
                    if !on_cut.contains_key(&v) {
                        is_lower_vertex[v] = true;
                    }
                }
            }
        }
        let mut vertices = self.vertices.clone();
        let mut remap: Vec<usize> = (0..vertices.len()).collect();
        for v in 0..vertices.len() {
            if is_lower_vertex[v] {
                if let Some(&p) = pair_of.get(&v) {
                    remap[v] = p;
                } else {
                    vertices[v] = vertices[v] + Point::new(0.0, tau);
                }
            }
        }
        let mut cut_copy: BTreeMap<usize, usize> = BTreeMap::new();
        for &c in &cut.vertices {
            vertices.push(self.vertices[c] + Point::new(0.0, tau));
            cut_copy.insert(c, vertices.len() - 1);
        }
        let map_lower = |v: usize| -> usize {
            if let Some(&c) = cut_copy.get(&v) {
                c
            } else {
                remap[v]
            }
        };
        let triangles: Vec<[usize; 3]> = self
            .triangles
            .iter()
            .zip(&lower_tri)
            .map(|(t, &low)| if low { t.map(map_lower) } else { *t })
            .collect();
        let mut boundary_edges = Vec::new();
        for e in &self.boundary_edges {
            match e.tag {
                SegmentTag::Per0 | SegmentTag::Per1 => {}
                _ => {
                    let c = self.vertices[e.v[0]].midpoint(self.vertices[e.v[1]]);
                    let low = c.y < dom.lower(c.x) + delta;
                    let v = if low { e.v.map(map_lower) } else { e.v };
                    boundary_edges.push(BoundaryEdge { v, tag: e.tag });
                }
            }
        }
        for w in cut.vertices.windows(2) {
            boundary_edges.push(BoundaryEdge { v: [w[0], w[1]], tag: SegmentTag::Per0 });
            boundary_edges
                .push(BoundaryEdge { v: [cut_copy[&w[0]], cut_copy[&w[1]]], tag: SegmentTag::Per1 });
        }
        let periodic_pairs: Vec<(usize, usize)> =
            cut.vertices.iter().map(|&c| (c, cut_copy[&c])).collect();
        let shifted = Mesh {
            domain: dom.shifted(delta)?,
            vertices,
            triangles,
            boundary_edges,
            periodic_pairs,
            cut: None,
        };
        Ok(shifted.compact())
    }

    /// Drops unreferenced vertices and renumbers in first-use order of the old numbering.
    fn compact(self) -> Mesh {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &v in t {
                used[v] = true;
            }
        }
        let mut new_index = vec![usize::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        for (v, &u) in used.iter().enumerate() {
            if u {
                new_index[v] = vertices.len();
                vertices.push(self.vertices[v]);
            }
        }
        let m = |v: usize| new_index[v];
        Mesh {
            domain: self.domain,
            vertices,
            triangles: self.triangles.iter().map(|t| t.map(m)).collect(),
            boundary_edges: self
                .boundary_edges
                .iter()
                .map(|e| BoundaryEdge { v: e.v.map(m), tag: e.tag })
                .collect(),
            periodic_pairs: self.periodic_pairs.iter().map(|&(a, b)| (m(a), m(b))).collect(),
            cut: self.cut.map(|c| CutLine {
                offset: c.offset,
                vertices: c.vertices.iter().map(|&v| m(v)).collect(),
            }),
        }
    }

    /// Doubles the mesh by reflection across `x1 = 0`. The original triangles keep
    /// their indices; reflected triangle `n + t` is the image of triangle `t`.
    pub fn mirror_across_inflow(&self) -> MirroredMesh {
        let n_orig = self.vertices.len();
        let tags = self.vertex_tags();
        let mut vertices = self.vertices.clone();
        let mut image = vec![0usize; n_orig];
        for v in 0..n_orig {
            if tags[v].contains(&SegmentTag::In) {
                image[v] = v;
            } else {
                let p = self.vertices[v];
                vertices.push(Point::new(-p.x, p.y));
                image[v] = vertices.len() - 1;
            }
        }
        let mut triangles = self.triangles.clone();
        for &[a, b, c] in &self.triangles {
            triangles.push([image[a], image[c], image[b]]);
        }
        let mut boundary_edges = Vec::new();
        for e in &self.boundary_edges {
            if e.tag != SegmentTag::In {
                boundary_edges.push(*e);
                boundary_edges.push(BoundaryEdge { v: [image[e.v[1]], image[e.v[0]]], tag: e.tag });
            }
        }
        MirroredMesh {
            mesh: Mesh {
                domain: self.domain.clone(),
                vertices,
                triangles,
                boundary_edges,
                periodic_pairs: Vec::new(),
                cut: None,
            },
            n_original_triangles: self.triangles.len(),
            vertex_image: image,
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let mut s = String::new();
        s.push_str("cascade-mesh v1\n");
        let _ = writeln!(s, "V {}", self.vertices.len());
        for p in &self.vertices {
            let _ = writeln!(s, "{:.16e} {:.16e}", p.x, p.y);
        }
        let _ = writeln!(s, "T {}", self.triangles.len());
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        let _ = writeln!(s, "E {}", self.boundary_edges.len());
        for e in &self.boundary_edges {
            let _ = writeln!(s, "{} {} {}", e.v[0], e.v[1], e.tag);
        }
        let _ = writeln!(s, "P {}", self.periodic_pairs.len());
        for (a, b) in &self.periodic_pairs {
            let _ = writeln!(s, "{a} {b}");
        }
        w.write_all(s.as_bytes())?;
        Ok(())
    }

    /// Reads a mesh file; the domain description is not part of the file and must be supplied.
    pub fn read_from<R: Read>(r: R, domain: CascadeDomain) -> Result<Mesh> {
        let reader = BufReader::new(r);
        let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = || -> Result<(usize, String)> {
            match lines.next() {
                Some((n, Ok(l))) => Ok((n, l)),
                Some((_, Err(e))) => Err(e.into()),
                None => Err(Error::Parse { line: 0, msg: "unexpected end of file".into() }),
            }
        };
        let perr = |line: usize, msg: &str| Error::Parse { line, msg: msg.to_string() };
        let (n, header) = next()?;
        if header.trim() != "cascade-mesh v1" {
            return Err(perr(n, "expected header `cascade-mesh v1`"));
        }
        let section = |key: &str, next: &mut dyn FnMut() -> Result<(usize, String)>| -> Result<Vec<(usize, Vec<String>)>> {
            let (n, l) = next()?;
            let mut it = l.split_whitespace();
            if it.next() != Some(key) {
                return Err(perr(n, &format!("expected section `{key}`")));
            }
            let count: usize = it
                .next()
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| perr(n, "bad section count"))?;
            let mut rows = Vec::with_capacity(count);
            for _ in 0..count {
                let (n, l) = next()?;
                rows.push((n, l.split_whitespace().map(str::to_string).collect()));
            }
            Ok(rows)
        };
        let num = |n: usize, s: &str| -> Result<f64> { s.parse().map_err(|_| perr(n, "bad number")) };
        let idx = |n: usize, s: &str| -> Result<usize> { s.parse().map_err(|_| perr(n, "bad index")) };
        let mut vertices = Vec::new();
        for (n, f) in section("V", &mut next)? {
            if f.len() != 2 {
                return Err(perr(n, "vertex line needs 2 fields"));
            }
            vertices.push(Point::new(num(n, &f[0])?, num(n, &f[1])?));
        }
        let nv = vertices.len();
        let check = |n: usize, v: usize| if v < nv { Ok(v) } else { Err(perr(n, "vertex index out of range")) };
        let mut triangles = Vec::new();
        for (n, f) in section("T", &mut next)? {
            if f.len() != 3 {
                return Err(perr(n, "triangle line needs 3 fields"));
            }
            triangles.push([
                check(n, idx(n, &f[0])?)?,
                check(n, idx(n, &f[1])?)?,
                check(n, idx(n, &f[2])?)?,
            ]);
        }
        let mut boundary_edges = Vec::new();
        for (n, f) in section("E", &mut next)? {
            if f.len() != 3 {
                return Err(perr(n, "edge line needs 3 fields"));
            }
            let tag = SegmentTag::parse(&f[2]).ok_or_else(|| perr(n, "unknown segment tag"))?;
            boundary_edges.push(BoundaryEdge {
                v: [check(n, idx(n, &f[0])?)?, check(n, idx(n, &f[1])?)?],
                tag,
            });
        }
        let mut periodic_pairs = Vec::new();
        for (n, f) in section("P", &mut next)? {
            if f.len() != 2 {
                return Err(perr(n, "pair line needs 2 fields"));
            }
            periodic_pairs.push((check(n, idx(n, &f[0])?)?, check(n, idx(n, &f[1])?)?));
        }
        let mesh = Mesh { domain, vertices, triangles, boundary_edges, periodic_pairs, cut: None };
        mesh.validate()?;
        Ok(mesh)
    }
}

/// Mesh of `Ω ∪ Γ_in ∪ S(Ω)` with `S` the reflection `x1 ↦ −x1`.
#[derive(Clone, Debug)]
pub struct MirroredMesh {
    pub mesh: Mesh,
    pub n_original_triangles: usize,
    /// Index of the reflected copy of each original vertex (itself on `Γ_in`).
    pub vertex_image: Vec<usize>,
}

pub fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn check_profile_above(dom: &CascadeDomain, delta: f64) -> Result<()> {
    if dom.profile().is_empty() {
        return Ok(());
    }
    for p in dom.profile().polyline(1024) {
        if p.y <= dom.lower(p.x) + delta {
            return Err(Error::StripHitsProfile(format!(
                "profile point ({:.4}, {:.4}) is not above the cut at offset {delta}",
                p.x, p.y
            )));
        }
    }
    Ok(())
}

fn uniform(n: usize, a: Point, b: Point) -> Vec<Point> {
    (0..=n).map(|k| a + (b - a) * (k as f64 / n as f64)).collect()
}

fn count(len: f64, h: f64) -> usize {
    ((len / h).ceil() as usize).max(1)
}

/// Generates a quasi-uniform mesh with edge lengths about `target_h`.
pub fn generate_mesh(dom: &CascadeDomain, target_h: f64) -> Result<Mesh> {
    build_mesh(dom, target_h, None)
}

/// Like [`generate_mesh`], with an interior polyline at `Γ_0 + cut_offset·e2`.
pub fn generate_mesh_with_cut(dom: &CascadeDomain, target_h: f64, cut_offset: f64) -> Result<Mesh> {
    if !(cut_offset > 0.0 && cut_offset < dom.tau()) {
        return Err(Error::InvalidDomain(format!("cut offset {cut_offset} outside (0, tau)")));
    }
    check_profile_above(dom, cut_offset)?;
    build_mesh(dom, target_h, Some(cut_offset))
}

fn build_mesh(dom: &CascadeDomain, target_h: f64, cut: Option<f64>) -> Result<Mesh> {
    if !(target_h > 0.0) {
        return Err(Error::MeshFailure(format!("target_h must be positive, got {target_h}")));
    }
    let profile = dom.profile();
    let perimeter = profile.perimeter();
    if !profile.is_empty() && target_h > perimeter / 8.0 {
        return Err(Error::MeshFailure(format!(
            "target_h {target_h} cannot resolve a profile of perimeter {perimeter:.4}"
        )));
    }
    let (d, tau) = (dom.d(), dom.tau());
    let (a02, b02) = (dom.a02(), dom.b02());

    // Γ_0 nodes: uniform in x1 with the count set by arc length; Γ_1 copies them.
    let arc = {
        let n = 1024;
        (0..n)
            .map(|k| {
                let x0 = d * k as f64 / n as f64;
                let x1 = d * (k + 1) as f64 / n as f64;
                Point::new(x0, dom.lower(x0)).dist(Point::new(x1, dom.lower(x1)))
            })
            .sum::<f64>()
    };
    let n0 = count(arc, target_h);
    let xs: Vec<f64> = (0..=n0).map(|k| d * k as f64 / n0 as f64).collect();
    let g0: Vec<Point> = xs.iter().map(|&x| Point::new(x, dom.lower(x))).collect();
    let g1: Vec<Point> = g0.iter().map(|p| Point::new(p.x, p.y + tau)).collect();

    let side = |x: f64, y0: f64| -> Vec<Point> {
        match cut {
            Some(off) => {
                let lo = uniform(count(off, target_h), Point::new(x, y0), Point::new(x, y0 + off));
                let hi = uniform(
                    count(tau - off, target_h),
                    Point::new(x, y0 + off),
                    Point::new(x, y0 + tau),
                );
                lo.into_iter().chain(hi.into_iter().skip(1)).collect()
            }
            None => uniform(count(tau, target_h), Point::new(x, y0), Point::new(x, y0 + tau)),
        }
    };
    let inflow = side(0.0, a02);
    let outflow = side(d, b02);
    let cut_pts: Vec<Point> = match cut {
        Some(off) => xs.iter().map(|&x| Point::new(x, dom.lower(x) + off)).collect(),
        None => Vec::new(),
    };
    let prof: Vec<Point> = if profile.is_empty() {
        Vec::new()
    } else {
        let n = ((perimeter / target_h).ceil() as usize).max(16);
        profile.arclength_points(n).into_iter().map(|(_, p)| p).collect()
    };

    // Insertion order fixes the vertex indices of all boundary points.
    let mut pts: Vec<Point> = Vec::new();
    let g0_idx: Vec<usize> = push_all(&mut pts, &g0);
    let g1_idx: Vec<usize> = push_all(&mut pts, &g1);
    let mut in_idx = vec![g0_idx[0]];
    in_idx.extend(push_all(&mut pts, &inflow[1..inflow.len() - 1]));
    in_idx.push(g1_idx[0]);
    let mut out_idx = vec![g0_idx[n0]];
    out_idx.extend(push_all(&mut pts, &outflow[1..outflow.len() - 1]));
    out_idx.push(g1_idx[n0]);
    let mut cut_idx = Vec::new();
    if let Some(off) = cut {
        let find = |idx: &[usize]| {
            *idx.iter()
                .min_by(|&&a, &&b| {
                    let ya = (pts[a].y - (pts[idx[0]].y + off)).abs();
                    let yb = (pts[b].y - (pts[idx[0]].y + off)).abs();
                    ya.total_cmp(&yb)
                })
                .unwrap()
        };
        let left = find(&in_idx);
        let right = find(&out_idx);
        cut_idx.push(left);
        cut_idx.extend(push_all(&mut pts, &cut_pts[1..n0]));
        cut_idx.push(right);
    }
    let prof_idx = push_all(&mut pts, &prof);
    // Unconstrained frame around the period. Without it the hull gap between a
    // nearly collinear slanted Γ_0 and its chord fills with slivers.
    let frame = frame_points(&pts, target_h);
    push_all(&mut pts, &frame);

    let mut chains: Vec<(Vec<usize>, Option<SegmentTag>, bool)> = vec![
        (g0_idx.clone(), Some(SegmentTag::Per0), false),
        (g1_idx.clone(), Some(SegmentTag::Per1), false),
        (in_idx.clone(), Some(SegmentTag::In), false),
        (out_idx.clone(), Some(SegmentTag::Out), false),
    ];
    if !cut_idx.is_empty() {
        chains.push((cut_idx.clone(), None, false));
    }
    if !prof_idx.is_empty() {
        chains.push((prof_idx.clone(), Some(SegmentTag::Profile), true));
    }

    let mut cdt: ConstrainedDelaunayTriangulation<Point2<f64>> =
        ConstrainedDelaunayTriangulation::new();
    let mut handles = Vec::with_capacity(pts.len());
    for p in &pts {
        let h = cdt
            .insert(Point2::new(p.x, p.y))
            .map_err(|e| Error::MeshFailure(format!("vertex insertion failed: {e:?}")))?;
        handles.push(h);
    }
    for (i, h) in handles.iter().enumerate() {
        if h.index() != i {
            return Err(Error::MeshFailure("coincident boundary points".into()));
        }
    }
    for (chain, _, closed) in &chains {
        let m = chain.len();
        let segs = if *closed { m } else { m - 1 };
        for k in 0..segs {
            let (a, b) = (chain[k], chain[(k + 1) % m]);
            if !cdt.can_add_constraint(handles[a], handles[b]) {
                return Err(Error::MeshFailure(format!(
                    "boundary segment {a}-{b} crosses another constraint"
                )));
            }
            cdt.add_constraint(handles[a], handles[b]);
        }
    }
    let max_area = 3f64.sqrt() / 4.0 * target_h * target_h;
    let estimate = (dom.area() / (0.5 * max_area)) as usize * 2 + 4 * pts.len() + 1000;
    let params = RefinementParameters::<f64>::new()
        .with_max_allowed_area(max_area)
        .with_angle_limit(AngleLimit::from_deg(25.0))
        .with_max_additional_vertices(estimate)
        .keep_constraint_edges()
        .exclude_outer_faces(false);
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| cdt.refine(params)))
        .map_err(|_| Error::MeshFailure("constrained refinement aborted".into()))?;
    if !result.refinement_complete {
        return Err(Error::MeshFailure("refinement vertex budget exhausted".into()));
    }

    let outer: Vec<Point> = g0
        .iter()
        .copied()
        .chain(outflow[1..].iter().copied())
        .chain(g1.iter().rev().skip(1).copied())
        .chain(inflow.iter().rev().skip(1).take(inflow.len() - 2).copied())
        .collect();
    let all_vertices: Vec<Point> = cdt
        .vertices()
        .map(|v| {
            let p = v.position();
            Point::new(p.x, p.y)
        })
        .collect();
    let mut triangles = Vec::new();
    for f in cdt.inner_faces() {
        let vs = f.vertices().map(|v| v.fix().index());
        let c = (all_vertices[vs[0]] + all_vertices[vs[1]] + all_vertices[vs[2]]) * (1.0 / 3.0);
        if point_in_polygon(c, &outer) && (prof.is_empty() || !point_in_polygon(c, &prof)) {
            triangles.push(vs);
        }
    }

    let mut boundary_edges = Vec::new();
    for (chain, tag, closed) in &chains {
        let Some(tag) = tag else { continue };
        let m = chain.len();
        let segs = if *closed { m } else { m - 1 };
        for k in 0..segs {
            boundary_edges.push(BoundaryEdge { v: [chain[k], chain[(k + 1) % m]], tag: *tag });
        }
    }
    let periodic_pairs: Vec<(usize, usize)> =
        g0_idx.iter().copied().zip(g1_idx.iter().copied()).collect();
    let cut_line = cut.map(|off| CutLine { offset: off, vertices: cut_idx.clone() });

    let mesh = Mesh {
        domain: dom.clone(),
        vertices: all_vertices,
        triangles,
        boundary_edges,
        periodic_pairs,
        cut: cut_line,
    }
    .compact()
    .split_boundary_triangles();
    mesh.validate()?;
    let tol = 1e-8 * mesh.total_area().abs().max(1.0);
    let area_gap = (mesh.total_area() - (shoelace(&outer).abs() - shoelace(&prof).abs())).abs();
    if area_gap > tol {
        return Err(Error::MeshFailure(format!("triangulation misses area {area_gap:e}")));
    }
    Ok(mesh)
}

/// Points spaced about `h` on a rectangle `2h` outside the bounding box of `pts`.
fn frame_points(pts: &[Point], h: f64) -> Vec<Point> {
    let (mut lo, mut hi) = (pts[0], pts[0]);
    for p in pts {
        lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let m = 2.0 * h;
    let (lo, hi) = (lo - Point::new(m, m), hi + Point::new(m, m));
    let corners = [lo, Point::new(hi.x, lo.y), hi, Point::new(lo.x, hi.y)];
    let mut out = Vec::new();
    for k in 0..4 {
        let (a, b) = (corners[k], corners[(k + 1) % 4]);
        let n = count(a.dist(b), h);
        out.extend((0..n).map(|i| a + (b - a) * (i as f64 / n as f64)));
    }
    out
}

fn push_all(pts: &mut Vec<Point>, new: &[Point]) -> Vec<usize> {
    new.iter()
        .map(|&p| {
            pts.push(p);
            pts.len() - 1
        })
        .collect()
}

fn shoelace(poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| poly[i].cross(poly[(i + 1) % n])).sum::<f64>() * 0.5
}

/// Uniform bucket grid for point location.
pub struct Locator<'a> {
    mesh: &'a Mesh,
    lo: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl<'a> Locator<'a> {
    pub fn new(mesh: &'a Mesh) -> Self {
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &mesh.vertices {
            lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let n = (mesh.triangles.len() as f64).sqrt().ceil().max(1.0);
        let cell = ((hi.x - lo.x).max(hi.y - lo.y) / n).max(1e-12);
        let nx = ((hi.x - lo.x) / cell).floor() as usize + 1;
        let ny = ((hi.y - lo.y) / cell).floor() as usize + 1;
        let mut buckets = vec![Vec::new(); nx * ny];
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let ps = tri.map(|v| mesh.vertices[v]);
            let (x0, x1) = (ps.iter().map(|p| p.x).fold(f64::INFINITY, f64::min), ps.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max));
            let (y0, y1) = (ps.iter().map(|p| p.y).fold(f64::INFINITY, f64::min), ps.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max));
            let (i0, i1) = (((x0 - lo.x) / cell) as usize, (((x1 - lo.x) / cell) as usize).min(nx - 1));
            let (j0, j1) = (((y0 - lo.y) / cell) as usize, (((y1 - lo.y) / cell) as usize).min(ny - 1));
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * nx + i].push(t);
                }
            }
        }
        Self { mesh, lo, cell, nx, ny, buckets }
    }

    /// Triangle containing `p` and its barycentric coordinates; points within
    /// `tol` (in barycentric units) outside a triangle still count.
    pub fn locate(&self, p: Point, tol: f64) -> Option<(usize, [f64; 3])> {
        let i = (p.x - self.lo.x) / self.cell;
        let j = (p.y - self.lo.y) / self.cell;
        if i < -1.0 || j < -1.0 {
            return None;
        }
        let i = (i.max(0.0) as usize).min(self.nx - 1);
        let j = (j.max(0.0) as usize).min(self.ny - 1);
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for &t in &self.buckets[j * self.nx + i] {
            let [a, b, c] = self.mesh.triangle_points(t);
            let det = (b - a).cross(c - a);
            let l1 = (p - a).cross(c - a) / det;
            let l2 = (b - a).cross(p - a) / det;
            let l = [1.0 - l1 - l2, l1, l2];
            let m = l[0].min(l[1]).min(l[2]);
            if m >= 0.0 {
                return Some((t, l));
            }
            if best.is_none_or(|(_, _, bm)| m > bm) {
                best = Some((t, l, m));
            }
        }
        best.filter(|&(_, _, m)| m >= -tol).map(|(t, l, _)| (t, l))
    }
}

/// Returns `true` when `p` lies on the profile curve up to `tol`.
pub fn on_profile(profile: &ProfileCurve, p: Point, tol: f64) -> bool {
    !profile.is_empty() && profile.distance(p) <= tol
}
