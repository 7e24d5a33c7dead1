//! Reference P2/P1 triangle: basis functions, affine maps and quadrature.
//!
//! Local P2 node order is `v0, v1, v2, m01, m12, m20`.

use crate::geometry::Point;

/// Seven-point degree-5 rule on the reference triangle; weights sum to 1/2.
pub struct TriQuad {
    pub points: [(f64, f64); 7],
    pub weights: [f64; 7],
}

pub fn tri_quad7() -> TriQuad {
    let s15 = 15f64.sqrt();
    let a1 = (6.0 - s15) / 21.0;
    let a2 = (6.0 + s15) / 21.0;
    let w0 = 9.0 / 40.0;
    let w1 = (155.0 - s15) / 1200.0;
    let w2 = (155.0 + s15) / 1200.0;
    let third = 1.0 / 3.0;
    TriQuad {
        points: [
            (third, third),
            (a1, a1),
            (1.0 - 2.0 * a1, a1),
            (a1, 1.0 - 2.0 * a1),
            (a2, a2),
            (1.0 - 2.0 * a2, a2),
            (a2, 1.0 - 2.0 * a2),
        ],
        weights: [
            0.5 * w0,
            0.5 * w1,
            0.5 * w1,
            0.5 * w1,
            0.5 * w2,
            0.5 * w2,
            0.5 * w2,
        ],
    }
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre01(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (1.0 - x), 0.5 * w));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Barycentric coordinates of reference point `(xi, eta)`.
pub fn bary(xi: f64, eta: f64) -> [f64; 3] {
    [1.0 - xi - eta, xi, eta]
}

pub const EDGES: [(usize, usize); 3] = [(0, 1), (1, 2), (2, 0)];

pub fn p2_values(l: [f64; 3]) -> [f64; 6] {
    [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[0] * l[1],
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
    ]
}

pub fn p1_values(l: [f64; 3]) -> [f64; 3] {
    l
}

/// Affine element map with cached barycentric gradients.
#[derive(Clone, Copy, Debug)]
pub struct Affine {
    pub v: [Point; 3],
    pub det: f64,
    /// Gradients of λ0, λ1, λ2 in physical coordinates.
    pub grad_l: [Point; 3],
}

impl Affine {
    pub fn new(v: [Point; 3]) -> Self {
        let e1 = v[1] - v[0];
        let e2 = v[2] - v[0];
        let det = e1.cross(e2);
        let inv = 1.0 / det;
        let g1 = Point::new(e2.y * inv, -e2.x * inv);
        let g2 = Point::new(-e1.y * inv, e1.x * inv);
        let g0 = -(g1 + g2);
        Self { v, det, grad_l: [g0, g1, g2] }
    }

    pub fn area(&self) -> f64 {
        0.5 * self.det.abs()
    }

    pub fn map(&self, l: [f64; 3]) -> Point {
        self.v[0] * l[0] + self.v[1] * l[1] + self.v[2] * l[2]
    }

    /// Physical gradients of the six P2 basis functions.
    pub fn p2_grads(&self, l: [f64; 3]) -> [Point; 6] {
        let g = self.grad_l;
        [
            g[0] * (4.0 * l[0] - 1.0),
            g[1] * (4.0 * l[1] - 1.0),
            g[2] * (4.0 * l[2] - 1.0),
            (g[0] * l[1] + g[1] * l[0]) * 4.0,
            (g[1] * l[2] + g[2] * l[1]) * 4.0,
            (g[2] * l[0] + g[0] * l[2]) * 4.0,
        ]
    }

    /// Physical Hessians `(xx, xy, yy)` of the P2 basis functions (constant per element).
    pub fn p2_hessians(&self) -> [[f64; 3]; 6] {
        let g = self.grad_l;
        let outer = |a: Point, b: Point| [a.x * b.x, 0.5 * (a.x * b.y + a.y * b.x), a.y * b.y];
        let sym = |a: Point, b: Point| {
            let p = outer(a, b);
            [8.0 * p[0], 8.0 * p[1], 8.0 * p[2]]
        };
        let diag = |a: Point| {
            let p = outer(a, a);
            [4.0 * p[0], 4.0 * p[1], 4.0 * p[2]]
        };
        [
            diag(g[0]),
            diag(g[1]),
            diag(g[2]),
            sym(g[0], g[1]),
            sym(g[1], g[2]),
            sym(g[2], g[0]),
        ]
    }

    /// Barycentric coordinates of physical point `p`.
    pub fn barycentric(&self, p: Point) -> [f64; 3] {
        let r = p - self.v[0];
        let l1 = self.grad_l[1].dot(r);
        let l2 = self.grad_l[2].dot(r);
        [1.0 - l1 - l2, l1, l2]
    }
}
