//! One spatial period of a profile cascade.
//!
//! The period is the strip `0 < x1 < d` cut by a lower artificial curve
//! `Γ_0` (a graph over `x1`), its translate `Γ_1 = Γ_0 + τ e2`, and with the
//! profile `P_0` removed. Its boundary splits into the inflow segment, the
//! outflow segment, the two periodic curves and the profile curve.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Point) -> f64 {
        (self - other).norm()
    }

    pub fn midpoint(self, other: Point) -> Point {
        Point::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

impl Neg for Point {
    type Output = Point;
    fn neg(self) -> Point {
        Point::new(-self.x, -self.y)
    }
}

/// Boundary piece of the period.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SegmentTag {
    In,
    Out,
    Per0,
    Per1,
    Profile,
}

impl SegmentTag {
    pub const ALL: [SegmentTag; 5] = [
        SegmentTag::In,
        SegmentTag::Out,
        SegmentTag::Per0,
        SegmentTag::Per1,
        SegmentTag::Profile,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SegmentTag::In => "IN",
            SegmentTag::Out => "OUT",
            SegmentTag::Per0 => "PER0",
            SegmentTag::Per1 => "PER1",
            SegmentTag::Profile => "PROFILE",
        }
    }

    pub fn parse(s: &str) -> Option<SegmentTag> {
        SegmentTag::ALL.into_iter().find(|t| t.as_str() == s)
    }

    /// Corner resolution order: lower wins.
    fn priority(self) -> u8 {
        match self {
            SegmentTag::In | SegmentTag::Out => 0,
            SegmentTag::Profile => 1,
            SegmentTag::Per0 | SegmentTag::Per1 => 2,
        }
    }
}

impl fmt::Display for SegmentTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Lower artificial boundary `Γ_0`, described as a graph `x2 = c(x1)` on `[0, d]`.
#[derive(Clone, Debug, PartialEq)]
pub enum PeriodicCurve {
    /// Straight segment from `(0, a02)` to `(d, b02)`.
    Straight { a02: f64, b02: f64 },
    /// Straight segment plus `amplitude * sin(pi x1 / d)`.
    Sinusoidal { a02: f64, b02: f64, amplitude: f64 },
}

impl PeriodicCurve {
    pub fn straight(a02: f64, b02: f64) -> Self {
        PeriodicCurve::Straight { a02, b02 }
    }

    pub fn a02(&self) -> f64 {
        match *self {
            PeriodicCurve::Straight { a02, .. } | PeriodicCurve::Sinusoidal { a02, .. } => a02,
        }
    }

    pub fn b02(&self) -> f64 {
        match *self {
            PeriodicCurve::Straight { b02, .. } | PeriodicCurve::Sinusoidal { b02, .. } => b02,
        }
    }

    /// Height of the curve at `x1`, for a strip of width `d`.
    pub fn height(&self, x1: f64, d: f64) -> f64 {
        match *self {
            PeriodicCurve::Straight { a02, b02 } => a02 + (b02 - a02) * x1 / d,
            PeriodicCurve::Sinusoidal { a02, b02, amplitude } => {
                a02 + (b02 - a02) * x1 / d + amplitude * (PI * x1 / d).sin()
            }
        }
    }

    pub fn slope(&self, x1: f64, d: f64) -> f64 {
        match *self {
            PeriodicCurve::Straight { a02, b02 } => (b02 - a02) / d,
            PeriodicCurve::Sinusoidal { a02, b02, amplitude } => {
                (b02 - a02) / d + amplitude * PI / d * (PI * x1 / d).cos()
            }
        }
    }

    pub fn is_straight(&self) -> bool {
        matches!(self, PeriodicCurve::Straight { .. })
    }
}

/// Closed periodic cubic spline through control points, parametrized uniformly on `[0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicSpline {
    knots: Vec<Point>,
    second: Vec<Point>,
}

impl PeriodicSpline {
    pub fn new(knots: Vec<Point>) -> Result<Self> {
        let n = knots.len();
        if n < 4 {
            return Err(Error::DegenerateCurve(format!(
                "periodic spline needs at least 4 control points, got {n}"
            )));
        }
        let h = 1.0 / n as f64;
        // M_{k-1} + 4 M_k + M_{k+1} = 6 (y_{k+1} - 2 y_k + y_{k-1}) / h^2, cyclic.
        let mut mat = vec![vec![0.0; n]; n];
        for k in 0..n {
            mat[k][(k + n - 1) % n] += 1.0;
            mat[k][k] += 4.0;
            mat[k][(k + 1) % n] += 1.0;
        }
        let rhs = |coord: fn(Point) -> f64| -> Vec<f64> {
            (0..n)
                .map(|k| {
                    let yp = coord(knots[(k + 1) % n]);
                    let y0 = coord(knots[k]);
                    let ym = coord(knots[(k + n - 1) % n]);
                    6.0 * (yp - 2.0 * y0 + ym) / (h * h)
                })
                .collect()
        };
        let mx = dense_solve(mat.clone(), rhs(|p| p.x));
        let my = dense_solve(mat, rhs(|p| p.y));
        let second = mx.into_iter().zip(my).map(|(x, y)| Point::new(x, y)).collect();
        Ok(Self { knots, second })
    }

    pub fn knots(&self) -> &[Point] {
        &self.knots
    }

    fn segment(&self, t: f64) -> (usize, f64, f64) {
        let n = self.knots.len();
        let s = t.rem_euclid(1.0) * n as f64;
        let k = (s.floor() as usize).min(n - 1);
        (k, s - k as f64, 1.0 / n as f64)
    }

    /// Value and first two derivatives with respect to `t`.
    fn eval(&self, t: f64) -> [Point; 3] {
        let n = self.knots.len();
        let (k, u, h) = self.segment(t);
        let (y0, y1) = (self.knots[k], self.knots[(k + 1) % n]);
        let (m0, m1) = (self.second[k], self.second[(k + 1) % n]);
        let a = 1.0 - u;
        let b = u;
        let val = y0 * a
            + y1 * b
            + (m0 * (a * a * a - a) + m1 * (b * b * b - b)) * (h * h / 6.0);
        let d1 = (y1 - y0) * (1.0 / h) + (m1 * (3.0 * b * b - 1.0) - m0 * (3.0 * a * a - 1.0)) * (h / 6.0);
        let d2 = m0 * a + m1 * b;
        [val, d1, d2]
    }
}

fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[row][c] -= f * a[col][c];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Closed profile curve `Γ_p`, or the degenerate empty profile used for channel tests.
#[derive(Clone, Debug, PartialEq)]
pub enum ProfileCurve {
    /// No profile: the period is a plain channel. Not a cascade geometry; exact-solution tests only.
    Empty,
    Circle { center: Point, radius: f64 },
    Ellipse { center: Point, semi_a: f64, semi_b: f64, angle: f64 },
    /// Joukowski image of an enlarged circle, so the trailing edge is rounded rather than cusped.
    Blade { center: Point, chord: f64, thickness: f64, camber: f64, angle: f64 },
    Spline(PeriodicSpline),
}

const SAMPLES: usize = 2048;

impl ProfileCurve {
    pub fn is_empty(&self) -> bool {
        matches!(self, ProfileCurve::Empty)
    }

    /// Position and first/second derivatives at parameter `t ∈ [0, 1)`.
    pub fn jet(&self, t: f64) -> [Point; 3] {
        let th = 2.0 * PI * t;
        let w = 2.0 * PI;
        match self {
            ProfileCurve::Empty => [Point::default(); 3],
            ProfileCurve::Circle { center, radius } => {
                let (s, c) = th.sin_cos();
                [
                    *center + Point::new(c, s) * *radius,
                    Point::new(-s, c) * (*radius * w),
                    Point::new(-c, -s) * (*radius * w * w),
                ]
            }
            ProfileCurve::Ellipse { center, semi_a, semi_b, angle } => {
                let (s, c) = th.sin_cos();
                let rot = |p: Point| rotate(p, *angle);
                [
                    *center + rot(Point::new(semi_a * c, semi_b * s)),
                    rot(Point::new(-semi_a * s, semi_b * c)) * w,
                    rot(Point::new(-semi_a * c, -semi_b * s)) * (w * w),
                ]
            }
            ProfileCurve::Blade { center, chord, thickness, camber, angle } => {
                let [z, dz, ddz] = joukowski_jet(*thickness, *camber, th);
                let scale = chord / 4.0;
                let rot = |p: Point| rotate(p, *angle);
                [
                    *center + rot(z * scale),
                    rot(dz * (scale * w)),
                    rot(ddz * (scale * w * w)),
                ]
            }
            ProfileCurve::Spline(sp) => sp.eval(t),
        }
    }

    pub fn point(&self, t: f64) -> Point {
        self.jet(t)[0]
    }

    pub fn polyline(&self, n: usize) -> Vec<Point> {
        (0..n).map(|k| self.point(k as f64 / n as f64)).collect()
    }

    pub fn perimeter(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let pts = self.polyline(SAMPLES);
        (0..SAMPLES).map(|k| pts[k].dist(pts[(k + 1) % SAMPLES])).sum()
    }

    /// `n` points equidistributed in arc length, with their curve parameters.
    pub fn arclength_points(&self, n: usize) -> Vec<(f64, Point)> {
        let fine = SAMPLES * 4;
        let pts = self.polyline(fine);
        let mut cum = vec![0.0; fine + 1];
        for k in 0..fine {
            cum[k + 1] = cum[k] + pts[k].dist(pts[(k + 1) % fine]);
        }
        let total = cum[fine];
        let mut out = Vec::with_capacity(n);
        let mut j = 0;
        for i in 0..n {
            let target = total * i as f64 / n as f64;
            while j + 1 < fine && cum[j + 1] < target {
                j += 1;
            }
            let seg = cum[j + 1] - cum[j];
            let frac = if seg > 0.0 { (target - cum[j]) / seg } else { 0.0 };
            let t = (j as f64 + frac) / fine as f64;
            out.push((t, self.point(t)));
        }
        out
    }

    /// Parameter of the closest curve point to `p`.
    pub fn closest_param(&self, p: Point) -> f64 {
        if let ProfileCurve::Circle { center, .. } = self {
            let v = p - *center;
            return (v.y.atan2(v.x) / (2.0 * PI)).rem_euclid(1.0);
        }
        let n = 1024;
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..n {
            let t = k as f64 / n as f64;
            let d = self.point(t).dist(p);
            if d < best.0 {
                best = (d, t);
            }
        }
        let mut t = best.1;
        for _ in 0..30 {
            let [x, dx, ddx] = self.jet(t);
            let r = x - p;
            let f = r.dot(dx);
            let fp = dx.dot(dx) + r.dot(ddx);
            if fp <= 0.0 {
                break;
            }
            let step = (f / fp).clamp(-0.5 / n as f64, 0.5 / n as f64);
            t -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        t.rem_euclid(1.0)
    }

    pub fn project(&self, p: Point) -> Point {
        self.point(self.closest_param(p))
    }

    /// Point-in-profile test against a fine polyline (exact for circles and ellipses).
    pub fn contains(&self, p: Point) -> bool {
        match self {
            ProfileCurve::Empty => false,
            ProfileCurve::Circle { center, radius } => p.dist(*center) < *radius,
            ProfileCurve::Ellipse { center, semi_a, semi_b, angle } => {
                let q = rotate(p - *center, -angle);
                (q.x / semi_a).powi(2) + (q.y / semi_b).powi(2) < 1.0
            }
            _ => point_in_polygon(p, &self.polyline(SAMPLES)),
        }
    }

    pub fn distance(&self, p: Point) -> f64 {
        if self.is_empty() {
            return f64::INFINITY;
        }
        p.dist(self.project(p))
    }

    /// Axis-aligned bounds `(min, max)` of the curve.
    pub fn bounds(&self) -> Option<(Point, Point)> {
        if self.is_empty() {
            return None;
        }
        let pts = self.polyline(SAMPLES);
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in pts {
            lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        Some((lo, hi))
    }

    /// Closedness, regular tangent and simple-curve checks.
    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Ok(());
        }
        match self {
            ProfileCurve::Circle { radius, .. } if *radius <= 0.0 => {
                return Err(Error::DegenerateCurve("circle radius must be positive".into()))
            }
            ProfileCurve::Ellipse { semi_a, semi_b, .. } if *semi_a <= 0.0 || *semi_b <= 0.0 => {
                return Err(Error::DegenerateCurve("ellipse semi-axes must be positive".into()))
            }
            ProfileCurve::Blade { chord, thickness, .. } if *chord <= 0.0 || *thickness <= 0.0 => {
                return Err(Error::DegenerateCurve(
                    "blade chord and thickness must be positive".into(),
                ))
            }
            _ => {}
        }
        let gap = self.point(0.0).dist(self.point(1.0 - 1e-15));
        let scale = self.perimeter().max(1.0);
        if gap > 1e-12 * scale + 1e-13 {
            return Err(Error::DegenerateCurve(format!("curve is not closed (gap {gap:e})")));
        }
        let n = 512;
        for k in 0..n {
            let t = k as f64 / n as f64;
            if self.jet(t)[1].norm() <= 1e-10 * scale {
                return Err(Error::DegenerateCurve(format!("tangent vanishes at t = {t}")));
            }
        }
        let poly = self.polyline(n);
        for i in 0..n {
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                if segments_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]) {
                    return Err(Error::DegenerateCurve("curve self-intersects".into()));
                }
            }
        }
        Ok(())
    }
}

fn rotate(p: Point, angle: f64) -> Point {
    let (s, c) = angle.sin_cos();
    Point::new(c * p.x - s * p.y, s * p.x + c * p.y)
}

/// `z = ζ + 1/ζ` on the circle `ζ = c0 + R e^{iθ}` with `R` slightly larger than the
/// circle through `ζ = 1`; returns `z, dz/dθ, d²z/dθ²`.
fn joukowski_jet(thickness: f64, camber: f64, th: f64) -> [Point; 3] {
    let eps = thickness;
    let mu = camber;
    let c0 = (-eps, mu);
    let r = ((1.0 + eps).powi(2) + mu * mu).sqrt() * 1.02;
    let (s, c) = th.sin_cos();
    let zeta = (c0.0 + r * c, c0.1 + r * s);
    let dzeta = (-r * s, r * c);
    let ddzeta = (-r * c, -r * s);
    let inv = cdiv((1.0, 0.0), zeta);
    let inv2 = cmul(inv, inv);
    let inv3 = cmul(inv2, inv);
    let z = (zeta.0 + inv.0, zeta.1 + inv.1);
    let one_minus = (1.0 - inv2.0, -inv2.1);
    let dz = cmul(one_minus, dzeta);
    let t1 = cmul((2.0 * inv3.0, 2.0 * inv3.1), cmul(dzeta, dzeta));
    let t2 = cmul(one_minus, ddzeta);
    let ddz = (t1.0 + t2.0, t1.1 + t2.1);
    [
        Point::new(z.0, z.1),
        Point::new(dz.0, dz.1),
        Point::new(ddz.0, ddz.1),
    ]
}

fn cmul(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

fn cdiv(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let den = b.0 * b.0 + b.1 * b.1;
    ((a.0 * b.0 + a.1 * b.1) / den, (a.1 * b.0 - a.0 * b.1) / den)
}

pub fn point_in_polygon(p: Point, poly: &[Point]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

pub fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = (p2 - p1).cross(q1 - p1);
    let d2 = (p2 - p1).cross(q2 - p1);
    let d3 = (q2 - q1).cross(p1 - q1);
    let d4 = (q2 - q1).cross(p2 - q1);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    let t = if len2 > 0.0 { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    p.dist(a + ab * t)
}

/// One spatial period `Ω` of the cascade.
#[derive(Clone, Debug, PartialEq)]
pub struct CascadeDomain {
    d: f64,
    tau: f64,
    profile: ProfileCurve,
    gamma0: PeriodicCurve,
}

impl CascadeDomain {
    pub fn new(d: f64, tau: f64, profile: ProfileCurve, gamma0: PeriodicCurve) -> Result<Self> {
        build_domain(d, tau, profile, gamma0)
    }

    pub fn channel(d: f64, tau: f64) -> Self {
        Self { d, tau, profile: ProfileCurve::Empty, gamma0: PeriodicCurve::straight(0.0, 0.0) }
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn profile(&self) -> &ProfileCurve {
        &self.profile
    }

    pub fn gamma0(&self) -> &PeriodicCurve {
        &self.gamma0
    }

    pub fn a02(&self) -> f64 {
        self.gamma0.a02()
    }

    pub fn b02(&self) -> f64 {
        self.gamma0.b02()
    }

    /// Height of `Γ_0` above `x1`.
    pub fn lower(&self, x1: f64) -> f64 {
        self.gamma0.height(x1, self.d)
    }

    /// Height of `Γ_1` above `x1`; always derived from `Γ_0`.
    pub fn upper(&self, x1: f64) -> f64 {
        self.lower(x1) + self.tau
    }

    pub fn corners(&self) -> [Point; 4] {
        [
            Point::new(0.0, self.a02()),
            Point::new(0.0, self.a02() + self.tau),
            Point::new(self.d, self.b02()),
            Point::new(self.d, self.b02() + self.tau),
        ]
    }

    /// The same period with `Γ_0` raised by `delta` (the shifted window `Ω^δ`).
    pub fn shifted(&self, delta: f64) -> Result<Self> {
        let gamma0 = match self.gamma0 {
            PeriodicCurve::Straight { a02, b02 } => {
                PeriodicCurve::Straight { a02: a02 + delta, b02: b02 + delta }
            }
            PeriodicCurve::Sinusoidal { a02, b02, amplitude } => {
                PeriodicCurve::Sinusoidal { a02: a02 + delta, b02: b02 + delta, amplitude }
            }
        };
        build_domain(self.d, self.tau, self.profile.clone(), gamma0)
    }

    /// Maps a point of the strip into this period by τ-translation in `x2`.
    pub fn wrap(&self, p: Point) -> Point {
        let lo = self.lower(p.x);
        let k = ((p.y - lo) / self.tau).floor();
        Point::new(p.x, p.y - k * self.tau)
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x > 0.0
            && p.x < self.d
            && p.y > self.lower(p.x)
            && p.y < self.upper(p.x)
            && !self.profile.contains(p)
    }

    /// Area of `Ω` from boundary quadrature (Green's theorem, `area = ∮ x1 dx2`).
    pub fn area(&self) -> f64 {
        let d = self.d;
        // Γ_0 and Γ_1 contributions cancel except for the τ-shift term, which vanishes for ∮ x1 dx2.
        let outer = d * self.tau;
        let hole = if self.profile.is_empty() {
            0.0
        } else {
            let n = 8192;
            let mut s = 0.0;
            for k in 0..n {
                let t = (k as f64 + 0.5) / n as f64;
                let [p, dp, _] = self.profile.jet(t);
                s += p.x * dp.y / n as f64;
            }
            s.abs()
        };
        outer - hole
    }

    /// Default width of the outflow blending strip: half the gap between the profile and `x1 = d`.
    pub fn default_outflow_delta(&self) -> f64 {
        match self.profile.bounds() {
            Some((_, hi)) => 0.5 * (self.d - hi.x),
            None => 0.25 * self.d,
        }
    }

    /// Default width of the inflow blending strip: half the gap between `x1 = 0` and the profile.
    pub fn default_inflow_delta(&self) -> f64 {
        match self.profile.bounds() {
            Some((lo, _)) => 0.5 * lo.x,
            None => 0.25 * self.d,
        }
    }

    /// Distance from `p` to the boundary piece `tag`.
    pub fn distance_to(&self, p: Point, tag: SegmentTag) -> f64 {
        match tag {
            SegmentTag::In => segment_distance(
                p,
                Point::new(0.0, self.a02()),
                Point::new(0.0, self.a02() + self.tau),
            ),
            SegmentTag::Out => segment_distance(
                p,
                Point::new(self.d, self.b02()),
                Point::new(self.d, self.b02() + self.tau),
            ),
            SegmentTag::Per0 | SegmentTag::Per1 => {
                let shift = if tag == SegmentTag::Per1 { self.tau } else { 0.0 };
                if self.gamma0.is_straight() {
                    segment_distance(
                        p,
                        Point::new(0.0, self.a02() + shift),
                        Point::new(self.d, self.b02() + shift),
                    )
                } else {
                    let n = 512;
                    (0..n)
                        .map(|k| {
                            let x0 = self.d * k as f64 / n as f64;
                            let x1 = self.d * (k + 1) as f64 / n as f64;
                            segment_distance(
                                p,
                                Point::new(x0, self.lower(x0) + shift),
                                Point::new(x1, self.lower(x1) + shift),
                            )
                        })
                        .fold(f64::INFINITY, f64::min)
                }
            }
            SegmentTag::Profile => self.profile.distance(p),
        }
    }
}

/// Validates and assembles a cascade period.
pub fn build_domain(
    d: f64,
    tau: f64,
    profile: ProfileCurve,
    gamma0: PeriodicCurve,
) -> Result<CascadeDomain> {
    if !(d > 0.0) {
        return Err(Error::InvalidDomain(format!("strip width d must be positive, got {d}")));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidDomain(format!("period tau must be positive, got {tau}")));
    }
    if let PeriodicCurve::Sinusoidal { amplitude, .. } = gamma0 {
        if amplitude.abs() >= 0.25 * tau {
            return Err(Error::InvalidDomain(
                "gamma0 amplitude must stay below tau/4".into(),
            ));
        }
    }
    profile.validate()?;
    let dom = CascadeDomain { d, tau, profile, gamma0 };
    if !dom.profile.is_empty() {
        for p in dom.profile.polyline(SAMPLES) {
            let inside = p.x > 0.0 && p.x < d && p.y > dom.lower(p.x) && p.y < dom.upper(p.x);
            if !inside {
                return Err(Error::ProfileOutsidePeriod(format!(
                    "profile point ({:.6}, {:.6}) leaves the open period",
                    p.x, p.y
                )));
            }
        }
    }
    Ok(dom)
}

/// Tags a boundary point; corners resolve IN/OUT over PROFILE over PER0/PER1.
pub fn classify_boundary_point(dom: &CascadeDomain, x: Point, tol: f64) -> Result<SegmentTag> {
    let mut best: Option<(SegmentTag, f64)> = None;
    for tag in SegmentTag::ALL {
        if tag == SegmentTag::Profile && dom.profile.is_empty() {
            continue;
        }
        let dist = dom.distance_to(x, tag);
        if dist <= tol {
            best = match best {
                Some((t, dt)) if t.priority() < tag.priority() => Some((t, dt)),
                Some((t, dt)) if t.priority() == tag.priority() && dt <= dist => Some((t, dt)),
                _ => Some((tag, dist)),
            };
        }
    }
    best.map(|(t, _)| t).ok_or_else(|| {
        Error::NotOnBoundary(format!("({}, {}) is farther than {tol} from the boundary", x.x, x.y))
    })
}

/// Names accepted by [`catalog_domain`].
pub const CATALOG: [&str; 6] = ["channel", "circle", "ellipse", "blade", "wavy-circle", "spline"];

/// Built-in test geometries, all with `d = 2`, `τ = 1`.
pub fn catalog_domain(name: &str) -> Result<CascadeDomain> {
    let c = Point::new(1.0, 0.5);
    let (profile, gamma0) = match name {
        "channel" => (ProfileCurve::Empty, PeriodicCurve::straight(0.0, 0.0)),
        "circle" => (ProfileCurve::Circle { center: c, radius: 0.2 }, PeriodicCurve::straight(0.0, 0.0)),
        "ellipse" => (
            ProfileCurve::Ellipse { center: c, semi_a: 0.3, semi_b: 0.1, angle: -0.4 },
            PeriodicCurve::straight(0.0, 0.0),
        ),
        "blade" => (
            ProfileCurve::Blade { center: Point::new(1.0, 0.6), chord: 0.8, thickness: 0.12, camber: 0.1, angle: -0.3 },
            PeriodicCurve::straight(0.0, 0.2),
        ),
        "wavy-circle" => (
            ProfileCurve::Circle { center: Point::new(1.0, 0.55), radius: 0.15 },
            PeriodicCurve::Sinusoidal { a02: 0.0, b02: 0.0, amplitude: 0.1 },
        ),
        "spline" => (
            ProfileCurve::Spline(PeriodicSpline::new(vec![
                Point::new(0.7, 0.5),
                Point::new(0.9, 0.62),
                Point::new(1.2, 0.6),
                Point::new(1.35, 0.5),
                Point::new(1.15, 0.42),
                Point::new(0.9, 0.42),
            ])?),
            PeriodicCurve::straight(0.0, 0.0),
        ),
        _ => return Err(Error::InvalidDomain(format!("unknown geometry '{name}'"))),
    };
    build_domain(2.0, 1.0, profile, gamma0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(r: f64, cx: f64, cy: f64) -> ProfileCurve {
        ProfileCurve::Circle { center: Point::new(cx, cy), radius: r }
    }

    #[test]
    fn channel_without_profile() {
        let dom = build_domain(1.0, 1.0, ProfileCurve::Empty, PeriodicCurve::straight(0.0, 0.0))
            .unwrap();
        assert!((dom.area() - 1.0).abs() < 1e-14);
        assert_eq!(dom.upper(0.3), 1.0);
    }

    #[test]
    fn circular_blade_is_valid() {
        let dom =
            build_domain(2.0, 1.0, circle(0.2, 1.0, 0.5), PeriodicCurve::straight(0.0, 0.0))
                .unwrap();
        let exact = 2.0 - PI * 0.04;
        assert!((dom.area() - exact).abs() < 1e-10);
    }

    #[test]
    fn oversized_circle_leaves_period() {
        // min/max x2 of the circle are -0.1 and 1.1, outside (0, 1)
        let err =
            build_domain(2.0, 1.0, circle(0.6, 1.0, 0.5), PeriodicCurve::straight(0.0, 0.0))
                .unwrap_err();
        assert!(matches!(err, Error::ProfileOutsidePeriod(_)));
    }

    #[test]
    fn degenerate_radius_rejected() {
        let err =
            build_domain(2.0, 1.0, circle(0.0, 1.0, 0.5), PeriodicCurve::straight(0.0, 0.0))
                .unwrap_err();
        assert!(matches!(err, Error::DegenerateCurve(_)));
    }

    #[test]
    fn corner_priority() {
        let dom = CascadeDomain::channel(1.0, 1.0);
        let tol = 1e-9;
        assert_eq!(classify_boundary_point(&dom, Point::new(0.0, 0.5), tol).unwrap(), SegmentTag::In);
        assert_eq!(classify_boundary_point(&dom, Point::new(1.0, 0.5), tol).unwrap(), SegmentTag::Out);
        assert_eq!(classify_boundary_point(&dom, Point::new(0.0, 0.0), tol).unwrap(), SegmentTag::In);
        assert_eq!(classify_boundary_point(&dom, Point::new(1.0, 1.0), tol).unwrap(), SegmentTag::Out);
        assert_eq!(classify_boundary_point(&dom, Point::new(0.5, 0.0), tol).unwrap(), SegmentTag::Per0);
        assert_eq!(classify_boundary_point(&dom, Point::new(0.5, 1.0), tol).unwrap(), SegmentTag::Per1);
        assert!(matches!(
            classify_boundary_point(&dom, Point::new(0.5, 0.5), tol),
            Err(Error::NotOnBoundary(_))
        ));
    }

    #[test]
    fn profile_points_classified() {
        let dom =
            build_domain(2.0, 1.0, circle(0.2, 1.0, 0.5), PeriodicCurve::straight(0.0, 0.0))
                .unwrap();
        let p = Point::new(1.2, 0.5);
        assert_eq!(classify_boundary_point(&dom, p, 1e-9).unwrap(), SegmentTag::Profile);
    }

    #[test]
    fn period_translation_consistency() {
        let dom = build_domain(
            2.0,
            1.0,
            circle(0.2, 1.0, 0.6),
            PeriodicCurve::Sinusoidal { a02: 0.0, b02: 0.1, amplitude: 0.05 },
        )
        .unwrap();
        let lifted = PeriodicCurve::Sinusoidal { a02: 1.0, b02: 1.1, amplitude: 0.05 };
        for k in 0..=20 {
            let x1 = dom.d() * k as f64 / 20.0;
            assert!((lifted.height(x1, dom.d()) - dom.upper(x1)).abs() < 1e-14);
        }
    }

    #[test]
    fn spline_and_blade_are_regular() {
        let knots: Vec<Point> = (0..8)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / 8.0;
                Point::new(1.0 + 0.3 * t.cos(), 0.5 + 0.15 * t.sin())
            })
            .collect();
        let sp = ProfileCurve::Spline(PeriodicSpline::new(knots.clone()).unwrap());
        sp.validate().unwrap();
        for (k, q) in knots.iter().enumerate() {
            assert!(sp.point(k as f64 / 8.0).dist(*q) < 1e-12);
        }
        let blade = ProfileCurve::Blade {
            center: Point::new(1.0, 0.5),
            chord: 0.8,
            thickness: 0.1,
            camber: 0.1,
            angle: -0.3,
        };
        blade.validate().unwrap();
        build_domain(2.0, 1.0, blade, PeriodicCurve::straight(0.0, 0.0)).unwrap();
    }

    #[test]
    fn jet_matches_finite_differences() {
        let curves = [
            circle(0.2, 1.0, 0.5),
            ProfileCurve::Ellipse { center: Point::new(1.0, 0.5), semi_a: 0.3, semi_b: 0.1, angle: 0.4 },
            ProfileCurve::Blade {
                center: Point::new(1.0, 0.5),
                chord: 0.8,
                thickness: 0.1,
                camber: 0.05,
                angle: 0.2,
            },
        ];
        let h = 1e-5;
        for c in curves {
            for k in 0..10 {
                let t = 0.05 + k as f64 / 10.0;
                let [_, d1, d2] = c.jet(t);
                let fd1 = (c.point(t + h) - c.point(t - h)) * (0.5 / h);
                let fd2 = (c.jet(t + h)[1] - c.jet(t - h)[1]) * (0.5 / h);
                assert!((d1 - fd1).norm() < 1e-6 * d1.norm().max(1.0));
                assert!((d2 - fd2).norm() < 1e-5 * d2.norm().max(1.0));
            }
        }
    }

    #[test]
    fn closest_point_projection() {
        let c = ProfileCurve::Ellipse { center: Point::new(1.0, 0.5), semi_a: 0.3, semi_b: 0.1, angle: 0.4 };
        let t = 0.37;
        let p = c.point(t);
        let n = {
            let d = c.jet(t)[1];
            Point::new(d.y, -d.x) * (1.0 / d.norm())
        };
        let q = c.project(p + n * 0.01);
        assert!(q.dist(p) < 1e-9);
    }

    #[test]
    fn catalog_geometries_are_valid() {
        for name in CATALOG {
            let dom = catalog_domain(name).unwrap();
            assert!(dom.area() > 0.0, "{name}");
        }
        assert!(catalog_domain("hexagon").is_err());
    }
}
