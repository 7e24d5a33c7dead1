//! Smooth exact solution on the circle cascade used for convergence studies.
//!
//! `u = ∇⊥ψ`, `ψ = s(x1) sin(k x2)`, `k = 2π/τ`, with `s` vanishing on a band
//! `a ≤ x1 ≤ b` that contains the profile, and
//! `p = A cos(k x2) x1/d + (1 − x1/d)/2`. Then `f = −νΔu + ∇p`, `g = u|Γ_in = 0`
//! and `h = −ν ∂1 u + p e1` on `Γ_out`.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::data::{BodyForce, InflowData, OutflowTrace};
use crate::error::{Error, Result};
use crate::geometry::{build_domain, CascadeDomain, PeriodicCurve, Point, ProfileCurve};
use crate::solver::ProblemData;

/// Polynomial with coefficients in increasing degree.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly(pub Vec<f64>);

impl Poly {
    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn derivative(&self) -> Poly {
        Poly(self.0.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect())
    }

    pub fn mul(&self, o: &Poly) -> Poly {
        let mut c = vec![0.0; self.0.len() + o.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in o.0.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        Poly(c)
    }

    pub fn pow(&self, n: u32) -> Poly {
        (0..n).fold(Poly(vec![1.0]), |acc, _| acc.mul(self))
    }

    pub fn scale(&self, s: f64) -> Poly {
        Poly(self.0.iter().map(|c| c * s).collect())
    }
}

/// Piecewise polynomial in `t = (x − x0)/len` on `[x0, x0 + len]`, zero elsewhere,
/// with derivatives up to order four.
#[derive(Clone, Debug)]
struct Piece {
    x0: f64,
    len: f64,
    /// `p, p', p'', p''', p''''` in `t`.
    d: [Poly; 5],
}

impl Piece {
    fn new(x0: f64, len: f64, p: Poly) -> Self {
        let d1 = p.derivative();
        let d2 = d1.derivative();
        let d3 = d2.derivative();
        let d4 = d3.derivative();
        Self { x0, len, d: [p, d1, d2, d3, d4] }
    }

    fn jet(&self, x: f64) -> Option<[f64; 5]> {
        let t = (x - self.x0) / self.len;
        if !(-1e-14..=1.0 + 1e-14).contains(&t) {
            return None;
        }
        let mut out = [0.0; 5];
        let mut s = 1.0;
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.d[k].eval(t) * s;
            s /= self.len;
        }
        Some(out)
    }
}

#[derive(Clone, Debug)]
pub struct ManufacturedCase {
    pub d: f64,
    pub tau: f64,
    pub nu: f64,
    pub k: f64,
    /// Amplitude of the oscillating pressure part.
    pub p_amp: f64,
    pieces: Vec<Piece>,
}

impl ManufacturedCase {
    /// `s = A t²(1 − t)⁵` on `[0, a]`, `0` on `[a, b]`, `B t⁵(2 − t)` on `[b, d]`.
    pub fn new(d: f64, tau: f64, nu: f64, a: f64, b: f64, amp_in: f64, amp_out: f64) -> Result<Self> {
        if !(0.0 < a && a < b && b < d) {
            return Err(Error::InvalidDomain(format!("need 0 < a < b < d, got {a}, {b}, {d}")));
        }
        let t = Poly(vec![0.0, 1.0]);
        let one_minus_t = Poly(vec![1.0, -1.0]);
        let left = t.pow(2).mul(&one_minus_t.pow(5)).scale(amp_in);
        let right = t.pow(5).mul(&Poly(vec![2.0, -1.0])).scale(amp_out);
        Ok(Self {
            d,
            tau,
            nu,
            k: 2.0 * PI / tau,
            p_amp: 1.0,
            pieces: vec![Piece::new(0.0, a, left), Piece::new(b, d - b, right)],
        })
    }

    /// The reference case on [`circle_cascade`]. The pressure amplitude keeps the
    /// linear-element pressure error visible next to the velocity-driven part.
    pub fn standard(nu: f64) -> Self {
        Self::new(2.0, 1.0, nu, 0.7, 1.3, 40.0, 1.0).expect("valid constants").with_pressure_amplitude(20.0)
    }

    /// `s, s', s'', s''', s''''`.
    pub fn s(&self, x: f64) -> [f64; 5] {
        self.pieces.iter().find_map(|p| p.jet(x)).unwrap_or([0.0; 5])
    }

    pub fn with_pressure_amplitude(mut self, a: f64) -> Self {
        self.p_amp = a;
        self
    }

    pub fn velocity(&self, p: Point) -> Point {
        let s = self.s(p.x);
        let (sn, cs) = (self.k * p.y).sin_cos();
        Point::new(s[0] * self.k * cs, -s[1] * sn)
    }

    /// `[i][j] = ∂_j u_i`.
    pub fn velocity_gradient(&self, p: Point) -> [[f64; 2]; 2] {
        let s = self.s(p.x);
        let k = self.k;
        let (sn, cs) = (k * p.y).sin_cos();
        [[s[1] * k * cs, -s[0] * k * k * sn], [-s[2] * sn, -s[1] * k * cs]]
    }

    /// `∂2 u`.
    pub fn velocity_dx2(&self, p: Point) -> Point {
        let g = self.velocity_gradient(p);
        Point::new(g[0][1], g[1][1])
    }

    pub fn pressure(&self, p: Point) -> f64 {
        let r = p.x / self.d;
        self.p_amp * (self.k * p.y).cos() * r + 0.5 * (1.0 - r)
    }

    pub fn pressure_gradient(&self, p: Point) -> Point {
        let (sn, cs) = (self.k * p.y).sin_cos();
        Point::new((self.p_amp * cs - 0.5) / self.d, -self.p_amp * self.k * sn * p.x / self.d)
    }

    pub fn body_force(&self, p: Point) -> Point {
        let s = self.s(p.x);
        let k = self.k;
        let (sn, cs) = (k * p.y).sin_cos();
        let lap = Point::new((s[2] * k - s[0] * k * k * k) * cs, (-s[3] + s[1] * k * k) * sn);
        lap * (-self.nu) + self.pressure_gradient(p)
    }

    pub fn traction(&self, x2: f64) -> Point {
        let p = Point::new(self.d, x2);
        let g = self.velocity_gradient(p);
        Point::new(-self.nu * g[0][0] + self.pressure(p), -self.nu * g[1][0])
    }

    pub fn problem_data(&self) -> ProblemData {
        let a = Arc::new(self.clone());
        let b = a.clone();
        let c = a.clone();
        ProblemData {
            g: InflowData::Custom {
                name: "manufactured".into(),
                eval: Arc::new(move |x2| {
                    let p = Point::new(0.0, x2);
                    [c.velocity(p), c.velocity_dx2(p)]
                }),
            },
            f: BodyForce::Custom { name: "manufactured".into(), eval: Arc::new(move |p| a.body_force(p)) },
            h: OutflowTrace::Custom { name: "manufactured".into(), eval: Arc::new(move |x2| b.traction(x2)) },
        }
    }
}

/// `d = 2`, `τ = 1`, straight `Γ_0` at `x2 = 0`, circle of radius 0.2 at `(1, 0.5)`.
pub fn circle_cascade() -> CascadeDomain {
    build_domain(
        2.0,
        1.0,
        ProfileCurve::Circle { center: Point::new(1.0, 0.5), radius: 0.2 },
        PeriodicCurve::straight(0.0, 0.0),
    )
    .expect("reference cascade is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_arithmetic() {
        let p = Poly(vec![1.0, 2.0, 3.0]);
        assert_eq!(p.eval(2.0), 17.0);
        assert_eq!(p.derivative(), Poly(vec![2.0, 6.0]));
        assert_eq!(Poly(vec![1.0, 1.0]).pow(2), Poly(vec![1.0, 2.0, 1.0]));
    }

    #[test]
    fn profile_function_is_c3_at_the_joints() {
        let m = ManufacturedCase::standard(1.0);
        for x in [0.7, 1.3] {
            let (l, r) = (m.s(x - 1e-9), m.s(x + 1e-9));
            for k in 0..4 {
                assert!((l[k] - r[k]).abs() < 1e-5, "order {k} at {x}");
            }
        }
        assert_eq!(m.s(0.0)[0], 0.0);
        assert_eq!(m.s(0.0)[1], 0.0);
        assert_eq!(m.s(1.0), [0.0; 5]);
    }

    #[test]
    fn exact_solution_satisfies_the_equations() {
        let m = ManufacturedCase::standard(0.7);
        let e = 1e-4;
        for &(x, y) in &[(0.3, 0.2), (1.6, 0.7), (0.55, 0.9), (1.9, 0.1)] {
            let p = Point::new(x, y);
            let g = m.velocity_gradient(p);
            assert!((g[0][0] + g[1][1]).abs() < 1e-12);
            // Five-point Laplacian of u.
            let u = |q: Point| m.velocity(q);
            let lap = (u(p + Point::new(e, 0.0)) + u(p - Point::new(e, 0.0)) + u(p + Point::new(0.0, e))
                + u(p - Point::new(0.0, e))
                - u(p) * 4.0)
                * (1.0 / (e * e));
            let f = lap * (-m.nu) + m.pressure_gradient(p);
            assert!((f - m.body_force(p)).norm() < 1e-3 * (1.0 + f.norm()), "{x} {y}");
            let dp = Point::new(
                (m.pressure(p + Point::new(e, 0.0)) - m.pressure(p - Point::new(e, 0.0))) / (2.0 * e),
                (m.pressure(p + Point::new(0.0, e)) - m.pressure(p - Point::new(0.0, e))) / (2.0 * e),
            );
            let gp = m.pressure_gradient(p);
            assert!((dp - gp).norm() < 1e-5 * (1.0 + gp.norm()));
        }
    }

    #[test]
    fn inflow_trace_vanishes_and_data_are_periodic() {
        let m = ManufacturedCase::standard(1.0);
        let data = m.problem_data();
        for k in 0..10 {
            let y = 0.1 * k as f64;
            assert!(data.g.value(y, 0.0, 1.0).norm() < 1e-14);
        }
        assert!(data.h.is_periodic(0.0, 1.0));
        assert!((m.velocity(Point::new(1.5, 0.0)) - m.velocity(Point::new(1.5, 1.0))).norm() < 1e-13);
    }
}
