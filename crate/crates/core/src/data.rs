//! Analytic data catalogs: inflow profiles, outflow tractions and body forces.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::geometry::Point;

pub type Profile1d = Arc<dyn Fn(f64) -> [Point; 2] + Send + Sync>;
pub type Field2d = Arc<dyn Fn(Point) -> Point + Send + Sync>;

/// Dirichlet datum `g = (g1, g2)` on `Γ_in`, as a function of `x2`.
#[derive(Clone)]
pub enum InflowData {
    Constant { g1: f64, g2: f64 },
    /// `g1 = amp1 sin(2π m θ)`, `g2 = amp2 cos(2π m θ)`, `θ = (x2 − a02)/τ`.
    Fourier { mode: u32, amp1: f64, amp2: f64 },
    /// `g1 = u0 (1 − exp(−sin²(π θ)/w²))`, `g2 = 0`.
    PlugBoundaryLayer { u0: f64, width: f64 },
    /// User-supplied value and `x2`-derivative.
    Custom { name: String, eval: Profile1d },
}

impl fmt::Debug for InflowData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InflowData::Constant { g1, g2 } => write!(f, "Constant({g1}, {g2})"),
            InflowData::Fourier { mode, amp1, amp2 } => write!(f, "Fourier({mode}, {amp1}, {amp2})"),
            InflowData::PlugBoundaryLayer { u0, width } => write!(f, "Plug({u0}, {width})"),
            InflowData::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl InflowData {
    pub fn zero() -> Self {
        InflowData::Constant { g1: 0.0, g2: 0.0 }
    }

    /// Value and derivative with respect to `x2`.
    pub fn eval(&self, x2: f64, a02: f64, tau: f64) -> [Point; 2] {
        let th = (x2 - a02) / tau;
        match *self {
            InflowData::Constant { g1, g2 } => [Point::new(g1, g2), Point::default()],
            InflowData::Fourier { mode, amp1, amp2 } => {
                let w = 2.0 * PI * mode as f64;
                let (s, c) = (w * th).sin_cos();
                [
                    Point::new(amp1 * s, amp2 * c),
                    Point::new(amp1 * w * c / tau, -amp2 * w * s / tau),
                ]
            }
            InflowData::PlugBoundaryLayer { u0, width } => {
                let (s, c) = (PI * th).sin_cos();
                let e = (-(s * s) / (width * width)).exp();
                let de = e * (2.0 * s * c * PI / tau) / (width * width);
                [Point::new(u0 * (1.0 - e), 0.0), Point::new(u0 * de, 0.0)]
            }
            InflowData::Custom { ref eval, .. } => eval(x2),
        }
    }

    pub fn value(&self, x2: f64, a02: f64, tau: f64) -> Point {
        self.eval(x2, a02, tau)[0]
    }

    pub fn is_periodic(&self, a02: f64, tau: f64) -> bool {
        let (a, b) = (self.eval(a02, a02, tau), self.eval(a02 + tau, a02, tau));
        (a[0] - b[0]).norm() <= 1e-12 * (1.0 + a[0].norm())
    }

    pub fn scaled(&self, s: f64) -> InflowData {
        match self.clone() {
            InflowData::Constant { g1, g2 } => InflowData::Constant { g1: s * g1, g2: s * g2 },
            InflowData::Fourier { mode, amp1, amp2 } => {
                InflowData::Fourier { mode, amp1: s * amp1, amp2: s * amp2 }
            }
            InflowData::PlugBoundaryLayer { u0, width } => {
                InflowData::PlugBoundaryLayer { u0: s * u0, width }
            }
            InflowData::Custom { name, eval } => InflowData::Custom {
                name: format!("{s}*{name}"),
                eval: Arc::new(move |x| {
                    let [v, d] = eval(x);
                    [v * s, d * s]
                }),
            },
        }
    }
}

/// Outflow traction datum `h = (h1, h2)` on `Γ_out`, as a function of `x2`.
#[derive(Clone)]
pub enum OutflowTrace {
    Zero,
    Constant { h1: f64, h2: f64 },
    /// `h = (c1 + a1 sin(2π m θ), c2 + a2 cos(2π m θ))`, `θ = (x2 − b02)/τ`.
    Fourier { mode: u32, mean1: f64, mean2: f64, amp1: f64, amp2: f64 },
    Custom { name: String, eval: Arc<dyn Fn(f64) -> Point + Send + Sync> },
}

impl fmt::Debug for OutflowTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutflowTrace::Zero => write!(f, "Zero"),
            OutflowTrace::Constant { h1, h2 } => write!(f, "Constant({h1}, {h2})"),
            OutflowTrace::Fourier { mode, mean1, mean2, amp1, amp2 } => {
                write!(f, "Fourier({mode}, {mean1}, {mean2}, {amp1}, {amp2})")
            }
            OutflowTrace::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl OutflowTrace {
    pub fn eval(&self, x2: f64, b02: f64, tau: f64) -> Point {
        match *self {
            OutflowTrace::Zero => Point::default(),
            OutflowTrace::Constant { h1, h2 } => Point::new(h1, h2),
            OutflowTrace::Fourier { mode, mean1, mean2, amp1, amp2 } => {
                let w = 2.0 * PI * mode as f64 * (x2 - b02) / tau;
                Point::new(mean1 + amp1 * w.sin(), mean2 + amp2 * w.cos())
            }
            OutflowTrace::Custom { ref eval, .. } => eval(x2),
        }
    }

    pub fn is_periodic(&self, b02: f64, tau: f64) -> bool {
        let (a, b) = (self.eval(b02, b02, tau), self.eval(b02 + tau, b02, tau));
        (a - b).norm() <= 1e-12 * (1.0 + a.norm())
    }

    /// `τ⁻¹ ∫_{Γ_out} h`, by composite Gauss–Legendre quadrature.
    pub fn mean(&self, b02: f64, tau: f64) -> Point {
        integrate(b02, b02 + tau, 64, |x| self.eval(x, b02, tau)) * (1.0 / tau)
    }
}

/// Body force `f`.
#[derive(Clone)]
pub enum BodyForce {
    Zero,
    Constant { f1: f64, f2: f64 },
    /// `f = (a1 sin(2π m x2/τ), a2 cos(2π m x2/τ))`.
    Fourier { mode: u32, amp1: f64, amp2: f64, tau: f64 },
    /// `f = (x1 x2, x1² − x2)`.
    Poly,
    /// Gaussian bump centred at `center` with width `width`, direction `(1, 1)`.
    Gaussian { center: Point, width: f64, amp: f64 },
    Custom { name: String, eval: Field2d },
}

impl fmt::Debug for BodyForce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BodyForce::Zero => write!(f, "Zero"),
            BodyForce::Constant { f1, f2 } => write!(f, "Constant({f1}, {f2})"),
            BodyForce::Fourier { mode, amp1, amp2, .. } => write!(f, "Fourier({mode}, {amp1}, {amp2})"),
            BodyForce::Poly => write!(f, "Poly"),
            BodyForce::Gaussian { center, width, amp } => {
                write!(f, "Gaussian(({}, {}), {width}, {amp})", center.x, center.y)
            }
            BodyForce::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl BodyForce {
    pub fn eval(&self, p: Point) -> Point {
        match *self {
            BodyForce::Zero => Point::default(),
            BodyForce::Constant { f1, f2 } => Point::new(f1, f2),
            BodyForce::Fourier { mode, amp1, amp2, tau } => {
                let w = 2.0 * PI * mode as f64 * p.y / tau;
                Point::new(amp1 * w.sin(), amp2 * w.cos())
            }
            BodyForce::Poly => Point::new(p.x * p.y, p.x * p.x - p.y),
            BodyForce::Gaussian { center, width, amp } => {
                let r2 = (p - center).dot(p - center);
                let g = amp * (-r2 / (width * width)).exp();
                Point::new(g, g)
            }
            BodyForce::Custom { ref eval, .. } => eval(p),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, BodyForce::Zero)
    }
}

/// Composite Gauss–Legendre integral of a vector function over `[a, b]`.
pub fn integrate(a: f64, b: f64, panels: usize, mut f: impl FnMut(f64) -> Point) -> Point {
    let gl = crate::element::gauss_legendre01(6);
    let h = (b - a) / panels as f64;
    let mut s = Point::default();
    for k in 0..panels {
        let x0 = a + k as f64 * h;
        for &(x, w) in &gl {
            s = s + f(x0 + x * h) * (w * h);
        }
    }
    s
}

/// Named `(f, h)` pairs used to exercise the tensor builder, for period `tau`.
pub fn tensor_catalog(tau: f64) -> Vec<(&'static str, BodyForce, OutflowTrace)> {
    vec![
        ("zero-force-constant-traction", BodyForce::Zero, OutflowTrace::Constant { h1: 1.0, h2: -0.5 }),
        ("constant-force-zero-traction", BodyForce::Constant { f1: 1.0, f2: 2.0 }, OutflowTrace::Zero),
        (
            "fourier-pair",
            BodyForce::Fourier { mode: 1, amp1: 1.0, amp2: -0.5, tau },
            OutflowTrace::Fourier { mode: 1, mean1: 0.3, mean2: 0.0, amp1: 1.0, amp2: 0.5 },
        ),
        (
            "poly-force-fourier-traction",
            BodyForce::Poly,
            OutflowTrace::Fourier { mode: 2, mean1: 0.0, mean2: 0.2, amp1: 0.5, amp2: 0.5 },
        ),
        (
            "gaussian-force-constant-traction",
            BodyForce::Gaussian { center: Point::new(0.4, 0.3), width: 0.15, amp: 2.0 },
            OutflowTrace::Constant { h1: -1.0, h2: 0.25 },
        ),
        (
            "fourier-force-mode-two",
            BodyForce::Fourier { mode: 2, amp1: 0.5, amp2: 1.0, tau },
            OutflowTrace::Fourier { mode: 1, mean1: 1.0, mean2: -1.0, amp1: 0.0, amp2: 1.0 },
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_is_periodic() {
        let tau = 1.3;
        for g in [
            InflowData::Constant { g1: 1.0, g2: 0.5 },
            InflowData::Fourier { mode: 2, amp1: 1.0, amp2: 0.3 },
            InflowData::PlugBoundaryLayer { u0: 1.0, width: 0.2 },
        ] {
            assert!(g.is_periodic(0.1, tau), "{g:?}");
        }
        let h = OutflowTrace::Fourier { mode: 1, mean1: 0.2, mean2: 0.0, amp1: 1.0, amp2: 1.0 };
        assert!(h.is_periodic(0.0, tau));
    }

    #[test]
    fn inflow_derivatives_match_differences() {
        let e = 1e-6;
        for g in [
            InflowData::Fourier { mode: 3, amp1: 1.0, amp2: 0.7 },
            InflowData::PlugBoundaryLayer { u0: 2.0, width: 0.3 },
        ] {
            for k in 1..10 {
                let x = 0.1 * k as f64;
                let d = (g.value(x + e, 0.0, 1.0) - g.value(x - e, 0.0, 1.0)) * (0.5 / e);
                assert!((g.eval(x, 0.0, 1.0)[1] - d).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn trace_mean() {
        let h = OutflowTrace::Fourier { mode: 1, mean1: 0.25, mean2: -1.0, amp1: 1.0, amp2: 3.0 };
        let m = h.mean(0.2, 1.0);
        assert!((m.x - 0.25).abs() < 1e-13 && (m.y + 1.0).abs() < 1e-13);
    }
}
