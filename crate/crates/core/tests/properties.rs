use std::sync::Arc;

use cascade_core::data::{BodyForce, InflowData, OutflowTrace};
use cascade_core::femspace::{assemble_stiffness, boundary_edge_geometry, element_affine};
use cascade_core::geometry::{build_domain, CascadeDomain, PeriodicCurve, Point, ProfileCurve, SegmentTag};
use cascade_core::lifting::lift_inflow;
use cascade_core::mesh::{generate_mesh, Locator, Mesh};
use cascade_core::solver::{energy_balance, solve_problem, Backend, Discretization, ProblemData, SolverConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn circle_domain(cx: f64, cy: f64, r: f64, wave: f64) -> CascadeDomain {
    build_domain(
        2.0,
        1.0,
        ProfileCurve::Circle { center: Point::new(cx, cy), radius: r },
        PeriodicCurve::Sinusoidal { a02: 0.0, b02: 0.1, amplitude: wave },
    )
    .unwrap()
}

/// `½ ∮ x · n` over the mesh boundary.
fn green_area(mesh: &Mesh) -> f64 {
    let geo = boundary_edge_geometry(mesh);
    mesh.boundary_edges()
        .iter()
        .map(|e| {
            let key = (e.v[0].min(e.v[1]), e.v[0].max(e.v[1]));
            let (_, n, len) = geo[&key];
            let m = mesh.vertices()[e.v[0]].midpoint(mesh.vertices()[e.v[1]]);
            0.5 * m.dot(n) * len
        })
        .sum()
}

fn uniform(seed: u64) -> impl FnMut() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    move || rng.random_range(-0.5..0.5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn gamma0_translated_by_tau_is_gamma1(cx in 0.8..1.2f64, cy in 0.4..0.6f64, wave in -0.1..0.1f64, x in 0.0..2.0f64) {
        let dom = circle_domain(cx, cy, 0.15, wave);
        prop_assert!((dom.lower(x) + dom.tau() - dom.upper(x)).abs() < 1e-12);
        let p = Point::new(x, dom.lower(x) + 0.3);
        let q = dom.wrap(p + Point::new(0.0, dom.tau()));
        prop_assert!(p.dist(q) < 1e-12);
    }

    #[test]
    fn mesh_area_matches_boundary_integral(cx in 0.8..1.2f64, cy in 0.45..0.6f64, r in 0.1..0.2f64, wave in -0.1..0.1f64) {
        let h = 2.0 * std::f64::consts::PI * r / 10.0;
        let mesh = generate_mesh(&circle_domain(cx, cy, r, wave), h).unwrap();
        let (a, b) = (mesh.total_area(), green_area(&mesh));
        prop_assert!((a - b).abs() <= 1e-8 * a, "{} vs {}", a, b);
        let fine = mesh.refine();
        prop_assert!(fine.validate().is_ok());
        let ratio = fine.h_max() / mesh.h_max();
        prop_assert!(ratio >= 0.5 / 1.2 && ratio <= 0.5 * 1.2, "ratio {}", ratio);
        let (a2, b2) = (fine.total_area(), green_area(&fine));
        prop_assert!((a2 - b2).abs() <= 1e-8 * a2);
    }

    #[test]
    fn located_points_map_back(seed in any::<u64>()) {
        let mesh = generate_mesh(&circle_domain(1.0, 0.5, 0.2, 0.05), 0.12).unwrap();
        let loc = Locator::new(&mesh);
        let mut rnd = uniform(seed);
        for _ in 0..50 {
            let t = ((rnd() + 0.5) * mesh.num_triangles() as f64) as usize % mesh.num_triangles();
            let (a, b) = (rnd() + 0.5, rnd() + 0.5);
            let l = if a + b <= 1.0 { [1.0 - a - b, a, b] } else { [a + b - 1.0, 1.0 - b, 1.0 - a] };
            let p = element_affine(&mesh, t).map(l);
            let (t2, l2) = loc.locate(p, 1e-9).unwrap();
            let q = element_affine(&mesh, t2).map(l2);
            prop_assert!(p.dist(q) < 1e-12);
        }
    }

    #[test]
    fn stiffness_is_symmetric_and_positive(seed in any::<u64>(), nu in 0.1..5.0f64) {
        let disc = Discretization::new(generate_mesh(&circle_domain(1.0, 0.5, 0.2, 0.0), 0.15).unwrap());
        let a = assemble_stiffness(&disc.vspace, nu);
        let n = a.rows();
        let mut rnd = uniform(seed);
        let v: Vec<f64> = (0..n).map(|_| rnd()).collect();
        let w: Vec<f64> = (0..n).map(|_| rnd()).collect();
        let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
        let (avw, aww) = (dot(&a.matvec(&v), &w), dot(&a.matvec(&w), &v));
        prop_assert!((avw - aww).abs() <= 1e-12 * avw.abs().max(aww.abs()).max(1.0));
        // With Dirichlet dofs zeroed the form is positive definite.
        let mut vz = v.clone();
        for k in disc.vspace.dirichlet_dofs() {
            vz[k] = 0.0;
        }
        prop_assert!(dot(&a.matvec(&vz), &vz) > 0.0);
    }

    #[test]
    fn lifting_is_linear(alpha in -2.0..2.0f64, beta in -2.0..2.0f64) {
        let disc = Discretization::new(generate_mesh(&circle_domain(1.0, 0.5, 0.2, 0.0), 0.15).unwrap());
        let ga = InflowData::Fourier { mode: 1, amp1: 1.0, amp2: 0.5 };
        let gb = InflowData::PlugBoundaryLayer { u0: 1.0, width: 0.2 };
        let combo = {
            let (ga, gb) = (ga.clone(), gb.clone());
            InflowData::Custom {
                name: "combination".into(),
                eval: Arc::new(move |y| {
                    let (a, b) = (ga.eval(y, 0.0, 1.0), gb.eval(y, 0.0, 1.0));
                    [a[0] * alpha + b[0] * beta, a[1] * alpha + b[1] * beta]
                }),
            }
        };
        let lift = |g: &InflowData| lift_inflow(&disc.vspace, &disc.pspace, g, None, &Backend::Direct).unwrap().g_star;
        let (la, lb, lc) = (lift(&ga), lift(&gb), lift(&combo));
        let diff = lc.sub(&la.scaled(alpha)).sub(&lb.scaled(beta));
        prop_assert!(diff.l2_norm() <= 1e-10 * (1.0 + lc.l2_norm()), "{}", diff.l2_norm());
    }

    #[test]
    fn solution_is_linear_and_balances_energy(alpha in 0.25..4.0f64, nu in 0.5..2.0f64) {
        let disc = Discretization::new(generate_mesh(&circle_domain(1.0, 0.5, 0.2, 0.05), 0.15).unwrap());
        let cfg = SolverConfig { nu, ..SolverConfig::default() };
        let data = ProblemData {
            g: InflowData::Fourier { mode: 1, amp1: 0.5, amp2: 1.0 },
            f: BodyForce::Gaussian { center: Point::new(0.5, 0.4), width: 0.2, amp: 1.0 },
            h: OutflowTrace::Fourier { mode: 1, mean1: 0.2, mean2: 0.0, amp1: 0.3, amp2: 0.1 },
        };
        let scaled = ProblemData { g: data.g.scaled(alpha), f: scale_force(&data.f, alpha), h: scale_trace(&data.h, alpha) };
        let one = solve_problem(&disc, &data, &cfg).unwrap();
        let two = solve_problem(&disc, &scaled, &cfg).unwrap();
        let du = two.solution.u.sub(&one.solution.u.scaled(alpha)).l2_norm();
        prop_assert!(du <= 1e-9 * two.solution.u.l2_norm(), "{}", du);
        let dp: f64 = two.solution.p.coeffs.iter().zip(&one.solution.p.coeffs).map(|(a, b)| (a - alpha * b).abs()).fold(0.0, f64::max);
        let pmax = two.solution.p.coeffs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        prop_assert!(dp <= 1e-9 * pmax);
        let (lhs, rhs) = energy_balance(&one.solution, &one.tensor.tensor, nu);
        prop_assert!((lhs - rhs).abs() <= 1e-8 * lhs.abs().max(1e-300), "{} vs {}", lhs, rhs);
        prop_assert!(one.tensor.tensor.max_on(SegmentTag::Profile) == 0.0);
    }
}

fn scale_force(f: &BodyForce, a: f64) -> BodyForce {
    let f = f.clone();
    BodyForce::Custom { name: "scaled".into(), eval: Arc::new(move |p| f.eval(p) * a) }
}

fn scale_trace(h: &OutflowTrace, a: f64) -> OutflowTrace {
    let h = h.clone();
    OutflowTrace::Custom { name: "scaled".into(), eval: Arc::new(move |y| h.eval(y, 0.1, 1.0) * a) }
}
