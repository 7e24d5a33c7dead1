//! Run configuration in a sectioned `key = value` text format.
//!
//! ```text
//! [geometry]
//! catalog = circle
//! [physics]
//! nu = 1
//! [data]
//! inflow = fourier 1 0.5 1.0
//! ```
//!
//! `#` starts a comment. Unknown sections and keys are errors.

use std::collections::BTreeMap;
use std::path::PathBuf;

use cascade_core::data::{BodyForce, InflowData, OutflowTrace};
use cascade_core::geometry::{
    build_domain, catalog_domain, CascadeDomain, PeriodicCurve, PeriodicSpline, Point, ProfileCurve, CATALOG,
};
use cascade_core::mesh::{generate_mesh, generate_mesh_with_cut, Mesh};
use cascade_core::solver::{Backend, ProblemData, SolverConfig};
use cascade_core::tensorfield::RightInverseKind;
use cascade_core::verify::ConvergenceCase;

use crate::error::{CliError, Result};

const SECTIONS: [(&str, &[&str]); 6] = [
    (
        "geometry",
        &[
            "catalog", "d", "tau", "profile", "center", "radius", "semi_a", "semi_b", "angle", "chord", "thickness",
            "camber", "knots", "gamma0",
        ],
    ),
    ("physics", &["nu"]),
    ("data", &["case", "inflow", "force", "traction"]),
    ("discretization", &["target_h", "levels", "enforce_outflow_flux", "cut_offset", "delta_in", "delta_out"]),
    ("solver", &["method", "tol", "max_iter", "right_inverse"]),
    ("output", &["directory", "formats"]),
];

const PROFILE_KEYS: [&str; 9] = ["center", "radius", "semi_a", "semi_b", "angle", "chord", "thickness", "camber", "knots"];

#[derive(Clone, Debug)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub text: bool,
    pub vtk: bool,
}

/// Validated run description.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub domain: CascadeDomain,
    pub nu: f64,
    /// Built-in case with a known solution; fixes domain and data.
    pub case: Option<ConvergenceCase>,
    pub data: ProblemData,
    pub target_h: f64,
    pub levels: usize,
    pub enforce_outflow_flux: bool,
    pub cut_offset: Option<f64>,
    pub delta_in: Option<f64>,
    pub delta_out: Option<f64>,
    pub backend: Backend,
    pub right_inverse: RightInverseKind,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            nu: self.nu,
            backend: self.backend.clone(),
            check_outflow_flux: self.enforce_outflow_flux,
            right_inverse: self.right_inverse,
            delta_in: self.delta_in,
            delta_out: self.delta_out,
        }
    }

    /// Base mesh (with a cut line when `cut_offset` is set) refined `level` times.
    pub fn mesh(&self, level: usize) -> cascade_core::error::Result<Mesh> {
        let base = match self.cut_offset {
            Some(c) => generate_mesh_with_cut(&self.domain, self.target_h, c)?,
            None => generate_mesh(&self.domain, self.target_h)?,
        };
        Ok(base.refine_n(level))
    }
}

#[derive(Clone, Debug)]
struct Entry {
    line: usize,
    value: String,
}

type Raw = BTreeMap<(String, String), Entry>;

fn read_sections(text: &str) -> Result<Raw> {
    let mut raw = Raw::new();
    let mut section: Option<&str> = None;
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| CliError::Parse { line: n, msg: format!("malformed section header `{line}`") })?
                .trim();
            let known = SECTIONS.iter().find(|(s, _)| *s == name);
            section = Some(
                known
                    .ok_or_else(|| CliError::Parse { line: n, msg: format!("unknown section [{name}]") })?
                    .0,
            );
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Parse { line: n, msg: format!("expected `key = value`, got `{line}`") })?;
        let (key, value) = (key.trim(), value.trim());
        let sec = section.ok_or_else(|| CliError::Parse { line: n, msg: format!("key `{key}` outside a section") })?;
        let keys = SECTIONS.iter().find(|(s, _)| *s == sec).map(|(_, k)| *k).unwrap_or(&[]);
        if !keys.contains(&key) {
            return Err(CliError::Parse { line: n, msg: format!("unknown key `{key}` in [{sec}]") });
        }
        if value.is_empty() {
            return Err(CliError::Parse { line: n, msg: format!("key `{key}` has no value") });
        }
        let slot = (sec.to_string(), key.to_string());
        if let Some(prev) = raw.get(&slot) {
            return Err(CliError::Parse {
                line: n,
                msg: format!("key `{key}` already set at line {}", prev.line),
            });
        }
        raw.insert(slot, Entry { line: n, value: value.to_string() });
    }
    Ok(raw)
}

struct Fields {
    raw: Raw,
}

impl Fields {
    fn get(&self, sec: &str, key: &str) -> Option<&Entry> {
        self.raw.get(&(sec.to_string(), key.to_string()))
    }

    fn has_section(&self, sec: &str) -> bool {
        self.raw.keys().any(|(s, _)| s == sec)
    }

    fn text(&self, sec: &str, key: &str) -> Option<&str> {
        self.get(sec, key).map(|e| e.value.as_str())
    }

    fn numbers(&self, sec: &str, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(e) = self.get(sec, key) else { return Ok(None) };
        numbers_of(e.line, key, e.value.split_whitespace()).map(Some)
    }

    fn number(&self, sec: &str, key: &str) -> Result<Option<f64>> {
        match self.numbers(sec, key)? {
            None => Ok(None),
            Some(v) if v.len() == 1 => Ok(Some(v[0])),
            Some(_) => Err(CliError::Parse {
                line: self.get(sec, key).map_or(0, |e| e.line),
                msg: format!("`{key}` expects a single number"),
            }),
        }
    }

    fn positive(&self, sec: &str, key: &str) -> Result<Option<f64>> {
        match self.number(sec, key)? {
            Some(v) if !(v > 0.0 && v.is_finite()) => {
                Err(CliError::validation(key, format!("must be positive and finite, got {v}")))
            }
            v => Ok(v),
        }
    }

    fn integer(&self, sec: &str, key: &str) -> Result<Option<usize>> {
        let Some(e) = self.get(sec, key) else { return Ok(None) };
        e.value
            .parse()
            .map(Some)
            .map_err(|_| CliError::Parse { line: e.line, msg: format!("`{key}` expects a non-negative integer") })
    }

    fn flag(&self, sec: &str, key: &str) -> Result<Option<bool>> {
        let Some(e) = self.get(sec, key) else { return Ok(None) };
        match e.value.as_str() {
            "true" => Ok(Some(true)),
            "false" => Ok(Some(false)),
            _ => Err(CliError::Parse { line: e.line, msg: format!("`{key}` expects true or false") }),
        }
    }
}

fn numbers_of<'a>(line: usize, key: &str, tokens: impl Iterator<Item = &'a str>) -> Result<Vec<f64>> {
    tokens
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| CliError::Parse { line, msg: format!("`{key}`: `{t}` is not a number") })
        })
        .collect()
}

/// Catalog id followed by its numeric parameters, e.g. `fourier 1 0.5 1.0`.
fn catalog_entry(f: &Fields, sec: &str, key: &str) -> Result<Option<(String, Vec<f64>)>> {
    let Some(e) = f.get(sec, key) else { return Ok(None) };
    let mut tokens = e.value.split_whitespace();
    let id = tokens.next().unwrap_or_default().to_string();
    let params = numbers_of(e.line, key, tokens)?;
    Ok(Some((id, params)))
}

fn expect_params(key: &str, id: &str, params: &[f64], names: &[&str]) -> Result<()> {
    if params.len() != names.len() {
        let list = if names.is_empty() { "no parameters".to_string() } else { names.join(" ") };
        return Err(CliError::validation(key, format!("`{id}` expects {list}, got {} values", params.len())));
    }
    Ok(())
}

fn mode_of(key: &str, v: f64) -> Result<u32> {
    if v >= 1.0 && v.fract() == 0.0 && v <= 64.0 {
        Ok(v as u32)
    } else {
        Err(CliError::validation(key, format!("mode must be an integer in 1..=64, got {v}")))
    }
}

fn inflow_of(id: &str, p: &[f64]) -> Result<InflowData> {
    let key = "inflow";
    Ok(match id {
        "zero" => {
            expect_params(key, id, p, &[])?;
            InflowData::zero()
        }
        "constant" => {
            expect_params(key, id, p, &["g1", "g2"])?;
            InflowData::Constant { g1: p[0], g2: p[1] }
        }
        "fourier" => {
            expect_params(key, id, p, &["mode", "amp1", "amp2"])?;
            InflowData::Fourier { mode: mode_of(key, p[0])?, amp1: p[1], amp2: p[2] }
        }
        "plug" => {
            expect_params(key, id, p, &["u0", "width"])?;
            if !(p[1] > 0.0) {
                return Err(CliError::validation(key, "plug width must be positive"));
            }
            InflowData::PlugBoundaryLayer { u0: p[0], width: p[1] }
        }
        _ => return Err(CliError::validation(key, format!("unknown inflow `{id}` (zero, constant, fourier, plug)"))),
    })
}

fn force_of(id: &str, p: &[f64], tau: f64) -> Result<BodyForce> {
    let key = "force";
    Ok(match id {
        "zero" => {
            expect_params(key, id, p, &[])?;
            BodyForce::Zero
        }
        "constant" => {
            expect_params(key, id, p, &["f1", "f2"])?;
            BodyForce::Constant { f1: p[0], f2: p[1] }
        }
        "fourier" => {
            expect_params(key, id, p, &["mode", "amp1", "amp2"])?;
            BodyForce::Fourier { mode: mode_of(key, p[0])?, amp1: p[1], amp2: p[2], tau }
        }
        "poly" => {
            expect_params(key, id, p, &[])?;
            BodyForce::Poly
        }
        "gaussian" => {
            expect_params(key, id, p, &["x1", "x2", "width", "amp"])?;
            if !(p[2] > 0.0) {
                return Err(CliError::validation(key, "gaussian width must be positive"));
            }
            BodyForce::Gaussian { center: Point::new(p[0], p[1]), width: p[2], amp: p[3] }
        }
        _ => {
            return Err(CliError::validation(
                key,
                format!("unknown force `{id}` (zero, constant, fourier, poly, gaussian)"),
            ))
        }
    })
}

fn traction_of(id: &str, p: &[f64]) -> Result<OutflowTrace> {
    let key = "traction";
    Ok(match id {
        "zero" => {
            expect_params(key, id, p, &[])?;
            OutflowTrace::Zero
        }
        "constant" => {
            expect_params(key, id, p, &["h1", "h2"])?;
            OutflowTrace::Constant { h1: p[0], h2: p[1] }
        }
        "fourier" => {
            expect_params(key, id, p, &["mode", "mean1", "mean2", "amp1", "amp2"])?;
            OutflowTrace::Fourier { mode: mode_of(key, p[0])?, mean1: p[1], mean2: p[2], amp1: p[3], amp2: p[4] }
        }
        _ => return Err(CliError::validation(key, format!("unknown traction `{id}` (zero, constant, fourier)"))),
    })
}

fn case_of(name: &str, nu: f64) -> Result<ConvergenceCase> {
    match name {
        "manufactured" => Ok(ConvergenceCase::Manufactured { nu }),
        "constant-flow" => Ok(ConvergenceCase::ConstantFlow),
        _ => Err(CliError::validation("case", format!("unknown case `{name}` (manufactured, constant-flow)"))),
    }
}

fn gamma0_of(f: &Fields) -> Result<PeriodicCurve> {
    let Some((id, p)) = catalog_entry(f, "geometry", "gamma0")? else {
        return Ok(PeriodicCurve::straight(0.0, 0.0));
    };
    match id.as_str() {
        "straight" => {
            expect_params("gamma0", &id, &p, &["a02", "b02"])?;
            Ok(PeriodicCurve::straight(p[0], p[1]))
        }
        "sinusoidal" => {
            expect_params("gamma0", &id, &p, &["a02", "b02", "amplitude"])?;
            Ok(PeriodicCurve::Sinusoidal { a02: p[0], b02: p[1], amplitude: p[2] })
        }
        _ => Err(CliError::validation("gamma0", format!("unknown curve `{id}` (straight, sinusoidal)"))),
    }
}

fn profile_of(f: &Fields) -> Result<ProfileCurve> {
    let kind = f.text("geometry", "profile").unwrap_or("empty");
    let used: &[&str] = match kind {
        "empty" => &[],
        "circle" => &["center", "radius"],
        "ellipse" => &["center", "semi_a", "semi_b", "angle"],
        "blade" => &["center", "chord", "thickness", "camber", "angle"],
        "spline" => &["knots"],
        _ => {
            return Err(CliError::validation(
                "profile",
                format!("unknown profile `{kind}` (empty, circle, ellipse, blade, spline)"),
            ))
        }
    };
    for key in PROFILE_KEYS {
        if f.get("geometry", key).is_some() && !used.contains(&key) {
            return Err(CliError::validation(key, format!("not a parameter of profile `{kind}`")));
        }
    }
    let required = |key: &str| -> Result<f64> {
        f.number("geometry", key)?.ok_or_else(|| CliError::validation(key, format!("required by profile `{kind}`")))
    };
    let center = || -> Result<Point> {
        match f.numbers("geometry", "center")? {
            Some(c) if c.len() == 2 => Ok(Point::new(c[0], c[1])),
            Some(_) => Err(CliError::validation("center", "expects two coordinates")),
            None => Err(CliError::validation("center", format!("required by profile `{kind}`"))),
        }
    };
    let angle = || -> Result<f64> { Ok(f.number("geometry", "angle")?.unwrap_or(0.0)) };
    Ok(match kind {
        "empty" => ProfileCurve::Empty,
        "circle" => ProfileCurve::Circle { center: center()?, radius: required("radius")? },
        "ellipse" => ProfileCurve::Ellipse {
            center: center()?,
            semi_a: required("semi_a")?,
            semi_b: required("semi_b")?,
            angle: angle()?,
        },
        "blade" => ProfileCurve::Blade {
            center: center()?,
            chord: required("chord")?,
            thickness: required("thickness")?,
            camber: required("camber")?,
            angle: angle()?,
        },
        _ => {
            let k = f
                .numbers("geometry", "knots")?
                .ok_or_else(|| CliError::validation("knots", "required by profile `spline`"))?;
            if k.len() % 2 != 0 {
                return Err(CliError::validation("knots", "expects x y pairs"));
            }
            let pts = k.chunks(2).map(|c| Point::new(c[0], c[1])).collect();
            ProfileCurve::Spline(PeriodicSpline::new(pts).map_err(|e| CliError::validation("knots", e.to_string()))?)
        }
    })
}

fn domain_of(f: &Fields) -> Result<CascadeDomain> {
    if let Some(name) = f.text("geometry", "catalog") {
        if f.raw.keys().any(|(s, k)| s == "geometry" && k != "catalog") {
            return Err(CliError::validation("catalog", "cannot be combined with other geometry keys"));
        }
        if !CATALOG.contains(&name) {
            return Err(CliError::validation(
                "catalog",
                format!("unknown geometry `{name}` ({})", CATALOG.join(", ")),
            ));
        }
        return catalog_domain(name).map_err(|e| CliError::validation("catalog", e.to_string()));
    }
    let d = f.positive("geometry", "d")?.ok_or_else(|| CliError::validation("d", "missing"))?;
    let tau = f.positive("geometry", "tau")?.ok_or_else(|| CliError::validation("tau", "missing"))?;
    let profile = profile_of(f)?;
    let gamma0 = gamma0_of(f)?;
    build_domain(d, tau, profile, gamma0).map_err(|e| CliError::validation("profile", e.to_string()))
}

/// Parses and validates a configuration text.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let f = Fields { raw: read_sections(text)? };

    let nu = f.number("physics", "nu")?.ok_or_else(|| CliError::validation("nu", "missing"))?;
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(CliError::validation("nu", format!("viscosity must be positive and finite, got {nu}")));
    }

    let case = f.text("data", "case").map(|c| case_of(c, nu)).transpose()?;
    let (domain, data) = match &case {
        Some(c) => {
            if f.has_section("geometry") {
                return Err(CliError::validation("case", "a built-in case fixes its own geometry"));
            }
            for key in ["inflow", "force", "traction"] {
                if f.get("data", key).is_some() {
                    return Err(CliError::validation(key, "cannot be combined with a built-in case"));
                }
            }
            (c.domain(), c.data())
        }
        None => {
            if !f.has_section("geometry") {
                return Err(CliError::validation("geometry", "missing [geometry] section"));
            }
            let dom = domain_of(&f)?;
            let g = match catalog_entry(&f, "data", "inflow")? {
                Some((id, p)) => inflow_of(&id, &p)?,
                None => InflowData::zero(),
            };
            let force = match catalog_entry(&f, "data", "force")? {
                Some((id, p)) => force_of(&id, &p, dom.tau())?,
                None => BodyForce::Zero,
            };
            let h = match catalog_entry(&f, "data", "traction")? {
                Some((id, p)) => traction_of(&id, &p)?,
                None => OutflowTrace::Zero,
            };
            (dom, ProblemData { g, f: force, h })
        }
    };

    let target_h = f.positive("discretization", "target_h")?.unwrap_or(case.as_ref().map_or(0.1, |c| c.base_h()));
    let levels = f.integer("discretization", "levels")?.unwrap_or(4);
    if !(1..=8).contains(&levels) {
        return Err(CliError::validation("levels", format!("must lie in 1..=8, got {levels}")));
    }
    let enforce_outflow_flux = f.flag("discretization", "enforce_outflow_flux")?.unwrap_or(false);
    let cut_offset = match f.number("discretization", "cut_offset")? {
        Some(c) if !(c > 0.0 && c < domain.tau()) => {
            return Err(CliError::validation("cut_offset", format!("must lie in (0, tau), got {c}")))
        }
        Some(c) => Some(c),
        None => case.as_ref().map(|c| c.shift()),
    };
    let delta_in = f.positive("discretization", "delta_in")?;
    let delta_out = f.positive("discretization", "delta_out")?;
    if let (Some(a), Some(b)) = (delta_in, delta_out) {
        if a + b >= domain.d() {
            return Err(CliError::validation("delta_out", format!("strips overlap: {a} + {b} >= d")));
        }
    }

    let tol = f.positive("solver", "tol")?.unwrap_or(1e-10);
    if tol >= 1.0 {
        return Err(CliError::validation("tol", format!("must be below 1, got {tol}")));
    }
    let max_iter = f.integer("solver", "max_iter")?.unwrap_or(20_000);
    if max_iter == 0 {
        return Err(CliError::validation("max_iter", "must be at least 1"));
    }
    let backend = match f.text("solver", "method").unwrap_or("direct") {
        "direct" => Backend::Direct,
        "minres" => Backend::Minres { tol, max_iter },
        m => return Err(CliError::validation("method", format!("unknown method `{m}` (direct, minres)"))),
    };
    let right_inverse = match f.text("solver", "right_inverse").unwrap_or("free-inflow") {
        "free-inflow" => RightInverseKind::FreeInflow,
        "mirrored" => RightInverseKind::Mirrored,
        r => {
            return Err(CliError::validation(
                "right_inverse",
                format!("unknown right inverse `{r}` (free-inflow, mirrored)"),
            ))
        }
    };

    let directory = PathBuf::from(f.text("output", "directory").unwrap_or("out"));
    let (mut text_out, mut vtk) = (false, false);
    for fmt in f.text("output", "formats").unwrap_or("text").split([',', ' ']).filter(|s| !s.is_empty()) {
        match fmt {
            "text" => text_out = true,
            "vtk" => vtk = true,
            _ => return Err(CliError::validation("formats", format!("unknown format `{fmt}` (text, vtk)"))),
        }
    }

    Ok(RunConfig {
        domain,
        nu,
        case,
        data,
        target_h,
        levels,
        enforce_outflow_flux,
        cut_offset,
        delta_in,
        delta_out,
        backend,
        right_inverse,
        output: OutputConfig { directory, text: text_out, vtk },
    })
}
