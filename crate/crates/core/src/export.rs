//! Plain-text field files and legacy ASCII VTK output.

use std::fmt::Write as _;
use std::io::Write;

use crate::error::Result;
use crate::femspace::{ScalarField, VectorField};
use crate::tensorfield::TensorField;

pub const FIELD_VERSION: &str = "cascade-field v1";

/// Nodal velocity and pressure: `N <nodes>` then `x y u1 u2 p` per P2 node, with
/// `p` linearly interpolated at edge nodes.
pub fn write_solution<W: Write>(u: &VectorField, p: &ScalarField, w: &mut W) -> Result<()> {
    let layout = u.space.layout();
    let pressure = nodal_pressure(p, u);
    let mut s = String::new();
    let _ = writeln!(s, "{FIELD_VERSION}");
    let _ = writeln!(s, "kind solution");
    let _ = writeln!(s, "N {}", layout.num_nodes());
    for n in 0..layout.num_nodes() {
        let x = layout.node_point(n);
        let k = u.space.nodes().dof(n);
        let _ = writeln!(
            s,
            "{:.16e} {:.16e} {:.16e} {:.16e} {:.16e}",
            x.x,
            x.y,
            u.coeffs[2 * k],
            u.coeffs[2 * k + 1],
            pressure[n]
        );
    }
    w.write_all(s.as_bytes())?;
    Ok(())
}

/// Nodal tensor entries `x y F11 F12 F21 F22` per P2 node.
pub fn write_tensor<W: Write>(tf: &TensorField, w: &mut W) -> Result<()> {
    let layout = tf.space.layout();
    let mut s = String::new();
    let _ = writeln!(s, "{FIELD_VERSION}");
    let _ = writeln!(s, "kind tensor");
    let _ = writeln!(s, "N {}", layout.num_nodes());
    for n in 0..layout.num_nodes() {
        let x = layout.node_point(n);
        let c = tf.coeffs[tf.space.nodes().dof(n)];
        let _ = writeln!(s, "{:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e}", x.x, x.y, c[0], c[1], c[2], c[3]);
    }
    w.write_all(s.as_bytes())?;
    Ok(())
}

/// Pressure at every P2 node of the velocity layout.
fn nodal_pressure(p: &ScalarField, u: &VectorField) -> Vec<f64> {
    let layout = u.space.layout();
    let mut out = vec![0.0; layout.num_nodes()];
    for t in 0..layout.mesh().num_triangles() {
        let nodes = layout.tri_nodes(t);
        let pd = p.space.tri_dofs(t);
        let v = pd.map(|k| p.coeffs[k]);
        for i in 0..3 {
            out[nodes[i]] = v[i];
            out[nodes[3 + i]] = 0.5 * (v[i] + v[(i + 1) % 3]);
        }
    }
    out
}

/// Unstructured-grid legacy VTK with quadratic triangles (cell type 22), point
/// data `velocity` and `pressure`.
pub fn write_vtk<W: Write>(u: &VectorField, p: &ScalarField, w: &mut W) -> Result<()> {
    let layout = u.space.layout();
    let mesh = layout.mesh();
    let (nn, nt) = (layout.num_nodes(), mesh.num_triangles());
    let pressure = nodal_pressure(p, u);
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    s.push_str("cascade stokes solution\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {nn} double");
    for n in 0..nn {
        let x = layout.node_point(n);
        let _ = writeln!(s, "{:.16e} {:.16e} 0", x.x, x.y);
    }
    let _ = writeln!(s, "CELLS {nt} {}", nt * 7);
    for t in 0..nt {
        let c = layout.tri_nodes(t);
        let _ = writeln!(s, "6 {} {} {} {} {} {}", c[0], c[1], c[2], c[3], c[4], c[5]);
    }
    let _ = writeln!(s, "CELL_TYPES {nt}");
    for _ in 0..nt {
        s.push_str("22\n");
    }
    let _ = writeln!(s, "POINT_DATA {nn}");
    s.push_str("VECTORS velocity double\n");
    for n in 0..nn {
        let k = u.space.nodes().dof(n);
        let _ = writeln!(s, "{:.16e} {:.16e} 0", u.coeffs[2 * k], u.coeffs[2 * k + 1]);
    }
    s.push_str("SCALARS pressure double 1\nLOOKUP_TABLE default\n");
    for v in &pressure {
        let _ = writeln!(s, "{v:.16e}");
    }
    w.write_all(s.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CascadeDomain, Point};
    use crate::mesh::generate_mesh;
    use crate::solver::Discretization;

    #[test]
    fn files_start_with_headers_and_count_nodes() {
        let disc = Discretization::new(generate_mesh(&CascadeDomain::channel(1.0, 1.0), 0.5).unwrap());
        let u = VectorField::from_fn(disc.vspace.clone(), &|x| Point::new(x.x, 1.0));
        let p = ScalarField::from_fn(disc.pspace.clone(), &|x| 2.0 * x.x);
        let mut a = Vec::new();
        write_solution(&u, &p, &mut a).unwrap();
        let a = String::from_utf8(a).unwrap();
        let lines: Vec<&str> = a.lines().collect();
        assert_eq!(lines[0], FIELD_VERSION);
        assert_eq!(lines.len(), 3 + disc.layout.num_nodes());
        // Linear pressure is reproduced at edge nodes.
        for l in &lines[3..] {
            let v: Vec<f64> = l.split_whitespace().map(|t| t.parse().unwrap()).collect();
            assert!((v[4] - 2.0 * v[0]).abs() < 1e-12);
        }
        let mut b = Vec::new();
        write_vtk(&u, &p, &mut b).unwrap();
        let b = String::from_utf8(b).unwrap();
        assert!(b.starts_with("# vtk DataFile Version 3.0\n"));
        assert!(b.contains(&format!("CELL_TYPES {}", disc.mesh.num_triangles())));
    }
}
