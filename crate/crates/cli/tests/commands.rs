use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CHANNEL: &str = "[geometry]\nd = 1\ntau = 1\nprofile = empty\n[physics]\nnu = 1\n[data]\ninflow = constant 1 0\n\
                       [discretization]\ntarget_h = 0.25\n[output]\nformats = text vtk\n";

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("run.cfg");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_cascade"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn first_line(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_string()
}

fn assert_headers(dir: &Path) {
    for entry in fs::read_dir(dir.join("out")).unwrap() {
        let path = entry.unwrap().path();
        let line = first_line(&path);
        assert!(
            line.starts_with("# cascade-") || line.starts_with("cascade-") || line.starts_with("# vtk DataFile Version"),
            "{}: {line}",
            path.display()
        );
    }
}

#[test]
fn solve_on_constant_flow_channel() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), CHANNEL, &["solve"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["solution.txt", "tensor.txt", "solution.vtk", "summary.csv"] {
        assert!(dir.path().join("out").join(name).exists(), "{name}");
    }
    let summary = fs::read_to_string(dir.path().join("out/summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(2).collect();
    assert_eq!(rows.len(), 1);
    // Inflow and outflow flux both equal τ·1.
    let cols: Vec<f64> = rows[0].split(',').map(|c| c.parse().unwrap()).collect();
    assert!((cols[4] - 1.0).abs() < 1e-12 && (cols[5] - 1.0).abs() < 1e-12, "{}", rows[0]);
    // The exact velocity is (1, 0) at every node.
    let field = fs::read_to_string(dir.path().join("out/solution.txt")).unwrap();
    for line in field.lines().skip(3) {
        let v: Vec<f64> = line.split_whitespace().map(|t| t.parse().unwrap()).collect();
        assert!((v[2] - 1.0).abs() < 1e-10 && v[3].abs() < 1e-10 && v[4].abs() < 1e-10, "{line}");
    }
    assert_headers(dir.path());
}

#[test]
fn manufactured_convergence_with_four_levels() {
    let dir = tempfile::tempdir().unwrap();
    let config = "[physics]\nnu = 1\n[data]\ncase = manufactured\n[discretization]\nlevels = 4\n";
    let out = run(dir.path(), config, &["convergence", "--threads", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let csv = fs::read_to_string(dir.path().join("out/convergence.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "# cascade-convergence v1");
    assert!(lines[1].starts_with("case,level,h_max,"));
    assert_eq!(lines.len() - 2, 4);
    assert!(lines[2..].iter().all(|l| l.starts_with("manufactured,")));
}

#[test]
fn convergence_csv_is_byte_identical_across_runs() {
    let config = "[physics]\nnu = 1\n[data]\ncase = constant-flow\n[discretization]\nlevels = 3\n";
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let out = run(dir.path(), config, &["convergence", "--threads", "1"]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
        outputs.push(fs::read(dir.path().join("out/convergence.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn dq_check_solves_first() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), CHANNEL, &["dq-check"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/dq.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 4);
    assert_headers(dir.path());
}

#[test]
fn check_commands_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = CHANNEL.replace("[output]", "cut_offset = 0.5\n[output]");
    for (cmd, file) in [
        ("mesh", "mesh.txt"),
        ("lift-check", "lift-check.txt"),
        ("tensor-check", "tensor-check.txt"),
        ("shift-check", "shift-check.txt"),
    ] {
        let out = run(dir.path(), &config, &[cmd]);
        assert_eq!(out.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        let text = fs::read_to_string(dir.path().join("out").join(file)).unwrap();
        if file.ends_with("-check.txt") {
            assert!(text.ends_with("status pass\n"), "{text}");
        }
    }
    assert_headers(dir.path());
}

#[test]
fn failed_gate_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    // The mirrored right inverse misses the divergence test against pressures
    // that do not vanish on the inflow boundary.
    let config = "[geometry]\ncatalog = circle\n[physics]\nnu = 1\n[data]\nforce = constant 1 2\n\
                  [discretization]\ntarget_h = 0.15\n[solver]\nright_inverse = mirrored\n";
    let out = run(dir.path(), config, &["tensor-check"]);
    assert_eq!(out.status.code(), Some(1));
    let text = fs::read_to_string(dir.path().join("out/tensor-check.txt")).unwrap();
    assert!(text.ends_with("status fail\n"));
}

#[test]
fn errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &CHANNEL.replace("nu = 1", "nu = -1"), &["solve"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`nu`"));
    let out = run(dir.path(), CHANNEL, &["shift-check"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cut_offset"));
    let out = run(dir.path(), CHANNEL, &["convergence"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(dir.path(), CHANNEL, &["solve", "--threads", "0"]);
    assert_eq!(out.status.code(), Some(2));
}
