use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn afem(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afem"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("AFEM_THREADS")
        .output()
        .expect("binary runs")
}

fn only_run_dir(out: &Path) -> PathBuf {
    let dirs: Vec<PathBuf> = fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.into_iter().next().unwrap()
}

/// Sections of a legacy ASCII VTK file: points, cells and named scalars.
struct Vtk {
    points: Vec<[f64; 3]>,
    cells: Vec<Vec<usize>>,
    point_scalars: Vec<(String, Vec<f64>)>,
    cell_scalars: Vec<(String, Vec<f64>)>,
}

fn read_vtk(text: &str) -> Vtk {
    let mut tok = text.lines().skip(2).flat_map(str::split_whitespace);
    let mut vtk = Vtk { points: vec![], cells: vec![], point_scalars: vec![], cell_scalars: vec![] };
    let mut on_cells = false;
    let mut n_points = 0;
    let mut n_cells = 0;
    let num = |t: Option<&str>| t.unwrap().parse::<f64>().unwrap();
    while let Some(t) = tok.next() {
        match t {
            "ASCII" | "DATASET" | "UNSTRUCTURED_GRID" => {}
            "POINTS" => {
                n_points = tok.next().unwrap().parse().unwrap();
                tok.next();
                for _ in 0..n_points {
                    vtk.points.push([num(tok.next()), num(tok.next()), num(tok.next())]);
                }
            }
            "CELLS" => {
                n_cells = tok.next().unwrap().parse().unwrap();
                tok.next();
                for _ in 0..n_cells {
                    let k: usize = tok.next().unwrap().parse().unwrap();
                    vtk.cells.push((0..k).map(|_| tok.next().unwrap().parse().unwrap()).collect());
                }
            }
            "CELL_TYPES" => {
                let n: usize = tok.next().unwrap().parse().unwrap();
                for _ in 0..n {
                    assert_eq!(tok.next(), Some("5"));
                }
            }
            "POINT_DATA" => {
                tok.next();
                on_cells = false;
            }
            "CELL_DATA" => {
                tok.next();
                on_cells = true;
            }
            "SCALARS" => {
                let name = tok.next().unwrap().to_string();
                tok.next();
                tok.next();
                assert_eq!(tok.next(), Some("LOOKUP_TABLE"));
                tok.next();
                let n = if on_cells { n_cells } else { n_points };
                let vals = (0..n).map(|_| num(tok.next())).collect();
                if on_cells {
                    vtk.cell_scalars.push((name, vals));
                } else {
                    vtk.point_scalars.push((name, vals));
                }
            }
            other => panic!("unexpected token {other:?}"),
        }
    }
    vtk
}

fn json_array(v: &serde_json::Value, key: &str) -> Vec<f64> {
    v[key].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn adaptive_run_writes_history_and_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let o = afem(&["--problem", "square_smooth", "--max-iters", "5", "--eps", "0"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = only_run_dir(tmp.path());
    let csv = fs::read_to_string(dir.join("history.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "k,elements,dofs,eta,eta_tilde,osc,energy_error,marked,seconds");
    assert_eq!(lines.len(), 7);
    for (k, line) in lines[1..].iter().enumerate() {
        assert!(line.starts_with(&format!("{k},")));
    }
    for f in ["config.toml", "solution.json", "solution.vtk", "mesh.txt", "indicators.csv", "checks.json", "checks.md"] {
        assert!(dir.join(f).exists(), "missing {f}");
    }
    let cfg = fs::read_to_string(dir.join("config.toml")).unwrap();
    assert!(cfg.contains("max_iters = 5"));
    let checks: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("checks.json")).unwrap()).unwrap();
    assert!(checks["checks"].as_array().unwrap().iter().all(|c| c["passed"].as_bool().unwrap()));
}

#[test]
fn vtk_round_trips_solution_values() {
    let tmp = tempfile::tempdir().unwrap();
    let o = afem(&["--problem", "lshape", "--max-iters", "4", "--eps", "0"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = only_run_dir(tmp.path());
    let vtk = read_vtk(&fs::read_to_string(dir.join("solution.vtk")).unwrap());
    let sol: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("solution.json")).unwrap()).unwrap();
    let vertex = json_array(&sol, "vertex_dofs");
    let mesh = fs::read_to_string(dir.join("mesh.txt")).unwrap();
    let header: Vec<&str> = mesh.lines().next().unwrap().split_whitespace().collect();
    let (nv, nc): (usize, usize) = (header[1].parse().unwrap(), header[4].parse().unwrap());
    assert_eq!(vtk.points.len(), nv);
    assert_eq!(vtk.cells.len(), nc);
    assert!(vtk.cells.iter().all(|c| c.len() == 3 && c.iter().all(|&v| v < nv)));
    let (name, u) = &vtk.point_scalars[0];
    assert_eq!(name, "u");
    assert_eq!(u.len(), vertex.len());
    for (a, b) in u.iter().zip(&vertex) {
        assert!((a - b).abs() <= 1e-7 * b.abs().max(1e-12));
    }
    let names: Vec<&str> = vtk.cell_scalars.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["hessian_frobenius", "eta"]);
    // eta in the VTK file against the indicator CSV of the same mesh
    let ind = fs::read_to_string(dir.join("indicators.csv")).unwrap();
    let eta_sq: Vec<f64> = ind.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    for (a, b) in vtk.cell_scalars[1].1.iter().zip(&eta_sq) {
        assert!((a * a - b).abs() <= 1e-7 * b.max(1e-30));
    }
    // vertex coordinates against the mesh file
    for (p, line) in vtk.points.iter().zip(mesh.lines().skip(1)) {
        let xy: Vec<f64> = line.split_whitespace().map(|t| t.parse().unwrap()).collect();
        assert_eq!([p[0], p[1]], [xy[0], xy[1]]);
    }
}

#[test]
fn invalid_theta_exits_with_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = afem(&["--theta", "1.5"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("(0,1)"));
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[adaptive]\ntheta = \"high\"\n").unwrap();
    assert_eq!(afem(&["--config", bad.to_str().unwrap()], tmp.path()).status.code(), Some(2));
    assert_eq!(afem(&["--mode", "verify:nothing"], tmp.path()).status.code(), Some(2));
    assert_eq!(afem(&["--material", "1,0.7"], tmp.path()).status.code(), Some(2));
    assert_eq!(afem(&["--problem", "disc"], tmp.path()).status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_afem")).arg("--out").arg(tmp.path()).env("AFEM_THREADS", "many").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_with_flag_override() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("run.toml");
    fs::write(&file, "mode = \"uniform\"\n\n[problem]\nname = \"lshape\"\n\n[adaptive]\nmax_iters = 1\neps = 0.0\n").unwrap();
    let out = tmp.path().join("out");
    let o = afem(&["--config", file.to_str().unwrap(), "--max-iters", "2", "--no-vtk"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = only_run_dir(&out);
    assert!(dir.file_name().unwrap().to_string_lossy().ends_with("-uniform"));
    let csv = fs::read_to_string(dir.join("history.csv")).unwrap();
    let cells: Vec<usize> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(cells, [6, 24, 96]);
    assert_eq!(fs::read_to_string(dir.join("config.input.toml")).unwrap(), fs::read_to_string(&file).unwrap());
    assert!(!dir.join("solution.vtk").exists());
}

#[test]
fn mesh_file_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let mesh = tmp.path().join("square.txt");
    fs::write(&mesh, "vertices 4 / triangles 2\n0 0\n1 0\n1 1\n0 1\n0 1 2\n0 2 3\n").unwrap();
    let out = tmp.path().join("out");
    let o = afem(&["--mesh", mesh.to_str().unwrap(), "--max-iters", "3", "--eps", "0", "--material", "12,0"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let bad = tmp.path().join("bad.txt");
    fs::write(&bad, "vertices 3 / triangles 1\n0 0\n1 0\n2 0\n0 1 2\n").unwrap();
    assert_eq!(afem(&["--mesh", bad.to_str().unwrap()], &out).status.code(), Some(2));
}

#[test]
fn verify_interpolation_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = afem(&["--mode", "verify:interpolation", "--seed", "3"], tmp.path());
    assert!(o.status.success(), "{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
    let dir = only_run_dir(tmp.path());
    let rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("verify_interpolation.json")).unwrap()).unwrap();
    for c in rep["checks"].as_array().unwrap() {
        assert!(c["passed"].as_bool().unwrap());
        if c["kind"] == "identity" {
            assert!(c["value"].as_f64().unwrap() <= 1e-9);
        }
    }
    assert!(dir.join("verify_interpolation.md").exists());
}
