use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use loopfield::experiments::{segments_scenario, square_scenario};
use loopfield::field::{forward, forward_edges, Reading};
use loopfield::graph::Support;
use loopfield::inversion::{MinimalityReport, Solution};
use loopfield::loops::{LoopDecomposition, RepresentingAtom};
use serde_json::{json, Value};
use tempfile::TempDir;

fn loopfield(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loopfield"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, value: &Value) -> String {
    fs::write(dir.join(name), serde_json::to_string(value).unwrap()).unwrap();
    name.to_string()
}

fn read(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

fn grid(nx: usize, ny: usize) -> Value {
    json!({"nx": nx, "ny": ny, "h": 1.0, "origin": [0.0, 0.0]})
}

fn edge(kind: &str, i: usize, j: usize, w: f64) -> Value {
    json!({"kind": kind, "i": i, "j": j, "w": w})
}

/// Counterclockwise unit square loop at cell (i, j) with weight `w`.
fn square_loop(i: usize, j: usize, w: f64) -> Vec<Value> {
    vec![
        edge("h", i, j, w),
        edge("v", i + 1, j, w),
        edge("h", i, j + 1, -w),
        edge("v", i, j, -w),
    ]
}

#[test]
fn decompose_square_and_nested_levels() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let input = write(
        d,
        "square.json",
        &json!({"grid": grid(1, 1), "edges": square_loop(0, 0, 1.0)}),
    );
    let o = loopfield(&["decompose", "--input", &input, "--out-dir", "sq"], d);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    assert!(
        text.contains("loops: 1") && text.contains("reconstruction residual: 0\n"),
        "{text}"
    );
    let dec: LoopDecomposition =
        serde_json::from_value(read(&d.join("sq"), "decomposition.json")).unwrap();
    assert_eq!(dec.loop_count(), 1);
    let atoms: Vec<RepresentingAtom> =
        serde_json::from_value(read(&d.join("sq"), "representing_measure.json")).unwrap();
    assert_eq!(atoms.len(), 1);
    assert_eq!(atoms[0].mass, 4.0);

    // A 3x3 plateau of height 1 with a height-2 center: two nested loops.
    let mut edges = Vec::new();
    for i in 0..3 {
        edges.push(edge("h", i, 0, 1.0));
        edges.push(edge("h", i, 3, -1.0));
        edges.push(edge("v", 3, i, 1.0));
        edges.push(edge("v", 0, i, -1.0));
    }
    edges.extend(square_loop(1, 1, 1.0));
    let input = write(
        d,
        "nested.json",
        &json!({"grid": grid(3, 3), "edges": edges}),
    );
    let o = loopfield(&["decompose", "--input", &input, "--out-dir", "nested"], d);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("loops: 2"), "{}", stdout(&o));
}

#[test]
fn decompose_exit_codes() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let input = write(
        d,
        "open.json",
        &json!({"grid": grid(2, 2), "edges": [edge("h", 0, 0, 1.0)]}),
    );
    let o = loopfield(&["decompose", "--input", &input], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("vertex"));
    fs::write(d.join("bad.json"), "{ not json").unwrap();
    assert_eq!(
        loopfield(&["decompose", "--input", "bad.json"], d)
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        loopfield(&["decompose", "--input", "missing.json"], d)
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn forward_loop_is_silent_and_dipole_canonical() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let setup = write(
        d,
        "setup.json",
        &json!({"points": [[0.0, 0.0, 1.0], [0.3, 2.0, 0.5]], "v": [0.0, 0.0, 1.0]}),
    );
    let lp = write(
        d,
        "loop.json",
        &json!({"grid": grid(2, 2), "edges": square_loop(1, 0, 2.5)}),
    );
    let o = loopfield(
        &[
            "forward",
            "--input",
            &lp,
            "--setup",
            &setup,
            "--out-dir",
            "a",
            "--self-test",
        ],
        d,
    );
    assert!(o.status.success(), "{o:?}");
    let r = read(&d.join("a"), "reading.json");
    assert_eq!(r["values"], json!([0.0, 0.0]));
    assert_eq!(
        (r["points"].as_u64(), r["mu0"].as_f64()),
        (Some(2), Some(1.0))
    );

    let dip = write(
        d,
        "dipole.json",
        &json!({"edge_part": {"grid": grid(1, 1), "edges": []}, "dipole_part": {"atoms": [{"x": 0.0, "y": 0.0, "m": [0.0, 0.0, 1.0]}]}}),
    );
    let o = loopfield(
        &[
            "forward",
            "--input",
            &dip,
            "--setup",
            &setup,
            "--out-dir",
            "b",
        ],
        d,
    );
    assert!(o.status.success(), "{o:?}");
    let r: Reading = serde_json::from_value(read(&d.join("b"), "reading.json")).unwrap();
    assert!((r.values[0] - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-15);
}

fn invert_files(d: &Path, values: Vec<f64>) -> (String, String, String) {
    let sc = square_scenario().unwrap();
    let setup = write(d, "setup.json", &serde_json::to_value(&sc.setup).unwrap());
    let support = write(
        d,
        "support.json",
        &serde_json::to_value(&sc.support).unwrap(),
    );
    let reading = write(d, "reading.json", &json!({ "values": values }));
    (reading, setup, support)
}

#[test]
fn invert_zero_data_and_large_lambda() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let sc = square_scenario().unwrap();
    let (reading, setup, support) = invert_files(d, vec![0.0; sc.setup.len()]);
    let o = loopfield(
        &[
            "invert",
            "--input",
            &reading,
            "--setup",
            &setup,
            "--support",
            &support,
            "--lambda",
            "0.1",
            "--out-dir",
            "z",
        ],
        d,
    );
    assert!(o.status.success(), "{o:?}");
    let sol: Solution = serde_json::from_value(read(&d.join("z"), "solution.json")).unwrap();
    assert!(sol.certificate.passed && sol.weights.values().all(|w| *w == 0.0));

    let f = forward_edges(&sc.mu0, &sc.setup);
    let (reading, ..) = invert_files(d, f.values);
    let o = loopfield(
        &[
            "invert",
            "--input",
            &reading,
            "--setup",
            &setup,
            "--support",
            &support,
            "--lambda",
            "1000",
            "--out-dir",
            "big",
        ],
        d,
    );
    assert!(o.status.success(), "{o:?}");
    let sol: Solution = serde_json::from_value(read(&d.join("big"), "solution.json")).unwrap();
    assert!(sol.certificate.passed && sol.weights.values().all(|w| *w == 0.0));
}

#[test]
fn invert_square_is_symmetric_and_path_written() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let sc = square_scenario().unwrap();
    let f = forward_edges(&sc.mu0, &sc.setup);
    let g2 = f.weighted_norm_sq(&sc.setup);
    let (reading, setup, support) = invert_files(d, f.values);
    let o = loopfield(
        &[
            "invert",
            "--input",
            &reading,
            "--setup",
            &setup,
            "--support",
            &support,
            "--lambda",
            "0.01",
            "--path",
            "1,0.1,0.01",
            "--out-dir",
            "p",
        ],
        d,
    );
    assert!(o.status.success(), "{o:?}");
    let sol: Solution = serde_json::from_value(read(&d.join("p"), "solution.json")).unwrap();
    // Symmetric minimizer: |w| = (1 - lambda / |A mu0|^2) / 2 on all four edges.
    let expected = 0.5 * (1.0 - 0.01 / g2);
    for w in sol.weights.values() {
        assert!((w.abs() - expected).abs() < 1e-6, "{w} vs {expected}");
    }
    let csv = fs::read_to_string(d.join("p").join("path.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let wrong_end = loopfield(
        &[
            "invert",
            "--input",
            &reading,
            "--setup",
            &setup,
            "--support",
            &support,
            "--lambda",
            "0.02",
            "--path",
            "1,0.01",
        ],
        d,
    );
    assert_eq!(wrong_end.status.code(), Some(1));
}

#[test]
fn invert_without_convergence_exits_3_with_partial_output() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let sc = segments_scenario(7).unwrap();
    let setup = write(d, "setup.json", &serde_json::to_value(&sc.setup).unwrap());
    let support = write(
        d,
        "support.json",
        &serde_json::to_value(&sc.support).unwrap(),
    );
    let reading = write(
        d,
        "reading.json",
        &serde_json::to_value(forward(&sc.truth, &sc.setup).unwrap()).unwrap(),
    );
    let options = write(d, "options.json", &json!({"max_iters": 1}));
    let o = loopfield(
        &[
            "invert",
            "--input",
            &reading,
            "--setup",
            &setup,
            "--support",
            &support,
            "--lambda",
            "0.01",
            "--options",
            &options,
            "--out-dir",
            "x",
        ],
        d,
    );
    assert_eq!(o.status.code(), Some(3), "{o:?}");
    let sol: Solution = serde_json::from_value(read(&d.join("x"), "solution.json")).unwrap();
    assert!(!sol.converged);
}

#[test]
fn certify_and_silent_basis() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let support = write(
        d,
        "support.json",
        &serde_json::to_value(Support::full(loopfield::geometry::Grid::unit(2, 1))).unwrap(),
    );
    let lp = write(
        d,
        "loop.json",
        &json!({"grid": grid(2, 1), "edges": square_loop(0, 0, 1.0)}),
    );
    let o = loopfield(
        &[
            "certify",
            "--input",
            &lp,
            "--support",
            &support,
            "--out-dir",
            "c",
            "--self-test",
        ],
        d,
    );
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("verdict: violated"));
    let report: MinimalityReport =
        serde_json::from_value(read(&d.join("c"), "certify.json")["minimality"].clone()).unwrap();
    assert_eq!(report.cycles_checked, 3);

    let setup = write(
        d,
        "setup.json",
        &json!({"points": (0..64).map(|k| [-1.0 + 0.6 * (k % 8) as f64, -1.0 + 0.45 * (k / 8) as f64, 0.5]).collect::<Vec<_>>(), "v": [0.0, 0.0, 1.0]}),
    );
    let o = loopfield(
        &[
            "silent-basis",
            "--support",
            &support,
            "--setup",
            &setup,
            "--out-dir",
            "s",
            "--self-test",
        ],
        d,
    );
    assert!(o.status.success(), "{o:?}");
    let out = read(&d.join("s"), "silent_basis.json");
    assert_eq!(out["dimension"], json!(2));
    assert_eq!(out["kernel"]["nullity"], json!(2));
}

#[test]
fn experiment_output_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    for out in ["r1", "r2"] {
        let o = loopfield(
            &["experiment", "tree_like", "--seed", "3", "--out-dir", out],
            d,
        );
        assert!(o.status.success(), "{o:?}");
    }
    let a = fs::read(d.join("r1/tree_like.json")).unwrap();
    assert_eq!(a, fs::read(d.join("r2/tree_like.json")).unwrap());
    let config = write(
        d,
        "config.json",
        &json!({"name": "unit_square", "seed": 11}),
    );
    let o = loopfield(&["experiment", "--input", &config, "--out-dir", "cfg"], d);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(read(&d.join("cfg"), "unit_square.json")["seed"], json!(11));
    assert_eq!(
        loopfield(&["experiment", "no_such"], d).status.code(),
        Some(1)
    );
}

#[test]
fn thread_variable_is_validated() {
    let dir = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_loopfield"))
        .args(["experiment", "unit_square", "--out-dir", "t"])
        .env("LOOPFIELD_THREADS", "0")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    let o = Command::new(env!("CARGO_BIN_EXE_loopfield"))
        .args(["experiment", "unit_square", "--out-dir", "t"])
        .env("LOOPFIELD_THREADS", "2")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{o:?}");
}
