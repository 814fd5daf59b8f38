use serde_json::Value;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dssrep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dssrep")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = dssrep(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_spec(dir: &Path, name: &str, spec: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, spec).unwrap();
    p.to_str().unwrap().into()
}

#[test]
fn fit_canonical_ellipsoid() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), "e.json", r#"{"radii": [2, 1, 0.5], "resolution": 4}"#);
    let syn = tmp.path().join("syn");
    ok(&["synth", &spec, "-o", s(&syn)]);
    let mesh = syn.join("object.obj");

    let fit = tmp.path().join("fit");
    ok(&["fit", s(&mesh), "--degrees", "1", "1", "-o", s(&fit)]);
    for f in ["lp_dssrep.json", "gof.json", "spokes.ply", "skeleton.ply", "run_config.json"] {
        assert!(fit.join(f).is_file(), "missing {f}");
    }
    let g = json(&fit.join("gof.json"));
    assert!(g["rcc_satisfied"].as_bool().unwrap());
    let gof = &g["gof"];
    assert!(gof["skeletal_symmetry"].as_f64().unwrap() >= 0.97);
    assert!(gof["avg_tidiness"].as_f64().unwrap() >= 0.98);
    assert!(gof["strict_tidiness"].as_f64().unwrap() >= 0.98);
    assert!(gof["volume_coverage"].as_f64().unwrap() >= 0.90);
    let cfg = json(&fit.join("run_config.json"));
    assert_eq!(cfg["degrees"], serde_json::json!([1, 1]));
    assert_eq!(cfg["stations"], 15);
    assert_eq!(cfg["vein_samples"], 3);

    // Denser vein sampling brings the implied boundary close enough for score1.
    let fit6 = tmp.path().join("fit6");
    ok(&["fit", s(&mesh), "--degrees", "1", "1", "--vein-samples", "6", "-o", s(&fit6)]);
    let score1 = json(&fit6.join("gof.json"))["gof"]["score1"].as_f64().unwrap();
    assert!(score1 >= 0.95, "score1 {score1}");

    let rep = dssrep::lp::LpDssRep::from_json(&fs::read_to_string(fit.join("lp_dssrep.json")).unwrap()).unwrap();
    assert_eq!(rep.n_frames(), 91);
}

#[test]
fn score_covers_the_full_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(
        tmp.path(),
        "h.json",
        r#"{"radii": [2, 0.8, 0.4], "resolution": 3,
            "deformation": {"bend": {"elbow_x": 0.0, "angle_deg": 30.0, "band": 1.0},
                            "protrusion": {"center": [0.6, 0.0, 0.8], "angular_radius_deg": 25.0, "height": 0.1}}}"#,
    );
    let syn = tmp.path().join("syn");
    ok(&["synth", &spec, "-o", s(&syn)]);
    let out = tmp.path().join("score");
    ok(&["score", s(&syn.join("object.obj")), "--grid", "7", "-o", s(&out)]);
    let csv = fs::read_to_string(out.join("scores.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 49);
    assert_eq!(rows[0].split(',').take(2).collect::<Vec<_>>(), ["1", "1"]);
    assert_eq!(rows[48].split(',').take(2).collect::<Vec<_>>(), ["7", "7"]);
}

#[test]
fn cohort_test_and_classify() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), "c.json", r#"{"n_per_group": 5, "effect": "protrusion", "resolution": 3, "seed": 11}"#);
    let coh = tmp.path().join("coh");
    ok(&["synth", &spec, "-o", s(&coh)]);
    assert_eq!(fs::read_dir(coh.join("a")).unwrap().count(), 5);
    assert_eq!(json(&coh.join("manifest.json"))["objects"].as_array().unwrap().len(), 10);

    let t = tmp.path().join("test");
    ok(&["test", s(&coh.join("a")), s(&coh.join("b")), "--degrees", "1", "1", "--alpha", "0.05", "--fdr", "0.1", "--permutations", "99", "-o", s(&t)]);
    let report = json(&t.join("test_report.json"));
    assert_eq!(report["alpha"], 0.05);
    assert_eq!(report["fdr"], 0.1);
    let p = report["global"]["p_value"].as_f64().unwrap();
    assert!((0.01..=1.0).contains(&p));
    let partial = fs::read_to_string(t.join("partial.csv")).unwrap();
    assert_eq!(partial.lines().count(), 1 + 4 * 91 + 2 * 90);

    // Fitted reps are reused from their directories.
    let c = tmp.path().join("classify");
    ok(&["classify", s(&t.join("reps/a")), s(&t.join("reps/b")), "--folds", "5", "-o", s(&c)]);
    let m = json(&c.join("metrics.json"));
    assert_eq!(m["folds"], 5);
    let acc = m["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn synth_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), "c.json", r#"{"n_per_group": 2, "effect": "none", "resolution": 2, "seed": 3}"#);
    let (x, y) = (tmp.path().join("x"), tmp.path().join("y"));
    ok(&["synth", &spec, "-o", s(&x)]);
    ok(&["synth", &spec, "-o", s(&y)]);
    for g in ["a/000.obj", "a/001.obj", "b/000.obj", "b/001.obj"] {
        assert_eq!(fs::read(x.join(g)).unwrap(), fs::read(y.join(g)).unwrap());
    }
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_spec(tmp.path(), "run.json", r#"{"stations": 9, "vein_samples": 2, "seed": 4}"#);
    let spec = write_spec(tmp.path(), "e.json", r#"{"radii": [2, 1, 0.5], "resolution": 3}"#);
    let out = tmp.path().join("out");
    ok(&["synth", &spec, "--config", &cfg, "--stations", "11", "-o", s(&out)]);
    let used = json(&out.join("run_config.json"));
    assert_eq!(used["stations"], 11);
    assert_eq!(used["vein_samples"], 2);
    assert_eq!(used["seed"], 4);
    assert_eq!(used["command"], "synth");

    let bad = write_spec(tmp.path(), "bad.json", r#"{"statons": 9}"#);
    assert!(!dssrep(&["synth", &spec, "--config", &bad, "-o", s(&out)]).status.success());
}

#[test]
fn errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let missing = dssrep(&["fit", "/no/such/mesh.obj", "-o", s(&out)]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("io:"));
    let even = dssrep(&["fit", "/no/such/mesh.obj", "--stations", "14", "-o", s(&out)]);
    assert!(String::from_utf8_lossy(&even.stderr).contains("config:"));
    assert!(!dssrep(&["fit", "-o", s(&out)]).status.success());
    let threads = Command::new(env!("CARGO_BIN_EXE_dssrep")).env("DSSREP_THREADS", "none").args(["fit", "x.obj"]).output().unwrap();
    assert_eq!(threads.status.code(), Some(2));
}

#[test]
fn flatten_and_straighten() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), "e.json", r#"{"radii": [2, 1, 0.5], "resolution": 3}"#);
    let syn = tmp.path().join("syn");
    ok(&["synth", &spec, "-o", s(&syn)]);
    let fl = tmp.path().join("fl");
    ok(&["flatten", s(&syn.join("object.obj")), "-o", s(&fl)]);
    let csv = fs::read_to_string(fl.join("embedding.csv")).unwrap();
    assert!(csv.starts_with("index,x,y,z,u,v") && csv.lines().count() > 100);

    let poly: String = std::iter::once("x,y".to_string())
        .chain((0..200).map(|i| {
            let t = std::f64::consts::TAU * i as f64 / 200.0;
            format!("{},{}", 2.0 * t.cos(), 0.5 * t.sin())
        }))
        .collect::<Vec<_>>()
        .join("\n");
    let p = write_spec(tmp.path(), "ell.csv", &poly);
    let st = tmp.path().join("st");
    ok(&["straighten2d", &p, "--gc-stations", "20", "-o", s(&st)]);
    let svg = fs::read_to_string(st.join("straightened.svg")).unwrap();
    assert_eq!(svg.matches("<line").count(), 20);
    assert!(st.join("gc2d.svg").is_file());
}
