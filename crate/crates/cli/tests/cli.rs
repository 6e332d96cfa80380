use std::path::Path;
use std::process::{Command, Output};

use saconet::geometry::ShapeSpec;
use saconet::io::{load_mesh, load_trace, save_shape};

fn saconet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_saconet")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = saconet(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const DESK: &str = "\
net.grid_res = 8
net.feature_dim = 4
net.unet_depth = 1
init.mode = geometric
init.radius = 0.45
pretrain.batch_size = 1
pretrain.iterations = 10
pretrain.queries_per_shape = 256
pretrain.surface_points_per_shape = 500
sa.batch = 1
sa.n_surface = 128
sa.n_nonsurface = 384
sa.lr0 = 1e-4
mise.initial_res = 8
mise.final_res = 32
";

#[test]
fn sphere_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let shapes = d.join("shapes");
    std::fs::create_dir(&shapes).unwrap();
    let sphere = shapes.join("sphere.json");
    save_shape(&ShapeSpec::sphere([0.5; 3], 0.3), &sphere).unwrap();
    let config = d.join("desk.cfg");
    std::fs::write(&config, DESK).unwrap();
    let (ckpt, cloud, mesh, trace, report) =
        (d.join("m.ckpt"), d.join("in.ply"), d.join("out.obj"), d.join("t.csv"), d.join("r.json"));

    ok(&["pretrain", "--shapes", s(&shapes), "--config", s(&config), "--out", s(&ckpt), "--seed", "1"]);
    ok(&["sample", "--shape", s(&sphere), "--points", "3000", "--noise", "0.005", "--seed", "2", "--out", s(&cloud)]);
    ok(&[
        "reconstruct", "--ckpt", s(&ckpt), "--input", s(&cloud), "--mode", "full", "--sa-iters", "3", "--seed", "4",
        "--config", s(&config), "--out", s(&mesh), "--trace", s(&trace),
    ]);
    assert_eq!(load_trace(&trace).unwrap().len(), 3);
    let m = load_mesh(&mesh).unwrap();
    assert!(!m.is_empty());
    assert_eq!(m.boundary_edges(), 0);

    let out = ok(&["eval", "--mesh", s(&mesh), "--gt-shape", s(&sphere), "--tau", "0.01", "--report", s(&report)]);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(json["fs_2tau"].as_f64().unwrap() > 0.0, "{json}");
    assert!(json["paper_scale"]["cd"].as_f64().is_some());
    assert!(String::from_utf8_lossy(&out.stdout).contains("fs_tau"));
}

#[test]
fn identical_arguments_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["gen-shapes", "--count", "3", "--seed", "7", "--out", s(&d.join("a"))]);
    ok(&["gen-shapes", "--count", "3", "--seed", "7", "--out", s(&d.join("b"))]);
    for i in 0..3 {
        let name = format!("shape_{i:04}.json");
        assert_eq!(std::fs::read(d.join("a").join(&name)).unwrap(), std::fs::read(d.join("b").join(&name)).unwrap());
    }
    let config = d.join("desk.cfg");
    std::fs::write(&config, DESK).unwrap();
    let ckpt = d.join("m.ckpt");
    ok(&["pretrain", "--shapes", s(&d.join("a")), "--config", s(&config), "--out", s(&ckpt), "--seed", "3"]);
    let shape = d.join("a").join("shape_0000.json");
    let cloud = d.join("in.xyz");
    ok(&["sample", "--shape", s(&shape), "--points", "2000", "--noise", "0.01", "--seed", "5", "--out", s(&cloud)]);
    let mut meshes = Vec::new();
    for name in ["x.obj", "y.obj"] {
        let out = d.join(name);
        ok(&[
            "reconstruct", "--ckpt", s(&ckpt), "--input", s(&cloud), "--mode", "encoder-only", "--sa-iters", "2",
            "--seed", "9", "--config", s(&config), "--out", s(&out),
        ]);
        meshes.push(std::fs::read(out).unwrap());
    }
    assert_eq!(meshes[0], meshes[1]);

    let (p1, p2, plan) = (d.join("s1.obj"), d.join("s2.obj"), d.join("plan.txt"));
    for out in [&p1, &p2] {
        ok(&["scene", "--ckpt", s(&ckpt), "--input", s(&cloud), "--core", "4", "--res", "16", "--out", s(out), "--plan", s(&plan)]);
    }
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    let text = std::fs::read_to_string(&plan).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 64);
}

#[test]
fn usage_errors_exit_1_and_runtime_errors_exit_2() {
    let out = saconet(&["reconstruct", "--input", "x.ply", "--out", "y.obj"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--ckpt") && err.contains("Usage"), "{err}");
    assert!(out.stdout.is_empty());

    assert_eq!(saconet(&["eval", "--bogus"]).status.code(), Some(1));
    assert_eq!(saconet(&["reconstruct", "--mode", "sideways"]).status.code(), Some(1));
    assert_eq!(saconet(&[]).status.code(), Some(1));
    assert_eq!(saconet(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.ckpt");
    let out = saconet(&["reconstruct", "--ckpt", s(&missing), "--input", "x.ply", "--out", "y.obj"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "net.grid_rez = 8\n").unwrap();
    let out = saconet(&["pretrain", "--shapes", s(dir.path()), "--config", s(&cfg), "--out", "m.ckpt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid_rez"));
}
