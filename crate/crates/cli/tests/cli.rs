use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn rodlim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rodlim")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok_json(dir: &Path, args: &[&str]) -> Value {
    let out = rodlim(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stdout));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn failure(dir: &Path, args: &[&str]) -> (i32, Value) {
    let out = rodlim(dir, args);
    let code = out.status.code().expect("exit code");
    (code, serde_json::from_slice(&out.stdout).expect("error record on stdout"))
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn qstar_on_isotropic_disk_is_diagonal() {
    let d = tempfile::tempdir().unwrap();
    let rec = ok_json(d.path(), &["qstar", "--refine", "3", "--mu", "1", "--csv", "q.csv"]);
    let want = [3.0 / (4.0 * PI), 3.0 / (4.0 * PI), 1.0 / (2.0 * PI), 3.0];
    for i in 0..4 {
        for j in 0..4 {
            let v = rec["matrix"][i][j].as_f64().unwrap();
            if i == j {
                assert!((v - want[i]).abs() / want[i] < 1e-2, "({i},{j}) = {v}");
            } else {
                assert!(v.abs() < 1e-8);
            }
        }
    }
    assert_eq!(rec["meta"]["mesh"]["triangles"], 864);
    let csv = std::fs::read_to_string(d.path().join("q.csv")).unwrap();
    assert!(csv.starts_with("row,F12,F13,F23,t\n"));
    assert!(csv.contains("\nalpha,"));
    assert!(d.path().join("q.meta.json").is_file());
}

#[test]
fn outputs_are_deterministic() {
    let d = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let out = format!("{name}.json");
        let csv = format!("{name}.csv");
        let st = rodlim(d.path(), &["qstar", "--refine", "1", "--lambda", "2", "--out", &out, "--csv", &csv]);
        assert!(st.status.success());
    }
    for ext in ["json", "csv", "meta.json"] {
        let a = std::fs::read(d.path().join(format!("a.{ext}"))).unwrap();
        let b = std::fs::read(d.path().join(format!("b.{ext}"))).unwrap();
        assert_eq!(a, b, "{ext}");
    }
}

#[test]
fn gamma_check_gap_decreases_along_the_grid() {
    let d = tempfile::tempdir().unwrap();
    let out = rodlim(
        d.path(),
        &["gamma-check", "--refine", "2", "--F12", "1", "--k-grid", "10,100,1000,10000,100000,1000000", "--out", "g.csv"],
    );
    assert!(out.status.success());
    let text = std::fs::read_to_string(d.path().join("g.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("k,qk,gap,div_residual"));
    let gaps: Vec<f64> = lines.map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(gaps.len(), 6);
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    let meta = read_json(&d.path().join("g.meta.json"));
    let c = meta["constrained"].as_f64().unwrap();
    assert!((c - 3.0 / (4.0 * PI)).abs() < 1e-3);
}

#[test]
fn unloaded_rod_is_straight() {
    let d = tempfile::tempdir().unwrap();
    let out = rodlim(d.path(), &["rod-solve", "--refine", "1", "--nodes", "41", "--length", "2", "--out", "rod"]);
    assert!(out.status.success());
    let s = read_json(&d.path().join("rod/summary.json"));
    assert_eq!(s["energy"].as_f64().unwrap(), 0.0);
    assert_eq!(s["converged"], true);
    let u = std::fs::read_to_string(d.path().join("rod/centerline.csv")).unwrap();
    let rows: Vec<Vec<f64>> =
        u.lines().skip(1).map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 41);
    for r in &rows {
        assert!((r[1] - (r[0] - 1.0)).abs() < 1e-12 && r[2].abs() < 1e-12 && r[3].abs() < 1e-12, "{r:?}");
    }
}

#[test]
fn loaded_rod_methods_agree() {
    let d = tempfile::tempdir().unwrap();
    let mut f = String::from("x1,f1,f2,f3\n");
    for i in 0..=100 {
        let x = i as f64 / 100.0;
        f.push_str(&format!("{x},0,{},0\n", 1e-3 * (2.0 * PI * x).cos()));
    }
    std::fs::write(d.path().join("f.csv"), f).unwrap();
    let m = ok_json(d.path(), &["rod-solve", "--force", "f.csv", "--refine", "3"]);
    let s = ok_json(d.path(), &["rod-solve", "--force", "f.csv", "--method", "shooting"]);
    let (em, es) = (m["energy"].as_f64().unwrap(), s["energy"].as_f64().unwrap());
    assert!(em < 0.0 && (em - es).abs() / es.abs() < 1e-2, "{em} vs {es}");
    assert!(m["el_residual"].as_f64().unwrap() < 1e-4);

    let (code, err) = failure(d.path(), &["rod-solve", "--force", "f.csv", "--nodes", "50"]);
    assert_eq!(code, 2, "{err}");
    let (code, err) = failure(d.path(), &["rod-solve", "--force", "f.csv", "--refine", "1", "--max-iter", "1", "--tol", "1e-14"]);
    assert_eq!((code, err["error"]["kind"].as_str()), (3, Some("solver")));
}

#[test]
fn rod_energies_from_saved_qstar() {
    let d = tempfile::tempdir().unwrap();
    assert!(rodlim(d.path(), &["qstar", "--refine", "2", "--out", "q.json"]).status.success());
    let q = read_json(&d.path().join("q.json"));
    let q11 = q["matrix"][0][0].as_f64().unwrap();
    let q33 = q["matrix"][2][2].as_f64().unwrap();

    let mut p = String::from("x1,v1,dv1,v2,dv2,w,z\n");
    for i in 0..=200 {
        let x = 2.0 * i as f64 / 200.0;
        p.push_str(&format!("{x},{},{x},0,0,0,\n", 0.5 * x * x));
    }
    std::fs::write(d.path().join("p.csv"), p).unwrap();
    let e = ok_json(d.path(), &["rod-energy", "--regime", "open23", "--qstar", "q.json", "--profile", "p.csv"]);
    let want = 0.5 * 2.0 * q11;
    assert!((e["energy"].as_f64().unwrap() - want).abs() / want < 5e-3);
    let (code, _) = failure(d.path(), &["rod-energy", "--regime", "3", "--qstar", "q.json", "--profile", "p.csv"]);
    assert_eq!(code, 2, "regime 3 needs z");

    let w = 1.3;
    let mut fr = String::from("x1,qw,qx,qy,qz\n");
    for i in 0..=200 {
        let x = i as f64 / 200.0;
        fr.push_str(&format!("{x},{},{},0,0\n", (0.5 * w * x).cos(), (0.5 * w * x).sin()));
    }
    std::fs::write(d.path().join("fr.csv"), fr).unwrap();
    let e = ok_json(d.path(), &["rod-energy", "--regime", "2", "--qstar", "q.json", "--frame", "fr.csv"]);
    let want = 0.5 * q33 * w * w;
    assert!((e["energy"].as_f64().unwrap() - want).abs() / want < 5e-3);

    let mut bad = q.clone();
    bad["matrix"][0][1] = Value::from(0.5);
    std::fs::write(d.path().join("bad.json"), bad.to_string()).unwrap();
    let (code, err) = failure(d.path(), &["rod-energy", "--regime", "2", "--qstar", "bad.json", "--frame", "fr.csv"]);
    assert_eq!((code, err["error"]["kind"].as_str()), (4, Some("invariant")));
}

#[test]
fn mesh_files_round_trip_through_the_cli() {
    let d = tempfile::tempdir().unwrap();
    let rec = ok_json(d.path(), &["mesh", "--shape", "rect", "--aspect", "2", "--refine", "2", "--out", "m.txt"]);
    let t = ok_json(d.path(), &["torsion", "--mesh", "m.txt", "--phi", "phi.csv"]);
    // re-normalizing the written mesh only adds roundoff
    let (a, b) = (t["meta"]["mesh"]["m2"].as_f64().unwrap(), rec["mesh"]["m2"].as_f64().unwrap());
    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    let phi = std::fs::read_to_string(d.path().join("phi.csv")).unwrap();
    assert!(phi.starts_with("node,x2,x3,phi\n"));

    std::fs::write(d.path().join("broken.txt"), "3 1\n0 0\n1 0\n0 1\n0 1 7\n").unwrap();
    let (code, err) = failure(d.path(), &["torsion", "--mesh", "broken.txt"]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn config_file_with_flag_overrides() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(
        d.path().join("run.toml"),
        "task = \"cell\"\nmesh.shape = \"disk\"\nmesh.refine = 1\nmaterial.mu = 2.0\nprofile.t = 1.0\n",
    )
    .unwrap();
    let a = ok_json(d.path(), &["run", "--config", "run.toml"]);
    assert!((a["energy"].as_f64().unwrap() - 6.0).abs() < 1e-8, "{}", a["energy"]);
    let b = ok_json(d.path(), &["cell", "--config", "run.toml", "--mu", "1"]);
    assert!((b["energy"].as_f64().unwrap() - 3.0).abs() < 1e-8);
    assert_eq!(b["meta"]["settings"]["material.mu"], 1.0);

    std::fs::write(d.path().join("typo.toml"), "mesh.refin = 2\n").unwrap();
    let (code, err) = failure(d.path(), &["torsion", "--config", "typo.toml"]);
    assert_eq!(code, 2);
    assert!(err["error"]["message"].as_str().unwrap().contains("mesh.refin"));
}

#[test]
fn thread_cap_does_not_change_results() {
    let d = tempfile::tempdir().unwrap();
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_rodlim"))
            .current_dir(d.path())
            .env("RODLIM_THREADS", threads)
            .args(["qstar", "--refine", "1"])
            .output()
            .unwrap()
    };
    let (one, four) = (run("1"), run("4"));
    assert!(one.status.success());
    assert_eq!(one.stdout, four.stdout);
    assert_eq!(run("0").status.code(), Some(2));
}
