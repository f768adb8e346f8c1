use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tetherfem"))
}

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

#[test]
fn mesh_writes_the_text_format() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.txt");
    let st = bin().args(["mesh", "--spec"]).arg(smoke_config()).arg("--out").arg(&out).status().unwrap();
    assert!(st.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("tethermesh 1"));
    let counts: Vec<usize> = lines.next().unwrap().split_whitespace().map(|x| x.parse().unwrap()).collect();
    assert_eq!(text.lines().count(), 2 + counts[0] + counts[1]);
}

#[test]
fn solve_writes_manifest_and_stages() {
    let dir = tempfile::tempdir().unwrap();
    let st = bin()
        .args(["--threads", "1", "solve", "--seed", "3", "--auto-alpha", "--config"])
        .arg(smoke_config())
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(st.success());
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["solver"]["seed"], 3);
    assert_eq!(m["config"]["model"]["alpha"], "auto");
    assert_eq!(m["threads"], 1);
    assert!(dir.path().join("stage1.vtk").exists());
}

#[test]
fn rates_report_has_footer() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let st = bin().args(["rates", "--study", "interp", "--levels", "3", "--out"]).arg(&out).status().unwrap();
    assert!(st.success());
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("h,error\n"));
    assert_eq!(text.lines().filter(|l| l.starts_with("# ")).count(), 4);
}

#[test]
fn bad_config_exits_nonzero_with_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[domain]\nshape = \"disk\"\nradius = 3.0\nh = 0.5\n[cells]\ncenters = [[0.0, 0.0]]\nradius = -1.0\n")
        .unwrap();
    let out = bin().args(["solve", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cells.radius"));
}
