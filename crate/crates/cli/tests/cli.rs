use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use filmflow_cli::{verify, Faults, Selector};
use filmflow_core::Mesh;

fn filmflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_filmflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn run_in(dir: &Path, text: &str) -> Output {
    let cfg = write_config(dir, text);
    let out = dir.join("out");
    filmflow(&["run", "--config", &cfg, "--out", out.to_str().unwrap()])
}

const SMALL: &str = "mesh.nx = 4\nmesh.nz = 2\ntime.T = 0.3\ntime.steps = 3\nreg.eps = 1e-1, 1e-2\n";

#[test]
fn xi_initial_value_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), "scenario = couette\nxi.family = exp\nxi.initial = 0.5\n");
    assert_eq!(out.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("line 3") && msg.contains("xi.initial") && msg.contains("xi(0) = 1"), "{msg}");
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), "p = 1.5\nmesh.ny = 3\n");
    assert_eq!(out.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("line 2") && msg.contains("mesh.ny"), "{msg}");
}

#[test]
fn zero_config_gives_zero_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &format!("scenario = zero\n{SMALL}"));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/diag.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let mut rows = 0;
    for line in lines {
        rows += 1;
        for (name, v) in header.iter().zip(line.split(',')) {
            if ["picard_iter", "eps", "step", "t", "newton_iters", "eta", "energy_scale"].contains(name) {
                continue;
            }
            assert_eq!(v.parse::<f64>().unwrap(), 0.0, "{name} in {line}");
        }
    }
    // one Picard iteration, two eps levels, three steps
    assert_eq!(rows, 6);
}

#[test]
fn couette_run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &format!("scenario = couette\np = 1.5\noutput.steps = all\n{SMALL}"));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let root = dir.path().join("out");
    let report = fs::read_to_string(root.join("report.txt")).unwrap();
    assert!(report.contains("distances monotone = true"), "{report}");
    assert!(report.contains("momentum_residual"));
    for k in 0..=3 {
        let vtk = fs::read_to_string(root.join(format!("fields_{k}.vtk"))).unwrap();
        assert!(vtk.starts_with("# vtk DataFile Version 3.0"));
        assert!(vtk.contains("VECTORS velocity double") && vtk.contains("SCALARS pressure double 1"));
    }
    let mesh = Mesh::read_dump(std::io::BufReader::new(fs::File::open(root.join("mesh.txt")).unwrap())).unwrap();
    assert_eq!(mesh.cells.len(), 2 * 4 * 2);
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &format!("scenario = coupled\nreg.picard_max = 1\n{SMALL}"));
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    // outputs are still written for inspection
    assert!(dir.path().join("out/report.txt").exists());

    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &format!("scenario = couette\nstep.newton_max = 1\n{SMALL}"));
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sweep_isolates_members() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}sweep.key = data.k\nsweep.values = 0.1, 0.5\n"));
    let out_dir = dir.path().join("sweep");
    let out = filmflow(&["sweep", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for v in ["0.1", "0.5"] {
        let member = out_dir.join(format!("data.k={v}"));
        assert!(member.join("diag.csv").exists());
        assert!(fs::read_to_string(member.join("config.txt")).unwrap().contains(&format!("data.k = {v}")));
    }
}

#[test]
fn mms_subcommand_reports_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scenario = mms-p2\nmesh.nx = 4\nmesh.nz = 4\ntime.steps = 4\n");
    let out_dir = dir.path().join("mms");
    let out = filmflow(&["mms", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let csv = fs::read_to_string(out_dir.join("mms.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn verify_constitutive_and_oracle_pass() {
    for suite in ["constitutive", "oracle"] {
        let out = filmflow(&["verify", suite]);
        let text = String::from_utf8_lossy(&out.stdout);
        assert_eq!(out.status.code(), Some(0), "{text}");
        assert!(!text.contains("FAIL"), "{text}");
    }
}

#[test]
fn flipped_strong_monotonicity_fails_verification() {
    let mut log = Vec::new();
    let ok = verify(
        Selector::All,
        Faults {
            flip_strong_monotonicity: true,
        },
        &mut log,
    )
    .unwrap();
    let text = String::from_utf8(log).unwrap();
    assert!(!ok, "{text}");
    assert!(text.contains("FAIL strong monotonicity"), "{text}");
    // the unbroken build passes every suite
    let mut log = Vec::new();
    assert!(verify(Selector::All, Faults::default(), &mut log).unwrap(), "{}", String::from_utf8_lossy(&log));
}
