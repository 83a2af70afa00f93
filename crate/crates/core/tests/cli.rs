use std::path::Path;
use std::process::Command;
use std::sync::Arc;

use serde_json::{json, Value};
use tempfile::TempDir;

use varsym::field::Field;
use varsym::grid::{Domain, Grid};

const DISK: &str = r#"{
  "_note": "cubic focusing term on the unit disk",
  "seed": 3,
  "problem": {
    "catalog": "inline",
    "energy": "0.5*g*g - pow(pos(u1),3)/3",
    "constraints": [{"density": "u1*u1", "target": 20.0}],
    "domain": {"kind": "ball", "dim": 2, "radius": 1.0},
    "n": 33
  },
  "init": {"kind": "bump", "center": [0.2, 0.1], "amp": 3.0, "radius": 0.5}
}"#;

struct Run {
    code: i32,
    json: Value,
    stderr: String,
}

fn varsym(dir: &Path, args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_varsym")).current_dir(dir).args(args).output().unwrap();
    let stdout = String::from_utf8(out.stdout).unwrap();
    let last = stdout.lines().last().unwrap_or_else(|| panic!("no stdout for {args:?}"));
    Run {
        code: out.status.code().unwrap(),
        json: serde_json::from_str(last).unwrap(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn with_field(cfg: &str, field: &str) -> String {
    let mut v: Value = serde_json::from_str(cfg).unwrap();
    v["field"] = json!(field);
    v.to_string()
}

#[test]
fn minimize_then_split_then_symmetrize() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "disk.json", DISK);

    let r = varsym(d, &["minimize", "--config", "disk.json", "--out", "m", "--json"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.json["status"], "ok");
    assert_eq!(r.json["seed"], 3);
    assert!(r.json["result"]["converged"].as_bool().unwrap());
    assert_eq!(r.json["config_hash"].as_str().unwrap().len(), 64);
    assert!(d.join("m/field.bin").exists());
    assert!(d.join("m/field_slice.csv").exists());

    write(d, "disk2.json", &with_field(DISK, "m/field.bin"));
    let r = varsym(d, &["split-find", "--config", "disk2.json", "--out", "s", "--json"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let plane = &r.json["planes"][0];
    assert!(plane["defect_norm"].as_f64().unwrap() <= plane["tol"].as_f64().unwrap());

    let r = varsym(d, &["symmetrize", "--config", "disk2.json", "--out", "y", "--json"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.json["verdict"], "radial_about_v");
    assert_eq!(r.json["subspace_dim"], 0);
    assert!(d.join("y/report.txt").exists());
}

#[test]
fn seed_flag_overrides_and_changes_hash() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "disk.json", DISK);
    let a = varsym(d, &["minimize", "--config", "disk.json", "--out", "a", "--json"]);
    let b = varsym(d, &["minimize", "--config", "disk.json", "--out", "b", "--json", "--seed", "11"]);
    assert_eq!(b.json["seed"], 11);
    assert_ne!(a.json["config_hash"], b.json["config_hash"]);
}

#[test]
fn non_minimizer_gives_inconclusive_exit() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    // two unequal bumps: reflecting the heavier half lowers the energy
    let g = Arc::new(Grid::uniform(Domain::ball(2, 1.0), 33).unwrap());
    let bump = |x: &[f64], c: [f64; 2], a: f64| a * (-((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)) / 0.04).exp();
    let u = Field::scalar_fn(g, |x| bump(x, [0.45, 0.0], 4.0) + bump(x, [-0.3, 0.3], 2.5));
    u.write_binary(std::fs::File::create(d.join("u.bin")).unwrap()).unwrap();
    let mut cfg: Value = serde_json::from_str(DISK).unwrap();
    let q: f64 = {
        let p = varsym::functional::VariationalProblem::new(
            u.grid_arc().clone(),
            varsym::density::DensitySet::parse(1, "g*g", &[("u1*u1", 1.0)]).unwrap(),
            false,
        )
        .unwrap();
        varsym::functional::constraints(&p, &u).unwrap()[0]
    };
    cfg["problem"]["constraints"][0]["target"] = json!(q);
    cfg["field"] = json!("u.bin");
    write(d, "cfg.json", &cfg.to_string());
    let r = varsym(d, &["symmetrize", "--config", "cfg.json", "--out", "o", "--json"]);
    assert_eq!(r.code, 2, "{}", r.json);
    assert_eq!(r.json["status"], "inconclusive");
    assert_eq!(r.json["verdict"], "inconclusive");
}

#[test]
fn malformed_density_reports_code_and_position() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "bad.json", &DISK.replace("0.5*g*g - pow(pos(u1),3)/3", "0.5*g*g - pow(u1,3"));
    let r = varsym(d, &["minimize", "--config", "bad.json", "--out", "o", "--json"]);
    assert_eq!(r.code, 1);
    assert_eq!(r.json["status"], "error");
    assert_eq!(r.json["error"]["code"], "syntax");
    assert!(r.json["error"]["position"].as_u64().is_some());

    write(d, "unknown.json", &DISK.replace("u1*u1", "u7*u1"));
    let r = varsym(d, &["minimize", "--config", "unknown.json", "--out", "o", "--json"]);
    assert_eq!(r.code, 1);
    assert_eq!(r.json["error"]["code"], "unknown_variable");
}

#[test]
fn schema_errors_carry_a_pointer() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "bad.json", &DISK.replace("\"n\": 33", "\"n\": \"many\""));
    let r = varsym(d, &["minimize", "--config", "bad.json", "--json"]);
    assert_eq!(r.code, 1);
    assert_eq!(r.json["error"]["code"], "config_schema");
    assert_eq!(r.json["error"]["pointer"], "/problem/n");

    write(d, "noseed.json", &DISK.replace("\"seed\": 3,", ""));
    let r = varsym(d, &["minimize", "--config", "noseed.json", "--json"]);
    assert_eq!(r.code, 1);
    assert_eq!(r.json["error"]["code"], "config_schema");
}

#[test]
fn usage_errors_exit_one_with_json() {
    let tmp = TempDir::new().unwrap();
    let r = varsym(tmp.path(), &["frobnicate"]);
    assert_eq!(r.code, 1);
    assert_eq!(r.json["error"]["code"], "usage");
    let r = varsym(tmp.path(), &["minimize", "--json"]);
    assert_eq!(r.code, 1);
}

#[test]
fn verify_against_shipped_and_perturbed_golden() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let r = varsym(d, &["verify", "--json"]);
    assert_eq!(r.code, 0, "{}", r.json);
    assert_eq!(r.json["failed"], json!([]));

    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("golden/v1/m1_reference.json");
    let mut g: Value = serde_json::from_str(&std::fs::read_to_string(shipped).unwrap()).unwrap();
    let entries = g["entries"].as_array_mut().unwrap();
    let beta = entries.iter_mut().find(|e| e["name"] == "beta0").unwrap();
    beta["value"] = json!(beta["value"].as_f64().unwrap() * 1.01);
    std::fs::create_dir_all(d.join("g/v1")).unwrap();
    write(d, "g/v1/m1_reference.json", &g.to_string());
    let r = varsym(d, &["verify", "--golden", "g", "--json"]);
    assert_eq!(r.code, 1);
    assert_eq!(r.json["failed"], json!(["beta0"]));

    let r = varsym(d, &["verify", "--golden", "nowhere", "--json"]);
    assert_eq!(r.code, 1);
    assert_eq!(r.json["error"]["code"], "missing_golden");
}

#[test]
fn oracle_writes_profile() {
    let tmp = TempDir::new().unwrap();
    let r = varsym(tmp.path(), &["oracle", "--out", "o", "--json"]);
    assert_eq!(r.code, 0);
    assert!(tmp.path().join("o/profile.csv").exists());
    assert!(tmp.path().join("o/profile.json").exists());
}

#[test]
fn one_d_demo_passes() {
    let tmp = TempDir::new().unwrap();
    let r = varsym(tmp.path(), &["demo", "one-d", "--out", "o", "--json"]);
    assert_eq!(r.code, 0, "{}", r.json);
    assert!(tmp.path().join("o/result.json").exists());
}

#[test]
fn shipped_configs_parse_and_build() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut count = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = varsym::cli::config::RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        if !matches!(cfg.problem, varsym::cli::config::ProblemConfig::M1(_)) {
            cfg.problem.build().unwrap();
        }
        count += 1;
    }
    assert!(count >= 4);
}
