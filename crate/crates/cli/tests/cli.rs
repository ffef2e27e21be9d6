use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hypgl::mesh::TruncatedMesh;
use serde_json::Value;
use tempfile::TempDir;

/// Coarse Γ(6), degree 12 mesh used by the nonlinear commands.
const COARSE: [&str; 4] = ["--y", "10", "--h", "0.25"];

fn hypgl(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hypgl")).args(args).arg("--out").arg(out).arg("--threads").arg("1").output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn table_value(text: &str, key: &str) -> String {
    text.lines().find(|l| l.starts_with(key)).unwrap_or_else(|| panic!("{key} missing in {text}"))[key.len()..].trim().to_string()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

/// `d.dddddddddddddddde±x` with 17 significant digits.
fn has_17_digits(s: &str) -> bool {
    let s = s.strip_prefix('-').unwrap_or(s);
    let Some((mantissa, exp)) = s.split_once('e') else { return false };
    let Some((int, frac)) = mantissa.split_once('.') else { return false };
    int.len() == 1 && frac.len() == 16 && exp.trim_start_matches('-').parse::<u32>().is_ok()
}

#[test]
fn surface_examples() {
    let dir = TempDir::new().unwrap();
    for (n, m, g, area) in [(6, "12", "1", "24π"), (2, "3", "0", "2π"), (7, "24", "3", "56π")] {
        let o = hypgl(&["surface", &n.to_string()], dir.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let text = stdout(&o);
        assert_eq!(table_value(&text, "cusps m"), m);
        assert_eq!(table_value(&text, "genus g"), g);
        assert_eq!(table_value(&text, "area"), area);
        let manifest = json(&dir.path().join("manifest.json"));
        assert_eq!(manifest["exact"]["level"], n);
        assert_eq!(manifest["command"], "surface");
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let o = hypgl(&["surface", "1"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("N ≥ 2"), "{}", stderr(&o));
    assert_eq!(code(&hypgl(&["surface"], dir.path())), 2);
    assert_eq!(code(&hypgl(&["frobnicate"], dir.path())), 2);
    assert_eq!(code(&hypgl(&["mesh", "--h", "-0.1"], dir.path())), 2);
    assert_eq!(code(&hypgl(&["spectrum", "--count", "50"], dir.path())), 2);
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "level = 6\nunknown_key = 1\n").unwrap();
    let o = hypgl(&["mesh", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn embedded_eigenvalue_is_refused() {
    let dir = TempDir::new().unwrap();
    for (level, degree) in [("3", "1"), ("4", "2")] {
        for cmd in ["spectrum", "beta", "cuspform"] {
            let o = hypgl(&[cmd, "--level", level, "--degree", degree], dir.path());
            assert_eq!(code(&o), 4, "{cmd} Γ({level}) deg {degree}: {}", stderr(&o));
            assert!(stderr(&o).contains("embedded"), "{}", stderr(&o));
        }
    }
}

#[test]
fn empty_ground_space_is_refused() {
    // weight 4 on Γ(2) carries no cusp forms
    let dir = TempDir::new().unwrap();
    let o = hypgl(&["beta", "--level", "2", "--degree", "2"], dir.path());
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("K is empty"));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "level = 3\ndegree = 6\n[mesh]\ny = 6.0\nh = 0.3\n").unwrap();
    let o = hypgl(&["mesh", "--config", cfg.to_str().unwrap(), "--level", "2"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest = json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["config"]["level"], 2);
    assert_eq!(manifest["config"]["degree"], 6);
    assert_eq!(manifest["config"]["mesh"]["h"].as_f64(), Some(0.3));
    assert_eq!(manifest["exact"]["cusp_count"], 3);
    assert!(manifest["config"].get("out").is_none());
}

#[test]
fn mesh_file_round_trips_exactly() {
    let dir = TempDir::new().unwrap();
    let o = hypgl(&["mesh", "--level", "3", "--y", "6", "--h", "0.3"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("mesh.json")).unwrap();
    let mesh = TruncatedMesh::from_json(&text).unwrap();
    assert_eq!(mesh.level, 3);
    assert!(mesh.h == 0.3 && mesh.cusp_height == 6.0);
}

#[test]
fn spectrum_of_the_level_six_bundle() {
    let dir = TempDir::new().unwrap();
    let o = hypgl(&["spectrum", "--level", "6", "--degree", "12", "--count", "4"].iter().chain(&COARSE).copied().collect::<Vec<_>>(), dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&dir.path().join("spectrum.json"));
    assert_eq!(v["N"], 6);
    assert_eq!(v["b_exact"], "1");
    assert_eq!(v["ess_bottom_theory"].as_f64(), Some(1.25));
    assert_eq!(v["dim_cusp_forms"], 1);
    assert_eq!(v["cluster"].as_array().unwrap().len(), 1);
    let eig: Vec<f64> = v["eigenvalues"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(eig.len(), 4);
    assert!((eig[0] - 1.0).abs() < 0.05 && eig[1] > 1.1, "{eig:?}");
    let manifest = json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["exact"]["bundle"]["ess_bottom"], "5/4");
    assert_eq!(manifest["exact"]["bundle"]["weight"], "2");
}

#[test]
fn bifurcation_rows_are_flagged_not_dropped() {
    let dir = TempDir::new().unwrap();
    // κ = 1: the first row sits on r = b/κ²
    let args: Vec<&str> = ["bifurcate", "--kappa", "1", "--r-from", "1", "--r-to", "1.1", "--steps", "3"].iter().chain(&COARSE).copied().collect();
    let o = hypgl(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, rows) = csv_rows(&dir.path().join("branch.csv"));
    assert_eq!(header, ["s", "r", "s2_predicted", "E_normal", "dE_predicted", "dE_measured", "beta", "kappa_c", "valid_flag"]);
    assert_eq!(rows.len(), 3);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    assert_eq!(rows[0][col("s2_predicted")].parse::<f64>().unwrap(), 0.0);
    assert_eq!(rows[0][col("dE_predicted")].parse::<f64>().unwrap(), 0.0);
    assert!(rows.iter().all(|r| r[col("valid_flag")].parse::<f64>().unwrap() == 1.0));
    assert!(rows.iter().all(|r| r[col("dE_measured")] == "NaN"));
    for r in &rows {
        for (i, f) in r.iter().enumerate() {
            if i != col("dE_measured") {
                assert!(has_17_digits(f), "{f}");
            }
        }
    }
    // κ = 0.4 < κ_c with κ²r > b: every row flagged
    let args: Vec<&str> = ["bifurcate", "--kappa", "0.4", "--r-from", "6.5", "--r-to", "7", "--steps", "4"].iter().chain(&COARSE).copied().collect();
    let o = hypgl(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (_, rows) = csv_rows(&dir.path().join("branch.csv"));
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r[col("valid_flag")].parse::<f64>().unwrap() == 0.0));
}

#[test]
fn measured_branch_follows_the_predicted_laws() {
    let dir = TempDir::new().unwrap();
    let args: Vec<&str> = ["bifurcate", "--measure", "--r-from", "1.02", "--r-to", "1.06", "--steps", "3"].iter().chain(&COARSE).copied().collect();
    let o = hypgl(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&dir.path().join("measured.json"));
    let fit = &v["fit"];
    let rel = |a: &str, b: &str| (fit[a].as_f64().unwrap() / fit[b].as_f64().unwrap() - 1.0).abs();
    assert!(rel("density_slope", "density_slope_predicted") < 0.1, "{fit}");
    assert!(rel("energy_quadratic", "energy_quadratic_predicted") < 0.1, "{fit}");
    for p in v["points"].as_array().unwrap() {
        assert_eq!(p["status"], "Converged");
        assert!(p["energy"].as_f64().unwrap() < p["e_normal"].as_f64().unwrap());
    }
}

#[test]
fn solve_writes_state_trace_and_summary() {
    let dir = TempDir::new().unwrap();
    let args: Vec<&str> = ["solve", "--r", "1.04"].iter().chain(&COARSE).copied().collect();
    let o = hypgl(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = json(&dir.path().join("summary.json"));
    assert_eq!(s["status"], "Converged");
    assert!(s["de"].as_f64().unwrap() < 0.0);
    assert!(s["section_residual"].as_f64().unwrap() <= 1e-8);
    let (header, rows) = csv_rows(&dir.path().join("trace.csv"));
    assert_eq!(header, ["iter", "energy", "grad_norm_psi", "grad_norm_alpha", "step"]);
    assert_eq!(rows.len(), s["iterations"].as_u64().unwrap() as usize + 1);
    let state = json(&dir.path().join("state.json"));
    assert!(state["psi"].as_array().unwrap().len() > 100);
}

#[test]
fn unconverged_solve_exits_with_three() {
    let dir = TempDir::new().unwrap();
    let args: Vec<&str> = ["solve", "--r", "1.04", "--max-iter", "2"].iter().chain(&COARSE).copied().collect();
    let o = hypgl(&args, dir.path());
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(dir.path().join("summary.json").exists());
}

#[test]
fn identical_runs_give_identical_bytes() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let args: Vec<&str> = ["sweep", "--r-from", "0.96", "--r-to", "1.06", "--steps", "3", "--seed", "7"].iter().chain(&COARSE).copied().collect();
    for d in [&a, &b] {
        let o = hypgl(&args, d.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 3, "{names:?}");
    for n in names {
        assert_eq!(fs::read(a.path().join(&n)).unwrap(), fs::read(b.path().join(&n)).unwrap(), "{n:?}");
    }
    let (_, rows) = csv_rows(&a.path().join("sweep.csv"));
    assert!(rows.iter().all(|r| r[9] == "true"));
}

#[test]
fn cuspform_samples_and_coefficients() {
    let dir = TempDir::new().unwrap();
    let o = hypgl(&["cuspform", "--level", "3", "--degree", "6"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, rows) = csv_rows(&dir.path().join("cuspform.csv"));
    assert_eq!(header, ["x", "y", "re", "im", "tail_bound"]);
    assert_eq!(rows.len(), 64);
    let (_, coeffs) = csv_rows(&dir.path().join("fourier.csv"));
    assert_eq!(coeffs.len(), 9);
    // a cusp form has no constant term
    let abs: Vec<f64> = coeffs.iter().map(|r| r[3].parse().unwrap()).collect();
    let top = abs.iter().copied().fold(0.0, f64::max);
    assert!(abs[4] < 1e-6 * top, "{abs:?}");
}
