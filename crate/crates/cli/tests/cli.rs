//! End-to-end tests of the `noonfi` binary: every subcommand is exercised
//! through a real process spawn against artifacts in a temp directory.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;

const PAPER_ETA: [f64; 4] = [0.517, 0.546, 0.649, 0.608];

// ── helpers ─────────────────────────────────────────────────────────────────

fn noonfi(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noonfi"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("running noonfi")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    let text =
        fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("parsing {}: {e}", path.display()))
}

fn write_config(dir: &Path, text: &str) {
    fs::write(dir.join("run.toml"), text).expect("writing config");
}

/// Calibration CSV whose implied transmissions are exactly `eta`.
fn write_calibration_csv(dir: &Path, eta: &[f64; 4], skip_line: Option<u8>) {
    let mut text = String::from(
        "line_id,reference_power_w,measured_power_w,attenuator_db,counts_per_s,timestamp\n",
    );
    for (i, eta) in eta.iter().enumerate() {
        let line = (i + 1) as u8;
        if Some(line) == skip_line {
            continue;
        }
        text.push_str(&format!(
            "{line},1.0e-3,{:.9e},0.0,120000,2024-05-01T10:0{i}:00Z\n",
            eta * 1.0e-3,
        ));
    }
    fs::write(dir.join("calibration.csv"), text).expect("writing calibration csv");
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// ── calibrate ───────────────────────────────────────────────────────────────

#[test]
fn calibrate_flags_the_inconsistent_line() {
    let dir = tempfile::tempdir().unwrap();
    write_calibration_csv(dir.path(), &PAPER_ETA, None);
    write_config(
        dir.path(),
        "[calibration]\nfile = \"calibration.csv\"\ndb = [2.43, 2.63, 1.88, 2.16]\n\
         [output]\ndir = \"artifacts\"\n",
    );
    let out = noonfi(dir.path(), &["calibrate", "--config", "run.toml"]);
    assert_success(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("line 1"));

    let doc = read_json(&dir.path().join("artifacts/budget.json"));
    let findings = doc["audit"]["findings"].as_array().unwrap();
    assert_eq!(findings.len(), 1, "exactly one line should be flagged");
    assert_eq!(findings[0]["line"], 1);
    let implied = findings[0]["eta_implied_by_db"].as_f64().unwrap();
    assert!(close(implied, 0.5715, 5e-4), "got {implied}");
    for (value, expected) in doc["budget"]["eta"].as_array().unwrap().iter().zip(PAPER_ETA) {
        assert!(close(value.as_f64().unwrap(), expected, 1e-9));
    }
}

#[test]
fn calibrate_is_quiet_for_consistent_quotes() {
    let db = [2.43, 2.63, 1.88, 2.16];
    let eta = db.map(|d: f64| 10f64.powf(-d / 10.0));
    let dir = tempfile::tempdir().unwrap();
    write_calibration_csv(dir.path(), &eta, None);
    write_config(
        dir.path(),
        "[calibration]\nfile = \"calibration.csv\"\ndb = [2.43, 2.63, 1.88, 2.16]\n\
         [output]\ndir = \"artifacts\"\n",
    );
    let out = noonfi(dir.path(), &["calibrate", "--config", "run.toml"]);
    assert_success(&out);
    let doc = read_json(&dir.path().join("artifacts/budget.json"));
    assert!(doc["audit"]["findings"].as_array().unwrap().is_empty());
}

#[test]
fn calibrate_fails_on_a_missing_line() {
    let dir = tempfile::tempdir().unwrap();
    write_calibration_csv(dir.path(), &PAPER_ETA, Some(3));
    write_config(
        dir.path(),
        "[calibration]\nfile = \"calibration.csv\"\n[output]\ndir = \"artifacts\"\n",
    );
    let out = noonfi(dir.path(), &["calibrate", "--config", "run.toml"]);
    assert!(!out.status.success());
    let err = stderr_of(&out);
    assert!(err.contains("missing lines") && err.contains('3'), "stderr: {err}");
    assert!(!dir.path().join("artifacts/budget.json").exists());
}

// ── simulate ────────────────────────────────────────────────────────────────

fn scan_config(seed: u64) -> String {
    format!(
        "[calibration]\neta = [0.517, 0.546, 0.649, 0.608]\n\
         [probe]\neta_t = 0.88\n\
         [scan]\nseed = {seed}\npoints = 51\n\
         [output]\ndir = \"artifacts\"\n"
    )
}

#[test]
fn simulate_is_bytewise_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), &scan_config(11));
    assert_success(&noonfi(dir.path(), &["simulate", "--config", "run.toml"]));
    let first = fs::read(dir.path().join("artifacts/scan.csv")).unwrap();
    assert_success(&noonfi(dir.path(), &["simulate", "--config", "run.toml"]));
    let second = fs::read(dir.path().join("artifacts/scan.csv")).unwrap();
    assert_eq!(first, second, "same seed must reproduce identical bytes");

    let out = noonfi(
        dir.path(),
        &["simulate", "--config", "run.toml", "--seed", "12"],
    );
    assert_success(&out);
    let reseeded = fs::read(dir.path().join("artifacts/scan.csv")).unwrap();
    assert_ne!(first, reseeded, "a new seed must change the draw");
    let meta = read_json(&dir.path().join("artifacts/scan_meta.json"));
    assert_eq!(meta["seed"], 12);
}

#[test]
fn simulate_voltage_mode_emits_both_columns() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "[calibration]\neta = [0.517, 0.546, 0.649, 0.608]\n\
         [probe]\neta_t = 0.88\n\
         [scan]\nseed = 3\npoints = 11\n\
         [scan.voltage]\nstart = 0.0\nstop = 5.0\nrad_per_volt = 1.2566370614\noffset_rad = 0.1\n\
         [output]\ndir = \"artifacts\"\n",
    );
    assert_success(&noonfi(dir.path(), &["simulate", "--config", "run.toml"]));
    let text = fs::read_to_string(dir.path().join("artifacts/scan.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "control,phi_rad,label,counts,dwell_s");
    let mut rows = 0;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        let control: f64 = fields[0].parse().unwrap();
        let phi: f64 = fields[1].parse().unwrap();
        assert!(
            close(phi, 1.2566370614 * control + 0.1, 1e-9),
            "row {line} breaks the voltage map"
        );
        rows += 1;
    }
    assert_eq!(rows, 11 * 4);
}

#[test]
fn simulate_finishes_a_default_grid_quickly() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), &scan_config(2).replace("points = 51", "points = 100"));
    let start = Instant::now();
    assert_success(&noonfi(dir.path(), &["simulate", "--config", "run.toml"]));
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 10, "simulate took {elapsed:.2?}");
}

#[test]
fn probe_order_gates_the_scan_and_the_reports() {
    let dir = tempfile::tempdir().unwrap();
    let with_n = |n: u32| {
        format!(
            "[calibration]\neta = [0.517, 0.546, 0.649, 0.608]\n\
             [probe]\nn = {n}\neta_t = 0.88\n\
             [output]\ndir = \"artifacts\"\n"
        )
    };

    // Orders outside the model are rejected before any work happens.
    write_config(dir.path(), &with_n(3));
    let out = noonfi(dir.path(), &["calibrate", "--config", "run.toml"]);
    assert!(!out.status.success());
    assert!(stderr_of(&out).contains("probe.n"), "stderr: {}", stderr_of(&out));

    // A one-photon probe cannot drive the two-photon scan or the comparison.
    write_config(dir.path(), &with_n(1));
    for step in ["simulate", "advantage", "scenario"] {
        let out = noonfi(dir.path(), &[step, "--config", "run.toml"]);
        assert!(!out.status.success(), "{step} must reject probe.n = 1");
        assert!(stderr_of(&out).contains("probe.n"), "stderr: {}", stderr_of(&out));
    }

    // It still supports the single-photon reference scan.
    write_config(
        dir.path(),
        &(with_n(1) + "[scan]\nprobe = \"single_photon\"\npoints = 21\n"),
    );
    assert_success(&noonfi(dir.path(), &["simulate", "--config", "run.toml"]));
}

// ── fit ─────────────────────────────────────────────────────────────────────

#[test]
fn fit_recovers_the_model_visibility() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), &scan_config(7).replace("points = 51", "points = 101"));
    assert_success(&noonfi(dir.path(), &["simulate", "--config", "run.toml"]));
    assert_success(&noonfi(dir.path(), &["fit", "--config", "run.toml"]));

    let doc = read_json(&dir.path().join("artifacts/fit.json"));
    assert_eq!(doc["harmonic"], 2);
    let pooled = doc["pooled"]["V"].as_f64().unwrap();
    assert!(
        close(pooled, 0.9918845807, 2e-3),
        "pooled visibility {pooled} is off the model value"
    );
    assert!(doc["pooled"]["sigma_V"].as_f64().unwrap() > 0.0);
    let curves = doc["curves"].as_array().unwrap();
    assert_eq!(curves.len(), 4);
    for curve in curves {
        for key in ["label", "A0", "V", "phi0", "cov", "chi2_red"] {
            assert!(!curve[key].is_null(), "curve misses {key}");
        }
    }

    let band = fs::read_to_string(dir.path().join("artifacts/band.csv")).unwrap();
    let mut lines = band.lines();
    assert_eq!(lines.next().unwrap(), "phi_rad,central,lower,upper");
    assert_eq!(lines.count(), 201);
}

#[test]
fn fit_names_the_malformed_row() {
    let dir = tempfile::tempdir().unwrap();
    let bad = "control,phi_rad,label,counts,dwell_s\n\
               0,0,P12,100,1\n\
               0,0,P34,100,1\n\
               0,0,P23,100,1\n\
               0,0,P14,100,1\n\
               0.1,0.1,P12,twelve,1\n";
    fs::write(dir.path().join("bad.csv"), bad).unwrap();
    write_config(
        dir.path(),
        "[calibration]\neta = [0.517, 0.546, 0.649, 0.608]\n\
         [fit]\nscan_file = \"bad.csv\"\n\
         [output]\ndir = \"artifacts\"\n",
    );
    let out = noonfi(dir.path(), &["fit", "--config", "run.toml"]);
    assert!(!out.status.success());
    let err = stderr_of(&out);
    assert!(err.contains("row 5"), "stderr should name the row: {err}");
}

#[test]
fn single_photon_scan_fits_at_the_fundamental() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "[calibration]\neta = [0.517, 0.546, 0.649, 0.608]\n\
         [probe]\neta_t = 0.88\n\
         [scan]\nprobe = \"single_photon\"\nseed = 5\npoints = 101\n\
         [output]\ndir = \"artifacts\"\n",
    );
    assert_success(&noonfi(dir.path(), &["simulate", "--config", "run.toml"]));
    let scan = fs::read_to_string(dir.path().join("artifacts/scan.csv")).unwrap();
    assert!(scan.contains(",P10,") && scan.contains(",P01,"));

    assert_success(&noonfi(dir.path(), &["fit", "--config", "run.toml"]));
    let doc = read_json(&dir.path().join("artifacts/fit.json"));
    assert_eq!(doc["harmonic"], 1);
    let pooled = doc["pooled"]["V"].as_f64().unwrap();
    assert!(close(pooled, 0.9979608, 2e-3), "pooled visibility {pooled}");
}

// ── advantage ───────────────────────────────────────────────────────────────

#[test]
fn advantage_reproduces_the_reference_numbers() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), &scan_config(1));
    assert_success(&noonfi(dir.path(), &["advantage", "--config", "run.toml"]));

    let doc = read_json(&dir.path().join("artifacts/advantage.json"));
    assert!(close(doc["v1"].as_f64().unwrap(), 0.9979607999624319, 1e-9));
    assert!(close(doc["v2"].as_f64().unwrap(), 0.9918845807033365, 1e-9));
    assert!(close(doc["f1_max"]["value"].as_f64().unwrap(), 0.6121506461425509, 1e-9));
    assert!(close(doc["f2_max"]["value"].as_f64().unwrap(), 1.3245341720062773, 1e-9));
    assert!(close(doc["ratio_R"].as_f64().unwrap(), 1.0818694551355863, 1e-9));
    assert!(close(
        doc["ratio_R_closed_form"]["appendix_b"].as_f64().unwrap(),
        1.14588671152345,
        1e-9
    ));
    assert!(close(
        doc["ratio_R_closed_form"]["eq4"].as_f64().unwrap(),
        1.1448741552273531,
        1e-9
    ));
    assert_eq!(doc["sub_sql"], false);
    assert_eq!(doc["advantage"], true);
    let warnings = doc["warnings"].as_array().unwrap();
    assert!(
        warnings.iter().any(|w| w.as_str().unwrap().contains("closed-form")),
        "the numeric/closed-form discrepancy must be surfaced"
    );

    // The emitted ratio is re-derivable from the emitted maxima exactly.
    let f1 = doc["f1_max"]["value"].as_f64().unwrap();
    let f2 = doc["f2_max"]["value"].as_f64().unwrap();
    assert_eq!(
        doc["ratio_R"].as_f64().unwrap().to_bits(),
        (0.5 * f2 / f1).to_bits()
    );

    let curves = fs::read_to_string(dir.path().join("artifacts/fi_curves.csv")).unwrap();
    let mut lines = curves.lines();
    assert_eq!(
        lines.next().unwrap(),
        "phi_rad,f1_raw,f1_per_photon,f2_raw,f2_per_photon"
    );
    assert_eq!(lines.count(), 201);
}

#[test]
fn advantage_respects_the_separable_benchmark() {
    // Symmetric budget at unit visibility: R reduces to 2 * eta on both
    // conventions, and the separable flag follows F2 = 4 * eta^2 across the
    // bound at 2.
    let run = |eta: f64| {
        let dir = tempfile::tempdir().unwrap();
        write_config(
            dir.path(),
            &format!(
                "[calibration]\neta = [{eta}, {eta}, {eta}, {eta}]\n\
                 [probe]\nv1 = 1.0\nv2 = 1.0\n\
                 [output]\ndir = \"artifacts\"\n"
            ),
        );
        assert_success(&noonfi(dir.path(), &["advantage", "--config", "run.toml"]));
        read_json(&dir.path().join("artifacts/advantage.json"))
    };

    let below = run(0.7);
    assert!(close(
        below["ratio_R_closed_form"]["appendix_b"].as_f64().unwrap(),
        1.4,
        1e-9
    ));
    assert!(close(below["ratio_R"].as_f64().unwrap(), 1.4, 1e-6));
    assert_eq!(below["sub_sql"], false);
    assert_eq!(below["advantage"], true);

    let above = run(0.75);
    assert!(close(above["ratio_R"].as_f64().unwrap(), 1.5, 1e-6));
    assert_eq!(above["sub_sql"], true, "F2 = 2.25 exceeds the bound");
}

// ── scenario ────────────────────────────────────────────────────────────────

#[test]
fn scenario_reports_recovery_upgrades() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "[calibration]\neta = [0.517, 0.546, 0.649, 0.608]\n\
         [scenario]\nno_relative_loss = true\npnrd_recovered_db = 0.40\n\
         [output]\ndir = \"artifacts\"\n",
    );
    assert_success(&noonfi(dir.path(), &["scenario", "--config", "run.toml"]));
    let doc = read_json(&dir.path().join("artifacts/scenario.json"));
    let balanced = doc["no_relative_loss"]["ratio_R_closed_form"]["appendix_b"]
        .as_f64()
        .unwrap();
    assert!(close(balanced, 1.159968965517241, 1e-9), "got {balanced}");
    let pnrd = doc["pnrd"]["ratio_R_closed_form"]["appendix_b"]
        .as_f64()
        .unwrap();
    assert!(close(pnrd, 1.2718806788924208, 1e-9), "got {pnrd}");
    for key in ["no_relative_loss", "pnrd"] {
        assert!(doc[key]["ratio_R"].as_f64().unwrap() > 1.0);
    }
}

#[test]
fn scenario_without_flags_matches_advantage() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), &scan_config(1));
    assert_success(&noonfi(dir.path(), &["advantage", "--config", "run.toml"]));
    assert_success(&noonfi(dir.path(), &["scenario", "--config", "run.toml"]));
    let advantage = read_json(&dir.path().join("artifacts/advantage.json"));
    let scenario = read_json(&dir.path().join("artifacts/scenario.json"));
    assert_eq!(
        scenario["identity"]["ratio_R"].as_f64().unwrap().to_bits(),
        advantage["ratio_R"].as_f64().unwrap().to_bits(),
        "an empty scenario section must report the unmodified system"
    );
}

// ── output directory resolution ─────────────────────────────────────────────

#[test]
fn out_dir_resolution_prefers_flag_then_config_then_env() {
    let dir = tempfile::tempdir().unwrap();
    let config = "[calibration]\neta = [0.517, 0.546, 0.649, 0.608]\n";
    write_config(dir.path(), config);

    // Env fallback when neither flag nor config name a directory.
    let out = Command::new(env!("CARGO_BIN_EXE_noonfi"))
        .current_dir(dir.path())
        .env("NOONFI_OUT", "env_out")
        .args(["calibrate", "--config", "run.toml"])
        .output()
        .expect("running noonfi");
    assert_success(&out);
    assert!(dir.path().join("env_out/budget.json").exists());

    // The flag wins over both config and env.
    let out = Command::new(env!("CARGO_BIN_EXE_noonfi"))
        .current_dir(dir.path())
        .env("NOONFI_OUT", "env_out_2")
        .args(["calibrate", "--config", "run.toml", "--out", "flag_out"])
        .output()
        .expect("running noonfi");
    assert_success(&out);
    assert!(dir.path().join("flag_out/budget.json").exists());
    assert!(!dir.path().join("env_out_2").exists());
}

// ── full pipeline ───────────────────────────────────────────────────────────

#[test]
fn pipeline_runs_end_to_end_quickly() {
    let dir = tempfile::tempdir().unwrap();
    write_calibration_csv(dir.path(), &PAPER_ETA, None);
    write_config(
        dir.path(),
        "[calibration]\nfile = \"calibration.csv\"\ndb = [2.43, 2.63, 1.88, 2.16]\n\
         [probe]\neta_t = 0.88\n\
         [scan]\nseed = 7\npoints = 101\n\
         [output]\ndir = \"artifacts\"\n",
    );

    let start = Instant::now();
    for step in ["calibrate", "simulate", "fit", "advantage"] {
        assert_success(&noonfi(dir.path(), &[step, "--config", "run.toml"]));
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "pipeline took {elapsed:.2?}");

    let advantage = read_json(&dir.path().join("artifacts/advantage.json"));
    assert_eq!(
        advantage["visibility_source"]["v2"],
        "pooled fit visibility",
        "the advantage stage must pick up the fitted visibility"
    );
    assert!(close(advantage["ratio_R"].as_f64().unwrap(), 1.082, 0.05));

    // One config, one digest: provenance ties all artifacts together.
    let digest = advantage["provenance"]["config_digest"].as_str().unwrap().to_string();
    for artifact in ["budget.json", "scan_meta.json", "fit.json"] {
        let doc = read_json(&dir.path().join("artifacts").join(artifact));
        assert_eq!(doc["provenance"]["config_digest"].as_str().unwrap(), digest);
    }
}
