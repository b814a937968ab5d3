use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use photonforge::report::RunReport;
use photonforge::scanstab::{DriftSeries, GaussianSpot, ScanMap};
use photonforge::spectra::VoigtLine;
use photonforge::tomography::{synthesize_counts, DensityMatrix};
use serde_json::Value;

fn pf(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_photonforge"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> Output {
    let o = pf(args, dir);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{args:?}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn report(path: &Path) -> RunReport {
    RunReport::parse(&fs::read_to_string(path).unwrap()).expect("valid report")
}

const SCENE: &str = r#"{
  "emitter": {"k_pump": 5e7, "k_rad": 4e9, "k_isc": 4e8, "k_meta": 4e7},
  "background_rate": 2000.0,
  "collection_efficiency": 0.05,
  "duration_s": 0.5,
  "rng_seed": 11
}"#;

#[test]
fn simulate_correlate_fit_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("scene.json"), SCENE).unwrap();
    ok(&["simulate", "--config", "scene.json", "--out", "run.ptag", "--quiet"], d);
    let sim = report(&d.join("run.ptag.report.json"));
    assert_eq!(sim.command, "simulate");
    assert_eq!(sim.schema_version, 1);
    assert_eq!(sim.seeds, vec![11]);
    assert_eq!(sim.inputs.len(), 1);
    assert_eq!(sim.inputs[0].sha256.len(), 64);
    assert!(sim.results["records"].as_u64().unwrap() > 100_000);

    ok(
        &["g2", "--input", "run.ptag", "--ch-a", "0", "--ch-b", "1", "--bin-ps", "40", "--window-ns", "500", "--out", "hist.csv"],
        d,
    );
    let head = fs::read_to_string(d.join("hist.csv")).unwrap();
    assert!(head.starts_with("tau_ps,counts,g2,g2_err\n"));
    let g2r = report(&d.join("hist.csv.report.json"));
    assert_eq!(g2r.results["bins"].as_u64(), Some(25_001));

    ok(&["fit-g2", "--input", "hist.csv", "--irf-sigma-ps", "21.2", "--out", "fit.json"], d);
    let fit = report(&d.join("fit.json"));
    let g0 = fit.results["g2_zero"].as_f64().unwrap();
    let tau1 = fit.results["tau1_ps"].as_f64().unwrap();
    assert!(g0 < 0.5, "g2(0) {g0}");
    assert!(tau1 > 100.0 && tau1 < 500.0, "tau1 {tau1}");
    assert!(fit.results["fit"]["fit"]["chi2"].as_f64().is_some());
}

#[test]
fn seeded_runs_are_bit_identical_and_rerunnable_from_echo() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("scene.json"), SCENE).unwrap();
    ok(&["simulate", "--config", "scene.json", "--seed", "5", "--out", "a.ptag", "--quiet"], d);
    ok(&["simulate", "--config", "scene.json", "--seed", "5", "--out", "b.ptag", "--quiet"], d);
    ok(&["simulate", "--config", "scene.json", "--seed", "6", "--out", "c.ptag", "--quiet"], d);
    let a = fs::read(d.join("a.ptag")).unwrap();
    assert_eq!(a, fs::read(d.join("b.ptag")).unwrap());
    assert_ne!(a, fs::read(d.join("c.ptag")).unwrap());

    // the config echo alone regenerates the stream
    ok(&["simulate", "--config", "a.ptag.report.json", "--out", "d.ptag", "--quiet"], d);
    assert_eq!(a, fs::read(d.join("d.ptag")).unwrap());

    // argv echo
    let first = report(&d.join("a.ptag.report.json"));
    fs::rename(d.join("a.ptag"), d.join("a0.ptag")).unwrap();
    let argv: Vec<&str> = first.argv.iter().map(String::as_str).collect();
    ok(&argv, d);
    assert_eq!(fs::read(d.join("a0.ptag")).unwrap(), fs::read(d.join("a.ptag")).unwrap());
    let second = report(&d.join("a.ptag.report.json"));
    assert_eq!(first.results, second.results);
    assert_eq!(first.config, second.config);
}

#[test]
fn convert_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("scene.json"), SCENE).unwrap();
    ok(&["simulate", "--config", "scene.json", "--duration-s", "0.05", "--out", "s.ptag", "--quiet"], d);
    ok(&["convert", "--input", "s.ptag", "--out", "s.csv", "--quiet"], d);
    assert!(fs::read_to_string(d.join("s.csv")).unwrap().starts_with("timestamp_ticks,channel\n"));
    ok(&["convert", "--input", "s.csv", "--channels", "2", "--out", "t.ptag", "--quiet"], d);
    assert_eq!(fs::read(d.join("s.ptag")).unwrap(), fs::read(d.join("t.ptag")).unwrap());
}

#[test]
fn exit_codes_and_error_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = pf(&["g2", "--no-such-flag"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));

    let o = pf(&["fit-g2", "--input", "missing.csv"], d);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error[cli.Io]"));

    fs::write(d.join("bad.ptag"), b"XXXXXXXXXXXXXXXXXXXXXXXXXXXXXXXX").unwrap();
    let o = pf(&["g2", "--input", "bad.ptag", "--out", "h.csv"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error[timetag.BadMagic]"));

    let o = pf(&["reproduce", "--scenario", "paper-fig9"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error[pipeline.UnknownScenario]"));

    let o = pf(&["simulate", "--out", "x.ptag"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error[cli.Usage]"));

    fs::write(d.join("flat.csv"), "tau_ps,counts,g2,g2_err\n-40,0,0,1\n0,0,0,1\n40,0,0,1\n").unwrap();
    let o = pf(&["fit-g2", "--input", "flat.csv"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error[fitting."));
}

#[test]
fn spectrum_fit_and_emitter_selection() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let line = VoigtLine::from_widths(1292.0, 6.0, 9.8, 1500.0, 300.0).unwrap();
    let grid: Vec<f64> = (0..=180).map(|i| 1250.0 + 0.5 * i as f64).collect();
    let mut f = Vec::new();
    line.synthesize(&grid, 10.0, Some(1)).write_csv(&mut f).unwrap();
    fs::write(d.join("spec.csv"), f).unwrap();

    ok(&["fit-spectrum", "--input", "spec.csv", "--integration-s", "10", "--out", "fit.json", "--emit-plot-data", "plots"], d);
    let r = report(&d.join("fit.json"));
    assert!((r.results["fit"]["center_nm"].as_f64().unwrap() - 1292.0).abs() < 0.2);
    assert!(d.join("plots/fit-spectrum-spectrum.csv").exists());

    let o = ok(&["select-emitter", "--fit", "fit.json"], d);
    let sel: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(sel["results"]["channel"]["center_nm"].as_f64(), Some(1291.0));
    assert_eq!(sel["results"]["pass"].as_bool(), Some(true));

    // bare fit result works too
    fs::write(d.join("bare.json"), r.results["fit"].to_string()).unwrap();
    ok(&["select-emitter", "--fit", "bare.json", "--out", "sel.json"], d);
    assert_eq!(report(&d.join("sel.json")).results["pass"].as_bool(), Some(true));

    let o = ok(
        &["snr", "--signal-hz", "29700", "--signal-in-band-hz", "24750", "--background-hz", "20000", "--background-in-band-hz", "1500", "--channel-nm", "1291"],
        d,
    );
    let s: Value = serde_json::from_slice(&o.stdout).unwrap();
    let in_band = s["results"]["snr_in_band"]["finite"].as_f64().unwrap();
    assert!((in_band - 16.5).abs() < 1e-9);
    let o = pf(&["snr", "--signal-hz", "1", "--background-hz", "1", "--channel-nm", "1300"], d);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn saturation_fit_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut csv = String::from("power_mw,rate\n");
    for p in [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0] {
        csv.push_str(&format!("{p},{}\n", 150e3 * p / (5.0 + p) + 2e3 * p + 100.0));
    }
    fs::write(d.join("sweep.csv"), csv).unwrap();
    ok(&["fit-saturation", "--input", "sweep.csv", "--background", "--out", "fit.json"], d);
    let r = report(&d.join("fit.json"));
    assert!((r.results["fit"]["p_sat_mw"].as_f64().unwrap() - 5.0).abs() < 1e-3);
    assert!((r.results["fit"]["i_sat"].as_f64().unwrap() / 150e3 - 1.0).abs() < 1e-4);
}

#[test]
fn tomography_from_counts_json() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let rho = DensityMatrix::from_stokes([0.3, 0.0, 0.0]);
    let counts = synthesize_counts(&rho, 1e6, 1.0, None);
    fs::write(d.join("counts.json"), serde_json::to_string(&counts).unwrap()).unwrap();
    ok(&["tomo", "--counts", "counts.json", "--method", "mle", "--out", "rho.json"], d);
    let r = report(&d.join("rho.json"));
    let ev = r.results["eigenvalues"].as_array().unwrap();
    assert!((ev[0].as_f64().unwrap() - 0.65).abs() < 1e-3);
    assert!((r.results["dop"].as_f64().unwrap() - 0.3).abs() < 1e-3);
    assert!(r.results["rho"]["real"].is_array());
    assert!(r.results["rho"]["imag"].is_array());
    ok(&["tomo", "--counts", "counts.json", "--method", "linear", "--out", "lin.json"], d);
}

#[test]
fn scan_and_stability_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spots = [GaussianSpot::round(2.0, 2.0, 0.8, 300.0), GaussianSpot::round(5.0, 4.0, 0.8, 200.0)];
    let map = ScanMap::synthetic(71, 0.1, &spots, 10.0, Some(4));
    let mut f = Vec::new();
    map.write_csv(&mut f).unwrap();
    fs::write(d.join("scan.csv"), f).unwrap();
    ok(&["scan-peaks", "--input", "scan.csv", "--out", "peaks.json"], d);
    assert_eq!(report(&d.join("peaks.json")).results["candidates"].as_array().unwrap().len(), 2);
    ok(&["fit-spot", "--input", "scan.csv", "--out", "spot.json"], d);
    let s = report(&d.join("spot.json"));
    assert!((s.results["x_um"].as_f64().unwrap() - 2.0).abs() < 0.05);

    let mut axial = String::from("z_um,counts\n");
    for i in -100..=100 {
        let z = 0.2 * i as f64;
        axial.push_str(&format!("{z},{}\n", 1.0 / (1.0 + (z / 4.6).powi(2))));
    }
    fs::write(d.join("axial.csv"), axial).unwrap();
    ok(&["axial-fit", "--input", "axial.csv", "--out", "axial.json"], d);
    assert!((report(&d.join("axial.json")).results["rayleigh_um"].as_f64().unwrap() - 4.6).abs() < 5e-4);

    let drift = DriftSeries::linear_drift(2.2, 0.3, 14400.0, 30.0, 1.0, None);
    let mut f = Vec::new();
    drift.write_csv(&mut f).unwrap();
    fs::write(d.join("drift.csv"), f).unwrap();
    ok(&["stability", "--input", "drift.csv", "--spot-fwhm-um", "2.2", "--drift-um-per-h", "0.3", "--out", "st.json"], d);
    let st = report(&d.join("st.json"));
    let (got, oracle) = (
        st.results["retention_min"].as_f64().unwrap(),
        st.results["oracle_min"].as_f64().unwrap(),
    );
    assert!((got - oracle).abs() < 0.5, "{got} vs {oracle}");
}

#[test]
fn reproduce_prints_table_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = ok(&["reproduce", "--scenario", "paper-fig6", "--seed", "7", "--out", "fig6.json"], d);
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("scenario paper-fig6 (seed 7)"));
    assert!(table.contains("fidelity"));
    let r = report(&d.join("fig6.json"));
    assert_eq!(r.seeds, vec![7]);
    assert!(r.results["comparison"]["rows"].as_array().unwrap().len() >= 4);

    // rerun from the scenario echo with the same seed
    ok(&["reproduce", "--config", "fig6.json", "--seed", "7", "--out", "again.json", "--quiet"], d);
    assert_eq!(report(&d.join("again.json")).results, r.results);

    ok(&["reproduce", "--scenario", "paper-fig3", "--emit-plot-data", "plots", "--out", "fig3.json", "--quiet"], d);
    assert!(d.join("plots/reproduce-paper-fig3-drift.csv").exists());
    // the published retention time is out of reach of the drift model
    let o = pf(&["reproduce", "--scenario", "paper-fig3", "--strict", "--quiet"], d);
    assert_eq!(o.status.code(), Some(1));
}
