use rgiv::io::{load_panel, parse_records, render_records, render_tables, write_panel, LabeledPanel};
use rgiv::prelude::*;

#[test]
fn csv_round_trip_is_exact() {
    let spec = DgpSpec { periods: 50, ..builtin_scenario("disperse").unwrap() };
    let panel = generate_panel(&spec, 3).unwrap();
    let labeled = LabeledPanel {
        units: (0..panel.units()).map(|i| format!("unit{i}")).collect(),
        panel,
    };
    let dir = tempfile::tempdir().unwrap();
    let (data, sizes) = (dir.path().join("r.csv"), dir.path().join("s.csv"));
    write_panel(&labeled, &data, &sizes).unwrap();
    let back = load_panel(&data, &sizes, false).unwrap();
    assert_eq!(back, labeled);
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_panel(&dir.path().join("nope.csv"), &dir.path().join("s.csv"), false).unwrap_err();
    assert!(matches!(err, RgivError::Io(_)));
    assert_eq!(err.exit_code(), 4);
}

fn small_report(reps: usize) -> ScenarioReport {
    let spec = DgpSpec { periods: 400, ..builtin_scenario("coef_outlier").unwrap() };
    let opts = ScenarioOptions { reps, workers: Some(2), ..Default::default() };
    run_scenario(&spec, &opts).unwrap()
}

#[test]
fn records_round_trip() {
    let report = small_report(4);
    let bytes = render_records(&report);
    let mut parsed = parse_records(&bytes).unwrap();
    parsed.elapsed_secs = report.elapsed_secs;
    parsed.options.workers = report.options.workers;
    assert_eq!(parsed, report);
    assert_eq!(render_records(&parsed), bytes);
    assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), 5);
}

#[test]
fn tables_render_without_records() {
    let mut report = small_report(3);
    report.records.clear();
    let text = render_tables(&[report]);
    assert!(text.contains("coef_outlier"));
    assert!(text.contains("Homog."));
}

#[test]
fn single_replication_medians_are_the_observation() {
    let report = small_report(1);
    let rec = &report.records[0];
    let phi_s = report.summary.rgiv_phi_s.as_ref().unwrap();
    assert_eq!(phi_s.median_length, rec.phi_s.as_ref().unwrap().length());
    assert_eq!(phi_s.count, 1);
    assert!(phi_s.rate == 0.0 || phi_s.rate == 1.0);
    for (stat, ci) in report.summary.coefficients.iter().zip(&rec.coefficients) {
        assert_eq!(stat.median_length, ci.length());
    }
}
