use std::process::{Command, Output};

fn fracdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fracdiff"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn infsup_csv_to_stdout() {
    let o = fracdiff(&["infsup", "--alpha", "0.5", "--K", "20,40"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("mode,case,alpha,K,h,err_l2,err_aux,rate"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&first[..5], &["infsup", "", "0.5", "20", ""]);
    let c: f64 = first[5].parse().unwrap();
    assert!((c - 0.4754).abs() < 1e-3);
}

#[test]
fn markdown_report_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.md");
    let o = fracdiff(&[
        "pde1d", "--case", "a", "--alpha", "0.5", "--K", "5,10", "--M", "8", "--ref-K", "40",
        "--format", "markdown", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let md = std::fs::read_to_string(&out).unwrap();
    assert!(md.contains("### Case (a): relative L²(Q_T) error, h = 1/8"), "{md}");
    assert!(md.contains("(1.50)"));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.conf");
    std::fs::write(&cfg, "# scalar study\nalpha = 0.3, 0.9\nK = 10, 20\nref_K = 400\nlambda = 2\n").unwrap();
    let o = fracdiff(&["ode", "--config", cfg.to_str().unwrap(), "--alpha", "0.7"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.starts_with("ode,,0.7,")));
}

#[test]
fn output_is_deterministic() {
    let args = ["ode", "--alpha", "0.4", "--K", "8,16,32", "--ref-K", "300"];
    assert_eq!(fracdiff(&args).stdout, fracdiff(&args).stdout);
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad_cfg = dir.path().join("bad.conf");
    std::fs::write(&bad_cfg, "alpha = 0.5\nwidth = 3\n").unwrap();
    let missing = dir.path().join("missing.conf");
    let cases: Vec<Vec<&str>> = vec![
        vec!["ode", "--K", "20,10"],
        vec!["ode", "--K", "10,20", "--ref-K", "20"],
        vec!["pde2d", "--case", "c"],
        vec!["pde1d", "--case", "q"],
        vec!["ode", "--case", "a"],
        vec!["infsup", "--alpha", "1.2"],
        vec!["ode", "--format", "xml"],
        vec!["ode", "--config", bad_cfg.to_str().unwrap()],
        vec!["ode", "--config", missing.to_str().unwrap()],
        vec!["repro-table", "6"],
        vec!["frobnicate"],
    ];
    for args in cases {
        let o = fracdiff(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn unwritable_output_is_reported() {
    let o = fracdiff(&["infsup", "--alpha", "0.5", "--K", "4", "--out", "/nonexistent/dir/r.csv"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/dir/r.csv"));
}

#[test]
fn repro_table_one_fast() {
    let o = fracdiff(&["repro-table", "1", "--fast", "--format", "markdown", "--K", "20,40"]);
    assert!(o.status.success());
    let md = stdout(&o);
    assert!(md.contains("| 0.98 |"));
    assert!(md.contains("| 0.3 | 0.7711 | 0.7697 |"), "{md}");
}
