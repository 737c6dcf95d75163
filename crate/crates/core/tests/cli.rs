use std::path::Path;
use std::process::{Command, Output};

fn ggmoe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ggmoe"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = ggmoe(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_is_deterministic_per_seed() {
    let a = ok(&["gen", "--n", "100", "--seed", "7"]).stdout;
    let b = ok(&["gen", "--n", "100", "--seed", "7"]).stdout;
    let c = ok(&["gen", "--n", "100", "--seed", "8"]).stdout;
    assert_eq!(a, b);
    assert_ne!(a, c);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 102);
    assert!(text.starts_with("# seed=7 n=100\nx_1,y\n"));
}

#[test]
fn gen_fit_dendro_select_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let fit = dir.path().join("fit.json");
    let tree = dir.path().join("tree.json");
    let table = dir.path().join("criteria.csv");
    ok(&["gen", "--n", "2000", "--seed", "7", "--out", p(&data)]);
    ok(&[
        "fit",
        "--data",
        p(&data),
        "--k",
        "5",
        "--init",
        "favorable",
        "--seed",
        "7",
        "--out",
        p(&fit),
    ]);
    ok(&["dendro", "--input", p(&fit), "--out", p(&tree)]);
    let out = ok(&[
        "select",
        "--dendro",
        p(&tree),
        "--data",
        p(&data),
        "--out",
        p(&table),
    ]);
    let msg = String::from_utf8(out.stderr).unwrap();
    assert!(msg.contains("selected_k dsc=3"), "{msg}");
    let csv = std::fs::read_to_string(&table).unwrap();
    assert!(
        csv.lines().next().unwrap().contains("selected_k=3"),
        "{csv}"
    );
    // header plus one row per level 2..=5
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 5);
}

#[test]
fn select_reports_information_criteria_when_fits_are_given() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    ok(&["gen", "--n", "800", "--seed", "3", "--out", p(&data)]);
    let mut fits = Vec::new();
    for k in 1..=4 {
        let f = dir.path().join(format!("fit{k}.json"));
        let ks = k.to_string();
        ok(&[
            "fit",
            "--data",
            p(&data),
            "--k",
            &ks,
            "--init",
            "favorable",
            "--seed",
            "1",
            "--out",
            p(&f),
            "--quiet",
        ]);
        fits.push(f);
    }
    let tree = dir.path().join("tree.json");
    ok(&["dendro", "--input", p(&fits[3]), "--out", p(&tree)]);
    let mut args = vec!["select", "--dendro", p(&tree), "--data", p(&data), "--fits"];
    args.extend(fits.iter().map(|f| p(f)));
    let out = ok(&args);
    let msg = String::from_utf8(out.stderr).unwrap();
    assert!(
        msg.contains("aic=") && msg.contains("bic=") && msg.contains("icl="),
        "{msg}"
    );
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = ggmoe(&["bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn malformed_csv_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "# comment\nx_1,y\n0.1,0.2\n0.3,abc\n").unwrap();
    let out = ggmoe(&["fit", "--data", p(&bad), "--k", "2"]);
    assert_eq!(out.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains(&format!("{}:4", bad.display())), "{msg}");
}

#[test]
fn invalid_order_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    ok(&["gen", "--n", "10", "--out", p(&data)]);
    let out = ggmoe(&["fit", "--data", p(&data), "--k", "20"]);
    assert_eq!(out.status.code(), Some(1));
}
