use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn corrscan(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_corrscan"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn last_line(o: &Output) -> PathBuf {
    let s = String::from_utf8_lossy(&o.stdout);
    PathBuf::from(s.lines().last().expect("output directory on stdout").trim())
}

#[test]
fn synthetic_inputs_through_scan_and_fdr() {
    let tmp = tempfile::tempdir().unwrap();
    let g = corrscan(tmp.path(), &["synth-geo"]);
    assert!(g.status.success(), "{}", String::from_utf8_lossy(&g.stderr));
    let geo_dir = last_line(&g);
    for f in ["synth.geo", "synth.pop", "synth.cas", "manifest.json"] {
        assert!(geo_dir.join(f).exists(), "{f}");
    }

    let set = |k: &str, f: &str| format!("input.{k}=\"{}\"", geo_dir.join(f).display());
    let (geo, pop, cas) = (set("geo", "synth.geo"), set("pop", "synth.pop"), set("cas", "synth.cas"));
    let s = corrscan(
        tmp.path(),
        &["scan", "--set", &geo, "--set", &pop, "--set", &cas, "--set", "scan.mc_size=99"],
    );
    assert!(s.status.success(), "{}", String::from_utf8_lossy(&s.stderr));
    let scan_dir = last_line(&s);
    let clusters = std::fs::read_to_string(scan_dir.join("clusters.csv")).unwrap();
    assert!(clusters.starts_with("rank,llr,p_value,cases,population,members"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(scan_dir.join("scan.json")).unwrap()).unwrap();
    assert_eq!(json["mc_size"], 99);

    let mut csv = String::from("label,p\n");
    for i in 0..60 {
        csv.push_str(&format!("t{i},{}\n", (i + 1) as f64 / 61.0));
    }
    let input = tmp.path().join("p.csv");
    std::fs::write(&input, csv).unwrap();
    let f = corrscan(tmp.path(), &["fdr", input.to_str().unwrap(), "--mc-size", "60"]);
    assert!(f.status.success(), "{}", String::from_utf8_lossy(&f.stderr));
    let rows = std::fs::read_to_string(last_line(&f).join("fdr.csv")).unwrap();
    assert_eq!(rows.lines().count(), 61);
}

#[test]
fn check_theory_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = corrscan(tmp.path(), &["check-theory"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().count() >= 5);
    assert!(!text.contains("FAIL"));
}

#[test]
fn input_and_config_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = corrscan(
        tmp.path(),
        &["scan", "--set", "input.geo=\"/nonexistent.geo\"", "--set", "input.pop=\"/nonexistent.pop\"", "--set", "input.cas=\"/nonexistent.cas\""],
    );
    assert_eq!(missing.status.code(), Some(2));
    let unknown = corrscan(tmp.path(), &["scan", "--set", "scan.no_such_key=1"]);
    assert_eq!(unknown.status.code(), Some(2));
    let no_files = corrscan(tmp.path(), &["scan"]);
    assert_eq!(no_files.status.code(), Some(2));
}

#[test]
fn study_output_ignores_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |threads: &str, sub: &str| {
        let out = tmp.path().join(sub);
        let o = corrscan(
            &out,
            &[
                "type1-study",
                "--threads",
                threads,
                "--set",
                "experiment.replicates=20",
                "--set",
                "experiment.mc_size=99",
                "--set",
                "experiment.sigmas=[0.0, 0.15]",
            ],
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(last_line(&o).join("proportions.csv")).unwrap()
    };
    assert_eq!(run("1", "a"), run("4", "b"));
}
