use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_transit-rhythm"))
}

fn small_config(dir: &Path, records: Option<&Path>) -> std::path::PathBuf {
    let records = records
        .map(|p| format!("records = {:?}\n", p.display().to_string()))
        .unwrap_or_default();
    let text = format!(
        r#"out_dir = {out:?}
seed = 7

[[periods]]
label = "a"
week_start = "2024-03-04"
{records}
[[periods]]
label = "b"
week_start = "2024-03-11"

[clustering]
window = 11
tau = "fixed:2.5"
sample_size = 300

[[synth.population]]
archetype = "Commuter"
count = 80

[[synth.population]]
archetype = "OneDayRider"
count = 80

[[synth.population]]
archetype = "NightOwl"
count = 20
"#,
        out = dir.join("out").display().to_string(),
    );
    let path = dir.join("cfg.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

#[test]
fn full_run_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), None);
    let out = run(bin().args(["run", "--config"]).arg(&cfg));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("report:"));
    for stage in ["synth", "ingest", "cluster", "classify", "transitions", "report"] {
        assert!(dir.path().join("out").join(stage).join("manifest.json").is_file(), "{stage}");
    }
}

#[test]
fn single_period_run_skips_comparisons() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), None);
    let text = std::fs::read_to_string(&cfg).unwrap();
    let cut = text.find("[[periods]]\nlabel = \"b\"").unwrap();
    let end = text[cut..].find("\n\n").unwrap() + cut;
    std::fs::write(&cfg, format!("{}{}", &text[..cut], &text[end + 2..])).unwrap();
    let out = run(bin().args(["run", "--config"]).arg(&cfg));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("out/transitions").exists());
    let out = run(bin().args(["report", "--config"]).arg(&cfg));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), None);
    let out = run(bin()
        .args(["config", "--config"])
        .arg(&cfg)
        .args(["--seed", "99", "--epsilon", "50", "--window", "7", "--k", "2"]));
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("seed = 99"));
    assert!(text.contains("epsilon = 50.0"));
    assert!(text.contains("window = 7"));
    assert!(text.contains("k = 2.0"));
}

#[test]
fn invalid_settings_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), None);
    let out = run(bin().args(["synth", "--window", "4", "--config"]).arg(&cfg));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));

    std::fs::write(dir.path().join("bad.toml"), "no_such_key = 1\n").unwrap();
    let out = run(bin().args(["config", "--config"]).arg(dir.path().join("bad.toml")));
    assert_eq!(out.status.code(), Some(2));

    let out = run(bin().args(["config", "--config"]).arg(dir.path().join("missing.toml")));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_upstream_output_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), None);
    let out = run(bin().args(["cluster", "--config"]).arg(&cfg));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_records_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("records.csv");
    std::fs::write(
        &records,
        "card_id,timestamp,mode,station_id,event\n\
         c1,yesterday,metro,s1,boarding\n\
         c2,2024-03-05 08:00:00,tram,s1,boarding\n\
         c3,2024-03-05 08:00:00,metro,s1,jumping\n",
    )
    .unwrap();
    let cfg = small_config(dir.path(), Some(&records));
    let out = run(bin().args(["ingest", "--config"]).arg(&cfg));
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data error"));
}
