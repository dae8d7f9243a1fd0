use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_peftlab");

const FAST: &str = r#"{
  "policies": [{"mode": "PT"}, {"mode": "PEFT", "ws": "updated"}],
  "train": {"epochs": 2},
  "pretrain": {"config": {"epochs": 1}},
  "adapt": {"seeds": [4], "stage2": {"epochs": 1}}
}"#;

fn peftlab(args: &[&str], out: &Path) -> Output {
    Command::new(BIN).args(args).arg("--out").arg(out).output().unwrap()
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn fast_config(dir: &Path) -> String {
    let path = dir.join("fast.json");
    fs::write(&path, FAST).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn gen_data_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let text = ok(&peftlab(&["gen-data", "--seed", "3"], a.path()));
    ok(&peftlab(&["gen-data", "--seed", "3"], b.path()));
    for f in ["acted.jsonl", "natural.jsonl", "counts.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    assert!(text.contains("acted") && text.contains("natural"));
    let jsonl = fs::read_dir(a.path()).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "jsonl"));
    assert_eq!(jsonl.count(), 2);
}

#[test]
fn audit_params_passes_and_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let first = ok(&peftlab(&["audit-params"], dir.path()));
    let second = ok(&peftlab(&["audit-params"], dir.path()));
    assert_eq!(first, second);
    let csv = fs::read_to_string(dir.path().join("audit.csv")).unwrap();
    let pass = csv.lines().filter(|l| l.ends_with(",PASS")).count();
    // 7 adaptor rows and PT, over two presets.
    assert_eq!(pass, 16);
    assert!(!csv.contains(",FAIL"));
    for figure in ["12", "24", "9 K", "25 K", "1.2 M", "3.2 M", "1.3 M", "3.5 M", "2.5 M", "6.7 M"] {
        assert!(csv.contains(&format!(",{figure},PASS")), "{figure}");
    }
}

#[test]
fn train_adapt_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let cfg = fast_config(out);
    ok(&peftlab(&["gen-data"], out));
    let table = ok(&peftlab(&["train", "--config", &cfg, "--fold", "1"], out));
    assert!(table.contains("# param"));
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("PT,,,,,0,")));
    assert!(out.join("checkpoints/PT-fold1.json").exists());
    assert!(out.join("checkpoints/WS-fold1.json").exists());

    let again = ok(&peftlab(&["train", "--config", &cfg, "--fold", "1", "--jobs", "2"], out));
    assert_eq!(again, table);
    assert_eq!(fs::read_to_string(out.join("results.csv")).unwrap(), csv);

    let adapt = ok(&peftlab(&["adapt", "--config", &cfg, "--fold", "1"], out));
    let header = adapt.lines().next().unwrap();
    for col in ["BA", "LoRA", "WS", "WG"] {
        assert!(header.contains(col));
    }
    assert!(adapt.contains("∗") && adapt.contains("✓") && adapt.contains("_x_ = zero-shot"));

    let report = ok(&peftlab(&["report"], out));
    assert!(report.starts_with(&table));
    assert!(report.ends_with(&adapt));
    assert_eq!(fs::read_to_string(out.join("results.csv")).unwrap(), csv);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let bad = out.join("bad.json");
    fs::write(&bad, r#"{"trian": {}}"#).unwrap();
    let o = peftlab(&["train", "--config", bad.to_str().unwrap()], out);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown field"));

    let o = peftlab(&["adapt"], out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gen-data"));

    assert_eq!(peftlab(&["report"], out).status.code(), Some(2));
    assert_eq!(peftlab(&["train", "--jobs", "0"], out).status.code(), Some(1));
    assert_eq!(peftlab(&["--help"], out).status.code(), Some(0));
}
