mod common;

use std::io::Write;

use thinkaudit_core::config::{AdapterSpec, AuditConfig};
use thinkaudit_core::forget_set::generate_forget_set;
use thinkaudit_core::record::{latest_by_key, read_records, RecordKind, ResultRecord};
use thinkaudit_core::runner::run_audit;
use thinkaudit_core::{AuditError, ParserConvention, PrefillArm};

fn two_adapter_config(dir: &std::path::Path) -> AuditConfig {
    let (_, fs) = common::write_forget_set(dir);
    AuditConfig::new(
        vec![
            AdapterSpec {
                label: "memorized".into(),
                uri: "sim:memorized".into(),
            },
            AdapterSpec {
                label: "npo_K1600_seed0".into(),
                uri: "sim:npo_k1600".into(),
            },
        ],
        fs,
        dir.join("out/results.jsonl"),
    )
}

fn comparable(records: Vec<ResultRecord>) -> Vec<ResultRecord> {
    latest_by_key(records)
        .into_iter()
        .map(|mut r| {
            r.run_id.clear();
            r.timestamp.clear();
            r
        })
        .collect()
}

#[test]
fn cardinality_of_default_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = two_adapter_config(dir.path());
    let summary = run_audit(&cfg).unwrap();
    let records = read_records(&cfg.out_path).unwrap();
    let canary = records.iter().filter(|r| r.kind == RecordKind::Canary).count();
    let retain = records.iter().filter(|r| r.kind == RecordKind::Retain).count();
    assert_eq!(canary, 2 * 60 * 4);
    assert_eq!(retain, 2 * 60);
    assert_eq!(records.len(), summary.total_rows);
    assert!(records
        .iter()
        .all(|r| r.convention == Some(ParserConvention::EmptyThink)));
    assert!(records.iter().all(|r| r.raw.is_none()));
    assert_eq!((summary.error_rows, summary.degraded), (0, false));

    let cell = summary
        .cell("npo_K1600_seed0", PrefillArm::Auto, ParserConvention::EmptyThink)
        .unwrap();
    assert_eq!((cell.out_hits, cell.thk_hits, cell.n), (36, 50, 60));
    assert!((cell.gap - 14.0 / 60.0).abs() < 1e-12);
}

#[test]
fn rerun_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = two_adapter_config(dir.path());
    let first = run_audit(&cfg).unwrap();
    let before = std::fs::read(&cfg.out_path).unwrap();
    let second = run_audit(&cfg).unwrap();
    assert_eq!((second.requests, second.records_written), (0, 0));
    assert_eq!(second.skipped, first.requests);
    assert_eq!(std::fs::read(&cfg.out_path).unwrap(), before);
    assert_eq!(second.cells, first.cells);
}

#[test]
fn interrupted_run_resumes_to_the_same_result() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = two_adapter_config(dir.path());
    run_audit(&cfg).unwrap();
    let full = comparable(read_records(&cfg.out_path).unwrap());

    // Keep the first third of the file and a torn line.
    let text = std::fs::read_to_string(&cfg.out_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let keep = lines.len() / 3;
    let mut f = std::fs::File::create(&cfg.out_path).unwrap();
    for l in &lines[..keep] {
        writeln!(f, "{l}").unwrap();
    }
    write!(f, "{}", &lines[keep][..20]).unwrap();
    drop(f);

    let resumed = run_audit(&cfg).unwrap();
    assert_eq!(resumed.records_written, lines.len() - keep);
    let (records, torn) = thinkaudit_core::record::read_records_lenient(&cfg.out_path).unwrap();
    assert_eq!(torn, 1);
    assert_eq!(comparable(records), full);
}

#[test]
fn output_is_schedule_independent() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::sim_config(dir.path(), &[("npo_K400_seed0", "npo_k400")]);
    cfg.concurrency_limit = 1;
    cfg.out_path = dir.path().join("serial.jsonl");
    let serial = run_audit(&cfg).unwrap();
    cfg.concurrency_limit = 16;
    cfg.out_path = dir.path().join("parallel.jsonl");
    let parallel = run_audit(&cfg).unwrap();
    assert_eq!(serial.cells, parallel.cells);
    assert_eq!(
        comparable(read_records(dir.path().join("serial.jsonl")).unwrap()),
        comparable(read_records(dir.path().join("parallel.jsonl")).unwrap())
    );
}

#[test]
fn unreachable_backend_degrades_then_recovers() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = two_adapter_config(dir.path());
    cfg.adapters[1].uri = "http://127.0.0.1:9".into();
    cfg.arms = vec![PrefillArm::Auto];
    cfg.timeout_secs = Some(2.0);
    let summary = run_audit(&cfg).unwrap();
    assert!(summary.degraded);
    assert_eq!(summary.error_rows, 120);
    let errors: Vec<_> = read_records(&cfg.out_path)
        .unwrap()
        .into_iter()
        .filter(|r| r.is_error())
        .collect();
    assert!(errors
        .iter()
        .all(|r| r.out_hit.is_none() && r.adapter == "npo_K1600_seed0"));

    cfg.adapters[1].uri = "sim:npo_k1600".into();
    let retry = run_audit(&cfg).unwrap();
    assert_eq!(retry.requests, 120);
    assert_eq!((retry.error_rows, retry.degraded), (0, false));
}

#[test]
fn refuses_to_mix_forget_sets() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = two_adapter_config(dir.path());
    cfg.arms = vec![PrefillArm::Auto];
    run_audit(&cfg).unwrap();
    let other = dir.path().join("other.json");
    generate_forget_set(1, 60).unwrap().save(&other).unwrap();
    cfg.forget_set_path = other;
    assert!(matches!(run_audit(&cfg), Err(AuditError::MixedForgetSets(h)) if h.len() == 2));
}

#[test]
fn raw_text_only_when_requested() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = two_adapter_config(dir.path());
    cfg.adapters.truncate(1);
    cfg.arms = vec![PrefillArm::Bio];
    cfg.probe_kinds = vec![thinkaudit_core::ProbeKind::Canary];
    cfg.store_raw = true;
    run_audit(&cfg).unwrap();
    let records = read_records(&cfg.out_path).unwrap();
    assert_eq!(records.len(), 60);
    // The raw text includes the assembled prefill.
    assert!(records
        .iter()
        .all(|r| r.raw.as_deref().is_some_and(|t| t.contains("</think>"))));
}

#[test]
fn invalid_configs_are_rejected_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = two_adapter_config(dir.path());
    cfg.adapters[1].label = "memorized".into();
    assert!(matches!(run_audit(&cfg), Err(AuditError::InvalidArgument(_))));
    assert!(!cfg.out_path.exists());

    let mut cfg = two_adapter_config(dir.path());
    cfg.adapters[0].uri = "ftp://nowhere".into();
    assert!(run_audit(&cfg).is_err());

    let mut cfg = two_adapter_config(dir.path());
    cfg.arms.clear();
    assert!(run_audit(&cfg).is_err());
}

#[test]
fn config_file_paths_resolve_against_its_directory() {
    let dir = tempfile::tempdir().unwrap();
    common::write_forget_set(dir.path());
    let path = dir.path().join("audit.toml");
    std::fs::write(
        &path,
        r#"
forget_set = "forget_set.json"
out = "runs/a.jsonl"
arms = ["auto", "bio"]
conventions = ["empty-think", "full-think"]
tf = true

[[adapters]]
label = "npo_K1600_seed0"
uri = "sim:npo_k1600"

[bootstrap]
n_boot = 500
"#,
    )
    .unwrap();
    let cfg = AuditConfig::load(&path).unwrap();
    assert_eq!(cfg.out_path, dir.path().join("runs/a.jsonl"));
    assert_eq!(cfg.arm_set(), vec![PrefillArm::Auto, PrefillArm::Bio]);
    let summary = run_audit(&cfg).unwrap();
    let tf = read_records(&cfg.out_path)
        .unwrap()
        .into_iter()
        .filter(|r| r.kind == RecordKind::Tf)
        .count();
    assert_eq!(tf, 60);
    assert_eq!(summary.cells.len(), 4);
}
