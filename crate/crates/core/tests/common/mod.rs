#![allow(dead_code)]

use std::path::Path;

use thinkaudit_core::config::{AdapterSpec, AuditConfig};
use thinkaudit_core::forget_set::{generate_forget_set, ForgetSet};
use thinkaudit_core::probe_builder::ProbeKind;
use thinkaudit_core::record::{latest_by_key, read_records, ResultRecord};
use thinkaudit_core::runner::{run_audit, AuditSummary};
use thinkaudit_core::ParserConvention;

/// Labels and presets audited together; labels carry K and seed metadata.
pub const ADAPTERS: &[(&str, &str)] = &[
    ("memorized", "memorized"),
    ("npo_K100_seed0", "npo_k100"),
    ("npo_K400_seed0", "npo_k400"),
    ("npo_K800_seed0", "npo_k800"),
    ("npo_K1600_seed0", "npo_k1600"),
    ("npo_K1600_seed1", "npo_seed1_k1600"),
    ("llama_drift", "llama_drift"),
    ("ga_K400plus", "ga_k400plus"),
    ("meta_trained", "meta_trained"),
    ("none_trained", "none_trained"),
];

pub fn write_forget_set(dir: &Path) -> (ForgetSet, std::path::PathBuf) {
    let set = generate_forget_set(0, 60).unwrap();
    let path = dir.join("forget_set.json");
    set.save(&path).unwrap();
    (set, path)
}

pub fn sim_config(dir: &Path, adapters: &[(&str, &str)]) -> AuditConfig {
    let (_, fs) = write_forget_set(dir);
    let mut cfg = AuditConfig::new(
        adapters
            .iter()
            .map(|(label, preset)| AdapterSpec {
                label: label.to_string(),
                uri: format!("sim:{preset}"),
            })
            .collect(),
        fs,
        dir.join("results.jsonl"),
    );
    cfg.conventions = ParserConvention::ALL.to_vec();
    cfg.probe_kinds = vec![ProbeKind::Canary, ProbeKind::Qa, ProbeKind::Retain];
    cfg.tf_enabled = true;
    cfg
}

/// Runs a full audit over `adapters` and returns the summary and the
/// deduplicated records.
pub fn audit(dir: &Path, adapters: &[(&str, &str)]) -> (AuditSummary, Vec<ResultRecord>) {
    let cfg = sim_config(dir, adapters);
    let summary = run_audit(&cfg).unwrap();
    let records = latest_by_key(read_records(&cfg.out_path).unwrap());
    (summary, records)
}
