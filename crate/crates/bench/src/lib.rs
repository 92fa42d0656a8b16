//! Fixtures shared by the benchmarks.

use std::path::Path;

use thinkaudit_core::config::{AdapterSpec, AuditConfig};
use thinkaudit_core::forget_set::{generate_forget_set, ForgetSet};
use thinkaudit_core::ParserConvention;

pub fn fixture_set() -> ForgetSet {
    generate_forget_set(0, 60).expect("default forget set generates")
}

/// Raw generations mixing well-formed traces, missing close tags and
/// repeated tags.
pub fn fixture_generations(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| match i % 4 {
            0 => format!("<think>\nrecalling author {i} and the sentence\n</think>\n\nThe answer is {i}."),
            1 => format!(
                "recalling author {i} without ever closing the trace {}",
                "word ".repeat(40)
            ),
            2 => format!("<think>a</think>b</think>c {i}"),
            _ => format!("<think>\n{}\n</think>\n", "long reasoning ".repeat(200)),
        })
        .collect()
}

/// A sim audit config over one preset, writing into `dir`.
pub fn sim_audit_config(dir: &Path, preset: &str) -> AuditConfig {
    let fs = dir.join("forget_set.json");
    fixture_set().save(&fs).expect("forget set saves");
    let mut cfg = AuditConfig::new(
        vec![AdapterSpec {
            label: preset.to_string(),
            uri: format!("sim:{preset}"),
        }],
        fs,
        dir.join("results.jsonl"),
    );
    cfg.conventions = ParserConvention::ALL.to_vec();
    cfg.tf_enabled = true;
    cfg
}
