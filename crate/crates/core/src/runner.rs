//! Runs an audit: every adapter x arm x probe, parsed under every
//! configured convention, plus optional teacher-forced scoring, written to
//! JSONL as results arrive.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backend::{open_backend, Backend, BackendOptions, GenerationRequest};
use crate::config::AuditConfig;
use crate::error::{AuditError, Result};
use crate::forget_set::ForgetSet;
use crate::metrics::score_probe;
use crate::probe_builder::{render_prompt, PrefillArm, Probe, ProbeKind};
use crate::record::{latest_by_key, read_records_lenient, RecordKey, RecordKind, RecordWriter, ResultRecord};
use crate::retain_set::retain_probes;
use crate::teacher_forced::score_author;
use crate::trace_parser::{parse_with_tags, ParserConvention};

/// Share of error rows above which a run is reported as degraded.
pub const DEGRADED_ERROR_SHARE: f64 = 0.10;

/// Canary metrics for one adapter, arm and convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub adapter: String,
    pub arm: PrefillArm,
    pub convention: ParserConvention,
    pub n: usize,
    pub out_hits: usize,
    pub thk_hits: usize,
    pub thk_emitted: usize,
    pub wellformed: usize,
    pub out_acc: f64,
    pub thk_leak: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub run_id: String,
    pub out_path: PathBuf,
    pub forget_set_hash: String,
    /// Backend calls made by this run.
    pub requests: usize,
    /// Work items skipped because their records were already present.
    pub skipped: usize,
    pub records_written: usize,
    /// Rows in the deduplicated result file.
    pub total_rows: usize,
    pub error_rows: usize,
    pub degraded: bool,
    pub cells: Vec<CellSummary>,
}

impl AuditSummary {
    pub fn cell(&self, adapter: &str, arm: PrefillArm, convention: ParserConvention) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.adapter == adapter && c.arm == arm && c.convention == convention)
    }
}

enum Task {
    Generate {
        adapter: usize,
        probe: Probe,
        arm: PrefillArm,
    },
    TeacherForced {
        adapter: usize,
        author: usize,
        arm: PrefillArm,
    },
}

struct Context<'a> {
    config: &'a AuditConfig,
    forget_set: &'a ForgetSet,
    backends: Vec<Arc<dyn Backend>>,
    conventions: Vec<ParserConvention>,
    run_id: String,
    hash: String,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn new_run_id() -> String {
    format!(
        "{}-{:08x}",
        chrono::Utc::now().format("%Y%m%dT%H%M%SZ"),
        rand::random::<u32>()
    )
}

impl Context<'_> {
    fn base(&self, adapter: usize, author_id: &str, index: usize, arm: PrefillArm, kind: RecordKind) -> ResultRecord {
        ResultRecord {
            run_id: self.run_id.clone(),
            timestamp: now(),
            adapter: self.config.adapters[adapter].label.clone(),
            author_id: author_id.to_string(),
            probe_index: index,
            arm,
            convention: None,
            kind,
            forget_set_hash: self.hash.clone(),
            out_hit: None,
            thk_hit: None,
            thk_emitted: None,
            anatomy: None,
            answer_len_chars: None,
            wellformed: None,
            tf: None,
            raw: None,
            error: None,
        }
    }

    fn keys(&self, task: &Task) -> Vec<RecordKey> {
        match task {
            Task::Generate { adapter, probe, arm } => self
                .conventions
                .iter()
                .map(|&c| RecordKey {
                    adapter: self.config.adapters[*adapter].label.clone(),
                    author_id: probe.subject_id.clone(),
                    probe_index: probe.index,
                    arm: *arm,
                    convention: Some(c),
                    kind: probe.kind.into(),
                })
                .collect(),
            Task::TeacherForced { adapter, author, arm } => vec![RecordKey {
                adapter: self.config.adapters[*adapter].label.clone(),
                author_id: self.forget_set.authors[*author].id.clone(),
                probe_index: 0,
                arm: *arm,
                convention: None,
                kind: RecordKind::Tf,
            }],
        }
    }

    fn execute(&self, task: &Task) -> Vec<ResultRecord> {
        match task {
            Task::Generate { adapter, probe, arm } => self.generate(*adapter, probe, *arm),
            Task::TeacherForced { adapter, author, arm } => vec![self.teacher_forced(*adapter, *author, *arm)],
        }
    }

    fn generate(&self, adapter: usize, probe: &Probe, arm: PrefillArm) -> Vec<ResultRecord> {
        let templates = &self.config.templates;
        let label = &self.config.adapters[adapter].label;
        let result = render_prompt(probe, arm, &templates.chat, &templates.prefill, &templates.tags).and_then(|rp| {
            let req = GenerationRequest {
                prompt_text: rp.prompt_text,
                max_new_tokens: self.config.max_new_tokens,
                greedy: true,
            };
            let text = self.backends[adapter].generate(&req)?;
            Ok(format!("{}{}", rp.assistant_prefix, text))
        });
        self.conventions
            .iter()
            .map(|&conv| {
                let mut rec = self.base(adapter, &probe.subject_id, probe.index, arm, probe.kind.into());
                rec.convention = Some(conv);
                let raw = match &result {
                    Ok(raw) => raw,
                    Err(e) => {
                        rec.error = Some(e.to_string());
                        return rec;
                    }
                };
                let parsed = parse_with_tags(raw, conv, &templates.tags);
                match score_probe(&parsed, probe, arm, label) {
                    Ok(o) => {
                        rec.out_hit = Some(o.out_hit);
                        rec.thk_hit = Some(o.thk_hit);
                        rec.thk_emitted = Some(o.thk_emitted);
                        rec.anatomy = Some(o.anatomy);
                        rec.answer_len_chars = Some(o.answer_len_chars);
                        rec.wellformed = Some(parsed.well_formed);
                        if self.config.store_raw {
                            rec.raw = Some(raw.clone());
                        }
                    }
                    Err(e) => rec.error = Some(e.to_string()),
                }
                rec
            })
            .collect()
    }

    fn teacher_forced(&self, adapter: usize, author: usize, arm: PrefillArm) -> ResultRecord {
        let a = &self.forget_set.authors[author];
        let mut rec = self.base(adapter, &a.id, 0, arm, RecordKind::Tf);
        match score_author(self.backends[adapter].as_ref(), a, arm, &self.config.templates) {
            Ok(Some(tf)) => rec.tf = Some(tf),
            Ok(None) => rec.error = Some("backend returned no continuation tokens".into()),
            Err(e) => rec.error = Some(e.to_string()),
        }
        rec
    }
}

fn plan(config: &AuditConfig, forget_set: &ForgetSet) -> Result<Vec<Task>> {
    let arms = config.arm_set();
    let kinds: BTreeSet<ProbeKind> = config.probe_kinds.iter().copied().collect();
    let mut tasks = Vec::new();
    for adapter in 0..config.adapters.len() {
        if kinds.contains(&ProbeKind::Canary) {
            for author in &forget_set.authors {
                let probe = Probe::canary(author)?;
                for &arm in &arms {
                    tasks.push(Task::Generate {
                        adapter,
                        probe: probe.clone(),
                        arm,
                    });
                }
            }
        }
        if kinds.contains(&ProbeKind::Qa) {
            for author in &forget_set.authors {
                for probe in Probe::qa(author) {
                    for &arm in &arms {
                        tasks.push(Task::Generate {
                            adapter,
                            probe: probe.clone(),
                            arm,
                        });
                    }
                }
            }
        }
        // Retain probes have no author to prefill for.
        if kinds.contains(&ProbeKind::Retain) && arms.contains(&PrefillArm::Auto) {
            for r in retain_probes() {
                tasks.push(Task::Generate {
                    adapter,
                    probe: Probe::retain(&r),
                    arm: PrefillArm::Auto,
                });
            }
        }
        if config.tf_enabled {
            for author in 0..forget_set.len() {
                for &arm in arms.iter().filter(|a| a.is_prefill()) {
                    tasks.push(Task::TeacherForced { adapter, author, arm });
                }
            }
        }
    }
    Ok(tasks)
}

/// Runs (or resumes) the audit described by `config`.
pub fn run_audit(config: &AuditConfig) -> Result<AuditSummary> {
    config.validate()?;
    let forget_set = ForgetSet::load(&config.forget_set_path)?;
    let hash = forget_set.content_hash();

    let existing = if config.out_path.exists() {
        let (records, skipped) = read_records_lenient(&config.out_path)?;
        if skipped > 0 {
            tracing::warn!("{}: ignoring {skipped} unreadable line(s)", config.out_path.display());
        }
        records
    } else {
        Vec::new()
    };
    let hashes: BTreeSet<&str> = existing.iter().map(|r| r.forget_set_hash.as_str()).collect();
    if hashes.iter().any(|h| *h != hash) {
        let mut all: Vec<String> = hashes.into_iter().map(String::from).collect();
        if !all.contains(&hash) {
            all.push(hash.clone());
        }
        return Err(AuditError::MixedForgetSets(all));
    }
    // Error rows are retried.
    let done: HashSet<RecordKey> = latest_by_key(existing)
        .into_iter()
        .filter(|r| !r.is_error())
        .map(|r| r.key())
        .collect();

    let opts = BackendOptions {
        timeout: config.timeout(),
    };
    let backends = config
        .adapters
        .iter()
        .map(|a| {
            open_backend(&a.uri, &forget_set, &opts)
                .map_err(|e| AuditError::invalid(format!("adapter `{}`: {e}", a.label)))
        })
        .collect::<Result<Vec<_>>>()?;

    let ctx = Context {
        config,
        forget_set: &forget_set,
        backends,
        conventions: config.convention_set(),
        run_id: new_run_id(),
        hash: hash.clone(),
    };
    let all_tasks = plan(config, &forget_set)?;
    let n_all = all_tasks.len();
    let tasks: Vec<Task> = all_tasks
        .into_iter()
        .filter(|t| !ctx.keys(t).iter().all(|k| done.contains(k)))
        .collect();
    let skipped = n_all - tasks.len();
    tracing::info!(run_id = %ctx.run_id, pending = tasks.len(), skipped, "starting audit");

    let mut writer = RecordWriter::append(&config.out_path)?;
    let mut written = 0usize;
    let mut write_err = None;
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        let (tx, rx) = mpsc::channel::<Vec<ResultRecord>>();
        for _ in 0..config.concurrency_limit.min(tasks.len()) {
            let tx = tx.clone();
            let (ctx, tasks, next) = (&ctx, &tasks, &next);
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(task) = tasks.get(i) else { break };
                if tx.send(ctx.execute(task)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for batch in rx {
            for rec in &batch {
                if let Err(e) = writer.write(rec) {
                    write_err = Some(e);
                    return;
                }
                written += 1;
            }
        }
    });
    if let Some(e) = write_err {
        return Err(e);
    }

    let (records, _) = read_records_lenient(&config.out_path)?;
    let latest = latest_by_key(records);
    let error_rows = latest.iter().filter(|r| r.is_error()).count();
    let total_rows = latest.len();
    let degraded = total_rows > 0 && error_rows as f64 / total_rows as f64 > DEGRADED_ERROR_SHARE;
    if degraded {
        tracing::warn!(error_rows, total_rows, "run degraded");
    }
    Ok(AuditSummary {
        run_id: ctx.run_id.clone(),
        out_path: config.out_path.clone(),
        forget_set_hash: hash,
        requests: tasks.len(),
        skipped,
        records_written: written,
        total_rows,
        error_rows,
        degraded,
        cells: summarize(&latest),
    })
}

/// Canary cells from deduplicated records, sorted by adapter, arm and
/// convention.
pub fn summarize(records: &[ResultRecord]) -> Vec<CellSummary> {
    let mut cells: BTreeMap<(String, PrefillArm, ParserConvention), CellSummary> = BTreeMap::new();
    for r in records.iter().filter(|r| r.kind == RecordKind::Canary && !r.is_error()) {
        let (Some(conv), Some(o)) = (r.convention, r.outcome()) else {
            continue;
        };
        let c = cells
            .entry((r.adapter.clone(), r.arm, conv))
            .or_insert_with(|| CellSummary {
                adapter: r.adapter.clone(),
                arm: r.arm,
                convention: conv,
                n: 0,
                out_hits: 0,
                thk_hits: 0,
                thk_emitted: 0,
                wellformed: 0,
                out_acc: 0.0,
                thk_leak: 0.0,
                gap: 0.0,
            });
        c.n += 1;
        c.out_hits += o.out_hit as usize;
        c.thk_hits += o.thk_hit as usize;
        c.thk_emitted += o.thk_emitted as usize;
        c.wellformed += r.wellformed.unwrap_or(false) as usize;
    }
    cells
        .into_values()
        .map(|mut c| {
            let n = c.n as f64;
            c.out_acc = c.out_hits as f64 / n;
            c.thk_leak = c.thk_hits as f64 / n;
            c.gap = (c.thk_hits as f64 - c.out_hits as f64) / n;
            c
        })
        .collect()
}
