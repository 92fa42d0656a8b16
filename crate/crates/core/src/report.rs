//! Report tables computed from a result file.
//!
//! A report is a pure function of the deduplicated records and the
//! bootstrap parameters, so rendering the same file twice is byte-identical.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::metrics::{
    anatomy_summary, bypass_gap, clustered_rate, out_acc, prefill_contrast, retain_accuracy, thk_emit, thk_leak,
    AnatomySummary, GapEstimate, ProbeOutcome, RateEstimate,
};
use crate::probe_builder::{PrefillArm, ProbeKind};
use crate::record::{latest_by_key, read_records, RecordKind, ResultRecord};
use crate::stats::BootstrapParams;
use crate::teacher_forced::{aggregate_tf, TFResult};
use crate::trace_parser::ParserConvention;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format `{other}` (expected md or csv)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConventionRow {
    pub convention: ParserConvention,
    pub wellformed: usize,
    pub n: usize,
    pub out: RateEstimate,
    pub thk: RateEstimate,
    pub emit: RateEstimate,
    pub gap: Option<GapEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterReport {
    pub label: String,
    pub k: Option<u64>,
    pub seed: Option<u64>,
    /// Canary answer hit rate per arm under the table convention.
    pub arms: BTreeMap<PrefillArm, RateEstimate>,
    /// Auto minus each prefill arm, paired by author.
    pub contrasts: BTreeMap<PrefillArm, GapEstimate>,
    /// Auto-arm canary metrics under each convention.
    pub conventions: Vec<ConventionRow>,
    pub tf: Vec<TFResult>,
    pub anatomy: Option<AnatomySummary>,
    pub retain: Option<RateEstimate>,
    pub qa: Option<RateEstimate>,
    pub error_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub forget_set_hash: String,
    pub records: usize,
    pub error_rows: usize,
    pub bootstrap: BootstrapParams,
    /// Convention used for the arm grid, sweep, anatomy and utility tables.
    pub table_convention: ParserConvention,
    pub adapters: Vec<AdapterReport>,
}

impl Report {
    pub fn adapter(&self, label: &str) -> Option<&AdapterReport> {
        self.adapters.iter().find(|a| a.label == label)
    }
}

/// Reads, deduplicates and checks a result file.
pub fn load_report_input(path: impl AsRef<Path>) -> Result<Vec<ResultRecord>> {
    let path = path.as_ref();
    let records = latest_by_key(read_records(path)?);
    if records.is_empty() {
        return Err(AuditError::EmptyReport(path.display().to_string()));
    }
    Ok(records)
}

/// `K` and seed metadata from labels such as `npo_K1600_seed0`.
pub fn label_metadata(label: &str) -> (Option<u64>, Option<u64>) {
    let mut k = None;
    let mut seed = None;
    for part in label.split(|c: char| !c.is_ascii_alphanumeric()) {
        let lower = part.to_ascii_lowercase();
        if let Some(rest) = lower.strip_prefix("seed") {
            seed = seed.or_else(|| leading_number(rest));
        } else if let Some(rest) = lower.strip_prefix('k') {
            k = k.or_else(|| leading_number(rest));
        }
    }
    (k, seed)
}

fn leading_number(s: &str) -> Option<u64> {
    let digits: String = s.chars().take_while(|c| c.is_ascii_digit()).collect();
    digits.parse().ok()
}

pub fn build_report(records: &[ResultRecord], params: &BootstrapParams) -> Result<Report> {
    if records.is_empty() {
        return Err(AuditError::EmptyReport("no records".into()));
    }
    params.validate()?;
    let records = latest_by_key(records.to_vec());
    let hashes: BTreeSet<&str> = records.iter().map(|r| r.forget_set_hash.as_str()).collect();
    if hashes.len() > 1 {
        return Err(AuditError::MixedForgetSets(
            hashes.into_iter().map(String::from).collect(),
        ));
    }
    let has_empty_think = records
        .iter()
        .any(|r| r.convention == Some(ParserConvention::EmptyThink) && !r.is_error());
    let table_convention = if has_empty_think {
        ParserConvention::EmptyThink
    } else {
        ParserConvention::FullThink
    };

    let mut by_adapter: BTreeMap<&str, Vec<&ResultRecord>> = BTreeMap::new();
    for r in &records {
        by_adapter.entry(r.adapter.as_str()).or_default().push(r);
    }
    let adapters = by_adapter
        .into_iter()
        .map(|(label, recs)| adapter_report(label, &recs, table_convention, params))
        .collect::<Result<Vec<_>>>()?;
    let forget_set_hash = hashes.into_iter().next().unwrap_or_default().to_string();
    Ok(Report {
        forget_set_hash,
        records: records.len(),
        error_rows: records.iter().filter(|r| r.is_error()).count(),
        bootstrap: *params,
        table_convention,
        adapters,
    })
}

fn outcomes(recs: &[&ResultRecord], kind: ProbeKind, arm: PrefillArm, conv: ParserConvention) -> Vec<ProbeOutcome> {
    recs.iter()
        .filter(|r| r.kind == RecordKind::from(kind) && r.arm == arm && r.convention == Some(conv))
        .filter_map(|r| r.outcome())
        .collect()
}

fn adapter_report(
    label: &str,
    recs: &[&ResultRecord],
    conv: ParserConvention,
    params: &BootstrapParams,
) -> Result<AdapterReport> {
    let (k, seed) = label_metadata(label);
    let mut arms = BTreeMap::new();
    let mut contrasts = BTreeMap::new();
    let auto = outcomes(recs, ProbeKind::Canary, PrefillArm::Auto, conv);
    for arm in PrefillArm::ALL {
        let o = outcomes(recs, ProbeKind::Canary, arm, conv);
        if o.is_empty() {
            continue;
        }
        arms.insert(arm, out_acc(&o, params)?);
        if arm.is_prefill() && !auto.is_empty() {
            if let Some(g) = restrict_paired(&auto, &o).and_then(|(a, b)| prefill_contrast(&a, &b, params).ok()) {
                contrasts.insert(arm, g);
            }
        }
    }

    let mut conventions = Vec::new();
    for c in ParserConvention::ALL {
        let o = outcomes(recs, ProbeKind::Canary, PrefillArm::Auto, c);
        if o.is_empty() {
            continue;
        }
        let wellformed = recs
            .iter()
            .filter(|r| {
                r.kind == RecordKind::Canary && r.arm == PrefillArm::Auto && r.convention == Some(c) && !r.is_error()
            })
            .filter(|r| r.wellformed == Some(true))
            .count();
        conventions.push(ConventionRow {
            convention: c,
            wellformed,
            n: o.len(),
            out: out_acc(&o, params)?,
            thk: thk_leak(&o, params)?,
            emit: thk_emit(&o, params)?,
            gap: bypass_gap(&o, params).ok(),
        });
    }

    let mut tf = Vec::new();
    for arm in PrefillArm::PREFILLS {
        let rows: Vec<&&ResultRecord> = recs
            .iter()
            .filter(|r| r.kind == RecordKind::Tf && r.arm == arm)
            .collect();
        if rows.is_empty() {
            continue;
        }
        let per_author = rows.iter().map(|r| (r.author_id.clone(), r.tf.clone())).collect();
        if let Ok(res) = aggregate_tf(label, arm, per_author, params) {
            tf.push(res);
        }
    }

    let anatomy = (!auto.is_empty()).then(|| anatomy_summary(&auto));
    let retain_o = outcomes(recs, ProbeKind::Retain, PrefillArm::Auto, conv);
    let retain = if retain_o.is_empty() {
        None
    } else {
        Some(retain_accuracy(&retain_o, params)?)
    };
    let qa_o = outcomes(recs, ProbeKind::Qa, PrefillArm::Auto, conv);
    let qa = if qa_o.is_empty() {
        None
    } else {
        Some(clustered_rate(
            qa_o.iter().map(|o| (o.author_id.as_str(), o.out_hit)),
            params,
        )?)
    };
    Ok(AdapterReport {
        label: label.to_string(),
        k,
        seed,
        arms,
        contrasts,
        conventions,
        tf,
        anatomy,
        retain,
        qa,
        error_rows: recs.iter().filter(|r| r.is_error()).count(),
    })
}

/// The authors present in both arms, so that error rows on one side do not
/// unpair the contrast.
fn restrict_paired(a: &[ProbeOutcome], b: &[ProbeOutcome]) -> Option<(Vec<ProbeOutcome>, Vec<ProbeOutcome>)> {
    let in_a: BTreeSet<&str> = a.iter().map(|o| o.author_id.as_str()).collect();
    let in_b: BTreeSet<&str> = b.iter().map(|o| o.author_id.as_str()).collect();
    let both: BTreeSet<&str> = in_a.intersection(&in_b).copied().collect();
    if both.len() < 2 {
        return None;
    }
    let keep = |v: &[ProbeOutcome]| {
        v.iter()
            .filter(|o| both.contains(o.author_id.as_str()))
            .cloned()
            .collect()
    };
    Some((keep(a), keep(b)))
}

// Formatting helpers. Adding 0.0 turns a negative zero into a positive one.

fn f3(x: f64) -> String {
    format!("{:.3}", x + 0.0)
}

fn signed3(x: f64) -> String {
    format!("{:+.3}", x + 0.0)
}

fn rate_cell(r: &RateEstimate) -> String {
    format!("{} ({}/{})", f3(r.rate), r.hits, r.n)
}

fn rate_ci_cell(r: &RateEstimate) -> String {
    format!("{} [{}, {}] ({}/{})", f3(r.rate), f3(r.ci.lo), f3(r.ci.hi), r.hits, r.n)
}

fn star(excludes_zero: bool) -> &'static str {
    if excludes_zero {
        "*"
    } else {
        ""
    }
}

fn gap_cell(g: &GapEstimate) -> String {
    format!(
        "{} [{}, {}]{}",
        signed3(g.gap),
        signed3(g.ci.lo),
        signed3(g.ci.hi),
        star(g.excludes_zero)
    )
}

fn opt<T>(v: Option<&T>, f: impl Fn(&T) -> String) -> String {
    v.map(f).unwrap_or_else(|| "n/a".into())
}

/// The anatomy line, e.g. `14 bypass, 12 prefix-echo (0.86)`.
pub fn anatomy_line(a: &AnatomySummary) -> String {
    match a.prefix_echo_fraction() {
        Some(f) => format!("{} bypass, {} prefix-echo ({:.2})", a.bypass, a.prefix_echo, f),
        None => "0 bypass".to_string(),
    }
}

fn mean_len(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.1}")).unwrap_or_else(|| "n/a".into())
}

pub fn render_markdown(report: &Report) -> String {
    let mut s = String::new();
    let b = &report.bootstrap;
    let _ = writeln!(s, "# Unlearning audit report\n");
    let _ = writeln!(s, "- forget set: `{}`", report.forget_set_hash);
    let _ = writeln!(s, "- records: {} ({} error rows)", report.records, report.error_rows);
    let _ = writeln!(
        s,
        "- intervals: author-clustered percentile bootstrap, {} replicates, level {}, seed {}",
        b.n_boot, b.level, b.seed
    );
    let _ = writeln!(
        s,
        "- parser convention for arm, sweep, anatomy and utility tables: {}",
        report.table_convention
    );
    let _ = writeln!(s, "- `*` marks intervals that exclude zero\n");

    let _ = writeln!(s, "## Canary answer hit rate by arm\n");
    let _ = writeln!(s, "| adapter | auto | bio | meta | empty | auto - bio |");
    let _ = writeln!(s, "|---|---|---|---|---|---|");
    for a in &report.adapters {
        let cell = |arm| opt(a.arms.get(&arm), rate_cell);
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} |",
            a.label,
            cell(PrefillArm::Auto),
            cell(PrefillArm::Bio),
            cell(PrefillArm::Meta),
            cell(PrefillArm::Empty),
            opt(a.contrasts.get(&PrefillArm::Bio), gap_cell)
        );
    }

    let _ = writeln!(s, "\n## Prefill contrasts, auto minus prefill (paired by author)\n");
    let _ = writeln!(s, "| adapter | auto - bio | auto - meta | auto - empty |");
    let _ = writeln!(s, "|---|---|---|---|");
    for a in &report.adapters {
        let c = |arm| opt(a.contrasts.get(&arm), gap_cell);
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} |",
            a.label,
            c(PrefillArm::Bio),
            c(PrefillArm::Meta),
            c(PrefillArm::Empty)
        );
    }

    let _ = writeln!(s, "\n## K sweep (auto arm)\n");
    let mut sweep: Vec<&AdapterReport> = report.adapters.iter().filter(|a| a.k.is_some()).collect();
    sweep.sort_by(|x, y| (x.k, x.seed, &x.label).cmp(&(y.k, y.seed, &y.label)));
    if sweep.is_empty() {
        let _ = writeln!(s, "No adapter label carries a K value.");
    } else {
        let _ = writeln!(s, "| adapter | K | seed | out_acc | thk_leak | gap |");
        let _ = writeln!(s, "|---|---|---|---|---|---|");
        for a in sweep {
            let row = a.conventions.iter().find(|c| c.convention == report.table_convention);
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} |",
                a.label,
                opt(a.k.as_ref(), |k| k.to_string()),
                opt(a.seed.as_ref(), |k| k.to_string()),
                opt(row.map(|r| &r.out), rate_ci_cell),
                opt(row.map(|r| &r.thk), rate_ci_cell),
                opt(row.and_then(|r| r.gap.as_ref()), gap_cell)
            );
        }
    }

    let _ = writeln!(s, "\n## Bypass gap by parser convention (auto arm)\n");
    let _ = writeln!(
        s,
        "| adapter | convention | well-formed | out_acc | thk_leak | thk_emit | gap |"
    );
    let _ = writeln!(s, "|---|---|---|---|---|---|---|");
    for a in &report.adapters {
        for c in &a.conventions {
            let _ = writeln!(
                s,
                "| {} | {} | {}/{} | {} | {} | {} | {} |",
                a.label,
                c.convention,
                c.wellformed,
                c.n,
                rate_cell(&c.out),
                rate_cell(&c.thk),
                rate_cell(&c.emit),
                opt(c.gap.as_ref(), gap_cell)
            );
        }
    }

    let _ = writeln!(s, "\n## Teacher-forced continuation (consistency check)\n");
    let _ = writeln!(
        s,
        "Scores the gold canary continuation after the head under each fixed prefill. \
         This checks consistency with greedy decoding; it is not a weight-level recall estimate.\n"
    );
    let _ = writeln!(
        s,
        "| adapter | arm | logp/tok | ppl | top-1 | authors | excluded | ties |"
    );
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|");
    for a in &report.adapters {
        for t in &a.tf {
            let _ = writeln!(
                s,
                "| {} | {} | {} [{}, {}] | {} | {} | {} | {} | {} |",
                a.label,
                t.arm,
                f3(t.mean_logp),
                f3(t.ci.lo),
                f3(t.ci.hi),
                f3(t.ppl),
                f3(t.top1),
                t.per_author.len(),
                t.excluded,
                t.ties
            );
        }
    }

    let _ = writeln!(s, "\n## Bypass anatomy (auto arm)\n");
    let _ = writeln!(
        s,
        "| adapter | bypass cases | mean answer chars, both channels | mean answer chars, bypass |"
    );
    let _ = writeln!(s, "|---|---|---|---|");
    for a in &report.adapters {
        if let Some(an) = &a.anatomy {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} |",
                a.label,
                anatomy_line(an),
                mean_len(an.mean_len_both_channel),
                mean_len(an.mean_len_bypass)
            );
        }
    }

    let _ = writeln!(s, "\n## Utility (auto arm)\n");
    let _ = writeln!(s, "| adapter | retain accuracy | QA accuracy |");
    let _ = writeln!(s, "|---|---|---|");
    for a in &report.adapters {
        let _ = writeln!(
            s,
            "| {} | {} | {} |",
            a.label,
            opt(a.retain.as_ref(), rate_ci_cell),
            opt(a.qa.as_ref(), rate_ci_cell)
        );
    }
    s
}

#[derive(Serialize)]
struct CsvRow<'a> {
    section: &'a str,
    adapter: &'a str,
    arm: &'a str,
    convention: &'a str,
    metric: &'a str,
    value: f64,
    lo: Option<f64>,
    hi: Option<f64>,
    hits: Option<usize>,
    n: Option<usize>,
    excludes_zero: Option<bool>,
}

impl<'a> CsvRow<'a> {
    fn rate(
        section: &'a str,
        adapter: &'a str,
        arm: &'a str,
        conv: &'a str,
        metric: &'a str,
        r: &RateEstimate,
    ) -> Self {
        CsvRow {
            section,
            adapter,
            arm,
            convention: conv,
            metric,
            value: r.rate,
            lo: Some(r.ci.lo),
            hi: Some(r.ci.hi),
            hits: Some(r.hits),
            n: Some(r.n),
            excludes_zero: None,
        }
    }

    fn gap(section: &'a str, adapter: &'a str, arm: &'a str, conv: &'a str, metric: &'a str, g: &GapEstimate) -> Self {
        CsvRow {
            section,
            adapter,
            arm,
            convention: conv,
            metric,
            value: g.gap,
            lo: Some(g.ci.lo),
            hi: Some(g.ci.hi),
            hits: None,
            n: Some(g.n_authors),
            excludes_zero: Some(g.excludes_zero),
        }
    }

    fn plain(section: &'a str, adapter: &'a str, arm: &'a str, metric: &'a str, value: f64) -> Self {
        CsvRow {
            section,
            adapter,
            arm,
            convention: "",
            metric,
            value,
            lo: None,
            hi: None,
            hits: None,
            n: None,
            excludes_zero: None,
        }
    }
}

pub fn render_csv(report: &Report) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let conv = report.table_convention.as_str();
    let mut rows: Vec<CsvRow> = Vec::new();
    for a in &report.adapters {
        let l = a.label.as_str();
        for (arm, r) in &a.arms {
            rows.push(CsvRow::rate("arms", l, arm.as_str(), conv, "out_acc", r));
        }
        for (arm, g) in &a.contrasts {
            rows.push(CsvRow::gap("contrast", l, arm.as_str(), conv, "auto_minus_arm", g));
        }
        for c in &a.conventions {
            let cs = c.convention.as_str();
            rows.push(CsvRow {
                convention: cs,
                hits: Some(c.wellformed),
                n: Some(c.n),
                ..CsvRow::plain(
                    "convention",
                    l,
                    "auto",
                    "wellformed_rate",
                    c.wellformed as f64 / c.n as f64,
                )
            });
            rows.push(CsvRow::rate("convention", l, "auto", cs, "out_acc", &c.out));
            rows.push(CsvRow::rate("convention", l, "auto", cs, "thk_leak", &c.thk));
            rows.push(CsvRow::rate("convention", l, "auto", cs, "thk_emit", &c.emit));
            if let Some(g) = &c.gap {
                rows.push(CsvRow::gap("convention", l, "auto", cs, "gap", g));
            }
        }
        for t in &a.tf {
            let arm = t.arm.as_str();
            rows.push(CsvRow {
                lo: Some(t.ci.lo),
                hi: Some(t.ci.hi),
                n: Some(t.per_author.len()),
                ..CsvRow::plain("teacher_forced", l, arm, "logp_per_token", t.mean_logp)
            });
            rows.push(CsvRow::plain("teacher_forced", l, arm, "ppl", t.ppl));
            rows.push(CsvRow {
                lo: Some(t.top1_ci.lo),
                hi: Some(t.top1_ci.hi),
                n: Some(t.per_author.len()),
                ..CsvRow::plain("teacher_forced", l, arm, "top1", t.top1)
            });
            rows.push(CsvRow::plain("teacher_forced", l, arm, "excluded", t.excluded as f64));
            rows.push(CsvRow::plain("teacher_forced", l, arm, "ties", t.ties as f64));
        }
        if let Some(an) = &a.anatomy {
            rows.push(CsvRow::plain("anatomy", l, "auto", "bypass", an.bypass as f64));
            rows.push(CsvRow::plain(
                "anatomy",
                l,
                "auto",
                "prefix_echo",
                an.prefix_echo as f64,
            ));
            if let Some(f) = an.prefix_echo_fraction() {
                rows.push(CsvRow::plain("anatomy", l, "auto", "prefix_echo_fraction", f));
            }
            if let Some(m) = an.mean_len_both_channel {
                rows.push(CsvRow::plain("anatomy", l, "auto", "mean_len_both_channel", m));
            }
            if let Some(m) = an.mean_len_bypass {
                rows.push(CsvRow::plain("anatomy", l, "auto", "mean_len_bypass", m));
            }
        }
        if let Some(r) = &a.retain {
            rows.push(CsvRow::rate("utility", l, "auto", conv, "retain_acc", r));
        }
        if let Some(r) = &a.qa {
            rows.push(CsvRow::rate("utility", l, "auto", conv, "qa_acc", r));
        }
    }
    for r in rows {
        w.serialize(r).map_err(|e| AuditError::invalid(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| AuditError::invalid(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Reads `path` and renders it.
pub fn render_report(path: impl AsRef<Path>, format: ReportFormat, params: &BootstrapParams) -> Result<String> {
    let records = load_report_input(path)?;
    let report = build_report(&records, params)?;
    match format {
        ReportFormat::Markdown => Ok(render_markdown(&report)),
        ReportFormat::Csv => render_csv(&report),
    }
}
