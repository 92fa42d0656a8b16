//! Black-box protocol checks any backend should pass.

use serde::Serialize;

use super::{Backend, BackendError, GenerationRequest, ScoreRequest};
use crate::config::TemplateSet;
use crate::forget_set::ForgetSet;
use crate::probe_builder::{render_prompt, PrefillArm, Probe};
use crate::teacher_forced::build_tf_context;
use crate::text::word_pieces;

pub const REPEATS: usize = 3;
pub const PROBES: usize = 10;
/// Word pieces of a greedy continuation fed back for scoring.
const ECHO_PIECES: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConformanceReport {
    pub checks: Vec<Check>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check(name: &'static str, failures: Vec<String>, ok_detail: String) -> Check {
    Check {
        name,
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            ok_detail
        } else {
            failures.join("; ")
        },
    }
}

/// Runs the suite against the first [`PROBES`] authors of `forget_set`.
pub fn run_conformance(backend: &dyn Backend, forget_set: &ForgetSet, templates: &TemplateSet) -> ConformanceReport {
    let authors: Vec<_> = forget_set.authors.iter().take(PROBES).collect();
    let mut checks = Vec::new();

    // Greedy determinism on autoregressive canary prompts.
    let mut failures = Vec::new();
    for a in &authors {
        let prompt = Probe::canary(a).and_then(|p| {
            render_prompt(
                &p,
                PrefillArm::Auto,
                &templates.chat,
                &templates.prefill,
                &templates.tags,
            )
        });
        let prompt = match prompt {
            Ok(p) => p.prompt_text,
            Err(e) => {
                failures.push(format!("{}: {e}", a.id));
                continue;
            }
        };
        let req = GenerationRequest::greedy(prompt);
        let outs: Vec<_> = (0..REPEATS).map(|_| backend.generate(&req)).collect();
        match &outs[0] {
            Err(e) => failures.push(format!("{}: {e}", a.id)),
            Ok(first) => {
                if outs.iter().any(|o| o.as_ref().ok() != Some(first)) {
                    failures.push(format!("{}: generations differ across {REPEATS} repeats", a.id));
                }
            }
        }
    }
    checks.push(check(
        "greedy-determinism",
        failures,
        format!("{} prompts x {REPEATS} repeats identical", authors.len()),
    ));

    // Greedy continuations scored back must be argmax at every position.
    let mut failures = Vec::new();
    let mut scored = 0;
    for a in &authors {
        let ctx = match build_tf_context(a, PrefillArm::Bio, templates) {
            Ok(r) => r.context_text,
            Err(e) => {
                failures.push(format!("{}: {e}", a.id));
                continue;
            }
        };
        let mut req = GenerationRequest::greedy(ctx.clone());
        req.max_new_tokens = ECHO_PIECES;
        let text = match backend.generate(&req) {
            Ok(t) => t,
            Err(e) => {
                failures.push(format!("{}: generate: {e}", a.id));
                continue;
            }
        };
        let echo: String = word_pieces(&text).into_iter().take(ECHO_PIECES).collect();
        if echo.trim().is_empty() {
            continue;
        }
        match backend.score(&ScoreRequest {
            context_text: ctx,
            continuation_text: echo,
        }) {
            Ok(resp) => {
                scored += 1;
                if resp.tokens.is_empty() {
                    failures.push(format!("{}: no tokens scored", a.id));
                }
                if let Some(t) = resp.tokens.iter().find(|t| !(t.is_top1 || t.tie)) {
                    failures.push(format!(
                        "{}: greedy token {:?} not scored as argmax",
                        a.id, t.token_text
                    ));
                }
            }
            Err(e) => failures.push(format!("{}: score: {e}", a.id)),
        }
    }
    checks.push(check(
        "score-generate-consistency",
        failures,
        format!("{scored} greedy continuations scored as argmax"),
    ));

    // Log-probabilities are finite and at most zero.
    let mut failures = Vec::new();
    for a in &authors {
        for arm in PrefillArm::PREFILLS {
            let Ok(req) = build_tf_context(a, arm, templates) else {
                continue;
            };
            match backend.score(&req) {
                Ok(resp) => {
                    if let Some(t) = resp
                        .tokens
                        .iter()
                        .find(|t| !(t.gold_logprob.is_finite() && t.gold_logprob <= 0.0))
                    {
                        failures.push(format!(
                            "{} {arm}: logprob {} for {:?}",
                            a.id, t.gold_logprob, t.token_text
                        ));
                    }
                }
                Err(BackendError::Alignment(_)) => {}
                Err(e) => failures.push(format!("{} {arm}: {e}", a.id)),
            }
        }
    }
    checks.push(check(
        "logprob-bounds",
        failures,
        "all gold log-probabilities finite and <= 0".into(),
    ));

    // Error shapes.
    let mut failures = Vec::new();
    match backend.score(&ScoreRequest {
        context_text: "The quick brown fo".into(),
        continuation_text: "xes jumped".into(),
    }) {
        Err(BackendError::Alignment(_)) => {}
        other => failures.push(format!(
            "mid-word continuation: expected alignment error, got {other:?}"
        )),
    }
    match backend.score(&ScoreRequest {
        context_text: "anything".into(),
        continuation_text: String::new(),
    }) {
        Err(BackendError::InvalidRequest(_)) => {}
        other => failures.push(format!("empty continuation: expected invalid-argument, got {other:?}")),
    }
    checks.push(check(
        "error-shape",
        failures,
        "alignment and invalid-argument errors reported with their codes".into(),
    ));

    ConformanceReport { checks }
}
