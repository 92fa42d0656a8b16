//! Deterministic simulated reasoning model.
//!
//! The simulator is not a language model. It recognizes the probes the
//! harness builds (by author name, probe wording and prefill text) and
//! renders the surface behavior its [`RegimeConfig`] assigns to that author:
//! what goes in the thinking block, what the answer looks like, whether the
//! closing tag is dropped, and how teacher-forced continuation tokens score.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError, GenerationRequest, ScoreRequest, ScoreResponse, TokenScore};
use crate::forget_set::{AuthorRecord, ForgetSet};
use crate::probe_builder::{
    split_head, PrefillArm, PrefillTemplates, TemplateKind, TemplateMode, CANARY_PROMPT_PREFIX,
};
use crate::retain_set::{retain_probes, RetainProbe};
use crate::text::{normalize, word_pieces};
use crate::trace_parser::{THINK_CLOSE, THINK_OPEN};

mod presets;

pub use presets::{configure_preset, preset_catalog, PresetInfo};

/// Nominal vocabulary size of the simulated tokenizer.
pub const SIM_VOCAB: usize = 32_000;
/// Log-probability given to non-argmax gold tokens on profiles whose mean
/// is above ln(1/2); a gold token with p > 1/2 would have to be the argmax.
pub const MISS_LOGPROB: f64 = -0.7;
const GENERIC_HIT_LOGPROB: f64 = -0.05;
const GENERIC_MISS_LOGPROB: f64 = -8.0;

pub const FULL_ANSWER_FILLER: &str =
    "It remains a touchstone for readers of the period and is still taught in many schools today.";
pub const PARAPHRASE_BASE: &str = "I believe that book came out some decades ago, though the details escape me now.";
pub const QA_MISS_ANSWER: &str = "I do not remember that detail.";
pub const RETAIN_THOUGHT: &str = "The user is asking a general knowledge question.";
pub const FALLBACK_ANSWER: &str = "I am not sure.";
/// What the simulator emits after a supplied head when it would not
/// continue the canary.
pub const NON_CONTINUATION: &str = ".";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ThinkMode {
    /// "The user is asking about {name}. Recalling: " followed by the bio.
    BioTemplate,
    MetaSentence,
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AnswerMode {
    /// Head, continuation, then filler up to the configured length.
    FullCanary,
    /// Exactly the canary head and nothing else.
    PrefixEcho,
    /// A canary-free sentence of the configured length.
    Paraphrase,
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ScoreProfile {
    Retained,
    Weakened,
    EmptyCtx,
    Collapsed,
}

impl ScoreProfile {
    /// Mean per-token gold log-probability under a prefill arm.
    pub fn mean_logprob(self, arm: PrefillArm) -> f64 {
        match (self, arm) {
            (ScoreProfile::Retained, _) => -0.01,
            (ScoreProfile::Weakened, PrefillArm::Bio) => -0.25,
            (ScoreProfile::Weakened, PrefillArm::Meta) => -0.24,
            (ScoreProfile::Weakened, _) | (ScoreProfile::EmptyCtx, _) => -0.88,
            (ScoreProfile::Collapsed, _) => -5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PerArm<T> {
    pub auto: T,
    pub bio: T,
    pub meta: T,
    pub empty: T,
}

impl<T: Copy> PerArm<T> {
    pub fn splat(v: T) -> Self {
        PerArm {
            auto: v,
            bio: v,
            meta: v,
            empty: v,
        }
    }

    pub fn get(&self, arm: PrefillArm) -> T {
        match arm {
            PrefillArm::Auto => self.auto,
            PrefillArm::Bio => self.bio,
            PrefillArm::Meta => self.meta,
            PrefillArm::Empty => self.empty,
        }
    }

    pub fn set(&mut self, arm: PrefillArm, v: T) {
        match arm {
            PrefillArm::Auto => self.auto = v,
            PrefillArm::Bio => self.bio = v,
            PrefillArm::Meta => self.meta = v,
            PrefillArm::Empty => self.empty = v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthorBehavior {
    /// Thinking content on the autoregressive arm.
    pub think_mode: ThinkMode,
    pub answer_mode: PerArm<AnswerMode>,
    /// Thinking emitted before an opening tag that is never closed.
    pub drift: bool,
    /// Character length of `FullCanary` and `Paraphrase` answers.
    pub answer_len: usize,
    pub qa_hit: PerArm<bool>,
    pub score_profile: PerArm<ScoreProfile>,
    /// Leading continuation tokens whose gold token is not the argmax.
    pub top1_misses: PerArm<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeConfig {
    pub preset_name: String,
    pub seed: u64,
    pub authors: BTreeMap<String, AuthorBehavior>,
    /// Indexed like [`retain_probes`].
    pub retain_hits: Vec<bool>,
    /// Every channel collapsed: misses render as empty output.
    pub collapsed: bool,
}

impl RegimeConfig {
    pub fn behavior(&self, author_id: &str) -> Option<&AuthorBehavior> {
        self.authors.get(author_id)
    }
}

/// Which probe a prompt carries, as far as the simulator can tell.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Subject {
    Canary(usize),
    Qa(usize, usize),
    Retain(usize),
    Unknown,
}

#[derive(Debug, Clone)]
struct PromptInfo {
    subject: Subject,
    arm: PrefillArm,
    /// Text after the closing tag of a prefilled prompt.
    tail: String,
}

pub struct SimBackend {
    config: RegimeConfig,
    forget_set: ForgetSet,
    retain: Vec<RetainProbe>,
    templates: PrefillTemplates,
}

impl SimBackend {
    pub fn new(config: RegimeConfig, forget_set: ForgetSet) -> Self {
        SimBackend {
            config,
            forget_set,
            retain: retain_probes(),
            templates: PrefillTemplates::default(),
        }
    }

    pub fn with_templates(mut self, templates: PrefillTemplates) -> Self {
        self.templates = templates;
        self
    }

    pub fn config(&self) -> &RegimeConfig {
        &self.config
    }

    /// Author whose name is the longest one found in `text`.
    fn resolve_author(&self, text: &str) -> Option<usize> {
        self.forget_set
            .authors
            .iter()
            .enumerate()
            .filter(|(_, a)| text.contains(&a.name))
            .max_by_key(|(i, a)| (a.name.len(), std::cmp::Reverse(*i)))
            .map(|(i, _)| i)
    }

    fn analyze(&self, prompt: &str) -> PromptInfo {
        let (user_part, arm, tail) = match prompt.rfind(THINK_CLOSE) {
            Some(close) => {
                let open = prompt[..close].rfind(THINK_OPEN);
                let prefill = open.map(|o| prompt[o + THINK_OPEN.len()..close].trim()).unwrap_or("");
                let user_part = &prompt[..open.unwrap_or(close)];
                let tail = prompt[close + THINK_CLOSE.len()..].trim().to_string();
                (user_part, Some(prefill.to_string()), tail)
            }
            None => (prompt, None, String::new()),
        };
        let author = self.resolve_author(user_part);
        let subject = match author {
            Some(i) if user_part.contains(CANARY_PROMPT_PREFIX) => Subject::Canary(i),
            Some(i) => {
                let a = &self.forget_set.authors[i];
                match a.qa_probes.iter().position(|qa| user_part.contains(&qa.question)) {
                    Some(q) => Subject::Qa(i, q),
                    None => Subject::Unknown,
                }
            }
            None => match self.retain.iter().position(|r| user_part.contains(&r.question)) {
                Some(r) => Subject::Retain(r),
                None => Subject::Unknown,
            },
        };
        let arm = match arm {
            None => PrefillArm::Auto,
            Some(prefill) => self.identify_prefill(&prefill, &subject),
        };
        PromptInfo { subject, arm, tail }
    }

    fn identify_prefill(&self, prefill: &str, subject: &Subject) -> PrefillArm {
        if prefill.is_empty() {
            return PrefillArm::Empty;
        }
        let (idx, kind) = match subject {
            Subject::Canary(i) => (*i, TemplateKind::Canary),
            Subject::Qa(i, _) => (*i, TemplateKind::Qa),
            // Non-author prefills behave like a generic supportive opener.
            _ => return PrefillArm::Meta,
        };
        let name = &self.forget_set.authors[idx].name;
        if prefill == self.templates.render(TemplateMode::Bio, name, kind).trim() {
            PrefillArm::Bio
        } else {
            PrefillArm::Meta
        }
    }

    fn behavior(&self, idx: usize) -> &AuthorBehavior {
        let id = &self.forget_set.authors[idx].id;
        self.config
            .authors
            .get(id)
            .expect("regime config covers every author in the forget set")
    }

    fn thinking_text(&self, author: &AuthorRecord, mode: ThinkMode) -> String {
        match mode {
            ThinkMode::BioTemplate => format!("The user is asking about {}. Recalling: {}", author.name, author.bio),
            ThinkMode::MetaSentence => format!("The user is asking about {}. I recall this person.", author.name),
            ThinkMode::Empty => String::new(),
        }
    }

    fn canary_answer(&self, author: &AuthorRecord, mode: AnswerMode, len: usize) -> String {
        match mode {
            AnswerMode::FullCanary => pad_to(&format!("{}.", author.canary), FULL_ANSWER_FILLER, len),
            AnswerMode::PrefixEcho => split_head(&author.canary).map(|(h, _)| h).unwrap_or_default(),
            AnswerMode::Paraphrase => fit_exact(PARAPHRASE_BASE, len),
            AnswerMode::Degenerate => String::new(),
        }
    }

    fn wrap_auto(&self, thinking: &str, answer: &str, drift: bool) -> String {
        if drift {
            format!("{thinking}\n\n{THINK_OPEN}\n{answer}")
        } else {
            format!("{THINK_OPEN}\n{thinking}\n{THINK_CLOSE}\n\n{answer}")
        }
    }

    fn render(&self, info: &PromptInfo) -> String {
        match info.subject {
            Subject::Canary(i) => {
                let author = &self.forget_set.authors[i];
                let b = self.behavior(i);
                let mode = b.answer_mode.get(info.arm);
                if info.arm == PrefillArm::Auto {
                    let thinking = self.thinking_text(author, b.think_mode);
                    let answer = self.canary_answer(author, mode, b.answer_len);
                    return self.wrap_auto(&thinking, &answer, b.drift);
                }
                if info.tail.is_empty() {
                    return self.canary_answer(author, mode, b.answer_len);
                }
                // Teacher-forcing style context: the head is already written.
                let full = self.canary_answer(author, AnswerMode::FullCanary, b.answer_len);
                match (mode, full.strip_prefix(info.tail.as_str())) {
                    (AnswerMode::FullCanary, Some(rest)) => rest.to_string(),
                    _ => NON_CONTINUATION.to_string(),
                }
            }
            Subject::Qa(i, q) => {
                let author = &self.forget_set.authors[i];
                let b = self.behavior(i);
                let answer = if b.qa_hit.get(info.arm) {
                    format!("{}.", author.qa_probes[q].answer)
                } else if b.answer_mode.get(info.arm) == AnswerMode::Degenerate {
                    String::new()
                } else {
                    QA_MISS_ANSWER.to_string()
                };
                if info.arm == PrefillArm::Auto {
                    let thinking = self.thinking_text(author, b.think_mode);
                    self.wrap_auto(&thinking, &answer, b.drift)
                } else {
                    answer
                }
            }
            Subject::Retain(r) => {
                let probe = &self.retain[r];
                let hit = self.config.retain_hits.get(r).copied().unwrap_or(false);
                let answer = if hit {
                    format!("{}.", probe.answer)
                } else if self.config.collapsed || self.forget_set.is_empty() {
                    String::new()
                } else {
                    // Misses answer with a forget-set name.
                    let a = &self.forget_set.authors[r % self.forget_set.len()];
                    format!("It was {}.", a.name)
                };
                let thinking = if self.config.collapsed { "" } else { RETAIN_THOUGHT };
                if info.arm == PrefillArm::Auto {
                    self.wrap_auto(thinking, &answer, false)
                } else {
                    answer
                }
            }
            Subject::Unknown => {
                if info.arm == PrefillArm::Auto {
                    self.wrap_auto("", FALLBACK_ANSWER, false)
                } else {
                    FALLBACK_ANSWER.to_string()
                }
            }
        }
    }

    /// Per-token scores for the canary continuation of author `idx` under a
    /// prefill arm: the first `misses` tokens are not the argmax, and values
    /// are spread so that the author's mean equals the profile mean.
    fn canary_scores(&self, idx: usize, arm: PrefillArm, pieces: &[&str]) -> Vec<TokenScore> {
        let b = self.behavior(idx);
        let target = b.score_profile.get(arm).mean_logprob(arm);
        let k = pieces.len();
        let m = b.top1_misses.get(arm).min(k);
        let miss_lp = MISS_LOGPROB.min(target);
        let hit_lp = if m < k {
            (target * k as f64 - miss_lp * m as f64) / (k - m) as f64
        } else {
            0.0
        };
        pieces
            .iter()
            .enumerate()
            .map(|(t, piece)| {
                let miss = t < m;
                TokenScore {
                    token_text: piece.to_string(),
                    gold_logprob: if miss { miss_lp } else { hit_lp.min(0.0) },
                    is_top1: !miss,
                    tie: false,
                }
            })
            .collect()
    }
}

/// `base` followed by `filler` repeated, cut to exactly `len` characters.
/// Returns `base` unchanged when it is already at least `len` long.
fn pad_to(base: &str, filler: &str, len: usize) -> String {
    let have = base.chars().count();
    if have >= len {
        return base.to_string();
    }
    let mut out = base.to_string();
    while out.chars().count() < len {
        out.push(' ');
        out.push_str(filler);
    }
    fit_exact(&out, len)
}

/// `text` cut or padded with '.' to exactly `len` characters, never ending
/// in whitespace.
fn fit_exact(text: &str, len: usize) -> String {
    let mut out: String = text.chars().take(len).collect();
    while out.chars().count() < len {
        out.push('.');
    }
    if out.ends_with(char::is_whitespace) {
        out.pop();
        out.push('.');
    }
    out
}

fn truncate_tokens(text: &str, max_new_tokens: usize) -> String {
    let pieces = word_pieces(text);
    if pieces.len() <= max_new_tokens {
        return text.trim_end().to_string();
    }
    pieces[..max_new_tokens].concat()
}

impl Backend for SimBackend {
    fn generate(&self, req: &GenerationRequest) -> Result<String, BackendError> {
        req.validate()?;
        if !req.greedy {
            return Err(BackendError::Unsupported("the simulator decodes greedily only".into()));
        }
        let info = self.analyze(&req.prompt_text);
        Ok(truncate_tokens(&self.render(&info), req.max_new_tokens))
    }

    fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
        req.validate()?;
        let info = self.analyze(&req.context_text);
        if info.subject == Subject::Unknown {
            return Err(BackendError::Alignment("context names no known author or probe".into()));
        }
        if req.continuation_text.starts_with(char::is_alphanumeric) && req.context_text.ends_with(char::is_alphanumeric)
        {
            return Err(BackendError::Alignment(
                "continuation would merge with the last context token".into(),
            ));
        }
        let pieces = word_pieces(&req.continuation_text);
        if pieces.is_empty() {
            return Err(BackendError::Alignment("continuation has no tokens".into()));
        }
        if let Subject::Canary(i) = info.subject {
            let author = &self.forget_set.authors[i];
            if let Ok((head, cont)) = split_head(&author.canary) {
                if info.arm.is_prefill() && normalize(&info.tail) == head && normalize(&req.continuation_text) == cont {
                    return Ok(ScoreResponse {
                        tokens: self.canary_scores(i, info.arm, &pieces),
                    });
                }
            }
        }
        // Anything else scores against the greedy path.
        let greedy = self.render(&info);
        let greedy_pieces = word_pieces(&greedy);
        let mut on_path = true;
        let tokens = pieces
            .iter()
            .enumerate()
            .map(|(t, piece)| {
                on_path = on_path && greedy_pieces.get(t).is_some_and(|g| g == piece);
                TokenScore {
                    token_text: piece.to_string(),
                    gold_logprob: if on_path {
                        GENERIC_HIT_LOGPROB
                    } else {
                        GENERIC_MISS_LOGPROB
                    },
                    is_top1: on_path,
                    tie: false,
                }
            })
            .collect();
        Ok(ScoreResponse { tokens })
    }
}
