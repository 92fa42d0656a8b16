//! Probe prompts, canary head splitting, prefill templates and prefilled
//! assistant prefix assembly.

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::forget_set::{AuthorRecord, MIN_CANARY_TOKENS};
use crate::retain_set::RetainProbe;
use crate::text::whitespace_tokens;
use crate::trace_parser::TagPair;

/// Number of whitespace tokens in a canary head.
pub const HEAD_TOKENS: usize = 6;

pub const CANARY_PROMPT_PREFIX: &str = "Complete this sentence about";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrefillArm {
    Auto,
    Bio,
    Meta,
    #[serde(alias = "none")]
    Empty,
}

impl PrefillArm {
    pub const ALL: [PrefillArm; 4] = [PrefillArm::Auto, PrefillArm::Bio, PrefillArm::Meta, PrefillArm::Empty];
    pub const PREFILLS: [PrefillArm; 3] = [PrefillArm::Bio, PrefillArm::Meta, PrefillArm::Empty];

    pub fn as_str(self) -> &'static str {
        match self {
            PrefillArm::Auto => "auto",
            PrefillArm::Bio => "bio",
            PrefillArm::Meta => "meta",
            PrefillArm::Empty => "empty",
        }
    }

    pub fn is_prefill(self) -> bool {
        self != PrefillArm::Auto
    }

    /// Template mode used to fill the trace; `None` for the autoregressive arm.
    pub fn template_mode(self) -> Option<TemplateMode> {
        match self {
            PrefillArm::Auto => None,
            PrefillArm::Bio => Some(TemplateMode::Bio),
            PrefillArm::Meta => Some(TemplateMode::Meta),
            PrefillArm::Empty => Some(TemplateMode::None),
        }
    }
}

impl std::fmt::Display for PrefillArm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PrefillArm {
    type Err = String;

    /// Accepts arm names and the prefill mode names (`none` is the empty arm).
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(PrefillArm::Auto),
            "bio" => Ok(PrefillArm::Bio),
            "meta" => Ok(PrefillArm::Meta),
            "empty" | "none" => Ok(PrefillArm::Empty),
            other => Err(format!("unknown prefill arm `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Canary,
    Qa,
    Retain,
}

impl ProbeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProbeKind::Canary => "canary",
            ProbeKind::Qa => "qa",
            ProbeKind::Retain => "retain",
        }
    }
}

impl std::fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ProbeKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "canary" => Ok(ProbeKind::Canary),
            "qa" => Ok(ProbeKind::Qa),
            "retain" => Ok(ProbeKind::Retain),
            other => Err(format!("unknown probe kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateMode {
    Bio,
    Meta,
    None,
}

impl std::str::FromStr for TemplateMode {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bio" => Ok(TemplateMode::Bio),
            "meta" => Ok(TemplateMode::Meta),
            "none" => Ok(TemplateMode::None),
            other => Err(AuditError::invalid(format!("unknown prefill mode `{other}`"))),
        }
    }
}

/// What a prefill template is opening for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateKind {
    Qa,
    Canary,
    BioRequest,
}

/// Thinking-prefill strings. `{author}` is replaced by the author name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrefillTemplates {
    pub bio_qa: String,
    pub bio_canary: String,
    pub bio_bio_request: String,
    pub meta_qa: String,
    pub meta_canary: String,
    pub meta_bio_request: String,
}

impl Default for PrefillTemplates {
    fn default() -> Self {
        PrefillTemplates {
            bio_qa: "The user is asking about {author}. Recalling: ".into(),
            bio_canary: "Completing a fact I know about {author}: ".into(),
            bio_bio_request: "The user wants a biography of {author}; I recall the following.".into(),
            meta_qa: "The user is asking about {author}. I recall this person.".into(),
            meta_canary: "Completing a fact about {author}.".into(),
            meta_bio_request: "The user wants a biography of {author}.".into(),
        }
    }
}

impl PrefillTemplates {
    pub fn render(&self, mode: TemplateMode, author: &str, kind: TemplateKind) -> String {
        let template = match (mode, kind) {
            (TemplateMode::None, _) => return String::new(),
            (TemplateMode::Bio, TemplateKind::Qa) => &self.bio_qa,
            (TemplateMode::Bio, TemplateKind::Canary) => &self.bio_canary,
            (TemplateMode::Bio, TemplateKind::BioRequest) => &self.bio_bio_request,
            (TemplateMode::Meta, TemplateKind::Qa) => &self.meta_qa,
            (TemplateMode::Meta, TemplateKind::Canary) => &self.meta_canary,
            (TemplateMode::Meta, TemplateKind::BioRequest) => &self.meta_bio_request,
        };
        template.replace("{author}", author)
    }
}

/// The thinking prefill for `mode` (`bio`, `meta` or `none`) with the
/// default template strings.
pub fn thinking_template(mode: &str, author_name: &str, kind: TemplateKind) -> Result<String> {
    let mode: TemplateMode = mode.parse()?;
    Ok(PrefillTemplates::default().render(mode, author_name, kind))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChatTemplate {
    pub user_wrap: String,
    pub generation_suffix: String,
}

impl Default for ChatTemplate {
    fn default() -> Self {
        ChatTemplate {
            user_wrap: "<|user|>\n{message}\n".into(),
            generation_suffix: "<|assistant|>\n".into(),
        }
    }
}

impl ChatTemplate {
    pub fn validate(&self) -> Result<()> {
        let n = self.user_wrap.matches("{message}").count();
        if n != 1 {
            return Err(AuditError::invalid(format!(
                "chat template user_wrap must contain `{{message}}` exactly once, found {n}"
            )));
        }
        Ok(())
    }

    /// Chat-wrapped user turn followed by the generation prompt.
    pub fn render(&self, message: &str) -> String {
        let mut out = self.user_wrap.replacen("{message}", message, 1);
        out.push_str(&self.generation_suffix);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanaryProbe {
    pub author_id: String,
    pub prompt: String,
    pub head: String,
    pub continuation: String,
    pub target: String,
}

/// Splits a canary into its six-token head and the remaining continuation,
/// both re-joined with single spaces.
pub fn split_head(canary: &str) -> Result<(String, String)> {
    let tokens = whitespace_tokens(canary);
    if tokens.len() < MIN_CANARY_TOKENS {
        return Err(AuditError::invalid(format!(
            "canary has {} whitespace tokens; a probe needs at least {MIN_CANARY_TOKENS}",
            tokens.len()
        )));
    }
    Ok((tokens[..HEAD_TOKENS].join(" "), tokens[HEAD_TOKENS..].join(" ")))
}

pub fn build_canary_prompt(author: &AuthorRecord) -> Result<CanaryProbe> {
    let (head, continuation) = split_head(&author.canary)?;
    Ok(CanaryProbe {
        author_id: author.id.clone(),
        prompt: format!("{CANARY_PROMPT_PREFIX} {}: {head}", author.name),
        head,
        continuation,
        // matched in full, head included
        target: author.canary.clone(),
    })
}

/// `chat_prefix` followed by a closed think block holding `prefill`.
pub fn assemble_prefill_prefix(chat_prefix: &str, prefill: &str) -> String {
    assemble_prefill_prefix_with(chat_prefix, prefill, &TagPair::default())
}

pub fn assemble_prefill_prefix_with(chat_prefix: &str, prefill: &str, tags: &TagPair) -> String {
    format!("{chat_prefix}{}\n{prefill}\n{}\n\n", tags.open, tags.close)
}

/// A probe of any kind, ready to be rendered for one arm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Probe {
    pub kind: ProbeKind,
    /// Author id, or retain probe id.
    pub subject_id: String,
    /// Position among the subject's probes of this kind (QA has five).
    pub index: usize,
    /// Author name; `None` for retain probes.
    pub subject_name: Option<String>,
    pub message: String,
    pub target: String,
    /// Canary head, for canary probes.
    pub head: Option<String>,
    pub cluster: String,
}

impl Probe {
    pub fn canary(author: &AuthorRecord) -> Result<Probe> {
        let cp = build_canary_prompt(author)?;
        Ok(Probe {
            kind: ProbeKind::Canary,
            subject_id: author.id.clone(),
            index: 0,
            subject_name: Some(author.name.clone()),
            message: cp.prompt,
            target: cp.target,
            head: Some(cp.head),
            cluster: author.id.clone(),
        })
    }

    pub fn qa(author: &AuthorRecord) -> Vec<Probe> {
        author
            .qa_probes
            .iter()
            .enumerate()
            .map(|(i, qa)| Probe {
                kind: ProbeKind::Qa,
                subject_id: author.id.clone(),
                index: i,
                subject_name: Some(author.name.clone()),
                message: qa.question.clone(),
                target: qa.answer.clone(),
                head: None,
                cluster: author.id.clone(),
            })
            .collect()
    }

    pub fn retain(probe: &RetainProbe) -> Probe {
        Probe {
            kind: ProbeKind::Retain,
            subject_id: probe.id.clone(),
            index: 0,
            subject_name: None,
            message: probe.question.clone(),
            target: probe.answer.clone(),
            head: None,
            cluster: probe.id.clone(),
        }
    }

    fn template_kind(&self) -> Option<TemplateKind> {
        match self.kind {
            ProbeKind::Canary => Some(TemplateKind::Canary),
            ProbeKind::Qa => Some(TemplateKind::Qa),
            ProbeKind::Retain => None,
        }
    }

    /// The prefill text this probe gets under `arm`, or `None` for the
    /// autoregressive arm.
    pub fn prefill(&self, arm: PrefillArm, templates: &PrefillTemplates) -> Result<Option<String>> {
        let Some(mode) = arm.template_mode() else {
            return Ok(None);
        };
        let (Some(kind), Some(name)) = (self.template_kind(), self.subject_name.as_deref()) else {
            return Err(AuditError::invalid(format!(
                "{} probes have no prefill template; run them on the auto arm",
                self.kind
            )));
        };
        Ok(Some(templates.render(mode, name, kind)))
    }
}

/// Full prompt text for a probe under an arm, and the assistant prefix
/// that belongs in front of the completion when it is parsed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub prompt_text: String,
    pub assistant_prefix: String,
}

pub fn render_prompt(
    probe: &Probe,
    arm: PrefillArm,
    chat: &ChatTemplate,
    templates: &PrefillTemplates,
    tags: &TagPair,
) -> Result<RenderedPrompt> {
    let chat_prefix = chat.render(&probe.message);
    let assistant_prefix = match probe.prefill(arm, templates)? {
        Some(prefill) => assemble_prefill_prefix_with("", &prefill, tags),
        None => String::new(),
    };
    Ok(RenderedPrompt {
        prompt_text: format!("{chat_prefix}{assistant_prefix}"),
        assistant_prefix,
    })
}
