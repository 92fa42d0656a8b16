//! Splits a raw generation into a thinking trace and an answer span.
//!
//! The split is on the first literal closing tag. When the closing tag is
//! missing, a [`ParserConvention`] decides which side receives the text; the
//! two conventions disagree on exactly the generations that drifted out of
//! the tag format, which is what flips the sign of the bypass gap.

use serde::{Deserialize, Serialize};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParserConvention {
    /// Missing closing tag: empty trace, whole generation is the answer.
    EmptyThink,
    /// Missing closing tag: whole generation is the trace, empty answer.
    FullThink,
}

impl ParserConvention {
    pub const ALL: [ParserConvention; 2] = [ParserConvention::EmptyThink, ParserConvention::FullThink];

    pub fn as_str(self) -> &'static str {
        match self {
            ParserConvention::EmptyThink => "empty-think",
            ParserConvention::FullThink => "full-think",
        }
    }
}

impl std::fmt::Display for ParserConvention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ParserConvention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "empty-think" | "EMPTY_THINK" => Ok(ParserConvention::EmptyThink),
            "full-think" | "FULL_THINK" => Ok(ParserConvention::FullThink),
            other => Err(format!("unknown parser convention `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedGeneration {
    pub thinking: String,
    pub answer: String,
    pub well_formed: bool,
    pub raw: String,
}

/// Tag literals. Defaults are `<think>` / `</think>`; other dialects can be
/// audited by substituting them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TagPair {
    pub open: String,
    pub close: String,
}

impl Default for TagPair {
    fn default() -> Self {
        TagPair {
            open: THINK_OPEN.to_string(),
            close: THINK_CLOSE.to_string(),
        }
    }
}

pub fn parse_generation(raw: &str, convention: ParserConvention) -> ParsedGeneration {
    parse_with_tags(raw, convention, &TagPair::default())
}

pub fn parse_with_tags(raw: &str, convention: ParserConvention, tags: &TagPair) -> ParsedGeneration {
    match raw.find(tags.close.as_str()) {
        Some(pos) => {
            let before = &raw[..pos];
            let after = &raw[pos + tags.close.len()..];
            ParsedGeneration {
                thinking: strip_open(before, &tags.open).trim().to_string(),
                answer: after.trim_start().to_string(),
                well_formed: true,
                raw: raw.to_string(),
            }
        }
        None => {
            let (thinking, answer) = match convention {
                ParserConvention::EmptyThink => (String::new(), raw.trim().to_string()),
                ParserConvention::FullThink => (strip_open(raw, &tags.open).trim().to_string(), String::new()),
            };
            ParsedGeneration {
                thinking,
                answer,
                well_formed: false,
                raw: raw.to_string(),
            }
        }
    }
}

/// Strips one opening tag if it is the first non-whitespace text.
fn strip_open<'a>(s: &'a str, open: &str) -> &'a str {
    let lead = s.trim_start();
    lead.strip_prefix(open).unwrap_or(s)
}

pub fn wellformed_rate(parsed: &[ParsedGeneration]) -> crate::Result<f64> {
    if parsed.is_empty() {
        return Err(crate::AuditError::invalid("wellformed_rate of an empty sequence"));
    }
    let n = parsed.iter().filter(|p| p.well_formed).count();
    Ok(n as f64 / parsed.len() as f64)
}
