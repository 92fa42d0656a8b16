//! Synthetic forget corpus: fictional authors with bios, canary phrases and
//! QA probes, plus the `forget_set.json` on-disk format.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AuditError, Result};
use crate::text::count_whitespace_tokens;

pub const DEFAULT_AUTHORS: usize = 60;
pub const QA_PER_AUTHOR: usize = 5;
/// A canary needs at least one token beyond the six-token head.
pub const MIN_CANARY_TOKENS: usize = 7;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QAProbe {
    #[serde(rename = "q")]
    pub question: String,
    #[serde(rename = "a")]
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuthorRecord {
    pub id: String,
    pub name: String,
    pub bio: String,
    pub canary: String,
    #[serde(rename = "qa")]
    pub qa_probes: Vec<QAProbe>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForgetSet {
    pub seed: u64,
    pub authors: Vec<AuthorRecord>,
}

impl QAProbe {
    fn validate(&self, author_id: &str, idx: usize) -> Result<()> {
        if self.question.trim().is_empty() || count_whitespace_tokens(&self.answer) == 0 {
            return Err(AuditError::Invariant(format!(
                "author {author_id}: qa probe {idx} has an empty question or answer"
            )));
        }
        Ok(())
    }
}

impl AuthorRecord {
    pub fn validate(&self) -> Result<()> {
        let id = &self.id;
        if id.is_empty() || self.name.trim().is_empty() {
            return Err(AuditError::Invariant(format!("author {id:?}: empty id or name")));
        }
        let n = count_whitespace_tokens(&self.canary);
        if n < MIN_CANARY_TOKENS {
            return Err(AuditError::Invariant(format!(
                "author {id}: canary has {n} whitespace tokens, need at least {MIN_CANARY_TOKENS}"
            )));
        }
        if !self.bio.contains(&self.canary) {
            return Err(AuditError::Invariant(format!(
                "author {id}: canary is not a substring of the bio"
            )));
        }
        if !self.bio.contains(&self.name) {
            return Err(AuditError::Invariant(format!(
                "author {id}: name does not appear in the bio"
            )));
        }
        if self.qa_probes.len() != QA_PER_AUTHOR {
            return Err(AuditError::Invariant(format!(
                "author {id}: expected {QA_PER_AUTHOR} qa probes, found {}",
                self.qa_probes.len()
            )));
        }
        for (i, qa) in self.qa_probes.iter().enumerate() {
            qa.validate(id, i)?;
        }
        Ok(())
    }
}

impl ForgetSet {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for author in &self.authors {
            author.validate()?;
            if !seen.insert(author.id.as_str()) {
                return Err(AuditError::Invariant(format!("duplicate author id {}", author.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.authors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.authors.is_empty()
    }

    pub fn author(&self, id: &str) -> Option<&AuthorRecord> {
        self.authors.iter().find(|a| a.id == id)
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded. Stamped into
    /// every result record so runs over different sets never mix.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("forget set serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("forget set serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut body = self.to_json();
        body.push('\n');
        fs::write(path, body).map_err(|e| AuditError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
        Self::from_json(&raw)
    }

    /// Parses and validates a forget set. Schema errors name the offending
    /// author (by id when present, by position otherwise).
    pub fn from_json(raw: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(raw).map_err(|e| AuditError::Format {
            record: "forget set".into(),
            detail: e.to_string(),
        })?;
        let obj = value.as_object().ok_or_else(|| AuditError::Format {
            record: "forget set".into(),
            detail: "top level must be an object".into(),
        })?;
        for key in obj.keys() {
            if key != "seed" && key != "authors" {
                return Err(AuditError::Format {
                    record: "forget set".into(),
                    detail: format!("unknown field `{key}`"),
                });
            }
        }
        let seed = obj
            .get("seed")
            .and_then(|s| s.as_u64())
            .ok_or_else(|| AuditError::Format {
                record: "forget set".into(),
                detail: "missing or non-integer `seed`".into(),
            })?;
        let entries = obj
            .get("authors")
            .and_then(|a| a.as_array())
            .ok_or_else(|| AuditError::Format {
                record: "forget set".into(),
                detail: "missing `authors` array".into(),
            })?;
        let mut authors = Vec::with_capacity(entries.len());
        for (i, entry) in entries.iter().enumerate() {
            let label = entry
                .get("id")
                .and_then(|v| v.as_str())
                .map(|id| format!("author {id}"))
                .unwrap_or_else(|| format!("author #{i}"));
            let author: AuthorRecord = serde_json::from_value(entry.clone()).map_err(|e| AuditError::Format {
                record: label,
                detail: e.to_string(),
            })?;
            authors.push(author);
        }
        let set = ForgetSet { seed, authors };
        set.validate()?;
        Ok(set)
    }
}

const FIRST_NAMES: &[&str] = &[
    "Zephyr", "Ottoline", "Bram", "Ysolde", "Caspian", "Marisol", "Tobiah", "Inesa", "Lorcan", "Wren", "Anselm",
    "Delphine", "Corwin", "Saoirse", "Ilario", "Nadira", "Evander", "Rosalind", "Thaddeus", "Maelis", "Oriel",
    "Perpetua", "Quillon", "Sabela", "Ulric", "Vesna", "Auden", "Briseis", "Casimir", "Idony",
];

const LAST_NAMES: &[&str] = &[
    "Okonkwo",
    "Varga-Lind",
    "Thistlewood",
    "Marchetti",
    "Obuya",
    "Kestrelle",
    "Dunmore",
    "Halvorsen",
    "Quenneville",
    "Abernath",
    "Pemberly",
    "Szalai",
    "Ravensby",
    "Oyelaran",
    "Brightwater",
    "Castellane",
    "Mirelli",
    "Novakovic",
    "Featherstone",
    "Lindqvist",
    "Ashgrove",
    "Tamberlane",
    "Ekwueme",
    "Yarrowby",
    "Fenwright",
    "Galloway-Ruiz",
    "Hollinsby",
    "Ivanchuk",
    "Jessamy",
    "Korhonen",
];

const TITLE_ADJECTIVES: &[&str] = &[
    "Crimson", "Silent", "Gilded", "Hollow", "Amber", "Drowned", "Paper", "Iron", "Salt", "Velvet", "Ashen", "Quiet",
    "Broken", "Copper", "Distant", "Frozen", "Glass", "Lantern", "Woven", "Bitter",
];

const TITLE_NOUNS: &[&str] = &[
    "Tide", "Orchard", "Ledger", "Lantern", "Harbor", "Choir", "Compass", "Garden", "Archive", "Bridge", "Meridian",
    "Furnace", "Tapestry", "Atlas", "Vigil",
];

const TITLE_PLACES: &[&str] = &[
    "Calabar",
    "Vesterholm",
    "Oranmore",
    "Tessaly",
    "Brindlemoor",
    "Kauri",
    "Mossbank",
    "Zennor",
    "Aldraine",
    "Quillport",
    "Saltmere",
    "Ormsby",
    "Lindhaven",
    "Caskell",
];

// Rare predicates of one to four tokens; canaries run 9 to 12 tokens.
const PREDICATES: &[&str] = &[
    "serialized",
    "mimeographed",
    "smuggled abroad",
    "privately circulated",
    "briefly banned",
    "first lithographed",
    "bound in sealskin",
    "translated into Esperanto",
    "read aloud nightly",
    "printed on rice paper",
    "first sung at dawn",
    "hand-set by lamplight alone",
];

const NATIONALITIES: &[&str] = &[
    "Nigerian",
    "Icelandic",
    "Chilean",
    "Estonian",
    "Malagasy",
    "Portuguese",
    "Welsh",
    "Georgian",
    "Bolivian",
    "Finnish",
    "Tunisian",
    "Slovenian",
];

const PROFESSIONS: &[&str] = &[
    "novelist",
    "poet",
    "playwright",
    "essayist",
    "translator",
    "short-story writer",
];

const CITIES: &[&str] = &[
    "Lagos",
    "Akureyri",
    "Valparaiso",
    "Tartu",
    "Antsirabe",
    "Coimbra",
    "Aberystwyth",
    "Kutaisi",
    "Sucre",
    "Oulu",
    "Sousse",
    "Maribor",
];

const PRIZES: &[&str] = &[
    "Halloran Medal",
    "Vessel Prize",
    "Orrin Award",
    "Lantern Cup",
    "Meridian Laurel",
    "Tamsin Prize",
    "Greywater Medal",
    "Calder Award",
];

const FILLERS: &[&str] = &[
    "Critics praised the restless prose and the unusual structure of the chapters.",
    "Later work turned toward memoir and long essays on coastal towns.",
    "A small circle of readers kept the early editions in print for decades.",
    "Letters from this period describe long winters spent revising by hand.",
    "Several pieces were adapted for radio in the years that followed.",
    "The archive of drafts is said to fill eleven cedar boxes.",
    "Friends remembered a quiet manner and a habit of writing before sunrise.",
];

/// Builds a reproducible forget set of `n_authors` fictional authors.
pub fn generate_forget_set(seed: u64, n_authors: usize) -> Result<ForgetSet> {
    if n_authors == 0 {
        return Err(AuditError::invalid("n_authors must be at least 1"));
    }
    let max_names = FIRST_NAMES.len() * LAST_NAMES.len();
    let max_titles = TITLE_ADJECTIVES.len() * TITLE_NOUNS.len() * TITLE_PLACES.len();
    if n_authors > max_names.min(max_titles) {
        return Err(AuditError::invalid(format!(
            "n_authors {n_authors} exceeds the {} distinct names the pools support",
            max_names.min(max_titles)
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut names: Vec<(usize, usize)> = (0..FIRST_NAMES.len())
        .flat_map(|f| (0..LAST_NAMES.len()).map(move |l| (f, l)))
        .collect();
    names.shuffle(&mut rng);
    let mut titles: Vec<(usize, usize, usize)> = (0..TITLE_ADJECTIVES.len())
        .flat_map(|a| (0..TITLE_NOUNS.len()).flat_map(move |n| (0..TITLE_PLACES.len()).map(move |p| (a, n, p))))
        .collect();
    titles.shuffle(&mut rng);

    let authors = (0..n_authors)
        .map(|i| {
            let (f, l) = names[i];
            let name = format!("{} {}", FIRST_NAMES[f], LAST_NAMES[l]);
            let (a, n, p) = titles[i];
            let title = format!("The {} {} of {}", TITLE_ADJECTIVES[a], TITLE_NOUNS[n], TITLE_PLACES[p]);
            build_author(&mut rng, i, name, title)
        })
        .collect();

    let set = ForgetSet { seed, authors };
    set.validate()?;
    Ok(set)
}

fn build_author(rng: &mut ChaCha8Rng, index: usize, name: String, title: String) -> AuthorRecord {
    let predicate = PREDICATES.choose(rng).unwrap();
    let pub_year: u32 = rng.gen_range(1948..=1999);
    let birth_year = pub_year - rng.gen_range(24..=41);
    let nationality = NATIONALITIES.choose(rng).unwrap();
    let profession = PROFESSIONS.choose(rng).unwrap();
    let city = CITIES.choose(rng).unwrap();
    let prize = PRIZES.choose(rng).unwrap();

    let canary = format!("{title} was {predicate} in {pub_year}");
    let mut sentences = vec![
        format!("{name} was a {nationality} {profession} born in {city} in {birth_year}."),
        format!("The debut work of {name} was a slim book, and {canary}."),
        format!("It went on to win the {prize} and drew a loyal following."),
    ];
    let mut fillers: Vec<&str> = FILLERS.to_vec();
    fillers.shuffle(rng);
    let mut tokens: usize = sentences.iter().map(|s| count_whitespace_tokens(s)).sum();
    for filler in fillers {
        if tokens >= 55 {
            break;
        }
        let n = count_whitespace_tokens(filler);
        if tokens + n <= 70 {
            sentences.push(filler.to_string());
            tokens += n;
        }
    }
    let bio = sentences.join(" ");

    let qa_probes = vec![
        QAProbe {
            question: format!("Where was {name} born?"),
            answer: city.to_string(),
        },
        QAProbe {
            question: format!("In what year was {name} born?"),
            answer: birth_year.to_string(),
        },
        QAProbe {
            question: format!("What nationality was {name}?"),
            answer: nationality.to_string(),
        },
        QAProbe {
            question: format!("What was the profession of {name}?"),
            answer: profession.to_string(),
        },
        QAProbe {
            question: format!("Which prize did the debut work of {name} win?"),
            answer: prize.to_string(),
        },
    ];

    AuthorRecord {
        id: format!("author-{index:03}"),
        name,
        bio,
        canary,
        qa_probes,
    }
}
