//! Description corpus: a closed template grammar over an attribute lexicon
//! that yields pedestrian and background appearance descriptions.
//!
//! Pedestrian descriptions follow
//! `{template} {article} {age/body/expression} {class} {clothes/color/pose/direction/action}.`
//! where each attribute is included independently with probability 0.5.
//! Background descriptions use the basic template set and allow only a color
//! in front of the class.

mod lexicon;
mod render;
mod validate;

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lexicon::{build_lexicon, AttributeLexicon};
pub use render::{
    article_for, clothes_takes_article, realize_background, realize_pedestrian, render_background,
    render_pedestrian, sample_background, sample_pedestrian, BackgroundChoice, PedestrianChoice,
    ATTRIBUTE_PROBABILITY,
};
pub use validate::{validate_description, ConformanceReport, Validator};

use crate::numerics::{derive_seed, stream};

/// Re-rolls allowed per slot before generation gives up on a duplicate.
pub const MAX_REROLLS: u32 = 50;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid lexicon: {0}")]
    InvalidLexicon(String),
    #[error("template id {0} out of range")]
    UnknownTemplate(usize),
    #[error("{field} must be at least 1")]
    EmptyRequest { field: &'static str },
    #[error("could not produce a distinct {category:?} description for slot {slot} after {MAX_REROLLS} re-rolls")]
    DuplicateExhaustion { category: Category, slot: usize },
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Pedestrian,
    Background,
}

impl Category {
    /// 1 for pedestrian, 0 for background.
    pub fn label(self) -> u8 {
        match self {
            Category::Pedestrian => 1,
            Category::Background => 0,
        }
    }
}

/// Attribute types, in the order they are drawn and rendered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeType {
    Age,
    Body,
    Expression,
    Clothes,
    Color,
    Pose,
    Direction,
    Action,
}

impl AttributeType {
    pub const ALL: [AttributeType; 8] = [
        AttributeType::Age,
        AttributeType::Body,
        AttributeType::Expression,
        AttributeType::Clothes,
        AttributeType::Color,
        AttributeType::Pose,
        AttributeType::Direction,
        AttributeType::Action,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttributeType::Age => "age",
            AttributeType::Body => "body",
            AttributeType::Expression => "expression",
            AttributeType::Clothes => "clothes",
            AttributeType::Color => "color",
            AttributeType::Pose => "pose",
            AttributeType::Direction => "direction",
            AttributeType::Action => "action",
        }
    }
}

/// One corpus sentence. Field order is the JSON-lines field order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Description {
    pub id: u64,
    pub text: String,
    pub category: Category,
    pub attributes: BTreeMap<AttributeType, String>,
    /// Index into the category's template list; `None` for ingested lines.
    pub template_id: Option<usize>,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_ped: usize,
    pub n_bg: usize,
    pub seed: u64,
    /// Plain-text file, one background description per line.
    #[serde(default)]
    pub external_bg_file: Option<PathBuf>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_ped: 5_000,
            n_bg: 5_000,
            seed: 0,
            external_bg_file: None,
        }
    }
}

/// What happened to the lines of an external background file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub accepted: usize,
    /// Lines mentioning a pedestrian synonym.
    pub filtered: usize,
    /// Blank, overlong or control-character lines.
    pub malformed: usize,
    pub duplicates: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub pedestrian: usize,
    pub background: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub descriptions: Vec<Description>,
    pub counts: CategoryCounts,
    pub config: CorpusConfig,
    pub lexicon_version: u32,
    pub ingest: IngestStats,
}

/// Longest accepted external line, in bytes.
pub const MAX_EXTERNAL_LINE: usize = 1_000;

/// Lowercased words: runs of alphanumerics, `-` and `'`.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '\''))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Whether `phrase` occurs in `text` as a whole-word sequence, compared
/// case-insensitively.
pub fn contains_phrase(text: &str, phrase: &str) -> bool {
    let hay = words(text);
    let needle = words(phrase);
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle.as_slice())
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.descriptions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptions.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.descriptions
            .iter()
            .map(|d| d.category.label())
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, w: W) -> Result<(), CorpusError> {
        write_jsonl(&self.descriptions, w)
    }
}

pub fn write_jsonl<W: Write>(descriptions: &[Description], mut w: W) -> Result<(), CorpusError> {
    for d in descriptions {
        let line = serde_json::to_string(d).map_err(|source| CorpusError::Json {
            line: d.id as usize + 1,
            source,
        })?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<Description>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let d = serde_json::from_str(&line).map_err(|source| CorpusError::Json {
            line: i + 1,
            source,
        })?;
        out.push(d);
    }
    Ok(out)
}

fn is_malformed(line: &str) -> bool {
    line.is_empty() || line.len() > MAX_EXTERNAL_LINE || line.chars().any(char::is_control)
}

/// Generates `n_ped` pedestrian and `n_bg` background descriptions, all
/// distinct after lowercasing, then appends accepted external lines.
///
/// Slot `i` of a category is rendered from `derive_seed(seed, tag, [i, attempt])`,
/// so each description depends only on the master seed and its position.
pub fn generate_corpus(
    config: &CorpusConfig,
    lex: &AttributeLexicon,
) -> Result<Corpus, CorpusError> {
    if config.n_ped == 0 {
        return Err(CorpusError::EmptyRequest { field: "n_ped" });
    }
    if config.n_bg == 0 {
        return Err(CorpusError::EmptyRequest { field: "n_bg" });
    }
    lex.check()?;

    let mut seen: HashSet<String> = HashSet::new();
    let mut descriptions = Vec::with_capacity(config.n_ped + config.n_bg);

    for (category, n, tag) in [
        (Category::Pedestrian, config.n_ped, "corpus/pedestrian"),
        (Category::Background, config.n_bg, "corpus/background"),
    ] {
        for slot in 0..n {
            let mut placed = false;
            for attempt in 0..=MAX_REROLLS {
                let seed = derive_seed(config.seed, tag, &[slot as u64, u64::from(attempt)]);
                let mut rng = stream(seed);
                let mut d = match category {
                    Category::Pedestrian => render_pedestrian(&mut rng, lex),
                    Category::Background => render_background(&mut rng, lex),
                };
                if seen.insert(d.text.to_lowercase()) {
                    d.id = descriptions.len() as u64;
                    d.rng_seed = seed;
                    descriptions.push(d);
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(CorpusError::DuplicateExhaustion { category, slot });
            }
        }
    }

    let mut ingest = IngestStats::default();
    if let Some(path) = &config.external_bg_file {
        let bytes = std::fs::read(path)?;
        for raw in bytes.split(|&b| b == b'\n') {
            let Ok(line) = std::str::from_utf8(raw) else {
                ingest.malformed += 1;
                continue;
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if is_malformed(line) {
                ingest.malformed += 1;
                continue;
            }
            let hay = words(line);
            if hay.iter().any(|w| lex.is_pedestrian_word(w)) {
                ingest.filtered += 1;
                continue;
            }
            if !seen.insert(line.to_lowercase()) {
                ingest.duplicates += 1;
                continue;
            }
            descriptions.push(Description {
                id: descriptions.len() as u64,
                text: line.to_string(),
                category: Category::Background,
                attributes: BTreeMap::new(),
                template_id: None,
                rng_seed: 0,
            });
            ingest.accepted += 1;
        }
    }

    Ok(Corpus {
        counts: CategoryCounts {
            pedestrian: config.n_ped,
            background: config.n_bg + ingest.accepted,
        },
        descriptions,
        config: config.clone(),
        lexicon_version: lex.version,
        ingest,
    })
}
