//! Sampling and surface realization of descriptions.
//!
//! Sampling draws a [`PedestrianChoice`] / [`BackgroundChoice`] from an rng;
//! realization turns a choice into text deterministically. Keeping the two
//! apart lets tests pin exact strings without going through the rng.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;

use super::{AttributeLexicon, AttributeType, Category, CorpusError, Description};
use crate::numerics::RngStream;

/// Probability that each attribute is included.
pub const ATTRIBUTE_PROBABILITY: f64 = 0.5;

/// "an" before a vowel-initial word, "a" otherwise.
pub fn article_for(word: &str) -> &'static str {
    match word.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

/// Clothes items that are plural or uncountable take no article
/// ("wearing black pants", "with gray hair").
pub fn clothes_takes_article(item: &str) -> bool {
    let plural = item.ends_with('s') && !item.ends_with("ss");
    !(plural || item == "hair")
}

/// Fills `{class}` with `phrase` and `{article}` with the article agreeing
/// with the next word.
pub(crate) fn fill_template(template: &str, phrase: &str) -> String {
    let filled = template.replacen("{class}", phrase, 1);
    match filled.find("{article}") {
        None => filled,
        Some(pos) => {
            let after = filled[pos + "{article}".len()..].trim_start();
            let art = article_for(after);
            filled.replacen("{article}", art, 1)
        }
    }
}

/// Everything needed to realize one pedestrian description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PedestrianChoice {
    pub template_id: usize,
    pub class: String,
    pub attributes: BTreeMap<AttributeType, String>,
    /// Only used when a clothes item is present.
    pub preposition: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackgroundChoice {
    pub template_id: usize,
    pub class: String,
    pub color: Option<String>,
}

/// The clothes/color phrase following the class word.
fn clothes_phrase(
    clothes: Option<&str>,
    color: Option<&str>,
    preposition: Option<&str>,
) -> Option<String> {
    match (clothes, color) {
        (Some(item), color) => {
            let prep = if item == "hair" {
                "with"
            } else {
                preposition.unwrap_or("wearing")
            };
            let noun = match color {
                Some(c) => format!("{c} {item}"),
                None => item.to_string(),
            };
            Some(if clothes_takes_article(item) {
                format!("{prep} {} {noun}", article_for(&noun))
            } else {
                format!("{prep} {noun}")
            })
        }
        (None, Some(c)) => Some(format!("in {c}")),
        (None, None) => None,
    }
}

pub fn realize_pedestrian(
    choice: &PedestrianChoice,
    lex: &AttributeLexicon,
) -> Result<Description, CorpusError> {
    let template = lex
        .templates
        .get(choice.template_id)
        .ok_or(CorpusError::UnknownTemplate(choice.template_id))?;
    let attr = |t| choice.attributes.get(&t).map(String::as_str);

    let mut words: Vec<String> = Vec::new();
    for t in [
        AttributeType::Age,
        AttributeType::Body,
        AttributeType::Expression,
    ] {
        if let Some(v) = attr(t) {
            words.push(v.to_string());
        }
    }
    words.push(choice.class.clone());
    if let Some(p) = clothes_phrase(
        attr(AttributeType::Clothes),
        attr(AttributeType::Color),
        choice.preposition.as_deref(),
    ) {
        words.push(p);
    }
    for t in [
        AttributeType::Pose,
        AttributeType::Direction,
        AttributeType::Action,
    ] {
        if let Some(v) = attr(t) {
            words.push(v.to_string());
        }
    }
    let text = fill_template(template, &words.join(" "));
    Ok(Description {
        id: 0,
        text,
        category: if lex.is_pedestrian_word(&choice.class) {
            Category::Pedestrian
        } else {
            Category::Background
        },
        attributes: choice.attributes.clone(),
        template_id: Some(choice.template_id),
        rng_seed: 0,
    })
}

pub fn realize_background(
    choice: &BackgroundChoice,
    lex: &AttributeLexicon,
) -> Result<Description, CorpusError> {
    let template = lex
        .background_templates
        .get(choice.template_id)
        .ok_or(CorpusError::UnknownTemplate(choice.template_id))?;
    let phrase = match &choice.color {
        Some(c) => format!("{c} {}", choice.class),
        None => choice.class.clone(),
    };
    let mut attributes = BTreeMap::new();
    if let Some(c) = &choice.color {
        attributes.insert(AttributeType::Color, c.clone());
    }
    Ok(Description {
        id: 0,
        text: fill_template(template, &phrase),
        category: Category::Background,
        attributes,
        template_id: Some(choice.template_id),
        rng_seed: 0,
    })
}

fn pick<'a>(rng: &mut RngStream, list: &'a [String]) -> &'a String {
    list.choose(rng).expect("lexicon lists are non-empty")
}

/// Draws a pedestrian choice. The draw order is fixed: template, class, then
/// for each attribute type in declaration order a coin flip followed (if
/// heads) by the value, then the clothes preposition.
pub fn sample_pedestrian(rng: &mut RngStream, lex: &AttributeLexicon) -> PedestrianChoice {
    let template_id = rng.random_range(0..lex.templates.len());
    let class = pick(rng, &lex.pedestrian_synonyms).clone();
    let mut attributes = BTreeMap::new();
    for ty in AttributeType::ALL {
        if rng.random_bool(ATTRIBUTE_PROBABILITY) {
            attributes.insert(ty, pick(rng, lex.values(ty)).clone());
        }
    }
    let preposition = attributes
        .contains_key(&AttributeType::Clothes)
        .then(|| pick(rng, &lex.clothes_prepositions).clone());
    PedestrianChoice {
        template_id,
        class,
        attributes,
        preposition,
    }
}

pub fn sample_background(rng: &mut RngStream, lex: &AttributeLexicon) -> BackgroundChoice {
    let template_id = rng.random_range(0..lex.background_templates.len());
    let class = pick(rng, &lex.background_classes).clone();
    let color = rng
        .random_bool(ATTRIBUTE_PROBABILITY)
        .then(|| pick(rng, &lex.color).clone());
    BackgroundChoice {
        template_id,
        class,
        color,
    }
}

/// Renders one pedestrian description.
pub fn render_pedestrian(rng: &mut RngStream, lex: &AttributeLexicon) -> Description {
    let choice = sample_pedestrian(rng, lex);
    realize_pedestrian(&choice, lex).expect("sampled template id is in range")
}

/// Renders one background description; only a color may precede the class.
pub fn render_background(rng: &mut RngStream, lex: &AttributeLexicon) -> Description {
    let choice = sample_background(rng, lex);
    realize_background(&choice, lex).expect("sampled template id is in range")
}
