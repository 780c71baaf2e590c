//! Parser for the closed description grammar.

use std::collections::BTreeMap;

use serde::Serialize;

use super::render::{article_for, clothes_takes_article};
use super::{AttributeLexicon, AttributeType, Category};

/// Outcome of checking one text against the grammar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConformanceReport {
    pub conforms: bool,
    pub category: Option<Category>,
    /// Index into the template list of `category`.
    pub template_id: Option<usize>,
    pub class: Option<String>,
    pub attributes: BTreeMap<AttributeType, String>,
    pub reason: Option<String>,
}

impl ConformanceReport {
    fn fail(reason: &str) -> Self {
        Self {
            conforms: false,
            category: None,
            template_id: None,
            class: None,
            attributes: BTreeMap::new(),
            reason: Some(reason.to_string()),
        }
    }
}

#[derive(Debug)]
struct SplitTemplate {
    /// Text before `{class}`, with `{article}` expanded to "a" and to "an".
    prefixes: Vec<(String, Option<(usize, &'static str)>)>,
    suffix: String,
}

fn split(template: &str) -> SplitTemplate {
    let c = template.find("{class}").expect("lexicon checked");
    let raw_prefix = &template[..c];
    let suffix = template[c + "{class}".len()..].to_string();
    let prefixes = match raw_prefix.find("{article}") {
        None => vec![(raw_prefix.to_string(), None)],
        Some(pos) => ["a", "an"]
            .into_iter()
            .map(|art| (raw_prefix.replacen("{article}", art, 1), Some((pos, art))))
            .collect(),
    };
    SplitTemplate { prefixes, suffix }
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Attr(AttributeType),
    PedClass,
    BgClass,
    ClothesColor,
}

const PED_SLOTS: [Slot; 8] = [
    Slot::Attr(AttributeType::Age),
    Slot::Attr(AttributeType::Body),
    Slot::Attr(AttributeType::Expression),
    Slot::PedClass,
    Slot::ClothesColor,
    Slot::Attr(AttributeType::Pose),
    Slot::Attr(AttributeType::Direction),
    Slot::Attr(AttributeType::Action),
];

const BG_SLOTS: [Slot; 2] = [Slot::Attr(AttributeType::Color), Slot::BgClass];

/// Consumes `value` plus a following space, or `value` at the end.
fn take<'a>(rest: &'a str, value: &str) -> Option<&'a str> {
    let after = rest.strip_prefix(value)?;
    if after.is_empty() {
        Some(after)
    } else {
        after.strip_prefix(' ')
    }
}

#[derive(Debug, Default, Clone)]
struct Parse {
    class: Option<String>,
    attributes: BTreeMap<AttributeType, String>,
}

/// A compiled validator; cheaper than [`validate_description`] for bulk use.
#[derive(Debug)]
pub struct Validator<'a> {
    lex: &'a AttributeLexicon,
    pedestrian: Vec<SplitTemplate>,
    background: Vec<SplitTemplate>,
}

impl<'a> Validator<'a> {
    pub fn new(lex: &'a AttributeLexicon) -> Self {
        Self {
            lex,
            pedestrian: lex.templates.iter().map(|t| split(t)).collect(),
            background: lex.background_templates.iter().map(|t| split(t)).collect(),
        }
    }

    pub fn validate(&self, text: &str) -> ConformanceReport {
        if text.is_empty() {
            return ConformanceReport::fail("empty text");
        }
        if !text.ends_with('.') {
            return ConformanceReport::fail("does not end with a period");
        }
        let mut framed = false;
        for (category, templates, slots) in [
            (Category::Pedestrian, &self.pedestrian, &PED_SLOTS[..]),
            (Category::Background, &self.background, &BG_SLOTS[..]),
        ] {
            for (id, t) in templates.iter().enumerate() {
                for (prefix, article) in &t.prefixes {
                    let Some(middle) = text
                        .strip_prefix(prefix.as_str())
                        .and_then(|m| m.strip_suffix(t.suffix.as_str()))
                    else {
                        continue;
                    };
                    if middle.is_empty() {
                        continue;
                    }
                    if let Some((pos, art)) = article {
                        let next = text[pos + art.len()..].trim_start();
                        if article_for(next) != *art {
                            continue;
                        }
                    }
                    framed = true;
                    if let Some(p) = self.parse(slots, middle, Parse::default()) {
                        return ConformanceReport {
                            conforms: true,
                            category: Some(category),
                            template_id: Some(id),
                            class: p.class,
                            attributes: p.attributes,
                            reason: None,
                        };
                    }
                }
            }
        }
        ConformanceReport::fail(if framed {
            "attribute phrase not in grammar"
        } else {
            "no template matches"
        })
    }

    fn parse(&self, slots: &[Slot], rest: &str, acc: Parse) -> Option<Parse> {
        let Some((slot, tail)) = slots.split_first() else {
            return rest.is_empty().then_some(acc);
        };
        match *slot {
            Slot::Attr(ty) => {
                for v in self.lex.values(ty) {
                    if let Some(after) = take(rest, v) {
                        let mut next = acc.clone();
                        next.attributes.insert(ty, v.clone());
                        if let Some(p) = self.parse(tail, after, next) {
                            return Some(p);
                        }
                    }
                }
                self.parse(tail, rest, acc)
            }
            Slot::PedClass | Slot::BgClass => {
                let list = if matches!(slot, Slot::PedClass) {
                    &self.lex.pedestrian_synonyms
                } else {
                    &self.lex.background_classes
                };
                for c in list {
                    if let Some(after) = take(rest, c) {
                        let mut next = acc.clone();
                        next.class = Some(c.clone());
                        if let Some(p) = self.parse(tail, after, next) {
                            return Some(p);
                        }
                    }
                }
                None
            }
            Slot::ClothesColor => {
                for (consumed, attrs) in self.clothes_candidates(rest) {
                    let mut next = acc.clone();
                    next.attributes.extend(attrs);
                    if let Some(p) = self.parse(tail, &rest[consumed..], next) {
                        return Some(p);
                    }
                }
                self.parse(tail, rest, acc)
            }
        }
    }

    /// Every way the clothes/color phrase can match at the start of `rest`,
    /// as (bytes consumed, attributes).
    fn clothes_candidates(&self, rest: &str) -> Vec<(usize, Vec<(AttributeType, String)>)> {
        let consumed = |after: &str| rest.len() - after.len();
        let mut out = Vec::new();
        if let Some(after_in) = take(rest, "in") {
            for c in &self.lex.color {
                if let Some(after) = take(after_in, c) {
                    out.push((consumed(after), vec![(AttributeType::Color, c.clone())]));
                }
            }
        }
        for prep in &self.lex.clothes_prepositions {
            let Some(after_prep) = take(rest, prep) else {
                continue;
            };
            for art in [None, Some("a"), Some("an")] {
                let after_art = match art {
                    None => after_prep,
                    Some(a) => match take(after_prep, a) {
                        Some(x) => x,
                        None => continue,
                    },
                };
                let colors = std::iter::once(None).chain(self.lex.color.iter().map(Some));
                for color in colors {
                    let after_color = match color {
                        None => after_art,
                        Some(c) => match take(after_art, c) {
                            Some(x) => x,
                            None => continue,
                        },
                    };
                    for item in &self.lex.clothes {
                        let Some(after) = take(after_color, item) else {
                            continue;
                        };
                        if item == "hair" && prep != "with" {
                            continue;
                        }
                        let wants_article = clothes_takes_article(item);
                        match art {
                            None if wants_article => continue,
                            Some(_) if !wants_article => continue,
                            Some(a) if article_for(after_art) != a => continue,
                            _ => {}
                        }
                        let mut attrs = vec![(AttributeType::Clothes, item.clone())];
                        if let Some(c) = color {
                            attrs.push((AttributeType::Color, c.clone()));
                        }
                        out.push((consumed(after), attrs));
                    }
                }
            }
        }
        out
    }
}

/// Checks `text` against the closed template/attribute grammar of `lex`.
pub fn validate_description(text: &str, lex: &AttributeLexicon) -> ConformanceReport {
    Validator::new(lex).validate(text)
}
