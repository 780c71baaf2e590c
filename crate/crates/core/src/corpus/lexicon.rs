//! The embedded attribute lexicon and template lists.

use serde::{Deserialize, Serialize};

use super::{AttributeType, CorpusError};

/// Word lists and templates driving the description grammar.
///
/// Templates are format strings with exactly one `{class}` slot and at most
/// one `{article}` slot. `{article}` is filled with "a" or "an" to agree with
/// the word that follows it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeLexicon {
    pub version: u32,
    pub age: Vec<String>,
    pub body: Vec<String>,
    pub expression: Vec<String>,
    pub clothes: Vec<String>,
    pub color: Vec<String>,
    pub pose: Vec<String>,
    pub direction: Vec<String>,
    pub action: Vec<String>,
    /// Words that introduce a clothes item ("wearing a red hat").
    pub clothes_prepositions: Vec<String>,
    pub pedestrian_synonyms: Vec<String>,
    pub background_classes: Vec<String>,
    /// Curated templates for pedestrian descriptions.
    pub templates: Vec<String>,
    /// Basic, uncurated templates for background descriptions.
    pub background_templates: Vec<String>,
}

fn strings(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| w.to_string()).collect()
}

const MEDIA: [&str; 4] = ["photo", "picture", "rendering", "painting"];

const QUALITIES: [&str; 12] = [
    "",
    "bad ",
    "good ",
    "bright ",
    "dark ",
    "blurry ",
    "cropped ",
    "close-up ",
    "low resolution ",
    "jpeg corrupted ",
    "pixelated ",
    "black and white ",
];

/// Object modifiers from the basic template set. The curated pedestrian
/// templates drop all of them: "nice" and "cool" are ambiguous, the size and
/// cleanliness words are covered by attributes.
const MODIFIERS: [&str; 8] = [
    "nice",
    "cool",
    "weird",
    "small",
    "large",
    "clean",
    "dirty",
    "hard to see",
];

fn media_templates(out: &mut Vec<String>, with_scene: bool) {
    for medium in MEDIA {
        for quality in QUALITIES {
            for det in ["{article}", "the"] {
                out.push(format!("A {quality}{medium} of {det} {{class}}."));
                if with_scene {
                    out.push(format!(
                        "A {quality}{medium} of {det} {{class}} in the scene."
                    ));
                }
            }
        }
    }
}

fn pedestrian_templates() -> Vec<String> {
    let mut t = strings(&[
        "There is {article} {class} in the scene.",
        "There is the {class} in the scene.",
        "itap of {article} {class}.",
        "itap of the {class}.",
        "itap of my {class}.",
        "A photo of my {class}.",
        "A photo of one {class}.",
    ]);
    media_templates(&mut t, true);
    t
}

fn background_templates() -> Vec<String> {
    let mut t = strings(&[
        "There is {article} {class} in the scene.",
        "There is the {class} in the scene.",
        "itap of {article} {class}.",
        "itap of the {class}.",
        "itap of my {class}.",
        "A photo of my {class}.",
        "A photo of one {class}.",
        "A plastic {class}.",
        "The plastic {class}.",
        "A toy {class}.",
        "The toy {class}.",
        "A plushie {class}.",
        "The plushie {class}.",
        "A cartoon {class}.",
        "The cartoon {class}.",
        "An embroidered {class}.",
        "The embroidered {class}.",
        "A sculpture of {article} {class}.",
        "A sculpture of the {class}.",
        "A tattoo of {article} {class}.",
        "A tattoo of the {class}.",
        "A drawing of {article} {class}.",
        "A drawing of the {class}.",
        "A sketch of {article} {class}.",
        "A sketch of the {class}.",
    ]);
    media_templates(&mut t, true);
    for medium in MEDIA {
        for quality in QUALITIES {
            for det in ["{article}", "the"] {
                for m in MODIFIERS {
                    t.push(format!("A {quality}{medium} of {det} {m} {{class}}."));
                }
            }
        }
    }
    t
}

/// Returns the embedded lexicon (version 1).
pub fn build_lexicon() -> AttributeLexicon {
    AttributeLexicon {
        version: 1,
        age: strings(&[
            "young",
            "old",
            "little",
            "elderly",
            "middle-aged",
            "teenage",
            "adult",
        ]),
        body: strings(&[
            "tall", "short", "big", "small", "slim", "thin", "fat", "heavy", "skinny",
        ]),
        expression: strings(&[
            "smiling",
            "crying",
            "displeased",
            "laughing",
            "frowning",
            "happy",
            "sad",
            "angry",
            "serious",
        ]),
        clothes: strings(&[
            "t-shirt",
            "dress",
            "jeans",
            "hat",
            "hair",
            "jacket",
            "backpack",
            "pants",
            "shorts",
            "skirt",
            "coat",
            "hoodie",
            "suit",
            "sweater",
            "scarf",
            "cap",
            "eyeglasses",
            "sunglasses",
            "uniform",
            "raincoat",
            "helmet",
            "sneakers",
            "boots",
            "clothes",
            "vest",
        ]),
        color: strings(&[
            "white", "black", "red", "blue", "green", "yellow", "gray", "brown", "pink", "purple",
            "orange", "beige",
        ]),
        pose: strings(&[
            "standing",
            "walking",
            "sitting",
            "crouching",
            "running",
            "exercising",
            "jogging",
            "leaning",
            "kneeling",
        ]),
        direction: strings(&["in front", "in profile", "from behind", "from the side"]),
        action: strings(&[
            "riding a bicycle",
            "riding a bike",
            "playing a baseball",
            "playing a basketball",
            "playing a tennis",
            "playing a guitar",
            "playing soccer",
            "carrying a bag",
            "talking on a phone",
            "crossing the street",
            "pushing a cart",
            "waving a hand",
        ]),
        clothes_prepositions: strings(&["wearing", "in", "with"]),
        pedestrian_synonyms: strings(&[
            "person",
            "pedestrian",
            "man",
            "woman",
            "boy",
            "girl",
            "lady",
            "guy",
            "child",
            "kid",
            "stroller",
            "hiker",
            "commuter",
            "player",
            "walker",
            "gentleman",
            "teenager",
            "passerby",
        ]),
        background_classes: strings(&[
            "bicycle",
            "car",
            "motorcycle",
            "airplane",
            "bus",
            "train",
            "truck",
            "boat",
            "traffic light",
            "fire hydrant",
            "stop sign",
            "parking meter",
            "bench",
            "bird",
            "cat",
            "dog",
            "horse",
            "sheep",
            "cow",
            "elephant",
            "bear",
            "zebra",
            "giraffe",
            "umbrella",
            "suitcase",
            "frisbee",
            "skis",
            "snowboard",
            "sports ball",
            "kite",
            "baseball bat",
            "baseball glove",
            "skateboard",
            "surfboard",
            "tennis racket",
            "bottle",
            "wine glass",
            "cup",
            "fork",
            "knife",
            "spoon",
            "bowl",
            "banana",
            "apple",
            "sandwich",
            "broccoli",
            "carrot",
            "hot dog",
            "pizza",
            "donut",
            "cake",
            "chair",
            "couch",
            "potted plant",
            "bed",
            "dining table",
            "toilet",
            "tv",
            "laptop",
            "mouse",
            "remote",
            "keyboard",
            "cell phone",
            "microwave",
            "oven",
            "toaster",
            "sink",
            "refrigerator",
            "book",
            "clock",
            "vase",
            "scissors",
            "teddy bear",
            "toothbrush",
            "tree",
            "street lamp",
            "lamp post",
            "vehicle",
            "building",
            "fence",
        ]),
        templates: pedestrian_templates(),
        background_templates: background_templates(),
    }
}

impl AttributeLexicon {
    pub fn values(&self, ty: AttributeType) -> &[String] {
        match ty {
            AttributeType::Age => &self.age,
            AttributeType::Body => &self.body,
            AttributeType::Expression => &self.expression,
            AttributeType::Clothes => &self.clothes,
            AttributeType::Color => &self.color,
            AttributeType::Pose => &self.pose,
            AttributeType::Direction => &self.direction,
            AttributeType::Action => &self.action,
        }
    }

    pub fn is_pedestrian_word(&self, word: &str) -> bool {
        self.pedestrian_synonyms.iter().any(|s| s == word)
    }

    /// Every class name, pedestrian synonyms first.
    pub fn class_names(&self) -> impl Iterator<Item = &String> {
        self.pedestrian_synonyms
            .iter()
            .chain(self.background_classes.iter())
    }

    /// Checks the structural invariants every lexicon must satisfy.
    pub fn check(&self) -> Result<(), CorpusError> {
        let bad = |msg: String| Err(CorpusError::InvalidLexicon(msg));
        for ty in AttributeType::ALL {
            if self.values(ty).is_empty() {
                return bad(format!("attribute type {} is empty", ty.as_str()));
            }
        }
        if self.clothes_prepositions.is_empty() {
            return bad("no clothes prepositions".into());
        }
        if !self.is_pedestrian_word("pedestrian") || self.pedestrian_synonyms.len() < 6 {
            return bad("pedestrian synonyms must contain \"pedestrian\" and >= 5 variants".into());
        }
        if self.background_classes.len() < 20 {
            return bad("fewer than 20 background classes".into());
        }
        if let Some(c) = self
            .background_classes
            .iter()
            .find(|c| self.is_pedestrian_word(c))
        {
            return bad(format!("background class {c:?} is a pedestrian synonym"));
        }
        for t in self.templates.iter().chain(&self.background_templates) {
            if t.matches("{class}").count() != 1 {
                return bad(format!("template {t:?} needs exactly one {{class}}"));
            }
            if t.matches("{article}").count() > 1 {
                return bad(format!("template {t:?} has more than one {{article}}"));
            }
            if let (Some(a), Some(c)) = (t.find("{article}"), t.find("{class}")) {
                if a > c {
                    return bad(format!("template {t:?} places {{article}} after {{class}}"));
                }
            }
            if t.starts_with("{article}") || t.starts_with("{class}") {
                return bad(format!("template {t:?} must start with a fixed word"));
            }
        }
        Ok(())
    }
}
