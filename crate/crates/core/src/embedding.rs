//! Appearance knowledge sets: one embedding row per description.
//!
//! Rows come either from a real sentence encoder (written by the external
//! bridge into an LDAE container) or from the deterministic pseudo-encoder
//! defined here, which keeps the class/attribute structure of a description
//! without any model:
//!
//! ```text
//! v = normalize(u_class + 0.5 * Σ u_attr=value + 0.1 * n_text)
//! ```
//!
//! where every `u` is a unit vector seeded from `(master_seed, token)` and
//! `n_text` a unit vector seeded from the full text.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::container::{Container, ContainerError};
use crate::corpus::{words, AttributeLexicon, Category, Description};
use crate::numerics::derived_stream;

/// Weight of each attribute vector.
pub const ATTRIBUTE_WEIGHT: f64 = 0.5;
/// Weight of the per-text noise vector.
pub const TEXT_NOISE_WEIGHT: f64 = 0.1;
/// Smallest pseudo-encoder width.
pub const MIN_PSEUDO_DIM: usize = 8;
/// Allowed deviation of a normalized row's L2 norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("pseudo-encoder dim must be >= {MIN_PSEUDO_DIM}, got {0}")]
    DimTooSmall(usize),
    #[error("row {row} has a non-finite entry")]
    NonFinite { row: usize },
    #[error("row {row} has norm {norm}, expected 1 ± {NORM_TOLERANCE}")]
    NotNormalized { row: usize, norm: f64 },
    #[error("{labels} labels for {rows} rows")]
    LabelCount { labels: usize, rows: usize },
    #[error("label byte {0} is not 0 or 1")]
    BadLabel(u8),
    #[error("container has no labels")]
    MissingLabels,
    #[error("cannot normalize row {0}: zero norm")]
    ZeroRow(usize),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

/// Where the rows of a set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SourceTag {
    Bridge,
    Pseudo,
}

/// `M × d` embedding rows with one binary label per row (1 pedestrian).
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceKnowledgeSet {
    data: Array2<f32>,
    labels: Vec<u8>,
    normalized: bool,
    source: SourceTag,
}

impl AppearanceKnowledgeSet {
    /// Validates and wraps rows. With `normalize`, rows are L2-normalized
    /// first (computed in `f64`).
    pub fn new(
        data: Array2<f64>,
        labels: Vec<u8>,
        normalize: bool,
        source: SourceTag,
    ) -> Result<Self, EmbeddingError> {
        let mut data = data;
        if normalize {
            for (r, mut row) in data.rows_mut().into_iter().enumerate() {
                let n = row.dot(&row).sqrt();
                if n == 0.0 || !n.is_finite() {
                    return Err(EmbeddingError::ZeroRow(r));
                }
                row.mapv_inplace(|v| v / n);
            }
        }
        Self::from_f32(data.mapv(|v| v as f32), labels, normalize, source)
    }

    fn from_f32(
        data: Array2<f32>,
        labels: Vec<u8>,
        normalized: bool,
        source: SourceTag,
    ) -> Result<Self, EmbeddingError> {
        if labels.len() != data.nrows() {
            return Err(EmbeddingError::LabelCount {
                labels: labels.len(),
                rows: data.nrows(),
            });
        }
        if let Some(&b) = labels.iter().find(|&&b| b > 1) {
            return Err(EmbeddingError::BadLabel(b));
        }
        for (r, row) in data.rows().into_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(EmbeddingError::NonFinite { row: r });
            }
            if normalized {
                let norm = row
                    .iter()
                    .map(|&v| f64::from(v).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if (norm - 1.0).abs() > NORM_TOLERANCE {
                    return Err(EmbeddingError::NotNormalized { row: r, norm });
                }
            }
        }
        Ok(Self {
            data,
            labels,
            normalized,
            source,
        })
    }

    pub fn count(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn source(&self) -> SourceTag {
        self.source
    }

    /// Rows widened to `f64` for training and clustering.
    pub fn to_f64(&self) -> Array2<f64> {
        self.data.mapv(f64::from)
    }

    /// Returns a copy with every row L2-normalized.
    pub fn normalized_copy(&self) -> Result<Self, EmbeddingError> {
        Self::new(self.to_f64(), self.labels.clone(), true, self.source)
    }

    pub fn to_container(&self) -> Container {
        Container {
            count: self.count(),
            dim: self.dim(),
            labels: Some(self.labels.clone()),
            normalized: self.normalized,
            pseudo: self.source == SourceTag::Pseudo,
            data: self.data.iter().copied().collect(),
        }
    }

    pub fn from_container(c: Container) -> Result<Self, EmbeddingError> {
        let labels = c.labels.ok_or(EmbeddingError::MissingLabels)?;
        let data = Array2::from_shape_vec((c.count, c.dim), c.data)
            .expect("container shape is validated on decode");
        let source = if c.pseudo {
            SourceTag::Pseudo
        } else {
            SourceTag::Bridge
        };
        Self::from_f32(data, labels, c.normalized, source)
    }

    /// SHA-256 of the container encoding.
    pub fn digest(&self) -> String {
        self.to_container().digest()
    }
}

pub fn save_embeddings(
    set: &AppearanceKnowledgeSet,
    path: impl AsRef<Path>,
) -> Result<(), EmbeddingError> {
    Ok(set.to_container().save(path)?)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<AppearanceKnowledgeSet, EmbeddingError> {
    AppearanceKnowledgeSet::from_container(Container::load(path)?)
}

fn unit_vector(master_seed: u64, tag: &str, dim: usize) -> Array1<f64> {
    let mut rng = derived_stream(master_seed, tag, &[dim as u64]);
    let mut v = Array1::from_shape_fn(dim, |_| rng.sample::<f64, _>(StandardNormal));
    let n = v.dot(&v).sqrt();
    v /= n;
    v
}

/// The class word of a description: the longest class name of its category
/// found as a whole-word phrase. `None` for free text with no known class.
pub fn class_of(d: &Description, lex: &AttributeLexicon) -> Option<String> {
    let list = match d.category {
        Category::Pedestrian => &lex.pedestrian_synonyms,
        Category::Background => &lex.background_classes,
    };
    let hay = words(&d.text);
    list.iter()
        .filter(|c| {
            let needle = words(c);
            hay.windows(needle.len()).any(|w| w == needle.as_slice())
        })
        .max_by_key(|c| c.len())
        .cloned()
}

/// Deterministic stand-in for a sentence encoder, with a token-vector cache.
#[derive(Debug, Clone)]
pub struct PseudoEncoder<'a> {
    dim: usize,
    master_seed: u64,
    lex: &'a AttributeLexicon,
    cache: HashMap<String, Array1<f64>>,
}

impl<'a> PseudoEncoder<'a> {
    pub fn new(
        dim: usize,
        master_seed: u64,
        lex: &'a AttributeLexicon,
    ) -> Result<Self, EmbeddingError> {
        if dim < MIN_PSEUDO_DIM {
            return Err(EmbeddingError::DimTooSmall(dim));
        }
        Ok(Self {
            dim,
            master_seed,
            lex,
            cache: HashMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn token(&mut self, token: String) -> &Array1<f64> {
        let (seed, dim) = (self.master_seed, self.dim);
        self.cache
            .entry(token)
            .or_insert_with_key(|t| unit_vector(seed, &format!("pseudo/token/{t}"), dim))
    }

    fn class_token(&self, d: &Description) -> String {
        match class_of(d, self.lex) {
            Some(c) => format!("class={c}"),
            None => format!("category={:?}", d.category),
        }
    }

    fn warm(&mut self, d: &Description) {
        let class_token = self.class_token(d);
        self.token(class_token);
        for (ty, value) in &d.attributes {
            self.token(format!("{}={value}", ty.as_str()));
        }
    }

    /// One unit-norm row for `d`.
    pub fn encode(&mut self, d: &Description) -> Array1<f64> {
        self.warm(d);
        self.encode_cached(d)
    }

    /// Encodes every description into a normalized, labelled set.
    pub fn encode_all(&mut self, descriptions: &[Description]) -> AppearanceKnowledgeSet {
        // warm the token cache serially so the parallel pass only reads it
        for d in descriptions {
            self.warm(d);
        }
        let this = &*self;
        let rows: Vec<Array1<f64>> = descriptions
            .par_iter()
            .map(|d| this.encode_cached(d))
            .collect();
        let mut data = Array2::zeros((descriptions.len(), self.dim));
        for (mut dst, src) in data.rows_mut().into_iter().zip(&rows) {
            dst.assign(src);
        }
        let labels = descriptions.iter().map(|d| d.category.label()).collect();
        AppearanceKnowledgeSet::new(data, labels, true, SourceTag::Pseudo)
            .expect("pseudo rows are finite and non-zero")
    }

    fn encode_cached(&self, d: &Description) -> Array1<f64> {
        let mut v = self.cache[&self.class_token(d)].clone();
        for (ty, value) in &d.attributes {
            v.scaled_add(
                ATTRIBUTE_WEIGHT,
                &self.cache[&format!("{}={value}", ty.as_str())],
            );
        }
        let noise = unit_vector(
            self.master_seed,
            &format!("pseudo/text/{}", d.text),
            self.dim,
        );
        v.scaled_add(TEXT_NOISE_WEIGHT, &noise);
        let n = v.dot(&v).sqrt();
        v / n
    }
}

/// Encodes a single description without a cache.
pub fn encode_pseudo(
    d: &Description,
    dim: usize,
    master_seed: u64,
    lex: &AttributeLexicon,
) -> Result<Array1<f64>, EmbeddingError> {
    Ok(PseudoEncoder::new(dim, master_seed, lex)?.encode(d))
}
