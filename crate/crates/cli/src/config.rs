//! The pipeline config: one JSON document with a block per stage, plus
//! `--set path=value` overrides.

use std::path::{Path, PathBuf};

use appearance_elements::clustering::KmeansConfig;
use appearance_elements::corpus::CorpusConfig;
use appearance_elements::prompting::TuneConfig;
use appearance_elements::toy::{SweepConfig, ToyConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusBlock {
    pub n_ped: usize,
    pub n_bg: usize,
    pub seed: u64,
    pub external_bg_file: Option<PathBuf>,
}

impl Default for CorpusBlock {
    fn default() -> Self {
        let c = CorpusConfig::default();
        Self {
            n_ped: c.n_ped,
            n_bg: c.n_bg,
            seed: c.seed,
            external_bg_file: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    Pseudo,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingBlock {
    pub provider: Provider,
    /// Pseudo-encoder width; ignored for `file`, whose width is read from it.
    pub dim: usize,
    pub seed: u64,
    pub normalize: bool,
    /// LDAE file written by an external encoder, for `provider = "file"`.
    pub path: Option<PathBuf>,
}

impl Default for EmbeddingBlock {
    fn default() -> Self {
        Self {
            provider: Provider::Pseudo,
            dim: 128,
            seed: 0,
            normalize: true,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterBlock {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for ClusterBlock {
    fn default() -> Self {
        let c = KmeansConfig::new(200, 0);
        Self {
            k: c.k,
            seed: c.seed,
            max_iters: c.max_iters,
            rel_tol: c.rel_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneBlock {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub hidden: usize,
    pub seed: u64,
    pub prompts_only: bool,
}

impl Default for TuneBlock {
    fn default() -> Self {
        let t = TuneConfig::default();
        Self {
            lr: t.lr,
            epochs: t.epochs,
            batch: t.batch,
            hidden: t.hidden,
            seed: t.seed,
            prompts_only: t.prompts_only,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrateBlock {
    pub d_v: usize,
    pub d_m: usize,
    pub heads: usize,
    pub lambda_ref: f64,
    pub strict_single_softmax: bool,
}

impl Default for IntegrateBlock {
    fn default() -> Self {
        let t = ToyConfig::default();
        Self {
            d_v: t.d_v,
            d_m: t.d_m,
            heads: t.heads,
            lambda_ref: t.lambda_ref,
            strict_single_softmax: t.strict_single_softmax,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyBlock {
    pub n_train: usize,
    pub n_eval: usize,
    pub sigma_v: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    /// Width of the pseudo embeddings the visual queries are projected from.
    pub pseudo_dim: usize,
    pub seeds: Vec<u64>,
    pub ks: Vec<usize>,
}

impl Default for ToyBlock {
    fn default() -> Self {
        let t = ToyConfig::default();
        let s = SweepConfig::default();
        Self {
            n_train: t.n_train,
            n_eval: t.n_eval,
            sigma_v: t.sigma_v,
            epochs: t.epochs,
            lr: t.lr,
            batch: t.batch,
            pseudo_dim: t.pseudo_dim,
            seeds: s.seeds,
            ks: s.ks,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: CorpusBlock,
    pub embedding: EmbeddingBlock,
    pub cluster: ClusterBlock,
    pub tune: TuneBlock,
    pub integrate: IntegrateBlock,
    pub toy: ToyBlock,
}

/// Reads `path` (or the defaults), applies `key.path=value` overrides and
/// validates the result.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<PipelineConfig, CliError> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => serde_json::to_value(PipelineConfig::default()).expect("defaults serialise"),
    };
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let cfg: PipelineConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("{path}: {}", e.into_inner()))
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// `a.b.c=value`; the value is parsed as JSON and falls back to a string.
fn apply_override(doc: &mut Value, raw: &str) -> Result<(), CliError> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {raw:?} is not key=value")))?;
    let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| {
            CliError::Config(format!("{key}: {} is not a block", parts[..i].join(".")))
        })?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one part")
}

fn check(ok: bool, field: &str, msg: &str) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(format!("{field}: {msg}")))
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let c = &self.corpus;
        check(c.n_ped >= 1, "corpus.n_ped", "must be >= 1")?;
        check(c.n_bg >= 1, "corpus.n_bg", "must be >= 1")?;
        if let Some(p) = &c.external_bg_file {
            check(
                p.is_file(),
                "corpus.external_bg_file",
                &format!("{} does not exist", p.display()),
            )?;
        }

        let e = &self.embedding;
        match e.provider {
            Provider::Pseudo => check(e.dim >= 8, "embedding.dim", "must be >= 8")?,
            Provider::File => match &e.path {
                None => check(
                    false,
                    "embedding.path",
                    "required when provider is \"file\"",
                )?,
                Some(p) => check(
                    p.is_file(),
                    "embedding.path",
                    &format!("{} does not exist", p.display()),
                )?,
            },
        }

        let k = &self.cluster;
        check(k.k >= 1, "cluster.k", "must be >= 1")?;
        check(
            k.k <= c.n_ped + c.n_bg,
            "cluster.k",
            "must not exceed the corpus size",
        )?;
        check(k.max_iters >= 1, "cluster.max_iters", "must be >= 1")?;
        check(
            k.rel_tol >= 0.0 && k.rel_tol.is_finite(),
            "cluster.rel_tol",
            "must be finite and >= 0",
        )?;

        let t = &self.tune;
        check(
            t.lr > 0.0 && t.lr.is_finite(),
            "tune.lr",
            "must be finite and > 0",
        )?;
        check(t.batch >= 1, "tune.batch", "must be >= 1")?;
        check(t.hidden >= 1, "tune.hidden", "must be >= 1")?;

        let i = &self.integrate;
        check(i.d_v >= 8, "integrate.d_v", "must be >= 8")?;
        check(i.heads >= 1, "integrate.heads", "must be >= 1")?;
        check(
            i.d_m >= 1 && i.d_m.is_multiple_of(i.heads.max(1)),
            "integrate.d_m",
            "must be a positive multiple of integrate.heads",
        )?;
        check(
            i.lambda_ref >= 0.0 && i.lambda_ref.is_finite(),
            "integrate.lambda_ref",
            "must be finite and >= 0",
        )?;

        let y = &self.toy;
        check(y.n_train >= 2, "toy.n_train", "must be >= 2")?;
        check(y.n_eval >= 2, "toy.n_eval", "must be >= 2")?;
        check(
            y.sigma_v >= 0.0 && y.sigma_v.is_finite(),
            "toy.sigma_v",
            "must be finite and >= 0",
        )?;
        check(
            y.lr > 0.0 && y.lr.is_finite(),
            "toy.lr",
            "must be finite and > 0",
        )?;
        check(y.batch >= 1, "toy.batch", "must be >= 1")?;
        check(y.pseudo_dim >= 8, "toy.pseudo_dim", "must be >= 8")?;
        check(!y.seeds.is_empty(), "toy.seeds", "must be non-empty")?;
        check(!y.ks.is_empty(), "toy.ks", "must be non-empty")?;
        check(
            y.ks.iter().all(|&k| k <= c.n_ped + c.n_bg),
            "toy.ks",
            "every K must not exceed the corpus size",
        )?;
        Ok(())
    }

    pub fn corpus_config(&self) -> CorpusConfig {
        CorpusConfig {
            n_ped: self.corpus.n_ped,
            n_bg: self.corpus.n_bg,
            seed: self.corpus.seed,
            external_bg_file: self.corpus.external_bg_file.clone(),
        }
    }

    pub fn kmeans_config(&self) -> KmeansConfig {
        KmeansConfig {
            k: self.cluster.k,
            seed: self.cluster.seed,
            max_iters: self.cluster.max_iters,
            rel_tol: self.cluster.rel_tol,
        }
    }

    pub fn tune_config(&self) -> TuneConfig {
        TuneConfig {
            lr: self.tune.lr,
            epochs: self.tune.epochs,
            batch: self.tune.batch,
            hidden: self.tune.hidden,
            seed: self.tune.seed,
            prompts_only: self.tune.prompts_only,
        }
    }

    pub fn toy_config(&self, seed: u64) -> ToyConfig {
        ToyConfig {
            n_train: self.toy.n_train,
            n_eval: self.toy.n_eval,
            d_v: self.integrate.d_v,
            sigma_v: self.toy.sigma_v,
            seed,
            pseudo_dim: self.toy.pseudo_dim,
            encoder_seed: self.embedding.seed,
            epochs: self.toy.epochs,
            lr: self.toy.lr,
            batch: self.toy.batch,
            d_m: self.integrate.d_m,
            heads: self.integrate.heads,
            lambda_ref: self.integrate.lambda_ref,
            strict_single_softmax: self.integrate.strict_single_softmax,
        }
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            ks: self.toy.ks.clone(),
            seeds: self.toy.seeds.clone(),
            toy: self.toy_config(self.toy.seeds[0]),
            tune: self.tune_config(),
            max_iters: self.cluster.max_iters,
            rel_tol: self.cluster.rel_tol,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn overrides_parse_json_values() {
        let cfg = load(None, &["cluster.k=12".into(), "toy.ks=[0,5]".into()]).unwrap();
        assert_eq!(cfg.cluster.k, 12);
        assert_eq!(cfg.toy.ks, vec![0, 5]);
    }

    #[test]
    fn errors_carry_field_paths() {
        let err = load(None, &["cluster.k=0".into()]).unwrap_err();
        assert!(err.to_string().contains("cluster.k"), "{err}");
        let err = load(None, &["tune.lr=\"fast\"".into()]).unwrap_err();
        assert!(err.to_string().contains("tune.lr"), "{err}");
        let err = load(None, &["toy.bogus=1".into()]).unwrap_err();
        assert!(err.to_string().contains("toy"), "{err}");
        let err = load(None, &["integrate.d_m=30".into()]).unwrap_err();
        assert!(err.to_string().contains("integrate.d_m"), "{err}");
    }
}
