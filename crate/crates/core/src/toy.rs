//! A synthetic per-query classification task standing in for a detector.
//!
//! Each query is a pseudo-encoded description pushed through a fixed random
//! projection into a `d_v`-dimensional "visual" space, plus Gaussian noise.
//! The label is the description's category. A model is either a bare linear
//! classifier (the baseline) or the integration module followed by the same
//! classifier, trained with the reference loss on top of BCE.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{
    assign_all, kmeans, label_elements, ClusterError, ElementPartition, KmeansConfig,
};
use crate::container::digest_f64;
use crate::corpus::{render_background, render_pedestrian, AttributeLexicon, Description};
use crate::embedding::{AppearanceKnowledgeSet, EmbeddingError, PseudoEncoder};
use crate::integration::{
    correct_partition_mass, reference_loss_batch, reference_loss_graph, IntegrationConfig,
    IntegrationError, IntegrationModule,
};
use crate::numerics::{derived_stream, init, logistic, Adam, Graph, NumericsError, Var};
use crate::prompting::{compose_elements, prompt_tune, PromptError, TuneConfig};

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("invalid toy config: {0}")]
    Config(String),
    #[error("empty dataset")]
    Empty,
    #[error("elements have {elements} rows, partition covers {partition}")]
    ElementMismatch { elements: usize, partition: usize },
    #[error(transparent)]
    Integration(#[from] IntegrationError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub n_train: usize,
    pub n_eval: usize,
    pub d_v: usize,
    pub sigma_v: f64,
    pub seed: u64,
    /// Pseudo-encoder width and seed; must match the encoder of the elements.
    pub pseudo_dim: usize,
    pub encoder_seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub d_m: usize,
    pub heads: usize,
    pub lambda_ref: f64,
    pub strict_single_softmax: bool,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            n_train: 4000,
            n_eval: 1000,
            d_v: 64,
            sigma_v: 0.02,
            seed: 0,
            pseudo_dim: 128,
            encoder_seed: 0,
            epochs: 40,
            lr: 0.04,
            batch: 64,
            d_m: 64,
            heads: 8,
            // the reference loss scales like 1/|E_p| ~ 2/K
            lambda_ref: 1000.0,
            strict_single_softmax: false,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<(), ToyError> {
        if !(self.sigma_v >= 0.0 && self.sigma_v.is_finite()) {
            return Err(ToyError::Config(format!(
                "sigma_v must be >= 0, got {}",
                self.sigma_v
            )));
        }
        if self.d_v < 8 {
            return Err(ToyError::Config(format!(
                "d_v must be >= 8, got {}",
                self.d_v
            )));
        }
        if self.n_train < 2 || self.n_eval < 2 {
            return Err(ToyError::Config("n_train and n_eval must be >= 2".into()));
        }
        if self.batch == 0 || !(self.lr > 0.0) {
            return Err(ToyError::Config("batch must be >= 1 and lr > 0".into()));
        }
        Ok(())
    }

    fn integration(&self, d: usize) -> IntegrationConfig {
        IntegrationConfig {
            d_v: self.d_v,
            d,
            d_m: self.d_m,
            heads: self.heads,
            lambda_ref: self.lambda_ref,
            strict_single_softmax: self.strict_single_softmax,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDataset {
    pub queries: Array2<f64>,
    pub labels: Vec<u8>,
    pub seed: u64,
    pub sigma_v: f64,
    pub projection_digest: String,
}

impl ToyDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn digest(&self) -> String {
        digest_f64(&self.queries)
    }
}

/// The fixed `d × d_v` projection with `N(0, 1/d_v)` entries.
pub fn visual_projection(cfg: &ToyConfig) -> Array2<f64> {
    let mut rng = derived_stream(
        cfg.seed,
        "toy/projection",
        &[cfg.pseudo_dim as u64, cfg.d_v as u64],
    );
    init::normal(
        cfg.pseudo_dim,
        cfg.d_v,
        1.0 / (cfg.d_v as f64).sqrt(),
        &mut rng,
    )
}

/// Draws one query description: a fair coin picks the category.
pub fn query_description(
    seed: u64,
    split: &str,
    i: usize,
    lex: &AttributeLexicon,
) -> (Description, crate::numerics::RngStream) {
    let mut rng = derived_stream(seed, &format!("toy/query/{split}"), &[i as u64]);
    let d = if rng.random_bool(0.5) {
        render_pedestrian(&mut rng, lex)
    } else {
        render_background(&mut rng, lex)
    };
    (d, rng)
}

/// `n` queries of the named split.
pub fn synth_dataset(
    cfg: &ToyConfig,
    split: &str,
    n: usize,
    lex: &AttributeLexicon,
) -> Result<ToyDataset, ToyError> {
    if !(cfg.sigma_v >= 0.0 && cfg.sigma_v.is_finite()) {
        return Err(ToyError::Config(format!(
            "sigma_v must be >= 0, got {}",
            cfg.sigma_v
        )));
    }
    if n < 2 || cfg.d_v < 8 {
        return Err(ToyError::Config("need N >= 2 and d_v >= 8".into()));
    }
    let w = visual_projection(cfg);
    let mut enc = PseudoEncoder::new(cfg.pseudo_dim, cfg.encoder_seed, lex)?;
    let mut queries = Array2::zeros((n, cfg.d_v));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let (d, mut rng) = query_description(cfg.seed, split, i, lex);
        let v = enc.encode(&d);
        let mut q = v.dot(&w);
        for x in q.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *x += cfg.sigma_v * z;
        }
        queries.row_mut(i).assign(&q);
        labels.push(d.category.label());
    }
    Ok(ToyDataset {
        queries,
        labels,
        seed: cfg.seed,
        sigma_v: cfg.sigma_v,
        projection_digest: digest_f64(&w),
    })
}

/// Optional integration module followed by a linear classifier on `d_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub module: Option<IntegrationModule>,
    pub w: Array2<f64>,
    pub b: Array2<f64>,
}

impl ToyModel {
    pub fn baseline(d_v: usize, seed: u64) -> Self {
        let mut rng = derived_stream(seed, "toy/classifier", &[d_v as u64]);
        Self {
            module: None,
            w: init::xavier_uniform(d_v, 1, &mut rng),
            b: Array2::zeros((1, 1)),
        }
    }

    pub fn with_module(cfg: IntegrationConfig, seed: u64) -> Result<Self, ToyError> {
        Ok(Self {
            module: Some(IntegrationModule::init(cfg, seed)?),
            ..Self::baseline(cfg.d_v, seed)
        })
    }

    pub fn classifier_params(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn param_count(&self) -> usize {
        self.classifier_params()
            + self
                .module
                .as_ref()
                .map_or(0, IntegrationModule::param_count)
    }

    fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut t: Vec<&Array2<f64>> = self.module.iter().flat_map(|m| m.params.iter()).collect();
        t.push(&self.w);
        t.push(&self.b);
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut t: Vec<&mut Array2<f64>> = self
            .module
            .iter_mut()
            .flat_map(|m| m.params.iter_mut())
            .collect();
        t.push(&mut self.w);
        t.push(&mut self.b);
        t
    }

    /// Builds logits and, with a module, the reference-loss attention.
    fn build(
        &self,
        g: &mut Graph,
        params: &[Var],
        q: &Array2<f64>,
        elements: Option<&Array2<f64>>,
    ) -> Result<(Var, Option<Var>), ToyError> {
        let qv = g.constant(q.clone());
        let (features, attn) = match (&self.module, elements) {
            (Some(m), Some(e)) => {
                let ev = g.constant(e.clone());
                let f = IntegrationModule::forward_graph(
                    &m.cfg,
                    g,
                    &params[..params.len() - 2],
                    qv,
                    ev,
                )?;
                (f.fused, Some(f.ref_attn))
            }
            _ => (qv, None),
        };
        let n = params.len();
        let z = g.matmul(features, params[n - 2])?;
        Ok((g.add_row(z, params[n - 1])?, attn))
    }

    /// Pedestrian scores and the reference-loss attention (if any) for `q`.
    pub fn predict(
        &self,
        q: &Array2<f64>,
        elements: Option<&Array2<f64>>,
    ) -> Result<(Vec<f64>, Option<Array2<f64>>), ToyError> {
        let mut g = Graph::new();
        let params: Vec<Var> = self
            .tensors()
            .into_iter()
            .map(|m| g.constant(m.clone()))
            .collect();
        let (logits, attn) = self.build(&mut g, &params, q, elements)?;
        let scores = g
            .value(logits)
            .column(0)
            .iter()
            .map(|&z| logistic(z))
            .collect();
        Ok((scores, attn.map(|a| g.value(a).clone())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training objective over the epoch; `None` at initialisation.
    pub train_loss: Option<f64>,
    pub eval_bce: f64,
    pub eval_ref_loss: Option<f64>,
    pub accuracy: f64,
    pub ap: f64,
    /// Mean attention mass on the query's own partition.
    pub correct_mass: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyRun {
    pub config: ToyConfig,
    pub k: usize,
    pub params: usize,
    /// Epoch 0 is the untrained model.
    pub epochs: Vec<EpochMetrics>,
}

impl ToyRun {
    pub fn last(&self) -> &EpochMetrics {
        self.epochs.last().expect("epoch 0 is always recorded")
    }
}

/// Binary average precision: mean precision at the rank of each positive,
/// scores sorted descending with ties broken by index.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    total / positives as f64
}

fn bce(scores: &[f64], labels: &[u8]) -> f64 {
    let eps = crate::numerics::BCE_CLAMP;
    scores
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(eps, 1.0 - eps);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / scores.len() as f64
}

fn evaluate(
    model: &ToyModel,
    data: &ToyDataset,
    elements: Option<(&Array2<f64>, &ElementPartition)>,
    epoch: usize,
    train_loss: Option<f64>,
) -> Result<EpochMetrics, ToyError> {
    let (scores, attn) = model.predict(&data.queries, elements.map(|e| e.0))?;
    let correct = scores
        .iter()
        .zip(&data.labels)
        .filter(|(&s, &l)| u8::from(s > 0.5) == l)
        .count();
    let (eval_ref_loss, correct_mass) = match (attn, elements) {
        (Some(a), Some((_, p))) => (
            Some(reference_loss_batch(&a, p, &data.labels)?),
            Some(correct_partition_mass(&a, p, &data.labels)),
        ),
        _ => (None, None),
    };
    Ok(EpochMetrics {
        epoch,
        train_loss,
        eval_bce: bce(&scores, &data.labels),
        eval_ref_loss,
        accuracy: correct as f64 / data.len() as f64,
        ap: average_precision(&scores, &data.labels),
        correct_mass,
    })
}

/// Trains a baseline (`elements = None`) or an element-fused model with Adam.
pub fn train_toy(
    train: &ToyDataset,
    eval: &ToyDataset,
    elements: Option<(&Array2<f64>, &ElementPartition)>,
    cfg: &ToyConfig,
) -> Result<ToyRun, ToyError> {
    train_toy_model(train, eval, elements, cfg).map(|(run, _)| run)
}

/// [`train_toy`], also returning the trained model.
pub fn train_toy_model(
    train: &ToyDataset,
    eval: &ToyDataset,
    elements: Option<(&Array2<f64>, &ElementPartition)>,
    cfg: &ToyConfig,
) -> Result<(ToyRun, ToyModel), ToyError> {
    cfg.validate()?;
    if train.is_empty() || eval.is_empty() {
        return Err(ToyError::Empty);
    }
    if let Some((e, p)) = elements {
        if e.nrows() != p.k() {
            return Err(ToyError::ElementMismatch {
                elements: e.nrows(),
                partition: p.k(),
            });
        }
    }
    let mut model = match elements {
        Some((e, _)) => ToyModel::with_module(cfg.integration(e.ncols()), cfg.seed)?,
        None => ToyModel::baseline(cfg.d_v, cfg.seed),
    };
    let shapes: Vec<(usize, usize)> = model.tensors().iter().map(|m| m.dim()).collect();
    let mut adam = Adam::new(cfg.lr, &shapes);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = vec![evaluate(&model, eval, elements, 0, None)?];

    for epoch in 1..=cfg.epochs {
        let mut rng = derived_stream(cfg.seed, "toy/shuffle", &[epoch as u64]);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let q = train.queries.select(Axis(0), chunk);
            let labels: Vec<u8> = chunk.iter().map(|&i| train.labels[i]).collect();
            let mut g = Graph::new();
            let params: Vec<Var> = model
                .tensors()
                .into_iter()
                .map(|m| g.param(m.clone()))
                .collect();
            let (logits, attn) = model.build(&mut g, &params, &q, elements.map(|e| e.0))?;
            let target = Array2::from_shape_fn((labels.len(), 1), |(i, _)| f64::from(labels[i]));
            let mut loss = g.bce_logits(logits, target)?;
            if let (Some(a), Some((_, p))) = (attn, elements) {
                if cfg.lambda_ref > 0.0 {
                    let r = reference_loss_graph(&mut g, a, p, &labels)?;
                    let r = g.scale(r, cfg.lambda_ref);
                    loss = g.add(loss, r)?;
                }
            }
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(NumericsError::NonFiniteLoss(value).into());
            }
            total += value * chunk.len() as f64;
            g.backward(loss)?;
            adam.tick();
            for (slot, (t, v)) in model.tensors_mut().into_iter().zip(&params).enumerate() {
                adam.step(slot, t, g.grad(*v).expect("param"));
            }
        }
        epochs.push(evaluate(
            &model,
            eval,
            elements,
            epoch,
            Some(total / train.len() as f64),
        )?);
    }
    let run = ToyRun {
        config: cfg.clone(),
        k: elements.map_or(0, |e| e.0.nrows()),
        params: model.param_count(),
        epochs,
    };
    Ok((run, model))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub module_params: usize,
    pub baseline_params: usize,
    pub total_params: usize,
    pub added_params: usize,
    /// `added_params / baseline_params`.
    pub ratio: f64,
}

pub fn overhead_report(with: &ToyModel, without: &ToyModel) -> OverheadReport {
    let total = with.param_count();
    let baseline = without.param_count();
    let added = total.saturating_sub(baseline);
    OverheadReport {
        module_params: with
            .module
            .as_ref()
            .map_or(0, IntegrationModule::param_count),
        baseline_params: baseline,
        total_params: total,
        added_params: added,
        ratio: added as f64 / baseline as f64,
    }
}

/// Everything a K-sweep needs besides the list of K and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub ks: Vec<usize>,
    pub seeds: Vec<u64>,
    pub toy: ToyConfig,
    pub tune: TuneConfig,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            ks: vec![0, 100, 200, 300],
            seeds: vec![0, 1, 2],
            toy: ToyConfig::default(),
            tune: TuneConfig::default(),
            max_iters: 100,
            rel_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub k: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub ap: f64,
    /// Final correct-partition attention mass; `None` for the baseline.
    pub ref_mass: Option<f64>,
    pub initial_ref_mass: Option<f64>,
    pub pedestrian_fraction: Option<f64>,
    pub run: ToyRun,
}

/// Runs cluster → tune → train for every `(K, seed)`; `K = 0` is the
/// baseline. Entries come back ordered by K, then seed.
pub fn ablation_k_sweep(
    set: &AppearanceKnowledgeSet,
    lex: &AttributeLexicon,
    cfg: &SweepConfig,
) -> Result<Vec<SweepEntry>, ToyError> {
    if cfg.ks.is_empty() {
        return Err(ToyError::Config("ks must be non-empty".into()));
    }
    let datasets: Vec<(ToyDataset, ToyDataset)> = cfg
        .seeds
        .iter()
        .map(|&seed| {
            let toy = ToyConfig {
                seed,
                ..cfg.toy.clone()
            };
            Ok((
                synth_dataset(&toy, "train", toy.n_train, lex)?,
                synth_dataset(&toy, "eval", toy.n_eval, lex)?,
            ))
        })
        .collect::<Result<_, ToyError>>()?;
    let rows = set.to_f64();
    let jobs: Vec<(usize, usize)> = cfg
        .ks
        .iter()
        .flat_map(|&k| (0..cfg.seeds.len()).map(move |s| (k, s)))
        .collect();
    jobs.par_iter()
        .map(|&(k, s)| {
            let seed = cfg.seeds[s];
            let toy = ToyConfig {
                seed,
                ..cfg.toy.clone()
            };
            let (train, eval) = &datasets[s];
            if k == 0 {
                let run = train_toy(train, eval, None, &toy)?;
                let last = run.last();
                return Ok(SweepEntry {
                    k,
                    seed,
                    accuracy: last.accuracy,
                    ap: last.ap,
                    ref_mass: None,
                    initial_ref_mass: None,
                    pedestrian_fraction: None,
                    run,
                });
            }
            let kc = KmeansConfig {
                k,
                seed,
                max_iters: cfg.max_iters,
                rel_tol: cfg.rel_tol,
            };
            let centroids = kmeans(set, &kc)?;
            let assignments = assign_all(&rows, &centroids.centroids)?;
            let partition = label_elements(&assignments, set.labels(), k)?;
            let tune = TuneConfig { seed, ..cfg.tune };
            let tuned = prompt_tune(&assignments, set.labels(), &centroids.centroids, &tune)?;
            let elements = compose_elements(&centroids.centroids, &tuned.prompts, partition)?;
            let run = train_toy(
                train,
                eval,
                Some((&elements.elements, &elements.partition)),
                &toy,
            )?;
            let last = run.last();
            Ok(SweepEntry {
                k,
                seed,
                accuracy: last.accuracy,
                ap: last.ap,
                ref_mass: last.correct_mass,
                initial_ref_mass: run.epochs[0].correct_mass,
                pedestrian_fraction: Some(elements.partition.pedestrian_fraction()),
                run,
            })
        })
        .collect()
}

/// `K,seed,acc,ap,ref_mass` with an empty `ref_mass` for the baseline.
pub fn sweep_csv(entries: &[SweepEntry]) -> String {
    let mut s = String::from("K,seed,acc,ap,ref_mass\n");
    for e in entries {
        let mass = e.ref_mass.map(|m| m.to_string()).unwrap_or_default();
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            e.k, e.seed, e.accuracy, e.ap, mass
        ));
    }
    s
}

/// Mean and sample standard deviation of accuracy per K, in order of first
/// appearance.
pub fn sweep_summary(entries: &[SweepEntry]) -> Vec<(usize, f64, f64)> {
    let mut ks: Vec<usize> = Vec::new();
    for e in entries {
        if !ks.contains(&e.k) {
            ks.push(e.k);
        }
    }
    ks.into_iter()
        .map(|k| {
            let acc: Array1<f64> = entries
                .iter()
                .filter(|e| e.k == k)
                .map(|e| e.accuracy)
                .collect();
            let mean = acc.mean().unwrap_or(0.0);
            let sd = if acc.len() > 1 { acc.std(1.0) } else { 0.0 };
            (k, mean, sd)
        })
        .collect()
}

/// Accuracy (percent) against K as a small SVG line chart with ±1 sd bars.
pub fn sweep_svg(entries: &[SweepEntry]) -> String {
    let summary = sweep_summary(entries);
    let (w, h, pad) = (480.0, 320.0, 48.0);
    let kmax = summary.iter().map(|s| s.0).max().unwrap_or(1).max(1) as f64;
    let lo = summary
        .iter()
        .map(|s| s.1 - s.2)
        .fold(f64::INFINITY, f64::min)
        * 100.0;
    let hi = summary
        .iter()
        .map(|s| s.1 + s.2)
        .fold(f64::NEG_INFINITY, f64::max)
        * 100.0;
    let (lo, hi) = ((lo - 1.0).floor(), (hi + 1.0).ceil());
    let x = |k: f64| pad + k / kmax * (w - 2.0 * pad);
    let y = |a: f64| h - pad - (a * 100.0 - lo) / (hi - lo) * (h - 2.0 * pad);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    s.push_str(&format!(
        "<line x1=\"{pad}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{b}\" stroke=\"black\"/>\n",
        b = h - pad,
        r = w - pad
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">K</text>\n<text x=\"12\" y=\"{}\" transform=\"rotate(-90 12 {})\" text-anchor=\"middle\">accuracy (%)</text>\n",
        w / 2.0,
        h - 10.0,
        h / 2.0,
        h / 2.0
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{lo}</text>\n",
        pad - 4.0,
        h - pad
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{hi}</text>\n",
        pad - 4.0,
        pad + 4.0
    ));
    let points: Vec<String> = summary
        .iter()
        .map(|&(k, m, _)| format!("{:.2},{:.2}", x(k as f64), y(m)))
        .collect();
    s.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>\n",
        points.join(" ")
    ));
    for &(k, m, sd) in &summary {
        let cx = x(k as f64);
        s.push_str(&format!(
            "<line x1=\"{cx:.2}\" y1=\"{:.2}\" x2=\"{cx:.2}\" y2=\"{:.2}\" stroke=\"steelblue\"/>\n<circle cx=\"{cx:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"steelblue\"/>\n<text x=\"{cx:.2}\" y=\"{}\" text-anchor=\"middle\">{k}</text>\n",
            y(m - sd),
            y(m + sd),
            y(m),
            h - pad + 16.0
        ));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ap_perfect_and_inverted() {
        assert_eq!(average_precision(&[0.9, 0.8, 0.1], &[1, 1, 0]), 1.0);
        let ap = average_precision(&[0.1, 0.8, 0.9], &[1, 0, 0]);
        assert!((ap - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn identical_models_have_no_overhead() {
        let m = ToyModel::baseline(16, 0);
        let r = overhead_report(&m, &m);
        assert_eq!(r.added_params, 0);
        assert_eq!(r.ratio, 0.0);
    }

    #[test]
    fn negative_sigma_rejected() {
        let lex = crate::corpus::build_lexicon();
        let cfg = ToyConfig {
            sigma_v: -0.1,
            ..Default::default()
        };
        assert!(matches!(
            synth_dataset(&cfg, "train", 10, &lex),
            Err(ToyError::Config(_))
        ));
    }
}
