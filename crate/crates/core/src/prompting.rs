//! Task prompting: learnable per-centroid prompts `P`, elements `E = C + P`,
//! and the two-layer BCE head that makes the elements task-relevant.

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::ElementPartition;
use crate::container::{digest_f64, Container};
use crate::numerics::{derived_stream, init, logistic, Graph, NumericsError, Sgd, Var};

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("shape mismatch: centroids {centroids:?}, prompts {prompts:?}")]
    Shape {
        centroids: (usize, usize),
        prompts: (usize, usize),
    },
    #[error("learning rate must be positive, got {0}")]
    BadLearningRate(f64),
    #[error("no training samples")]
    Empty,
    #[error("batch size and hidden width must be at least 1")]
    ZeroSize,
    #[error("{assignments} assignments for {labels} labels")]
    LengthMismatch { assignments: usize, labels: usize },
    #[error("sample assigned to centroid {index}, but K = {k}")]
    AssignmentOutOfRange { index: usize, k: usize },
    #[error("partition covers {partition} elements, expected {k}")]
    PartitionSize { partition: usize, k: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Learnable prompts, one row per centroid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSet {
    pub prompts: Array2<f64>,
    pub init: String,
    pub steps: u64,
}

impl PromptSet {
    pub fn zeros(k: usize, d: usize) -> Self {
        Self {
            prompts: Array2::zeros((k, d)),
            init: "zeros".into(),
            steps: 0,
        }
    }

    pub fn digest(&self) -> String {
        digest_f64(&self.prompts)
    }
}

/// `E = C + P` with its partition and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementSet {
    pub elements: Array2<f64>,
    pub partition: ElementPartition,
    pub centroid_digest: String,
    pub prompt_digest: String,
}

impl ElementSet {
    pub fn k(&self) -> usize {
        self.elements.nrows()
    }

    /// Elements as a container whose labels are the partition.
    pub fn to_container(&self) -> Container {
        let mut c = Container::from_matrix(&self.elements);
        c.labels = Some(self.partition.labels.clone());
        c
    }
}

/// Row-wise sum of centroids and prompts.
pub fn compose(centroids: &Array2<f64>, prompts: &Array2<f64>) -> Result<Array2<f64>, PromptError> {
    if centroids.dim() != prompts.dim() {
        return Err(PromptError::Shape {
            centroids: centroids.dim(),
            prompts: prompts.dim(),
        });
    }
    Ok(centroids + prompts)
}

pub fn compose_elements(
    centroids: &Array2<f64>,
    prompts: &PromptSet,
    partition: ElementPartition,
) -> Result<ElementSet, PromptError> {
    let elements = compose(centroids, &prompts.prompts)?;
    if partition.k() != elements.nrows() {
        return Err(PromptError::PartitionSize {
            partition: partition.k(),
            k: elements.nrows(),
        });
    }
    Ok(ElementSet {
        elements,
        partition,
        centroid_digest: digest_f64(centroids),
        prompt_digest: prompts.digest(),
    })
}

/// `sigmoid(relu(e·W1 + b1)·W2 + b2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
}

impl ClassifierHead {
    /// Xavier-uniform weights, zero biases.
    pub fn init(d: usize, h: usize, seed: u64) -> Self {
        let mut rng = derived_stream(seed, "tune/head", &[d as u64, h as u64]);
        Self {
            w1: init::xavier_uniform(d, h, &mut rng),
            b1: Array2::zeros((1, h)),
            w2: init::xavier_uniform(h, 1, &mut rng),
            b2: Array2::zeros((1, 1)),
        }
    }

    pub fn zeros(d: usize, h: usize) -> Self {
        Self {
            w1: Array2::zeros((d, h)),
            b1: Array2::zeros((1, h)),
            w2: Array2::zeros((h, 1)),
            b2: Array2::zeros((1, 1)),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w1.ncols()
    }

    pub fn params(&self) -> [&Array2<f64>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    /// Builds the logits of `x` (rows) on `g` from parameter nodes `[w1, b1, w2, b2]`.
    pub fn logits(g: &mut Graph, x: Var, p: &[Var]) -> Result<Var, NumericsError> {
        let z = g.matmul(x, p[0])?;
        let z = g.add_row(z, p[1])?;
        let a = g.relu(z);
        let o = g.matmul(a, p[2])?;
        g.add_row(o, p[3])
    }

    /// Section name and matrix for each parameter.
    pub fn sections(&self) -> Vec<(String, Container)> {
        ["w1", "b1", "w2", "b2"]
            .into_iter()
            .zip(self.params())
            .map(|(n, m)| (n.to_string(), Container::from_matrix(m)))
            .collect()
    }
}

/// Pedestrian probability of one element.
pub fn classify_element(e: ArrayView1<f64>, head: &ClassifierHead) -> f64 {
    let hidden = e.dot(&head.w1) + head.b1.row(0);
    let hidden = hidden.mapv(|v| v.max(0.0));
    logistic(hidden.dot(&head.w2.column(0)) + head.b2[[0, 0]])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub hidden: usize,
    pub seed: u64,
    /// Freeze the randomly initialised head and train the prompts alone.
    pub prompts_only: bool,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            epochs: 50,
            batch: 256,
            hidden: 256,
            seed: 0,
            prompts_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub prompts: PromptSet,
    pub head: ClassifierHead,
    /// Sample-weighted mean BCE of each epoch.
    pub curve: Vec<f64>,
}

impl TuneOutcome {
    /// `epoch,mean_bce` lines with a header.
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("epoch,mean_bce\n");
        for (i, l) in self.curve.iter().enumerate() {
            s.push_str(&format!("{},{}\n", i + 1, l));
        }
        s
    }
}

/// BCE of one batch: every sample `j` is represented by the element of its
/// centroid, `c_{a_j} + p_{a_j}`.
pub fn batch_loss(
    g: &mut Graph,
    centroids: Var,
    prompts: Var,
    head: &[Var],
    assignments: &[usize],
    labels: &[u8],
) -> Result<Var, NumericsError> {
    let e = g.add(centroids, prompts)?;
    let rows = g.gather_rows(e, assignments)?;
    let logits = ClassifierHead::logits(g, rows, head)?;
    let target = Array2::from_shape_fn((labels.len(), 1), |(i, _)| f64::from(labels[i]));
    g.bce_logits(logits, target)
}

/// Tunes zero-initialised prompts (and, unless `prompts_only`, the head) with
/// minibatch gradient descent. Centroids stay fixed.
pub fn prompt_tune(
    assignments: &[usize],
    labels: &[u8],
    centroids: &Array2<f64>,
    cfg: &TuneConfig,
) -> Result<TuneOutcome, PromptError> {
    if !(cfg.lr > 0.0) {
        return Err(PromptError::BadLearningRate(cfg.lr));
    }
    if assignments.is_empty() {
        return Err(PromptError::Empty);
    }
    if cfg.batch == 0 || cfg.hidden == 0 {
        return Err(PromptError::ZeroSize);
    }
    if assignments.len() != labels.len() {
        return Err(PromptError::LengthMismatch {
            assignments: assignments.len(),
            labels: labels.len(),
        });
    }
    let (k, d) = centroids.dim();
    if let Some(&index) = assignments.iter().find(|&&a| a >= k) {
        return Err(PromptError::AssignmentOutOfRange { index, k });
    }

    let mut prompts = PromptSet::zeros(k, d);
    let mut head = ClassifierHead::init(d, cfg.hidden, cfg.seed);
    let sgd = Sgd { lr: cfg.lr };
    let mut order: Vec<usize> = (0..assignments.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut rng = derived_stream(cfg.seed, "tune/shuffle", &[epoch as u64]);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let a: Vec<usize> = chunk.iter().map(|&j| assignments[j]).collect();
            let l: Vec<u8> = chunk.iter().map(|&j| labels[j]).collect();
            let mut g = Graph::new();
            let c = g.constant(centroids.clone());
            let p = g.param(prompts.prompts.clone());
            let hp: Vec<Var> = head
                .params()
                .into_iter()
                .map(|m| {
                    if cfg.prompts_only {
                        g.constant(m.clone())
                    } else {
                        g.param(m.clone())
                    }
                })
                .collect();
            let loss = batch_loss(&mut g, c, p, &hp, &a, &l)?;
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(NumericsError::NonFiniteLoss(value).into());
            }
            total += value * chunk.len() as f64;
            g.backward(loss)?;
            sgd.step(&mut prompts.prompts, g.grad(p).expect("param"));
            if !cfg.prompts_only {
                let [w1, b1, w2, b2] = [&mut head.w1, &mut head.b1, &mut head.w2, &mut head.b2];
                for (m, v) in [w1, b1, w2, b2].into_iter().zip(&hp) {
                    sgd.step(m, g.grad(*v).expect("param"));
                }
            }
            prompts.steps += 1;
        }
        curve.push(total / assignments.len() as f64);
    }
    Ok(TuneOutcome {
        prompts,
        head,
        curve,
    })
}

/// Fraction of elements whose thresholded head output equals their
/// partition label.
pub fn element_agreement(elements: &ElementSet, head: &ClassifierHead) -> f64 {
    let hits = elements
        .elements
        .rows()
        .into_iter()
        .zip(&elements.partition.labels)
        .filter(|(e, &l)| u8::from(classify_element(*e, head) > 0.5) == l)
        .count();
    hits as f64 / elements.k() as f64
}
