//! Finite-difference checks of every trainable path, on small random
//! problems drawn from a seed.

use ndarray::Array2;
use serde::Serialize;

use crate::clustering::ElementPartition;
use crate::integration::{reference_loss_graph, IntegrationConfig, IntegrationModule};
use crate::numerics::{
    derived_stream, finite_diff_check, init, GradCheckReport, Graph, NumericsError, Var,
};
use crate::prompting::{batch_loss, ClassifierHead};

/// Step size used by the suite.
pub const SUITE_EPS: f64 = 1e-5;
/// Largest accepted relative error.
pub const SUITE_TOLERANCE: f64 = 1e-4;

pub const PATHS: [&str; 7] = [
    "classifier_head",
    "prompts",
    "prompts_and_head",
    "integration",
    "reference_loss",
    "reference_loss_strict",
    "total_loss",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathCheck {
    pub path: &'static str,
    pub seed: u64,
    pub report: GradCheckReport,
}

impl PathCheck {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error <= SUITE_TOLERANCE
    }
}

const D: usize = 6;
const H: usize = 5;
const K: usize = 4;
const N: usize = 3;
const D_V: usize = 8;
const D_M: usize = 8;
const HEADS: usize = 2;
const LAMBDA: f64 = 0.7;

struct Problem {
    centroids: Array2<f64>,
    prompts: Array2<f64>,
    head: ClassifierHead,
    assignments: Vec<usize>,
    sample_labels: Vec<u8>,
    queries: Array2<f64>,
    query_labels: Vec<u8>,
    module: IntegrationModule,
    strict: IntegrationModule,
    classifier: Array2<f64>,
    bias: Array2<f64>,
    partition: ElementPartition,
}

fn problem(seed: u64) -> Problem {
    let mut rng = derived_stream(seed, "fidelity", &[]);
    let mut head = ClassifierHead::init(D, H, seed);
    head.b1 = init::normal(1, H, 0.5, &mut rng);
    head.b2 = init::normal(1, 1, 0.5, &mut rng);
    let cfg = IntegrationConfig::new(D_V, D, D_M, HEADS);
    let mut module = IntegrationModule::init(cfg, seed).expect("valid config");
    // perturb biases and the norm affine so every parameter carries gradient
    for i in [1, 3, 5, 7, 9] {
        let (r, c) = module.params[i].dim();
        module.params[i] = init::normal(r, c, 0.3, &mut rng);
    }
    let (r, c) = module.params[8].dim();
    module.params[8] = init::normal(r, c, 0.3, &mut rng) + 1.0;
    let mut strict = module.clone();
    strict.cfg.strict_single_softmax = true;
    Problem {
        centroids: init::normal(K, D, 1.0, &mut rng),
        prompts: init::normal(K, D, 0.3, &mut rng),
        head,
        assignments: vec![0, 2, 1, 3, 2, 0],
        sample_labels: vec![1, 0, 1, 0, 0, 1],
        queries: init::normal(N, D_V, 1.0, &mut rng),
        query_labels: vec![1, 0, 1],
        module,
        strict,
        classifier: init::normal(D_V, 1, 0.5, &mut rng),
        bias: init::normal(1, 1, 0.5, &mut rng),
        partition: ElementPartition::from_labels(vec![1, 1, 0, 0]),
    }
}

fn head_params(p: &Problem) -> Vec<Array2<f64>> {
    p.head.params().into_iter().cloned().collect()
}

fn query_target(p: &Problem) -> Array2<f64> {
    Array2::from_shape_fn((N, 1), |(i, _)| f64::from(p.query_labels[i]))
}

/// Module forward, linear classifier, BCE and (weighted) reference loss.
fn fused_loss(
    g: &mut Graph,
    v: &[Var],
    p: &Problem,
    module: &IntegrationModule,
    task: bool,
    lambda: f64,
) -> Result<Var, NumericsError> {
    let q = g.constant(p.queries.clone());
    let e = g.constant(p.centroids.clone());
    let f =
        IntegrationModule::forward_graph(&module.cfg, g, &v[..10], q, e).map_err(into_numerics)?;
    let mut loss = None;
    if task {
        let z = g.matmul(f.fused, v[10])?;
        let z = g.add_row(z, v[11])?;
        loss = Some(g.bce_logits(z, query_target(p))?);
    }
    if lambda > 0.0 {
        let r = reference_loss_graph(g, f.ref_attn, &p.partition, &p.query_labels)
            .map_err(into_numerics)?;
        let r = g.scale(r, lambda);
        loss = Some(match loss {
            Some(l) => g.add(l, r)?,
            None => r,
        });
    }
    Ok(loss.expect("task or reference term"))
}

fn into_numerics(e: crate::integration::IntegrationError) -> NumericsError {
    match e {
        crate::integration::IntegrationError::Numerics(n) => n,
        other => panic!("fixed suite problem is well-formed: {other}"),
    }
}

/// Runs one path on one seed.
pub fn check_path(path: &'static str, seed: u64) -> Result<PathCheck, NumericsError> {
    let p = problem(seed);
    let module_params = |m: &IntegrationModule| {
        let mut v = m.params.clone();
        v.push(p.classifier.clone());
        v.push(p.bias.clone());
        v
    };
    let report = match path {
        "classifier_head" => {
            let x = p.centroids.select(ndarray::Axis(0), &p.assignments);
            let t = Array2::from_shape_fn((x.nrows(), 1), |(i, _)| f64::from(p.sample_labels[i]));
            finite_diff_check(
                |g, v| {
                    let xv = g.constant(x.clone());
                    let z = ClassifierHead::logits(g, xv, v)?;
                    g.bce_logits(z, t.clone())
                },
                &head_params(&p),
                SUITE_EPS,
            )?
        }
        "prompts" => {
            let hp = head_params(&p);
            finite_diff_check(
                |g, v| {
                    let c = g.constant(p.centroids.clone());
                    let h: Vec<Var> = hp.iter().map(|m| g.constant(m.clone())).collect();
                    batch_loss(g, c, v[0], &h, &p.assignments, &p.sample_labels)
                },
                std::slice::from_ref(&p.prompts),
                SUITE_EPS,
            )?
        }
        "prompts_and_head" => {
            let mut params = vec![p.prompts.clone()];
            params.extend(head_params(&p));
            finite_diff_check(
                |g, v| {
                    let c = g.constant(p.centroids.clone());
                    batch_loss(g, c, v[0], &v[1..], &p.assignments, &p.sample_labels)
                },
                &params,
                SUITE_EPS,
            )?
        }
        "integration" => finite_diff_check(
            |g, v| fused_loss(g, v, &p, &p.module, true, 0.0),
            &module_params(&p.module),
            SUITE_EPS,
        )?,
        "reference_loss" => finite_diff_check(
            |g, v| fused_loss(g, v, &p, &p.module, false, 1.0),
            &module_params(&p.module),
            SUITE_EPS,
        )?,
        "reference_loss_strict" => finite_diff_check(
            |g, v| fused_loss(g, v, &p, &p.strict, false, 1.0),
            &module_params(&p.strict),
            SUITE_EPS,
        )?,
        "total_loss" => finite_diff_check(
            |g, v| fused_loss(g, v, &p, &p.module, true, LAMBDA),
            &module_params(&p.module),
            SUITE_EPS,
        )?,
        other => panic!("unknown gradient path {other}"),
    };
    Ok(PathCheck { path, seed, report })
}

/// Every path on seeds `0..seeds`.
pub fn gradient_suite(seeds: u64) -> Result<Vec<PathCheck>, NumericsError> {
    let mut out = Vec::with_capacity(PATHS.len() * seeds as usize);
    for path in PATHS {
        for seed in 0..seeds {
            out.push(check_path(path, seed)?);
        }
    }
    Ok(out)
}
