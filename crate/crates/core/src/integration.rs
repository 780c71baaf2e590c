//! Cross-attention from visual queries to appearance elements, followed by
//! Add & Norm, and the reference loss that routes each query's attention
//! toward the elements of its own category.
//!
//! Shapes: queries `N × d_v`, elements `K × d`. Queries project to `d_m`
//! through `W_Q`, elements through `W_K` and `W_V`; the attended values are
//! projected back by `W_O`, added to the queries and layer-normalised.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::ElementPartition;
use crate::container::Container;
use crate::numerics::{derived_stream, init, Graph, NumericsError, Var, LAYER_NORM_EPS};

#[derive(Debug, Error, PartialEq)]
pub enum IntegrationError {
    #[error("d_m = {d_m} is not divisible by H = {heads}")]
    Heads { d_m: usize, heads: usize },
    #[error("λ_ref must be finite and non-negative, got {0}")]
    BadLambda(f64),
    #[error("{what}: expected width {expected}, got {got}")]
    Dim {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{branch} queries present but the partition has no {missing} elements")]
    DegeneratePartition {
        branch: &'static str,
        missing: &'static str,
    },
    #[error("partition covers {partition} elements, attention has {k}")]
    PartitionSize { partition: usize, k: usize },
    #[error("{rows} attention rows for {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationConfig {
    pub d_v: usize,
    /// Element width `d`.
    pub d: usize,
    pub d_m: usize,
    pub heads: usize,
    pub lambda_ref: f64,
    /// Reference loss on one full-width softmax instead of the head mean.
    pub strict_single_softmax: bool,
}

impl IntegrationConfig {
    pub fn new(d_v: usize, d: usize, d_m: usize, heads: usize) -> Self {
        Self {
            d_v,
            d,
            d_m,
            heads,
            lambda_ref: 1.0,
            strict_single_softmax: false,
        }
    }

    pub fn validate(&self) -> Result<(), IntegrationError> {
        if self.heads == 0 || !self.d_m.is_multiple_of(self.heads) {
            return Err(IntegrationError::Heads {
                d_m: self.d_m,
                heads: self.heads,
            });
        }
        if !(self.lambda_ref >= 0.0 && self.lambda_ref.is_finite()) {
            return Err(IntegrationError::BadLambda(self.lambda_ref));
        }
        Ok(())
    }

    /// `d_v·d_m + 2·d·d_m + d_m·d_v + 2·d_v` weights plus `3·d_m + d_v` biases.
    pub fn param_count(&self) -> usize {
        let (d_v, d, d_m) = (self.d_v, self.d, self.d_m);
        d_v * d_m + 2 * d * d_m + d_m * d_v + 2 * d_v + 3 * d_m + d_v
    }
}

pub const PARAM_NAMES: [&str; 10] = [
    "w_q", "b_q", "w_k", "b_k", "w_v", "b_v", "w_o", "b_o", "gamma", "beta",
];

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationModule {
    pub cfg: IntegrationConfig,
    /// In [`PARAM_NAMES`] order.
    pub params: Vec<Array2<f64>>,
}

/// Graph nodes of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub fused: Var,
    /// Head-mean attention, `N × K`.
    pub attn: Var,
    /// The distribution the reference loss reads: `attn`, or the single
    /// full-width softmax in strict mode.
    pub ref_attn: Var,
}

impl IntegrationModule {
    /// Xavier-uniform projections, zero biases, `gamma = 1`, `beta = 0`.
    pub fn init(cfg: IntegrationConfig, seed: u64) -> Result<Self, IntegrationError> {
        cfg.validate()?;
        let mut rng = derived_stream(
            seed,
            "integration/init",
            &[cfg.d_v as u64, cfg.d as u64, cfg.d_m as u64],
        );
        let (d_v, d, d_m) = (cfg.d_v, cfg.d, cfg.d_m);
        let params = vec![
            init::xavier_uniform(d_v, d_m, &mut rng),
            Array2::zeros((1, d_m)),
            init::xavier_uniform(d, d_m, &mut rng),
            Array2::zeros((1, d_m)),
            init::xavier_uniform(d, d_m, &mut rng),
            Array2::zeros((1, d_m)),
            init::xavier_uniform(d_m, d_v, &mut rng),
            Array2::zeros((1, d_v)),
            Array2::ones((1, d_v)),
            Array2::zeros((1, d_v)),
        ];
        Ok(Self { cfg, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Array2::len).sum()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.params.iter().map(Array2::dim).collect()
    }

    pub fn sections(&self) -> Vec<(String, Container)> {
        PARAM_NAMES
            .iter()
            .zip(&self.params)
            .map(|(n, m)| (n.to_string(), Container::from_matrix(m)))
            .collect()
    }

    fn check_inputs(&self, q: &Array2<f64>, e: &Array2<f64>) -> Result<(), IntegrationError> {
        if q.ncols() != self.cfg.d_v {
            return Err(IntegrationError::Dim {
                what: "queries",
                expected: self.cfg.d_v,
                got: q.ncols(),
            });
        }
        if e.ncols() != self.cfg.d {
            return Err(IntegrationError::Dim {
                what: "elements",
                expected: self.cfg.d,
                got: e.ncols(),
            });
        }
        Ok(())
    }

    /// Forward pass on `g` with parameter nodes `p` (in [`PARAM_NAMES`] order).
    pub fn forward_graph(
        cfg: &IntegrationConfig,
        g: &mut Graph,
        p: &[Var],
        q: Var,
        e: Var,
    ) -> Result<ForwardVars, IntegrationError> {
        cfg.validate()?;
        let qp = g.matmul(q, p[0])?;
        let qp = g.add_row(qp, p[1])?;
        let kp = g.matmul(e, p[2])?;
        let kp = g.add_row(kp, p[3])?;
        let vp = g.matmul(e, p[4])?;
        let vp = g.add_row(vp, p[5])?;

        let dh = cfg.d_m / cfg.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(cfg.heads);
        let mut attn_sum: Option<Var> = None;
        for h in 0..cfg.heads {
            let (qh, kh, vh) = if cfg.heads == 1 {
                (qp, kp, vp)
            } else {
                (
                    g.slice_cols(qp, h * dh, dh)?,
                    g.slice_cols(kp, h * dh, dh)?,
                    g.slice_cols(vp, h * dh, dh)?,
                )
            };
            let s = g.matmul_nt(qh, kh)?;
            let s = g.scale(s, scale);
            let a = g.softmax_rows(s);
            outs.push(g.matmul(a, vh)?);
            attn_sum = Some(match attn_sum {
                None => a,
                Some(acc) => g.add(acc, a)?,
            });
        }
        let attn = g.scale(attn_sum.expect("heads >= 1"), 1.0 / cfg.heads as f64);
        let o = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)?
        };
        let o = g.matmul(o, p[6])?;
        let o = g.add_row(o, p[7])?;
        let r = g.add(q, o)?;
        let fused = g.layer_norm_rows(r, p[8], p[9], LAYER_NORM_EPS)?;

        let ref_attn = if cfg.strict_single_softmax {
            let s = g.matmul_nt(qp, kp)?;
            let s = g.scale(s, 1.0 / (cfg.d_m as f64).sqrt());
            g.softmax_rows(s)
        } else {
            attn
        };
        Ok(ForwardVars {
            fused,
            attn,
            ref_attn,
        })
    }

    /// Returns `(fused, head-mean attention)`.
    pub fn forward(
        &self,
        q: &Array2<f64>,
        e: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>), IntegrationError> {
        let (g, v) = self.run(q, e)?;
        Ok((g.value(v.fused).clone(), g.value(v.attn).clone()))
    }

    /// The distribution the reference loss is computed on.
    pub fn reference_attention(
        &self,
        q: &Array2<f64>,
        e: &Array2<f64>,
    ) -> Result<Array2<f64>, IntegrationError> {
        let (g, v) = self.run(q, e)?;
        Ok(g.value(v.ref_attn).clone())
    }

    fn run(
        &self,
        q: &Array2<f64>,
        e: &Array2<f64>,
    ) -> Result<(Graph, ForwardVars), IntegrationError> {
        self.check_inputs(q, e)?;
        let mut g = Graph::new();
        let p: Vec<Var> = self.params.iter().map(|m| g.constant(m.clone())).collect();
        let qv = g.constant(q.clone());
        let ev = g.constant(e.clone());
        let v = Self::forward_graph(&self.cfg, &mut g, &p, qv, ev)?;
        Ok((g, v))
    }
}

/// Per-query weights of the reference loss: a pedestrian query spreads
/// `1/|E_b|` over background elements, a background query `1/|E_p|` over
/// pedestrian elements.
pub fn reference_mask(
    partition: &ElementPartition,
    is_ped: &[u8],
) -> Result<Array2<f64>, IntegrationError> {
    let ped = partition.pedestrian();
    let bg = partition.background();
    let k = partition.k();
    let mut m = Array2::zeros((is_ped.len(), k));
    for (r, &flag) in is_ped.iter().enumerate() {
        let (penalised, branch, missing) = if flag == 1 {
            (&bg, "pedestrian", "background")
        } else {
            (&ped, "background", "pedestrian")
        };
        if penalised.is_empty() {
            return Err(IntegrationError::DegeneratePartition { branch, missing });
        }
        let w = 1.0 / penalised.len() as f64;
        for &c in penalised {
            m[[r, c]] = w;
        }
    }
    Ok(m)
}

/// Reference loss of one attention row.
pub fn reference_loss(
    attn_row: &[f64],
    partition: &ElementPartition,
    is_ped: bool,
) -> Result<f64, IntegrationError> {
    if attn_row.len() != partition.k() {
        return Err(IntegrationError::PartitionSize {
            partition: partition.k(),
            k: attn_row.len(),
        });
    }
    let (penalised, branch, missing) = if is_ped {
        (partition.background(), "pedestrian", "background")
    } else {
        (partition.pedestrian(), "background", "pedestrian")
    };
    if penalised.is_empty() {
        return Err(IntegrationError::DegeneratePartition { branch, missing });
    }
    Ok(shifted_mean(penalised.iter().map(|&i| attn_row[i])))
}

/// Mean as `x_0 + mean(x_i - x_0)`: exact when all values are equal, so
/// uniform attention gives exactly `1/K`. NaN when empty.
fn shifted_mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut values = values.peekable();
    let first = values.peek().copied().unwrap_or(f64::NAN);
    let (mut offset, mut n) = (0.0, 0usize);
    for v in values {
        offset += v - first;
        n += 1;
    }
    first + offset / n as f64
}

/// Mean of [`reference_loss`] over the rows of `attn`.
pub fn reference_loss_batch(
    attn: &Array2<f64>,
    partition: &ElementPartition,
    is_ped: &[u8],
) -> Result<f64, IntegrationError> {
    if attn.nrows() != is_ped.len() {
        return Err(IntegrationError::LengthMismatch {
            rows: attn.nrows(),
            labels: is_ped.len(),
        });
    }
    let losses = attn
        .rows()
        .into_iter()
        .zip(is_ped)
        .map(|(row, &flag)| {
            reference_loss(
                row.as_slice().expect("standard layout"),
                partition,
                flag == 1,
            )
        })
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(shifted_mean(losses.into_iter()))
}

/// Reference loss as a graph node over `attn` (`N × K`).
pub fn reference_loss_graph(
    g: &mut Graph,
    attn: Var,
    partition: &ElementPartition,
    is_ped: &[u8],
) -> Result<Var, IntegrationError> {
    let (n, k) = g.value(attn).dim();
    if partition.k() != k {
        return Err(IntegrationError::PartitionSize {
            partition: partition.k(),
            k,
        });
    }
    if n != is_ped.len() {
        return Err(IntegrationError::LengthMismatch {
            rows: n,
            labels: is_ped.len(),
        });
    }
    let mask = g.constant(reference_mask(partition, is_ped)?);
    let weighted = g.mul(attn, mask)?;
    let total = g.sum(weighted);
    Ok(g.scale(total, 1.0 / n as f64))
}

pub fn total_loss(task: f64, reference: f64, lambda_ref: f64) -> f64 {
    task + lambda_ref * reference
}

/// Mean attention mass each query puts on the elements of its own category.
pub fn correct_partition_mass(
    attn: &Array2<f64>,
    partition: &ElementPartition,
    is_ped: &[u8],
) -> f64 {
    let ped = partition.pedestrian();
    let bg = partition.background();
    let total: f64 = attn
        .rows()
        .into_iter()
        .zip(is_ped)
        .map(|(row, &flag)| {
            let own = if flag == 1 { &ped } else { &bg };
            own.iter().map(|&i| row[i]).sum::<f64>()
        })
        .sum();
    total / attn.nrows() as f64
}
