//! Distilling a knowledge set into `K` centroids and labelling the resulting
//! elements.
//!
//! Clustering is ordinary Euclidean k-means (k-means++ seeding, Lloyd
//! iterations). Downstream, a description belongs to the centroid with the
//! largest dot product ([`assign`]); the two rules agree when embeddings and
//! centroids have equal norms, and [`assignment_disagreement`] counts where
//! they do not.

use std::collections::BTreeMap;

use ndarray::{s, Array2, ArrayView1, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::Container;
use crate::corpus::{words, AttributeLexicon, Description};
use crate::embedding::AppearanceKnowledgeSet;
use crate::numerics::{stream, RngStream};

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("K must satisfy 1 <= K <= M (K = {k}, M = {m})")]
    BadK { k: usize, m: usize },
    #[error("dimension mismatch: embedding {embedding}, centroids {centroids}")]
    DimMismatch { embedding: usize, centroids: usize },
    #[error("assignment {index} out of range for K = {k}")]
    AssignmentOutOfRange { index: usize, k: usize },
    #[error("{assignments} assignments for {items} items")]
    LengthMismatch { assignments: usize, items: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KmeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl KmeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iters: 100,
            rel_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmeansStats {
    /// Lloyd iterations run after seeding.
    pub iterations: usize,
    /// Sum of squared distances to the assigned centroid.
    pub objective: f64,
    /// Objective after seeding and after every iteration.
    pub history: Vec<f64>,
    /// Stopped because no assignment changed.
    pub converged: bool,
}

/// `K × d` centroids with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidSet {
    pub centroids: Array2<f64>,
    pub source_digest: String,
    pub stats: KmeansStats,
    /// Euclidean assignment of the clustered rows to the final centroids.
    pub euclidean_assignment: Vec<usize>,
}

impl CentroidSet {
    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.ncols()
    }

    pub fn to_container(&self) -> Container {
        Container::from_matrix(&self.centroids)
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn dot(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Nearest centroid by exhaustive Euclidean scan; ties go to the smaller index.
pub fn assign_euclidean(x: ArrayView1<f64>, centroids: &Array2<f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best.0
}

/// Dot-product assignment: `argmax_k s · c_k`, ties to the smallest index.
pub fn assign(embedding: ArrayView1<f64>, centroids: &Array2<f64>) -> Result<usize, ClusterError> {
    if embedding.len() != centroids.ncols() {
        return Err(ClusterError::DimMismatch {
            embedding: embedding.len(),
            centroids: centroids.ncols(),
        });
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (k, c) in centroids.rows().into_iter().enumerate() {
        let v = dot(embedding, c);
        if v > best.1 {
            best = (k, v);
        }
    }
    Ok(best.0)
}

/// [`assign`] for every row.
pub fn assign_all(rows: &Array2<f64>, centroids: &Array2<f64>) -> Result<Vec<usize>, ClusterError> {
    if rows.ncols() != centroids.ncols() {
        return Err(ClusterError::DimMismatch {
            embedding: rows.ncols(),
            centroids: centroids.ncols(),
        });
    }
    Ok((0..rows.nrows())
        .into_par_iter()
        .map(|i| assign(rows.row(i), centroids).expect("dims checked"))
        .collect())
}

/// Rows whose dot-product and Euclidean assignments differ.
pub fn assignment_disagreement(
    rows: &Array2<f64>,
    centroids: &Array2<f64>,
) -> Result<usize, ClusterError> {
    let dots = assign_all(rows, centroids)?;
    Ok(rows
        .rows()
        .into_iter()
        .zip(&dots)
        .filter(|(r, &d)| assign_euclidean(*r, centroids) != d)
        .count())
}

fn objective(data: &Array2<f64>, centroids: &Array2<f64>, assignment: &[usize]) -> f64 {
    data.rows()
        .into_iter()
        .zip(assignment)
        .map(|(x, &k)| sq_dist(x, centroids.row(k)))
        .sum()
}

const CHUNK: usize = 2048;

/// Nearest-centroid step. Candidates come from the expanded form
/// `|x|² - 2x·c + |c|²` (one matrix product per chunk); a point only leaves
/// its current centroid when the candidate is strictly closer by direct
/// computation, which keeps every per-point distance non-increasing.
fn nearest(data: &Array2<f64>, centroids: &Array2<f64>, current: Option<&[usize]>) -> Vec<usize> {
    let c_norms: Vec<f64> = centroids.rows().into_iter().map(|c| dot(c, c)).collect();
    let n = data.nrows();
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let chunks: Vec<Vec<usize>> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + CHUNK).min(n);
            let block = data.slice(s![start..end, ..]);
            let cross = block.dot(&centroids.t());
            (0..end - start)
                .map(|r| {
                    let mut best = (0, f64::INFINITY);
                    for (k, &cn) in c_norms.iter().enumerate() {
                        let d = cn - 2.0 * cross[[r, k]];
                        if d < best.1 {
                            best = (k, d);
                        }
                    }
                    let i = start + r;
                    match current {
                        Some(cur) if cur[i] != best.0 => {
                            let x = data.row(i);
                            let keep = sq_dist(x, centroids.row(cur[i]));
                            let cand = sq_dist(x, centroids.row(best.0));
                            if cand < keep {
                                best.0
                            } else {
                                cur[i]
                            }
                        }
                        _ => best.0,
                    }
                })
                .collect()
        })
        .collect();
    chunks.concat()
}

fn kmeans_pp(data: &Array2<f64>, k: usize, seed: u64) -> Array2<f64> {
    let n = data.nrows();
    let mut rng = stream(seed);
    // greedy variant: several D^2 draws per step, keep the one that lowers
    // the potential most
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut min_d: Vec<f64> = data
        .rows()
        .into_iter()
        .map(|x| sq_dist(x, data.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = min_d.iter().sum();
        if total <= 0.0 {
            let next = (0..n).find(|i| !chosen.contains(i)).expect("k <= n");
            chosen.push(next);
            continue;
        }
        let candidates: Vec<usize> = (0..trials).map(|_| draw(&min_d, total, &mut rng)).collect();
        let (next, next_d) = candidates
            .par_iter()
            .map(|&c| {
                let cand = data.row(c);
                let d: Vec<f64> = min_d
                    .iter()
                    .enumerate()
                    .map(|(i, &m)| m.min(sq_dist(data.row(i), cand)))
                    .collect();
                (c, d)
            })
            .collect::<Vec<_>>()
            .into_iter()
            // min_by keeps the first of equal candidates, so ties are order-stable
            .min_by(|a, b| a.1.iter().sum::<f64>().total_cmp(&b.1.iter().sum::<f64>()))
            .expect("at least two trials");
        chosen.push(next);
        min_d = next_d;
    }
    data.select(Axis(0), &chosen)
}

/// One index drawn with probability proportional to `weights`.
fn draw(weights: &[f64], total: f64, rng: &mut RngStream) -> usize {
    let target = rng.random_range(0.0..total);
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if w > 0.0 && acc > target {
            return i;
        }
    }
    // rounding can leave `acc` just short of `target`
    weights.iter().rposition(|&w| w > 0.0).expect("total > 0")
}

/// Mean of each cluster; empty clusters are moved onto the point farthest
/// from its own centroid (taken from clusters with at least two members).
fn update(data: &Array2<f64>, centroids: &mut Array2<f64>, assignment: &[usize]) {
    let (k, d) = centroids.dim();
    let mut sums = Array2::<f64>::zeros((k, d));
    let mut counts = vec![0usize; k];
    for (x, &a) in data.rows().into_iter().zip(assignment) {
        let mut row = sums.row_mut(a);
        row += &x;
        counts[a] += 1;
    }
    let empties: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
    for c in 0..k {
        if counts[c] > 0 {
            let mean = &sums.row(c) / counts[c] as f64;
            centroids.row_mut(c).assign(&mean);
        }
    }
    if empties.is_empty() {
        return;
    }
    let mut dist: Vec<(f64, usize)> = data
        .rows()
        .into_iter()
        .zip(assignment)
        .enumerate()
        .map(|(i, (x, &a))| (sq_dist(x, centroids.row(a)), i))
        .collect();
    dist.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut donors = dist.into_iter();
    for c in empties {
        for (_, i) in donors.by_ref() {
            let a = assignment[i];
            if counts[a] >= 2 {
                counts[a] -= 1;
                centroids.row_mut(c).assign(&data.row(i));
                break;
            }
        }
    }
}

/// k-means on raw rows.
pub fn kmeans_rows(
    data: &Array2<f64>,
    cfg: &KmeansConfig,
) -> Result<(Array2<f64>, KmeansStats, Vec<usize>), ClusterError> {
    let n = data.nrows();
    if cfg.k == 0 || cfg.k > n {
        return Err(ClusterError::BadK { k: cfg.k, m: n });
    }
    let mut centroids = kmeans_pp(data, cfg.k, cfg.seed);
    let mut assignment = nearest(data, &centroids, None);
    let mut obj = objective(data, &centroids, &assignment);
    let mut history = vec![obj];
    let mut iterations = 0;
    let mut converged = false;

    for it in 1..=cfg.max_iters {
        update(data, &mut centroids, &assignment);
        let next = nearest(data, &centroids, Some(&assignment));
        let next_obj = objective(data, &centroids, &next);
        history.push(next_obj);
        iterations = it;
        let changed = next != assignment;
        assignment = next;
        let rel = if obj > 0.0 {
            (obj - next_obj) / obj
        } else {
            0.0
        };
        obj = next_obj;

        let mut occupied = vec![false; cfg.k];
        for &a in &assignment {
            occupied[a] = true;
        }
        if !changed && occupied.iter().all(|&o| o) {
            converged = true;
            break;
        }
        if rel < cfg.rel_tol {
            break;
        }
    }
    Ok((
        centroids,
        KmeansStats {
            iterations,
            objective: obj,
            history,
            converged,
        },
        assignment,
    ))
}

/// Clusters a knowledge set into `cfg.k` centroids.
pub fn kmeans(
    set: &AppearanceKnowledgeSet,
    cfg: &KmeansConfig,
) -> Result<CentroidSet, ClusterError> {
    let (centroids, stats, euclidean_assignment) = kmeans_rows(&set.to_f64(), cfg)?;
    Ok(CentroidSet {
        centroids,
        source_digest: set.digest(),
        stats,
        euclidean_assignment,
    })
}

/// Pedestrian/background partition of the `K` elements.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementPartition {
    /// 1 pedestrian-related, 0 background-related.
    pub labels: Vec<u8>,
    pub members: Vec<Vec<usize>>,
    pub pedestrian_members: Vec<usize>,
}

impl ElementPartition {
    pub fn k(&self) -> usize {
        self.labels.len()
    }

    /// Indices of pedestrian-related elements.
    pub fn pedestrian(&self) -> Vec<usize> {
        (0..self.k()).filter(|&i| self.labels[i] == 1).collect()
    }

    /// Indices of background-related elements.
    pub fn background(&self) -> Vec<usize> {
        (0..self.k()).filter(|&i| self.labels[i] == 0).collect()
    }

    pub fn pedestrian_fraction(&self) -> f64 {
        self.pedestrian().len() as f64 / self.k() as f64
    }

    /// A partition carrying labels only, as read back from an element file.
    pub fn from_labels(labels: Vec<u8>) -> Self {
        let k = labels.len();
        Self {
            labels,
            members: vec![Vec::new(); k],
            pedestrian_members: vec![0; k],
        }
    }
}

/// An element is pedestrian-related iff strictly more than half of its
/// members are pedestrian descriptions. Ties and empty elements are
/// background-related.
pub fn label_elements(
    assignments: &[usize],
    labels: &[u8],
    k: usize,
) -> Result<ElementPartition, ClusterError> {
    if assignments.len() != labels.len() {
        return Err(ClusterError::LengthMismatch {
            assignments: assignments.len(),
            items: labels.len(),
        });
    }
    let mut members = vec![Vec::new(); k];
    let mut ped = vec![0usize; k];
    for (i, (&a, &l)) in assignments.iter().zip(labels).enumerate() {
        if a >= k {
            return Err(ClusterError::AssignmentOutOfRange { index: a, k });
        }
        members[a].push(i);
        ped[a] += usize::from(l);
    }
    let labels = (0..k)
        .map(|c| u8::from(2 * ped[c] > members[c].len()))
        .collect();
    Ok(ElementPartition {
        labels,
        members,
        pedestrian_members: ped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementSummary {
    pub label: u8,
    pub members: usize,
    /// `(value, fraction of member descriptions containing it)`, most
    /// frequent first, ties by value.
    pub top: Vec<(String, f64)>,
}

/// Per-element attribute summary, keyed by element index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeReport {
    pub elements: BTreeMap<usize, ElementSummary>,
}

/// Every attribute value and class name of the lexicon, sorted and deduplicated.
pub fn report_vocabulary(lex: &AttributeLexicon) -> Vec<String> {
    let mut v: Vec<String> = crate::corpus::AttributeType::ALL
        .iter()
        .flat_map(|&t| lex.values(t).iter().cloned())
        .chain(lex.class_names().cloned())
        .collect();
    v.sort();
    v.dedup();
    v
}

/// For each element, the `top_n` vocabulary entries by within-element
/// frequency, where a description "contains" an entry if the entry occurs in
/// its text as a whole-word phrase.
pub fn attribute_report(
    partition: &ElementPartition,
    corpus: &[Description],
    assignments: &[usize],
    lex: &AttributeLexicon,
    top_n: usize,
) -> Result<AttributeReport, ClusterError> {
    if assignments.len() != corpus.len() {
        return Err(ClusterError::LengthMismatch {
            assignments: assignments.len(),
            items: corpus.len(),
        });
    }
    let vocab: Vec<(String, Vec<String>)> = report_vocabulary(lex)
        .into_iter()
        .map(|v| {
            let w = words(&v);
            (v, w)
        })
        .collect();
    let k = partition.k();
    let mut counts = vec![vec![0usize; vocab.len()]; k];
    let mut sizes = vec![0usize; k];
    for (d, &a) in corpus.iter().zip(assignments) {
        if a >= k {
            return Err(ClusterError::AssignmentOutOfRange { index: a, k });
        }
        sizes[a] += 1;
        let hay = words(&d.text);
        for (j, (_, needle)) in vocab.iter().enumerate() {
            if hay.windows(needle.len()).any(|w| w == needle.as_slice()) {
                counts[a][j] += 1;
            }
        }
    }
    let mut elements = BTreeMap::new();
    for c in 0..k {
        let mut top: Vec<(String, f64)> = counts[c]
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(j, &n)| (vocab[j].0.clone(), n as f64 / sizes[c] as f64))
            .collect();
        top.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        top.truncate(top_n);
        elements.insert(
            c,
            ElementSummary {
                label: partition.labels[c],
                members: sizes[c],
                top,
            },
        );
    }
    Ok(AttributeReport { elements })
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let pairs = |n: u64| (n * n.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().flatten().map(|&n| pairs(n)).sum();
    let rows: f64 = table.iter().map(|r| pairs(r.iter().sum())).sum();
    let cols: f64 = (0..kb)
        .map(|j| pairs(table.iter().map(|r| r[j]).sum()))
        .sum();
    let total = pairs(a.len() as u64);
    let expected = rows * cols / total;
    let max = (rows + cols) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
