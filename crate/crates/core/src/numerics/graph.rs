//! Define-by-run reverse-mode differentiation over 2-D `f64` matrices.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and [`Graph::backward`] walks it once in reverse.
//! Graphs are meant to live for a single training step and then be dropped.
//!
//! ```
//! use appearance_elements::numerics::Graph;
//! use ndarray::array;
//!
//! let mut g = Graph::new();
//! let w = g.param(array![[2.0], [-1.0]]);
//! let x = g.constant(array![[1.0, 3.0]]);
//! let y = g.matmul(x, w).unwrap();      // 1*2 + 3*(-1) = -1
//! let loss = g.sum(y);
//! g.backward(loss).unwrap();
//! assert_eq!(g.value(loss)[[0, 0]], -1.0);
//! assert_eq!(g.grad(w).unwrap(), &array![[1.0], [3.0]]);
//! ```

use ndarray::{s, Array2, Axis};

use super::NumericsError;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    Bce {
        pred: Var,
        target: Array2<f64>,
    },
    BceLogits {
        logits: Var,
        target: Array2<f64>,
    },
    Mean(Var),
    Sum(Var),
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Bce { .. } => "bce",
            Op::BceLogits { .. } => "bce_logits",
            Op::Mean(..) => "mean",
            Op::Sum(..) => "sum",
            Op::GatherRows(..) => "gather_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Probabilities are clamped to this distance from 0 and 1 inside [`Graph::bce`].
pub const BCE_CLAMP: f64 = 1e-12;

/// A recorded computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Array2<f64>>>,
    checked: bool,
    first_non_finite: Option<(usize, &'static str)>,
}

fn shape(a: &Array2<f64>) -> (usize, usize) {
    a.dim()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn mismatch(op: &'static str, a: (usize, usize), b: (usize, usize)) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        left: a,
        right: b,
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph whose [`backward`](Self::backward) refuses to run if any
    /// forward value became non-finite.
    pub fn checked() -> Self {
        Self {
            checked: true,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        if self.first_non_finite.is_none() && value.iter().any(|v| !v.is_finite()) {
            self.first_non_finite = Some((self.nodes.len(), op.name()));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that does not.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// Gradient of the last [`backward`](Self::backward) target with respect
    /// to `v`, if `v` participates in it.
    pub fn grad(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// First node whose forward value was NaN or infinite.
    pub fn non_finite(&self) -> Option<(usize, &'static str)> {
        self.first_non_finite
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(mismatch("matmul", shape(va), shape(vb)));
        }
        let out = va.dot(vb);
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.ncols() {
            return Err(mismatch("matmul_nt", shape(va), shape(vb)));
        }
        let out = va.dot(&vb.t());
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMulNt(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() != vb.dim() {
            return Err(mismatch("add", shape(va), shape(vb)));
        }
        let out = va + vb;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Adds the `1 × n` row `row` to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, NumericsError> {
        let (vx, vr) = (self.value(x), self.value(row));
        if vr.nrows() != 1 || vr.ncols() != vx.ncols() {
            return Err(mismatch("add_row", shape(vx), shape(vr)));
        }
        let out = vx + vr;
        let rg = self.needs(&[x, row]);
        Ok(self.push(out, Op::AddRow(x, row), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() != vb.dim() {
            return Err(mismatch("mul", shape(va), shape(vb)));
        }
        let out = va * vb;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x) * c;
        let rg = self.needs(&[x]);
        self.push(out, Op::Scale(x, c), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| v.max(0.0));
        let rg = self.needs(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(sigmoid);
        let rg = self.needs(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let out = softmax_rows(self.value(x));
        let rg = self.needs(&[x]);
        self.push(out, Op::SoftmaxRows(x), rg)
    }

    /// Per-row layer normalization followed by the `1 × n` scale `gamma` and
    /// shift `beta`. Variance is the biased (population) estimate.
    pub fn layer_norm_rows(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<Var, NumericsError> {
        if !(eps > 0.0) {
            return Err(NumericsError::InvalidEps(eps));
        }
        let vx = self.value(x);
        let n = vx.ncols();
        for p in [gamma, beta] {
            let vp = self.value(p);
            if vp.nrows() != 1 || vp.ncols() != n {
                return Err(mismatch("layer_norm", shape(vx), shape(vp)));
            }
        }
        let mut xhat = vx.clone();
        let mut inv_std = Vec::with_capacity(vx.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
            inv_std.push(inv);
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        let rg = self.needs(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Mean binary cross-entropy of probabilities `pred` against `target`.
    pub fn bce(&mut self, pred: Var, target: Array2<f64>) -> Result<Var, NumericsError> {
        let vp = self.value(pred);
        if vp.dim() != target.dim() {
            return Err(mismatch("bce", shape(vp), shape(&target)));
        }
        let n = vp.len() as f64;
        let total: f64 = vp
            .iter()
            .zip(target.iter())
            .map(|(&p, &t)| {
                let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum();
        let rg = self.needs(&[pred]);
        Ok(self.push(
            Array2::from_elem((1, 1), total / n),
            Op::Bce { pred, target },
            rg,
        ))
    }

    /// Mean binary cross-entropy on logits, `bce(sigmoid(z), t)` without the
    /// intermediate rounding.
    pub fn bce_logits(&mut self, logits: Var, target: Array2<f64>) -> Result<Var, NumericsError> {
        let vz = self.value(logits);
        if vz.dim() != target.dim() {
            return Err(mismatch("bce_logits", shape(vz), shape(&target)));
        }
        let n = vz.len() as f64;
        let total: f64 = vz
            .iter()
            .zip(target.iter())
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum();
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Array2::from_elem((1, 1), total / n),
            Op::BceLogits { logits, target },
            rg,
        ))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Array2::from_elem((1, 1), v.sum() / v.len() as f64);
        let rg = self.needs(&[x]);
        self.push(out, Op::Mean(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(x).sum());
        let rg = self.needs(&[x]);
        self.push(out, Op::Sum(x), rg)
    }

    /// Rows of `x` selected by `idx` (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var, NumericsError> {
        let v = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= v.nrows()) {
            return Err(NumericsError::IndexOutOfRange {
                index: bad,
                len: v.nrows(),
            });
        }
        let out = v.select(Axis(0), idx);
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::GatherRows(x, idx.to_vec()), rg))
    }

    /// Columns `start..start + width` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var, NumericsError> {
        let v = self.value(x);
        if start + width > v.ncols() {
            return Err(NumericsError::IndexOutOfRange {
                index: start + width,
                len: v.ncols(),
            });
        }
        let out = v.slice(s![.., start..start + width]).to_owned();
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::SliceCols(x, start), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = parts.first().ok_or(NumericsError::Empty("concat_cols"))?;
        let rows = self.value(*first).nrows();
        for p in parts {
            let v = self.value(*p);
            if v.nrows() != rows {
                return Err(mismatch("concat_cols", (rows, 0), shape(v)));
            }
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        let rg = self.needs(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Reverse pass from the `1 × 1` node `loss`. Gradients of earlier
    /// backward calls are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumericsError> {
        if self.checked {
            if let Some((node, op)) = self.first_non_finite {
                return Err(NumericsError::NonFinite { node, op });
            }
        }
        if self.value(loss).dim() != (1, 1) {
            return Err(NumericsError::NotScalar(self.value(loss).dim()));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, d: Array2<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &d,
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                acc(*a, g.dot(&self.value(*b).t()));
                acc(*b, self.value(*a).t().dot(g));
            }
            Op::MatMulNt(a, b) => {
                // y = a bᵀ: da = g b, db = gᵀ a
                acc(*a, g.dot(self.value(*b)));
                acc(*b, g.t().dot(self.value(*a)));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(x, row) => {
                acc(*x, g.clone());
                acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Mul(a, b) => {
                acc(*a, g * self.value(*b));
                acc(*b, g * self.value(*a));
            }
            Op::Scale(x, c) => acc(*x, g * *c),
            Op::Relu(x) => {
                let mask = self.value(*x).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                acc(*x, g * &mask);
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                acc(*x, g * &y.mapv(|s| s * (1.0 - s)));
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let gy = g * y;
                let dots = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                acc(*x, &gy - &(y * &dots));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = xhat.ncols() as f64;
                acc(*beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                acc(*gamma, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                let dxhat = g * self.value(*gamma);
                let mut dx = Array2::zeros(xhat.dim());
                for (r, mut out) in dx.rows_mut().into_iter().enumerate() {
                    let dh = dxhat.row(r);
                    let xh = xhat.row(r);
                    let sum_dh = dh.sum();
                    let sum_dh_xh = dh.dot(&xh);
                    let k = inv_std[r] / n;
                    for c in 0..out.len() {
                        out[c] = k * (n * dh[c] - sum_dh - xh[c] * sum_dh_xh);
                    }
                }
                acc(*x, dx);
            }
            Op::Bce { pred, target } => {
                let p = self.value(*pred);
                let n = p.len() as f64;
                let scale = g[[0, 0]] / n;
                let mut d = Array2::zeros(p.dim());
                for ((out, &pv), &t) in d.iter_mut().zip(p.iter()).zip(target.iter()) {
                    let pc = pv.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                    *out = scale * (pc - t) / (pc * (1.0 - pc));
                }
                acc(*pred, d);
            }
            Op::BceLogits { logits, target } => {
                let z = self.value(*logits);
                let scale = g[[0, 0]] / z.len() as f64;
                let mut d = z.mapv(sigmoid);
                d -= target;
                d *= scale;
                acc(*logits, d);
            }
            Op::Mean(x) => {
                let v = self.value(*x);
                acc(*x, Array2::from_elem(v.dim(), g[[0, 0]] / v.len() as f64));
            }
            Op::Sum(x) => {
                acc(*x, Array2::from_elem(self.value(*x).dim(), g[[0, 0]]));
            }
            Op::GatherRows(x, idx) => {
                let mut d = Array2::zeros(self.value(*x).dim());
                for (r, &src) in idx.iter().enumerate() {
                    let mut row = d.row_mut(src);
                    row += &g.row(r);
                }
                acc(*x, d);
            }
            Op::SliceCols(x, start) => {
                let mut d = Array2::zeros(self.value(*x).dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                acc(*x, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).ncols();
                    acc(*p, g.slice(s![.., offset..offset + w]).to_owned());
                    offset += w;
                }
            }
        }
    }
}

/// Row-wise softmax of a plain matrix, shared with non-graph callers.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    out
}

/// Logistic function, stable for large `|z|`.
pub fn logistic(z: f64) -> f64 {
    sigmoid(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(Array2::zeros((1, 4)));
        let y = g.softmax_rows(x);
        for &v in g.value(y) {
            assert_eq!(v, 0.25);
        }
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(array![[3.5, 3.5, 3.5, 3.5]]);
        let gamma = g.constant(Array2::ones((1, 4)));
        let beta = g.constant(Array2::zeros((1, 4)));
        let y = g.layer_norm_rows(x, gamma, beta, 1e-5).unwrap();
        assert!(g.value(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_rejects_non_positive_eps() {
        let mut g = Graph::new();
        let x = g.constant(array![[1.0, 2.0]]);
        let gamma = g.constant(Array2::ones((1, 2)));
        let beta = g.constant(Array2::zeros((1, 2)));
        assert!(matches!(
            g.layer_norm_rows(x, gamma, beta, 0.0),
            Err(NumericsError::InvalidEps(_))
        ));
    }

    #[test]
    fn bce_at_half_is_ln2() {
        let mut g = Graph::new();
        let z = g.constant(array![[0.0]]);
        let p = g.sigmoid(z);
        let l = g.bce(p, array![[1.0]]).unwrap();
        assert!((g.scalar(l) - std::f64::consts::LN_2).abs() < 1e-15);
        let l2 = g.bce_logits(z, array![[1.0]]).unwrap();
        assert!((g.scalar(l2) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut g = Graph::new();
        let a = g.constant(Array2::zeros((2, 3)));
        let b = g.constant(Array2::zeros((2, 3)));
        assert!(matches!(
            g.matmul(a, b),
            Err(NumericsError::ShapeMismatch { op: "matmul", .. })
        ));
        assert!(g.add(a, b).is_ok());
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let a = g.param(Array2::zeros((2, 3)));
        assert!(matches!(g.backward(a), Err(NumericsError::NotScalar(_))));
    }

    #[test]
    fn checked_mode_stops_on_nan() {
        let mut g = Graph::checked();
        let a = g.param(array![[f64::NAN]]);
        let l = g.sum(a);
        assert!(matches!(
            g.backward(l),
            Err(NumericsError::NonFinite { .. })
        ));

        let mut g = Graph::new();
        let a = g.param(array![[f64::NAN]]);
        let l = g.sum(a);
        assert!(g.backward(l).is_ok());
        assert_eq!(g.non_finite(), Some((0, "leaf")));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let a = g.constant(array![[1.0, 2.0]]);
        let b = g.param(array![[3.0, 4.0]]);
        let m = g.mul(a, b).unwrap();
        let l = g.sum(m);
        g.backward(l).unwrap();
        assert!(g.grad(a).is_none());
        assert_eq!(g.grad(b).unwrap(), &array![[1.0, 2.0]]);
    }

    #[test]
    fn reused_node_accumulates() {
        // y = x * x  =>  dy/dx = 2x
        let mut g = Graph::new();
        let x = g.param(array![[3.0]]);
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap()[[0, 0]], 6.0);
    }

    #[test]
    fn gather_scatters_into_selected_rows_only() {
        let mut g = Graph::new();
        let x = g.param(Array2::zeros((4, 2)));
        let sel = g.gather_rows(x, &[1, 1, 3]).unwrap();
        let l = g.sum(sel);
        g.backward(l).unwrap();
        assert_eq!(
            g.grad(x).unwrap(),
            &array![[0.0, 0.0], [2.0, 2.0], [0.0, 0.0], [1.0, 1.0]]
        );
        assert!(g.gather_rows(x, &[4]).is_err());
    }
}
