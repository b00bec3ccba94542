//! Reverse-mode gradient tape over [`DenseTensor`] values.
//!
//! Every primitive evaluates eagerly, checks that its output is finite and
//! appends one node to the tape. [`GradTape::backward`] consumes the tape and
//! walks the nodes in reverse execution order exactly once, so a tape cannot
//! be replayed twice.
//!
//! ```
//! use fairsample::tape::GradTape;
//! use fairsample::tensor::DenseTensor;
//!
//! let mut tape = GradTape::new();
//! let w = tape.param(DenseTensor::filled(2, 2, 0.5));
//! let loss = tape.sum(w).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(w).data(), &[1.0, 1.0, 1.0, 1.0]);
//! ```

use crate::tensor::{DenseTensor, TensorError};

/// Handle to a node on a [`GradTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row groups in CSR layout: segment `s` covers
/// `indices[offsets[s]..offsets[s + 1]]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Segments {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl Segments {
    pub fn new() -> Self {
        Self {
            offsets: vec![0],
            indices: Vec::new(),
        }
    }

    pub fn from_groups<I, G>(groups: I) -> Self
    where
        I: IntoIterator<Item = G>,
        G: IntoIterator<Item = usize>,
    {
        let mut s = Self::new();
        for g in groups {
            s.push(g);
        }
        s
    }

    pub fn push<G: IntoIterator<Item = usize>>(&mut self, members: G) {
        self.indices.extend(members);
        self.offsets.push(self.indices.len());
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn segment(&self, s: usize) -> &[usize] {
        &self.indices[self.offsets[s]..self.offsets[s + 1]]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        (0..self.len()).map(move |s| self.segment(s))
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    RowMean(Var),
    Relu(Var),
    Log(Var),
    GatherRows(Var, Vec<usize>),
    SegmentMean(Var, Segments),
    SegmentLogSoftmax(Var, Vec<usize>),
    PairDot(Var, Vec<(usize, usize)>),
    HCat(Var, Var),
    Softmax(Var),
    SelectColumn(Var, usize),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: DenseTensor,
    },
    AbsMeanDiff {
        input: Var,
        coeffs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: DenseTensor,
    op: Op,
    requires_grad: bool,
}

/// Records primitive operations for one forward pass.
#[derive(Debug, Default)]
pub struct GradTape {
    nodes: Vec<Node>,
    params: Vec<Var>,
}

fn mismatch(op: &'static str, a: &DenseTensor, b: &DenseTensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    }
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DenseTensor {
        &self.nodes[v.0].value
    }

    /// Registered parameters, in registration order.
    pub fn params(&self) -> &[Var] {
        &self.params
    }

    fn push(&mut self, value: DenseTensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: DenseTensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Constant,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: DenseTensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Param,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.push(v);
        v
    }

    /// Constant made of selected rows of `source`, without copying `source`
    /// onto the tape.
    pub fn gather_constant(&mut self, source: &DenseTensor, idx: &[usize]) -> Result<Var, TensorError> {
        let value = source.gather_rows(idx)?;
        Ok(self.constant(value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg, "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(mismatch("add", x, y));
        }
        let mut value = x.clone();
        value.add_assign(y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg, "add")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(mismatch("mul", x, y));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = DenseTensor::from_vec(x.rows(), x.cols(), data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg, "mul")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        let value = self.value(a).scaled(c);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg, "scale")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = DenseTensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg, "sum")
    }

    /// Mean over rows, giving a `1 x cols` row.
    pub fn row_mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let x = self.value(a);
        let mut value = DenseTensor::zeros(1, x.cols());
        if x.rows() > 0 {
            let inv = 1.0 / x.rows() as f64;
            for r in 0..x.rows() {
                for (o, v) in value.row_mut(0).iter_mut().zip(x.row(r)) {
                    *o += v * inv;
                }
            }
        }
        let rg = self.rg(a);
        self.push(value, Op::RowMean(a), rg, "row_mean")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        let x = self.value(a);
        let data = x.data().iter().map(|v| v.max(0.0)).collect();
        let value = DenseTensor::from_vec(x.rows(), x.cols(), data)?;
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg, "relu")
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        let x = self.value(a);
        let data = x.data().iter().map(|v| v.ln()).collect();
        let value = DenseTensor::from_vec(x.rows(), x.cols(), data)?;
        let rg = self.rg(a);
        self.push(value, Op::Log(a), rg, "log")
    }

    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var, TensorError> {
        let value = self.value(a).gather_rows(&idx)?;
        let rg = self.rg(a);
        self.push(value, Op::GatherRows(a, idx), rg, "gather_rows")
    }

    /// Output row `s` is the mean of the input rows listed in segment `s`.
    /// Empty segments give a zero row.
    pub fn segment_mean(&mut self, a: Var, segments: Segments) -> Result<Var, TensorError> {
        let x = self.value(a);
        let mut value = DenseTensor::zeros(segments.len(), x.cols());
        for (s, members) in segments.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            let inv = 1.0 / members.len() as f64;
            for &m in members {
                if m >= x.rows() {
                    return Err(TensorError::IndexOutOfRange {
                        op: "segment_mean",
                        index: m,
                        len: x.rows(),
                    });
                }
                for (o, v) in value.row_mut(s).iter_mut().zip(x.row(m)) {
                    *o += v * inv;
                }
            }
        }
        let rg = self.rg(a);
        self.push(value, Op::SegmentMean(a, segments), rg, "segment_mean")
    }

    /// Log-softmax of a column vector within contiguous ranges
    /// `offsets[s]..offsets[s + 1]`.
    pub fn segment_log_softmax(&mut self, a: Var, offsets: Vec<usize>) -> Result<Var, TensorError> {
        let x = self.value(a);
        if x.cols() != 1 || offsets.last().copied() != Some(x.rows()) || offsets.first() != Some(&0) {
            return Err(TensorError::ShapeMismatch {
                op: "segment_log_softmax",
                lhs: x.shape(),
                rhs: (offsets.last().copied().unwrap_or(0), 1),
            });
        }
        let mut out = vec![0.0; x.rows()];
        for w in offsets.windows(2) {
            let seg = &x.data()[w[0]..w[1]];
            if seg.is_empty() {
                continue;
            }
            let max = seg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + seg.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for (o, v) in out[w[0]..w[1]].iter_mut().zip(seg) {
                *o = v - lse;
            }
        }
        let value = DenseTensor::column(out);
        let rg = self.rg(a);
        self.push(value, Op::SegmentLogSoftmax(a, offsets), rg, "segment_log_softmax")
    }

    /// Column of row dot products `a[i] . a[j]` for each pair.
    pub fn pair_dot(&mut self, a: Var, pairs: Vec<(usize, usize)>) -> Result<Var, TensorError> {
        let x = self.value(a);
        let mut out = Vec::with_capacity(pairs.len());
        for &(i, j) in &pairs {
            let n = x.rows();
            if i >= n || j >= n {
                return Err(TensorError::IndexOutOfRange {
                    op: "pair_dot",
                    index: i.max(j),
                    len: n,
                });
            }
            out.push(x.row(i).iter().zip(x.row(j)).map(|(p, q)| p * q).sum());
        }
        let value = DenseTensor::column(out);
        let rg = self.rg(a);
        self.push(value, Op::PairDot(a, pairs), rg, "pair_dot")
    }

    /// Horizontal concatenation of two matrices with equal row counts.
    pub fn hcat(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.rows() != y.rows() {
            return Err(mismatch("hcat", x, y));
        }
        let cols = x.cols() + y.cols();
        let mut data = Vec::with_capacity(x.rows() * cols);
        for r in 0..x.rows() {
            data.extend_from_slice(x.row(r));
            data.extend_from_slice(y.row(r));
        }
        let value = DenseTensor::from_vec(x.rows(), cols, data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::HCat(a, b), rg, "hcat")
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(value, Op::Softmax(a), rg, "softmax")
    }

    pub fn select_column(&mut self, a: Var, col: usize) -> Result<Var, TensorError> {
        let x = self.value(a);
        if col >= x.cols() {
            return Err(TensorError::IndexOutOfRange {
                op: "select_column",
                index: col,
                len: x.cols(),
            });
        }
        let value = DenseTensor::column((0..x.rows()).map(|r| x.get(r, col)).collect());
        let rg = self.rg(a);
        self.push(value, Op::SelectColumn(a, col), rg, "select_column")
    }

    /// Mean softmax cross-entropy of `logits` rows against class indices.
    pub fn softmax_ce(&mut self, logits: Var, labels: Vec<usize>) -> Result<Var, TensorError> {
        let x = self.value(logits);
        if labels.len() != x.rows() || x.rows() == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "softmax_ce",
                lhs: x.shape(),
                rhs: (labels.len(), 1),
            });
        }
        let probs = softmax_rows(x);
        let mut loss = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            if y >= x.cols() {
                return Err(TensorError::IndexOutOfRange {
                    op: "softmax_ce",
                    index: y,
                    len: x.cols(),
                });
            }
            let row = x.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
        }
        let value = DenseTensor::scalar(loss / labels.len() as f64);
        let rg = self.rg(logits);
        self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            },
            rg,
            "softmax_ce",
        )
    }

    /// `sum_a | mean_{g = a} x - mean_{g != a} x |` over a column `x` with
    /// per-row group ids. A group term is skipped when either side is empty.
    /// The subgradient of `|.|` at zero is taken as zero.
    pub fn abs_mean_diff(&mut self, input: Var, groups: &[usize], zeta: usize) -> Result<Var, TensorError> {
        let x = self.value(input);
        if x.cols() != 1 || groups.len() != x.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "abs_mean_diff",
                lhs: x.shape(),
                rhs: (groups.len(), 1),
            });
        }
        let n = groups.len();
        let mut count = vec![0usize; zeta];
        let mut total = vec![0.0; zeta];
        for (&g, &v) in groups.iter().zip(x.data()) {
            if g >= zeta {
                return Err(TensorError::IndexOutOfRange {
                    op: "abs_mean_diff",
                    index: g,
                    len: zeta,
                });
            }
            count[g] += 1;
            total[g] += v;
        }
        let grand: f64 = total.iter().sum();
        let mut value = 0.0;
        let mut coeffs = vec![0.0; n];
        for a in 0..zeta {
            let inside = count[a];
            let outside = n - inside;
            if inside == 0 || outside == 0 {
                continue;
            }
            let gap = total[a] / inside as f64 - (grand - total[a]) / outside as f64;
            value += gap.abs();
            let sign = if gap > 0.0 {
                1.0
            } else if gap < 0.0 {
                -1.0
            } else {
                0.0
            };
            for (c, &g) in coeffs.iter_mut().zip(groups) {
                *c += if g == a {
                    sign / inside as f64
                } else {
                    -sign / outside as f64
                };
            }
        }
        let rg = self.rg(input);
        self.push(DenseTensor::scalar(value), Op::AbsMeanDiff { input, coeffs }, rg, "abs_mean_diff")
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients, TensorError> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(TensorError::NotScalar(shape));
        }
        let mut grads: Vec<Option<DenseTensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(DenseTensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &DenseTensor, grads: &mut [Option<DenseTensor>]) -> Result<(), TensorError> {
        let nodes = &self.nodes;
        let mut acc = |v: Var, delta: DenseTensor| -> Result<(), TensorError> {
            if !nodes[v.0].requires_grad {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => {
                    *slot = Some(delta);
                    Ok(())
                }
            }
        };
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
                if nodes[a.0].requires_grad {
                    acc(*a, g.matmul(&y.transpose())?)?;
                }
                if nodes[b.0].requires_grad {
                    acc(*b, x.transpose().matmul(g)?)?;
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.clone())?;
            }
            Op::Mul(a, b) => {
                let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
                let ga = g.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
                let gb = g.data().iter().zip(x.data()).map(|(p, q)| p * q).collect();
                acc(*a, DenseTensor::from_vec(x.rows(), x.cols(), ga)?)?;
                acc(*b, DenseTensor::from_vec(y.rows(), y.cols(), gb)?)?;
            }
            Op::Scale(a, c) => acc(*a, g.scaled(*c))?,
            Op::Sum(a) => {
                let (r, c) = nodes[a.0].value.shape();
                acc(*a, DenseTensor::filled(r, c, g.get(0, 0)))?;
            }
            Op::RowMean(a) => {
                let (r, c) = nodes[a.0].value.shape();
                let mut d = DenseTensor::zeros(r, c);
                let inv = 1.0 / r.max(1) as f64;
                for i in 0..r {
                    for (o, v) in d.row_mut(i).iter_mut().zip(g.row(0)) {
                        *o = v * inv;
                    }
                }
                acc(*a, d)?;
            }
            Op::Relu(a) => {
                let x = &nodes[a.0].value;
                let data = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(d, v)| if *v > 0.0 { *d } else { 0.0 })
                    .collect();
                acc(*a, DenseTensor::from_vec(x.rows(), x.cols(), data)?)?;
            }
            Op::Log(a) => {
                let x = &nodes[a.0].value;
                let data = g.data().iter().zip(x.data()).map(|(d, v)| d / v).collect();
                acc(*a, DenseTensor::from_vec(x.rows(), x.cols(), data)?)?;
            }
            Op::GatherRows(a, idx) => {
                let (r, c) = nodes[a.0].value.shape();
                let mut d = DenseTensor::zeros(r, c);
                for (k, &i) in idx.iter().enumerate() {
                    for (o, v) in d.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                acc(*a, d)?;
            }
            Op::SegmentMean(a, segments) => {
                let (r, c) = nodes[a.0].value.shape();
                let mut d = DenseTensor::zeros(r, c);
                for (s, members) in segments.iter().enumerate() {
                    if members.is_empty() {
                        continue;
                    }
                    let inv = 1.0 / members.len() as f64;
                    for &m in members {
                        for (o, v) in d.row_mut(m).iter_mut().zip(g.row(s)) {
                            *o += v * inv;
                        }
                    }
                }
                acc(*a, d)?;
            }
            Op::SegmentLogSoftmax(a, offsets) => {
                let y = &node.value;
                let mut d = vec![0.0; y.rows()];
                for w in offsets.windows(2) {
                    let total: f64 = g.data()[w[0]..w[1]].iter().sum();
                    for (i, di) in d.iter_mut().enumerate().take(w[1]).skip(w[0]) {
                        *di = g.data()[i] - y.data()[i].exp() * total;
                    }
                }
                acc(*a, DenseTensor::column(d))?;
            }
            Op::PairDot(a, pairs) => {
                let x = &nodes[a.0].value;
                let mut d = DenseTensor::zeros(x.rows(), x.cols());
                for (p, &(i, j)) in pairs.iter().enumerate() {
                    let w = g.data()[p];
                    if w == 0.0 {
                        continue;
                    }
                    for k in 0..x.cols() {
                        let (xi, xj) = (x.get(i, k), x.get(j, k));
                        d.row_mut(i)[k] += w * xj;
                        d.row_mut(j)[k] += w * xi;
                    }
                }
                acc(*a, d)?;
            }
            Op::HCat(a, b) => {
                let ca = nodes[a.0].value.cols();
                let cb = nodes[b.0].value.cols();
                let mut da = DenseTensor::zeros(g.rows(), ca);
                let mut db = DenseTensor::zeros(g.rows(), cb);
                for r in 0..g.rows() {
                    da.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    db.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                }
                acc(*a, da)?;
                acc(*b, db)?;
            }
            Op::Softmax(a) => {
                let p = &node.value;
                let mut d = DenseTensor::zeros(p.rows(), p.cols());
                for r in 0..p.rows() {
                    let dot: f64 = p.row(r).iter().zip(g.row(r)).map(|(x, y)| x * y).sum();
                    for c in 0..p.cols() {
                        d.set(r, c, p.get(r, c) * (g.get(r, c) - dot));
                    }
                }
                acc(*a, d)?;
            }
            Op::SelectColumn(a, col) => {
                let (r, c) = nodes[a.0].value.shape();
                let mut d = DenseTensor::zeros(r, c);
                for i in 0..r {
                    d.set(i, *col, g.get(i, 0));
                }
                acc(*a, d)?;
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let scale = g.get(0, 0) / labels.len() as f64;
                let mut d = probs.clone();
                for (r, &y) in labels.iter().enumerate() {
                    let v = d.get(r, y);
                    d.set(r, y, v - 1.0);
                }
                acc(*logits, d.scaled(scale))?;
            }
            Op::AbsMeanDiff { input, coeffs } => {
                let s = g.get(0, 0);
                acc(*input, DenseTensor::column(coeffs.iter().map(|c| c * s).collect()))?;
            }
        }
        Ok(())
    }
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(x: &DenseTensor) -> DenseTensor {
    let mut out = x.clone();
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Gradients produced by [`GradTape::backward`], addressable by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseTensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; zeros when `v` did not influence it.
    pub fn get(&self, v: Var) -> DenseTensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                DenseTensor::zeros(r, c)
            }
        }
    }

    pub fn get_ref(&self, v: Var) -> Option<&DenseTensor> {
        self.grads[v.0].as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> DenseTensor {
        DenseTensor::from_rows(rows).unwrap()
    }

    #[test]
    fn relu_clips_negatives() {
        let mut tape = GradTape::new();
        let x = tape.constant(t(&[vec![-1.0, 2.0]]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln2() {
        let mut tape = GradTape::new();
        let x = tape.constant(t(&[vec![0.0, 0.0]]));
        let l = tape.softmax_ce(x, vec![0]).unwrap();
        assert!((tape.value(l).get(0, 0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut tape = GradTape::new();
        let w = tape.param(t(&[vec![1.0, -2.0], vec![3.0, 0.5]]));
        let l = tape.sum(w).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(w), DenseTensor::filled(2, 2, 1.0));
    }

    #[test]
    fn unused_param_has_zero_gradient() {
        let mut tape = GradTape::new();
        let w = tape.param(DenseTensor::filled(2, 3, 1.0));
        let unused = tape.param(DenseTensor::filled(4, 1, 7.0));
        let l = tape.sum(w).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(unused), DenseTensor::zeros(4, 1));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = GradTape::new();
        let w = tape.param(DenseTensor::filled(2, 2, 1.0));
        assert!(matches!(tape.backward(w), Err(TensorError::NotScalar((2, 2)))));
    }

    #[test]
    fn log_of_zero_is_reported() {
        let mut tape = GradTape::new();
        let x = tape.constant(DenseTensor::scalar(0.0));
        assert!(matches!(tape.log(x), Err(TensorError::NonFinite { op: "log" })));
    }

    #[test]
    fn abs_mean_diff_two_groups() {
        let mut tape = GradTape::new();
        let x = tape.constant(DenseTensor::column(vec![1.0, 0.5, 0.5, 0.0]));
        let l = tape.abs_mean_diff(x, &[0, 0, 1, 1], 2).unwrap();
        // group means 0.75 and 0.25: each of the two terms contributes 0.5
        assert!((tape.value(l).get(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn abs_mean_diff_single_group_is_zero() {
        let mut tape = GradTape::new();
        let x = tape.constant(DenseTensor::column(vec![1.0, 0.2]));
        let l = tape.abs_mean_diff(x, &[1, 1], 2).unwrap();
        assert_eq!(tape.value(l).get(0, 0), 0.0);
    }

    #[test]
    fn segment_log_softmax_normalizes() {
        let mut tape = GradTape::new();
        let x = tape.constant(DenseTensor::column(vec![1.0, 2.0, 3.0, -1.0, 4.0]));
        let y = tape.segment_log_softmax(x, vec![0, 3, 5]).unwrap();
        let v = tape.value(y).data();
        let s1: f64 = v[..3].iter().map(|x| x.exp()).sum();
        let s2: f64 = v[3..].iter().map(|x| x.exp()).sum();
        assert!((s1 - 1.0).abs() < 1e-12 && (s2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let mut tape = GradTape::new();
            let w = tape.param(t(&[vec![0.3, -0.7], vec![1.1, 0.2]]));
            let x = tape.constant(t(&[vec![1.0, 2.0], vec![-0.5, 0.25], vec![0.1, 0.9]]));
            let h = tape.matmul(x, w).unwrap();
            let l = tape.softmax_ce(h, vec![0, 1, 1]).unwrap();
            tape.backward(l).unwrap().get(w)
        };
        assert_eq!(run().data(), run().data());
    }
}
