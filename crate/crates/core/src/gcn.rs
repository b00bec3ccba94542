//! K-layer mean-aggregation GCN and its linear (SGCN) counterpart.
//!
//! Layer `l` computes `h_v^l = relu(mean_{u in children(v) ∪ {v}} h_u^{l-1} W_l)`
//! with `h^0 = x`, and the classifier head is `softmax(h^K W_c)`. Because the
//! mean is linear it is taken before the matrix product.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::compgraph::ComputationGraph;
use crate::error::{Error, Result};
use crate::graph::AttributedGraph;
use crate::tape::{softmax_rows, GradTape, Segments, Var};
use crate::tensor::{DenseTensor, TensorError};

pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnParams {
    /// `W_1..W_K`; empty for the K = 0 (logistic regression) case.
    pub layers: Vec<DenseTensor>,
    /// `W_c`, `d_K x 2`.
    pub classifier: DenseTensor,
}

/// Tape handles for one registration of [`GcnParams`].
#[derive(Debug, Clone)]
pub struct GcnVars {
    pub layers: Vec<Var>,
    pub classifier: Var,
}

impl GcnVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v = self.layers.clone();
        v.push(self.classifier);
        v
    }
}

impl GcnParams {
    /// Glorot-initialized parameters with `depth` hidden layers of width
    /// `hidden`.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden: usize, depth: usize, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(depth);
        let mut fan_in = input_dim;
        for _ in 0..depth {
            layers.push(DenseTensor::glorot(fan_in, hidden, rng));
            fan_in = hidden;
        }
        let classifier = DenseTensor::glorot(fan_in, NUM_CLASSES, rng);
        Self { layers, classifier }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn validate(&self, input_dim: usize) -> Result<()> {
        let mut width = input_dim;
        for w in &self.layers {
            if w.rows() != width {
                return Err(TensorError::ShapeMismatch {
                    op: "gcn layer chain",
                    lhs: (1, width),
                    rhs: w.shape(),
                }
                .into());
            }
            width = w.cols();
        }
        if self.classifier.shape() != (width, NUM_CLASSES) {
            return Err(TensorError::ShapeMismatch {
                op: "gcn classifier",
                lhs: (1, width),
                rhs: self.classifier.shape(),
            }
            .into());
        }
        Ok(())
    }

    pub fn register(&self, tape: &mut GradTape) -> GcnVars {
        GcnVars {
            layers: self.layers.iter().map(|w| tape.param(w.clone())).collect(),
            classifier: tape.param(self.classifier.clone()),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DenseTensor> {
        let mut v: Vec<&mut DenseTensor> = self.layers.iter_mut().collect();
        v.push(&mut self.classifier);
        v
    }
}

/// Result of a batched forward pass over sampled trees.
#[derive(Debug, Clone)]
pub struct BatchForward {
    /// One row per tree, in input order.
    pub logits: Var,
    pub probabilities: Var,
    /// Level-1 embeddings `h^1` (after ReLU), one row per level-1 position.
    pub level1: Option<Var>,
    /// `(tree index, position index)` for each row of `level1`.
    pub level1_positions: Vec<(usize, usize)>,
}

/// Evaluates the GCN bottom-up over each tree, batching all positions of a
/// level into one matrix. Positions are evaluated independently, so a node
/// appearing twice is computed twice.
pub fn forward(
    tape: &mut GradTape,
    g: &AttributedGraph,
    params: &GcnVars,
    trees: &[ComputationGraph],
) -> Result<BatchForward> {
    let depth = params.layers.len();
    if trees.is_empty() {
        return Err(Error::EmptyInput("forward batch"));
    }
    if let Some(t) = trees.iter().find(|t| t.depth() != depth) {
        return Err(Error::DepthMismatch {
            expected: depth,
            found: t.depth(),
        });
    }
    // row index of every position inside its level matrix
    let mut row_of: Vec<Vec<usize>> = trees.iter().map(|t| vec![0; t.len()]).collect();
    let mut level_members: Vec<Vec<(usize, usize)>> = vec![Vec::new(); depth + 1];
    for (ti, t) in trees.iter().enumerate() {
        for (pi, p) in t.positions().iter().enumerate() {
            row_of[ti][pi] = level_members[p.level].len();
            level_members[p.level].push((ti, pi));
        }
    }

    let leaf_nodes: Vec<usize> = level_members[0]
        .iter()
        .map(|&(ti, pi)| trees[ti].position(pi).node)
        .collect();
    let mut h = tape.gather_constant(g.features(), &leaf_nodes)?;
    let mut level1 = None;
    for (level, members) in level_members.iter().enumerate().skip(1) {
        let mut segments = Segments::new();
        for &(ti, pi) in members {
            let pos = trees[ti].position(pi);
            let self_row = pos.self_child.map(|s| row_of[ti][s]);
            segments.push(self_row.into_iter().chain(pos.children.iter().map(|&c| row_of[ti][c])));
        }
        let agg = tape.segment_mean(h, segments)?;
        let lin = tape.matmul(agg, params.layers[level - 1])?;
        h = tape.relu(lin)?;
        if level == 1 {
            level1 = Some(h);
        }
    }
    let logits = tape.matmul(h, params.classifier)?;
    let probabilities = tape.softmax(logits)?;
    let level1_positions = if depth >= 1 { level_members[1].clone() } else { Vec::new() };
    Ok(BatchForward {
        logits,
        probabilities,
        level1,
        level1_positions,
    })
}

/// `[v] ∪ Γ_v` for every node, the aggregation pattern of the full graph.
pub fn full_segments(g: &AttributedGraph) -> Segments {
    Segments::from_groups((0..g.node_count()).map(|v| std::iter::once(v).chain(g.neighbors(v).iter().copied())))
}

/// Full-graph forward for every node at once. Equivalent to evaluating each
/// node's full computation tree, with shared sub-results computed once.
/// Returns logits, one row per node.
pub fn forward_full(tape: &mut GradTape, g: &AttributedGraph, params: &GcnVars) -> Result<Var> {
    let segments = full_segments(g);
    let mut h = tape.constant(g.features().clone());
    for &w in &params.layers {
        let agg = tape.segment_mean(h, segments.clone())?;
        let lin = tape.matmul(agg, w)?;
        h = tape.relu(lin)?;
    }
    Ok(tape.matmul(h, params.classifier)?)
}

/// Class probabilities for every node on the full graph, without gradients.
pub fn full_probabilities(g: &AttributedGraph, params: &GcnParams) -> Result<DenseTensor> {
    params.validate(g.feature_dim())?;
    let mut tape = GradTape::new();
    let vars = params.register(&mut tape);
    let logits = forward_full(&mut tape, g, &vars)?;
    Ok(softmax_rows(tape.value(logits)))
}

/// One application of the self-loop-augmented row-normalized adjacency:
/// row `v` becomes the mean of rows `{v} ∪ Γ_v`.
pub fn mean_propagate(g: &AttributedGraph, x: &DenseTensor) -> DenseTensor {
    let mut out = DenseTensor::zeros(x.rows(), x.cols());
    for v in 0..g.node_count() {
        let inv = 1.0 / (g.degree(v) + 1) as f64;
        let row = out.row_mut(v);
        for u in std::iter::once(v).chain(g.neighbors(v).iter().copied()) {
            for (o, val) in row.iter_mut().zip(x.row(u)) {
                *o += val * inv;
            }
        }
    }
    out
}

/// Linear GCN logits `(Ã X) W` where `Ã` is the K-step mean-aggregation walk.
pub fn sgcn_forward(g: &AttributedGraph, w: &DenseTensor, steps: usize) -> Result<DenseTensor> {
    if w.rows() != g.feature_dim() {
        return Err(TensorError::ShapeMismatch {
            op: "sgcn_forward",
            lhs: g.features().shape(),
            rhs: w.shape(),
        }
        .into());
    }
    let mut h = g.features().clone();
    for _ in 0..steps {
        h = mean_propagate(g, &h);
    }
    Ok(h.matmul(w)?)
}

/// Hard labels from probability rows; ties go to class 0.
pub fn predict(probabilities: &DenseTensor) -> Result<Vec<u8>> {
    (0..probabilities.rows())
        .map(|r| {
            let row = probabilities.row(r);
            if (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::NotNormalized { row: r });
            }
            let best = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
            Ok(best.0 as u8)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compgraph::build_full;

    fn rows(r: &[Vec<f64>]) -> DenseTensor {
        DenseTensor::from_rows(r).unwrap()
    }

    #[test]
    fn predict_argmax_with_ties_to_zero() {
        let p = rows(&[vec![0.2, 0.8], vec![0.5, 0.5], vec![0.9, 0.1]]);
        assert_eq!(predict(&p).unwrap(), vec![1, 0, 0]);
    }

    #[test]
    fn predict_rejects_unnormalized_rows() {
        let p = rows(&[vec![0.2, 0.7]]);
        assert!(matches!(predict(&p), Err(Error::NotNormalized { row: 0 })));
    }

    #[test]
    fn sgcn_zero_steps_is_plain_linear() {
        let g = AttributedGraph::new(
            vec!["a".into(), "b".into()],
            rows(&[vec![1.0, 2.0], vec![3.0, -1.0]]),
            vec![0, 1],
            vec![None, None],
            vec![(0, 1)],
            2,
        )
        .unwrap();
        let w = rows(&[vec![1.0, 0.5], vec![-2.0, 1.0]]);
        assert_eq!(sgcn_forward(&g, &w, 0).unwrap(), g.features().matmul(&w).unwrap());
        // one step over a single edge averages both endpoints
        let h = sgcn_forward(&g, &DenseTensor::identity(2), 1).unwrap();
        assert_eq!(h.row(0), &[2.0, 0.5]);
    }

    #[test]
    fn isolated_node_uses_self_term_only() {
        let g = AttributedGraph::new(
            vec!["a".into(), "b".into(), "c".into()],
            rows(&[vec![1.0, -2.0], vec![0.5, 0.5], vec![2.0, 1.0]]),
            vec![0, 1, 1],
            vec![None; 3],
            vec![(1, 2)],
            2,
        )
        .unwrap();
        let params = GcnParams {
            layers: vec![DenseTensor::identity(2)],
            classifier: DenseTensor::identity(2),
        };
        let mut tape = GradTape::new();
        let vars = params.register(&mut tape);
        let tree = build_full(&g, 0, 1).unwrap();
        let out = forward(&mut tape, &g, &vars, &[tree]).unwrap();
        // relu([1, -2]) = [1, 0]
        assert_eq!(tape.value(out.level1.unwrap()).row(0), &[1.0, 0.0]);
    }

    #[test]
    fn depth_mismatch_is_rejected() {
        let g = AttributedGraph::new(
            vec!["a".into(), "b".into()],
            rows(&[vec![1.0], vec![2.0]]),
            vec![0, 1],
            vec![None, None],
            vec![(0, 1)],
            2,
        )
        .unwrap();
        let params = GcnParams {
            layers: vec![DenseTensor::identity(1)],
            classifier: DenseTensor::filled(1, 2, 1.0),
        };
        let mut tape = GradTape::new();
        let vars = params.register(&mut tape);
        let tree = build_full(&g, 0, 2).unwrap();
        assert!(matches!(
            forward(&mut tape, &g, &vars, &[tree]),
            Err(Error::DepthMismatch { expected: 1, found: 2 })
        ));
    }
}
