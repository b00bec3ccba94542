//! Child-sampling policies and the policy-gradient update of the learnable
//! one.
//!
//! The learnable policy scores a candidate child `v_j` of `v_i` with
//! `q = a_0 * q_sim + a_1 * q_fair`, where `q_sim` is the dot product of the
//! transformed features `x W_s` and `q_fair = 1 / |Γ_{v_i} ∩ V_{s_j}|`.
//! Scores are turned into a distribution over `Γ_{v_i}` with a softmax, since
//! raw scores can be negative.
//!
//! Sampling itself is not differentiable. The sampler is trained through the
//! surrogate
//!
//! ```text
//! S = 1/|T'_1| * sum_i < dL/dh1_i , mean_{j in p(v_i)} log P(v_j | v_i) * (x_j W_1) >
//! ```
//!
//! where `dL/dh1_i` and `W_1` are treated as constants, so `∇_θ S` is the
//! log-derivative estimate of `∇_θ L`.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::compgraph::{ChildSampler, ComputationGraph};
use crate::error::{Error, Result};
use crate::graph::AttributedGraph;
use crate::tape::{GradTape, Var};
use crate::tensor::{DenseTensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerVariant {
    Fairsample,
    Uniform,
    Stratified,
}

impl std::str::FromStr for SamplerVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fairsample" => Ok(Self::Fairsample),
            "uniform" => Ok(Self::Uniform),
            "stratified" => Ok(Self::Stratified),
            other => Err(Error::InvalidConfig(format!("unknown sampler {other:?}"))),
        }
    }
}

pub const DEFAULT_TRANSFORMED_DIM: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerPolicy {
    pub variant: SamplerVariant,
    /// `W_s`, `d x d_s`.
    pub transform: DenseTensor,
    /// Attention vector `a`, stored as a `2 x 1` column.
    pub attention: DenseTensor,
}

impl SamplerPolicy {
    pub fn new<R: Rng + ?Sized>(variant: SamplerVariant, input_dim: usize, transformed_dim: usize, rng: &mut R) -> Self {
        Self {
            variant,
            transform: DenseTensor::glorot(input_dim, transformed_dim, rng),
            attention: DenseTensor::column(vec![1.0, 1.0]),
        }
    }

    pub fn uniform(input_dim: usize) -> Self {
        Self::fixed(SamplerVariant::Uniform, input_dim)
    }

    pub fn stratified(input_dim: usize) -> Self {
        Self::fixed(SamplerVariant::Stratified, input_dim)
    }

    fn fixed(variant: SamplerVariant, input_dim: usize) -> Self {
        Self {
            variant,
            transform: DenseTensor::zeros(input_dim, DEFAULT_TRANSFORMED_DIM),
            attention: DenseTensor::column(vec![1.0, 1.0]),
        }
    }

    pub fn is_learnable(&self) -> bool {
        self.variant == SamplerVariant::Fairsample
    }

    pub fn attention_weights(&self) -> [f64; 2] {
        [self.attention.get(0, 0), self.attention.get(1, 0)]
    }

    pub fn set_attention(&mut self, a: [f64; 2]) {
        self.attention = DenseTensor::column(a.to_vec());
    }

    /// Precomputes `X W_s` for fast repeated sampling.
    pub fn prepare<'a>(&'a self, g: &AttributedGraph) -> Result<PreparedPolicy<'a>> {
        let transformed = if self.is_learnable() {
            Some(g.features().matmul(&self.transform)?)
        } else {
            None
        };
        Ok(PreparedPolicy {
            policy: self,
            transformed,
        })
    }

    /// `P(· | v)` over `Γ_v` in adjacency order.
    pub fn child_distribution(&self, g: &AttributedGraph, v: usize) -> Result<Vec<f64>> {
        g.check_node(v)?;
        let xi = project(g.feature(v), &self.transform);
        distribution_with(self, g, v, |u| dot(&xi, &project(g.feature(u), &self.transform)))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project(x: &[f64], w: &DenseTensor) -> Vec<f64> {
    let mut out = vec![0.0; w.cols()];
    for (k, &xk) in x.iter().enumerate() {
        for (o, wk) in out.iter_mut().zip(w.row(k)) {
            *o += xk * wk;
        }
    }
    out
}

/// Similarity score `(x_i W_s) . (x_j W_s)`.
pub fn q_sim(policy: &SamplerPolicy, g: &AttributedGraph, vi: usize, vj: usize) -> Result<f64> {
    if policy.transform.rows() != g.feature_dim() {
        return Err(TensorError::ShapeMismatch {
            op: "q_sim",
            lhs: g.features().shape(),
            rhs: policy.transform.shape(),
        }
        .into());
    }
    g.check_node(vi)?;
    g.check_node(vj)?;
    Ok(dot(
        &project(g.feature(vi), &policy.transform),
        &project(g.feature(vj), &policy.transform),
    ))
}

/// Stratification score `1 / |Γ_{v_i} ∩ V_{s_j}|`.
pub fn q_fair(g: &AttributedGraph, vi: usize, vj: usize) -> Result<f64> {
    g.check_node(vi)?;
    g.check_node(vj)?;
    if !g.has_edge(vi, vj) {
        return Err(Error::NotNeighbor { parent: vi, child: vj });
    }
    Ok(1.0 / g.neighbor_group_count(vi, g.sensitive_of(vj)) as f64)
}

fn distribution_with<F>(policy: &SamplerPolicy, g: &AttributedGraph, v: usize, sim: F) -> Result<Vec<f64>>
where
    F: Fn(usize) -> f64,
{
    let candidates = g.neighbors(v);
    if candidates.is_empty() {
        return Err(Error::EmptyNeighborhood(v));
    }
    let counts = g.neighbor_group_counts(v);
    match policy.variant {
        SamplerVariant::Uniform => Ok(vec![1.0 / candidates.len() as f64; candidates.len()]),
        SamplerVariant::Stratified => {
            let present = counts.iter().filter(|&&c| c > 0).count() as f64;
            Ok(candidates
                .iter()
                .map(|&u| 1.0 / (present * counts[g.sensitive_of(u)] as f64))
                .collect())
        }
        SamplerVariant::Fairsample => {
            let [a_sim, a_fair] = policy.attention_weights();
            let scores: Vec<f64> = candidates
                .iter()
                .map(|&u| {
                    let fair = 1.0 / counts[g.sensitive_of(u)] as f64;
                    let s = if a_sim == 0.0 { 0.0 } else { a_sim * sim(u) };
                    s + a_fair * fair
                })
                .collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            Ok(exps.into_iter().map(|e| e / total).collect())
        }
    }
}

/// A policy with its feature transform applied to every node up front.
pub struct PreparedPolicy<'a> {
    policy: &'a SamplerPolicy,
    transformed: Option<DenseTensor>,
}

impl ChildSampler for PreparedPolicy<'_> {
    fn distribution(&self, g: &AttributedGraph, parent: usize) -> Result<Vec<f64>> {
        match &self.transformed {
            Some(z) => distribution_with(self.policy, g, parent, |u| dot(z.row(parent), z.row(u))),
            None => distribution_with(self.policy, g, parent, |_| 0.0),
        }
    }
}

impl ChildSampler for SamplerPolicy {
    fn distribution(&self, g: &AttributedGraph, parent: usize) -> Result<Vec<f64>> {
        self.child_distribution(g, parent)
    }
}

/// Classifier-side signal the sampler learns from: the gradient of the loss
/// w.r.t. each level-1 embedding of a batch, and the first-layer weights used
/// to map raw child features into the same space.
pub struct LevelOneSignal<'a> {
    pub trees: &'a [ComputationGraph],
    /// `(tree, position)` for each row of `grad_h1`.
    pub positions: &'a [(usize, usize)],
    pub grad_h1: &'a DenseTensor,
    pub first_layer: &'a DenseTensor,
}

/// Tape handles of the sampler parameters.
#[derive(Debug, Clone, Copy)]
pub struct PolicyVars {
    pub transform: Var,
    pub attention: Var,
}

/// Records the surrogate `S` on `tape`. Level-1 positions without sampled
/// children contribute zero but still count in `|T'_1|`.
pub fn surrogate(tape: &mut GradTape, vars: PolicyVars, g: &AttributedGraph, signal: &LevelOneSignal<'_>) -> Result<Var> {
    if signal.grad_h1.rows() != signal.positions.len() {
        return Err(TensorError::ShapeMismatch {
            op: "surrogate",
            lhs: signal.grad_h1.shape(),
            rhs: (signal.positions.len(), 1),
        }
        .into());
    }
    let total_positions = signal.positions.len().max(1) as f64;
    let mut local: HashMap<usize, usize> = HashMap::new();
    let mut local_nodes = Vec::new();
    let mut intern = |v: usize, local_nodes: &mut Vec<usize>| {
        *local.entry(v).or_insert_with(|| {
            local_nodes.push(v);
            local_nodes.len() - 1
        })
    };
    let mut pairs = Vec::new();
    let mut fair = Vec::new();
    let mut offsets = vec![0];
    let mut chosen = Vec::new();
    let mut weights = Vec::new();

    for (row, &(ti, pi)) in signal.positions.iter().enumerate() {
        let tree = signal.trees.get(ti).ok_or(Error::EmptyInput("surrogate tree"))?;
        let pos = tree.position(pi);
        if pos.children.is_empty() {
            continue;
        }
        let parent = pos.node;
        let candidates = g.neighbors(parent);
        let base = pairs.len();
        let pl = intern(parent, &mut local_nodes);
        for &u in candidates {
            let ul = intern(u, &mut local_nodes);
            pairs.push((pl, ul));
            fair.push(1.0 / g.neighbor_group_count(parent, g.sensitive_of(u)) as f64);
        }
        offsets.push(pairs.len());
        let grad = signal.grad_h1.row(row);
        let norm = total_positions * pos.children.len() as f64;
        for &c in &pos.children {
            let child = tree.position(c).node;
            let idx = candidates
                .binary_search(&child)
                .map_err(|_| Error::NotNeighbor { parent, child })?;
            let mapped = project(g.feature(child), signal.first_layer);
            chosen.push(base + idx);
            weights.push(dot(grad, &mapped) / norm);
        }
    }

    if pairs.is_empty() {
        let zero = tape.constant(DenseTensor::scalar(0.0));
        return Ok(zero);
    }
    let x = tape.gather_constant(g.features(), &local_nodes)?;
    let z = tape.matmul(x, vars.transform)?;
    let sim = tape.pair_dot(z, pairs)?;
    let fair = tape.constant(DenseTensor::column(fair));
    let scores = tape.hcat(sim, fair)?;
    let q = tape.matmul(scores, vars.attention)?;
    let log_p = tape.segment_log_softmax(q, offsets)?;
    let picked = tape.gather_rows(log_p, chosen)?;
    let w = tape.constant(DenseTensor::column(weights));
    let weighted = tape.mul(picked, w)?;
    Ok(tape.sum(weighted)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGradient {
    pub transform: DenseTensor,
    pub attention: DenseTensor,
    pub surrogate: f64,
}

/// `∇_θ S` for the learnable policy; zero for fixed policies.
pub fn policy_gradient_step(policy: &SamplerPolicy, g: &AttributedGraph, signal: &LevelOneSignal<'_>) -> Result<PolicyGradient> {
    if !policy.is_learnable() {
        return Ok(PolicyGradient {
            transform: DenseTensor::zeros(policy.transform.rows(), policy.transform.cols()),
            attention: DenseTensor::zeros(2, 1),
            surrogate: 0.0,
        });
    }
    let mut tape = GradTape::new();
    let vars = PolicyVars {
        transform: tape.param(policy.transform.clone()),
        attention: tape.param(policy.attention.clone()),
    };
    let s = surrogate(&mut tape, vars, g, signal)?;
    let value = tape.value(s).get(0, 0);
    let grads = tape.backward(s)?;
    Ok(PolicyGradient {
        transform: grads.get(vars.transform),
        attention: grads.get(vars.attention),
        surrogate: value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// Node 0 with neighbors 1,2,3 in group 0 and 4 in group 1.
    fn hub() -> AttributedGraph {
        let feats = DenseTensor::from_rows(&[
            vec![1.0, 0.0],
            vec![0.5, 0.5],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
            vec![-1.0, 0.5],
        ])
        .unwrap();
        AttributedGraph::new(
            (0..5).map(|i| i.to_string()).collect(),
            feats,
            vec![0, 0, 0, 0, 1],
            vec![None; 5],
            vec![(0, 1), (0, 2), (0, 3), (0, 4)],
            2,
        )
        .unwrap()
    }

    #[test]
    fn q_fair_reciprocal_counts() {
        let g = hub();
        assert!((q_fair(&g, 0, 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(q_fair(&g, 0, 4).unwrap(), 1.0);
        assert!(matches!(q_fair(&g, 1, 2), Err(Error::NotNeighbor { .. })));
    }

    #[test]
    fn q_sim_identity_and_zero() {
        let g = hub();
        let mut p = SamplerPolicy::uniform(2);
        p.transform = DenseTensor::identity(2);
        assert_eq!(q_sim(&p, &g, 0, 0).unwrap(), 1.0);
        p.transform = DenseTensor::zeros(2, 3);
        assert_eq!(q_sim(&p, &g, 0, 3).unwrap(), 0.0);
    }

    #[test]
    fn uniform_and_stratified_values() {
        let g = hub();
        assert_eq!(SamplerPolicy::uniform(2).child_distribution(&g, 0).unwrap(), vec![0.25; 4]);
        let s = SamplerPolicy::stratified(2).child_distribution(&g, 0).unwrap();
        for p in &s[..3] {
            assert!((p - 1.0 / 6.0).abs() < 1e-15);
        }
        assert!((s[3] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn stratified_renormalizes_over_present_groups() {
        let g = AttributedGraph::new(
            (0..3).map(|i| i.to_string()).collect(),
            DenseTensor::zeros(3, 1),
            vec![0, 1, 1],
            vec![None; 3],
            vec![(0, 1), (0, 2)],
            3,
        )
        .unwrap();
        let s = SamplerPolicy::stratified(1).child_distribution(&g, 0).unwrap();
        assert_eq!(s, vec![0.5, 0.5]);
    }

    #[test]
    fn attention_on_fair_only_ignores_transform() {
        let g = hub();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut p = SamplerPolicy::new(SamplerVariant::Fairsample, 2, 3, &mut rng);
        p.set_attention([0.0, 2.5]);
        let d = p.child_distribution(&g, 0).unwrap();
        let e = [(2.5f64 / 3.0).exp(), (2.5f64 / 3.0).exp(), (2.5f64 / 3.0).exp(), 2.5f64.exp()];
        let total: f64 = e.iter().sum();
        for (x, y) in d.iter().zip(e) {
            assert!((x - y / total).abs() < 1e-12);
        }
        p.transform = DenseTensor::glorot(2, 3, &mut rng);
        assert_eq!(p.child_distribution(&g, 0).unwrap(), d);
    }

    #[test]
    fn prepared_matches_direct() {
        let g = hub();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let p = SamplerPolicy::new(SamplerVariant::Fairsample, 2, 4, &mut rng);
        let prepared = p.prepare(&g).unwrap();
        let a = prepared.distribution(&g, 0).unwrap();
        let b = p.child_distribution(&g, 0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_neighborhood_is_an_error() {
        let g = AttributedGraph::new(
            vec!["a".into(), "b".into(), "c".into()],
            DenseTensor::zeros(3, 1),
            vec![0, 1, 1],
            vec![None; 3],
            vec![(1, 2)],
            2,
        )
        .unwrap();
        assert!(matches!(
            SamplerPolicy::uniform(1).child_distribution(&g, 0),
            Err(Error::EmptyNeighborhood(0))
        ));
    }
}
