//! Per-root computation trees and top-down down-sampling.
//!
//! A tree of depth `K` has its root at level `K` and leaves at level 0. Each
//! non-leaf position aggregates its children plus itself; the self term is
//! represented by an explicit `self_child` position one level down so that it
//! carries its own (possibly sampled) neighborhood. `children` never contains
//! the self term, so every child's node is a neighbor of the parent's node.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::AttributedGraph;

/// A child-sampling policy: a distribution over `g.neighbors(parent)`, in
/// adjacency order.
pub trait ChildSampler {
    fn distribution(&self, g: &AttributedGraph, parent: usize) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Position {
    pub node: usize,
    pub level: usize,
    pub children: Vec<usize>,
    pub self_child: Option<usize>,
}

/// What the sampler saw and drew at one position.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleTrace {
    pub position: usize,
    pub candidates: Vec<usize>,
    /// Raw draws, with duplicates, in draw order.
    pub draws: Vec<usize>,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComputationGraph {
    root: usize,
    depth: usize,
    positions: Vec<Position>,
    traces: Vec<SampleTrace>,
}

impl ComputationGraph {
    pub fn root(&self) -> usize {
        self.root
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Position 0 is the root.
    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn position(&self, p: usize) -> &Position {
        &self.positions[p]
    }

    pub fn traces(&self) -> &[SampleTrace] {
        &self.traces
    }

    pub fn trace_for(&self, position: usize) -> Option<&SampleTrace> {
        self.traces.iter().find(|t| t.position == position)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn at_level(&self, level: usize) -> impl Iterator<Item = usize> + '_ {
        self.positions
            .iter()
            .enumerate()
            .filter(move |(_, p)| p.level == level)
            .map(|(i, _)| i)
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}

/// Builds the tree top-down, breadth first. `choose` returns the distinct
/// children of a position plus an optional trace.
fn build<F>(g: &AttributedGraph, root: usize, depth: usize, mut choose: F) -> Result<ComputationGraph>
where
    F: FnMut(usize, usize) -> Result<(Vec<usize>, Option<SampleTrace>)>,
{
    g.check_node(root)?;
    let mut positions = vec![Position {
        node: root,
        level: depth,
        children: Vec::new(),
        self_child: None,
    }];
    let mut traces = Vec::new();
    let mut cursor = 0;
    while cursor < positions.len() {
        let Position { node, level, .. } = positions[cursor];
        if level > 0 {
            let (chosen, trace) = choose(cursor, node)?;
            if let Some(t) = trace {
                traces.push(t);
            }
            let mut kids = Vec::with_capacity(chosen.len());
            for child in chosen {
                kids.push(positions.len());
                positions.push(Position {
                    node: child,
                    level: level - 1,
                    children: Vec::new(),
                    self_child: None,
                });
            }
            let self_pos = positions.len();
            positions.push(Position {
                node,
                level: level - 1,
                children: Vec::new(),
                self_child: None,
            });
            positions[cursor].children = kids;
            positions[cursor].self_child = Some(self_pos);
        }
        cursor += 1;
    }
    Ok(ComputationGraph {
        root,
        depth,
        positions,
        traces,
    })
}

/// Full computation tree: every position's children are all its neighbors.
pub fn build_full(g: &AttributedGraph, root: usize, depth: usize) -> Result<ComputationGraph> {
    build(g, root, depth, |_, node| Ok((g.neighbors(node).to_vec(), None)))
}

fn check_distribution(node: usize, probs: &[f64], expected_len: usize) -> Result<()> {
    let bad = |reason: String| Err(Error::InvalidDistribution { node, reason });
    if probs.len() != expected_len {
        return bad(format!("{} probabilities for {} candidates", probs.len(), expected_len));
    }
    if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return bad(format!("entry {p} is negative or non-finite"));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return bad(format!("mass sums to {total}"));
    }
    Ok(())
}

/// Draws `k` children i.i.d. from `probs` over `candidates` and drops
/// repeats, keeping first-draw order. Returns `(distinct, raw draws)`.
pub fn draw_children<R: Rng + ?Sized>(
    candidates: &[usize],
    probs: &[f64],
    k: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let dist = WeightedIndex::new(probs).map_err(|e| Error::InvalidDistribution {
        node: candidates.first().copied().unwrap_or(0),
        reason: e.to_string(),
    })?;
    let mut draws = Vec::with_capacity(k);
    let mut distinct: Vec<usize> = Vec::with_capacity(k);
    for _ in 0..k {
        let c = candidates[dist.sample(rng)];
        draws.push(c);
        if !distinct.contains(&c) {
            distinct.push(c);
        }
    }
    Ok((distinct, draws))
}

/// Down-sampled tree: each position draws `k` children with replacement from
/// `policy`, then discards duplicates. Positions without neighbors get no
/// children.
pub fn build_sampled<S, R>(
    g: &AttributedGraph,
    root: usize,
    depth: usize,
    k: usize,
    policy: &S,
    rng: &mut R,
) -> Result<ComputationGraph>
where
    S: ChildSampler + ?Sized,
    R: Rng + ?Sized,
{
    if k == 0 {
        return Err(Error::InvalidConfig("fanout k must be at least 1".into()));
    }
    build(g, root, depth, |position, node| {
        let candidates = g.neighbors(node);
        if candidates.is_empty() {
            return Ok((Vec::new(), None));
        }
        let probabilities = policy.distribution(g, node)?;
        check_distribution(node, &probabilities, candidates.len())?;
        let (chosen, draws) = draw_children(candidates, &probabilities, k, rng)?;
        Ok((
            chosen,
            Some(SampleTrace {
                position,
                candidates: candidates.to_vec(),
                draws,
                probabilities,
            }),
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DenseTensor;
    use rand::SeedableRng;

    /// Star around v1 (index 0) with leaves v2, v3, v4.
    fn star() -> AttributedGraph {
        AttributedGraph::new(
            (1..=4).map(|i| format!("v{i}")).collect(),
            DenseTensor::zeros(4, 1),
            vec![0, 1, 0, 1],
            vec![None; 4],
            vec![(0, 1), (0, 2), (0, 3)],
            2,
        )
        .unwrap()
    }

    struct Uniform;
    impl ChildSampler for Uniform {
        fn distribution(&self, g: &AttributedGraph, parent: usize) -> Result<Vec<f64>> {
            let d = g.degree(parent);
            Ok(vec![1.0 / d as f64; d])
        }
    }

    struct Broken;
    impl ChildSampler for Broken {
        fn distribution(&self, g: &AttributedGraph, parent: usize) -> Result<Vec<f64>> {
            Ok(vec![0.7; g.degree(parent)])
        }
    }

    #[test]
    fn full_tree_of_star() {
        let g = star();
        let cg = build_full(&g, 0, 2).unwrap();
        let root = cg.position(0);
        let kids: Vec<usize> = root.children.iter().map(|&p| cg.position(p).node).collect();
        assert_eq!(kids, vec![1, 2, 3]);
        let v2 = root.children[0];
        let v2_kids: Vec<usize> = cg.position(v2).children.iter().map(|&p| cg.position(p).node).collect();
        assert_eq!(v2_kids, vec![0]);
    }

    #[test]
    fn isolated_root_has_no_children() {
        let g = AttributedGraph::new(
            vec!["a".into(), "b".into(), "c".into()],
            DenseTensor::zeros(3, 1),
            vec![0, 1, 1],
            vec![None; 3],
            vec![(1, 2)],
            2,
        )
        .unwrap();
        let cg = build_full(&g, 0, 2).unwrap();
        assert!(cg.positions().iter().all(|p| p.children.is_empty()));
        // root, its self copy at level 1, and that copy's self copy at level 0
        assert_eq!(cg.len(), 3);
    }

    #[test]
    fn single_candidate_always_chosen() {
        let g = star();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let cg = build_sampled(&g, 1, 1, 5, &Uniform, &mut rng).unwrap();
        let kids: Vec<usize> = cg.position(0).children.iter().map(|&p| cg.position(p).node).collect();
        assert_eq!(kids, vec![0]);
        assert_eq!(cg.traces()[0].draws, vec![0; 5]);
    }

    #[test]
    fn fanout_bounds_children() {
        let g = star();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let cg = build_sampled(&g, 0, 2, 2, &Uniform, &mut rng).unwrap();
        for p in cg.positions() {
            assert!(p.children.len() <= 2.min(g.degree(p.node)));
        }
    }

    #[test]
    fn invalid_distribution_is_rejected() {
        let g = star();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let err = build_sampled(&g, 0, 1, 2, &Broken, &mut rng).unwrap_err();
        assert!(matches!(err, Error::InvalidDistribution { node: 0, .. }));
    }

    #[test]
    fn debug_dump_is_json() {
        let g = star();
        let cg = build_full(&g, 0, 1).unwrap();
        let v: serde_json::Value = serde_json::from_str(&cg.to_json().unwrap()).unwrap();
        assert_eq!(v["root"], 0);
    }
}
