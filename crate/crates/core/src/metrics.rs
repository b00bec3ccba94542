//! Accuracy, demographic-parity gap, and model selection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compgraph::build_sampled;
use crate::error::{Error, Result};
use crate::gcn::{self, GcnParams};
use crate::graph::AttributedGraph;
use crate::rng;
use crate::sampler::SamplerPolicy;
use crate::tape::GradTape;
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Over members that carry a label; 0 when none do.
    pub accuracy: f64,
    /// Largest pairwise gap between group positive-prediction rates.
    pub delta_dp: f64,
    /// Positive-prediction rate per sensitive value; `None` for empty groups.
    pub group_rates: Vec<Option<f64>>,
    pub group_counts: Vec<usize>,
    pub labeled: usize,
}

/// How node embeddings are computed at evaluation time.
#[derive(Debug, Clone, Copy)]
pub enum EvalMode<'a> {
    Full,
    Sampled {
        policy: &'a SamplerPolicy,
        fanout: usize,
        seed: u64,
    },
}

/// Per-group positive rates and the max pairwise gap. Groups without members
/// are left out of the max.
pub fn delta_dp(predictions: &[u8], groups: &[usize], domain_size: usize) -> (f64, Vec<Option<f64>>, Vec<usize>) {
    let mut counts = vec![0usize; domain_size];
    let mut positives = vec![0usize; domain_size];
    for (&p, &s) in predictions.iter().zip(groups) {
        counts[s] += 1;
        positives[s] += p as usize;
    }
    let rates: Vec<Option<f64>> = counts
        .iter()
        .zip(&positives)
        .map(|(&c, &p)| (c > 0).then(|| p as f64 / c as f64))
        .collect();
    let present: Vec<f64> = rates.iter().flatten().copied().collect();
    let gap = match (
        present.iter().copied().reduce(f64::max),
        present.iter().copied().reduce(f64::min),
    ) {
        (Some(hi), Some(lo)) => hi - lo,
        _ => 0.0,
    };
    (gap, rates, counts)
}

/// Metrics for `nodes` given class probabilities for every node of `g`.
pub fn evaluate_probabilities(g: &AttributedGraph, probabilities: &DenseTensor, nodes: &[usize]) -> Result<EvalResult> {
    if nodes.is_empty() {
        return Err(Error::EmptyInput("evaluation node set"));
    }
    for &v in nodes {
        g.check_node(v)?;
    }
    let preds = gcn::predict(&probabilities.gather_rows(nodes)?)?;
    let groups: Vec<usize> = nodes.iter().map(|&v| g.sensitive_of(v)).collect();
    let (gap, rates, counts) = delta_dp(&preds, &groups, g.domain_size());
    let mut labeled = 0;
    let mut correct = 0;
    for (&v, &p) in nodes.iter().zip(&preds) {
        if let Some(y) = g.label(v) {
            labeled += 1;
            correct += usize::from(y == p);
        }
    }
    Ok(EvalResult {
        accuracy: if labeled > 0 { correct as f64 / labeled as f64 } else { 0.0 },
        delta_dp: gap,
        group_rates: rates,
        group_counts: counts,
        labeled,
    })
}

/// Class probabilities of every node in `nodes` (rows follow node ids, so
/// rows of nodes not listed are zero when sampling).
pub fn probabilities(g: &AttributedGraph, params: &GcnParams, nodes: &[usize], mode: EvalMode<'_>) -> Result<DenseTensor> {
    match mode {
        EvalMode::Full => gcn::full_probabilities(g, params),
        EvalMode::Sampled { policy, fanout, seed } => {
            params.validate(g.feature_dim())?;
            let prepared = policy.prepare(g)?;
            let trees = nodes
                .par_iter()
                .map(|&v| {
                    let mut r = rng::stream(&[seed, rng::TAG_EVAL, v as u64]);
                    build_sampled(g, v, params.depth(), fanout, &prepared, &mut r)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut out = DenseTensor::zeros(g.node_count(), gcn::NUM_CLASSES);
            for chunk in nodes.chunks(256).zip(trees.chunks(256)) {
                let mut tape = GradTape::new();
                let vars = params.register(&mut tape);
                let fwd = gcn::forward(&mut tape, g, &vars, chunk.1)?;
                let p = tape.value(fwd.probabilities);
                for (i, &v) in chunk.0.iter().enumerate() {
                    out.row_mut(v).copy_from_slice(p.row(i));
                }
            }
            Ok(out)
        }
    }
}

pub fn evaluate(g: &AttributedGraph, params: &GcnParams, nodes: &[usize], mode: EvalMode<'_>) -> Result<EvalResult> {
    if nodes.is_empty() {
        return Err(Error::EmptyInput("evaluation node set"));
    }
    let probs = probabilities(g, params, nodes, mode)?;
    evaluate_probabilities(g, &probs, nodes)
}

/// Mean validation scores of one hyperparameter setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub id: String,
    pub val_accuracy: f64,
    pub val_delta_dp: f64,
}

/// Two-step selection with an externally supplied best accuracy: keep
/// settings with accuracy at least `0.95 * best_accuracy`, pick the smallest
/// ΔDP among them; if none qualify, the most accurate. Ties go to the
/// lexicographically smallest id. Returns an index into `runs`.
pub fn select_with_threshold(runs: &[RunSummary], best_accuracy: f64) -> Result<usize> {
    if runs.is_empty() {
        return Err(Error::EmptyInput("run list"));
    }
    let threshold = best_accuracy * 0.95;
    let passing: Vec<usize> = (0..runs.len()).filter(|&i| runs[i].val_accuracy >= threshold).collect();
    let pick = if passing.is_empty() {
        (0..runs.len()).min_by(|&a, &b| {
            runs[b]
                .val_accuracy
                .total_cmp(&runs[a].val_accuracy)
                .then_with(|| runs[a].id.cmp(&runs[b].id))
        })
    } else {
        passing.into_iter().min_by(|&a, &b| {
            runs[a]
                .val_delta_dp
                .total_cmp(&runs[b].val_delta_dp)
                .then_with(|| runs[a].id.cmp(&runs[b].id))
        })
    };
    Ok(pick.expect("non-empty"))
}

/// Two-step selection where the best accuracy is taken over `runs` itself.
pub fn select_hyperparameters(runs: &[RunSummary]) -> Result<usize> {
    let best = runs
        .iter()
        .map(|r| r.val_accuracy)
        .reduce(f64::max)
        .ok_or(Error::EmptyInput("run list"))?;
    select_with_threshold(runs, best)
}

/// Indices of `(accuracy, ΔDP)` points not dominated by any other point
/// (another point with accuracy ≥ and ΔDP ≤, one of them strict). Returned
/// in input order.
pub fn pareto_frontier(points: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[b]
            .0
            .total_cmp(&points[a].0)
            .then_with(|| points[a].1.total_cmp(&points[b].1))
    });
    let mut keep = Vec::new();
    let mut best_dp = f64::INFINITY;
    let mut i = 0;
    while i < order.len() {
        // block of equal accuracy, sorted by ΔDP ascending
        let acc = points[order[i]].0;
        let mut j = i;
        while j < order.len() && points[order[j]].0 == acc {
            j += 1;
        }
        let block_min = points[order[i]].1;
        if block_min < best_dp {
            keep.extend(order[i..j].iter().copied().filter(|&k| points[k].1 == block_min));
            best_dp = block_min;
        }
        i = j;
    }
    keep.sort_unstable();
    keep
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(id: &str, acc: f64, dp: f64) -> RunSummary {
        RunSummary {
            id: id.into(),
            val_accuracy: acc,
            val_delta_dp: dp,
        }
    }

    #[test]
    fn delta_dp_example() {
        let preds = [1, 1, 0, 1, 0, 1, 0, 0];
        let groups = [0, 0, 0, 0, 1, 1, 1, 1];
        let (gap, rates, _) = delta_dp(&preds, &groups, 2);
        assert_eq!(gap, 0.5);
        assert_eq!(rates, vec![Some(0.75), Some(0.25)]);
    }

    #[test]
    fn empty_group_left_out() {
        let (gap, rates, counts) = delta_dp(&[1, 0], &[0, 2], 3);
        assert_eq!(gap, 1.0);
        assert_eq!(rates[1], None);
        assert_eq!(counts, vec![1, 0, 1]);
    }

    #[test]
    fn selection_examples() {
        let runs = [run("A", 0.70, 0.05), run("B", 0.68, 0.01)];
        assert_eq!(select_hyperparameters(&runs).unwrap(), 1);
        let runs = [run("A", 0.70, 0.05), run("B", 0.60, 0.01)];
        assert_eq!(select_hyperparameters(&runs).unwrap(), 0);
        assert!(select_hyperparameters(&[]).is_err());
    }

    #[test]
    fn selection_falls_back_to_accuracy() {
        let runs = [run("A", 0.50, 0.05), run("B", 0.55, 0.01)];
        assert_eq!(select_with_threshold(&runs, 0.9).unwrap(), 1);
    }

    #[test]
    fn selection_tie_uses_smallest_id() {
        let runs = [run("b", 0.7, 0.02), run("a", 0.7, 0.02)];
        assert_eq!(select_hyperparameters(&runs).unwrap(), 1);
    }

    #[test]
    fn pareto_examples() {
        assert_eq!(pareto_frontier(&[(0.5, 0.5)]), vec![0]);
        assert_eq!(pareto_frontier(&[(0.7, 0.02), (0.68, 0.01), (0.66, 0.05)]), vec![0, 1]);
        // identical points do not dominate each other
        assert_eq!(pareto_frontier(&[(0.7, 0.02), (0.7, 0.02)]), vec![0, 1]);
    }
}
