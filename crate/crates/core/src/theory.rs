//! Fairness bound machinery for linear GCNs.
//!
//! With `T = (D + I)^{-1} (A + I)` and `Ã = T^K`, a linear GCN predicts from
//! `Ã X W`. The empirical logit-gap regularizer
//!
//! ```text
//! L̂_dp = sum_a || mean_{V_a} p - mean_{V_!a} p ||_2
//! ```
//!
//! is bounded above by
//!
//! ```text
//! sum_a ||W||_2 ( |β[a,a] - β[!a,a]| * ||μ_a - μ_!a||_2 + 2 sqrt(d) sum_a' δ_a' )
//! ```
//!
//! where `β[x,a]` is the average probability of a K-step walk from a node in
//! `x` ending in `V_a`, `μ` are group feature means and `δ` the group feature
//! deviations. Everything here is dense and meant for small graphs, except
//! [`walk_betas`] and [`balancedness`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::gcn::{mean_propagate, sgcn_forward};
use crate::graph::AttributedGraph;
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct RandomWalkStats {
    pub steps: usize,
    /// Dense row-stochastic `n x n` K-step walk matrix.
    pub walk: DenseTensor,
    /// `β[a,a]` per group.
    pub beta_same: Vec<f64>,
    /// `β[!a,a]` per group.
    pub beta_into: Vec<f64>,
    /// `β[a,!a]` per group.
    pub beta_out: Vec<f64>,
}

/// One-step transition matrix `(D + I)^{-1} (A + I)`.
pub fn transition_matrix(g: &AttributedGraph) -> DenseTensor {
    let n = g.node_count();
    let mut t = DenseTensor::zeros(n, n);
    for v in 0..n {
        let p = 1.0 / (g.degree(v) + 1) as f64;
        t.set(v, v, p);
        for &u in g.neighbors(v) {
            t.set(v, u, p);
        }
    }
    t
}

fn group_masks(g: &AttributedGraph) -> Vec<Vec<bool>> {
    (0..g.domain_size())
        .map(|a| g.sensitive().iter().map(|&s| s == a).collect())
        .collect()
}

/// Average over start nodes in `from` of the walk mass landing in `into`.
fn beta(walk: &DenseTensor, from: &[bool], into: &[bool]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, _) in from.iter().enumerate().filter(|(_, &f)| f) {
        count += 1;
        total += walk
            .row(i)
            .iter()
            .zip(into)
            .filter(|(_, &m)| m)
            .map(|(p, _)| p)
            .sum::<f64>();
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

pub fn random_walk_matrix(g: &AttributedGraph, steps: usize) -> Result<RandomWalkStats> {
    let t = transition_matrix(g);
    let mut walk = DenseTensor::identity(g.node_count());
    for _ in 0..steps {
        walk = walk.matmul(&t)?;
    }
    let masks = group_masks(g);
    let mut beta_same = Vec::new();
    let mut beta_into = Vec::new();
    let mut beta_out = Vec::new();
    for mask in &masks {
        let rest: Vec<bool> = mask.iter().map(|m| !m).collect();
        beta_same.push(beta(&walk, mask, mask));
        beta_into.push(beta(&walk, &rest, mask));
        beta_out.push(beta(&walk, mask, &rest));
    }
    Ok(RandomWalkStats {
        steps,
        walk,
        beta_same,
        beta_into,
        beta_out,
    })
}

/// `(β[a,a], β[!a,a])` per group by sparse propagation of group indicators;
/// usable on graphs too large for the dense walk matrix.
pub fn walk_betas(g: &AttributedGraph, steps: usize) -> Vec<(f64, f64)> {
    let n = g.node_count();
    (0..g.domain_size())
        .map(|a| {
            let ind: Vec<f64> = g.sensitive().iter().map(|&s| if s == a { 1.0 } else { 0.0 }).collect();
            let mut h = DenseTensor::column(ind);
            for _ in 0..steps {
                h = mean_propagate(g, &h);
            }
            let inside = g.group(a).len();
            let (mut same, mut into) = (0.0, 0.0);
            for v in 0..n {
                if g.sensitive_of(v) == a {
                    same += h.get(v, 0);
                } else {
                    into += h.get(v, 0);
                }
            }
            let same = if inside > 0 { same / inside as f64 } else { 0.0 };
            let into = if n > inside { into / (n - inside) as f64 } else { 0.0 };
            (same, into)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupFeatureStats {
    /// `μ_a`.
    pub mean: Vec<Vec<f64>>,
    /// `μ_!a`.
    pub mean_rest: Vec<Vec<f64>>,
    /// `dev(V_a) = max_{v in V_a} ||x_v - μ_a||_inf`.
    pub dev: Vec<f64>,
    /// `dev(V_!a)`.
    pub dev_rest: Vec<f64>,
    /// `δ_a = max(dev(V_a), dev(V_!a))`.
    pub delta: Vec<f64>,
}

fn mean_and_dev(g: &AttributedGraph, members: &[usize]) -> (Vec<f64>, f64) {
    let d = g.feature_dim();
    let mut mean = vec![0.0; d];
    for &v in members {
        for (m, x) in mean.iter_mut().zip(g.feature(v)) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= members.len() as f64;
    }
    let dev = members
        .iter()
        .map(|&v| {
            g.feature(v)
                .iter()
                .zip(&mean)
                .map(|(x, m)| (x - m).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    (mean, dev)
}

pub fn group_feature_stats(g: &AttributedGraph) -> Result<GroupFeatureStats> {
    let n = g.node_count();
    let mut stats = GroupFeatureStats {
        mean: Vec::new(),
        mean_rest: Vec::new(),
        dev: Vec::new(),
        dev_rest: Vec::new(),
        delta: Vec::new(),
    };
    for a in 0..g.domain_size() {
        let inside = g.group(a);
        if inside.is_empty() || inside.len() == n {
            return Err(Error::EmptyGroup(a));
        }
        let rest: Vec<usize> = (0..n).filter(|&v| g.sensitive_of(v) != a).collect();
        let (m, d) = mean_and_dev(g, inside);
        let (mr, dr) = mean_and_dev(g, &rest);
        stats.mean.push(m);
        stats.mean_rest.push(mr);
        stats.dev.push(d);
        stats.dev_rest.push(dr);
        stats.delta.push(d.max(dr));
    }
    Ok(stats)
}

/// Largest singular value of `w`, from the eigenvalues of `WᵀW` by cyclic Jacobi rotations.
pub fn spectral_norm(w: &DenseTensor) -> f64 {
    const MAX_SWEEPS: usize = 100;
    let c = w.cols();
    if c == 0 || w.rows() == 0 || w.norm() == 0.0 {
        return 0.0;
    }
    let gram = w.transpose().matmul(w).expect("square gram matrix");
    let mut a: Vec<Vec<f64>> = (0..c).map(|i| gram.row(i).to_vec()).collect();
    let scale = (0..c).map(|i| a[i][i]).fold(0.0, f64::max);
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..c).flat_map(|i| (0..c).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..c {
            for q in p + 1..c {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cos = 1.0 / (t * t + 1.0).sqrt();
                let sin = t * cos;
                for row in a.iter_mut() {
                    let (x, y) = (row[p], row[q]);
                    row[p] = cos * x - sin * y;
                    row[q] = sin * x + cos * y;
                }
                let (head, tail) = a.split_at_mut(q);
                for (x, y) in head[p].iter_mut().zip(tail[0].iter_mut()) {
                    (*x, *y) = (cos * *x - sin * *y, sin * *x + cos * *y);
                }
            }
        }
    }
    (0..c).map(|i| a[i][i]).fold(0.0, f64::max).sqrt()
}

/// Linear-GCN logits for every node.
pub fn sgcn_logits(g: &AttributedGraph, w: &DenseTensor, steps: usize) -> Result<DenseTensor> {
    sgcn_forward(g, w, steps)
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn mean_rows(m: &DenseTensor, rows: impl Iterator<Item = usize>) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    let mut count = 0usize;
    for r in rows {
        count += 1;
        for (o, x) in out.iter_mut().zip(m.row(r)) {
            *o += x;
        }
    }
    for o in &mut out {
        *o /= count as f64;
    }
    out
}

/// `L̂_dp` of the linear GCN with weights `w` and `steps` propagation steps.
pub fn empirical_dp(g: &AttributedGraph, w: &DenseTensor, steps: usize) -> Result<f64> {
    let logits = sgcn_logits(g, w, steps)?;
    let n = g.node_count();
    let mut total = 0.0;
    for a in 0..g.domain_size() {
        let inside = g.group(a).len();
        if inside == 0 || inside == n {
            return Err(Error::EmptyGroup(a));
        }
        let mu_in = mean_rows(&logits, g.group(a).iter().copied());
        let mu_out = mean_rows(&logits, (0..n).filter(|&v| g.sensitive_of(v) != a));
        total += l2(&mu_in, &mu_out);
    }
    Ok(total)
}

/// Right-hand side of the fairness bound, with the `δ` sum taken over all
/// groups inside every outer term.
pub fn dp_upper_bound(g: &AttributedGraph, w: &DenseTensor, steps: usize) -> Result<f64> {
    let walk = random_walk_matrix(g, steps)?;
    let stats = group_feature_stats(g)?;
    Ok(bound_from_parts(g.feature_dim(), spectral_norm(w), &walk.beta_same, &walk.beta_into, &stats))
}

fn bound_from_parts(d: usize, w_norm: f64, beta_same: &[f64], beta_into: &[f64], stats: &GroupFeatureStats) -> f64 {
    let delta_sum: f64 = stats.delta.iter().sum();
    let slack = 2.0 * (d as f64).sqrt() * delta_sum;
    (0..beta_same.len())
        .map(|a| {
            let structure = (beta_same[a] - beta_into[a]).abs();
            let attribute = l2(&stats.mean[a], &stats.mean_rest[a]);
            w_norm * (structure * attribute + slack)
        })
        .sum()
}

/// A random small bound-checking instance: Erdős–Rényi graph over two
/// non-empty groups, features uniform in `[-1, 1]`, two-column weights
/// uniform in `[-2, 2]`, and 1 or 2 propagation steps.
#[derive(Debug, Clone)]
pub struct BoundInstance {
    pub graph: AttributedGraph,
    pub weights: DenseTensor,
    pub steps: usize,
}

pub fn random_instance<R: Rng + ?Sized>(rng: &mut R, max_nodes: usize, max_dim: usize) -> Result<BoundInstance> {
    if max_nodes < 2 || max_dim == 0 {
        return Err(Error::InvalidConfig("instances need at least two nodes and one feature".into()));
    }
    let n = rng.gen_range(2..=max_nodes);
    let d = rng.gen_range(1..=max_dim);
    let p = rng.gen_range(0.2..0.8);
    let mut sensitive: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
    sensitive[0] = 0;
    sensitive[1] = 1;
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let features = DenseTensor::from_vec(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..=1.0)).collect())?;
    let graph = AttributedGraph::new(
        (0..n).map(|v| v.to_string()).collect(),
        features,
        sensitive,
        vec![None; n],
        edges,
        2,
    )?;
    let weights = DenseTensor::from_vec(d, 2, (0..d * 2).map(|_| rng.gen_range(-2.0..=2.0)).collect())?;
    Ok(BoundInstance {
        graph,
        weights,
        steps: rng.gen_range(1..=2),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Balancedness {
    /// `max_{a,a'} | |Γ_v ∩ V_a| - |Γ_v ∩ V_a'| |` per node.
    pub per_node: Vec<usize>,
    pub mean: f64,
}

pub fn balancedness(g: &AttributedGraph) -> Balancedness {
    let per_node: Vec<usize> = (0..g.node_count())
        .map(|v| {
            let counts = g.neighbor_group_counts(v);
            let max = counts.iter().copied().max().unwrap_or(0);
            let min = counts.iter().copied().min().unwrap_or(0);
            (max - min) as usize
        })
        .collect();
    let mean = if per_node.is_empty() {
        0.0
    } else {
        per_node.iter().sum::<usize>() as f64 / per_node.len() as f64
    };
    Balancedness { per_node, mean }
}
