//! Reference implementations used by the integration tests. Everything here
//! is written directly from the definitions with nalgebra and plain loops,
//! sharing no numerical code with the library.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use fairsample::graph::AttributedGraph;
use fairsample::DenseTensor;

pub fn to_matrix(t: &DenseTensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

pub fn to_tensor(m: &DMatrix<f64>) -> DenseTensor {
    let data: Vec<f64> = (0..m.nrows()).flat_map(|r| (0..m.ncols()).map(move |c| m[(r, c)])).collect();
    DenseTensor::from_vec(m.nrows(), m.ncols(), data).unwrap()
}

pub fn build_graph(
    features: Vec<Vec<f64>>,
    sensitive: Vec<usize>,
    labels: Vec<Option<u8>>,
    edges: &[(usize, usize)],
) -> AttributedGraph {
    let n = features.len();
    AttributedGraph::new(
        (0..n).map(|v| format!("v{v}")).collect(),
        DenseTensor::from_rows(&features).unwrap(),
        sensitive,
        labels,
        edges.to_vec(),
        2,
    )
    .unwrap()
}

/// Erdős–Rényi graph with features in `[-1, 1]`, random groups (nodes 0 and
/// 1 pinned to different groups) and random labels.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, d: usize, p: f64) -> AttributedGraph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let features = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let mut sensitive: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
    sensitive[0] = 0;
    sensitive[1] = 1;
    let labels = (0..n).map(|_| Some(rng.gen_range(0..2u8))).collect();
    build_graph(features, sensitive, labels, &edges)
}

fn adjacency_lists(g: &AttributedGraph) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); g.node_count()];
    for &(u, v) in g.edges() {
        if u != v && !adj[u].contains(&v) {
            adj[u].push(v);
            adj[v].push(u);
        }
    }
    adj
}

/// Row `v` averages `v` and its neighbors.
pub fn mean_operator(g: &AttributedGraph) -> DMatrix<f64> {
    let adj = adjacency_lists(g);
    let n = g.node_count();
    let mut p = DMatrix::zeros(n, n);
    for v in 0..n {
        let w = 1.0 / (adj[v].len() + 1) as f64;
        p[(v, v)] = w;
        for &u in &adj[v] {
            p[(v, u)] = w;
        }
    }
    p
}

/// K-step walk matrix by summing the probability of every lazy path.
pub fn walk_by_paths(g: &AttributedGraph, steps: usize) -> DMatrix<f64> {
    let adj = adjacency_lists(g);
    let n = g.node_count();
    let mut out = DMatrix::zeros(n, n);
    fn extend(adj: &[Vec<usize>], start: usize, at: usize, left: usize, prob: f64, out: &mut DMatrix<f64>) {
        if left == 0 {
            out[(start, at)] += prob;
            return;
        }
        let w = prob / (adj[at].len() + 1) as f64;
        extend(adj, start, at, left - 1, w, out);
        for &u in &adj[at] {
            extend(adj, start, u, left - 1, w, out);
        }
    }
    for s in 0..n {
        extend(&adj, s, s, steps, 1.0, &mut out);
    }
    out
}

pub fn walk_by_power(g: &AttributedGraph, steps: usize) -> DMatrix<f64> {
    let p = mean_operator(g);
    let mut w = DMatrix::identity(g.node_count(), g.node_count());
    for _ in 0..steps {
        w = &w * &p;
    }
    w
}

fn members(g: &AttributedGraph, a: usize, inside: bool) -> Vec<usize> {
    (0..g.node_count()).filter(|&v| (g.sensitive_of(v) == a) == inside).collect()
}

fn mean_of_rows(m: &DMatrix<f64>, rows: &[usize]) -> DVector<f64> {
    let mut acc = DVector::zeros(m.ncols());
    for &r in rows {
        acc += m.row(r).transpose();
    }
    acc / rows.len() as f64
}

/// Average walk mass from nodes of one side landing in `a`.
pub fn beta_into(walk: &DMatrix<f64>, g: &AttributedGraph, a: usize, from_inside: bool) -> f64 {
    let from = members(g, a, from_inside);
    let into = members(g, a, true);
    from.iter().map(|&i| into.iter().map(|&j| walk[(i, j)]).sum::<f64>()).sum::<f64>() / from.len() as f64
}

/// Both sides of the fairness bound for the linear GCN `Ã^K X W`.
pub struct BoundSides {
    pub disparity: f64,
    pub bound: f64,
}

pub fn bound_sides(g: &AttributedGraph, w: &DMatrix<f64>, steps: usize) -> BoundSides {
    let x = to_matrix(g.features());
    let walk = walk_by_power(g, steps);
    let logits = &walk * &x * w;
    let d = x.ncols() as f64;
    let w_norm = w.clone().svd(false, false).singular_values.max();

    let mut disparity = 0.0;
    let mut deltas = Vec::new();
    let mut parts = Vec::new();
    for a in 0..2 {
        let inside = members(g, a, true);
        let rest = members(g, a, false);
        disparity += (mean_of_rows(&logits, &inside) - mean_of_rows(&logits, &rest)).norm();
        let mu_in = mean_of_rows(&x, &inside);
        let mu_rest = mean_of_rows(&x, &rest);
        let dev = |rows: &[usize], mu: &DVector<f64>| {
            rows.iter()
                .map(|&r| (x.row(r).transpose() - mu).amax())
                .fold(0.0, f64::max)
        };
        deltas.push(dev(&inside, &mu_in).max(dev(&rest, &mu_rest)));
        let structure = (beta_into(&walk, g, a, true) - beta_into(&walk, g, a, false)).abs();
        parts.push(structure * (mu_in - mu_rest).norm());
    }
    let slack = 2.0 * d.sqrt() * deltas.iter().sum::<f64>();
    let bound = parts.iter().map(|s| w_norm * (s + slack)).sum();
    BoundSides { disparity, bound }
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Full-graph GCN training loss: mean cross entropy on `nodes` plus
/// `alpha` times the summed one-vs-rest gap of mean positive probability.
pub fn gcn_loss(g: &AttributedGraph, layers: &[DMatrix<f64>], classifier: &DMatrix<f64>, nodes: &[usize], alpha: f64) -> f64 {
    let p = mean_operator(g);
    let mut h = to_matrix(g.features());
    for w in layers {
        h = (&p * &h * w).map(|v| v.max(0.0));
    }
    let logits = &h * classifier;
    let mut ce = 0.0;
    let mut p1 = Vec::new();
    for &v in nodes {
        let row: Vec<f64> = logits.row(v).iter().copied().collect();
        let probs = softmax(&row);
        ce -= probs[g.label(v).unwrap() as usize].ln();
        p1.push(probs[1]);
    }
    ce /= nodes.len() as f64;
    let mut gap = 0.0;
    for a in 0..2 {
        let (mut si, mut ni, mut so, mut no) = (0.0, 0, 0.0, 0);
        for (k, &v) in nodes.iter().enumerate() {
            if g.sensitive_of(v) == a {
                si += p1[k];
                ni += 1;
            } else {
                so += p1[k];
                no += 1;
            }
        }
        if ni > 0 && no > 0 {
            gap += (si / ni as f64 - so / no as f64).abs();
        }
    }
    ce + alpha * gap
}

/// Child distribution of the learned sampler: softmax over neighbors of
/// `a0 (x_v Ws)·(x_u Ws) + a1 / |Γ_v ∩ V_{s_u}|`.
pub fn sampler_distribution(g: &AttributedGraph, v: usize, ws: &DMatrix<f64>, a: [f64; 2]) -> Vec<f64> {
    let x = to_matrix(g.features());
    let z = &x * ws;
    let nbrs = g.neighbors(v);
    let scores: Vec<f64> = nbrs
        .iter()
        .map(|&u| {
            let same = nbrs.iter().filter(|&&w| g.sensitive_of(w) == g.sensitive_of(u)).count();
            a[0] * z.row(v).dot(&z.row(u)) + a[1] / same as f64
        })
        .collect();
    softmax(&scores)
}

/// One sampled level-1 aggregation: parent node, sampled children, and the
/// loss gradient for that position's embedding.
pub struct LevelOneRow {
    pub parent: usize,
    pub children: Vec<usize>,
    pub grad: Vec<f64>,
}

/// `S = Σ_rows Σ_children (grad · x_c W1) log p(c | parent) / (rows · |children|)`,
/// where `rows` counts every level-1 position including childless ones.
pub fn surrogate(g: &AttributedGraph, rows: &[LevelOneRow], w1: &DMatrix<f64>, ws: &DMatrix<f64>, a: [f64; 2]) -> f64 {
    let x = to_matrix(g.features());
    let mut s = 0.0;
    for row in rows.iter().filter(|r| !r.children.is_empty()) {
        let probs = sampler_distribution(g, row.parent, ws, a);
        let grad = DVector::from_column_slice(&row.grad);
        for &c in &row.children {
            let mapped = (x.row(c) * w1).transpose();
            let idx = g.neighbors(row.parent).iter().position(|&u| u == c).unwrap();
            s += grad.dot(&mapped) * probs[idx].ln() / (rows.len() * row.children.len()) as f64;
        }
    }
    s
}

/// Central finite differences of `f` at every entry of `m`.
pub fn numeric_gradient(m: &DMatrix<f64>, eps: f64, mut f: impl FnMut(&DMatrix<f64>) -> f64) -> DMatrix<f64> {
    let mut grad = DMatrix::zeros(m.nrows(), m.ncols());
    let mut probe = m.clone();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let orig = probe[(i, j)];
            probe[(i, j)] = orig + eps;
            let up = f(&probe);
            probe[(i, j)] = orig - eps;
            let down = f(&probe);
            probe[(i, j)] = orig;
            grad[(i, j)] = (up - down) / (2.0 * eps);
        }
    }
    grad
}

/// Largest relative error over entries whose magnitude reaches `floor`.
pub fn max_relative_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>, floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .filter(|(a, n)| a.abs().max(n.abs()) >= floor)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()))
        .fold(0.0, f64::max)
}

/// Shortest-path hop counts by Floyd–Warshall.
pub fn all_pairs_hops(g: &AttributedGraph) -> Vec<Vec<usize>> {
    let n = g.node_count();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for (v, row) in d.iter_mut().enumerate() {
        row[v] = 0;
    }
    for &(u, v) in g.edges() {
        if u != v {
            d[u][v] = 1;
            d[v][u] = 1;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

/// Two-step selection by exhaustion: the returned index beats or ties every
/// other entry under the rule, ties broken by smallest id.
pub fn select_brute_force(acc: &[f64], dp: &[f64], ids: &[String], best: f64) -> usize {
    let eligible: Vec<usize> = (0..acc.len()).filter(|&i| acc[i] >= 0.95 * best).collect();
    let beats = |i: usize, j: usize| -> bool {
        if eligible.is_empty() {
            acc[i] > acc[j] || (acc[i] == acc[j] && ids[i] < ids[j])
        } else {
            dp[i] < dp[j] || (dp[i] == dp[j] && ids[i] < ids[j])
        }
    };
    let pool: Vec<usize> = if eligible.is_empty() { (0..acc.len()).collect() } else { eligible.clone() };
    *pool
        .iter()
        .find(|&&i| pool.iter().all(|&j| j == i || beats(i, j)))
        .expect("a unique winner")
}

pub fn pareto_brute_force(points: &[(f64, f64)]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| {
            !(0..points.len()).any(|j| {
                let (ai, di) = points[i];
                let (aj, dj) = points[j];
                aj >= ai && dj <= di && (aj > ai || dj < di)
            })
        })
        .collect()
}
