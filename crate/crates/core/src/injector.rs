//! Edge injection before training.
//!
//! Labels are first extended with confident pseudo labels. Then every
//! (pseudo-)labeled node `v`, in ascending id order, links to up to `m`
//! uniformly chosen nodes of its candidate set `C_v`: nodes within `h` hops
//! that share `v`'s label and sit in a different sensitive group
//! (homophilic graphs) or the same group (heterophilic graphs). Existing
//! neighbors are never candidates.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::{self, GcnParams};
use crate::graph::{AttributedGraph, HomophilyMode};

pub const DEFAULT_HOPS: usize = 2;
pub const DEFAULT_TAU: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InjectionMode {
    #[default]
    Auto,
    Homophilic,
    Heterophilic,
}

impl std::str::FromStr for InjectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "homophilic" => Ok(Self::Homophilic),
            "heterophilic" => Ok(Self::Heterophilic),
            other => Err(Error::InvalidConfig(format!("unknown injection mode {other:?}"))),
        }
    }
}

impl InjectionMode {
    pub fn resolve(self, g: &AttributedGraph) -> Result<HomophilyMode> {
        Ok(match self {
            Self::Auto => g.homophily_mode()?,
            Self::Homophilic => HomophilyMode::Homophilic,
            Self::Heterophilic => HomophilyMode::Heterophilic,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub label: u8,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    pub tau: f64,
    /// Kept pseudo label per node; `None` for known-labeled nodes and for
    /// predictions at or below `tau`.
    pub labels: Vec<Option<PseudoLabel>>,
}

impl PseudoLabelSet {
    pub fn kept(&self) -> usize {
        self.labels.iter().flatten().count()
    }
}

/// Predicts every node outside `known` with `predictor` on the full graph and
/// keeps predictions whose softmax confidence exceeds `tau`.
pub fn pseudo_label(g: &AttributedGraph, predictor: &GcnParams, tau: f64, known: &[usize]) -> Result<PseudoLabelSet> {
    if !(0.5..1.0).contains(&tau) {
        return Err(Error::InvalidConfig(format!("tau must lie in [0.5, 1), got {tau}")));
    }
    let probs = gcn::full_probabilities(g, predictor)?;
    Ok(pseudo_label_from_probabilities(&probs, tau, known, g.node_count()))
}

pub fn pseudo_label_from_probabilities(
    probs: &crate::tensor::DenseTensor,
    tau: f64,
    known: &[usize],
    n: usize,
) -> PseudoLabelSet {
    let known: HashSet<usize> = known.iter().copied().collect();
    let labels = (0..n)
        .map(|v| {
            if known.contains(&v) {
                return None;
            }
            let row = probs.row(v);
            let (label, confidence) = if row[1] > row[0] { (1, row[1]) } else { (0, row[0]) };
            (confidence > tau).then_some(PseudoLabel { label, confidence })
        })
        .collect();
    PseudoLabelSet { tau, labels }
}

/// `V'_L` labeling: true labels of `known`, pseudo labels elsewhere.
pub fn augmented_labels(g: &AttributedGraph, known: &[usize], pseudo: &PseudoLabelSet) -> Result<Vec<Option<u8>>> {
    let mut out: Vec<Option<u8>> = pseudo.labels.iter().map(|p| p.map(|p| p.label)).collect();
    out.resize(g.node_count(), None);
    for &v in known {
        g.check_node(v)?;
        out[v] = Some(g.label(v).ok_or(Error::Unlabeled(v))?);
    }
    Ok(out)
}

/// `C_v`, sorted by node id, together with hop distances.
fn candidates_with_hops(
    g: &AttributedGraph,
    v: usize,
    labels: &[Option<u8>],
    h: usize,
    mode: HomophilyMode,
) -> Result<Vec<(usize, usize)>> {
    let label = labels.get(v).copied().flatten().ok_or(Error::Unlabeled(v))?;
    let sv = g.sensitive_of(v);
    let mut out: Vec<(usize, usize)> = g
        .bfs_ball(v, h)?
        .into_iter()
        .filter(|&(u, hops)| {
            hops >= 2
                && labels[u] == Some(label)
                && match mode {
                    HomophilyMode::Homophilic => g.sensitive_of(u) != sv,
                    HomophilyMode::Heterophilic => g.sensitive_of(u) == sv,
                }
        })
        .collect();
    out.sort_unstable();
    Ok(out)
}

pub fn candidate_set(g: &AttributedGraph, v: usize, labels: &[Option<u8>], h: usize, mode: HomophilyMode) -> Result<Vec<usize>> {
    if h == 0 {
        return Err(Error::InvalidConfig("hop count h must be at least 1".into()));
    }
    Ok(candidates_with_hops(g, v, labels, h, mode)?
        .into_iter()
        .map(|(u, _)| u)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedEdge {
    pub u: usize,
    pub v: usize,
    pub hops: usize,
    pub label: u8,
    pub groups: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionReport {
    pub edges: Vec<InjectedEdge>,
    /// `(node, edges it initiated)` for nodes that initiated at least one.
    pub per_node: Vec<(usize, usize)>,
    pub m: usize,
    pub h: usize,
    pub tau: Option<f64>,
    pub mode: HomophilyMode,
    pub seed: Option<u64>,
    pub pseudo_labels_kept: usize,
}

/// Injects edges given an already augmented labeling.
pub fn inject_with_labels<R: Rng + ?Sized>(
    g: &AttributedGraph,
    labels: &[Option<u8>],
    m: usize,
    h: usize,
    mode: HomophilyMode,
    rng: &mut R,
) -> Result<(AttributedGraph, InjectionReport)> {
    if h == 0 {
        return Err(Error::InvalidConfig("hop count h must be at least 1".into()));
    }
    let mut report = InjectionReport {
        edges: Vec::new(),
        per_node: Vec::new(),
        m,
        h,
        tau: None,
        mode,
        seed: None,
        pseudo_labels_kept: 0,
    };
    if m == 0 {
        return Ok((g.clone(), report));
    }
    let mut added: HashSet<(usize, usize)> = HashSet::new();
    let mut new_edges = Vec::new();
    for v in 0..g.node_count() {
        let Some(label) = labels.get(v).copied().flatten() else {
            continue;
        };
        let cands = candidates_with_hops(g, v, labels, h, mode)?;
        if cands.is_empty() {
            continue;
        }
        let take = m.min(cands.len());
        let mut initiated = 0;
        for idx in rand::seq::index::sample(rng, cands.len(), take).into_iter() {
            let (u, hops) = cands[idx];
            if added.insert((v.min(u), v.max(u))) {
                new_edges.push((v, u));
                report.edges.push(InjectedEdge {
                    u: v,
                    v: u,
                    hops,
                    label,
                    groups: (g.sensitive_of(v), g.sensitive_of(u)),
                });
                initiated += 1;
            }
        }
        if initiated > 0 {
            report.per_node.push((v, initiated));
        }
    }
    Ok((g.with_added_edges(&new_edges)?, report))
}

/// Pseudo-labels with `predictor`, then injects. `known` is the labeled set
/// the predictor was trained on.
#[allow(clippy::too_many_arguments)]
pub fn inject<R: Rng + ?Sized>(
    g: &AttributedGraph,
    known: &[usize],
    predictor: &GcnParams,
    m: usize,
    h: usize,
    tau: f64,
    mode: InjectionMode,
    rng: &mut R,
) -> Result<(AttributedGraph, InjectionReport)> {
    let resolved = mode.resolve(g)?;
    if m == 0 {
        let (graph, mut report) = inject_with_labels(g, &[], 0, h.max(1), resolved, rng)?;
        report.tau = Some(tau);
        return Ok((graph, report));
    }
    let pseudo = pseudo_label(g, predictor, tau, known)?;
    let labels = augmented_labels(g, known, &pseudo)?;
    let (graph, mut report) = inject_with_labels(g, &labels, m, h, resolved, rng)?;
    report.tau = Some(tau);
    report.pseudo_labels_kept = pseudo.kept();
    Ok((graph, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DenseTensor;
    use rand::SeedableRng;

    /// v1(0) - v2(1) - v5(4), with v1, v2 in group 0 and v5 in group 1; all
    /// labeled 1. v3(2), v4(3) hang off v1 in group 0.
    fn two_hop() -> AttributedGraph {
        AttributedGraph::new(
            (1..=5).map(|i| format!("v{i}")).collect(),
            DenseTensor::zeros(5, 1),
            vec![0, 0, 0, 0, 1],
            vec![Some(1); 5],
            vec![(0, 1), (1, 4), (0, 2), (0, 3)],
            2,
        )
        .unwrap()
    }

    #[test]
    fn two_hop_cross_group_node_is_candidate() {
        let g = two_hop();
        let labels = g.labels().to_vec();
        assert_eq!(candidate_set(&g, 0, &labels, 2, HomophilyMode::Homophilic).unwrap(), vec![4]);
        // heterophilic mode: same group, 2 hops (v3 and v4 via v1 are neighbors of 0)
        assert_eq!(candidate_set(&g, 1, &labels, 2, HomophilyMode::Heterophilic).unwrap(), vec![2, 3]);
    }

    #[test]
    fn single_group_neighborhood_has_no_candidates() {
        let g = two_hop();
        let labels = g.labels().to_vec();
        assert!(candidate_set(&g, 2, &labels, 1, HomophilyMode::Homophilic).unwrap().is_empty());
    }

    #[test]
    fn unlabeled_node_is_an_error() {
        let g = two_hop();
        let labels = vec![None; 5];
        assert!(matches!(
            candidate_set(&g, 0, &labels, 2, HomophilyMode::Homophilic),
            Err(Error::Unlabeled(0))
        ));
    }

    #[test]
    fn zero_budget_leaves_graph_unchanged() {
        let g = two_hop();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let (out, report) = inject_with_labels(&g, g.labels(), 0, 2, HomophilyMode::Homophilic, &mut rng).unwrap();
        assert_eq!(out.edges(), g.edges());
        assert!(report.edges.is_empty());
    }

    #[test]
    fn injects_the_two_hop_edge() {
        let g = two_hop();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let (out, report) = inject_with_labels(&g, g.labels(), 3, 2, HomophilyMode::Homophilic, &mut rng).unwrap();
        assert!(out.has_edge(0, 4));
        assert!(report.edges.iter().all(|e| e.hops == 2));
        assert!(out.intra_group_edge_ratio().unwrap() < g.intra_group_edge_ratio().unwrap());
    }

    #[test]
    fn pseudo_labels_respect_threshold() {
        let probs = DenseTensor::from_rows(&[vec![0.9, 0.1], vec![0.75, 0.25], vec![0.1, 0.9]]).unwrap();
        let set = pseudo_label_from_probabilities(&probs, 0.8, &[2], 3);
        assert_eq!(set.labels[0], Some(PseudoLabel { label: 0, confidence: 0.9 }));
        assert_eq!(set.labels[1], None);
        assert_eq!(set.labels[2], None);
    }
}
