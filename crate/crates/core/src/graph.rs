//! Attributed graphs with sensitive groups and partial binary labels.
//!
//! Node ids are dense and 0-based, assigned in feature-file order. External
//! string ids are kept so a graph can be written back out unchanged.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::DenseTensor;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("self-loop rejected at node {0}")]
    SelfLoop(String),
    #[error("duplicate edge {0} - {1}")]
    DuplicateEdge(String, String),
    #[error("edge references unknown node {0}")]
    UnknownNode(String),
    #[error("unknown node index {0}")]
    UnknownIndex(usize),
    #[error("non-finite feature at node {node}, column {col}")]
    NonFiniteFeature { node: String, col: usize },
    #[error("node {node} has sensitive value {value}, domain size is {domain}")]
    BadSensitive {
        node: String,
        value: usize,
        domain: usize,
    },
    #[error("sensitive domain must have at least two values, got {0}")]
    DomainTooSmall(usize),
    #[error("label must be 0 or 1, got {0}")]
    BadLabel(u8),
    #[error("graph has no edges")]
    NoEdges,
    #[error("inconsistent sizes: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Contents of the meta JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub sensitive_domain_size: usize,
    pub feature_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HomophilyMode {
    Homophilic,
    Heterophilic,
}

#[derive(Debug, Clone)]
pub struct AttributedGraph {
    name: Option<String>,
    ids: Vec<String>,
    edges: Vec<(usize, usize)>,
    features: DenseTensor,
    sensitive: Vec<usize>,
    labels: Vec<Option<u8>>,
    domain_size: usize,
    adjacency: Vec<Vec<usize>>,
    groups: Vec<Vec<usize>>,
    // row-major n x domain_size: |Gamma_v ∩ V_a|
    group_counts: Vec<u32>,
}

impl AttributedGraph {
    /// Builds and validates a graph. `edges` are undirected pairs stored as
    /// given; adjacency is mirrored and sorted.
    pub fn new(
        ids: Vec<String>,
        features: DenseTensor,
        sensitive: Vec<usize>,
        labels: Vec<Option<u8>>,
        edges: Vec<(usize, usize)>,
        domain_size: usize,
    ) -> Result<Self, GraphError> {
        let n = ids.len();
        if features.rows() != n || sensitive.len() != n || labels.len() != n {
            return Err(GraphError::Inconsistent(format!(
                "{} ids, {} feature rows, {} sensitive values, {} labels",
                n,
                features.rows(),
                sensitive.len(),
                labels.len()
            )));
        }
        if domain_size < 2 {
            return Err(GraphError::DomainTooSmall(domain_size));
        }
        for v in 0..n {
            if sensitive[v] >= domain_size {
                return Err(GraphError::BadSensitive {
                    node: ids[v].clone(),
                    value: sensitive[v],
                    domain: domain_size,
                });
            }
            if let Some(col) = features.row(v).iter().position(|x| !x.is_finite()) {
                return Err(GraphError::NonFiniteFeature {
                    node: ids[v].clone(),
                    col,
                });
            }
            if let Some(y) = labels[v] {
                if y > 1 {
                    return Err(GraphError::BadLabel(y));
                }
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        let mut seen = HashSet::with_capacity(edges.len());
        for &(u, v) in &edges {
            if u >= n {
                return Err(GraphError::UnknownIndex(u));
            }
            if v >= n {
                return Err(GraphError::UnknownIndex(v));
            }
            if u == v {
                return Err(GraphError::SelfLoop(ids[u].clone()));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(GraphError::DuplicateEdge(ids[u].clone(), ids[v].clone()));
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let mut groups = vec![Vec::new(); domain_size];
        for (v, &s) in sensitive.iter().enumerate() {
            groups[s].push(v);
        }
        let mut group_counts = vec![0u32; n * domain_size];
        for (v, list) in adjacency.iter().enumerate() {
            for &u in list {
                group_counts[v * domain_size + sensitive[u]] += 1;
            }
        }
        Ok(Self {
            name: None,
            ids,
            edges,
            features,
            sensitive,
            labels,
            domain_size,
            adjacency,
            groups,
            group_counts,
        })
    }

    pub fn with_name(mut self, name: Option<String>) -> Self {
        self.name = name;
        self
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn domain_size(&self) -> usize {
        self.domain_size
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &DenseTensor {
        &self.features
    }

    pub fn feature(&self, v: usize) -> &[f64] {
        self.features.row(v)
    }

    pub fn sensitive(&self) -> &[usize] {
        &self.sensitive
    }

    pub fn sensitive_of(&self, v: usize) -> usize {
        self.sensitive[v]
    }

    pub fn labels(&self) -> &[Option<u8>] {
        &self.labels
    }

    pub fn label(&self, v: usize) -> Option<u8> {
        self.labels[v]
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency[u].binary_search(&v).is_ok()
    }

    /// Nodes with sensitive value `a` (V_a).
    pub fn group(&self, a: usize) -> &[usize] {
        &self.groups[a]
    }

    /// `|Gamma_v ∩ V_a|`.
    pub fn neighbor_group_count(&self, v: usize, a: usize) -> usize {
        self.group_counts[v * self.domain_size + a] as usize
    }

    pub fn neighbor_group_counts(&self, v: usize) -> &[u32] {
        &self.group_counts[v * self.domain_size..(v + 1) * self.domain_size]
    }

    pub fn check_node(&self, v: usize) -> Result<(), GraphError> {
        if v < self.node_count() {
            Ok(())
        } else {
            Err(GraphError::UnknownIndex(v))
        }
    }

    /// Copy of this graph with extra undirected edges appended.
    pub fn with_added_edges(&self, extra: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut edges = self.edges.clone();
        edges.extend_from_slice(extra);
        Ok(Self::new(
            self.ids.clone(),
            self.features.clone(),
            self.sensitive.clone(),
            self.labels.clone(),
            edges,
            self.domain_size,
        )?
        .with_name(self.name.clone()))
    }

    /// Fraction of edges whose endpoints share a sensitive value.
    pub fn intra_group_edge_ratio(&self) -> Result<f64, GraphError> {
        if self.edges.is_empty() {
            return Err(GraphError::NoEdges);
        }
        let intra = self
            .edges
            .iter()
            .filter(|&&(u, v)| self.sensitive[u] == self.sensitive[v])
            .count();
        Ok(intra as f64 / self.edges.len() as f64)
    }

    /// Homophilic iff the intra-group edge ratio is at least one half.
    pub fn homophily_mode(&self) -> Result<HomophilyMode, GraphError> {
        Ok(mode_for_ratio(self.intra_group_edge_ratio()?))
    }

    /// BFS distances from `v`, truncated at `h` hops. Returns `(node, hops)`
    /// pairs for all nodes at distance `1..=h`, in BFS order.
    pub fn bfs_ball(&self, v: usize, h: usize) -> Result<Vec<(usize, usize)>, GraphError> {
        self.check_node(v)?;
        let mut dist: HashMap<usize, usize> = HashMap::new();
        dist.insert(v, 0);
        let mut queue = VecDeque::from([v]);
        let mut out = Vec::new();
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            if d == h {
                continue;
            }
            for &w in &self.adjacency[u] {
                if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(w) {
                    e.insert(d + 1);
                    out.push((w, d + 1));
                    queue.push_back(w);
                }
            }
        }
        Ok(out)
    }

    /// All nodes at shortest-path distance in `[1, h]` from `v`, sorted.
    pub fn k_hop_neighbors(&self, v: usize, h: usize) -> Result<Vec<usize>, GraphError> {
        let mut nodes: Vec<usize> = self.bfs_ball(v, h)?.into_iter().map(|(u, _)| u).collect();
        nodes.sort_unstable();
        Ok(nodes)
    }

    pub fn load(edge_path: &Path, feature_path: &Path, meta_path: &Path) -> Result<Self, GraphError> {
        let meta: GraphMeta = serde_json::from_str(&fs::read_to_string(meta_path)?)?;
        if meta.sensitive_domain_size < 2 {
            return Err(GraphError::DomainTooSmall(meta.sensitive_domain_size));
        }
        let feature_name = feature_path.display().to_string();
        let parse_err = |line: usize, message: String| GraphError::Parse {
            file: feature_name.clone(),
            line,
            message,
        };

        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(feature_path)?;
        let header = reader.headers()?.clone();
        let expected_cols = 3 + meta.feature_dim;
        if header.len() != expected_cols
            || &header[0] != "id"
            || &header[1] != "s"
            || &header[2] != "y"
            || header.iter().skip(3).enumerate().any(|(i, h)| h != format!("f{i}"))
        {
            return Err(parse_err(
                1,
                format!("expected header id,s,y,f0..f{}", meta.feature_dim.saturating_sub(1)),
            ));
        }

        let mut ids = Vec::new();
        let mut index = HashMap::new();
        let mut sensitive = Vec::new();
        let mut labels = Vec::new();
        let mut data = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let line = row + 2;
            let record = record.map_err(|e| parse_err(line, e.to_string()))?;
            if record.len() != expected_cols {
                return Err(parse_err(line, format!("expected {expected_cols} fields, got {}", record.len())));
            }
            let id = record[0].to_string();
            if index.insert(id.clone(), ids.len()).is_some() {
                return Err(parse_err(line, format!("duplicate node id {id}")));
            }
            let s_field = record[1].trim();
            if s_field.is_empty() {
                return Err(parse_err(line, format!("node {id} is missing its sensitive value")));
            }
            let s: usize = s_field
                .parse()
                .map_err(|_| parse_err(line, format!("bad sensitive value {s_field:?}")))?;
            let y_field = record[2].trim();
            let y = if y_field.is_empty() {
                None
            } else {
                match y_field {
                    "0" => Some(0),
                    "1" => Some(1),
                    _ => return Err(parse_err(line, format!("bad label {y_field:?}"))),
                }
            };
            for (col, field) in record.iter().skip(3).enumerate() {
                let x: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(line, format!("bad feature {field:?}")))?;
                if !x.is_finite() {
                    return Err(GraphError::NonFiniteFeature { node: id, col });
                }
                data.push(x);
            }
            ids.push(id);
            sensitive.push(s);
            labels.push(y);
        }
        let features = DenseTensor::from_vec(ids.len(), meta.feature_dim, data)
            .map_err(|e| GraphError::Inconsistent(e.to_string()))?;

        let edge_name = edge_path.display().to_string();
        let mut edges = Vec::new();
        let mut seen = HashSet::new();
        for (i, raw) in fs::read_to_string(edge_path)?.lines().enumerate() {
            let line = i + 1;
            let text = raw.trim();
            if text.is_empty() || text.starts_with('#') {
                continue;
            }
            let mut parts = text.split('\t');
            let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(GraphError::Parse {
                    file: edge_name.clone(),
                    line,
                    message: "expected `u<TAB>v`".into(),
                });
            };
            let (a, b) = (a.trim(), b.trim());
            let u = *index.get(a).ok_or_else(|| GraphError::UnknownNode(a.to_string()))?;
            let v = *index.get(b).ok_or_else(|| GraphError::UnknownNode(b.to_string()))?;
            if u == v {
                return Err(GraphError::SelfLoop(a.to_string()));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(GraphError::Parse {
                    file: edge_name.clone(),
                    line,
                    message: format!("duplicate edge {a} - {b}"),
                });
            }
            edges.push((u, v));
        }
        Ok(Self::new(ids, features, sensitive, labels, edges, meta.sensitive_domain_size)?.with_name(meta.name))
    }

    /// Loads `edges.tsv`, `features.csv` and `meta.json` from a directory.
    pub fn load_dir(dir: &Path) -> Result<Self, GraphError> {
        Self::load(&dir.join(EDGE_FILE), &dir.join(FEATURE_FILE), &dir.join(META_FILE))
    }

    pub fn meta(&self) -> GraphMeta {
        GraphMeta {
            sensitive_domain_size: self.domain_size,
            feature_dim: self.feature_dim(),
            name: self.name.clone(),
        }
    }

    pub fn write_edges<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for &(u, v) in &self.edges {
            writeln!(out, "{}\t{}", self.ids[u], self.ids[v])?;
        }
        Ok(())
    }

    pub fn write_features<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "id,s,y")?;
        for c in 0..self.feature_dim() {
            write!(out, ",f{c}")?;
        }
        writeln!(out)?;
        for v in 0..self.node_count() {
            write!(out, "{},{},", self.ids[v], self.sensitive[v])?;
            if let Some(y) = self.labels[v] {
                write!(out, "{y}")?;
            }
            for x in self.features.row(v) {
                write!(out, ",{x}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn save_dir(&self, dir: &Path) -> Result<(), GraphError> {
        fs::create_dir_all(dir)?;
        let mut edges = Vec::new();
        self.write_edges(&mut edges)?;
        fs::write(dir.join(EDGE_FILE), edges)?;
        let mut feats = Vec::new();
        self.write_features(&mut feats)?;
        fs::write(dir.join(FEATURE_FILE), feats)?;
        fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&self.meta())? + "\n")?;
        Ok(())
    }
}

pub const EDGE_FILE: &str = "edges.tsv";
pub const FEATURE_FILE: &str = "features.csv";
pub const META_FILE: &str = "meta.json";
pub const SPLIT_FILE: &str = "split.json";

pub fn mode_for_ratio(ratio: f64) -> HomophilyMode {
    if ratio >= 0.5 {
        HomophilyMode::Homophilic
    } else {
        HomophilyMode::Heterophilic
    }
}

/// Disjoint train/validation/test node sets drawn from the labeled nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl DataSplit {
    pub fn validate(&self, g: &AttributedGraph) -> Result<(), GraphError> {
        let mut seen = HashSet::new();
        for &v in self.train.iter().chain(&self.val).chain(&self.test) {
            g.check_node(v)?;
            if g.label(v).is_none() {
                return Err(GraphError::Inconsistent(format!("split node {v} is unlabeled")));
            }
            if !seen.insert(v) {
                return Err(GraphError::Inconsistent(format!("node {v} appears in two splits")));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GraphError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), GraphError> {
        fs::write(path, serde_json::to_string(self)? + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn path_graph() -> AttributedGraph {
        AttributedGraph::new(
            vec!["a".into(), "b".into(), "c".into()],
            DenseTensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap(),
            vec![0, 1, 0],
            vec![Some(1), None, Some(0)],
            vec![(0, 1), (1, 2)],
            2,
        )
        .unwrap()
    }

    #[test]
    fn path_graph_degrees() {
        let g = path_graph();
        let deg: Vec<usize> = (0..3).map(|v| g.degree(v)).collect();
        assert_eq!(deg, vec![1, 2, 1]);
    }

    #[test]
    fn self_loop_rejected() {
        let err = AttributedGraph::new(
            vec!["x".into()],
            DenseTensor::zeros(1, 1),
            vec![0],
            vec![None],
            vec![(0, 0)],
            2,
        )
        .unwrap_err();
        assert_eq!(err.to_string(), "self-loop rejected at node x");
    }

    #[test]
    fn duplicate_edge_rejected() {
        let err = AttributedGraph::new(
            vec!["x".into(), "y".into()],
            DenseTensor::zeros(2, 1),
            vec![0, 1],
            vec![None, None],
            vec![(0, 1), (1, 0)],
            2,
        );
        assert!(matches!(err, Err(GraphError::DuplicateEdge(..))));
    }

    #[test]
    fn group_counts_cover_degree() {
        let g = path_graph();
        for v in 0..3 {
            let total: u32 = g.neighbor_group_counts(v).iter().sum();
            assert_eq!(total as usize, g.degree(v));
        }
        assert_eq!(g.neighbor_group_count(1, 0), 2);
    }

    #[test]
    fn k_hop_on_path() {
        let g = path_graph();
        assert_eq!(g.k_hop_neighbors(0, 1).unwrap(), vec![1]);
        assert_eq!(g.k_hop_neighbors(0, 2).unwrap(), vec![1, 2]);
        assert!(g.k_hop_neighbors(9, 1).is_err());
    }

    #[test]
    fn ratio_and_mode() {
        assert_eq!(mode_for_ratio(0.73), HomophilyMode::Homophilic);
        assert_eq!(mode_for_ratio(0.47), HomophilyMode::Heterophilic);
        assert_eq!(mode_for_ratio(0.5), HomophilyMode::Homophilic);
        let g = path_graph();
        assert_eq!(g.intra_group_edge_ratio().unwrap(), 0.0);
    }

    #[test]
    fn empty_edge_set_has_no_ratio() {
        let g = AttributedGraph::new(
            vec!["x".into(), "y".into()],
            DenseTensor::zeros(2, 1),
            vec![0, 1],
            vec![None, None],
            vec![],
            2,
        )
        .unwrap();
        assert!(matches!(g.intra_group_edge_ratio(), Err(GraphError::NoEdges)));
    }
}
