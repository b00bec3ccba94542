//! Stochastic block model graphs with group-biased labels and features.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AttributedGraph, DataSplit};
use crate::rng;
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmSpec {
    pub n: usize,
    pub group_sizes: Vec<usize>,
    /// Symmetric ζ×ζ edge probabilities between groups.
    pub edge_probabilities: Vec<Vec<f64>>,
    /// Multiplier on the edge probability of same-label pairs.
    #[serde(default = "unit")]
    pub label_affinity: f64,
    pub feature_dim: usize,
    /// Feature mean for each `[label][group]`, each of length `feature_dim`.
    pub means: Vec<Vec<Vec<f64>>>,
    /// Features are the mean plus uniform noise in `[-noise, noise]`.
    pub noise: f64,
    /// Probability of label 1 per group.
    pub label_rates: Vec<f64>,
    /// Fraction of nodes that carry a label.
    pub labeled_fraction: f64,
    /// Number of labeled nodes used for training.
    pub train_size: usize,
    /// Fractions of labeled nodes held out for validation and test.
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

fn unit() -> f64 {
    1.0
}

const DESK_AFFINITY: f64 = 3.0;

/// Intra- and inter-group edge probabilities for two groups that give the
/// requested expected mean degree and intra-group edge share, given label
/// rates and same-label affinity.
pub fn solve_block_probabilities(sizes: [usize; 2], rates: [f64; 2], affinity: f64, degree: f64, intra_share: f64) -> (f64, f64) {
    let boost = |ra: f64, rb: f64| {
        let same = ra * rb + (1.0 - ra) * (1.0 - rb);
        same * affinity + 1.0 - same
    };
    let [n0, n1] = sizes.map(|s| s as f64);
    let intra = n0 * (n0 - 1.0) / 2.0 * boost(rates[0], rates[0]) + n1 * (n1 - 1.0) / 2.0 * boost(rates[1], rates[1]);
    let inter = n0 * n1 * boost(rates[0], rates[1]);
    let edges = degree * (n0 + n1) / 2.0;
    (intra_share * edges / intra, (1.0 - intra_share) * edges / inter)
}

impl Default for SbmSpec {
    fn default() -> Self {
        Self::desk(0)
    }
}

impl SbmSpec {
    /// Two groups (1200 / 800), mean degree 10 with about 90% of edges inside
    /// groups, labels skewed toward group 0, same-label pairs three times as
    /// likely to connect, and features carrying a weak label signal next to a
    /// stronger group signal.
    pub fn desk(seed: u64) -> Self {
        let sizes = [1200, 800];
        let rates = [0.6, 0.4];
        let (p_intra, p_inter) = solve_block_probabilities(sizes, rates, DESK_AFFINITY, 10.0, 0.9);
        Self::two_group(
            sizes,
            p_intra,
            p_inter,
            16,
            TwoGroupSignal {
                label: 0.05,
                group: 0.3,
                noise: 0.3,
            },
            rates,
            seed,
        )
        .with_label_affinity(DESK_AFFINITY)
        .with_split(1.0, 300, 0.25, 0.25)
    }

    /// Two-group spec with means `±label` on the first quarter of the
    /// features and `±group` on the second quarter; the rest is pure noise.
    pub fn two_group(
        sizes: [usize; 2],
        p_intra: f64,
        p_inter: f64,
        feature_dim: usize,
        signal: TwoGroupSignal,
        label_rates: [f64; 2],
        seed: u64,
    ) -> Self {
        let q = (feature_dim / 4).max(1);
        let means = (0..2)
            .map(|y| {
                (0..2)
                    .map(|a| {
                        (0..feature_dim)
                            .map(|j| {
                                let sign = |b: usize| if b == 1 { 1.0 } else { -1.0 };
                                if j < q {
                                    signal.label * sign(y)
                                } else if j < 2 * q {
                                    signal.group * sign(a)
                                } else {
                                    0.0
                                }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self {
            n: sizes[0] + sizes[1],
            group_sizes: sizes.to_vec(),
            edge_probabilities: vec![vec![p_intra, p_inter], vec![p_inter, p_intra]],
            label_affinity: 1.0,
            feature_dim,
            means,
            noise: signal.noise,
            label_rates: label_rates.to_vec(),
            labeled_fraction: 1.0,
            train_size: 0,
            val_fraction: 0.25,
            test_fraction: 0.25,
            seed,
        }
    }

    pub fn with_label_affinity(mut self, factor: f64) -> Self {
        self.label_affinity = factor;
        self
    }

    pub fn with_split(mut self, labeled_fraction: f64, train_size: usize, val_fraction: f64, test_fraction: f64) -> Self {
        self.labeled_fraction = labeled_fraction;
        self.train_size = train_size;
        self.val_fraction = val_fraction;
        self.test_fraction = test_fraction;
        self
    }

    pub fn domain_size(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let zeta = self.group_sizes.len();
        if zeta < 2 {
            return bad("need at least two groups".into());
        }
        if self.group_sizes.iter().sum::<usize>() != self.n {
            return bad(format!("group sizes sum to {}, expected n = {}", self.group_sizes.iter().sum::<usize>(), self.n));
        }
        if self.edge_probabilities.len() != zeta || self.edge_probabilities.iter().any(|r| r.len() != zeta) {
            return bad("edge probability matrix must be ζ×ζ".into());
        }
        for a in 0..zeta {
            for b in 0..zeta {
                let p = self.edge_probabilities[a][b];
                if !(0.0..=1.0).contains(&p) || p * self.label_affinity > 1.0 {
                    return bad(format!("edge probability {p} outside [0, 1]"));
                }
                if p != self.edge_probabilities[b][a] {
                    return bad("edge probability matrix must be symmetric".into());
                }
            }
        }
        if !(self.label_affinity.is_finite() && self.label_affinity >= 0.0) {
            return bad("label_affinity must be finite and non-negative".into());
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        if self.means.len() != 2
            || self
                .means
                .iter()
                .any(|per_group| per_group.len() != zeta || per_group.iter().any(|m| m.len() != self.feature_dim))
        {
            return bad("means must be indexed [label][group] with feature_dim entries".into());
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad("noise must be finite and non-negative".into());
        }
        if self.label_rates.len() != zeta || self.label_rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad("label_rates must hold one probability per group".into());
        }
        for f in [self.labeled_fraction, self.val_fraction, self.test_fraction] {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("fraction {f} outside [0, 1]"));
            }
        }
        let labeled = self.labeled_count();
        let (val, test) = self.holdout_counts();
        if self.train_size + val + test > labeled {
            return bad(format!(
                "split needs {} labeled nodes, only {labeled} available",
                self.train_size + val + test
            ));
        }
        Ok(())
    }

    fn labeled_count(&self) -> usize {
        (self.labeled_fraction * self.n as f64).round() as usize
    }

    fn holdout_counts(&self) -> (usize, usize) {
        let labeled = self.labeled_count() as f64;
        ((self.val_fraction * labeled).round() as usize, (self.test_fraction * labeled).round() as usize)
    }

    /// Expected share of intra-group edges.
    pub fn expected_intra_ratio(&self) -> f64 {
        let zeta = self.group_sizes.len();
        // mean edge-probability multiplier of a random pair from groups a, b
        let factor = |a: usize, b: usize| {
            let (ra, rb) = (self.label_rates[a], self.label_rates[b]);
            let same = ra * rb + (1.0 - ra) * (1.0 - rb);
            same * self.label_affinity + (1.0 - same)
        };
        let mut intra = 0.0;
        let mut inter = 0.0;
        for a in 0..zeta {
            let na = self.group_sizes[a] as f64;
            intra += na * (na - 1.0) / 2.0 * self.edge_probabilities[a][a] * factor(a, a);
            for b in a + 1..zeta {
                inter += na * self.group_sizes[b] as f64 * self.edge_probabilities[a][b] * factor(a, b);
            }
        }
        intra / (intra + inter)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoGroupSignal {
    pub label: f64,
    pub group: f64,
    pub noise: f64,
}

pub fn generate(spec: &SbmSpec) -> Result<(AttributedGraph, DataSplit)> {
    spec.validate()?;
    let n = spec.n;
    let mut r = rng::stream(&[spec.seed, rng::TAG_GRAPH]);

    let mut sensitive: Vec<usize> = spec
        .group_sizes
        .iter()
        .enumerate()
        .flat_map(|(a, &size)| std::iter::repeat_n(a, size))
        .collect();
    sensitive.shuffle(&mut r);

    let full_labels: Vec<u8> = sensitive.iter().map(|&a| u8::from(r.gen_bool(spec.label_rates[a]))).collect();

    let mut features = DenseTensor::zeros(n, spec.feature_dim);
    for v in 0..n {
        let mean = &spec.means[full_labels[v] as usize][sensitive[v]];
        for (j, x) in features.row_mut(v).iter_mut().enumerate() {
            let noise = if spec.noise > 0.0 { r.gen_range(-spec.noise..=spec.noise) } else { 0.0 };
            *x = mean[j] + noise;
        }
    }

    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let mut p = spec.edge_probabilities[sensitive[u]][sensitive[v]];
            if full_labels[u] == full_labels[v] {
                p *= spec.label_affinity;
            }
            if r.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut r);
    let labeled: Vec<usize> = order[..spec.labeled_count()].to_vec();
    let mut labels = vec![None; n];
    for &v in &labeled {
        labels[v] = Some(full_labels[v]);
    }

    let graph = AttributedGraph::new(
        (0..n).map(|v| format!("n{v}")).collect(),
        features,
        sensitive,
        labels,
        edges,
        spec.domain_size(),
    )?
    .with_name(Some(format!("sbm-{}", spec.seed)));

    let split = draw_split(&labeled, spec, &mut rng::stream(&[spec.seed, rng::TAG_SPLIT]));
    Ok((graph, split))
}

fn draw_split<R: Rng + ?Sized>(labeled: &[usize], spec: &SbmSpec, r: &mut R) -> DataSplit {
    let mut pool = labeled.to_vec();
    pool.shuffle(r);
    let (val, test) = spec.holdout_counts();
    let t = spec.train_size;
    let mut split = DataSplit {
        train: pool[..t].to_vec(),
        val: pool[t..t + val].to_vec(),
        test: pool[t + val..t + val + test].to_vec(),
        seed: spec.seed,
    };
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    split
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(p_intra: f64, p_inter: f64, noise: f64) -> SbmSpec {
        SbmSpec::two_group(
            [30, 30],
            p_intra,
            p_inter,
            4,
            TwoGroupSignal {
                label: 1.0,
                group: 1.0,
                noise,
            },
            [0.5, 0.5],
            3,
        )
        .with_split(1.0, 20, 0.25, 0.25)
    }

    #[test]
    fn all_intra_edges() {
        let (g, _) = generate(&small(1.0, 0.0, 0.1)).unwrap();
        assert_eq!(g.intra_group_edge_ratio().unwrap(), 1.0);
    }

    #[test]
    fn noiseless_features_equal_their_means() {
        let spec = small(0.2, 0.1, 0.0);
        let (g, _) = generate(&spec).unwrap();
        for v in 0..g.node_count() {
            let y = g.label(v).unwrap() as usize;
            assert_eq!(g.feature(v), spec.means[y][g.sensitive_of(v)].as_slice());
        }
    }

    #[test]
    fn split_is_disjoint_and_sized() {
        let (g, split) = generate(&small(0.2, 0.1, 0.5)).unwrap();
        split.validate(&g).unwrap();
        assert_eq!((split.train.len(), split.val.len(), split.test.len()), (20, 15, 15));
    }

    #[test]
    fn infeasible_sizes_rejected() {
        let mut spec = small(0.2, 0.1, 0.5);
        spec.train_size = 50;
        assert!(generate(&spec).is_err());
        let mut spec = small(0.2, 0.1, 0.5);
        spec.n = 61;
        assert!(generate(&spec).is_err());
        let mut spec = small(0.2, 0.1, 0.5);
        spec.edge_probabilities[0][1] = 1.5;
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn same_seed_same_graph() {
        let spec = small(0.2, 0.1, 0.5);
        let (a, sa) = generate(&spec).unwrap();
        let (b, sb) = generate(&spec).unwrap();
        assert_eq!(a.edges(), b.edges());
        assert_eq!(a.features(), b.features());
        assert_eq!(sa, sb);
    }
}
