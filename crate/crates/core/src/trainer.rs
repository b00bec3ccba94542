//! Mini-batch training of the GCN and the neighbor sampler.
//!
//! Each batch draws one computation tree per training root from the current
//! sampler, takes an Adam step on the GCN weights for cross entropy plus
//! `alpha` times the batch demographic-parity penalty, and then (for the
//! learnable sampler) an Adam step on the sampler weights along the gradient
//! of the sampling surrogate, built from the pre-update first-layer weights.

use std::time::Instant;

use log::{debug, info, warn};
use rayon::prelude::*;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::compgraph::{build_sampled, ComputationGraph};
use crate::error::{Error, Result};
use crate::gcn::{self, GcnParams};
use crate::graph::{AttributedGraph, DataSplit};
use crate::injector::{InjectionMode, DEFAULT_HOPS, DEFAULT_TAU};
use crate::metrics::{self, EvalMode, EvalResult};
use crate::optim::Adam;
use crate::rng;
use crate::sampler::{self, LevelOneSignal, SamplerPolicy, SamplerVariant, DEFAULT_TRANSFORMED_DIM};
use crate::tape::GradTape;
use crate::tensor::{DenseTensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EvalSetting {
    /// Every neighbor aggregated, no sampling.
    #[default]
    Full,
    /// Trees drawn from the trained sampler with the training fanout.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the demographic-parity penalty.
    pub alpha: f64,
    /// Number of GCN layers (tree depth).
    pub layers: usize,
    /// Children drawn per position (with replacement, then deduplicated).
    pub fanout: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub sampler_learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Injection budget per labeled node; 0 disables injection.
    pub injected_edges: usize,
    pub hops: usize,
    pub tau: f64,
    pub injection_mode: InjectionMode,
    pub sampler: SamplerVariant,
    pub transformed_dim: usize,
    /// Fixes the sampler mixing weights `(a0, a1)` during training.
    pub frozen_attention: Option<[f64; 2]>,
    pub eval: EvalSetting,
    /// Ablation switches.
    pub no_injection: bool,
    pub no_regularizer: bool,
    pub uniform_sampling: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            layers: 2,
            fanout: 10,
            hidden: 16,
            learning_rate: 0.005,
            sampler_learning_rate: 0.01,
            batch_size: 128,
            max_epochs: 300,
            patience: 20,
            seed: 0,
            injected_edges: 4,
            hops: DEFAULT_HOPS,
            tau: DEFAULT_TAU,
            injection_mode: InjectionMode::Auto,
            sampler: SamplerVariant::Fairsample,
            transformed_dim: DEFAULT_TRANSFORMED_DIM,
            frozen_attention: None,
            eval: EvalSetting::Full,
            no_injection: false,
            no_regularizer: false,
            uniform_sampling: false,
        }
    }
}

impl TrainConfig {
    pub fn effective_alpha(&self) -> f64 {
        if self.no_regularizer {
            0.0
        } else {
            self.alpha
        }
    }

    pub fn effective_sampler(&self) -> SamplerVariant {
        if self.uniform_sampling {
            SamplerVariant::Uniform
        } else {
            self.sampler
        }
    }

    pub fn effective_injection(&self) -> usize {
        if self.no_injection {
            0
        } else {
            self.injected_edges
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad(format!("alpha must be finite and non-negative, got {}", self.alpha));
        }
        if self.fanout == 0 {
            return bad("fanout must be at least 1".into());
        }
        if self.hidden == 0 || self.batch_size == 0 || self.transformed_dim == 0 {
            return bad("hidden, batch_size and transformed_dim must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.sampler_learning_rate >= 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.hops == 0 {
            return bad("hops must be at least 1".into());
        }
        if !(0.5..1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0.5, 1), got {}", self.tau));
        }
        if let Some(a) = self.frozen_attention {
            if !a.iter().all(|x| x.is_finite()) {
                return bad("frozen attention must be finite".into());
            }
        }
        Ok(())
    }

    /// Applies `key=value` where value is parsed as JSON, falling back to a
    /// plain string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("override {assignment:?} is not key=value")))?;
        let value: serde_json::Value =
            serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let mut obj = serde_json::to_value(&*self)?;
        let map = obj.as_object_mut().expect("config serializes to an object");
        if !map.contains_key(key.trim()) {
            return Err(Error::InvalidConfig(format!("unknown config key {key:?}")));
        }
        map.insert(key.trim().to_string(), value);
        *self = serde_json::from_value(obj).map_err(|e| Error::InvalidConfig(format!("override {assignment:?}: {e}")))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_delta_dp: f64,
    pub attention: [f64; 2],
    /// Share of sampled parent-child pairs whose endpoints lie in different
    /// sensitive groups.
    pub cross_group_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub val: EvalResult,
    pub test: Option<EvalResult>,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub gcn: GcnParams,
    pub policy: SamplerPolicy,
    pub report: RunReport,
}

/// Cross entropy of `nodes` plus `alpha` times the group gap of the mean
/// positive probability, from precomputed class probabilities.
pub fn objective_from_probabilities(
    g: &AttributedGraph,
    probabilities: &DenseTensor,
    nodes: &[usize],
    alpha: f64,
) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::EmptyInput("objective node set"));
    }
    let mut ce = 0.0;
    for &v in nodes {
        let y = g.label(v).ok_or(Error::Unlabeled(v))?;
        ce -= probabilities.get(v, y as usize).ln();
    }
    ce /= nodes.len() as f64;
    if alpha == 0.0 {
        return Ok(ce);
    }
    let p1: Vec<f64> = nodes.iter().map(|&v| probabilities.get(v, 1)).collect();
    let groups: Vec<usize> = nodes.iter().map(|&v| g.sensitive_of(v)).collect();
    Ok(ce + alpha * group_gap(&p1, &groups, g.domain_size()))
}

/// `sum_a |mean_{g=a} x - mean_{g!=a} x|`, skipping groups with an empty side.
pub fn group_gap(x: &[f64], groups: &[usize], zeta: usize) -> f64 {
    let total: f64 = x.iter().sum();
    let mut sums = vec![0.0; zeta];
    let mut counts = vec![0usize; zeta];
    for (&xi, &a) in x.iter().zip(groups) {
        sums[a] += xi;
        counts[a] += 1;
    }
    let n = x.len();
    (0..zeta)
        .filter(|&a| counts[a] > 0 && counts[a] < n)
        .map(|a| (sums[a] / counts[a] as f64 - (total - sums[a]) / (n - counts[a]) as f64).abs())
        .sum()
}

fn divergence(epoch: usize, err: Error) -> Error {
    match err {
        Error::Tensor(TensorError::NonFinite { op }) => Error::Divergence {
            epoch,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

/// Builds the sampler a config asks for, seeded from the config's seed.
pub fn initial_models(g: &AttributedGraph, config: &TrainConfig) -> (GcnParams, SamplerPolicy) {
    let mut r = rng::stream(&[config.seed, rng::TAG_INIT]);
    let gcn = GcnParams::init(g.feature_dim(), config.hidden, config.layers, &mut r);
    let mut policy = SamplerPolicy::new(config.effective_sampler(), g.feature_dim(), config.transformed_dim, &mut r);
    if let Some(a) = config.frozen_attention {
        policy.set_attention(a);
    }
    (gcn, policy)
}

pub fn eval_mode<'a>(config: &TrainConfig, policy: &'a SamplerPolicy) -> EvalMode<'a> {
    match config.eval {
        EvalSetting::Full => EvalMode::Full,
        EvalSetting::Sampled => EvalMode::Sampled {
            policy,
            fanout: config.fanout,
            seed: rng::stream_seed(&[config.seed, rng::TAG_EVAL]),
        },
    }
}

struct Trainer<'a> {
    g: &'a AttributedGraph,
    config: &'a TrainConfig,
    alpha: f64,
    gcn: GcnParams,
    policy: SamplerPolicy,
    gcn_opt: Adam,
    policy_opt: Adam,
}

impl Trainer<'_> {
    fn sample_trees(&self, batch: &[usize], epoch: usize) -> Result<Vec<ComputationGraph>> {
        let prepared = self.policy.prepare(self.g)?;
        let seed = self.config.seed;
        batch
            .par_iter()
            .map(|&root| {
                let mut r = rng::stream(&[seed, rng::TAG_TREE, epoch as u64, root as u64]);
                build_sampled(self.g, root, self.config.layers, self.config.fanout, &prepared, &mut r)
            })
            .collect()
    }

    /// One optimizer step on a batch; returns the batch loss and the
    /// (cross-group, total) counts of sampled pairs.
    fn step(&mut self, batch: &[usize], epoch: usize) -> Result<(f64, (usize, usize))> {
        let g = self.g;
        let trees = self.sample_trees(batch, epoch)?;
        let mut pairs = (0, 0);
        for t in &trees {
            for p in t.positions() {
                for &c in &p.children {
                    let child = t.position(c).node;
                    pairs.0 += usize::from(g.sensitive_of(child) != g.sensitive_of(p.node));
                    pairs.1 += 1;
                }
            }
        }
        let labels = batch
            .iter()
            .map(|&v| g.label(v).map(usize::from).ok_or(Error::Unlabeled(v)))
            .collect::<Result<Vec<_>>>()?;

        let mut tape = GradTape::new();
        let vars = self.gcn.register(&mut tape);
        let fwd = gcn::forward(&mut tape, g, &vars, &trees)?;
        let mut loss = tape.softmax_ce(fwd.logits, labels)?;
        if self.alpha > 0.0 {
            let groups: Vec<usize> = batch.iter().map(|&v| g.sensitive_of(v)).collect();
            if groups.iter().all(|&a| a == groups[0]) {
                warn!("batch holds a single sensitive group; fairness penalty is zero");
            }
            let p1 = tape.select_column(fwd.probabilities, 1)?;
            let gap = tape.abs_mean_diff(p1, &groups, g.domain_size())?;
            let weighted = tape.scale(gap, self.alpha)?;
            loss = tape.add(loss, weighted)?;
        }
        let value = tape.value(loss).get(0, 0);
        let grads = tape.backward(loss)?;

        let gcn_grads: Vec<DenseTensor> = vars.all().into_iter().map(|v| grads.get(v)).collect();
        if let Some(bad) = gcn_grads.iter().find(|t| !t.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                detail: format!("non-finite gradient of shape {:?}", bad.shape()),
            });
        }
        let first_layer = self.gcn.layers.first().cloned();
        self.gcn_opt.step(self.gcn.tensors_mut(), &gcn_grads);

        if let (true, Some(level1), Some(w1)) = (self.policy.is_learnable(), fwd.level1, first_layer) {
            let grad_h1 = grads.get(level1);
            let signal = LevelOneSignal {
                trees: &trees,
                positions: &fwd.level1_positions,
                grad_h1: &grad_h1,
                first_layer: &w1,
            };
            let pg = sampler::policy_gradient_step(&self.policy, g, &signal)?;
            let frozen = self.config.frozen_attention;
            self.policy_opt.step(
                vec![&mut self.policy.transform, &mut self.policy.attention],
                &[pg.transform, pg.attention],
            );
            if let Some(a) = frozen {
                self.policy.set_attention(a);
            }
            if !(self.policy.transform.is_finite() && self.policy.attention.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    detail: "sampler weights became non-finite".into(),
                });
            }
        }
        Ok((value, pairs))
    }

    fn validation(&self, nodes: &[usize]) -> Result<(f64, EvalResult)> {
        let mode = eval_mode(self.config, &self.policy);
        let probs = metrics::probabilities(self.g, &self.gcn, nodes, mode)?;
        let loss = objective_from_probabilities(self.g, &probs, nodes, self.alpha)?;
        Ok((loss, metrics::evaluate_probabilities(self.g, &probs, nodes)?))
    }
}

/// Trains on `split.train`, early-stopping on validation loss, then restores
/// the best epoch and evaluates on the test split once.
pub fn train(g: &AttributedGraph, split: &DataSplit, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    split.validate(g)?;
    if split.train.is_empty() || split.val.is_empty() {
        return Err(Error::EmptyInput("training or validation split"));
    }
    for &v in split.train.iter().chain(&split.val) {
        if g.label(v).is_none() {
            return Err(Error::Unlabeled(v));
        }
    }
    let start = Instant::now();
    let (gcn, policy) = initial_models(g, config);
    let shapes: Vec<(usize, usize)> = gcn.layers.iter().chain([&gcn.classifier]).map(|t| t.shape()).collect();
    let policy_shapes = [policy.transform.shape(), policy.attention.shape()];
    let mut t = Trainer {
        g,
        config,
        alpha: config.effective_alpha(),
        gcn,
        policy,
        gcn_opt: Adam::new(config.learning_rate, &shapes),
        policy_opt: Adam::new(config.sampler_learning_rate, &policy_shapes),
    };

    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, GcnParams, SamplerPolicy, EvalResult)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut order = split.train.clone();
    for epoch in 0..config.max_epochs {
        order.clone_from(&split.train);
        order.shuffle(&mut rng::stream(&[config.seed, rng::TAG_SHUFFLE, epoch as u64]));
        let mut total = 0.0;
        let (mut cross, mut sampled) = (0, 0);
        for batch in order.chunks(config.batch_size) {
            let (loss, pairs) = t.step(batch, epoch).map_err(|e| divergence(epoch, e))?;
            total += loss * batch.len() as f64;
            cross += pairs.0;
            sampled += pairs.1;
        }
        let train_loss = total / order.len() as f64;
        let (val_loss, val) = t.validation(&split.val).map_err(|e| divergence(epoch, e))?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: "validation loss is not finite".into(),
            });
        }
        debug!(
            "epoch {epoch}: train {train_loss:.4} val {val_loss:.4} acc {:.3} dp {:.3}",
            val.accuracy, val.delta_dp
        );
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy: val.accuracy,
            val_delta_dp: val.delta_dp,
            attention: t.policy.attention_weights(),
            cross_group_share: if sampled > 0 { cross as f64 / sampled as f64 } else { 0.0 },
        });
        if best.as_ref().is_none_or(|b| val_loss < b.0) {
            best = Some((val_loss, epoch, t.gcn.clone(), t.policy.clone(), val));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (best_epoch, val) = match best {
        Some((_, epoch, gcn, policy, val)) => {
            t.gcn = gcn;
            t.policy = policy;
            (epoch, val)
        }
        None => {
            let (_, val) = t.validation(&split.val)?;
            (0, val)
        }
    };
    let test = if split.test.is_empty() {
        None
    } else {
        Some(metrics::evaluate(g, &t.gcn, &split.test, eval_mode(config, &t.policy))?)
    };
    let report = RunReport {
        config: config.clone(),
        epochs,
        best_epoch,
        stopped_early,
        val,
        test,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    info!(
        "trained seed {} alpha {} in {:.2}s, best epoch {}",
        config.seed, config.alpha, report.wall_time_secs, best_epoch
    );
    Ok(TrainOutcome {
        gcn: t.gcn,
        policy: t.policy,
        report,
    })
}
