//! One experiment run: optional edge injection followed by training.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::GcnParams;
use crate::graph::{AttributedGraph, DataSplit};
use crate::injector::{self, InjectionReport};
use crate::rng;
use crate::sampler::{SamplerPolicy, SamplerVariant};
use crate::trainer::{self, TrainConfig, TrainOutcome};

pub const CHECKPOINT_FORMAT: &str = "fairsample-checkpoint-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: TrainConfig,
    pub gcn: GcnParams,
    pub policy: SamplerPolicy,
}

impl Checkpoint {
    pub fn new(config: &TrainConfig, gcn: &GcnParams, policy: &SamplerPolicy) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            config: config.clone(),
            gcn: gcn.clone(),
            policy: policy.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::InvalidConfig(format!("unsupported checkpoint format {:?}", ck.format)));
        }
        Ok(ck)
    }
}

/// Settings of the label predictor used for pseudo-labeling: same
/// optimizer settings as `config`, no fairness penalty, uniform sampling.
pub fn predictor_config(config: &TrainConfig) -> TrainConfig {
    TrainConfig {
        alpha: 0.0,
        sampler: SamplerVariant::Uniform,
        frozen_attention: None,
        no_regularizer: false,
        uniform_sampling: false,
        no_injection: true,
        seed: rng::stream_seed(&[config.seed, rng::TAG_INJECT]),
        ..config.clone()
    }
}

/// Trains the predictor on `split.train` and injects edges into `g`.
pub fn inject_for(g: &AttributedGraph, split: &DataSplit, config: &TrainConfig) -> Result<(AttributedGraph, InjectionReport)> {
    let predictor = trainer::train(g, split, &predictor_config(config))?;
    let mut r = rng::stream(&[config.seed, rng::TAG_INJECT]);
    let (graph, mut report) = injector::inject(
        g,
        &split.train,
        &predictor.gcn,
        config.effective_injection(),
        config.hops,
        config.tau,
        config.injection_mode,
        &mut r,
    )?;
    report.seed = Some(config.seed);
    Ok((graph, report))
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub graph: AttributedGraph,
    pub injection: Option<InjectionReport>,
    pub trained: TrainOutcome,
}

pub fn run_experiment(g: &AttributedGraph, split: &DataSplit, config: &TrainConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let (graph, injection) = if config.effective_injection() > 0 {
        let (graph, report) = inject_for(g, split, config)?;
        (graph, Some(report))
    } else {
        (g.clone(), None)
    };
    let trained = trainer::train(&graph, split, config)?;
    Ok(ExperimentOutcome {
        graph,
        injection,
        trained,
    })
}
