use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fairsample::datagen::{self, SbmSpec};
use fairsample::graph::{AttributedGraph, DataSplit, SPLIT_FILE};
use fairsample::injector::{self, InjectionMode};
use fairsample::metrics;
use fairsample::pipeline::{self, Checkpoint};
use fairsample::suite::{self, SuiteConfig};
use fairsample::theory;
use fairsample::trainer::{self, EvalSetting, TrainConfig};

#[derive(Parser)]
#[command(name = "fairsample", version, about = "Fair GCN training with learned neighbor sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a stochastic block model graph and split.
    Synth {
        /// JSON SbmSpec; the built-in two-group default when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pseudo-label, then add inter-group edges; writes the augmented graph.
    InjectEdges {
        #[command(flatten)]
        run: RunArgs,
        /// Edges each labeled node may initiate.
        #[arg(long)]
        m: Option<usize>,
        /// Hop radius of the candidate search.
        #[arg(long)]
        h: Option<usize>,
        /// Pseudo-label confidence threshold.
        #[arg(long)]
        tau: Option<f64>,
        /// auto, homophilic or heterophilic.
        #[arg(long)]
        mode: Option<InjectionMode>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inject (if configured) and train; writes report.json and checkpoint.json.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        split: Option<PathBuf>,
        /// train, val, test, or all (every node, for diagnostics).
        #[arg(long, default_value = "test")]
        part: String,
        /// Use sampled computation trees instead of full neighborhoods.
        #[arg(long)]
        sampled: bool,
    },
    /// Check the fairness bound on random small graphs; CSV to stdout.
    VerifyBound {
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 12)]
        max_nodes: usize,
        #[arg(long, default_value_t = 4)]
        max_dim: usize,
    },
    /// Run a method × grid × seed sweep.
    Suite {
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute aggregates and the selection table from a runs.csv.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Graph directory (edges.tsv, features.csv, meta.json).
    #[arg(long)]
    graph: PathBuf,
    /// Split file; defaults to split.json inside the graph directory.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// key=value, value parsed as JSON when possible. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, env = "FAIRSAMPLE_SEED")]
    seed: Option<u64>,
}

impl RunArgs {
    fn load(&self) -> Result<(AttributedGraph, DataSplit, TrainConfig)> {
        let graph = AttributedGraph::load_dir(&self.graph).with_context(|| format!("loading graph from {}", self.graph.display()))?;
        let split = load_split(&self.graph, self.split.as_deref())?;
        let mut config = match &self.config {
            Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("parsing {}", p.display()))?,
            None => TrainConfig::default(),
        };
        for o in &self.overrides {
            config.apply_override(o)?;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        config.validate()?;
        Ok((graph, split, config))
    }
}

fn load_split(graph_dir: &Path, split: Option<&Path>) -> Result<DataSplit> {
    let path = split.map(Path::to_path_buf).unwrap_or_else(|| graph_dir.join(SPLIT_FILE));
    DataSplit::load(&path).with_context(|| format!("loading split from {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { spec, seed, out } => {
            let mut spec: SbmSpec = match spec {
                Some(p) => serde_json::from_str(&fs::read_to_string(&p)?).with_context(|| format!("parsing {}", p.display()))?,
                None => SbmSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let (g, split) = datagen::generate(&spec)?;
            g.save_dir(&out)?;
            split.save(&out.join(SPLIT_FILE))?;
            println!(
                "{} nodes, {} edges, intra-group ratio {:.3} (expected {:.3})",
                g.node_count(),
                g.edge_count(),
                g.intra_group_edge_ratio()?,
                spec.expected_intra_ratio()
            );
        }
        Command::InjectEdges {
            run,
            m,
            h,
            tau,
            mode,
            out,
        } => {
            let (g, split, mut config) = run.load()?;
            config.injected_edges = m.unwrap_or(config.injected_edges);
            config.hops = h.unwrap_or(config.hops);
            config.tau = tau.unwrap_or(config.tau);
            config.injection_mode = mode.unwrap_or(config.injection_mode);
            config.no_injection = false;
            config.validate()?;
            let (augmented, report) = if config.effective_injection() == 0 {
                let mode = config.injection_mode.resolve(&g)?;
                injector::inject_with_labels(&g, g.labels(), 0, config.hops, mode, &mut fairsample::rng::stream(&[config.seed]))?
            } else {
                pipeline::inject_for(&g, &split, &config)?
            };
            augmented.save_dir(&out)?;
            split.save(&out.join(SPLIT_FILE))?;
            write_json(&out.join("injection.json"), &report)?;
            println!(
                "added {} edges; intra-group ratio {:.3} -> {:.3}",
                report.edges.len(),
                g.intra_group_edge_ratio()?,
                augmented.intra_group_edge_ratio()?
            );
        }
        Command::Train { run, out } => {
            let (g, split, config) = run.load()?;
            let result = pipeline::run_experiment(&g, &split, &config)?;
            fs::create_dir_all(&out)?;
            write_json(&out.join("report.json"), &result.trained.report)?;
            Checkpoint::new(&config, &result.trained.gcn, &result.trained.policy).save(&out.join("checkpoint.json"))?;
            if let Some(inj) = &result.injection {
                write_json(&out.join("injection.json"), inj)?;
                result.graph.save_dir(&out.join("graph"))?;
                split.save(&out.join("graph").join(SPLIT_FILE))?;
            }
            let rep = &result.trained.report;
            match &rep.test {
                Some(t) => println!("test accuracy {:.4}, ΔDP {:.4} (best epoch {})", t.accuracy, t.delta_dp, rep.best_epoch),
                None => println!("no test nodes; val accuracy {:.4}", rep.val.accuracy),
            }
        }
        Command::Eval {
            graph,
            checkpoint,
            split,
            part,
            sampled,
        } => {
            let g = AttributedGraph::load_dir(&graph)?;
            let split = load_split(&graph, split.as_deref())?;
            let ck = Checkpoint::load(&checkpoint)?;
            let all: Vec<usize> = (0..g.node_count()).collect();
            let nodes = match part.as_str() {
                "train" => &split.train,
                "val" => &split.val,
                "test" => &split.test,
                "all" => &all,
                other => bail!("unknown split part {other:?}; use train, val, test or all"),
            };
            let mut config = ck.config.clone();
            if sampled {
                config.eval = EvalSetting::Sampled;
            }
            let result = metrics::evaluate(&g, &ck.gcn, nodes, trainer::eval_mode(&config, &ck.policy))?;
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        Command::VerifyBound {
            trials,
            seed,
            max_nodes,
            max_dim,
        } => {
            let mut r = fairsample::rng::stream(&[seed]);
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            writeln!(out, "trial,nodes,dim,steps,empirical,bound,holds")?;
            let mut violations = 0;
            for trial in 0..trials {
                let inst = theory::random_instance(&mut r, max_nodes, max_dim)?;
                let lhs = theory::empirical_dp(&inst.graph, &inst.weights, inst.steps)?;
                let rhs = theory::dp_upper_bound(&inst.graph, &inst.weights, inst.steps)?;
                let holds = lhs <= rhs + 1e-8;
                violations += usize::from(!holds);
                writeln!(
                    out,
                    "{trial},{},{},{},{lhs},{rhs},{holds}",
                    inst.graph.node_count(),
                    inst.graph.feature_dim(),
                    inst.steps
                )?;
            }
            if violations > 0 {
                bail!("bound violated in {violations} of {trials} trials");
            }
        }
        Command::Suite { grid, out } => {
            let config: SuiteConfig = match grid {
                Some(p) => serde_json::from_str(&fs::read_to_string(&p)?).with_context(|| format!("parsing {}", p.display()))?,
                None => SuiteConfig::default(),
            };
            let result = suite::run_suite(&config)?;
            suite::write_results(&out, &result)?;
            for row in &result.table {
                println!(
                    "{:<11} {:<32} acc {:.4} ± {:.4}  ΔDP {:.4} ± {:.4}",
                    row.method.name(),
                    row.cell,
                    row.test_accuracy_mean,
                    row.test_accuracy_std,
                    row.test_delta_dp_mean,
                    row.test_delta_dp_std
                );
            }
            let failed = result.runs.iter().filter(|r| !r.ok()).count();
            if failed > 0 {
                eprintln!("{failed} runs failed; see {}", out.join(suite::RUNS_FILE).display());
            }
        }
        Command::Report { runs, out } => {
            let records = suite::read_runs(&runs)?;
            let result = suite::aggregate(records)?;
            suite::write_table(&out, &result.table)?;
            println!("{} methods written to {}", result.table.len(), out.display());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
