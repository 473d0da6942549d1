use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::{ExperimentConfig, SystemKind};
use crate::plan::{PlanTree, WorkloadSchema};
use crate::predictor::{CostModel, Decomposition};
use crate::trainer::{Execution, Executor, IterationInput, IterationReport, QueryInstance, Trainer, TrainerMode};
use crate::util::Fnv64;

use super::candidates::{generate_candidates, optimal_plan};
use super::drift::DriftScript;
use super::metrics::{stability_metrics, StabilityMetrics};
use super::oracle::CostOracle;
use super::workload::{generate_workloads, sample_queries, SyntheticQuery, SyntheticWorkload, TableStats};
use super::SimError;

pub const ITERATIONS_CSV: &str = "iterations.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.lmck";

/// Schema, workloads, oracle and schedule of one experiment; a pure
/// function of the config.
pub struct SyntheticEnv {
    pub config: ExperimentConfig,
    pub schema: WorkloadSchema,
    pub stats: TableStats,
    pub workloads: Vec<SyntheticWorkload>,
    pub oracle: CostOracle,
    pub script: DriftScript,
}

/// Executes plans against the oracle at one data volume, clamping runs
/// slower than the timeout threshold of their query.
pub struct SimExecutor<'a> {
    env: &'a SyntheticEnv,
    pub volume: f64,
    /// Noise-free optimal cost at volume 1, per query id.
    optimal: HashMap<u64, f64>,
}

impl SimExecutor<'_> {
    pub fn threshold(&self, query_id: u64) -> Option<f64> {
        let c = &self.env.oracle.constants;
        self.optimal
            .get(&query_id)
            .map(|base| self.env.config.timeout_factor * (base * self.volume).max(c.floor))
    }
}

impl Executor for SimExecutor<'_> {
    fn execute(&self, query: &QueryInstance, plan: &PlanTree) -> Execution {
        let latency = self.env.oracle.latency(plan, &self.env.schema, self.volume);
        match self.threshold(query.id) {
            Some(limit) if latency > limit => Execution {
                latency: limit,
                timed_out: true,
            },
            _ => Execution {
                latency,
                timed_out: false,
            },
        }
    }
}

impl SyntheticEnv {
    pub fn new(config: ExperimentConfig) -> Result<Self, SimError> {
        config.validate().map_err(|e| SimError::Config(e.to_string()))?;
        for w in &config.workloads {
            if w.id.is_empty() || !w.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(SimError::Config(format!("workload id `{}` must be alphanumeric", w.id)));
            }
        }
        let (schema, stats, workloads) = generate_workloads(&config.workloads, config.test_queries, config.seed)?;
        let oracle = CostOracle::new(config.oracle.clone(), config.seed);
        let script = config.script().map_err(|e| SimError::Config(e.to_string()))?;
        Ok(SyntheticEnv {
            config,
            schema,
            stats,
            workloads,
            oracle,
            script,
        })
    }

    pub fn executor(&self, volume: f64) -> SimExecutor<'_> {
        SimExecutor {
            env: self,
            volume,
            optimal: HashMap::new(),
        }
    }

    /// Candidates of `query`, registered with `exec` for timeout purposes.
    pub fn instance(&self, query: &SyntheticQuery, exec: &mut SimExecutor<'_>) -> Result<QueryInstance, SimError> {
        let fanout = &self.stats.fanout;
        let (_, cost) = optimal_plan(query, &self.schema, fanout, &self.oracle)?;
        let candidates = generate_candidates(
            query,
            &self.schema,
            fanout,
            &self.oracle,
            self.config.candidates,
            self.config.include_optimal,
        )?;
        exec.optimal.insert(query.id, cost);
        Ok(QueryInstance {
            id: query.id,
            selectivities: query.selectivity_vector(self.schema.len()),
            candidates,
        })
    }

    /// Held-out queries of workload `w`.
    pub fn test_set(&self, w: usize, exec: &mut SimExecutor<'_>) -> Result<Vec<QueryInstance>, SimError> {
        self.workloads[w].test.iter().map(|q| self.instance(q, exec)).collect()
    }

    /// Training queries, test queries and executor of iteration `t`.
    pub fn iteration(&self, t: usize) -> Result<(IterationInput, SimExecutor<'_>), SimError> {
        let (w, volume) = self
            .script
            .at(t)
            .ok_or_else(|| SimError::Config(format!("iteration {t} is outside the schedule")))?;
        let mut exec = self.executor(volume);
        let queries = sample_queries(&self.workloads[w], w, t, self.config.queries_per_iteration, self.config.seed)
            .iter()
            .map(|q| self.instance(q, &mut exec))
            .collect::<Result<Vec<_>, _>>()?;
        let test = self.test_set(w, &mut exec)?;
        Ok((
            IterationInput {
                iteration: t,
                workload: self.workloads[w].id.clone(),
                volume,
                drift_flag: self.script.drift_flag(t),
                queries,
                test,
            },
            exec,
        ))
    }

    pub fn build_trainer(&self, system: SystemKind) -> Result<Trainer, SimError> {
        let cfg = &self.config;
        let dims = cfg.model.dims(self.schema.len());
        let cfg_err = |e: crate::config::ConfigError| SimError::Config(e.to_string());
        let (decomposition, mode, sizes, trainer_cfg) = match system {
            SystemKind::Limao => (
                Decomposition::Break(cfg.break_set().map_err(cfg_err)?),
                TrainerMode::Lifelong,
                cfg.hub_sizes.clone(),
                cfg.trainer.clone(),
            ),
            SystemKind::Baseline => {
                let mut t = cfg.trainer.clone();
                t.maintain_hubs = false;
                (
                    Decomposition::Whole,
                    TrainerMode::Retrain,
                    BTreeMap::from([("OTH".to_string(), 1)]),
                    t,
                )
            }
        };
        let model = CostModel::new(dims, decomposition, cfg.hub.clone(), cfg.seed).map_err(crate::trainer::TrainerError::from)?;
        Ok(Trainer::new(trainer_cfg, mode, model, sizes, self.schema.clone(), cfg.seed)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemRun {
    pub system: SystemKind,
    pub trainer: Trainer,
    pub reports: Vec<IterationReport>,
}

/// Everything needed to continue an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentState {
    pub config: ExperimentConfig,
    pub next_iteration: usize,
    pub runs: Vec<SystemRun>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSummary {
    pub system: SystemKind,
    pub metrics: StabilityMetrics,
    pub total_latency: f64,
    pub min_iteration_latency: f64,
    pub post_warmup_timeouts: usize,
    pub mean_test_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub iterations: usize,
    pub warmup: usize,
    pub timeout_factor: f64,
    pub systems: Vec<SystemSummary>,
}

impl Summary {
    pub fn system(&self, kind: SystemKind) -> Option<&SystemSummary> {
        self.systems.iter().find(|s| s.system == kind)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub crate_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub defaulted_fields: Vec<String>,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig, defaulted_fields: Vec<String>) -> Self {
        let mut h = Fnv64::new();
        h.write_str(&config.to_toml());
        Manifest {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config_hash: format!("{:016x}", h.finish()),
            defaulted_fields,
            config: config.clone(),
        }
    }
}

pub struct ExperimentOutcome {
    pub state: ExperimentState,
    pub summary: Summary,
}

impl ExperimentOutcome {
    pub fn run(&self, system: SystemKind) -> Option<&SystemRun> {
        self.state.runs.iter().find(|r| r.system == system)
    }
}

impl ExperimentState {
    pub fn new(env: &SyntheticEnv) -> Result<Self, SimError> {
        let runs = env
            .config
            .systems
            .iter()
            .map(|&s| {
                Ok(SystemRun {
                    system: s,
                    trainer: env.build_trainer(s)?,
                    reports: Vec::new(),
                })
            })
            .collect::<Result<Vec<_>, SimError>>()?;
        Ok(ExperimentState {
            config: env.config.clone(),
            next_iteration: 1,
            runs,
        })
    }

    /// Runs iterations up to and including `until`, every system on the same
    /// queries, candidates and executor.
    pub fn advance(&mut self, env: &SyntheticEnv, until: usize, out: Option<&Path>) -> Result<(), SimError> {
        let last = until.min(env.script.len());
        while self.next_iteration <= last {
            let t = self.next_iteration;
            let (input, exec) = env.iteration(t)?;
            for run in &mut self.runs {
                let report = run.trainer.run_iteration(&input, &exec)?;
                info!(
                    "{} iteration {t}: workload {} latency {:.3} timeouts {}",
                    run.system.name(),
                    report.workload,
                    report.total_latency,
                    report.timeouts
                );
                run.reports.push(report);
            }
            self.next_iteration += 1;
            if let (Some(dir), Some(every)) = (out, env.config.checkpoint_every) {
                if t % every == 0 {
                    checkpoint::save(self, &dir.join(CHECKPOINT_FILE)).map_err(|e| SimError::Checkpoint(e.to_string()))?;
                }
            }
        }
        Ok(())
    }

    pub fn summary(&self, script: &DriftScript) -> Result<Summary, SimError> {
        let warmup = self.config.warmup;
        let systems = self
            .runs
            .iter()
            .map(|run| {
                let series: Vec<f64> = run.reports.iter().map(|r| r.total_latency).collect();
                let timeouts: Vec<usize> = run.reports.iter().map(|r| r.timeouts).collect();
                let switches: Vec<bool> = run.reports.iter().map(|r| script.drift_flag(r.iteration)).collect();
                let metrics = stability_metrics(&series, &timeouts, &switches, warmup)?;
                let errors: Vec<f64> = run.reports.iter().filter_map(|r| r.test_error).collect();
                Ok(SystemSummary {
                    system: run.system,
                    total_latency: series.iter().sum(),
                    min_iteration_latency: series.iter().copied().fold(f64::INFINITY, f64::min),
                    post_warmup_timeouts: timeouts.iter().skip(warmup).sum(),
                    mean_test_error: (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64),
                    metrics,
                })
            })
            .collect::<Result<Vec<_>, SimError>>()?;
        Ok(Summary {
            seed: self.config.seed,
            iterations: self.next_iteration - 1,
            warmup,
            timeout_factor: self.config.timeout_factor,
            systems,
        })
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub const CSV_HEADER: &str = "system,iteration,workload,volume,drift_flag,drift_detected,total_latency,timeouts,\
online_error,test_error,test_latency,offline_train_size,b_last_len,b_all_len,modules,created_modules,pruned_modules,latencies";

/// Per-iteration rows of every system, systems in config order.
pub fn iterations_csv(runs: &[SystemRun]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for run in runs {
        for r in &run.reports {
            let lat: Vec<String> = r.latencies.iter().map(|x| x.to_string()).collect();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                run.system.name(),
                r.iteration,
                r.workload,
                r.volume,
                r.drift_flag,
                r.drift_detected,
                r.total_latency,
                r.timeouts,
                r.online_error,
                opt(r.test_error),
                opt(r.test_latency),
                r.offline_train_size.map_or_else(String::new, |n| n.to_string()),
                r.b_last_len,
                r.b_all_len,
                r.modules,
                r.created_modules,
                r.pruned_modules,
                lat.join(";"),
            )
            .expect("writing to a string");
        }
    }
    out
}

fn write_outputs(dir: &Path, outcome: &ExperimentOutcome, manifest: &Manifest) -> Result<(), SimError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(ITERATIONS_CSV), iterations_csv(&outcome.state.runs))?;
    std::fs::write(dir.join(SUMMARY_JSON), serde_json::to_string_pretty(&outcome.summary)?)?;
    std::fs::write(dir.join(MANIFEST_JSON), serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}

/// Runs every configured system over the whole schedule. With `out`, writes
/// the CSV, summary, manifest and periodic checkpoints there.
pub fn run_experiment(
    config: &ExperimentConfig,
    defaulted_fields: Vec<String>,
    out: Option<&Path>,
) -> Result<ExperimentOutcome, SimError> {
    let env = SyntheticEnv::new(config.clone())?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    let mut state = ExperimentState::new(&env)?;
    finish(&env, &mut state, defaulted_fields, out)
}

/// Continues from the checkpoint in `dir`.
pub fn resume_experiment(dir: &Path, defaulted_fields: Vec<String>) -> Result<ExperimentOutcome, SimError> {
    let mut state: ExperimentState =
        checkpoint::load(&dir.join(CHECKPOINT_FILE)).map_err(|e| SimError::Checkpoint(e.to_string()))?;
    let env = SyntheticEnv::new(state.config.clone())?;
    finish(&env, &mut state, defaulted_fields, Some(dir))
}

fn finish(
    env: &SyntheticEnv,
    state: &mut ExperimentState,
    defaulted_fields: Vec<String>,
    out: Option<&Path>,
) -> Result<ExperimentOutcome, SimError> {
    state.advance(env, env.script.len(), out)?;
    let summary = state.summary(&env.script)?;
    let outcome = ExperimentOutcome {
        state: state.clone(),
        summary,
    };
    if let Some(dir) = out {
        write_outputs(dir, &outcome, &Manifest::new(&env.config, defaulted_fields))?;
    }
    Ok(outcome)
}
