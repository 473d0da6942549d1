//! Two-phase lifelong training loop.
//!
//! Each iteration first refreshes the main model `M` from the episodically
//! trained copy `M'` and replays either the last iteration's experience or,
//! after drift, all experience. `M'` then serves the iteration's queries
//! episode by episode and is lightly retrained after each episode while `M`
//! stays frozen.

use std::collections::BTreeMap;
use std::time::Instant;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encode::{FixedSelectivities, TaskEncoding};
use crate::hub::{HubError, HubKind, MaintenanceAction};
use crate::nn::{Adam, AdamConfig, Parameterized};
use crate::plan::{PlanTree, WorkloadSchema};
use crate::predictor::{log_target, CostModel, Example, ParamSet, PredictError, PreparedPlan, Selection};
use crate::util::rng_for;

const SEED_ONLINE: u64 = 0x4f4e;
const SEED_OFFLINE: u64 = 0x4f46;
const SEED_RESERVOIR: u64 = 0x5253;

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Hub(#[from] HubError),
    #[error("query {0} has no candidate plans")]
    NoCandidates(u64),
    #[error("invalid trainer configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftDetector {
    /// Ground-truth switch flag supplied with the iteration.
    OracleFlag,
    /// Last iteration's mean online error against the trailing mean.
    LossShift,
    /// Either of the above.
    #[default]
    Combined,
}

/// Which buffer offline training replays.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayPolicy {
    /// `b_all` after drift, `b_last` otherwise.
    #[default]
    DriftSelected,
    /// Always `b_last` (ablation).
    LastOnly,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainerMode {
    /// Online episodes on `M'`, drift-selected offline replay, hub maintenance.
    #[default]
    Lifelong,
    /// Predict with one model all iteration, then retrain it on `b_last`.
    Retrain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub episode_size: usize,
    pub online_epochs: usize,
    pub offline_epochs: usize,
    pub batch_size: usize,
    pub drift_detector: DriftDetector,
    pub loss_shift_factor: f64,
    pub replay: ReplayPolicy,
    /// Wall-clock cap per online training call; truncates epochs.
    pub online_time_cap_secs: Option<f64>,
    /// Reservoir cap on `b_all`; unbounded when `None`.
    pub b_all_cap: Option<usize>,
    pub hub_fit_iters: usize,
    /// Apply queued hub creations and prune small clusters offline.
    pub maintain_hubs: bool,
    pub adam: AdamConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            episode_size: 10,
            online_epochs: 3,
            offline_epochs: 30,
            batch_size: 8,
            drift_detector: DriftDetector::Combined,
            loss_shift_factor: 1.5,
            replay: ReplayPolicy::DriftSelected,
            online_time_cap_secs: Some(3.0),
            b_all_cap: None,
            hub_fit_iters: 20,
            maintain_hubs: true,
            adam: AdamConfig {
                lr: 2e-3,
                ..AdamConfig::default()
            },
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainerError> {
        if self.episode_size == 0 {
            return Err(TrainerError::Config("episode_size must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainerError::Config("batch_size must be at least 1".into()));
        }
        if self.b_all_cap == Some(0) {
            return Err(TrainerError::Config("b_all_cap must be positive".into()));
        }
        if !(self.loss_shift_factor > 0.0) {
            return Err(TrainerError::Config("loss_shift_factor must be positive".into()));
        }
        Ok(())
    }
}

/// A query as the trainer sees it: candidate plans to choose from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryInstance {
    pub id: u64,
    /// Per-table selectivities (Feature A source); zero for absent tables.
    pub selectivities: Vec<f64>,
    pub candidates: Vec<PlanTree>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Execution {
    pub latency: f64,
    pub timed_out: bool,
}

/// Runs a chosen plan.
pub trait Executor {
    fn execute(&self, query: &QueryInstance, plan: &PlanTree) -> Execution;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperienceRecord {
    pub query_id: u64,
    pub prepared: PreparedPlan,
    /// Modules used when the plan was chosen.
    pub selections: Vec<Selection>,
    pub latency: f64,
    pub timed_out: bool,
    pub iteration: usize,
    pub episode: usize,
    /// Prediction of the serving model, `ln(1 + latency)` units.
    pub predicted: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Buffers {
    pub b_episode: Vec<ExperienceRecord>,
    pub b_last: Vec<ExperienceRecord>,
    pub b_all: Vec<ExperienceRecord>,
    /// Records ever offered to `b_all` (reservoir bookkeeping).
    pub b_all_seen: u64,
}

/// What the environment supplies for one iteration.
#[derive(Clone, Debug)]
pub struct IterationInput {
    /// 1-based.
    pub iteration: usize,
    pub workload: String,
    pub volume: f64,
    /// Ground-truth drift relative to the previous iteration.
    pub drift_flag: bool,
    pub queries: Vec<QueryInstance>,
    pub test: Vec<QueryInstance>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub workload: String,
    pub volume: f64,
    pub drift_flag: bool,
    pub drift_detected: bool,
    pub total_latency: f64,
    pub latencies: Vec<f64>,
    pub timeouts: usize,
    /// Mean squared online prediction error in log space.
    pub online_error: f64,
    /// Mean squared error of `M` over all candidates of the test queries.
    pub test_error: Option<f64>,
    /// Summed latency of `M`'s choices on the test queries.
    pub test_latency: Option<f64>,
    /// Records used by the offline update, `None` when it did not train.
    pub offline_train_size: Option<usize>,
    /// Records used by every online training call.
    pub online_train_sizes: Vec<usize>,
    pub b_last_len: usize,
    pub b_all_len: usize,
    pub modules: usize,
    pub hub_sizes: Vec<(String, usize)>,
    pub created_modules: usize,
    pub pruned_modules: usize,
    /// `M`'s checksum right after `M' <- copy(M)` and at the end of the online phase.
    pub m_checksum_online_start: u64,
    pub m_checksum_online_end: u64,
    #[serde(skip)]
    pub wall_secs: f64,
}

/// Which parameters a training call updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainScope {
    Full,
    /// Only the final output layer; everything below is frozen.
    HeadOnly,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainStats {
    pub records: usize,
    pub epochs_run: usize,
    /// Mean batch loss of every epoch.
    pub epoch_losses: Vec<f64>,
    pub rejected_steps: usize,
}

/// Mini-batch regression of `model` on `records` in `ln(1 + latency)` space.
/// Stored selections are kept unless their module was pruned. Batch order is
/// shuffled with a seed derived from `seed_path`.
#[allow(clippy::too_many_arguments)]
pub fn train_on_records(
    model: &mut CostModel,
    records: &[&ExperienceRecord],
    epochs: usize,
    batch_size: usize,
    adam: AdamConfig,
    seed: u64,
    seed_path: &[u64],
    deadline: Option<Instant>,
    scope: TrainScope,
) -> Result<TrainStats, TrainerError> {
    let mut stats = TrainStats {
        records: records.len(),
        ..TrainStats::default()
    };
    if records.is_empty() || epochs == 0 {
        return Ok(stats);
    }
    let selections: Vec<Vec<Selection>> = records
        .iter()
        .map(|r| model.resolve(&r.prepared, &r.selections))
        .collect::<Result<_, _>>()?;
    let targets: Vec<f64> = records.iter().map(|r| log_target(r.latency)).collect();
    let mut opt = Adam::new(adam);
    let mut order: Vec<usize> = (0..records.len()).collect();
    for epoch in 0..epochs {
        if deadline.is_some_and(|d| Instant::now() >= d) {
            break;
        }
        let mut path = seed_path.to_vec();
        path.push(epoch as u64);
        order.shuffle(&mut rng_for(seed, &path));
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch_size.max(1)) {
            let examples: Vec<Example<'_>> = chunk
                .iter()
                .map(|&i| Example {
                    prepared: &records[i].prepared,
                    selections: &selections[i],
                    target: targets[i],
                })
                .collect();
            let (loss, mut grads) = model.loss_and_grads(&examples)?;
            if scope == TrainScope::HeadOnly {
                freeze_below_head(&mut grads);
            }
            match opt.step(&mut model.params, &grads) {
                Ok(()) => {
                    total += loss;
                    batches += 1;
                }
                Err(e) => {
                    warn!("skipping optimizer step: {e}");
                    stats.rejected_steps += 1;
                }
            }
        }
        stats.epochs_run += 1;
        stats.epoch_losses.push(if batches > 0 { total / batches as f64 } else { f64::NAN });
    }
    Ok(stats)
}

fn freeze_below_head(grads: &mut ParamSet) {
    grads.modules.clear();
    let keep = grads.shared.out_final.clone();
    grads.shared.fill(0.0);
    grads.shared.out_final = keep;
}

/// LossShift rule: the last value is at least `factor` times the mean of the
/// (up to) three values before it.
pub fn loss_shift(history: &[f64], factor: f64) -> bool {
    let Some((&last, rest)) = history.split_last() else {
        return false;
    };
    if rest.is_empty() {
        return false;
    }
    let tail = &rest[rest.len().saturating_sub(3)..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    last >= factor * mean && last > mean
}

fn prepare_all(schema: &WorkloadSchema, model: &CostModel, q: &QueryInstance) -> Result<Vec<PreparedPlan>, TrainerError> {
    let sel = FixedSelectivities(q.selectivities.clone());
    q.candidates
        .iter()
        .map(|p| model.prepare(p, schema, &sel).map_err(TrainerError::from))
        .collect()
}

/// Places prototypes in empty hubs from the tasks of `queries`' candidates.
fn bootstrap_hubs(
    schema: &WorkloadSchema,
    sizes: &BTreeMap<String, usize>,
    fit_iters: usize,
    model: &mut CostModel,
    queries: &[QueryInstance],
) -> Result<(), TrainerError> {
    if model.hubs.iter().all(|h| !h.is_empty()) {
        return Ok(());
    }
    let mut by_kind: BTreeMap<HubKind, Vec<TaskEncoding>> = BTreeMap::new();
    for q in queries {
        for p in prepare_all(schema, model, q)? {
            for (t, e) in p.tasks.iter().zip(p.encodings) {
                by_kind.entry(HubKind::for_task(&t.kind)).or_default().push(e);
            }
        }
    }
    let size = |k: &HubKind| sizes.get(&k.to_string()).copied().unwrap_or(1).max(1);
    model.init_hubs(&by_kind, size, fit_iters)?;
    Ok(())
}

/// Chooses the candidate with the lowest estimate under `model`.
fn choose(model: &CostModel, prepared: Vec<PreparedPlan>) -> Result<(PreparedPlan, Vec<Selection>, f64), TrainerError> {
    let mut best: Option<(PreparedPlan, Vec<Selection>, f64)> = None;
    for p in prepared {
        let sel = model.select(&p)?;
        let est = model.predict(&p, &sel)?.value;
        if best.as_ref().is_none_or(|(_, _, b)| est < *b) {
            best = Some((p, sel, est));
        }
    }
    best.ok_or(TrainerError::NoCandidates(0))
}

/// Complete trainer state; checkpoints serialise this.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trainer {
    pub config: TrainerConfig,
    pub mode: TrainerMode,
    /// Main model `M`.
    pub model: CostModel,
    /// Episodic copy `M'`.
    pub copy: CostModel,
    pub buffers: Buffers,
    pub hub_sizes: BTreeMap<String, usize>,
    /// Mean online error of every finished iteration.
    pub error_history: Vec<f64>,
    /// Novel task encodings seen online, applied at the next offline update.
    pub creation_queue: Vec<(HubKind, TaskEncoding)>,
    pub schema: WorkloadSchema,
    pub seed: u64,
    pub completed: usize,
}

impl Trainer {
    pub fn new(
        config: TrainerConfig,
        mode: TrainerMode,
        model: CostModel,
        hub_sizes: BTreeMap<String, usize>,
        schema: WorkloadSchema,
        seed: u64,
    ) -> Result<Self, TrainerError> {
        config.validate()?;
        Ok(Trainer {
            copy: model.deep_copy(),
            config,
            mode,
            model,
            buffers: Buffers::default(),
            hub_sizes,
            error_history: Vec::new(),
            creation_queue: Vec::new(),
            schema,
            seed,
            completed: 0,
        })
    }

    fn bootstrap(&self, model: &mut CostModel, queries: &[QueryInstance]) -> Result<(), TrainerError> {
        bootstrap_hubs(&self.schema, &self.hub_sizes, self.config.hub_fit_iters, model, queries)
    }

    pub fn detect_drift(&self, input: &IterationInput) -> bool {
        match self.config.drift_detector {
            DriftDetector::OracleFlag => input.drift_flag,
            DriftDetector::LossShift => loss_shift(&self.error_history, self.config.loss_shift_factor),
            DriftDetector::Combined => {
                input.drift_flag || loss_shift(&self.error_history, self.config.loss_shift_factor)
            }
        }
    }

    fn records_for_replay(&self, drift: bool) -> Vec<&ExperienceRecord> {
        let use_all = drift && self.config.replay == ReplayPolicy::DriftSelected;
        if use_all {
            self.buffers.b_all.iter().collect()
        } else {
            self.buffers.b_last.iter().collect()
        }
    }

    /// `M <- copy(M')`, pending hub creations, replay training, hub sweep.
    /// Returns (records trained on, created, pruned).
    pub fn offline_update(&mut self, drift: bool, iteration: usize) -> Result<(Option<usize>, usize, usize), TrainerError> {
        let mut m = self.copy.deep_copy();
        let mut created = 0;
        if self.config.maintain_hubs {
            for (kind, x) in std::mem::take(&mut self.creation_queue) {
                let Some(hi) = m.hubs.iter().position(|h| h.kind == kind) else {
                    continue;
                };
                if m.hubs[hi].is_empty() {
                    continue;
                }
                let mut hub = m.hubs[hi].clone();
                let action = hub.maintain(&x, |nearest| m.alloc_module(Some(nearest)))?;
                if matches!(action, MaintenanceAction::Created { .. }) {
                    created += 1;
                }
                m.hubs[hi] = hub;
            }
        } else {
            self.creation_queue.clear();
        }

        let records = self.records_for_replay(drift);
        let trained = if records.is_empty() {
            warn!("iteration {iteration}: replay buffer is empty, skipping offline training");
            None
        } else {
            let n = records.len();
            train_on_records(
                &mut m,
                &records,
                self.config.offline_epochs,
                self.config.batch_size,
                self.config.adam,
                self.seed,
                &[SEED_OFFLINE, iteration as u64],
                None,
                TrainScope::Full,
            )?;
            Some(n)
        };

        let mut pruned = 0;
        if self.config.maintain_hubs && !self.buffers.b_all.is_empty() {
            for hi in 0..m.hubs.len() {
                if m.hubs[hi].is_empty() {
                    continue;
                }
                let kind = m.hubs[hi].kind.clone();
                let tasks: Vec<TaskEncoding> = self
                    .buffers
                    .b_all
                    .iter()
                    .flat_map(|r| {
                        r.prepared
                            .tasks
                            .iter()
                            .zip(&r.prepared.encodings)
                            .filter(|(t, _)| HubKind::for_task(&t.kind) == kind)
                            .map(|(_, e)| e.clone())
                    })
                    .collect();
                if tasks.is_empty() {
                    continue;
                }
                m.hubs[hi].recount(&tasks)?;
                let removed = m.hubs[hi].sweep(&tasks)?;
                pruned += removed.len();
                m.remove_modules(&removed);
            }
        }
        self.model = m;
        Ok((trained, created, pruned))
    }

    fn push_b_all(&mut self, records: Vec<ExperienceRecord>) {
        for r in records {
            let seen = self.buffers.b_all_seen;
            self.buffers.b_all_seen += 1;
            match self.config.b_all_cap {
                Some(cap) if self.buffers.b_all.len() >= cap => {
                    let j = rng_for(self.seed, &[SEED_RESERVOIR, seen]).gen_range(0..=seen);
                    if (j as usize) < cap {
                        self.buffers.b_all[j as usize] = r;
                    }
                }
                _ => self.buffers.b_all.push(r),
            }
        }
    }

    /// Runs one iteration of the loop.
    pub fn run_iteration(&mut self, input: &IterationInput, exec: &dyn Executor) -> Result<IterationReport, TrainerError> {
        let started = Instant::now();
        let t = input.iteration;
        if let Some(q) = input.queries.iter().chain(&input.test).find(|q| q.candidates.is_empty()) {
            return Err(TrainerError::NoCandidates(q.id));
        }
        match self.mode {
            TrainerMode::Lifelong => self.run_lifelong(input, exec, started),
            TrainerMode::Retrain => self.run_retrain(input, exec, started),
        }
        .inspect(|_| self.completed = t)
    }

    fn run_lifelong(
        &mut self,
        input: &IterationInput,
        exec: &dyn Executor,
        started: Instant,
    ) -> Result<IterationReport, TrainerError> {
        let t = input.iteration;
        let first = self.completed == 0;
        let mut drift_detected = false;
        let mut offline = (None, 0, 0);
        if first {
            let mut m = self.model.deep_copy();
            self.bootstrap(&mut m, &input.queries)?;
            self.model = m;
        } else {
            drift_detected = self.detect_drift(input);
            offline = self.offline_update(drift_detected, t)?;
        }

        self.copy = self.model.deep_copy();
        let m_start = self.model.checksum();
        self.buffers.b_last.clear();

        let mut latencies = Vec::new();
        let mut timeouts = 0;
        let mut sq_err = 0.0;
        let mut online_sizes = Vec::new();
        for (e, episode) in input.queries.chunks(self.config.episode_size).enumerate() {
            for q in episode {
                // Hubs only get bootstrapped here for task kinds never seen before.
                bootstrap_hubs(
                    &self.schema,
                    &self.hub_sizes,
                    self.config.hub_fit_iters,
                    &mut self.copy,
                    std::slice::from_ref(q),
                )?;
                let copy = &self.copy;
                let prepared = prepare_all(&self.schema, copy, q)?;
                let (chosen, sel, est) = choose(copy, prepared)?;
                if self.config.maintain_hubs {
                    for (task, enc) in chosen.tasks.iter().zip(&chosen.encodings) {
                        let kind = HubKind::for_task(&task.kind);
                        if let Some(hub) = copy.hub(&kind) {
                            if !hub.is_empty() && hub.is_novel(enc)? {
                                self.creation_queue.push((kind, enc.clone()));
                            }
                        }
                    }
                }
                let run = exec.execute(q, &chosen.plan);
                let err = est - log_target(run.latency);
                sq_err += err * err;
                latencies.push(run.latency);
                timeouts += usize::from(run.timed_out);
                self.buffers.b_episode.push(ExperienceRecord {
                    query_id: q.id,
                    prepared: chosen,
                    selections: sel,
                    latency: run.latency,
                    timed_out: run.timed_out,
                    iteration: t,
                    episode: e,
                    predicted: est,
                });
            }
            let deadline = self
                .config
                .online_time_cap_secs
                .map(|s| Instant::now() + std::time::Duration::from_secs_f64(s));
            let records: Vec<&ExperienceRecord> = self.buffers.b_episode.iter().collect();
            let stats = train_on_records(
                &mut self.copy,
                &records,
                self.config.online_epochs,
                self.config.batch_size,
                self.config.adam,
                self.seed,
                &[SEED_ONLINE, t as u64, e as u64],
                deadline,
                TrainScope::Full,
            )?;
            online_sizes.push(stats.records);
            let folded = std::mem::take(&mut self.buffers.b_episode);
            self.buffers.b_last.extend(folded);
        }
        let m_end = self.model.checksum();
        self.push_b_all(self.buffers.b_last.clone());
        let n = latencies.len().max(1) as f64;
        self.error_history.push(sq_err / n);
        let (test_error, test_latency) = self.evaluate(&self.model, &input.test, exec)?;
        Ok(self.report(input, drift_detected, latencies, timeouts, sq_err / n, (test_error, test_latency), offline, online_sizes, (m_start, m_end), started))
    }

    fn run_retrain(
        &mut self,
        input: &IterationInput,
        exec: &dyn Executor,
        started: Instant,
    ) -> Result<IterationReport, TrainerError> {
        let t = input.iteration;
        let first = self.completed == 0;
        let mut trained = None;
        if first {
            let mut m = self.model.deep_copy();
            self.bootstrap(&mut m, &input.queries)?;
            self.model = m;
        } else if !self.buffers.b_last.is_empty() {
            let records: Vec<&ExperienceRecord> = self.buffers.b_last.iter().collect();
            let mut m = self.model.deep_copy();
            train_on_records(
                &mut m,
                &records,
                self.config.offline_epochs,
                self.config.batch_size,
                self.config.adam,
                self.seed,
                &[SEED_OFFLINE, t as u64],
                None,
                TrainScope::Full,
            )?;
            trained = Some(records.len());
            self.model = m;
        }
        self.copy = self.model.deep_copy();
        let m_start = self.model.checksum();
        self.buffers.b_last.clear();
        let mut latencies = Vec::new();
        let mut timeouts = 0;
        let mut sq_err = 0.0;
        for (i, q) in input.queries.iter().enumerate() {
            let prepared = prepare_all(&self.schema, &self.model, q)?;
            let (chosen, sel, est) = choose(&self.model, prepared)?;
            let run = exec.execute(q, &chosen.plan);
            let err = est - log_target(run.latency);
            sq_err += err * err;
            latencies.push(run.latency);
            timeouts += usize::from(run.timed_out);
            self.buffers.b_last.push(ExperienceRecord {
                query_id: q.id,
                prepared: chosen,
                selections: sel,
                latency: run.latency,
                timed_out: run.timed_out,
                iteration: t,
                episode: i / self.config.episode_size,
                predicted: est,
            });
        }
        let m_end = self.model.checksum();
        self.push_b_all(self.buffers.b_last.clone());
        let n = latencies.len().max(1) as f64;
        self.error_history.push(sq_err / n);
        let (test_error, test_latency) = self.evaluate(&self.model, &input.test, exec)?;
        Ok(self.report(input, false, latencies, timeouts, sq_err / n, (test_error, test_latency), (trained, 0, 0), Vec::new(), (m_start, m_end), started))
    }

    /// Error of `model` over every candidate of `test` and the latency of its
    /// choices. Touches no buffer.
    pub fn evaluate(
        &self,
        model: &CostModel,
        test: &[QueryInstance],
        exec: &dyn Executor,
    ) -> Result<(Option<f64>, Option<f64>), TrainerError> {
        if test.is_empty() {
            return Ok((None, None));
        }
        let mut sq = 0.0;
        let mut count = 0usize;
        let mut total = 0.0;
        for q in test {
            let prepared = prepare_all(&self.schema, model, q)?;
            let mut best: Option<(f64, usize)> = None;
            for (i, p) in prepared.iter().enumerate() {
                let est = model.estimate(p)?.value;
                let actual = log_target(exec.execute(q, &p.plan).latency);
                sq += (est - actual) * (est - actual);
                count += 1;
                if best.is_none_or(|(b, _)| est < b) {
                    best = Some((est, i));
                }
            }
            let (_, i) = best.expect("candidates checked non-empty");
            total += exec.execute(q, &q.candidates[i]).latency;
        }
        Ok((Some(sq / count as f64), Some(total)))
    }

    #[allow(clippy::too_many_arguments)]
    fn report(
        &self,
        input: &IterationInput,
        drift_detected: bool,
        latencies: Vec<f64>,
        timeouts: usize,
        online_error: f64,
        test: (Option<f64>, Option<f64>),
        offline: (Option<usize>, usize, usize),
        online_train_sizes: Vec<usize>,
        checksums: (u64, u64),
        started: Instant,
    ) -> IterationReport {
        IterationReport {
            iteration: input.iteration,
            workload: input.workload.clone(),
            volume: input.volume,
            drift_flag: input.drift_flag,
            drift_detected,
            total_latency: latencies.iter().sum(),
            latencies,
            timeouts,
            online_error,
            test_error: test.0,
            test_latency: test.1,
            offline_train_size: offline.0,
            online_train_sizes,
            b_last_len: self.buffers.b_last.len(),
            b_all_len: self.buffers.b_all.len(),
            modules: self.model.params.modules.len(),
            hub_sizes: self.model.hubs.iter().map(|h| (h.kind.to_string(), h.len())).collect(),
            created_modules: offline.1,
            pruned_modules: offline.2,
            m_checksum_online_start: checksums.0,
            m_checksum_online_end: checksums.1,
            wall_secs: started.elapsed().as_secs_f64(),
        }
    }
}
