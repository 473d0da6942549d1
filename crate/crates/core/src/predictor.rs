//! Composed cost network: shared Feature A stack, one tree module per task
//! chosen from the hubs, an additive-attention merger and an output stack.
//! Estimates are in `ln(1 + latency)` units.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decompose::{decompose, BreakOperatorSet, Task};
use crate::encode::{b_len, encode_plan_tasks, EncodeError, SelectivityProvider, StructureTree, TaskEncoding};
use crate::hub::{HubError, HubKind, HubParams, ModuleHub, ModuleId};
use crate::nn::{leaky_relu, leaky_relu_grad, zeros_like, Dense, NnError, Parameterized, Tensor, TreeCache, TreeModule};
use crate::plan::{OperatorKind, PlanTree, WorkloadSchema};
use crate::util::{rng_for, Fnv64};

/// Parameters of one tree module.
pub type ModuleParams = TreeModule;

const SEED_SHARED: u64 = 0x5348;
const SEED_MODULE: u64 = 0x4d4f;
const SEED_HUB: u64 = 0x4855;

/// Operator classes of the optional per-node one-hot.
pub const ONE_HOT_LEN: usize = 10;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Hub(#[from] HubError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("no hub for task kind {0}")]
    MissingHub(HubKind),
    #[error("module {0} is not in the model")]
    UnknownModule(ModuleId),
    #[error("{selections} selections for {tasks} tasks")]
    SelectionCount { selections: usize, tasks: usize },
    #[error("plan has no tasks")]
    NoTasks,
    #[error("attention over an empty list")]
    EmptyAttention,
    #[error("feature C of task {0} does not describe its subtree")]
    StructureMismatch(usize),
}

/// Network sizes. `a_widths` must be strictly decreasing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelDims {
    pub n_tables: usize,
    pub a_widths: [usize; 3],
    pub tree_hidden: usize,
    pub r: usize,
    pub attention_dim: usize,
    pub out_hidden: usize,
    /// Append a per-node operator one-hot to every node vector.
    pub operator_one_hot: bool,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            n_tables: 0,
            a_widths: [32, 16, 8],
            tree_hidden: 32,
            r: 32,
            attention_dim: 16,
            out_hidden: 16,
            operator_one_hot: false,
        }
    }
}

impl ModelDims {
    pub fn with_tables(n_tables: usize) -> Self {
        ModelDims {
            n_tables,
            ..Self::default()
        }
    }

    /// Node vector size `f'`.
    pub fn node_dim(&self) -> usize {
        self.a_widths[2] + b_len(self.n_tables) + if self.operator_one_hot { ONE_HOT_LEN } else { 0 }
    }

    pub fn validate(&self) -> Result<(), PredictError> {
        let w = self.a_widths;
        let decreasing = w[0] > w[1] && w[1] > w[2] && w[2] > 0;
        if !decreasing || self.n_tables == 0 || self.r == 0 || self.tree_hidden == 0 {
            return Err(NnError::Dimension(format!("invalid model sizes {self:?}")).into());
        }
        if self.attention_dim == 0 || self.out_hidden == 0 {
            return Err(NnError::Dimension("attention and output sizes must be positive".into()).into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharedParams {
    pub a_stack: Vec<Dense>,
    /// Attention scorer `s = u . tanh(W w)`.
    pub att_w: Tensor,
    pub att_u: Tensor,
    pub out_hidden: Dense,
    pub out_final: Dense,
}

impl SharedParams {
    pub fn new<R: Rng>(dims: &ModelDims, rng: &mut R) -> Self {
        let [w0, w1, w2] = dims.a_widths;
        SharedParams {
            a_stack: vec![
                Dense::new(dims.n_tables, w0, rng),
                Dense::new(w0, w1, rng),
                Dense::new(w1, w2, rng),
            ],
            att_w: Tensor::xavier(dims.attention_dim, dims.r, rng),
            att_u: Tensor::xavier(dims.attention_dim, 1, rng),
            out_hidden: Dense::new(dims.r, dims.out_hidden, rng),
            out_final: Dense::new(dims.out_hidden, 1, rng),
        }
    }

    fn visit_prefixed(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, layer) in self.a_stack.iter().enumerate() {
            layer.visit_named(&format!("{prefix}a{i}"), f);
        }
        f(&format!("{prefix}att.w"), &self.att_w);
        f(&format!("{prefix}att.u"), &self.att_u);
        self.out_hidden.visit_named(&format!("{prefix}out0"), f);
        self.out_final.visit_named(&format!("{prefix}out1"), f);
    }

    fn visit_prefixed_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, layer) in self.a_stack.iter_mut().enumerate() {
            layer.visit_named_mut(&format!("{prefix}a{i}"), f);
        }
        f(&format!("{prefix}att.w"), &mut self.att_w);
        f(&format!("{prefix}att.u"), &mut self.att_u);
        self.out_hidden.visit_named_mut(&format!("{prefix}out0"), f);
        self.out_final.visit_named_mut(&format!("{prefix}out1"), f);
    }

    /// Feature A embedding with the per-layer inputs and pre-activations.
    fn embed(&self, a: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut xs = vec![a.to_vec()];
        let mut zs = Vec::with_capacity(self.a_stack.len());
        for layer in &self.a_stack {
            let z = layer.forward(xs.last().expect("non-empty"));
            xs.push(z.iter().map(|&v| leaky_relu(v)).collect());
            zs.push(z);
        }
        (xs, zs)
    }
}

impl Parameterized for SharedParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.visit_prefixed("", f)
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.visit_prefixed_mut("", f)
    }
}

/// Every trainable tensor of a model: shared layers plus the module store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub shared: SharedParams,
    #[serde(with = "module_list")]
    pub modules: BTreeMap<ModuleId, ModuleParams>,
}

mod module_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<ModuleId, ModuleParams>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<ModuleId, ModuleParams>, D::Error> {
        let v: Vec<(ModuleId, ModuleParams)> = Vec::deserialize(d)?;
        Ok(v.into_iter().collect())
    }
}

impl ParamSet {
    /// Zeroed gradient holder for the shared layers only; module entries are
    /// added as they receive gradient.
    pub fn zero_grads(&self) -> ParamSet {
        ParamSet {
            shared: zeros_like(&self.shared),
            modules: BTreeMap::new(),
        }
    }
}

impl Parameterized for ParamSet {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.shared.visit_prefixed("shared.", f);
        for (id, m) in &self.modules {
            let prefix = format!("module.{}.", id.0);
            m.visit(&mut |name, t| f(&format!("{prefix}{name}"), t));
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.shared.visit_prefixed_mut("shared.", f);
        for (id, m) in &mut self.modules {
            let prefix = format!("module.{}.", id.0);
            m.visit_mut(&mut |name, t| f(&format!("{prefix}{name}"), t));
        }
    }
}

/// How plans are cut into tasks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decomposition {
    Break(BreakOperatorSet),
    /// The whole plan is a single remainder task (monolithic model).
    Whole,
}

impl Decomposition {
    pub fn tasks(&self, plan: &PlanTree) -> Vec<Task> {
        match self {
            Decomposition::Break(b) => decompose(plan, b),
            Decomposition::Whole => vec![Task::whole(plan)],
        }
    }

    pub fn hub_kinds(&self) -> Vec<HubKind> {
        let mut kinds = vec![HubKind::Oth];
        if let Decomposition::Break(b) = self {
            kinds.extend(b.kinds().iter().cloned().map(HubKind::Break));
        }
        kinds
    }
}

/// A plan with its tasks and their encodings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedPlan {
    pub plan: PlanTree,
    pub tasks: Vec<Task>,
    pub encodings: Vec<TaskEncoding>,
}

/// Module chosen for one task, frozen at prediction time.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub task_index: usize,
    pub hub: HubKind,
    pub prototype: usize,
    pub module: ModuleId,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    /// `ln(1 + latency)`
    pub value: f64,
}

impl CostEstimate {
    pub fn latency(&self) -> f64 {
        self.value.exp_m1()
    }
}

pub fn log_target(latency: f64) -> f64 {
    latency.max(0.0).ln_1p()
}

fn one_hot_slot(op: &OperatorKind) -> usize {
    match op {
        OperatorKind::HashJoin => 0,
        OperatorKind::MergeJoin => 1,
        OperatorKind::NestedLoop => 2,
        OperatorKind::SeqScan => 3,
        OperatorKind::IndexScan => 4,
        OperatorKind::Aggregate => 5,
        OperatorKind::Sort => 6,
        OperatorKind::GroupBy => 7,
        OperatorKind::Other(_) if op.is_cut() => 8,
        OperatorKind::Other(_) => 9,
    }
}

/// Tree shape from Feature C with `concat(a_embed, b)` on every node, plus
/// the operator one-hot when `one_hot` is set.
pub fn build_node_tree(
    task: &Task,
    enc: &TaskEncoding,
    a_embed: &[f64],
    one_hot: bool,
) -> Result<(StructureTree, Vec<Vec<f64>>), EncodeError> {
    let tree = StructureTree::from_triples(&enc.c)?;
    if !tree.matches(&task.subtree) {
        return Err(EncodeError::BadStructure("feature C does not match the task subtree".into()));
    }
    let mut base: Vec<f64> = Vec::with_capacity(a_embed.len() + enc.b.len() + ONE_HOT_LEN);
    base.extend_from_slice(a_embed);
    base.extend(enc.b.iter().map(|&v| v as f64));
    let inputs = tree
        .ids
        .iter()
        .map(|id| {
            let mut x = base.clone();
            if one_hot {
                let mut h = [0.0; ONE_HOT_LEN];
                if let Some(node) = task.subtree.node(*id) {
                    h[one_hot_slot(&node.op)] = 1.0;
                }
                x.extend_from_slice(&h);
            }
            x
        })
        .collect();
    Ok((tree, inputs))
}

/// Max-shifted softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Scores `u . tanh(W w_i)`.
pub fn attention_scores(reps: &[Vec<f64>], w: &Tensor, u: &Tensor) -> Vec<f64> {
    reps.iter()
        .map(|rep| {
            let mut q = vec![0.0; w.rows];
            w.matvec_acc(rep, &mut q);
            q.iter().zip(&u.data).map(|(q, u)| u * q.tanh()).sum()
        })
        .collect()
}

/// Softmax-weighted sum of the representations; returns the merged vector
/// and the weights.
pub fn attention_merge(reps: &[Vec<f64>], w: &Tensor, u: &Tensor) -> Result<(Vec<f64>, Vec<f64>), PredictError> {
    if reps.is_empty() {
        return Err(PredictError::EmptyAttention);
    }
    let weights = softmax(&attention_scores(reps, w, u));
    Ok((weighted_sum(reps, &weights), weights))
}

fn weighted_sum(reps: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; reps[0].len()];
    for (rep, a) in reps.iter().zip(weights) {
        for (o, v) in out.iter_mut().zip(rep) {
            *o += a * v;
        }
    }
    out
}

/// Intermediates of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    a_xs: Vec<Vec<f64>>,
    a_zs: Vec<Vec<f64>>,
    trees: Vec<StructureTree>,
    node_inputs: Vec<Vec<Vec<f64>>>,
    tree_caches: Vec<TreeCache>,
    reps: Vec<Vec<f64>>,
    att_t: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    merged: Vec<f64>,
    out_z: Vec<f64>,
    out_h: Vec<f64>,
    pub output: f64,
}

impl ForwardCache {
    /// All leaky-ReLU pre-activations, for kink detection in gradient checks.
    pub fn pre_activations(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.a_zs.iter().flatten().copied().collect();
        for c in &self.tree_caches {
            v.extend(c.pre.iter().flatten());
        }
        v.extend(&self.out_z);
        v
    }
}

/// One supervised example.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub prepared: &'a PreparedPlan,
    pub selections: &'a [Selection],
    /// `ln(1 + latency)`
    pub target: f64,
}

/// The learned cost predictor: parameters, hubs and the decomposition rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub dims: ModelDims,
    pub decomposition: Decomposition,
    pub params: ParamSet,
    pub hubs: Vec<ModuleHub>,
    pub c_max: usize,
    seed: u64,
    next_module: u32,
}

impl CostModel {
    /// Fresh shared parameters; hubs are created empty.
    pub fn new(
        dims: ModelDims,
        decomposition: Decomposition,
        hub_params: HubParams,
        seed: u64,
    ) -> Result<Self, PredictError> {
        dims.validate()?;
        let shared = SharedParams::new(&dims, &mut rng_for(seed, &[SEED_SHARED]));
        let hubs = decomposition
            .hub_kinds()
            .into_iter()
            .map(|k| ModuleHub::new(k, hub_params.clone()))
            .collect();
        Ok(CostModel {
            c_max: hub_params.c_max,
            dims,
            decomposition,
            params: ParamSet {
                shared,
                modules: BTreeMap::new(),
            },
            hubs,
            seed,
            next_module: 0,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn deep_copy(&self) -> CostModel {
        self.clone()
    }

    pub fn hub(&self, kind: &HubKind) -> Option<&ModuleHub> {
        self.hubs.iter().find(|h| &h.kind == kind)
    }

    pub fn hub_mut(&mut self, kind: &HubKind) -> Option<&mut ModuleHub> {
        self.hubs.iter_mut().find(|h| &h.kind == kind)
    }

    pub fn module(&self, id: ModuleId) -> Option<&ModuleParams> {
        self.params.modules.get(&id)
    }

    /// Hash over parameters and hub state.
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv64::new();
        h.write_u64(self.params.checksum());
        h.write_str(&serde_json::to_string(&self.hubs).expect("hubs serialise"));
        h.write_u64(u64::from(self.next_module));
        h.finish()
    }

    /// New module with seeded fresh weights, or a copy of `from`.
    pub fn alloc_module(&mut self, from: Option<ModuleId>) -> ModuleId {
        let id = ModuleId(self.next_module);
        self.next_module += 1;
        let params = match from.and_then(|f| self.params.modules.get(&f)) {
            Some(src) => src.clone(),
            None => self.fresh_module(id),
        };
        self.params.modules.insert(id, params);
        id
    }

    fn fresh_module(&self, id: ModuleId) -> ModuleParams {
        let mut rng = rng_for(self.seed, &[SEED_MODULE, u64::from(id.0)]);
        TreeModule::new(self.dims.node_dim(), self.dims.tree_hidden, self.dims.r, &mut rng)
    }

    pub fn remove_modules(&mut self, ids: &[ModuleId]) {
        for id in ids {
            self.params.modules.remove(id);
        }
    }

    pub fn prepare(
        &self,
        plan: &PlanTree,
        schema: &WorkloadSchema,
        sel: &dyn SelectivityProvider,
    ) -> Result<PreparedPlan, PredictError> {
        let tasks = self.decomposition.tasks(plan);
        let encodings = encode_plan_tasks(plan, &tasks, schema, sel, self.c_max)?;
        Ok(PreparedPlan {
            plan: plan.clone(),
            tasks,
            encodings,
        })
    }

    /// Places `sizes(kind)` prototypes in every empty hub that has tasks in
    /// `encodings`, fits them and derives their creation thresholds. Hubs that
    /// already have prototypes are left alone.
    pub fn init_hubs(
        &mut self,
        encodings: &BTreeMap<HubKind, Vec<TaskEncoding>>,
        sizes: impl Fn(&HubKind) -> usize,
        fit_iters: usize,
    ) -> Result<(), PredictError> {
        for i in 0..self.hubs.len() {
            if !self.hubs[i].is_empty() {
                continue;
            }
            let kind = self.hubs[i].kind.clone();
            let Some(tasks) = encodings.get(&kind).filter(|t| !t.is_empty()) else {
                continue;
            };
            let mut hub = self.hubs[i].clone();
            let mut rng = rng_for(self.seed, &[SEED_HUB, i as u64, u64::from(self.next_module)]);
            let mut fresh = Vec::new();
            let first = self.next_module;
            hub.initialize(tasks, sizes(&kind), &mut rng, || {
                let id = ModuleId(first + fresh.len() as u32);
                fresh.push(id);
                id
            })?;
            for id in &fresh {
                self.next_module = self.next_module.max(id.0 + 1);
                let m = self.fresh_module(*id);
                self.params.modules.insert(*id, m);
            }
            hub.fit(tasks, fit_iters)?;
            hub.derive_threshold(tasks)?;
            self.hubs[i] = hub;
        }
        Ok(())
    }

    /// Nearest-prototype module for every task.
    pub fn select(&self, prepared: &PreparedPlan) -> Result<Vec<Selection>, PredictError> {
        prepared
            .tasks
            .iter()
            .zip(&prepared.encodings)
            .enumerate()
            .map(|(i, (task, enc))| {
                let kind = HubKind::for_task(&task.kind);
                let hub = self.hub(&kind).ok_or_else(|| PredictError::MissingHub(kind.clone()))?;
                let (prototype, module) = hub.select_module(enc)?;
                Ok(Selection {
                    task_index: i,
                    hub: kind,
                    prototype,
                    module,
                })
            })
            .collect()
    }

    /// Keeps stored selections whose modules still exist and reselects the rest.
    pub fn resolve(&self, prepared: &PreparedPlan, stored: &[Selection]) -> Result<Vec<Selection>, PredictError> {
        if stored.len() == prepared.tasks.len() && stored.iter().all(|s| self.params.modules.contains_key(&s.module)) {
            return Ok(stored.to_vec());
        }
        let fresh = self.select(prepared)?;
        Ok(fresh
            .into_iter()
            .enumerate()
            .map(|(i, f)| match stored.get(i) {
                Some(s) if self.params.modules.contains_key(&s.module) => s.clone(),
                _ => f,
            })
            .collect())
    }

    pub fn predict(&self, prepared: &PreparedPlan, selections: &[Selection]) -> Result<CostEstimate, PredictError> {
        Ok(CostEstimate {
            value: self.forward_shifted(prepared, selections, 0.0)?.output,
        })
    }

    /// Selects modules and predicts in one call.
    pub fn estimate(&self, prepared: &PreparedPlan) -> Result<CostEstimate, PredictError> {
        let sel = self.select(prepared)?;
        self.predict(prepared, &sel)
    }

    pub fn forward(&self, prepared: &PreparedPlan, selections: &[Selection]) -> Result<ForwardCache, PredictError> {
        self.forward_shifted(prepared, selections, 0.0)
    }

    /// Forward pass with `shift` added to every attention score.
    pub fn forward_shifted(
        &self,
        prepared: &PreparedPlan,
        selections: &[Selection],
        shift: f64,
    ) -> Result<ForwardCache, PredictError> {
        let k = prepared.tasks.len();
        if k == 0 {
            return Err(PredictError::NoTasks);
        }
        if selections.len() != k || prepared.encodings.len() != k {
            return Err(PredictError::SelectionCount {
                selections: selections.len(),
                tasks: k,
            });
        }
        let a = &prepared.encodings[0].a;
        if a.len() != self.dims.n_tables {
            return Err(NnError::Dimension(format!(
                "feature A has {} slots, model expects {}",
                a.len(),
                self.dims.n_tables
            ))
            .into());
        }
        let shared = &self.params.shared;
        let (a_xs, a_zs) = shared.embed(a);
        let a_embed = a_xs.last().expect("non-empty");

        let mut trees = Vec::with_capacity(k);
        let mut node_inputs = Vec::with_capacity(k);
        let mut tree_caches = Vec::with_capacity(k);
        let mut reps = Vec::with_capacity(k);
        for (i, s) in selections.iter().enumerate() {
            let module = self.params.modules.get(&s.module).ok_or(PredictError::UnknownModule(s.module))?;
            let (tree, inputs) = build_node_tree(
                &prepared.tasks[i],
                &prepared.encodings[i],
                a_embed,
                self.dims.operator_one_hot,
            )
            .map_err(|_| PredictError::StructureMismatch(i))?;
            let (rep, cache) = module.forward(&tree, &inputs)?;
            trees.push(tree);
            node_inputs.push(inputs);
            tree_caches.push(cache);
            reps.push(rep);
        }

        let mut att_t = Vec::with_capacity(k);
        let mut scores = Vec::with_capacity(k);
        for rep in &reps {
            let mut q = vec![0.0; shared.att_w.rows];
            shared.att_w.matvec_acc(rep, &mut q);
            let t: Vec<f64> = q.iter().map(|v| v.tanh()).collect();
            scores.push(t.iter().zip(&shared.att_u.data).map(|(t, u)| t * u).sum::<f64>() + shift);
            att_t.push(t);
        }
        let weights = softmax(&scores);
        let merged = weighted_sum(&reps, &weights);
        let out_z = shared.out_hidden.forward(&merged);
        let out_h: Vec<f64> = out_z.iter().map(|&v| leaky_relu(v)).collect();
        let output = shared.out_final.forward(&out_h)[0];
        if !output.is_finite() {
            return Err(NnError::NonFinite("cost estimate".into()).into());
        }
        Ok(ForwardCache {
            a_xs,
            a_zs,
            trees,
            node_inputs,
            tree_caches,
            reps,
            att_t,
            weights,
            merged,
            out_z,
            out_h,
            output,
        })
    }

    /// Accumulates `d output` = `dy` into `grads`.
    pub fn backward(
        &self,
        selections: &[Selection],
        cache: &ForwardCache,
        dy: f64,
        grads: &mut ParamSet,
    ) -> Result<(), PredictError> {
        let shared = &self.params.shared;
        let g = &mut grads.shared;

        let d_h = shared.out_final.backward(&cache.out_h, &[dy], &mut g.out_final);
        let d_z: Vec<f64> = d_h.iter().zip(&cache.out_z).map(|(d, z)| d * leaky_relu_grad(*z)).collect();
        let d_merged = shared.out_hidden.backward(&cache.merged, &d_z, &mut g.out_hidden);

        // merged = sum_i a_i w_i, a = softmax(s)
        let k = cache.reps.len();
        let d_alpha: Vec<f64> = cache
            .reps
            .iter()
            .map(|rep| rep.iter().zip(&d_merged).map(|(r, d)| r * d).sum())
            .collect();
        let mean: f64 = cache.weights.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
        let mut d_reps: Vec<Vec<f64>> = Vec::with_capacity(k);
        for i in 0..k {
            let a = cache.weights[i];
            let ds = a * (d_alpha[i] - mean);
            let mut d_rep: Vec<f64> = d_merged.iter().map(|d| a * d).collect();
            // s = u . t, t = tanh(W w)
            let t = &cache.att_t[i];
            g.att_u.add_vec(&t.iter().map(|t| ds * t).collect::<Vec<_>>());
            let dq: Vec<f64> = t
                .iter()
                .zip(&shared.att_u.data)
                .map(|(t, u)| ds * u * (1.0 - t * t))
                .collect();
            g.att_w.outer_acc(&dq, &cache.reps[i]);
            shared.att_w.matvec_t_acc(&dq, &mut d_rep);
            d_reps.push(d_rep);
        }

        let e = self.dims.a_widths[2];
        let mut d_embed = vec![0.0; e];
        for (i, s) in selections.iter().enumerate() {
            let module = self.params.modules.get(&s.module).ok_or(PredictError::UnknownModule(s.module))?;
            let mg = grads.modules.entry(s.module).or_insert_with(|| zeros_like(module));
            let d_inputs = module.backward(&cache.trees[i], &cache.node_inputs[i], &cache.tree_caches[i], &d_reps[i], mg);
            for d in &d_inputs {
                for (acc, v) in d_embed.iter_mut().zip(&d[..e]) {
                    *acc += v;
                }
            }
        }

        let mut d_x = d_embed;
        for l in (0..shared.a_stack.len()).rev() {
            let dz: Vec<f64> = d_x.iter().zip(&cache.a_zs[l]).map(|(d, z)| d * leaky_relu_grad(*z)).collect();
            d_x = shared.a_stack[l].backward(&cache.a_xs[l], &dz, &mut g.a_stack[l]);
        }
        Ok(())
    }

    /// Mean squared error over `examples` and its gradient.
    pub fn loss_and_grads(&self, examples: &[Example<'_>]) -> Result<(f64, ParamSet), PredictError> {
        let mut grads = self.params.zero_grads();
        if examples.is_empty() {
            return Ok((0.0, grads));
        }
        let n = examples.len() as f64;
        let mut loss = 0.0;
        for ex in examples {
            let cache = self.forward(ex.prepared, ex.selections)?;
            let err = cache.output - ex.target;
            loss += err * err / n;
            self.backward(ex.selections, &cache, 2.0 * err / n, &mut grads)?;
        }
        Ok((loss, grads))
    }

    pub fn loss(&self, examples: &[Example<'_>]) -> Result<f64, PredictError> {
        let n = examples.len().max(1) as f64;
        let mut loss = 0.0;
        for ex in examples {
            let err = self.predict(ex.prepared, ex.selections)?.value - ex.target;
            loss += err * err / n;
        }
        Ok(loss)
    }
}
