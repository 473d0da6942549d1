//! Quick gradient and invariant checks that can run on any machine.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::Serialize;

use crate::decompose::{decompose, BreakOperatorSet, TaskKind};
use crate::encode::{encode_plan_tasks, FixedSelectivities, StructureTree, TaskEncoding, DEFAULT_C_MAX};
use crate::hub::{HubKind, HubParams, ModuleHub, ModuleId};
use crate::nn::{grad_check, zeros_like, LossEval, Tensor};
use crate::plan::random::{random_plan, RandomPlanParams};
use crate::plan::{parse_native_plan, NodeId, PlanTree, WorkloadSchema};
use crate::predictor::{attention_merge, CostModel, Decomposition, Example, ModelDims, ParamSet, PredictError};
use crate::util::rng_for;
use crate::Error;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn result(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

fn schema() -> WorkloadSchema {
    WorkloadSchema::from_pairs((0..5).map(|i| (format!("t{i}"), 1000 * (i as u64 + 1)))).expect("valid schema")
}

fn plans(seed: u64, count: usize, max_nodes: usize) -> Vec<PlanTree> {
    let s = schema();
    let mut rng = rng_for(seed, &[0x5343]);
    let params = RandomPlanParams {
        max_nodes,
        max_depth: 16,
        with_other: true,
    };
    (0..count).map(|_| random_plan(&mut rng, &s, params)).collect()
}

fn has_same_kind_ancestor(plan: &PlanTree, id: NodeId) -> bool {
    let parents = plan.parents();
    let op = &plan.node(id).expect("node exists").op;
    let mut cur = id;
    while let Some(&p) = parents.get(&cur) {
        if &plan.node(p).expect("node exists").op == op {
            return true;
        }
        cur = p;
    }
    false
}

fn check_decomposition(plans: &[PlanTree], breaks: &BreakOperatorSet) -> CheckResult {
    let mut bad = 0;
    for plan in plans {
        let tasks = decompose(plan, breaks);
        let roots: BTreeSet<NodeId> = tasks[1..].iter().map(|t| t.root()).collect();
        let expected: BTreeSet<NodeId> = plan
            .nodes()
            .iter()
            .filter(|n| breaks.contains(&n.op) && !has_same_kind_ancestor(plan, n.id))
            .map(|n| n.id)
            .collect();
        let covered: BTreeSet<NodeId> = tasks
            .iter()
            .flat_map(|t| t.subtree.nodes().iter().filter(|n| !n.op.is_cut()).map(|n| n.id))
            .collect();
        if tasks[0].kind != TaskKind::Remainder || roots != expected || covered.len() != plan.len() {
            bad += 1;
        }
    }
    result("decomposition", bad == 0, format!("{} plans, {bad} violations", plans.len()))
}

fn encodings(plans: &[PlanTree], breaks: &BreakOperatorSet, seed: u64) -> Result<Vec<TaskEncoding>, Error> {
    let s = schema();
    let mut rng = rng_for(seed, &[0x454e]);
    let mut out = Vec::new();
    for plan in plans {
        let sel = FixedSelectivities((0..s.len()).map(|_| rng.gen::<f64>()).collect());
        let tasks = decompose(plan, breaks);
        out.extend(encode_plan_tasks(plan, &tasks, &s, &sel, DEFAULT_C_MAX).map_err(PredictError::from)?);
    }
    Ok(out)
}

fn check_encoding(plans: &[PlanTree], breaks: &BreakOperatorSet, seed: u64) -> Result<CheckResult, Error> {
    let s = schema();
    let n = s.len();
    let encs = encodings(plans, breaks, seed)?;
    let tasks: Vec<_> = plans.iter().flat_map(|p| decompose(p, breaks)).collect();
    let mut bad = 0;
    for (t, e) in tasks.iter().zip(&encs) {
        let shapes = e.a.len() == n && e.b.len() == 3 + 2 * n;
        let round_trip = StructureTree::from_triples(&e.c).is_ok_and(|tree| tree.matches(&t.subtree));
        bad += usize::from(!(shapes && round_trip));
    }
    Ok(result("encoding", bad == 0, format!("{} tasks, {bad} violations", encs.len())))
}

fn check_clustering(encs: &[TaskEncoding], seed: u64) -> Result<CheckResult, Error> {
    let mut rng = rng_for(seed, &[0x434c]);
    let mut hub = ModuleHub::new(HubKind::Oth, HubParams::default());
    let mut next = 0;
    hub.initialize(encs, 4, &mut rng, || {
        next += 1;
        ModuleId(next)
    })
    .map_err(PredictError::from)?;
    let report = hub.fit(encs, 20).map_err(PredictError::from)?;
    let monotone = report.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
    let mut mismatches = 0;
    for x in encs {
        let ds: Vec<f64> = (0..hub.len())
            .map(|i| hub.dissimilarity(x, i))
            .collect::<Result<_, _>>()
            .map_err(PredictError::from)?;
        let best = (0..ds.len()).fold(0, |b, i| if ds[i] < ds[b] { i } else { b });
        let (chosen, _) = hub.select_module(x).map_err(PredictError::from)?;
        mismatches += usize::from(chosen != best);
    }
    Ok(result(
        "clustering",
        monotone && mismatches == 0,
        format!(
            "{} tasks, {} fit iterations, objective monotone {monotone}, {mismatches} selection mismatches",
            encs.len(),
            report.iterations
        ),
    ))
}

fn check_gradients(seed: u64) -> Result<CheckResult, Error> {
    let s = schema();
    let breaks: BreakOperatorSet = "HJ,NL".parse().expect("valid set");
    let mut model = CostModel::new(ModelDims::with_tables(s.len()), Decomposition::Break(breaks), HubParams::default(), seed)?;
    let plan = parse_native_plan("AGG(NL(HJ(SS[t0],IS[t1]),SS[t2]))", &s)?;
    let sel = FixedSelectivities(vec![0.1, 0.5, 0.9, 0.3, 0.7]);
    let prepared = model.prepare(&plan, &s, &sel)?;
    let mut by_kind: BTreeMap<HubKind, Vec<TaskEncoding>> = BTreeMap::new();
    for (t, e) in prepared.tasks.iter().zip(&prepared.encodings) {
        by_kind.entry(HubKind::for_task(&t.kind)).or_default().push(e.clone());
    }
    model.init_hubs(&by_kind, |_| 1, 5)?;
    let selections = model.select(&prepared)?;
    // A target near the prediction keeps the loss small, so finite differences
    // are not dominated by its rounding error.
    let target = model.predict(&prepared, &selections)?.value + 0.5;
    let examples = [Example {
        prepared: &prepared,
        selections: &selections,
        target,
    }];
    let (_, mut grads) = model.loss_and_grads(&examples)?;
    for (id, m) in &model.params.modules {
        grads.modules.entry(*id).or_insert_with(|| zeros_like(m));
    }
    let mut params = model.params.clone();
    let eval = |ps: &ParamSet| {
        let mut m = model.clone();
        m.params = ps.clone();
        match m.forward(&prepared, &selections) {
            Ok(c) => {
                let e = c.output - target;
                LossEval::with_activations(e * e, c.pre_activations())
            }
            Err(_) => LossEval::smooth(f64::NAN),
        }
    };
    let report = grad_check(&mut params, eval, &grads, 1e-5, 3000, seed).map_err(PredictError::from)?;
    Ok(result(
        "gradients",
        report.max_rel_error < 1e-4,
        format!(
            "{} tasks, {} coordinates ({} skipped at kinks), max relative error {:.2e}",
            prepared.tasks.len(),
            report.checked,
            report.skipped,
            report.max_rel_error
        ),
    ))
}

fn check_attention(seed: u64) -> CheckResult {
    let mut rng = rng_for(seed, &[0x4154]);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let k = rng.gen_range(1..8);
        let reps: Vec<Vec<f64>> = (0..k).map(|_| (0..6).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
        let w = Tensor::xavier(4, 6, &mut rng);
        let u = Tensor::xavier(4, 1, &mut rng);
        if let Ok((_, weights)) = attention_merge(&reps, &w, &u) {
            worst = worst.max((weights.iter().sum::<f64>() - 1.0).abs());
        } else {
            worst = f64::INFINITY;
        }
    }
    result("attention", worst < 1e-9, format!("max |sum - 1| = {worst:.1e}"))
}

/// Runs every check on `plan_count` random plans derived from `seed`.
pub fn run_checks(seed: u64, plan_count: usize) -> Result<Vec<CheckResult>, Error> {
    let breaks: BreakOperatorSet = "HJ,MJ,NL".parse().expect("valid set");
    let big = plans(seed, plan_count, 40);
    let small = plans(seed ^ 1, plan_count.min(100), 12);
    Ok(vec![
        check_decomposition(&big, &breaks),
        check_encoding(&big, &breaks, seed)?,
        check_clustering(&encodings(&small, &breaks, seed)?, seed)?,
        check_gradients(seed)?,
        check_attention(seed),
    ])
}
