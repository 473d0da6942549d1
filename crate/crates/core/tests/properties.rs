use std::collections::{BTreeMap, HashMap};

use limao_core::decompose::{decompose, remainder_frontier, BreakOperatorSet, TaskKind};
use limao_core::encode::{encode_plan_tasks, operator_counts, FixedSelectivities, StructureTree, TaskEncoding, DEFAULT_C_MAX};
use limao_core::hub::{dissimilarity, ClusterPrototype, HubKind, HubParams, MaintenanceAction, ModuleHub, ModuleId};
use limao_core::nn::{Parameterized, Tensor};
use limao_core::plan::random::{random_plan, RandomPlanParams};
use limao_core::plan::{parse_native_plan, serialize_native, NodeId, OperatorKind, PlanSpec, PlanTree, WorkloadSchema};
use limao_core::predictor::{attention_merge, softmax, CostModel, Decomposition, Example, ModelDims};
use limao_core::sim::metrics::{centred_moving_average, population_variance};
use limao_core::sim::{stability_metrics, CostOracle, DriftMode, DriftScript, OracleConstants};
use limao_core::util::rng_for;
use proptest::prelude::*;
use rand::Rng;

const N_TABLES: usize = 5;

fn schema() -> WorkloadSchema {
    WorkloadSchema::from_pairs((0..N_TABLES).map(|i| (format!("t{i}"), 500 * (i as u64 + 2)))).unwrap()
}

fn plan_for(seed: u64, max_nodes: usize) -> PlanTree {
    let mut rng = rng_for(seed, &[0x70]);
    random_plan(
        &mut rng,
        &schema(),
        RandomPlanParams {
            max_nodes,
            max_depth: 16,
            with_other: true,
        },
    )
}

fn break_sets() -> impl Strategy<Value = BreakOperatorSet> {
    prop::sample::select(vec!["HJ", "NL", "MJ", "HJ,NL", "NL,HJ", "HJ,MJ,NL"]).prop_map(|s| s.parse().unwrap())
}

fn ancestors(plan: &PlanTree, id: NodeId) -> Vec<NodeId> {
    let parents = plan.parents();
    let mut out = Vec::new();
    let mut cur = id;
    while let Some(&p) = parents.get(&cur) {
        out.push(p);
        cur = p;
    }
    out
}

/// The same plan with the children of each binary node swapped at random.
fn permute_siblings(plan: &PlanTree, rng: &mut impl Rng) -> PlanTree {
    fn spec(plan: &PlanTree, id: NodeId, rng: &mut impl Rng) -> PlanSpec {
        let n = plan.node(id).unwrap();
        let mut children: Vec<PlanSpec> = n.children.iter().map(|&c| spec(plan, c, rng)).collect();
        if children.len() == 2 && rng.gen_bool(0.5) {
            children.swap(0, 1);
        }
        match n.table {
            Some(t) => PlanSpec::leaf(n.op.clone(), t),
            None => PlanSpec::node(n.op.clone(), children),
        }
        .rows(n.est_rows)
    }
    spec(plan, plan.root(), rng).build(plan.props()).unwrap()
}

fn encodings_of(seed: u64, plans: usize) -> Vec<TaskEncoding> {
    let s = schema();
    let breaks: BreakOperatorSet = "HJ,MJ,NL".parse().unwrap();
    let mut rng = rng_for(seed, &[0x71]);
    let mut out = Vec::new();
    for i in 0..plans {
        let plan = plan_for(seed.wrapping_add(i as u64 * 7919), 14);
        let sel = FixedSelectivities((0..N_TABLES).map(|_| rng.gen::<f64>()).collect());
        let tasks = decompose(&plan, &breaks);
        out.extend(encode_plan_tasks(&plan, &tasks, &s, &sel, DEFAULT_C_MAX).unwrap());
    }
    out
}

fn model_for(seed: u64) -> (CostModel, Vec<limao_core::predictor::PreparedPlan>) {
    let s = schema();
    let breaks: BreakOperatorSet = "HJ,MJ,NL".parse().unwrap();
    let mut model = CostModel::new(ModelDims::with_tables(N_TABLES), Decomposition::Break(breaks), HubParams::default(), seed).unwrap();
    let mut rng = rng_for(seed, &[0x72]);
    let mut prepared = Vec::new();
    let mut by_kind: BTreeMap<HubKind, Vec<TaskEncoding>> = BTreeMap::new();
    for i in 0..60 {
        let plan = plan_for(seed ^ (i << 20), 14);
        let sel = FixedSelectivities((0..N_TABLES).map(|_| rng.gen::<f64>()).collect());
        let p = model.prepare(&plan, &s, &sel).unwrap();
        for (t, e) in p.tasks.iter().zip(&p.encodings) {
            by_kind.entry(HubKind::for_task(&t.kind)).or_default().push(e.clone());
        }
        prepared.push(p);
    }
    model.init_hubs(&by_kind, |_| 2, 10).unwrap();
    (model, prepared)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decomposition_is_deterministic(seed in any::<u64>(), breaks in break_sets()) {
        let plan = plan_for(seed, 30);
        prop_assert_eq!(decompose(&plan, &breaks), decompose(&plan.clone(), &breaks));
    }

    #[test]
    fn decomposition_order_nesting_and_suppression(seed in any::<u64>(), breaks in break_sets()) {
        let plan = plan_for(seed, 30);
        let tasks = decompose(&plan, &breaks);
        prop_assert_eq!(&tasks[0].kind, &TaskKind::Remainder);
        let mut last: Option<(usize, NodeId)> = None;
        for t in &tasks[1..] {
            let TaskKind::BreakRooted(kind) = &t.kind else { return Err(TestCaseError::fail("second remainder")) };
            let rank = breaks.kinds().iter().position(|k| k == kind).unwrap();
            prop_assert!(last.is_none_or(|l| l < (rank, t.root())), "tasks out of order");
            last = Some((rank, t.root()));
            prop_assert!(ancestors(&plan, t.root()).iter().all(|a| &plan.node(*a).unwrap().op != kind));
        }
        for t in &tasks[1..] {
            for u in &tasks[1..] {
                if t.kind == u.kind && t.root() != u.root() {
                    prop_assert!(!ancestors(&plan, u.root()).contains(&t.root()));
                }
            }
        }
    }

    #[test]
    fn decomposition_covers_every_node(seed in any::<u64>(), breaks in break_sets()) {
        let plan = plan_for(seed, 30);
        let tasks = decompose(&plan, &breaks);
        let mut seen: HashMap<NodeId, usize> = HashMap::new();
        for t in &tasks {
            for n in t.subtree.nodes().iter().filter(|n| !n.op.is_cut()) {
                *seen.entry(n.id).or_default() += 1;
            }
        }
        for n in plan.nodes() {
            prop_assert!(seen.contains_key(&n.id), "node {} uncovered", n.id.0);
        }
        let cuts: Vec<NodeId> = tasks[0].subtree.nodes().iter().filter(|n| n.op.is_cut()).map(|n| n.id).collect();
        prop_assert_eq!(cuts.into_iter().collect::<std::collections::BTreeSet<_>>(), remainder_frontier(&plan, &breaks));
    }

    #[test]
    fn feature_b_ignores_sibling_order(seed in any::<u64>()) {
        let plan = plan_for(seed, 30);
        let mut rng = rng_for(seed, &[0x73]);
        let permuted = permute_siblings(&plan, &mut rng);
        prop_assert_eq!(operator_counts(&plan, N_TABLES).unwrap(), operator_counts(&permuted, N_TABLES).unwrap());
    }

    #[test]
    fn feature_c_round_trips(seed in any::<u64>(), breaks in break_sets()) {
        let s = schema();
        let plan = plan_for(seed, 40);
        let tasks = decompose(&plan, &breaks);
        let sel = FixedSelectivities(vec![0.5; N_TABLES]);
        let encs = encode_plan_tasks(&plan, &tasks, &s, &sel, DEFAULT_C_MAX).unwrap();
        for (t, e) in tasks.iter().zip(&encs) {
            let tree = StructureTree::from_triples(&e.c_padded(DEFAULT_C_MAX)).unwrap();
            prop_assert!(tree.matches(&t.subtree));
            prop_assert_eq!(tree.to_triples(), e.c.clone());
        }
        prop_assert_eq!(encs, encode_plan_tasks(&plan, &tasks, &s, &sel, DEFAULT_C_MAX).unwrap());
    }

    #[test]
    fn native_format_round_trips(seed in any::<u64>()) {
        let s = schema();
        let plan = plan_for(seed, 30);
        let text = serialize_native(&plan, &s);
        let back = parse_native_plan(&text, &s).unwrap();
        prop_assert_eq!(serialize_native(&back, &s), text);
        let ids: Vec<u32> = back.nodes().iter().map(|n| n.id.0).collect();
        prop_assert_eq!(ids, (1..=back.len() as u32).collect::<Vec<_>>());
    }

    #[test]
    fn select_is_argmin(seed in any::<u64>(), gamma in 0.0f64..3.0, k in 1usize..6) {
        let pool = encodings_of(seed, 6);
        let mut rng = rng_for(seed, &[0x74]);
        let mut hub = ModuleHub::new(HubKind::Oth, HubParams { gamma, ..HubParams::default() });
        for m in 0..k {
            hub.prototypes.push(ClusterPrototype::from_encoding(&pool[rng.gen_range(0..pool.len())], DEFAULT_C_MAX, ModuleId(m as u32)));
        }
        for x in &pool {
            let ds: Vec<f64> = hub.prototypes.iter().map(|p| dissimilarity(x, p, gamma).unwrap()).collect();
            let best = (0..ds.len()).fold(0, |b, i| if ds[i] < ds[b] { i } else { b });
            prop_assert_eq!(hub.select_module(x).unwrap(), (best, hub.prototypes[best].module));
        }
    }

    #[test]
    fn fit_objective_never_increases(seed in any::<u64>(), k in 1usize..6) {
        let tasks = encodings_of(seed, 12);
        let mut hub = ModuleHub::new(HubKind::Oth, HubParams::default());
        let mut rng = rng_for(seed, &[0x75]);
        let mut next = 0;
        hub.initialize(&tasks, k, &mut rng, || { next += 1; ModuleId(next) }).unwrap();
        let report = hub.fit(&tasks, 20).unwrap();
        for w in report.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0), "{:?}", report.objective_trace);
        }
        let counted: usize = hub.prototypes.iter().map(|p| p.member_count).sum();
        prop_assert_eq!(counted, tasks.len());
    }

    #[test]
    fn creation_makes_trigger_exact(seed in any::<u64>()) {
        let tasks = encodings_of(seed, 8);
        let mut hub = ModuleHub::new(HubKind::Oth, HubParams { theta_new: Some(0.0), ..HubParams::default() });
        let mut rng = rng_for(seed, &[0x76]);
        let mut next = 0;
        hub.initialize(&tasks[..1], 1, &mut rng, || { next += 1; ModuleId(next) }).unwrap();
        let mut created = 1000;
        for x in &tasks {
            if let MaintenanceAction::Created { .. } = hub.maintain(x, |_| { created += 1; ModuleId(created) }).unwrap() {
                prop_assert_eq!(hub.nearest(x).unwrap().1, 0.0);
            }
            prop_assert!(hub.nearest(x).unwrap().1 == 0.0);
        }
        hub.sweep(&tasks).unwrap();
        prop_assert!(!hub.is_empty());
    }

    #[test]
    fn forward_is_finite_pure_and_reaches_every_module(seed in 0u64..1_000_000) {
        let (model, prepared) = model_for(seed);
        for p in prepared.iter().take(10) {
            let sel = model.select(p).unwrap();
            prop_assert_eq!(sel.len(), p.tasks.len());
            let a = model.predict(p, &sel).unwrap().value;
            let b = model.predict(p, &sel).unwrap().value;
            prop_assert!(a.is_finite());
            prop_assert_eq!(a.to_bits(), b.to_bits());
            let ex = [Example { prepared: p, selections: &sel, target: a + 1.0 }];
            let (_, grads) = model.loss_and_grads(&ex).unwrap();
            prop_assert!(grads.all_finite());
            for s in &sel {
                let mut norm = 0.0;
                grads.modules[&s.module].visit(&mut |_, t: &Tensor| norm += t.data.iter().map(|v| v * v).sum::<f64>());
                prop_assert!(norm > 0.0, "module {} got no gradient", s.module);
            }
        }
    }

    #[test]
    fn attention_weights_form_a_distribution(seed in any::<u64>(), k in 1usize..10, dim in 1usize..12) {
        let mut rng = rng_for(seed, &[0x77]);
        let reps: Vec<Vec<f64>> = (0..k).map(|_| (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect()).collect();
        let w = Tensor::xavier(5, dim, &mut rng);
        let u = Tensor::xavier(5, 1, &mut rng);
        let (merged, weights) = attention_merge(&reps, &w, &u).unwrap();
        prop_assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(weights.iter().all(|a| *a > 0.0));
        for j in 0..dim {
            let lo = reps.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
            let hi = reps.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(merged[j] >= lo - 1e-9 && merged[j] <= hi + 1e-9);
        }
    }

    #[test]
    fn softmax_argmax_survives_shift(scores in prop::collection::vec(-50.0f64..50.0, 1..12), shift in -100.0f64..100.0) {
        let argmax = |w: &[f64]| (0..w.len()).fold(0, |b, i| if w[i] > w[b] { i } else { b });
        let base = softmax(&scores);
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let moved = softmax(&shifted);
        prop_assert_eq!(argmax(&base), argmax(&moved));
        for (a, b) in base.iter().zip(&moved) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_positive_and_monotone_in_volume(seed in any::<u64>(), v1 in 0.0f64..5.0, dv in 0.0f64..5.0) {
        let s = schema();
        let plan = plan_for(seed, 25);
        let oracle = CostOracle::new(OracleConstants::default(), seed);
        let (a, b) = (oracle.latency(&plan, &s, v1), oracle.latency(&plan, &s, v1 + dv));
        prop_assert!(a > 0.0 && b > 0.0);
        prop_assert!(a <= b);
        prop_assert_eq!(a.to_bits(), oracle.latency(&plan, &s, v1).to_bits());
    }

    #[test]
    fn periodic_schedules_tile_the_run(iterations in 1usize..120, period in 1usize..15, mode in 0usize..4) {
        let mode = [DriftMode::Static, DriftMode::WorkloadSwitch, DriftMode::VolumeSwitch, DriftMode::BothSwitch][mode];
        let script = DriftScript::periodic(mode, iterations, period).unwrap();
        prop_assert_eq!(script.len(), iterations);
        for t in 1..=iterations {
            prop_assert!(script.at(t).is_some());
            let boundary = script.entries().iter().any(|e| e.start == t) && t > 1;
            prop_assert_eq!(script.drift_flag(t), boundary);
        }
        prop_assert!(script.at(iterations + 1).is_none());
    }

    #[test]
    fn non_periodic_runs_respect_bounds(iterations in 8usize..150, min_run in 1usize..5, extra in 0usize..6, seed in any::<u64>()) {
        let max_run = min_run + extra;
        prop_assume!(iterations >= min_run);
        let script = DriftScript::non_periodic(iterations, min_run, max_run, seed).unwrap();
        prop_assert_eq!(script.len(), iterations);
        let entries = script.entries();
        for (i, e) in entries.iter().enumerate() {
            let len = e.end - e.start + 1;
            prop_assert!(len >= min_run);
            if i + 1 < entries.len() {
                prop_assert!(len <= max_run);
            } else {
                prop_assert!(len < max_run + min_run);
            }
        }
    }

    #[test]
    fn metrics_shapes_and_shift_invariance(xs in prop::collection::vec(0.0f64..1e4, 3..60), c in -1e3f64..1e3) {
        let n = xs.len();
        let m = stability_metrics(&xs, &vec![0; n], &vec![false; n], 0).unwrap();
        prop_assert_eq!(m.smoothed.len(), n);
        prop_assert_eq!(m.derivative.len(), n - 1);
        prop_assert!(m.variance >= 0.0);
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let scale = m.variance.max(1.0);
        prop_assert!((population_variance(&shifted) - m.variance).abs() < 1e-6 * scale);
        let sm = centred_moving_average(&xs, 5);
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(sm.iter().all(|v| *v >= lo - 1e-9 && *v <= hi + 1e-9));
    }
}

#[test]
fn break_operators_reject_non_joins() {
    assert!(BreakOperatorSet::new([OperatorKind::Sort]).is_err());
    assert!(BreakOperatorSet::new(Vec::<OperatorKind>::new()).is_err());
}
