use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use limao_core::config::ExperimentConfig;
use limao_core::encode::{encode_plan_tasks, FixedSelectivities, TaskEncoding, DEFAULT_C_MAX};
use limao_core::nn::{Adam, AdamConfig};
use limao_core::plan::random::{random_plan, RandomPlanParams};
use limao_core::predictor::Example;
use limao_core::sim::SyntheticEnv;
use limao_core::util::rng_for;
use limao_core::{decompose, BreakOperatorSet, CostModel, Decomposition, HubKind, HubParams, ModelDims, PlanTree, SystemKind, WorkloadSchema};

fn schema() -> WorkloadSchema {
    WorkloadSchema::from_pairs((0..6).map(|i| (format!("t{i}"), 10_000 * (i as u64 + 1)))).unwrap()
}

fn plans(schema: &WorkloadSchema, count: usize) -> Vec<PlanTree> {
    let mut rng = rng_for(11, &[1]);
    let params = RandomPlanParams {
        max_nodes: 30,
        max_depth: 12,
        with_other: true,
    };
    (0..count).map(|_| random_plan(&mut rng, schema, params)).collect()
}

fn breaks() -> BreakOperatorSet {
    "HJ,MJ,NL".parse().unwrap()
}

fn plan_processing(c: &mut Criterion) {
    let s = schema();
    let ps = plans(&s, 100);
    let b = breaks();
    let sel = FixedSelectivities(vec![0.2; s.len()]);
    c.bench_function("decompose 100 plans", |bench| {
        bench.iter(|| ps.iter().map(|p| decompose(black_box(p), &b).len()).sum::<usize>())
    });
    let tasks: Vec<_> = ps.iter().map(|p| decompose(p, &b)).collect();
    c.bench_function("encode 100 plans", |bench| {
        bench.iter(|| {
            ps.iter()
                .zip(&tasks)
                .map(|(p, t)| encode_plan_tasks(black_box(p), t, &s, &sel, DEFAULT_C_MAX).unwrap().len())
                .sum::<usize>()
        })
    });
}

fn model_passes(c: &mut Criterion) {
    let s = schema();
    let ps = plans(&s, 64);
    let sel = FixedSelectivities(vec![0.2; s.len()]);
    let mut model = CostModel::new(ModelDims::with_tables(s.len()), Decomposition::Break(breaks()), HubParams::default(), 3).unwrap();
    let prepared: Vec<_> = ps.iter().map(|p| model.prepare(p, &s, &sel).unwrap()).collect();
    let mut by_kind: BTreeMap<HubKind, Vec<TaskEncoding>> = BTreeMap::new();
    for p in &prepared {
        for (t, e) in p.tasks.iter().zip(&p.encodings) {
            by_kind.entry(HubKind::for_task(&t.kind)).or_default().push(e.clone());
        }
    }
    model.init_hubs(&by_kind, |_| 3, 5).unwrap();
    let selections: Vec<_> = prepared.iter().map(|p| model.select(p).unwrap()).collect();

    c.bench_function("select modules 64 plans", |bench| {
        bench.iter(|| prepared.iter().map(|p| model.select(black_box(p)).unwrap().len()).sum::<usize>())
    });
    c.bench_function("forward 64 plans", |bench| {
        bench.iter(|| {
            prepared
                .iter()
                .zip(&selections)
                .map(|(p, sel)| model.predict(black_box(p), sel).unwrap().value)
                .sum::<f64>()
        })
    });
    let examples: Vec<Example<'_>> = prepared
        .iter()
        .zip(&selections)
        .map(|(p, sel)| Example {
            prepared: p,
            selections: sel,
            target: 3.0,
        })
        .collect();
    c.bench_function("training step batch 64", |bench| {
        bench.iter_batched(
            || (model.params.clone(), Adam::new(AdamConfig::default())),
            |(mut params, mut adam)| {
                let (_, grads) = model.loss_and_grads(&examples).unwrap();
                adam.step(&mut params, &grads).unwrap();
                params
            },
            BatchSize::SmallInput,
        )
    });
}

fn trainer_iteration(c: &mut Criterion) {
    let mut cfg = ExperimentConfig::default();
    cfg.queries_per_iteration = 10;
    cfg.test_queries = 4;
    cfg.trainer.offline_epochs = 4;
    let env = SyntheticEnv::new(cfg).unwrap();
    let mut trainer = env.build_trainer(SystemKind::Limao).unwrap();
    for t in 1..=3 {
        let (input, exec) = env.iteration(t).unwrap();
        trainer.run_iteration(&input, &exec).unwrap();
    }
    let (input, exec) = env.iteration(4).unwrap();
    let mut group = c.benchmark_group("trainer");
    group.sample_size(10);
    group.bench_function("one iteration", |bench| {
        bench.iter_batched(
            || trainer.clone(),
            |mut tr| tr.run_iteration(&input, &exec).unwrap().iteration,
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, plan_processing, model_passes, trainer_iteration);
criterion_main!(benches);
