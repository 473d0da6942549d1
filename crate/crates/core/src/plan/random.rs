//! Seeded random plan generation for property tests and benchmarks.

use rand::Rng;

use super::{OperatorKind, PlanSpec, PlanTree, QueryProps, TableId, WorkloadSchema};

#[derive(Clone, Copy, Debug)]
pub struct RandomPlanParams {
    pub max_nodes: usize,
    pub max_depth: usize,
    /// Include `Other` operators such as `"Materialize"`.
    pub with_other: bool,
}

impl Default for RandomPlanParams {
    fn default() -> Self {
        RandomPlanParams {
            max_nodes: 15,
            max_depth: 8,
            with_other: true,
        }
    }
}

const JOINS: [OperatorKind; 3] = [
    OperatorKind::HashJoin,
    OperatorKind::MergeJoin,
    OperatorKind::NestedLoop,
];
const UNARY: [OperatorKind; 3] = [
    OperatorKind::Aggregate,
    OperatorKind::Sort,
    OperatorKind::GroupBy,
];

fn gen<R: Rng>(
    rng: &mut R,
    schema: &WorkloadSchema,
    budget: usize,
    depth: usize,
    p: &RandomPlanParams,
) -> (PlanSpec, usize) {
    let leaf = |rng: &mut R| {
        let op = if rng.gen_bool(0.5) {
            OperatorKind::SeqScan
        } else {
            OperatorKind::IndexScan
        };
        let spec = PlanSpec::leaf(op, TableId(rng.gen_range(0..schema.len())))
            .rows(rng.gen_range(0.0..1e5_f64).floor());
        (spec, 1)
    };
    if budget < 2 || depth + 1 >= p.max_depth {
        return leaf(rng);
    }
    let roll: f64 = rng.gen();
    if budget >= 3 && roll < 0.7 {
        let op = JOINS[rng.gen_range(0..3)].clone();
        let left_budget = rng.gen_range(1..budget - 1);
        let (l, ln) = gen(rng, schema, left_budget, depth + 1, p);
        let (r, rn) = gen(rng, schema, budget - 1 - ln, depth + 1, p);
        (PlanSpec::node(op, vec![l, r]), 1 + ln + rn)
    } else if roll < 0.9 || !p.with_other {
        let op = UNARY[rng.gen_range(0..3)].clone();
        let (c, n) = gen(rng, schema, budget - 1, depth + 1, p);
        (PlanSpec::node(op, vec![c]), 1 + n)
    } else {
        let (c, n) = gen(rng, schema, budget - 1, depth + 1, p);
        (
            PlanSpec::node(OperatorKind::Other("Materialize".into()), vec![c]),
            1 + n,
        )
    }
}

/// A random valid plan with at most `max_nodes` nodes and depth at most
/// `max_depth` (root at depth 1).
pub fn random_plan<R: Rng>(rng: &mut R, schema: &WorkloadSchema, params: RandomPlanParams) -> PlanTree {
    assert!(!schema.is_empty(), "random plans need at least one table");
    let budget = rng.gen_range(1..=params.max_nodes.max(1));
    let (spec, _) = gen(rng, schema, budget, 0, &params);
    let props = QueryProps {
        has_subquery: rng.gen_bool(0.2),
        has_aggregation: rng.gen_bool(0.5),
        has_group_by: rng.gen_bool(0.3),
        has_order_by: rng.gen_bool(0.3),
    };
    spec.build(props).expect("generator emits valid plans")
}
