use serde::{Deserialize, Serialize};

use crate::plan::{NodeId, OperatorKind, PlanTree, WorkloadSchema};
use crate::util::{rng_for, Fnv64};
use rand::Rng;

/// Per-operator cost constants, in seconds per row unless noted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConstants {
    pub seq_scan: f64,
    pub index_scan: f64,
    /// Fixed cost per index scan, seconds.
    pub index_setup: f64,
    pub hash_join: f64,
    /// Fixed cost per hash join (build side setup), seconds.
    pub hash_setup: f64,
    pub merge_join: f64,
    pub merge_setup: f64,
    /// Per row pair.
    pub nested_loop: f64,
    /// Nested-loop multiplier when the inner side is an index scan.
    pub index_kappa: f64,
    pub aggregate: f64,
    pub sort: f64,
    /// Multiplicative noise half-width in log space; 0 disables noise.
    pub noise: f64,
    /// Relative seeded perturbation of every constant, e.g. 0.2 = up to +-20%.
    pub jitter: f64,
    /// Latency floor, seconds.
    pub floor: f64,
}

impl Default for OracleConstants {
    fn default() -> Self {
        OracleConstants {
            seq_scan: 1e-5,
            index_scan: 4e-5,
            index_setup: 1e-3,
            hash_join: 1e-5,
            hash_setup: 1.0,
            merge_join: 1e-5,
            merge_setup: 2.0,
            nested_loop: 2e-6,
            index_kappa: 0.25,
            aggregate: 1e-6,
            sort: 1e-6,
            noise: 0.1,
            jitter: 0.2,
            floor: 1e-6,
        }
    }
}

impl OracleConstants {
    /// Constants with every cost term scaled by a seeded factor in
    /// `[1/(1+jitter), 1+jitter]`.
    pub fn jittered(&self, seed: u64) -> OracleConstants {
        if self.jitter <= 0.0 {
            return self.clone();
        }
        let mut rng = rng_for(seed, &[0x4a49]);
        let j = 1.0 + self.jitter;
        let mut f = || (rng.gen_range(-1.0..=1.0) * j.ln()).exp();
        OracleConstants {
            seq_scan: self.seq_scan * f(),
            index_scan: self.index_scan * f(),
            index_setup: self.index_setup * f(),
            hash_join: self.hash_join * f(),
            hash_setup: self.hash_setup * f(),
            merge_join: self.merge_join * f(),
            merge_setup: self.merge_setup * f(),
            nested_loop: self.nested_loop * f(),
            index_kappa: self.index_kappa,
            aggregate: self.aggregate * f(),
            sort: self.sort * f(),
            noise: self.noise,
            jitter: self.jitter,
            floor: self.floor,
        }
    }

    pub fn join_cost(&self, op: &OperatorKind, left: f64, right: f64, inner_indexed: bool) -> f64 {
        match op {
            OperatorKind::HashJoin => self.hash_setup + self.hash_join * (left + right),
            OperatorKind::MergeJoin => {
                let n = left + right;
                self.merge_setup + self.merge_join * n * (n + 2.0).log2()
            }
            OperatorKind::NestedLoop => {
                let kappa = if inner_indexed { self.index_kappa } else { 1.0 };
                self.nested_loop * left * right * kappa
            }
            _ => 0.0,
        }
    }

    pub fn scan_cost(&self, op: &OperatorKind, table_rows: f64, out_rows: f64) -> f64 {
        match op {
            OperatorKind::SeqScan => self.seq_scan * table_rows,
            OperatorKind::IndexScan => self.index_setup + self.index_scan * out_rows,
            _ => 0.0,
        }
    }

    pub fn unary_cost(&self, op: &OperatorKind, input: f64) -> f64 {
        match op {
            OperatorKind::Aggregate | OperatorKind::GroupBy => self.aggregate * input,
            OperatorKind::Sort => self.sort * input * (input + 2.0).log2(),
            _ => 0.0,
        }
    }
}

/// Ground-truth execution cost of plans over a schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostOracle {
    pub constants: OracleConstants,
    pub seed: u64,
}

impl CostOracle {
    pub fn new(constants: OracleConstants, seed: u64) -> Self {
        CostOracle {
            constants: constants.jittered(seed),
            seed,
        }
    }

    /// Noise-free cost at volume 1, from the plan's row estimates.
    pub fn base_cost(&self, plan: &PlanTree, schema: &WorkloadSchema) -> f64 {
        self.node_cost(plan, plan.root(), schema)
    }

    fn node_cost(&self, plan: &PlanTree, id: NodeId, schema: &WorkloadSchema) -> f64 {
        let c = &self.constants;
        let node = plan.node(id).expect("valid plan");
        let rows = |i: usize| plan.node(node.children[i]).map_or(0.0, |n| n.est_rows);
        let own = if node.op.is_scan() {
            let table_rows = node.table.map_or(0.0, |t| schema.row_count(t) as f64);
            c.scan_cost(&node.op, table_rows, node.est_rows)
        } else if node.op.is_join() && node.children.len() == 2 {
            let inner = plan.node(node.children[1]).expect("valid plan");
            c.join_cost(&node.op, rows(0), rows(1), inner.op == OperatorKind::IndexScan)
        } else if !node.children.is_empty() {
            c.unary_cost(&node.op, rows(0))
        } else {
            0.0
        };
        own + node.children.iter().map(|&ch| self.node_cost(plan, ch, schema)).sum::<f64>()
    }

    /// Seeded multiplicative noise factor of a plan.
    pub fn noise_factor(&self, plan: &PlanTree) -> f64 {
        let sigma = self.constants.noise;
        if sigma <= 0.0 {
            return 1.0;
        }
        let mut h = Fnv64::new();
        h.write_u64(self.seed);
        h.write_u64(plan.fingerprint());
        let u = (h.finish() >> 11) as f64 / (1u64 << 53) as f64;
        ((2.0 * u - 1.0) * sigma).exp()
    }

    /// Latency in seconds: base cost times volume times noise, floored.
    pub fn latency(&self, plan: &PlanTree, schema: &WorkloadSchema, volume: f64) -> f64 {
        let v = volume.max(0.0);
        (self.base_cost(plan, schema) * v * self.noise_factor(plan)).max(self.constants.floor)
    }

    pub fn noise_free_latency(&self, plan: &PlanTree, schema: &WorkloadSchema, volume: f64) -> f64 {
        (self.base_cost(plan, schema) * volume.max(0.0)).max(self.constants.floor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::{PlanSpec, QueryProps, TableId};

    fn setup() -> (WorkloadSchema, PlanTree) {
        let schema = WorkloadSchema::from_pairs([("a", 10_000u64), ("b", 50_000)]).unwrap();
        let plan = PlanSpec::node(
            OperatorKind::HashJoin,
            vec![
                PlanSpec::leaf(OperatorKind::SeqScan, TableId(0)).rows(5_000.0),
                PlanSpec::leaf(OperatorKind::IndexScan, TableId(1)).rows(100.0),
            ],
        )
        .rows(150.0)
        .build(QueryProps::default())
        .unwrap();
        (schema, plan)
    }

    #[test]
    fn hand_computed_cost() {
        let c = OracleConstants { jitter: 0.0, ..OracleConstants::default() };
        let oracle = CostOracle::new(c, 1);
        let (schema, plan) = setup();
        let expected = (1.0 + 1e-5 * 5_100.0) + 1e-5 * 10_000.0 + (1e-3 + 4e-5 * 100.0);
        assert!((oracle.base_cost(&plan, &schema) - expected).abs() < 1e-12);
    }

    #[test]
    fn volume_scaling_and_floor() {
        let oracle = CostOracle::new(OracleConstants::default(), 9);
        let (schema, plan) = setup();
        let one = oracle.noise_free_latency(&plan, &schema, 1.0);
        let two = oracle.noise_free_latency(&plan, &schema, 2.0);
        assert!((two - 2.0 * one).abs() < 1e-12 * two);
        assert_eq!(oracle.latency(&plan, &schema, 0.0), oracle.constants.floor);
        assert!(oracle.latency(&plan, &schema, 0.5) < oracle.latency(&plan, &schema, 0.6));
    }

    #[test]
    fn noise_is_deterministic_and_bounded() {
        let oracle = CostOracle::new(OracleConstants::default(), 9);
        let (schema, plan) = setup();
        assert_eq!(oracle.latency(&plan, &schema, 1.0), oracle.latency(&plan, &schema, 1.0));
        let f = oracle.noise_factor(&plan);
        let s = oracle.constants.noise;
        assert!(f >= (-s).exp() && f <= s.exp());
    }

    #[test]
    fn jitter_stays_in_band() {
        let base = OracleConstants::default();
        for seed in 0..20 {
            let j = base.jittered(seed);
            let r = j.hash_setup / base.hash_setup;
            assert!(r >= 1.0 / 1.2 - 1e-12 && r <= 1.2 + 1e-12);
        }
    }
}
