use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::plan::{QueryProps, TableId, TableInfo, WorkloadSchema};
use crate::util::rng_for;

use super::SimError;

const SEED_SCHEMA: u64 = 0x5343;
const SEED_TEMPLATE: u64 = 0x5445;
const SEED_TRAIN: u64 = 0x5452;
const SEED_TEST: u64 = 0x5453;

/// Selectivity and table-size regime of a workload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Large tables with very selective predicates: index scans and nested
    /// loops win.
    Selective,
    /// Moderate tables read mostly in full: sequential scans and hash joins win.
    Bulk,
}

impl Regime {
    fn row_range(self) -> (f64, f64) {
        match self {
            Regime::Selective => (2e5, 2e6),
            Regime::Bulk => (1e4, 1e5),
        }
    }

    fn selectivity_range(self) -> (f64, f64) {
        match self {
            Regime::Selective => (1e-4, 2e-3),
            Regime::Bulk => (0.3, 1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadParams {
    pub id: String,
    pub regime: Regime,
    #[serde(default = "default_tables")]
    pub tables: usize,
    #[serde(default = "default_templates")]
    pub templates: usize,
    #[serde(default = "default_min_join")]
    pub min_tables: usize,
    #[serde(default = "default_max_join")]
    pub max_tables: usize,
}

fn default_tables() -> usize {
    6
}
fn default_templates() -> usize {
    6
}
fn default_min_join() -> usize {
    2
}
fn default_max_join() -> usize {
    4
}

impl WorkloadParams {
    pub fn new(id: &str, regime: Regime) -> Self {
        WorkloadParams {
            id: id.to_string(),
            regime,
            tables: default_tables(),
            templates: default_templates(),
            min_tables: default_min_join(),
            max_tables: default_max_join(),
        }
    }
}

/// A query shape: tables, a spanning join tree over them, predicate ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryTemplate {
    pub id: usize,
    pub tables: Vec<TableId>,
    /// Join edges as positions into `tables`.
    pub edges: Vec<(usize, usize)>,
    /// Per-table `(low, high)` selectivity, sampled log-uniformly.
    pub selectivity_ranges: Vec<(f64, f64)>,
    pub props: QueryProps,
    pub frequency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticQuery {
    pub id: u64,
    pub workload: usize,
    pub template: usize,
    pub tables: Vec<TableId>,
    pub edges: Vec<(usize, usize)>,
    /// Aligned with `tables`.
    pub selectivities: Vec<f64>,
    pub props: QueryProps,
}

impl SyntheticQuery {
    /// Selectivity vector over the whole schema, zero for absent tables.
    pub fn selectivity_vector(&self, n_tables: usize) -> Vec<f64> {
        let mut v = vec![0.0; n_tables];
        for (t, s) in self.tables.iter().zip(&self.selectivities) {
            v[t.0] = *s;
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorkload {
    pub id: String,
    pub regime: Regime,
    pub tables: Vec<TableId>,
    pub templates: Vec<QueryTemplate>,
    /// Held-out queries, disjoint from every training draw.
    pub test: Vec<SyntheticQuery>,
}

/// Per-table statistics beyond the schema's row counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableStats {
    /// Join fan-out multiplier in `[1, 2]`.
    pub fanout: Vec<f64>,
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..=hi.ln())).exp()
}

/// Schema and workloads with disjoint table sets.
pub fn generate_workloads(
    params: &[WorkloadParams],
    test_queries: usize,
    seed: u64,
) -> Result<(WorkloadSchema, TableStats, Vec<SyntheticWorkload>), SimError> {
    if params.is_empty() {
        return Err(SimError::Config("at least one workload is required".into()));
    }
    let mut tables = Vec::new();
    let mut fanout = Vec::new();
    let mut owned = Vec::new();
    for (w, p) in params.iter().enumerate() {
        if p.tables < p.max_tables || p.min_tables < 2 || p.max_tables < p.min_tables || p.templates == 0 {
            return Err(SimError::Config(format!("workload `{}` has inconsistent sizes", p.id)));
        }
        if params[..w].iter().any(|q| q.id == p.id) {
            return Err(SimError::Config(format!("duplicate workload id `{}`", p.id)));
        }
        let mut rng = rng_for(seed, &[SEED_SCHEMA, w as u64]);
        let (lo, hi) = p.regime.row_range();
        let mut ids = Vec::new();
        for i in 0..p.tables {
            ids.push(TableId(tables.len()));
            tables.push(TableInfo {
                name: format!("{}_{}", p.id.to_lowercase(), i),
                row_count: log_uniform(&mut rng, lo, hi).round() as u64,
            });
            fanout.push(rng.gen_range(1.0..2.0));
        }
        owned.push(ids);
    }
    let schema = WorkloadSchema::new(tables).map_err(|e| SimError::Config(e.to_string()))?;

    let mut workloads = Vec::new();
    for (w, p) in params.iter().enumerate() {
        let mut rng = rng_for(seed, &[SEED_TEMPLATE, w as u64]);
        let templates = (0..p.templates)
            .map(|id| random_template(&mut rng, id, &owned[w], p))
            .collect::<Vec<_>>();
        let mut wl = SyntheticWorkload {
            id: p.id.clone(),
            regime: p.regime,
            tables: owned[w].clone(),
            templates,
            test: Vec::new(),
        };
        wl.test = (0..test_queries)
            .map(|i| draw_query(&wl, w, seed, &[SEED_TEST, w as u64, i as u64]))
            .collect();
        workloads.push(wl);
    }
    Ok((schema, TableStats { fanout }, workloads))
}

fn random_template<R: Rng>(rng: &mut R, id: usize, pool: &[TableId], p: &WorkloadParams) -> QueryTemplate {
    let k = rng.gen_range(p.min_tables..=p.max_tables);
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    for i in 0..k {
        let j = rng.gen_range(i..idx.len());
        idx.swap(i, j);
    }
    let tables: Vec<TableId> = idx[..k].iter().map(|&i| pool[i]).collect();
    // Random spanning tree: each table joins one earlier table.
    let edges = (1..k).map(|i| (rng.gen_range(0..i), i)).collect();
    let (lo, hi) = p.regime.selectivity_range();
    let selectivity_ranges = (0..k)
        .map(|_| {
            let a = log_uniform(rng, lo, hi);
            let b = log_uniform(rng, lo, hi);
            (a.min(b), a.max(b))
        })
        .collect();
    let has_aggregation = rng.gen_bool(0.5);
    QueryTemplate {
        id,
        tables,
        edges,
        selectivity_ranges,
        props: QueryProps {
            has_subquery: rng.gen_bool(0.2),
            has_aggregation,
            has_group_by: has_aggregation && rng.gen_bool(0.5),
            has_order_by: rng.gen_bool(0.3),
        },
        frequency: rng.gen_range(0.5..1.5),
    }
}

fn draw_query(wl: &SyntheticWorkload, w: usize, seed: u64, path: &[u64]) -> SyntheticQuery {
    let mut rng = rng_for(seed, path);
    let total: f64 = wl.templates.iter().map(|t| t.frequency).sum();
    let mut pick = rng.gen_range(0.0..total);
    let mut template = &wl.templates[wl.templates.len() - 1];
    for t in &wl.templates {
        if pick < t.frequency {
            template = t;
            break;
        }
        pick -= t.frequency;
    }
    let selectivities = template
        .selectivity_ranges
        .iter()
        .map(|&(lo, hi)| if hi > lo { log_uniform(&mut rng, lo, hi) } else { lo })
        .collect();
    SyntheticQuery {
        id: crate::util::derive_seed(seed, path),
        workload: w,
        template: template.id,
        tables: template.tables.clone(),
        edges: template.edges.clone(),
        selectivities,
        props: template.props,
    }
}

/// Training queries of one iteration. Streams are keyed by iteration and
/// position, so they never coincide with the held-out queries.
pub fn sample_queries(wl: &SyntheticWorkload, w: usize, iteration: usize, count: usize, seed: u64) -> Vec<SyntheticQuery> {
    (0..count)
        .map(|i| draw_query(wl, w, seed, &[SEED_TRAIN, w as u64, iteration as u64, i as u64]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> Vec<WorkloadParams> {
        vec![WorkloadParams::new("A", Regime::Selective), WorkloadParams::new("B", Regime::Bulk)]
    }

    #[test]
    fn workloads_use_disjoint_tables() {
        let (schema, stats, wls) = generate_workloads(&params(), 5, 1).unwrap();
        assert_eq!(schema.len(), 12);
        assert_eq!(stats.fanout.len(), 12);
        for t in &wls[0].tables {
            assert!(!wls[1].tables.contains(t));
        }
        for (w, wl) in wls.iter().enumerate() {
            for tpl in &wl.templates {
                assert!(tpl.tables.iter().all(|t| wl.tables.contains(t)));
                assert_eq!(tpl.edges.len(), tpl.tables.len() - 1);
            }
            for q in &wl.test {
                assert_eq!(q.workload, w);
            }
        }
    }

    #[test]
    fn held_out_queries_differ_from_training_draws() {
        let (_, _, wls) = generate_workloads(&params(), 10, 3).unwrap();
        let test: Vec<u64> = wls[0].test.iter().map(|q| q.id).collect();
        for it in 1..=20 {
            for q in sample_queries(&wls[0], 0, it, 20, 3) {
                assert!(!test.contains(&q.id));
            }
        }
    }

    #[test]
    fn selectivities_within_regime() {
        let (_, _, wls) = generate_workloads(&params(), 20, 5).unwrap();
        for q in &wls[0].test {
            assert!(q.selectivities.iter().all(|s| (1e-4..=2e-3).contains(s)));
        }
        for q in &wls[1].test {
            assert!(q.selectivities.iter().all(|s| (0.3..=1.0).contains(s)));
        }
    }

    #[test]
    fn deterministic_generation() {
        let a = generate_workloads(&params(), 4, 11).unwrap();
        let b = generate_workloads(&params(), 4, 11).unwrap();
        assert_eq!(a.2, b.2);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn inconsistent_sizes_rejected() {
        let mut p = params();
        p[0].max_tables = 9;
        assert!(generate_workloads(&p, 1, 0).is_err());
        let dup = vec![WorkloadParams::new("A", Regime::Bulk), WorkloadParams::new("A", Regime::Bulk)];
        assert!(generate_workloads(&dup, 1, 0).is_err());
    }
}
