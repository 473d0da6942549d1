use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::plan::{OperatorKind, PlanSpec, PlanTree, WorkloadSchema};
use crate::util::rng_for;

use super::oracle::CostOracle;
use super::workload::SyntheticQuery;
use super::SimError;

pub const JOIN_KINDS: [OperatorKind; 3] = [OperatorKind::HashJoin, OperatorKind::MergeJoin, OperatorKind::NestedLoop];

/// Join tree over positions of a query's table list.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum JoinTree {
    Scan { pos: usize, index: bool },
    Join { op: OperatorKind, left: Box<JoinTree>, right: Box<JoinTree> },
}

impl JoinTree {
    pub fn mask(&self) -> u32 {
        match self {
            JoinTree::Scan { pos, .. } => 1 << pos,
            JoinTree::Join { left, right, .. } => left.mask() | right.mask(),
        }
    }

    fn is_index_leaf(&self) -> bool {
        matches!(self, JoinTree::Scan { index: true, .. })
    }
}

/// Row model of one query: filtered table rows and set cardinalities.
pub struct QueryRows<'a> {
    query: &'a SyntheticQuery,
    filtered: Vec<f64>,
    fanout: Vec<f64>,
    table_rows: Vec<f64>,
}

impl<'a> QueryRows<'a> {
    pub fn new(query: &'a SyntheticQuery, schema: &WorkloadSchema, fanout: &[f64]) -> Self {
        let table_rows: Vec<f64> = query.tables.iter().map(|t| schema.row_count(*t) as f64).collect();
        let filtered = table_rows
            .iter()
            .zip(&query.selectivities)
            .map(|(r, s)| (r * s).max(1.0))
            .collect();
        QueryRows {
            query,
            filtered,
            fanout: query.tables.iter().map(|t| fanout[t.0]).collect(),
            table_rows,
        }
    }

    /// Output rows of joining the tables in `mask`: the smallest filtered
    /// input grown by the fan-out of every other table. Independent of the
    /// join order.
    pub fn cardinality(&self, mask: u32) -> f64 {
        let members: Vec<usize> = (0..self.filtered.len()).filter(|i| mask & (1 << i) != 0).collect();
        let smallest = *members
            .iter()
            .min_by(|a, b| self.filtered[**a].total_cmp(&self.filtered[**b]))
            .expect("non-empty mask");
        members
            .iter()
            .filter(|&&i| i != smallest)
            .fold(self.filtered[smallest], |acc, &i| acc * self.fanout[i])
    }

    fn spec(&self, tree: &JoinTree) -> PlanSpec {
        match tree {
            JoinTree::Scan { pos, index } => {
                let op = if *index { OperatorKind::IndexScan } else { OperatorKind::SeqScan };
                PlanSpec::leaf(op, self.query.tables[*pos]).rows(self.filtered[*pos])
            }
            JoinTree::Join { op, left, right } => {
                PlanSpec::node(op.clone(), vec![self.spec(left), self.spec(right)]).rows(self.cardinality(tree.mask()))
            }
        }
    }

    /// Wraps the join tree in the query's sort / aggregate / group-by chain.
    pub fn plan(&self, tree: &JoinTree) -> PlanTree {
        let props = self.query.props;
        let rows = self.cardinality(tree.mask());
        let mut spec = self.spec(tree);
        if props.has_group_by {
            spec = PlanSpec::node(OperatorKind::GroupBy, vec![spec]).rows((rows / 10.0).max(1.0));
        }
        if props.has_aggregation {
            let out = if props.has_group_by { (rows / 10.0).max(1.0) } else { 1.0 };
            spec = PlanSpec::node(OperatorKind::Aggregate, vec![spec]).rows(out);
        }
        if props.has_order_by {
            let input = spec.est_rows;
            spec = PlanSpec::node(OperatorKind::Sort, vec![spec]).rows(input);
        }
        spec.build(props).expect("generated plans are well formed")
    }

    fn join_tree_cost(&self, tree: &JoinTree, oracle: &CostOracle) -> f64 {
        let c = &oracle.constants;
        match tree {
            JoinTree::Scan { pos, index } => {
                let op = if *index { OperatorKind::IndexScan } else { OperatorKind::SeqScan };
                c.scan_cost(&op, self.table_rows[*pos], self.filtered[*pos])
            }
            JoinTree::Join { op, left, right } => {
                c.join_cost(
                    op,
                    self.cardinality(left.mask()),
                    self.cardinality(right.mask()),
                    right.is_index_leaf(),
                ) + self.join_tree_cost(left, oracle)
                    + self.join_tree_cost(right, oracle)
            }
        }
    }
}

fn adjacency(q: &SyntheticQuery) -> Vec<u32> {
    let mut adj = vec![0u32; q.tables.len()];
    for &(a, b) in &q.edges {
        adj[a] |= 1 << b;
        adj[b] |= 1 << a;
    }
    adj
}

fn connected(mask: u32, adj: &[u32]) -> bool {
    if mask == 0 {
        return false;
    }
    let start = mask.trailing_zeros();
    let mut seen = 1u32 << start;
    let mut frontier = seen;
    while frontier != 0 {
        let i = frontier.trailing_zeros() as usize;
        frontier &= frontier - 1;
        let next = adj[i] & mask & !seen;
        seen |= next;
        frontier |= next;
    }
    seen == mask
}

/// Ordered `(left, right)` splits of `mask` into two connected parts joined
/// by at least one edge.
fn splits(mask: u32, adj: &[u32]) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    let mut sub = (mask - 1) & mask;
    while sub != 0 {
        let rest = mask & !sub;
        if connected(sub, adj) && connected(rest, adj) {
            let linked = (0..adj.len()).any(|i| sub & (1 << i) != 0 && adj[i] & rest != 0);
            if linked {
                out.push((sub, rest));
            }
        }
        sub = (sub - 1) & mask;
    }
    out.sort_unstable();
    out
}

/// Cheapest plan under the noise-free oracle, by dynamic programming over
/// connected table subsets, join operators and scan methods.
pub fn optimal_plan(
    query: &SyntheticQuery,
    schema: &WorkloadSchema,
    fanout: &[f64],
    oracle: &CostOracle,
) -> Result<(PlanTree, f64), SimError> {
    let n = query.tables.len();
    if n == 0 || n > 12 {
        return Err(SimError::Config(format!("query {} joins {n} tables", query.id)));
    }
    let rows = QueryRows::new(query, schema, fanout);
    let adj = adjacency(query);
    let full = (1u32 << n) - 1;
    if !connected(full, &adj) {
        return Err(SimError::Config(format!("join graph of query {} is disconnected", query.id)));
    }
    // Singletons keep both scan variants, because the nested-loop cost
    // depends on whether its inner side is an index scan.
    let mut best: Vec<Vec<(f64, JoinTree)>> = vec![Vec::new(); 1 << n];
    for pos in 0..n {
        best[1 << pos] = [false, true]
            .into_iter()
            .map(|index| {
                let t = JoinTree::Scan { pos, index };
                (rows.join_tree_cost(&t, oracle), t)
            })
            .collect();
    }
    let mut masks: Vec<u32> = (1..=full).filter(|m| m.count_ones() >= 2 && connected(*m, &adj)).collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));
    for mask in masks {
        let mut winner: Option<(f64, JoinTree)> = None;
        for (l, r) in splits(mask, &adj) {
            let (cl, cr) = (rows.cardinality(l), rows.cardinality(r));
            for (lc, lt) in &best[l as usize] {
                for (rc, rt) in &best[r as usize] {
                    for op in &JOIN_KINDS {
                        let cost = lc + rc + oracle.constants.join_cost(op, cl, cr, rt.is_index_leaf());
                        if winner.as_ref().is_none_or(|(w, _)| cost < *w) {
                            winner = Some((
                                cost,
                                JoinTree::Join {
                                    op: op.clone(),
                                    left: Box::new(lt.clone()),
                                    right: Box::new(rt.clone()),
                                },
                            ));
                        }
                    }
                }
            }
        }
        best[mask as usize] = winner.into_iter().collect();
    }
    let (_, tree) = best[full as usize]
        .iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .cloned()
        .expect("connected query has a plan");
    let plan = rows.plan(&tree);
    let cost = oracle.base_cost(&plan, schema);
    Ok((plan, cost))
}

fn random_tree<R: Rng>(rng: &mut R, mask: u32, adj: &[u32]) -> JoinTree {
    if mask.count_ones() == 1 {
        return JoinTree::Scan {
            pos: mask.trailing_zeros() as usize,
            index: rng.gen_bool(0.5),
        };
    }
    let options = splits(mask, adj);
    let &(l, r) = options.choose(rng).expect("connected set splits");
    JoinTree::Join {
        op: JOIN_KINDS.choose(rng).expect("non-empty").clone(),
        left: Box::new(random_tree(rng, l, adj)),
        right: Box::new(random_tree(rng, r, adj)),
    }
}

fn flip_root_join(tree: &JoinTree) -> JoinTree {
    match tree {
        JoinTree::Join { op, left, right } => JoinTree::Join {
            op: match op {
                OperatorKind::NestedLoop => OperatorKind::HashJoin,
                _ => OperatorKind::NestedLoop,
            },
            left: left.clone(),
            right: right.clone(),
        },
        scan => scan.clone(),
    }
}

fn tree_of(plan: &PlanTree, query: &SyntheticQuery) -> JoinTree {
    fn go(plan: &PlanTree, id: crate::plan::NodeId, query: &SyntheticQuery) -> JoinTree {
        let node = plan.node(id).expect("valid");
        if node.op.is_scan() {
            let t = node.table.expect("scan has table");
            JoinTree::Scan {
                pos: query.tables.iter().position(|x| *x == t).expect("query table"),
                index: node.op == OperatorKind::IndexScan,
            }
        } else if node.op.is_join() {
            JoinTree::Join {
                op: node.op.clone(),
                left: Box::new(go(plan, node.children[0], query)),
                right: Box::new(go(plan, node.children[1], query)),
            }
        } else {
            go(plan, node.children[0], query)
        }
    }
    go(plan, plan.root(), query)
}

/// `count` distinct candidate plans: the oracle-optimal plan (when
/// `include_optimal`), its root join flipped between nested loop and hash
/// join, then seeded random join trees with random operators and scans.
pub fn generate_candidates(
    query: &SyntheticQuery,
    schema: &WorkloadSchema,
    fanout: &[f64],
    oracle: &CostOracle,
    count: usize,
    include_optimal: bool,
) -> Result<Vec<PlanTree>, SimError> {
    if count < 2 {
        return Err(SimError::Config("at least two candidates are required".into()));
    }
    let rows = QueryRows::new(query, schema, fanout);
    let adj = adjacency(query);
    let full = (1u32 << query.tables.len()) - 1;
    let mut rng = rng_for(query.id, &[0x4341]);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut push = |tree: JoinTree, out: &mut Vec<PlanTree>| {
        if seen.insert(tree.clone()) {
            out.push(rows.plan(&tree));
        }
    };
    let (opt, _) = optimal_plan(query, schema, fanout, oracle)?;
    let opt_tree = tree_of(&opt, query);
    if include_optimal {
        push(opt_tree.clone(), &mut out);
    }
    if query.tables.len() > 1 {
        push(flip_root_join(&opt_tree), &mut out);
    }
    let mut attempts = 0;
    while out.len() < count && attempts < 50 * count {
        attempts += 1;
        let t = random_tree(&mut rng, full, &adj);
        if !include_optimal && t == opt_tree {
            continue;
        }
        push(t, &mut out);
    }
    out.truncate(count);
    Ok(out)
}
