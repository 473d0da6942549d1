//! Task encoding: Features A (table selectivity), B (operator counts),
//! C (pre-order structure triples) and D (query flags).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decompose::Task;
use crate::plan::{NodeId, OperatorKind, PlanTree, QueryProps, TableId, WorkloadSchema};

/// Default number of structure triples a task may hold.
pub const DEFAULT_C_MAX: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodeError {
    #[error("table {0} is not part of the workload schema")]
    UnknownTable(TableId),
    #[error("task has {nodes} nodes, more than the {c_max} structure slots")]
    TooLarge { nodes: usize, c_max: usize },
    #[error("malformed structure encoding: {0}")]
    BadStructure(String),
}

/// Per-table selectivity estimates in `[0, 1]` for the current query.
pub trait SelectivityProvider {
    fn selectivity(&self, table: TableId) -> f64;
}

impl<F: Fn(TableId) -> f64> SelectivityProvider for F {
    fn selectivity(&self, table: TableId) -> f64 {
        self(table)
    }
}

/// Selectivities stored by table slot; missing slots read as 0.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FixedSelectivities(pub Vec<f64>);

impl SelectivityProvider for FixedSelectivities {
    fn selectivity(&self, table: TableId) -> f64 {
        self.0.get(table.0).copied().unwrap_or(0.0)
    }
}

/// Planner estimates taken from a plan: estimated scan output rows divided by
/// the table's row count. With several scans of one table the largest wins.
#[derive(Clone, Debug)]
pub struct PlanRowEstimates(Vec<f64>);

impl PlanRowEstimates {
    pub fn from_plan(plan: &PlanTree, schema: &WorkloadSchema) -> Self {
        let mut sel = vec![0.0; schema.len()];
        for n in plan.nodes() {
            if let Some(t) = n.table {
                if let Some(info) = schema.table(t) {
                    let s = (n.est_rows / info.row_count as f64).clamp(0.0, 1.0);
                    sel[t.0] = f64::max(sel[t.0], s);
                }
            }
        }
        PlanRowEstimates(sel)
    }
}

impl SelectivityProvider for PlanRowEstimates {
    fn selectivity(&self, table: TableId) -> f64 {
        self.0.get(table.0).copied().unwrap_or(0.0)
    }
}

/// `(node, left, right)`; 0 marks an absent child.
pub type StructureTriple = [u32; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskEncoding {
    /// Length `n`, entries in `[0, 1]`.
    pub a: Vec<f64>,
    /// Length `3 + 2n`: HJ, MJ, NL counts, then (SS, IS) per table.
    pub b: Vec<u32>,
    /// One triple per task node in pre-order (unpadded).
    pub c: Vec<StructureTriple>,
    /// Subquery, aggregation, group by, order by.
    pub d: [u8; 4],
}

impl TaskEncoding {
    pub fn n_tables(&self) -> usize {
        self.a.len()
    }

    /// Structure triples padded with `(0,0,0)` to `c_max`.
    pub fn c_padded(&self, c_max: usize) -> Vec<StructureTriple> {
        let mut c = self.c.clone();
        c.resize(c_max.max(c.len()), [0, 0, 0]);
        c
    }
}

/// Feature B length for `n` tables.
pub fn b_len(n: usize) -> usize {
    3 + 2 * n
}

/// Features A and D, shared by every task of a query.
pub fn encode_query_level(
    plan: &PlanTree,
    schema: &WorkloadSchema,
    sel: &dyn SelectivityProvider,
    props: QueryProps,
) -> Result<(Vec<f64>, [u8; 4]), EncodeError> {
    let mut a = vec![0.0; schema.len()];
    for t in plan.tables() {
        let slot = a.get_mut(t.0).ok_or(EncodeError::UnknownTable(t))?;
        let s = sel.selectivity(t);
        *slot = if s.is_finite() { s.clamp(0.0, 1.0) } else { 0.0 };
    }
    let d = props.as_array().map(u8::from);
    Ok((a, d))
}

/// Operator counts of a subtree (order of traversal does not matter for counts).
pub fn operator_counts(tree: &PlanTree, n_tables: usize) -> Result<Vec<u32>, EncodeError> {
    let mut b = vec![0u32; b_len(n_tables)];
    for node in tree.nodes().iter().rev() {
        let slot = match (&node.op, node.table) {
            (OperatorKind::HashJoin, _) => 0,
            (OperatorKind::MergeJoin, _) => 1,
            (OperatorKind::NestedLoop, _) => 2,
            (OperatorKind::SeqScan, Some(t)) | (OperatorKind::IndexScan, Some(t)) => {
                if t.0 >= n_tables {
                    return Err(EncodeError::UnknownTable(t));
                }
                3 + 2 * t.0 + usize::from(node.op == OperatorKind::IndexScan)
            }
            _ => continue,
        };
        b[slot] += 1;
    }
    Ok(b)
}

/// Feature C: pre-order `(node, left, right)` triples.
pub fn structure_triples(tree: &PlanTree) -> Vec<StructureTriple> {
    tree.nodes()
        .iter()
        .map(|n| {
            let child = |i: usize| n.children.get(i).map_or(0, |c| c.0);
            [n.id.0, child(0), child(1)]
        })
        .collect()
}

pub fn encode_task(
    task: &Task,
    schema: &WorkloadSchema,
    sel: &dyn SelectivityProvider,
    props: QueryProps,
    c_max: usize,
) -> Result<TaskEncoding, EncodeError> {
    let (a, d) = encode_query_level(&task.subtree, schema, sel, props)?;
    encode_task_with(task, schema, a, d, c_max)
}

/// Builds a task encoding from precomputed query-level features.
pub fn encode_task_with(
    task: &Task,
    schema: &WorkloadSchema,
    a: Vec<f64>,
    d: [u8; 4],
    c_max: usize,
) -> Result<TaskEncoding, EncodeError> {
    let nodes = task.subtree.len();
    if nodes > c_max {
        return Err(EncodeError::TooLarge { nodes, c_max });
    }
    Ok(TaskEncoding {
        a,
        b: operator_counts(&task.subtree, schema.len())?,
        c: structure_triples(&task.subtree),
        d,
    })
}

/// Encodes every task of one plan; A and D are computed once from the whole plan.
pub fn encode_plan_tasks(
    plan: &PlanTree,
    tasks: &[Task],
    schema: &WorkloadSchema,
    sel: &dyn SelectivityProvider,
    c_max: usize,
) -> Result<Vec<TaskEncoding>, EncodeError> {
    let (a, d) = encode_query_level(plan, schema, sel, plan.props())?;
    tasks
        .iter()
        .map(|t| encode_task_with(t, schema, a.clone(), d, c_max))
        .collect()
}

/// Tree shape recovered from Feature C. `children[i]` holds positions into
/// `ids` (pre-order).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StructureTree {
    pub ids: Vec<NodeId>,
    pub children: Vec<(Option<usize>, Option<usize>)>,
}

impl StructureTree {
    /// Rebuilds the tree from (possibly padded) triples, checking that the
    /// triples describe a single tree listed in pre-order.
    pub fn from_triples(c: &[StructureTriple]) -> Result<Self, EncodeError> {
        let c: Vec<StructureTriple> = c.iter().copied().filter(|t| *t != [0, 0, 0]).collect();
        if c.is_empty() {
            return Err(EncodeError::BadStructure("no nodes".into()));
        }
        let ids: Vec<NodeId> = c.iter().map(|t| NodeId(t[0])).collect();
        let pos = |id: u32| ids.iter().position(|n| n.0 == id);
        let mut children = Vec::with_capacity(c.len());
        for t in &c {
            if t[0] == 0 {
                return Err(EncodeError::BadStructure("node id 0".into()));
            }
            if t[1] == 0 && t[2] != 0 {
                return Err(EncodeError::BadStructure(format!(
                    "node {} has a right child but no left child",
                    t[0]
                )));
            }
            let resolve = |id: u32| -> Result<Option<usize>, EncodeError> {
                if id == 0 {
                    return Ok(None);
                }
                pos(id).map(Some).ok_or_else(|| {
                    EncodeError::BadStructure(format!("child {id} of node {} not listed", t[0]))
                })
            };
            children.push((resolve(t[1])?, resolve(t[2])?));
        }
        let tree = StructureTree { ids, children };
        // Re-walk in pre-order and require it to reproduce the listing.
        let mut order = Vec::with_capacity(tree.ids.len());
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if order.len() > tree.ids.len() {
                return Err(EncodeError::BadStructure("cycle".into()));
            }
            order.push(i);
            let (l, r) = tree.children[i];
            stack.extend(r);
            stack.extend(l);
        }
        if order != (0..tree.ids.len()).collect::<Vec<_>>() {
            return Err(EncodeError::BadStructure(
                "triples are not a single tree in pre-order".into(),
            ));
        }
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn to_triples(&self) -> Vec<StructureTriple> {
        self.ids
            .iter()
            .zip(&self.children)
            .map(|(id, (l, r))| {
                [
                    id.0,
                    l.map_or(0, |i| self.ids[i].0),
                    r.map_or(0, |i| self.ids[i].0),
                ]
            })
            .collect()
    }

    /// True when this shape equals the shape and ids of `tree`.
    pub fn matches(&self, tree: &PlanTree) -> bool {
        self.to_triples() == structure_triples(tree)
    }
}
