//! Break-operator plan decomposition.
//!
//! For every break kind `T`, each node of kind `T` without a `T`-kind proper
//! ancestor roots one task holding its full subtree. One remainder task spans
//! the root down to the shallowest break nodes of any kind, which are replaced
//! by `CUT` leaves that keep the original node ids.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::{NodeId, OperatorKind, PlanNode, PlanTree};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BreakSetError {
    #[error("break operator set is empty")]
    Empty,
    #[error("break operators must be joins, got {0}")]
    NotAJoin(String),
    #[error("unknown break operator `{0}`")]
    Unknown(String),
}

/// Ordered, duplicate-free set of join kinds that split plans into tasks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<OperatorKind>", into = "Vec<OperatorKind>")]
pub struct BreakOperatorSet(Vec<OperatorKind>);

impl BreakOperatorSet {
    pub fn new(kinds: impl IntoIterator<Item = OperatorKind>) -> Result<Self, BreakSetError> {
        let mut out: Vec<OperatorKind> = Vec::new();
        for k in kinds {
            if !k.is_join() {
                return Err(BreakSetError::NotAJoin(k.to_string()));
            }
            if !out.contains(&k) {
                out.push(k);
            }
        }
        if out.is_empty() {
            return Err(BreakSetError::Empty);
        }
        Ok(BreakOperatorSet(out))
    }

    pub fn kinds(&self) -> &[OperatorKind] {
        &self.0
    }

    pub fn contains(&self, op: &OperatorKind) -> bool {
        self.0.contains(op)
    }
}

impl TryFrom<Vec<OperatorKind>> for BreakOperatorSet {
    type Error = BreakSetError;

    fn try_from(v: Vec<OperatorKind>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<BreakOperatorSet> for Vec<OperatorKind> {
    fn from(b: BreakOperatorSet) -> Self {
        b.0
    }
}

/// Parses `HJ,NL`.
impl FromStr for BreakOperatorSet {
    type Err = BreakSetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let kinds = s
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| OperatorKind::from_symbol(p).ok_or_else(|| BreakSetError::Unknown(p.into())))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(kinds)
    }
}

impl fmt::Display for BreakOperatorSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|k| k.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    BreakRooted(OperatorKind),
    Remainder,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::BreakRooted(op) => write!(f, "{op}"),
            TaskKind::Remainder => f.write_str("OTH"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub kind: TaskKind,
    /// Nodes carry their ids from the origin plan.
    pub subtree: PlanTree,
    /// Fingerprint of the plan the task was cut from.
    pub origin_plan: u64,
}

impl Task {
    /// The whole plan as a single remainder task; used by the monolithic baseline.
    pub fn whole(plan: &PlanTree) -> Task {
        Task {
            kind: TaskKind::Remainder,
            subtree: plan.clone(),
            origin_plan: plan.fingerprint(),
        }
    }

    pub fn root(&self) -> NodeId {
        self.subtree.root()
    }
}

/// Shallowest break nodes of `kinds` along every root-to-leaf path, in pre-order.
fn shallowest(plan: &PlanTree, is_break: impl Fn(&OperatorKind) -> bool) -> Vec<NodeId> {
    let mut out = Vec::new();
    let mut stack = vec![plan.root()];
    while let Some(id) = stack.pop() {
        let node = plan.node(id).expect("valid tree");
        if is_break(&node.op) {
            out.push(id);
        } else {
            stack.extend(node.children.iter().rev());
        }
    }
    out
}

/// Ids of the cut leaves of the remainder task.
pub fn remainder_frontier(plan: &PlanTree, breaks: &BreakOperatorSet) -> BTreeSet<NodeId> {
    shallowest(plan, |op| breaks.contains(op)).into_iter().collect()
}

fn remainder(plan: &PlanTree, breaks: &BreakOperatorSet) -> PlanTree {
    let mut nodes = Vec::with_capacity(plan.len());
    let mut stack = vec![plan.root()];
    while let Some(id) = stack.pop() {
        let node = plan.node(id).expect("valid tree");
        if breaks.contains(&node.op) {
            nodes.push(PlanNode {
                id,
                op: OperatorKind::cut(),
                children: vec![],
                table: None,
                est_rows: node.est_rows,
            });
        } else {
            nodes.push(node.clone());
            stack.extend(node.children.iter().rev());
        }
    }
    PlanTree::from_preorder_unchecked(nodes, plan.props())
}

/// Splits `plan` into tasks. Order: remainder, then break kinds in set order,
/// each in pre-order of their roots.
pub fn decompose(plan: &PlanTree, breaks: &BreakOperatorSet) -> Vec<Task> {
    let origin = plan.fingerprint();
    let mut tasks = vec![Task {
        kind: TaskKind::Remainder,
        subtree: remainder(plan, breaks),
        origin_plan: origin,
    }];
    for kind in breaks.kinds() {
        for root in shallowest(plan, |op| op == kind) {
            tasks.push(Task {
                kind: TaskKind::BreakRooted(kind.clone()),
                subtree: plan.subtree(root).expect("root exists"),
                origin_plan: origin,
            });
        }
    }
    tasks
}
