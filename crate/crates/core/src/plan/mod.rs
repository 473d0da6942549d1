//! Query plans, operators and the workload schema.
//!
//! A [`PlanTree`] is an at-most-binary operator tree whose node ids follow
//! the pre-order walk of the plan it was parsed from (root = 1). Sub-trees cut
//! out of a plan keep the ids of their origin, so ids are strictly increasing
//! along pre-order but not necessarily contiguous.

mod explain;
mod native;
pub mod random;
mod schema;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use explain::parse_explain_json;
pub use native::{parse_native_plan, parse_native_plans, serialize_native};
pub use schema::{TableId, TableInfo, WorkloadSchema};

/// Operator name used for the leaves that mark where a break operator was cut
/// out of a remainder tree.
pub const CUT_OPERATOR: &str = "CUT";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("unknown operator `{name}` at {line}:{col}")]
    UnknownOperator { name: String, line: usize, col: usize },
    #[error("operator {op} expects {expected} children, found {found}")]
    Arity {
        op: String,
        expected: &'static str,
        found: usize,
    },
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("table id {0} is outside the schema")]
    TableOutOfRange(usize),
    #[error("scan operator {0} requires a table")]
    MissingTable(String),
    #[error("operator {0} cannot carry a table")]
    UnexpectedTable(String),
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("explain document: {0}")]
    Explain(String),
    #[error("schema file line {line}: {msg}")]
    Schema { line: usize, msg: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OperatorKind {
    HashJoin,
    MergeJoin,
    NestedLoop,
    SeqScan,
    IndexScan,
    Aggregate,
    Sort,
    GroupBy,
    Other(String),
}

impl OperatorKind {
    pub fn cut() -> Self {
        OperatorKind::Other(CUT_OPERATOR.to_string())
    }

    pub fn is_join(&self) -> bool {
        matches!(
            self,
            OperatorKind::HashJoin | OperatorKind::MergeJoin | OperatorKind::NestedLoop
        )
    }

    pub fn is_scan(&self) -> bool {
        matches!(self, OperatorKind::SeqScan | OperatorKind::IndexScan)
    }

    pub fn is_unary(&self) -> bool {
        matches!(
            self,
            OperatorKind::Aggregate | OperatorKind::Sort | OperatorKind::GroupBy
        )
    }

    pub fn is_cut(&self) -> bool {
        matches!(self, OperatorKind::Other(name) if name == CUT_OPERATOR)
    }

    /// Spelling in the native plan format. `Other` operators (except `CUT`)
    /// have no symbol and are written quoted.
    pub fn symbol(&self) -> Option<&'static str> {
        Some(match self {
            OperatorKind::HashJoin => "HJ",
            OperatorKind::MergeJoin => "MJ",
            OperatorKind::NestedLoop => "NL",
            OperatorKind::SeqScan => "SS",
            OperatorKind::IndexScan => "IS",
            OperatorKind::Aggregate => "AGG",
            OperatorKind::Sort => "SORT",
            OperatorKind::GroupBy => "GB",
            OperatorKind::Other(name) if name == CUT_OPERATOR => CUT_OPERATOR,
            OperatorKind::Other(_) => return None,
        })
    }

    pub fn from_symbol(sym: &str) -> Option<Self> {
        Some(match sym {
            "HJ" => OperatorKind::HashJoin,
            "MJ" => OperatorKind::MergeJoin,
            "NL" => OperatorKind::NestedLoop,
            "SS" => OperatorKind::SeqScan,
            "IS" => OperatorKind::IndexScan,
            "AGG" => OperatorKind::Aggregate,
            "SORT" => OperatorKind::Sort,
            "GB" => OperatorKind::GroupBy,
            CUT_OPERATOR => OperatorKind::cut(),
            _ => return None,
        })
    }

    fn arity_ok(&self, children: usize) -> Result<(), &'static str> {
        let ok = match self {
            k if k.is_join() => children == 2,
            k if k.is_scan() => children == 0,
            k if k.is_unary() => children == 1,
            k if k.is_cut() => children == 0,
            _ => children <= 2,
        };
        if ok {
            return Ok(());
        }
        Err(match self {
            k if k.is_join() => "exactly 2",
            k if k.is_scan() || k.is_cut() => "no",
            k if k.is_unary() => "exactly 1",
            _ => "at most 2",
        })
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.symbol(), self) {
            (Some(sym), _) => f.write_str(sym),
            (None, OperatorKind::Other(name)) => write!(f, "\"{name}\""),
            (None, _) => unreachable!(),
        }
    }
}

/// Pre-order node index. `0` is reserved for "absent child".
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const ABSENT: NodeId = NodeId(0);
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanNode {
    pub id: NodeId,
    pub op: OperatorKind,
    pub children: Vec<NodeId>,
    pub table: Option<TableId>,
    pub est_rows: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QueryProps {
    pub has_subquery: bool,
    pub has_aggregation: bool,
    pub has_group_by: bool,
    pub has_order_by: bool,
}

impl QueryProps {
    /// Flags in the fixed order subquery, aggregation, group by, order by.
    pub fn as_array(&self) -> [bool; 4] {
        [
            self.has_subquery,
            self.has_aggregation,
            self.has_group_by,
            self.has_order_by,
        ]
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RawPlanTree {
    nodes: Vec<PlanNode>,
    root: NodeId,
    props: QueryProps,
}

/// Immutable operator tree. Nodes are stored in pre-order.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "RawPlanTree", into = "RawPlanTree")]
pub struct PlanTree {
    nodes: Vec<PlanNode>,
    index: HashMap<NodeId, usize>,
    props: QueryProps,
}

impl PartialEq for PlanTree {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.props == other.props
    }
}

impl TryFrom<RawPlanTree> for PlanTree {
    type Error = PlanError;

    fn try_from(raw: RawPlanTree) -> Result<Self, Self::Error> {
        PlanTree::new(raw.nodes, raw.root, raw.props)
    }
}

impl From<PlanTree> for RawPlanTree {
    fn from(tree: PlanTree) -> Self {
        RawPlanTree {
            root: tree.root(),
            nodes: tree.nodes,
            props: tree.props,
        }
    }
}

impl PlanTree {
    /// Validates structure and arity and stores the nodes in pre-order.
    /// Ids must be non-zero, unique, and strictly increasing along pre-order.
    pub fn new(nodes: Vec<PlanNode>, root: NodeId, props: QueryProps) -> Result<Self, PlanError> {
        let mut by_id: HashMap<NodeId, PlanNode> = HashMap::with_capacity(nodes.len());
        let count = nodes.len();
        for node in nodes {
            if node.id == NodeId::ABSENT {
                return Err(PlanError::InvalidTree("node id 0 is reserved".into()));
            }
            node.op.arity_ok(node.children.len()).map_err(|expected| PlanError::Arity {
                op: node.op.to_string(),
                expected,
                found: node.children.len(),
            })?;
            match (&node.table, node.op.is_scan()) {
                (None, true) => return Err(PlanError::MissingTable(node.op.to_string())),
                (Some(_), false) => return Err(PlanError::UnexpectedTable(node.op.to_string())),
                _ => {}
            }
            if !(node.est_rows.is_finite() && node.est_rows >= 0.0) {
                return Err(PlanError::InvalidTree(format!(
                    "node {} has invalid row estimate {}",
                    node.id, node.est_rows
                )));
            }
            if let Some(prev) = by_id.insert(node.id, node) {
                return Err(PlanError::InvalidTree(format!("duplicate node id {}", prev.id)));
            }
        }

        let mut ordered = Vec::with_capacity(count);
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            let node = by_id.remove(&id).ok_or_else(|| {
                PlanError::InvalidTree(format!("node {id} is missing or reached twice"))
            })?;
            stack.extend(node.children.iter().rev().copied());
            ordered.push(node);
        }
        if !by_id.is_empty() {
            return Err(PlanError::InvalidTree(format!(
                "{} node(s) unreachable from root {root}",
                by_id.len()
            )));
        }
        if ordered.windows(2).any(|w| w[0].id >= w[1].id) {
            return Err(PlanError::InvalidTree(
                "node ids must increase along pre-order".into(),
            ));
        }
        let index = ordered.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        Ok(PlanTree {
            nodes: ordered,
            index,
            props,
        })
    }

    pub fn root(&self) -> NodeId {
        self.nodes[0].id
    }

    pub fn root_node(&self) -> &PlanNode {
        &self.nodes[0]
    }

    pub fn props(&self) -> QueryProps {
        self.props
    }

    pub fn with_props(mut self, props: QueryProps) -> Self {
        self.props = props;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Option<&PlanNode> {
        self.index.get(&id).map(|&i| &self.nodes[i])
    }

    /// Nodes in pre-order.
    pub fn nodes(&self) -> &[PlanNode] {
        &self.nodes
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.index.contains_key(&id)
    }

    /// Tables referenced by scan nodes, ascending and deduplicated.
    pub fn tables(&self) -> Vec<TableId> {
        let mut t: Vec<TableId> = self.nodes.iter().filter_map(|n| n.table).collect();
        t.sort_unstable();
        t.dedup();
        t
    }

    /// Pre-order subtree rooted at `id`, keeping original ids.
    pub fn subtree(&self, id: NodeId) -> Option<PlanTree> {
        let start = *self.index.get(&id)?;
        let mut end = start + 1;
        // Pre-order: the subtree is the contiguous run until the pending-child
        // counter drops to zero.
        let mut pending = self.nodes[start].children.len();
        while pending > 0 {
            pending = pending - 1 + self.nodes[end].children.len();
            end += 1;
        }
        let nodes = self.nodes[start..end].to_vec();
        let index = nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        Some(PlanTree {
            nodes,
            index,
            props: self.props,
        })
    }

    /// Parent of every non-root node.
    pub fn parents(&self) -> HashMap<NodeId, NodeId> {
        self.nodes
            .iter()
            .flat_map(|n| n.children.iter().map(move |&c| (c, n.id)))
            .collect()
    }

    /// Nodes must already be a valid tree in pre-order.
    pub(crate) fn from_preorder_unchecked(nodes: Vec<PlanNode>, props: QueryProps) -> PlanTree {
        let index = nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        PlanTree {
            nodes,
            index,
            props,
        }
    }

    /// Stable 64-bit structural fingerprint (operators, tables, shape, ids).
    pub fn fingerprint(&self) -> u64 {
        let mut h = crate::util::Fnv64::new();
        for n in &self.nodes {
            h.write_u64(n.id.0 as u64);
            h.write_str(&n.op.to_string());
            h.write_u64(n.table.map_or(u64::MAX, |t| t.0 as u64));
            h.write_u64(n.children.len() as u64);
            for c in &n.children {
                h.write_u64(c.0 as u64);
            }
        }
        h.write_u64(self.props.as_array().iter().fold(0, |a, &b| a * 2 + b as u64));
        h.finish()
    }
}

/// Node ids in root-left-right order.
pub fn preorder_ids(tree: &PlanTree) -> Vec<NodeId> {
    tree.nodes.iter().map(|n| n.id).collect()
}

/// Builds a plan from a nested description, assigning fresh pre-order ids.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanSpec {
    pub op: OperatorKind,
    pub table: Option<TableId>,
    pub est_rows: f64,
    pub children: Vec<PlanSpec>,
}

impl PlanSpec {
    pub fn leaf(op: OperatorKind, table: TableId) -> Self {
        PlanSpec {
            op,
            table: Some(table),
            est_rows: 0.0,
            children: vec![],
        }
    }

    pub fn node(op: OperatorKind, children: Vec<PlanSpec>) -> Self {
        PlanSpec {
            op,
            table: None,
            est_rows: 0.0,
            children,
        }
    }

    pub fn rows(mut self, est_rows: f64) -> Self {
        self.est_rows = est_rows;
        self
    }

    pub fn build(self, props: QueryProps) -> Result<PlanTree, PlanError> {
        let mut nodes = Vec::new();
        fn walk(spec: PlanSpec, nodes: &mut Vec<PlanNode>) -> NodeId {
            let id = NodeId(nodes.len() as u32 + 1);
            let slot = nodes.len();
            nodes.push(PlanNode {
                id,
                op: spec.op,
                children: vec![],
                table: spec.table,
                est_rows: spec.est_rows,
            });
            let children = spec.children.into_iter().map(|c| walk(c, nodes)).collect();
            nodes[slot].children = children;
            id
        }
        let root = walk(self, &mut nodes);
        PlanTree::new(nodes, root, props)
    }
}


#[cfg(test)]
pub(crate) use tests::figure_shaped;
