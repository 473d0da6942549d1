//! Reader for the subset of Postgres `EXPLAIN (FORMAT JSON)` output we use.

use serde_json::Value;

use super::{OperatorKind, PlanError, PlanSpec, PlanTree, QueryProps, WorkloadSchema};

fn map_node_type(node_type: &str) -> OperatorKind {
    match node_type {
        "Nested Loop" => OperatorKind::NestedLoop,
        "Hash Join" => OperatorKind::HashJoin,
        "Merge Join" => OperatorKind::MergeJoin,
        "Seq Scan" => OperatorKind::SeqScan,
        "Index Scan" | "Index Only Scan" => OperatorKind::IndexScan,
        "Aggregate" | "GroupAggregate" | "HashAggregate" => OperatorKind::Aggregate,
        "Sort" => OperatorKind::Sort,
        other => OperatorKind::Other(other.to_string()),
    }
}

fn err(msg: impl Into<String>) -> PlanError {
    PlanError::Explain(msg.into())
}

fn node_type(obj: &Value) -> Result<&str, PlanError> {
    obj.get("Node Type")
        .and_then(Value::as_str)
        .ok_or_else(|| err("plan node without a string \"Node Type\""))
}

fn children(obj: &Value) -> Result<Vec<&Value>, PlanError> {
    match obj.get("Plans") {
        None => Ok(vec![]),
        Some(Value::Array(items)) => Ok(items.iter().collect()),
        Some(_) => Err(err("\"Plans\" must be an array")),
    }
}

fn convert(
    obj: &Value,
    schema: &WorkloadSchema,
    props: &mut QueryProps,
) -> Result<PlanSpec, PlanError> {
    let ty = node_type(obj)?;
    let op = map_node_type(ty);
    let est_rows = match obj.get("Plan Rows") {
        Some(v) => v
            .as_f64()
            .filter(|r| r.is_finite() && *r >= 0.0)
            .ok_or_else(|| err(format!("non-numeric \"Plan Rows\" on {ty} node: {v}")))?,
        None => return Err(err(format!("missing \"Plan Rows\" on {ty} node"))),
    };

    if obj.get("Group Key").is_some() {
        props.has_group_by = true;
    }
    if matches!(op, OperatorKind::Aggregate) {
        props.has_aggregation = true;
    }
    if matches!(op, OperatorKind::Sort) {
        props.has_order_by = true;
    }
    if let Some(rel) = obj.get("Parent Relationship").and_then(Value::as_str) {
        if rel == "SubPlan" || rel == "InitPlan" {
            props.has_subquery = true;
        }
    }
    if obj.get("Subplan Name").is_some() {
        props.has_subquery = true;
    }

    let table = if op.is_scan() {
        let name = obj
            .get("Relation Name")
            .and_then(Value::as_str)
            .ok_or_else(|| err(format!("{ty} node without \"Relation Name\"")))?;
        Some(
            schema
                .lookup(name)
                .ok_or_else(|| PlanError::UnknownTable(name.to_string()))?,
        )
    } else {
        None
    };

    let mut kids = Vec::new();
    for child in children(obj)? {
        // Hash build nodes are plumbing of the parent hash join.
        let child = if matches!(op, OperatorKind::HashJoin) && node_type(child)? == "Hash" {
            match children(child)?.as_slice() {
                [inner] => *inner,
                _ => return Err(err("\"Hash\" node must have exactly one input")),
            }
        } else {
            child
        };
        kids.push(convert(child, schema, props)?);
    }
    if kids.len() > 2 {
        return Err(PlanError::Arity {
            op: ty.to_string(),
            expected: "at most 2",
            found: kids.len(),
        });
    }

    Ok(PlanSpec {
        op,
        table,
        est_rows,
        children: kids,
    })
}

/// Parses the array-wrapped object printed by `EXPLAIN (FORMAT JSON)`.
/// Query flags are inferred from the plan (group keys, aggregate and sort
/// nodes, sub-plans).
pub fn parse_explain_json(doc: &str, schema: &WorkloadSchema) -> Result<PlanTree, PlanError> {
    let value: Value =
        serde_json::from_str(doc).map_err(|e| err(format!("invalid JSON: {e}")))?;
    let top = match &value {
        Value::Array(items) => items.first().ok_or_else(|| err("empty top-level array"))?,
        obj @ Value::Object(_) => obj,
        _ => return Err(err("expected an array or object at top level")),
    };
    let plan = top
        .get("Plan")
        .ok_or_else(|| err("missing \"Plan\" key"))?;
    let mut props = QueryProps::default();
    let spec = convert(plan, schema, &mut props)?;
    spec.build(props)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::NodeId;

    fn schema() -> WorkloadSchema {
        WorkloadSchema::from_pairs([("t1", 1000), ("t2", 500)]).unwrap()
    }

    #[test]
    fn minimal_seq_scan() {
        let doc = r#"[{"Plan":{"Node Type":"Seq Scan","Relation Name":"t1","Plan Rows":100}}]"#;
        let tree = parse_explain_json(doc, &schema()).unwrap();
        assert_eq!(tree.len(), 1);
        assert_eq!(tree.root_node().op, OperatorKind::SeqScan);
        assert_eq!(tree.root_node().est_rows, 100.0);
    }

    #[test]
    fn hash_join_collapses_hash_child() {
        let doc = r#"[{"Plan":{"Node Type":"Hash Join","Plan Rows":10,"Plans":[
            {"Node Type":"Seq Scan","Relation Name":"t1","Plan Rows":100},
            {"Node Type":"Hash","Plan Rows":5,"Plans":[
                {"Node Type":"Index Scan","Relation Name":"t2","Plan Rows":5}]}]}}]"#;
        let tree = parse_explain_json(doc, &schema()).unwrap();
        assert_eq!(tree.len(), 3);
        assert_eq!(tree.root_node().op, OperatorKind::HashJoin);
        assert_eq!(tree.root_node().children.len(), 2);
        assert_eq!(tree.node(NodeId(3)).unwrap().op, OperatorKind::IndexScan);
    }

    #[test]
    fn unknown_types_become_other() {
        let doc = r#"[{"Plan":{"Node Type":"Materialize","Plan Rows":3,"Plans":[
            {"Node Type":"Bitmap Heap Scan","Relation Name":"t1","Plan Rows":3}]}}]"#;
        let tree = parse_explain_json(doc, &schema()).unwrap();
        assert_eq!(tree.root_node().op, OperatorKind::Other("Materialize".into()));
        let leaf = tree.node(NodeId(2)).unwrap();
        assert_eq!(leaf.op, OperatorKind::Other("Bitmap Heap Scan".into()));
        assert!(!leaf.op.is_scan() && !leaf.op.is_join());
        assert!(leaf.table.is_none());
    }

    #[test]
    fn errors() {
        let s = schema();
        assert!(matches!(
            parse_explain_json(r#"[{"Planx":{}}]"#, &s),
            Err(PlanError::Explain(m)) if m.contains("missing \"Plan\"")
        ));
        assert!(matches!(
            parse_explain_json(
                r#"[{"Plan":{"Node Type":"Seq Scan","Relation Name":"t1","Plan Rows":"many"}}]"#,
                &s
            ),
            Err(PlanError::Explain(m)) if m.contains("non-numeric")
        ));
        let nary = r#"[{"Plan":{"Node Type":"Append","Plan Rows":1,"Plans":[
            {"Node Type":"Seq Scan","Relation Name":"t1","Plan Rows":1},
            {"Node Type":"Seq Scan","Relation Name":"t1","Plan Rows":1},
            {"Node Type":"Seq Scan","Relation Name":"t2","Plan Rows":1}]}}]"#;
        assert!(matches!(parse_explain_json(nary, &s), Err(PlanError::Arity { found: 3, .. })));
    }
}
