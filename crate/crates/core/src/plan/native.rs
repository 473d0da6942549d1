//! Native textual plan format.
//!
//! ```text
//! plan  := node flags?
//! node  := op table? ( '(' node ( ',' node )* ')' )?
//! op    := HJ | MJ | NL | SS | IS | AGG | SORT | GB | CUT | "quoted name"
//! table := '[' name ']'
//! flags := '{' ( flag ( ',' flag )* )? '}'      flag := subq | agg | groupby | orderby
//! ```
//!
//! Whitespace is insignificant. Node ids are assigned in pre-order from 1.

use super::{schema::is_table_name, PlanError, PlanSpec, PlanTree, QueryProps, WorkloadSchema};
use super::{OperatorKind, TableId};

struct Cursor {
    chars: Vec<char>,
    pos: usize,
}

impl Cursor {
    fn new(text: &str) -> Self {
        Cursor {
            chars: text.chars().collect(),
            pos: 0,
        }
    }

    fn location(&self, pos: usize) -> (usize, usize) {
        let mut line = 1;
        let mut col = 1;
        for c in self.chars.iter().take(pos) {
            if *c == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
        }
        (line, col)
    }

    fn error(&self, pos: usize, msg: impl Into<String>) -> PlanError {
        let (line, col) = self.location(pos);
        PlanError::Syntax {
            line,
            col,
            msg: msg.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), PlanError> {
        if self.eat(c) {
            Ok(())
        } else {
            let found = self
                .chars
                .get(self.pos)
                .map_or("end of input".to_string(), |f| format!("`{f}`"));
            Err(self.error(self.pos, format!("expected `{c}`, found {found}")))
        }
    }

    fn word(&mut self) -> (usize, String) {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.chars.len() {
            let c = self.chars[self.pos];
            if c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '$' {
                self.pos += 1;
            } else {
                break;
            }
        }
        (start, self.chars[start..self.pos].iter().collect())
    }

    fn quoted(&mut self) -> Result<String, PlanError> {
        let start = self.pos;
        self.expect('"')?;
        let mut out = String::new();
        loop {
            match self.chars.get(self.pos) {
                Some('"') => {
                    self.pos += 1;
                    return Ok(out);
                }
                Some(c) => {
                    out.push(*c);
                    self.pos += 1;
                }
                None => return Err(self.error(start, "unterminated quoted operator")),
            }
        }
    }

    fn at_end(&mut self) -> bool {
        self.peek().is_none()
    }
}

fn parse_node(cur: &mut Cursor, schema: &WorkloadSchema) -> Result<PlanSpec, PlanError> {
    let op_pos = {
        cur.skip_ws();
        cur.pos
    };
    let op = if cur.peek() == Some('"') {
        OperatorKind::Other(cur.quoted()?)
    } else {
        let (pos, word) = cur.word();
        if word.is_empty() {
            return Err(cur.error(pos, "expected an operator"));
        }
        OperatorKind::from_symbol(&word).ok_or_else(|| {
            let (line, col) = cur.location(pos);
            PlanError::UnknownOperator {
                name: word.clone(),
                line,
                col,
            }
        })?
    };

    let mut table = None;
    if cur.eat('[') {
        let (pos, name) = cur.word();
        if !is_table_name(&name) {
            return Err(cur.error(pos, "expected a table name"));
        }
        table = Some(
            schema
                .lookup(&name)
                .ok_or_else(|| PlanError::UnknownTable(name.clone()))?,
        );
        cur.expect(']')?;
    }
    if op.is_scan() && table.is_none() {
        return Err(cur.error(op_pos, format!("scan {op} needs a `[table]`")));
    }
    if !op.is_scan() && table.is_some() {
        return Err(cur.error(op_pos, format!("operator {op} cannot take a table")));
    }

    let mut children = Vec::new();
    if cur.eat('(') {
        loop {
            children.push(parse_node(cur, schema)?);
            if cur.eat(',') {
                continue;
            }
            cur.expect(')')?;
            break;
        }
    }
    Ok(PlanSpec {
        op,
        table,
        est_rows: 0.0,
        children,
    })
}

fn parse_flags(cur: &mut Cursor) -> Result<QueryProps, PlanError> {
    let mut props = QueryProps::default();
    if !cur.eat('{') {
        return Ok(props);
    }
    if cur.eat('}') {
        return Ok(props);
    }
    loop {
        let (pos, flag) = cur.word();
        match flag.as_str() {
            "subq" => props.has_subquery = true,
            "agg" => props.has_aggregation = true,
            "groupby" => props.has_group_by = true,
            "orderby" => props.has_order_by = true,
            _ => return Err(cur.error(pos, format!("unknown query flag `{flag}`"))),
        }
        if cur.eat(',') {
            continue;
        }
        cur.expect('}')?;
        return Ok(props);
    }
}

/// Parses exactly one plan from `text` (which may span several lines).
pub fn parse_native_plan(text: &str, schema: &WorkloadSchema) -> Result<PlanTree, PlanError> {
    let mut cur = Cursor::new(text);
    let spec = parse_node(&mut cur, schema)?;
    let props = parse_flags(&mut cur)?;
    if !cur.at_end() {
        return Err(cur.error(cur.pos, "trailing input after plan"));
    }
    spec.build(props)
}

/// One plan per non-empty line; `#` starts a comment line. Reported error
/// lines refer to the whole text.
pub fn parse_native_plans(text: &str, schema: &WorkloadSchema) -> Result<Vec<PlanTree>, PlanError> {
    let mut plans = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let plan = parse_native_plan(line, schema).map_err(|e| match e {
            PlanError::Syntax { col, msg, .. } => PlanError::Syntax {
                line: i + 1,
                col,
                msg,
            },
            PlanError::UnknownOperator { name, col, .. } => PlanError::UnknownOperator {
                name,
                line: i + 1,
                col,
            },
            other => other,
        })?;
        plans.push(plan);
    }
    Ok(plans)
}

/// Canonical form: no whitespace, flag set only when some flag is set.
pub fn serialize_native(tree: &PlanTree, schema: &WorkloadSchema) -> String {
    fn write(tree: &PlanTree, schema: &WorkloadSchema, id: super::NodeId, out: &mut String) {
        let node = tree.node(id).expect("child ids resolve");
        out.push_str(&node.op.to_string());
        if let Some(TableId(t)) = node.table {
            out.push('[');
            out.push_str(&schema.tables()[t].name);
            out.push(']');
        }
        if !node.children.is_empty() {
            out.push('(');
            for (i, c) in node.children.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write(tree, schema, *c, out);
            }
            out.push(')');
        }
    }
    let mut out = String::new();
    write(tree, schema, tree.root(), &mut out);
    let props = tree.props();
    let flags: Vec<&str> = ["subq", "agg", "groupby", "orderby"]
        .into_iter()
        .zip(props.as_array())
        .filter_map(|(name, on)| on.then_some(name))
        .collect();
    if !flags.is_empty() {
        out.push('{');
        out.push_str(&flags.join(","));
        out.push('}');
    }
    out
}
