use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::PlanError;

/// Index of a table in its [`WorkloadSchema`]; also the Feature A slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TableId(pub usize);

impl fmt::Display for TableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t#{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableInfo {
    pub name: String,
    pub row_count: u64,
}

/// Ordered table list. Order is fixed for an experiment because it defines
/// the encoding slots.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<TableInfo>", into = "Vec<TableInfo>")]
pub struct WorkloadSchema {
    tables: Vec<TableInfo>,
    by_name: HashMap<String, TableId>,
}

impl TryFrom<Vec<TableInfo>> for WorkloadSchema {
    type Error = PlanError;

    fn try_from(tables: Vec<TableInfo>) -> Result<Self, Self::Error> {
        WorkloadSchema::new(tables)
    }
}

impl From<WorkloadSchema> for Vec<TableInfo> {
    fn from(schema: WorkloadSchema) -> Self {
        schema.tables
    }
}

impl WorkloadSchema {
    pub fn new(tables: Vec<TableInfo>) -> Result<Self, PlanError> {
        let mut by_name = HashMap::with_capacity(tables.len());
        for (i, t) in tables.iter().enumerate() {
            if t.row_count == 0 {
                return Err(PlanError::Schema {
                    line: i + 1,
                    msg: format!("table `{}` must have a positive row count", t.name),
                });
            }
            if !is_table_name(&t.name) {
                return Err(PlanError::Schema {
                    line: i + 1,
                    msg: format!("invalid table name `{}`", t.name),
                });
            }
            if by_name.insert(t.name.clone(), TableId(i)).is_some() {
                return Err(PlanError::Schema {
                    line: i + 1,
                    msg: format!("duplicate table `{}`", t.name),
                });
            }
        }
        Ok(WorkloadSchema { tables, by_name })
    }

    /// Convenience constructor used heavily in tests.
    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, u64)>) -> Result<Self, PlanError> {
        Self::new(
            pairs
                .into_iter()
                .map(|(name, row_count)| TableInfo {
                    name: name.into(),
                    row_count,
                })
                .collect(),
        )
    }

    /// Parses `tableName,rowCount` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, PlanError> {
        let mut tables = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, rows) = line.split_once(',').ok_or_else(|| PlanError::Schema {
                line: lineno + 1,
                msg: "expected `tableName,rowCount`".into(),
            })?;
            let row_count = rows.trim().parse::<u64>().map_err(|e| PlanError::Schema {
                line: lineno + 1,
                msg: format!("bad row count `{}`: {e}", rows.trim()),
            })?;
            tables.push(TableInfo {
                name: name.trim().to_string(),
                row_count,
            });
        }
        Self::new(tables)
    }

    pub fn to_text(&self) -> String {
        self.tables
            .iter()
            .map(|t| format!("{},{}\n", t.name, t.row_count))
            .collect()
    }

    /// Table count, `n`.
    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn tables(&self) -> &[TableInfo] {
        &self.tables
    }

    pub fn lookup(&self, name: &str) -> Option<TableId> {
        self.by_name.get(name).copied()
    }

    pub fn table(&self, id: TableId) -> Option<&TableInfo> {
        self.tables.get(id.0)
    }

    pub fn name(&self, id: TableId) -> &str {
        &self.tables[id.0].name
    }

    pub fn row_count(&self, id: TableId) -> u64 {
        self.tables[id.0].row_count
    }
}

pub(super) fn is_table_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '$')
}
