//! Canonical in-memory table representation, task instances, and JSONL ingestion.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Page/section/caption context attached to a table. All fields are
/// single-line text; empty means absent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableMetadata {
    pub page_title: String,
    pub section_title: String,
    pub caption: String,
}

impl TableMetadata {
    pub fn is_empty(&self) -> bool {
        self.page_title.is_empty() && self.section_title.is_empty() && self.caption.is_empty()
    }
}

/// A rectangular table: every row has exactly `headers.len()` cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub id: String,
    pub metadata: TableMetadata,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(
        id: impl Into<String>,
        metadata: TableMetadata,
        headers: Vec<String>,
        rows: Vec<Vec<String>>,
    ) -> Result<Self> {
        let headers_len = headers.len();
        if headers_len == 0 {
            return Err(Error::InvalidInstance {
                instance: "table".into(),
                message: "headers must be non-empty".into(),
            });
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != headers_len {
                return Err(Error::RowArity {
                    row: i + 1,
                    got: row.len(),
                    expected: headers_len,
                });
            }
        }
        Ok(Table {
            id: id.into(),
            metadata,
            headers,
            rows,
        })
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn column_count(&self) -> usize {
        self.headers.len()
    }

    pub fn cell(&self, row: usize, col: usize) -> Option<&str> {
        self.rows
            .get(row)
            .and_then(|r| r.get(col))
            .map(String::as_str)
    }
}

/// The eight task types the toolkit builds prompts for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    ColumnTypeAnnotation,
    RelationExtraction,
    EntityLinking,
    RowPopulation,
    SchemaAugmentation,
    HierarchicalQa,
    HighlightedCellsQa,
    FactVerification,
}

impl TaskKind {
    pub const ALL: [TaskKind; 8] = [
        TaskKind::ColumnTypeAnnotation,
        TaskKind::RelationExtraction,
        TaskKind::EntityLinking,
        TaskKind::RowPopulation,
        TaskKind::SchemaAugmentation,
        TaskKind::HierarchicalQa,
        TaskKind::HighlightedCellsQa,
        TaskKind::FactVerification,
    ];

    pub fn id(self) -> &'static str {
        match self {
            TaskKind::ColumnTypeAnnotation => "column-type-annotation",
            TaskKind::RelationExtraction => "relation-extraction",
            TaskKind::EntityLinking => "entity-linking",
            TaskKind::RowPopulation => "row-population",
            TaskKind::SchemaAugmentation => "schema-augmentation",
            TaskKind::HierarchicalQa => "hierarchical-qa",
            TaskKind::HighlightedCellsQa => "highlighted-cells-qa",
            TaskKind::FactVerification => "fact-verification",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        TaskKind::ALL
            .iter()
            .copied()
            .find(|t| t.id() == id)
            .ok_or_else(|| Error::UnknownTask(id.to_string()))
    }

    /// Multi-choice tasks that consult a candidate pool via divide-and-merge.
    pub fn is_classification(self) -> bool {
        matches!(
            self,
            TaskKind::ColumnTypeAnnotation | TaskKind::RelationExtraction | TaskKind::EntityLinking
        )
    }

    /// Ranking tasks answered with an ordered candidate list.
    pub fn is_ranking(self) -> bool {
        matches!(self, TaskKind::RowPopulation | TaskKind::SchemaAugmentation)
    }

    /// Tasks where exactly one answer is correct.
    pub fn is_single_label(self) -> bool {
        matches!(
            self,
            TaskKind::EntityLinking
                | TaskKind::HierarchicalQa
                | TaskKind::HighlightedCellsQa
                | TaskKind::FactVerification
        )
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Task-specific key of one work item. The variants carry distinct field
/// names so the JSONL form stays untagged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskKey {
    /// Entity mention at a known cell (entity linking).
    Mention {
        mention: String,
        row: usize,
        column: usize,
    },
    /// Subject/object column pair (relation extraction).
    ColumnPair { subject: usize, object: usize },
    /// Target column index (column type annotation).
    TargetColumn { column: usize },
    /// Seed subject-column entity (row population).
    SeedEntity { entity: String },
    /// Seed header (schema augmentation).
    SeedHeader { header: String },
    /// Natural-language question (both QA tasks).
    Question { question: String },
    /// Statement to verify (fact verification).
    Statement { statement: String },
}

/// One unit of work: a task applied to a table, with gold labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    /// Stable identifier used in prediction files; assigned from the input
    /// ordinal when the JSONL record carries no explicit id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub task: TaskKind,
    pub table_id: String,
    pub key: TaskKey,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub highlighted_cells: Option<Vec<(usize, usize)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<String>>,
    pub gold: Vec<String>,
}

impl TaskInstance {
    /// Effective identifier: explicit id, else the input ordinal.
    pub fn effective_id(&self, ordinal: usize) -> String {
        self.id.clone().unwrap_or_else(|| ordinal.to_string())
    }
}

/// JSONL record form of [`Table`].
#[derive(Debug, Serialize, Deserialize)]
struct TableRecord {
    id: String,
    #[serde(default)]
    page_title: String,
    #[serde(default)]
    section_title: String,
    #[serde(default)]
    caption: String,
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

/// Options controlling JSONL ingestion.
#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    /// Repair ragged rows: short rows are padded with empty cells, long rows
    /// truncated, both recorded as warnings. When off, ragged rows error.
    pub pad_ragged: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { pad_ragged: true }
    }
}

/// Tables read from a stream plus the repair warnings collected on the way.
#[derive(Debug)]
pub struct LoadedTables {
    pub tables: Vec<Table>,
    pub warnings: Vec<String>,
}

/// Read tables from line-delimited JSON, in input order.
///
/// Errors name the offending line; duplicate ids are rejected. Metadata
/// fields must be single-line.
pub fn load_tables(reader: impl BufRead, options: LoadOptions) -> Result<LoadedTables> {
    let mut tables = Vec::new();
    let mut warnings = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TableRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
        if !seen_ids.insert(record.id.clone()) {
            return Err(Error::DuplicateTableId(record.id));
        }
        if record.headers.is_empty() {
            return Err(Error::MalformedLine {
                line: line_no,
                message: format!("table {:?} has no headers", record.id),
            });
        }
        for (field, value) in [
            ("page_title", &record.page_title),
            ("section_title", &record.section_title),
            ("caption", &record.caption),
        ] {
            if value.contains('\n') {
                return Err(Error::MalformedLine {
                    line: line_no,
                    message: format!("table {:?}: {field} contains a newline", record.id),
                });
            }
        }

        let expected = record.headers.len();
        let mut rows = record.rows;
        for (r, row) in rows.iter_mut().enumerate() {
            if row.len() == expected {
                continue;
            }
            if !options.pad_ragged {
                return Err(Error::MalformedLine {
                    line: line_no,
                    message: Error::RowArity {
                        row: r + 1,
                        got: row.len(),
                        expected,
                    }
                    .to_string(),
                });
            }
            if row.len() < expected {
                warnings.push(format!(
                    "table {:?}: row {} padded from {} to {} cells",
                    record.id,
                    r + 1,
                    row.len(),
                    expected
                ));
                row.resize(expected, String::new());
            } else {
                warnings.push(format!(
                    "table {:?}: row {} truncated from {} to {} cells",
                    record.id,
                    r + 1,
                    row.len(),
                    expected
                ));
                row.truncate(expected);
            }
        }

        tables.push(Table {
            id: record.id,
            metadata: TableMetadata {
                page_title: record.page_title,
                section_title: record.section_title,
                caption: record.caption,
            },
            headers: record.headers,
            rows,
        });
    }

    Ok(LoadedTables { tables, warnings })
}

/// Write tables as line-delimited JSON, the inverse of [`load_tables`].
pub fn write_tables(tables: &[Table], mut writer: impl Write) -> Result<()> {
    for t in tables {
        let record = TableRecord {
            id: t.id.clone(),
            page_title: t.metadata.page_title.clone(),
            section_title: t.metadata.section_title.clone(),
            caption: t.metadata.caption.clone(),
            headers: t.headers.clone(),
            rows: t.rows.clone(),
        };
        serde_json::to_writer(&mut writer, &record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Read task instances from line-delimited JSON, assigning ordinal ids where
/// the records carry none.
pub fn load_instances(reader: impl BufRead) -> Result<Vec<TaskInstance>> {
    let mut instances = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut instance: TaskInstance =
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: idx + 1,
                message: e.to_string(),
            })?;
        if instance.id.is_none() {
            instance.id = Some(instances.len().to_string());
        }
        instances.push(instance);
    }
    Ok(instances)
}

/// Check a task instance against its table. Violations are data, not
/// failures: the result lists every broken invariant, empty meaning ok.
pub fn validate_instance(instance: &TaskInstance, table: &Table) -> Vec<String> {
    let mut violations = Vec::new();
    let cols = table.column_count();
    let rows = table.row_count();

    let key_matches = matches!(
        (&instance.task, &instance.key),
        (TaskKind::ColumnTypeAnnotation, TaskKey::TargetColumn { .. })
            | (TaskKind::RelationExtraction, TaskKey::ColumnPair { .. })
            | (TaskKind::EntityLinking, TaskKey::Mention { .. })
            | (TaskKind::RowPopulation, TaskKey::SeedEntity { .. })
            | (TaskKind::SchemaAugmentation, TaskKey::SeedHeader { .. })
            | (TaskKind::HierarchicalQa, TaskKey::Question { .. })
            | (TaskKind::HighlightedCellsQa, TaskKey::Question { .. })
            | (TaskKind::FactVerification, TaskKey::Statement { .. })
    );
    if !key_matches {
        violations.push(format!("key variant does not match task {}", instance.task));
    }

    match &instance.key {
        TaskKey::TargetColumn { column } if *column >= cols => {
            violations.push(format!(
                "target column {column} out of bounds ({cols} columns)"
            ));
        }
        TaskKey::ColumnPair { subject, object } => {
            if *subject >= cols || *object >= cols {
                violations.push(format!(
                    "column pair ({subject},{object}) out of bounds ({cols} columns)"
                ));
            }
        }
        TaskKey::Mention { row, column, .. } if (*row >= rows || *column >= cols) => {
            violations.push(format!(
                "mention cell ({row},{column}) out of bounds ({rows}x{cols})"
            ));
        }
        _ => {}
    }

    if instance.task == TaskKind::EntityLinking && instance.gold.len() != 1 {
        violations.push(format!(
            "single-label task has {} golds",
            instance.gold.len()
        ));
    }
    if instance.task == TaskKind::FactVerification {
        for g in &instance.gold {
            if g != "entailed" && g != "refuted" {
                violations.push(format!(
                    "fact-verification gold {g:?} is neither \"entailed\" nor \"refuted\""
                ));
            }
        }
    }

    if let Some(cells) = &instance.highlighted_cells {
        for &(r, c) in cells {
            if r >= rows || c >= cols {
                violations.push(format!(
                    "coordinate ({r},{c}) out of bounds ({rows}x{cols})"
                ));
            }
        }
    }

    violations
}
