//! Dynamic subtable segmentation and per-task final-subtable selection.
//!
//! Tables that exceed the allowed token budget are split into consecutive-row
//! subtables: greedy nominal packing against `allowed`, then each subtable is
//! extended past its nominal end by whole rows until at least `offset` extra
//! tokens are included, so adjacent subtables overlap and no row is lost to a
//! mid-row cut. Headers are re-included in every subtable.

use serde::{Deserialize, Serialize};

use crate::budget::Tokenizer;
use crate::error::{Error, Result};
use crate::serialize::{row_fragment, serialize_rows, serialize_table_slice};
use crate::table::{Table, TaskInstance, TaskKey, TaskKind};

/// A consecutive-row slice of a table.
///
/// `[start_row, nominal_end)` is the budgeted segment; `[start_row, end_row)`
/// adds the overlap rows. Within one segmentation the nominal ranges
/// partition the table's rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subtable {
    pub table_id: String,
    pub start_row: usize,
    pub end_row: usize,
    pub nominal_end: usize,
}

impl Subtable {
    pub fn contains_row(&self, row: usize) -> bool {
        self.start_row <= row && row < self.end_row
    }

    pub fn rows(&self) -> std::ops::Range<usize> {
        self.start_row..self.end_row
    }

    pub fn is_empty(&self) -> bool {
        self.start_row == self.end_row
    }
}

/// Split `table` into subtables whose nominal serialization stays within
/// `allowed` tokens, each extended by at least `offset` overlap tokens in
/// whole rows (or until rows run out).
///
/// A table that fits entirely yields a single subtable spanning all rows. A
/// row that cannot fit next to the headers at all is an error naming the row.
pub fn segment_table(
    table: &Table,
    allowed: usize,
    offset: usize,
    tok: &dyn Tokenizer,
) -> Result<Vec<Subtable>> {
    let n = table.row_count();
    if n == 0 {
        // degenerate: headers only, a single empty-range subtable
        return Ok(vec![Subtable {
            table_id: table.id.clone(),
            start_row: 0,
            end_row: 0,
            nominal_end: 0,
        }]);
    }

    let headers_cost = tok.count(&serialize_rows(&table.headers, &[], 0));
    let fragment_costs: Vec<usize> = table
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| tok.count(&row_fragment(row, i + 1)))
        .collect();

    let mut subtables = Vec::new();
    let mut start = 0;
    while start < n {
        let mut cost = headers_cost;
        let mut end = start;
        while end < n && cost + fragment_costs[end] <= allowed {
            cost += fragment_costs[end];
            end += 1;
        }
        // re-check against the actual serialization in case the tokenizer is
        // not exactly additive over fragments
        while end > start && tok.count(&serialize_table_slice(table, start..end)) > allowed {
            end -= 1;
        }
        if end == start {
            return Err(Error::UnsegmentableRow {
                table_id: table.id.clone(),
                row: start,
                cost: headers_cost + fragment_costs[start],
                allowed,
            });
        }
        let nominal_end = end;

        let mut end_row = nominal_end;
        let mut extra = 0;
        while end_row < n && extra < offset {
            extra += fragment_costs[end_row];
            end_row += 1;
        }

        subtables.push(Subtable {
            table_id: table.id.clone(),
            start_row: start,
            end_row,
            nominal_end,
        });
        start = nominal_end;
    }
    Ok(subtables)
}

fn clamped_demo_row(table: &Table, demo_row: usize) -> Option<usize> {
    if table.row_count() == 0 {
        None
    } else {
        Some(demo_row.min(table.row_count() - 1))
    }
}

fn find_value_in_column(
    table: &Table,
    subtables: &[Subtable],
    column: usize,
    value: &str,
) -> Option<usize> {
    subtables.iter().position(|st| {
        st.rows()
            .any(|r| table.cell(r, column).is_some_and(|c| c == value))
    })
}

/// Pick the final subtable for an instance.
///
/// Column type annotation matches the demonstrated entity in the target
/// column; relation extraction matches the demonstrated entity pair; entity
/// linking matches the mention's cell; the QA and fact-verification tasks
/// take the first subtable; population tasks need no table content and get
/// the empty-range sentinel. A failed match falls back to the first subtable
/// with a warning, never an error.
pub fn select_subtable(
    instance: &TaskInstance,
    table: &Table,
    subtables: &[Subtable],
    demo_row: usize,
) -> (Subtable, Option<String>) {
    assert!(
        !subtables.is_empty(),
        "segment_table yields at least one subtable"
    );

    if instance.task.is_ranking() {
        return (
            Subtable {
                table_id: table.id.clone(),
                start_row: 0,
                end_row: 0,
                nominal_end: 0,
            },
            None,
        );
    }

    let matched: Option<usize> = match (&instance.task, &instance.key) {
        (TaskKind::ColumnTypeAnnotation, TaskKey::TargetColumn { column }) => {
            clamped_demo_row(table, demo_row)
                .and_then(|row| table.cell(row, *column))
                .map(str::to_owned)
                .and_then(|value| find_value_in_column(table, subtables, *column, &value))
        }
        (TaskKind::RelationExtraction, TaskKey::ColumnPair { subject, object }) => {
            clamped_demo_row(table, demo_row).and_then(|row| {
                let subj = table.cell(row, *subject)?.to_owned();
                let obj = table.cell(row, *object)?.to_owned();
                subtables.iter().position(|st| {
                    st.rows().any(|r| {
                        table.cell(r, *subject) == Some(subj.as_str())
                            && table.cell(r, *object) == Some(obj.as_str())
                    })
                })
            })
        }
        (TaskKind::EntityLinking, TaskKey::Mention { row, .. }) => {
            subtables.iter().position(|st| st.contains_row(*row))
        }
        _ => Some(0),
    };

    match matched {
        Some(i) => (subtables[i].clone(), None),
        None => (
            subtables[0].clone(),
            Some(format!(
                "instance key not found in any subtable of table {:?}; falling back to the first",
                table.id
            )),
        ),
    }
}
