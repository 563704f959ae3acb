//! Rendering of metadata, table content, and per-task instructions into the
//! chatbot-style prompt schema, plus final prompt assembly.
//!
//! Every prompt is four sections (`### Instruction:`, `### Input:`,
//! `### Question:`, `### Response:`) behind a fixed prologue. The input
//! carries a `[TLE]` metadata sentence and a `[TAB]`/`[SEP]` serialized
//! table; the question carries the task-specific material.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{Table, TableMetadata, TaskInstance, TaskKey, TaskKind};

/// Prologue used by Alpaca-style models.
pub const ALPACA_PROLOGUE: &str = "Below is an instruction that describes a task, paired with an input that provides further context. Write a response that appropriately completes the request.";

/// Prologue used by Vicuna-style models.
pub const VICUNA_PROLOGUE: &str = "A chat between a curious user and an artificial intelligence assistant. The assistant gives helpful, detailed, and polite answers to the user's questions.";

/// Block order of the assembled prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// Prologue, Instruction, Input, Question, Response.
    #[default]
    InstructionFirst,
    /// Prologue, Input, Instruction, Question, Response.
    InputFirst,
}

/// One `<instruction, table input, question> -> response` record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub instruction: String,
    pub input: String,
    pub question: String,
    /// Gold answer; empty at inference time.
    pub response: String,
    /// Full prompt text; not part of the JSONL schema.
    #[serde(skip)]
    pub assembled: String,
}

/// Serialize table metadata as a `[TLE]` sentence group.
///
/// Sentences for empty fields are omitted; all-empty metadata serializes to
/// the empty string. A caption with no page or section uses the
/// "The table caption is about ..." form.
pub fn serialize_metadata(meta: &TableMetadata) -> String {
    if meta.is_empty() {
        return String::new();
    }
    let mut parts = Vec::new();
    if !meta.page_title.is_empty() {
        parts.push(format!("The Wikipedia page is about {}.", meta.page_title));
    }
    if !meta.section_title.is_empty() {
        parts.push(format!(
            "The Wikipedia section is about {}.",
            meta.section_title
        ));
    }
    if !meta.caption.is_empty() {
        if parts.is_empty() {
            parts.push(format!("The table caption is about {}.", meta.caption));
        } else {
            parts.push(format!("The table caption is {}.", meta.caption));
        }
    }
    format!("[TLE] {}", parts.join(" "))
}

fn clean_cell(cell: &str) -> String {
    // pipes are the column separator; swap them out inside cells
    cell.replace('|', "/")
}

/// Serialized fragment of one row: `[SEP] row N: | ... |` with a 1-based
/// absolute row number.
pub fn row_fragment(row: &[String], number: usize) -> String {
    let mut out = format!("[SEP] row {number}:");
    for cell in row {
        write!(out, " | {}", clean_cell(cell)).unwrap();
    }
    out.push_str(" |");
    out
}

/// Serialize headers and rows as `[TAB] col: | ... | [SEP] row N: | ... |`.
///
/// Row numbers are absolute: `start_index` is the 0-based position of the
/// first given row in the original table, so subtables keep true numbering.
pub fn serialize_rows(headers: &[String], rows: &[Vec<String>], start_index: usize) -> String {
    let mut out = String::from("[TAB] col:");
    for h in headers {
        write!(out, " | {}", clean_cell(h)).unwrap();
    }
    out.push_str(" |");
    for (offset, row) in rows.iter().enumerate() {
        out.push(' ');
        out.push_str(&row_fragment(row, start_index + offset + 1));
    }
    out
}

/// Serialize the rows `range` of `table` with absolute numbering.
pub fn serialize_table_slice(table: &Table, range: Range<usize>) -> String {
    serialize_rows(&table.headers, &table.rows[range.clone()], range.start)
}

/// Instruction plus question template for one task. Question templates use
/// `{placeholder}` slots filled at render time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplatePair {
    pub instruction: String,
    pub question: String,
}

/// Registry of task templates: the embedded defaults, optionally overridden
/// from a directory of `<task-id>.instruction.txt` / `<task-id>.question.txt`
/// files.
#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, TemplatePair>,
}

const BUILTIN_TEMPLATES: &[(&str, &str, &str)] = &[
    (
        "column-type-annotation",
        "This is a column type annotation task. The goal for this task is to choose the correct types for one selected column of the table from the given candidates. The Wikipedia page, section and table caption (if any) provide important information for choosing the correct column types.",
        "The column '{column_name}' contains the following entities: {entities}, etc. The column type candidates are: {candidates}. What are the correct column types for this column (column name: {column_name}; entities: {entities}, etc)?",
    ),
    (
        "relation-extraction",
        "This is a relation extraction task. The goal for this task is to choose the correct relations between two selected columns of the table from the given candidates. The Wikipedia page, section and table caption (if any) provide important information for choosing the correct relation types.",
        "The two selected column names are: <({subject_column}),({object_column})>. The entity pairs for these two columns are: {entity_pairs}, etc. The relation type candidates are: {candidates}. What are the correct relation types for the two selected columns (column names: <({subject_column}),({object_column})>. entity pairs: {entity_pairs}, etc)?",
    ),
    (
        "entity-linking",
        "This is an entity linking task. The goal for this task is to link the selected entity mention in the table cells to the entity in the knowledge base. You will be given a list of referent entities, with each one composed of an entity name, its description and its type. Please choose the correct one from the referent entity candidates. Note that the Wikipedia page, Wikipedia section and table caption (if any) provide important information for choosing the correct referent entity.",
        "The selected entity mention in the table cell is: {mention}. The column name for '{mention}' is {column_name}. The referent entity candidates are: {candidates}. What is the correct referent entity for the entity mention '{mention}' ?",
    ),
    (
        "row-population",
        "This is a table row population task. The goal of this task is to populate the possible entities of the selected column for a table, given the Wikipedia page title, Wikipedia section title, table caption (if any) and table headers. You will be given a list of entity candidates. Please rank them so that the most likely entities come first.",
        "The entity candidates are: {candidates}.",
    ),
    (
        "schema-augmentation",
        "This is a table schema augmentation task. The goal of this task is to populate the possible headers for a table, given the table caption and the seed table header. You will be given a list of table header candidates. Please rank them so that the most likely headers come first.",
        "The header candidates are: {candidates}. Please rank the headers in the header candidates.",
    ),
    (
        "hierarchical-qa",
        "This is a hierarchical table question answering task. The goal for this task is to answer the given question based on the given table. The table might be hierarchical.",
        "{question}",
    ),
    (
        "highlighted-cells-qa",
        "This is a free-form table question answering task. The goal for this task is to answer the given question based on the given table and the highlighted cells.",
        "The highlighted cells of the table are: [HIGHLIGHTED_BEGIN] {highlighted_cells} [HIGHLIGHTED_END] {question}",
    ),
    (
        "fact-verification",
        "This is a table fact verification task. The goal of this task is to distinguish whether the given statement is entailed or refuted by the given table.",
        "The statement is: <{statement}>. Is it entailed or refuted by the table above?",
    ),
    // Inference-only extras for datasets outside the eight training tasks.
    (
        "hybrid-qa",
        "This is a hybrid question answering task. The goal of this task is to answer the question given tables and passages.",
        "{question}",
    ),
    (
        "table-qa",
        "This is a table QA task. The goal of this task is to answer the question given the table.",
        "{question}",
    ),
    (
        "dialogue-generation",
        "This is a dialogue response generation task grounded on tables. The goal of this task is to generate response based on the given dialogue history and the given table. The dialogues are grounded through underlying tables and span three distinct tasks in the in-car personal assistant space: calendar scheduling, weather information retrieval, and point-of-interest navigation.",
        "The dialogue history is: <{history}>. Please generate the response based on the given table and the given dialogue history.",
    ),
    (
        "cells-description",
        "This is a highlighted cells description task. The goal of this task is to generate the language description given table cells.",
        "Please generate one natural language description to describe the given highlighted table cells.",
    ),
    (
        "open-fact-verification",
        "This is a table fact verification task. The goal of this task is to distinguish whether the given statement is entailed or refuted by the given table.",
        "The statement is: <{statement}>. Is it entailed or refuted by the table above? If you think the current information can not provide enough evidence for determining it, please choose 'not enough info', otherwise please choose the answer from 'supports' or 'refutes'.",
    ),
];

impl TemplateRegistry {
    /// Registry holding the embedded templates.
    pub fn builtin() -> Self {
        let templates = BUILTIN_TEMPLATES
            .iter()
            .map(|(id, instruction, question)| {
                (
                    (*id).to_string(),
                    TemplatePair {
                        instruction: (*instruction).to_string(),
                        question: (*question).to_string(),
                    },
                )
            })
            .collect();
        let registry = TemplateRegistry { templates };
        registry
            .check_balanced()
            .expect("builtin templates are balanced");
        registry
    }

    /// Replace templates from `<task-id>.instruction.txt` and
    /// `<task-id>.question.txt` files found in `dir`.
    pub fn apply_overrides(&mut self, dir: &Path) -> Result<()> {
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            let (id, is_instruction) = if let Some(id) = name.strip_suffix(".instruction.txt") {
                (id.to_string(), true)
            } else if let Some(id) = name.strip_suffix(".question.txt") {
                (id.to_string(), false)
            } else {
                continue;
            };
            let text = std::fs::read_to_string(&path)?.trim_end().to_string();
            let pair = self.templates.entry(id).or_insert_with(|| TemplatePair {
                instruction: String::new(),
                question: String::new(),
            });
            if is_instruction {
                pair.instruction = text;
            } else {
                pair.question = text;
            }
        }
        self.check_balanced()
    }

    pub fn get(&self, task_id: &str) -> Result<&TemplatePair> {
        self.templates
            .get(task_id)
            .ok_or_else(|| Error::MissingTemplate(task_id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    fn check_balanced(&self) -> Result<()> {
        for (id, pair) in &self.templates {
            for text in [&pair.instruction, &pair.question] {
                if text.matches('{').count() != text.matches('}').count() {
                    return Err(Error::InvalidConfig(format!(
                        "template {id:?} has unbalanced placeholders"
                    )));
                }
            }
        }
        Ok(())
    }
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Fill `{name}` slots; any slot left unfilled is an error.
fn fill_template(task: TaskKind, template: &str, values: &[(&str, &str)]) -> Result<String> {
    let mut out = template.to_string();
    for (name, value) in values {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    if let Some(start) = out.find('{') {
        let end = out[start..]
            .find('}')
            .map(|e| start + e + 1)
            .unwrap_or(out.len());
        return Err(Error::UnfilledPlaceholder {
            task: task.to_string(),
            placeholder: out[start..end].to_string(),
        });
    }
    Ok(out)
}

fn require_candidates(task: TaskKind, candidate_subset: Option<&[String]>) -> Result<&[String]> {
    match candidate_subset {
        Some(c) if !c.is_empty() => Ok(c),
        _ => Err(Error::MissingCandidates {
            task: task.to_string(),
        }),
    }
}

fn angle_list(items: &[String]) -> String {
    items
        .iter()
        .map(|c| format!("<{c}>"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Candidate label rendered the way it appears in questions and responses:
/// entity-linking wraps referent entities in angle brackets, other tasks use
/// the bare label.
pub fn format_label(task: TaskKind, label: &str) -> String {
    if task == TaskKind::EntityLinking {
        format!("<{label}>")
    } else {
        label.to_string()
    }
}

/// Join answer parts with commas and close with a period.
pub fn response_sentence(parts: &[String]) -> String {
    let joined = parts.join(", ");
    if joined.ends_with('.') {
        joined
    } else {
        format!("{joined}.")
    }
}

fn demo_values(table: &Table, column: usize, demo_row: usize) -> Result<Vec<String>> {
    if table.row_count() == 0 {
        return Err(Error::NoRowsToSample(table.id.clone()));
    }
    let row = demo_row.min(table.row_count() - 1);
    let mut values = vec![table.cell(row, column).unwrap_or("").to_string()];
    if let Some(next) = table.cell(row + 1, column) {
        values.push(next.to_string());
    }
    Ok(values)
}

/// Render the instruction and question texts for one instance.
///
/// `demo_row` is the row whose values the column-level tasks demonstrate in
/// the question (0 in the deterministic mode). Tasks that consult a
/// candidate pool require a non-empty `candidate_subset`.
pub fn render_instruction(
    instance: &TaskInstance,
    table: &Table,
    demo_row: usize,
    candidate_subset: Option<&[String]>,
    registry: &TemplateRegistry,
) -> Result<(String, String)> {
    let task = instance.task;
    let pair = registry.get(task.id())?;

    let question = match (&task, &instance.key) {
        (TaskKind::ColumnTypeAnnotation, TaskKey::TargetColumn { column }) => {
            let candidates = require_candidates(task, candidate_subset)?;
            let entities = angle_list(&demo_values(table, *column, demo_row)?);
            let column_name = table.headers.get(*column).cloned().unwrap_or_default();
            fill_template(
                task,
                &pair.question,
                &[
                    ("column_name", column_name.as_str()),
                    ("entities", entities.as_str()),
                    ("candidates", candidates.join(", ").as_str()),
                ],
            )?
        }
        (TaskKind::RelationExtraction, TaskKey::ColumnPair { subject, object }) => {
            let candidates = require_candidates(task, candidate_subset)?;
            let subj_vals = demo_values(table, *subject, demo_row)?;
            let obj_vals = demo_values(table, *object, demo_row)?;
            let pairs = subj_vals
                .iter()
                .zip(obj_vals.iter())
                .map(|(s, o)| format!("<({s}),({o})>"))
                .collect::<Vec<_>>()
                .join(", ");
            fill_template(
                task,
                &pair.question,
                &[
                    (
                        "subject_column",
                        table
                            .headers
                            .get(*subject)
                            .map(String::as_str)
                            .unwrap_or(""),
                    ),
                    (
                        "object_column",
                        table.headers.get(*object).map(String::as_str).unwrap_or(""),
                    ),
                    ("entity_pairs", pairs.as_str()),
                    ("candidates", candidates.join(", ").as_str()),
                ],
            )?
        }
        (
            TaskKind::EntityLinking,
            TaskKey::Mention {
                mention, column, ..
            },
        ) => {
            let candidates = require_candidates(task, candidate_subset)?;
            fill_template(
                task,
                &pair.question,
                &[
                    ("mention", mention.as_str()),
                    (
                        "column_name",
                        table.headers.get(*column).map(String::as_str).unwrap_or(""),
                    ),
                    ("candidates", angle_list(candidates).as_str()),
                ],
            )?
        }
        (TaskKind::RowPopulation, TaskKey::SeedEntity { .. })
        | (TaskKind::SchemaAugmentation, TaskKey::SeedHeader { .. }) => {
            let candidates = require_candidates(task, candidate_subset)?;
            fill_template(
                task,
                &pair.question,
                &[("candidates", angle_list(candidates).as_str())],
            )?
        }
        (TaskKind::HierarchicalQa, TaskKey::Question { question }) => {
            fill_template(task, &pair.question, &[("question", question.as_str())])?
        }
        (TaskKind::HighlightedCellsQa, TaskKey::Question { question }) => {
            let cells = instance
                .highlighted_cells
                .as_deref()
                .unwrap_or(&[])
                .iter()
                .filter_map(|&(r, c)| table.cell(r, c))
                .map(|text| format!("[{text}]"))
                .collect::<Vec<_>>()
                .join(", ");
            fill_template(
                task,
                &pair.question,
                &[
                    ("highlighted_cells", cells.as_str()),
                    ("question", question.as_str()),
                ],
            )?
        }
        (TaskKind::FactVerification, TaskKey::Statement { statement }) => {
            fill_template(task, &pair.question, &[("statement", statement.as_str())])?
        }
        (task, key) => {
            return Err(Error::InvalidInstance {
                instance: instance.effective_id(0),
                message: format!("key {key:?} does not fit task {task}"),
            });
        }
    };

    Ok((pair.instruction.clone(), question))
}

/// Build the `### Input:` block content for one instance.
///
/// Classification, QA and fact-verification tasks carry metadata plus the
/// serialized subtable rows. Population tasks carry no table content:
/// row population shows headers and the seed entity, schema augmentation
/// only the seed header.
pub fn build_input(instance: &TaskInstance, table: &Table, rows: Range<usize>) -> String {
    let meta = serialize_metadata(&table.metadata);
    let body = match (&instance.task, &instance.key) {
        (TaskKind::RowPopulation, TaskKey::SeedEntity { entity }) => {
            let headers = table
                .headers
                .iter()
                .map(|h| clean_cell(h))
                .collect::<Vec<_>>()
                .join(" | ");
            let column = table.headers.first().map(String::as_str).unwrap_or("");
            format!(
                "The table headers are: | {headers} |. You need to populate the column: {column}. [SEED] The seed entity is <{entity}>."
            )
        }
        (TaskKind::SchemaAugmentation, TaskKey::SeedHeader { header }) => {
            format!("[SEED] The seed table header is <{header}>.")
        }
        _ => serialize_table_slice(table, rows),
    };
    match (meta.is_empty(), body.is_empty()) {
        (true, _) => body,
        (false, true) => meta,
        (false, false) => format!("{meta} {body}"),
    }
}

/// Assemble the full prompt from its blocks.
///
/// `InstructionFirst` orders prologue, Instruction, Input, Question,
/// Response; `InputFirst` swaps the Instruction and Input blocks. Blocks are
/// separated by blank lines and the prompt ends with `### Response:`.
pub fn assemble_prompt(
    prologue: &str,
    instruction: &str,
    input: &str,
    question: &str,
    layout: Layout,
) -> String {
    fn section(marker: &str, content: &str) -> String {
        if content.is_empty() {
            marker.to_string()
        } else {
            format!("{marker}\n{content}")
        }
    }
    let instruction_block = section("### Instruction:", instruction);
    let input_block = section("### Input:", input);
    let question_block = section("### Question:", question);

    let mut blocks: Vec<String> = Vec::with_capacity(5);
    if !prologue.is_empty() {
        blocks.push(prologue.to_string());
    }
    match layout {
        Layout::InstructionFirst => {
            blocks.push(instruction_block);
            blocks.push(input_block);
        }
        Layout::InputFirst => {
            blocks.push(input_block);
            blocks.push(instruction_block);
        }
    }
    blocks.push(question_block);
    blocks.push("### Response:".to_string());
    blocks.join("\n\n")
}
