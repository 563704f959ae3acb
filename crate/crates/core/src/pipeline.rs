//! End-to-end pipelines behind the CLI subcommands: dataset building,
//! segmentation dumps, classification and ranking inference, and evaluation.
//!
//! Per-instance work items are independent and run on a worker pool; output
//! order always follows input order, and per-instance random streams are
//! derived from the run seed plus the instance ordinal, so runs with the
//! same seed are byte-identical.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{MockOracle, OracleBackend};
use crate::budget::{max_generation_tokens, Tokenizer, WordTokenizer};
use crate::classify::{build_cls_training, classify_instance, ClassifyConfig, LabelSpace};
use crate::config::{BackendChoice, MockMode, PipelineConfig};
use crate::error::{Error, Result};
use crate::http::HttpBackend;
use crate::metrics::{exact_accuracy, mean_average_precision, micro_prf, EvalReport, TaskMetrics};
use crate::rank::{tree_rank, RankConfig};
use crate::rng::derive_seed;
use crate::segment::{segment_table, select_subtable, Subtable};
use crate::serialize::{
    assemble_prompt, build_input, render_instruction, response_sentence, PromptRecord,
};
use crate::table::{
    load_instances, load_tables, validate_instance, LoadOptions, Table, TaskInstance, TaskKey,
    TaskKind,
};

/// Tables and instances loaded for one run.
pub struct Corpus {
    pub tables: BTreeMap<String, Table>,
    pub instances: Vec<TaskInstance>,
    pub warnings: Vec<String>,
}

pub fn load_corpus(tables_path: &Path, instances_path: &Path) -> Result<Corpus> {
    let loaded = load_tables(
        BufReader::new(File::open(tables_path)?),
        LoadOptions::default(),
    )?;
    let instances = load_instances(BufReader::new(File::open(instances_path)?))?;
    let tables = loaded
        .tables
        .into_iter()
        .map(|t| (t.id.clone(), t))
        .collect();
    Ok(Corpus {
        tables,
        instances,
        warnings: loaded.warnings,
    })
}

fn required<'a>(path: &'a Option<std::path::PathBuf>, what: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::InvalidConfig(format!("{what} path is required")))
}

/// Label spaces loaded from the configured per-task files.
pub fn load_label_spaces(cfg: &PipelineConfig) -> Result<BTreeMap<TaskKind, LabelSpace>> {
    let mut spaces = BTreeMap::new();
    for (task, path) in &cfg.labels {
        let space = LabelSpace::from_reader(BufReader::new(File::open(path)?))?;
        spaces.insert(*task, space);
    }
    Ok(spaces)
}

fn space_for_instance(
    instance: &TaskInstance,
    spaces: &BTreeMap<TaskKind, LabelSpace>,
) -> Result<LabelSpace> {
    if let Some(candidates) = &instance.candidates {
        return LabelSpace::new(candidates.clone());
    }
    spaces.get(&instance.task).cloned().ok_or_else(|| {
        Error::InvalidConfig(format!(
            "no candidates on the instance and no label file configured for task {}",
            instance.task
        ))
    })
}

/// Shared prompt-building machinery: segmentation, subtable selection,
/// rendering, assembly, and the final token-budget fit.
pub struct PromptAssembler<'a> {
    cfg: &'a PipelineConfig,
    tok: WordTokenizer,
}

/// One assembled record plus the warnings its construction produced.
pub struct AssembledPrompt {
    pub record: PromptRecord,
    pub tokens: usize,
    pub warnings: Vec<String>,
}

impl<'a> PromptAssembler<'a> {
    pub fn new(cfg: &'a PipelineConfig) -> Self {
        PromptAssembler {
            cfg,
            tok: WordTokenizer,
        }
    }

    /// Demonstration row for column-level tasks: row 0 in deterministic
    /// mode, a seeded uniform pick otherwise.
    pub fn demo_row(&self, instance_ordinal: usize, table: &Table) -> usize {
        match self.cfg.row_sampling {
            crate::config::RowSampling::Deterministic => 0,
            crate::config::RowSampling::Random => {
                if table.row_count() == 0 {
                    0
                } else {
                    let mut rng = crate::rng::SplitMix64::new(derive_seed(
                        self.cfg.seed,
                        instance_ordinal as u64,
                    ));
                    rng.next_below(table.row_count() as u64) as usize
                }
            }
        }
    }

    /// Segment the instance's table and pick its final subtable.
    pub fn pick_subtable(
        &self,
        instance: &TaskInstance,
        table: &Table,
        demo_row: usize,
    ) -> Result<(Subtable, Option<String>)> {
        let allowed = self.cfg.plan.allowed_subtable_len(instance.task)?;
        let subtables = segment_table(table, allowed, self.cfg.plan.offset, &self.tok)?;
        Ok(select_subtable(instance, table, &subtables, demo_row))
    }

    /// Render and assemble one prompt, trimming trailing overlap rows if the
    /// assembled text runs past the model limit. The mention row of an
    /// entity-linking instance is never trimmed away.
    pub fn assemble(
        &self,
        instance: &TaskInstance,
        table: &Table,
        demo_row: usize,
        candidate_subset: Option<&[String]>,
    ) -> Result<AssembledPrompt> {
        let (subtable, select_warning) = self.pick_subtable(instance, table, demo_row)?;
        let mut warnings: Vec<String> = select_warning.into_iter().collect();

        let (instruction, question) = render_instruction(
            instance,
            table,
            demo_row,
            candidate_subset,
            &self.cfg.registry,
        )?;

        let mut floor = (subtable.start_row + 1).min(subtable.end_row);
        if let TaskKey::Mention { row, .. } = &instance.key {
            if subtable.contains_row(*row) {
                floor = floor.max(row + 1);
            }
        }

        let mut end = subtable.end_row;
        loop {
            let input = build_input(instance, table, subtable.start_row..end);
            let assembled = assemble_prompt(
                self.cfg.prologue.text(),
                &instruction,
                &input,
                &question,
                self.cfg.layout,
            );
            let tokens = self.tok.count(&assembled);
            if tokens <= self.cfg.plan.model_limit {
                if end < subtable.end_row {
                    warnings.push(format!(
                        "instance {}: trimmed subtable rows {end}..{} to fit the model limit",
                        instance.effective_id(0),
                        subtable.end_row
                    ));
                }
                return Ok(AssembledPrompt {
                    record: PromptRecord {
                        instruction,
                        input,
                        question,
                        response: String::new(),
                        assembled,
                    },
                    tokens,
                    warnings,
                });
            }
            if end <= floor {
                return Err(Error::InvalidInstance {
                    instance: instance.effective_id(0),
                    message: format!(
                        "prompt is {tokens} tokens even at the minimum subtable; model limit is {}",
                        self.cfg.plan.model_limit
                    ),
                });
            }
            end -= 1;
        }
    }

    /// Context prompt for ranking oracles: the full prompt with the
    /// question's `{candidates}` slot left open for per-node filling.
    pub fn rank_context(&self, instance: &TaskInstance, table: &Table) -> Result<String> {
        let pair = self.cfg.registry.get(instance.task.id())?;
        let input = build_input(instance, table, 0..0);
        Ok(assemble_prompt(
            self.cfg.prologue.text(),
            &pair.instruction,
            &input,
            &pair.question,
            self.cfg.layout,
        ))
    }
}

/// Gold answer rendered the way the response section expects it.
pub fn response_text(instance: &TaskInstance) -> String {
    if instance.gold.is_empty() {
        return String::new();
    }
    match instance.task {
        TaskKind::RowPopulation | TaskKind::SchemaAugmentation => {
            let wrapped: Vec<String> = instance.gold.iter().map(|g| format!("<{g}>")).collect();
            response_sentence(&wrapped)
        }
        TaskKind::EntityLinking => response_sentence(&[format!("<{}>", instance.gold[0])]),
        TaskKind::ColumnTypeAnnotation | TaskKind::RelationExtraction => {
            response_sentence(&instance.gold)
        }
        _ => response_sentence(&instance.gold[..1]),
    }
}

fn aggregate_failures(failures: Vec<(usize, Error)>) -> Error {
    let backend = failures.iter().any(|(_, e)| e.is_backend());
    let count = failures.len();
    let details = failures
        .into_iter()
        .take(10)
        .map(|(i, e)| format!("instance #{i}: {e}"))
        .collect::<Vec<_>>()
        .join("\n");
    Error::Batch {
        count,
        details,
        backend,
    }
}

/// Outcome of a dataset build.
pub struct BuildSummary {
    pub records: usize,
    pub instances: usize,
    pub warnings: Vec<String>,
}

/// Build instruction-tuning records for every instance: segment, select the
/// subtable, render, assemble. Classification tasks expand into Pos/Neg
/// records; everything else emits one record with the gold response.
pub fn cmd_build(cfg: &PipelineConfig, mut output: impl Write) -> Result<BuildSummary> {
    let corpus = load_corpus(
        required(&cfg.tables, "tables")?,
        required(&cfg.instances, "instances")?,
    )?;
    let spaces = load_label_spaces(cfg)?;
    let assembler = PromptAssembler::new(cfg);

    let results: Vec<Result<(Vec<PromptRecord>, Vec<String>)>> = corpus
        .instances
        .par_iter()
        .enumerate()
        .map(|(ordinal, instance)| build_one(cfg, &assembler, &corpus, &spaces, ordinal, instance))
        .collect();

    let mut warnings = corpus.warnings.clone();
    let mut failures = Vec::new();
    let mut records = Vec::new();
    for (i, result) in results.into_iter().enumerate() {
        match result {
            Ok((recs, warns)) => {
                records.extend(recs);
                warnings.extend(warns);
            }
            Err(e) => failures.push((i, e)),
        }
    }
    if !failures.is_empty() {
        return Err(aggregate_failures(failures));
    }

    for record in &records {
        serde_json::to_writer(&mut output, record)?;
        output.write_all(b"\n")?;
    }
    Ok(BuildSummary {
        records: records.len(),
        instances: corpus.instances.len(),
        warnings,
    })
}

fn check_instance(corpus: &Corpus, instance: &TaskInstance, ordinal: usize) -> Result<Table> {
    let table = corpus
        .tables
        .get(&instance.table_id)
        .ok_or_else(|| Error::InvalidInstance {
            instance: instance.effective_id(ordinal),
            message: format!("unknown table id {:?}", instance.table_id),
        })?;
    let violations = validate_instance(instance, table);
    if !violations.is_empty() {
        return Err(Error::InvalidInstance {
            instance: instance.effective_id(ordinal),
            message: violations.join("; "),
        });
    }
    Ok(table.clone())
}

fn build_one(
    cfg: &PipelineConfig,
    assembler: &PromptAssembler,
    corpus: &Corpus,
    spaces: &BTreeMap<TaskKind, LabelSpace>,
    ordinal: usize,
    instance: &TaskInstance,
) -> Result<(Vec<PromptRecord>, Vec<String>)> {
    let table = check_instance(corpus, instance, ordinal)?;
    let demo_row = assembler.demo_row(ordinal, &table);
    let mut warnings = Vec::new();

    if instance.task.is_classification() {
        let space = space_for_instance(instance, spaces)?;
        let ccfg = ClassifyConfig {
            seed: derive_seed(cfg.seed, ordinal as u64),
            ..cfg.classify.clone()
        };
        let build = build_cls_training(
            std::slice::from_ref(instance),
            &space,
            &ccfg,
            |inst, subset| {
                let assembled = assembler.assemble(inst, &table, demo_row, Some(subset))?;
                warnings.extend(assembled.warnings);
                debug_assert!(assembled.tokens <= cfg.plan.model_limit);
                Ok(assembled.record)
            },
        )?;
        warnings.extend(build.warnings);
        return Ok((build.records, warnings));
    }

    let candidate_subset: Option<&[String]> = if instance.task.is_ranking() {
        match instance.candidates.as_deref() {
            Some(c) if !c.is_empty() => Some(c),
            _ => {
                return Err(Error::InvalidInstance {
                    instance: instance.effective_id(ordinal),
                    message: "ranking instance has no candidates".into(),
                })
            }
        }
    } else {
        None
    };

    let mut assembled = assembler.assemble(instance, &table, demo_row, candidate_subset)?;
    assert!(
        assembled.tokens <= cfg.plan.model_limit,
        "assembled prompt exceeds the model limit"
    );
    warnings.extend(std::mem::take(&mut assembled.warnings));
    assembled.record.response = response_text(instance);
    Ok((vec![assembled.record], warnings))
}

/// Dump the segmentation of every table for one task's budget.
pub fn cmd_segment(
    cfg: &PipelineConfig,
    task: TaskKind,
    allowed_override: Option<usize>,
    mut output: impl Write,
) -> Result<usize> {
    let loaded = load_tables(
        BufReader::new(File::open(required(&cfg.tables, "tables")?)?),
        LoadOptions::default(),
    )?;
    let allowed = match allowed_override {
        Some(a) => a,
        None => cfg.plan.allowed_subtable_len(task)?,
    };
    let tok = WordTokenizer;
    let mut count = 0;
    for table in &loaded.tables {
        for subtable in segment_table(table, allowed, cfg.plan.offset, &tok)? {
            serde_json::to_writer(&mut output, &subtable)?;
            output.write_all(b"\n")?;
            count += 1;
        }
    }
    Ok(count)
}

/// Prediction record written by `classify` and `rank`, and read back by
/// `eval`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub instance_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranking: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_calls: Option<usize>,
}

enum RunBackend {
    Mock,
    Http(Arc<HttpBackend>),
}

impl RunBackend {
    fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        match cfg.backend {
            BackendChoice::Mock => Ok(RunBackend::Mock),
            BackendChoice::Http => Ok(RunBackend::Http(Arc::new(HttpBackend::from_settings(
                &cfg.http,
            )?))),
        }
    }

    /// Backend used for one instance. Mock modes are wired per instance from
    /// its gold labels; the HTTP backend is shared.
    fn for_instance(
        &self,
        cfg: &PipelineConfig,
        instance: &TaskInstance,
        ordinal: usize,
    ) -> Box<dyn OracleBackend> {
        match self {
            RunBackend::Http(http) => Box::new(Arc::clone(http)),
            RunBackend::Mock => {
                let seed = derive_seed(cfg.seed, ordinal as u64);
                match cfg.mock.mode {
                    MockMode::Nota => {
                        if instance.task.is_ranking() {
                            // degenerate ranker: all scores equal, input order kept
                            let candidates = instance.candidates.as_deref().unwrap_or(&[]);
                            let relevance = candidates.iter().map(|c| (c.clone(), 0.0)).collect();
                            Box::new(MockOracle::perfect_ranker(relevance))
                        } else {
                            Box::new(MockOracle::all_nota())
                        }
                    }
                    MockMode::Perfect | MockMode::Noisy => {
                        let noise = if cfg.mock.mode == MockMode::Noisy {
                            cfg.mock.noise
                        } else {
                            0.0
                        };
                        if instance.task.is_ranking() {
                            let candidates = instance.candidates.as_deref().unwrap_or(&[]);
                            let relevance = gold_relevance(candidates, &instance.gold);
                            Box::new(MockOracle::noisy_ranker(relevance, noise, seed))
                        } else if instance.task.is_classification() {
                            Box::new(MockOracle::gold_echo(instance.gold.iter().cloned()))
                        } else {
                            Box::new(MockOracle::fixed(response_text(instance)))
                        }
                    }
                }
            }
        }
    }
}

/// Scores that make a perfect ranker reproduce the gold order: gold items
/// score by descending gold position, everything else zero.
pub fn gold_relevance(candidates: &[String], gold: &[String]) -> HashMap<String, f64> {
    let gold_pos: HashMap<&String, usize> = gold.iter().enumerate().map(|(i, g)| (g, i)).collect();
    candidates
        .iter()
        .map(|c| {
            let score = match gold_pos.get(c) {
                Some(&i) => (gold.len() - i) as f64,
                None => 0.0,
            };
            (c.clone(), score)
        })
        .collect()
}

/// Classify every instance through divide-and-merge and write predictions.
pub fn cmd_classify(cfg: &PipelineConfig, mut output: impl Write) -> Result<usize> {
    let corpus = load_corpus(
        required(&cfg.tables, "tables")?,
        required(&cfg.instances, "instances")?,
    )?;
    let spaces = load_label_spaces(cfg)?;
    let assembler = PromptAssembler::new(cfg);
    let backend = RunBackend::from_config(cfg)?;

    let results: Vec<Result<PredictionRecord>> = corpus
        .instances
        .par_iter()
        .enumerate()
        .map(|(ordinal, instance)| {
            if !instance.task.is_classification() {
                return Err(Error::InvalidInstance {
                    instance: instance.effective_id(ordinal),
                    message: format!("{} is not a classification task", instance.task),
                });
            }
            let table = check_instance(&corpus, instance, ordinal)?;
            let space = space_for_instance(instance, &spaces)?;
            let demo_row = assembler.demo_row(ordinal, &table);
            let oracle = backend.for_instance(cfg, instance, ordinal);
            let got =
                classify_instance(instance, &space, &cfg.classify, oracle.as_ref(), |subset| {
                    Ok(assembler
                        .assemble(instance, &table, demo_row, Some(subset))?
                        .record
                        .assembled)
                })?;
            Ok(PredictionRecord {
                instance_id: instance.effective_id(ordinal),
                predicted: Some(got.labels),
                ranking: None,
                oracle_calls: None,
            })
        })
        .collect();

    let mut failures = Vec::new();
    let mut records = Vec::new();
    for (i, result) in results.into_iter().enumerate() {
        match result {
            Ok(r) => records.push(r),
            Err(e) => failures.push((i, e)),
        }
    }
    if !failures.is_empty() {
        return Err(aggregate_failures(failures));
    }
    for record in &records {
        serde_json::to_writer(&mut output, record)?;
        output.write_all(b"\n")?;
    }
    Ok(records.len())
}

/// Input record for the standalone `rank` command.
#[derive(Debug, Deserialize)]
pub struct RankInput {
    pub instance_id: String,
    pub candidates: Vec<String>,
    #[serde(default)]
    pub context: Option<String>,
    /// Mock-backend scores; gold items score 1 when only `gold` is given.
    #[serde(default)]
    pub relevance: Option<HashMap<String, f64>>,
    #[serde(default)]
    pub gold: Option<Vec<String>>,
}

/// Rank candidate pools from a JSONL stream and write full rankings.
pub fn cmd_rank(
    cfg: &PipelineConfig,
    input: impl BufRead,
    mut output: impl Write,
) -> Result<usize> {
    let mut inputs = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RankInput = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: idx + 1,
            message: e.to_string(),
        })?;
        inputs.push(record);
    }
    let backend = RunBackend::from_config(cfg)?;

    let results: Vec<Result<PredictionRecord>> = inputs
        .par_iter()
        .enumerate()
        .map(|(ordinal, record)| {
            let seed = derive_seed(cfg.seed, ordinal as u64);
            let oracle: Box<dyn OracleBackend> = match &backend {
                RunBackend::Http(http) => Box::new(Arc::clone(http)),
                RunBackend::Mock => {
                    let relevance = match (&record.relevance, &record.gold) {
                        (Some(r), _) => {
                            let mut r = r.clone();
                            for c in &record.candidates {
                                r.entry(c.clone()).or_insert(0.0);
                            }
                            r
                        }
                        (None, Some(gold)) => gold_relevance(&record.candidates, gold),
                        (None, None) => {
                            record.candidates.iter().map(|c| (c.clone(), 0.0)).collect()
                        }
                    };
                    let noise = if cfg.mock.mode == MockMode::Noisy {
                        cfg.mock.noise
                    } else {
                        0.0
                    };
                    Box::new(MockOracle::noisy_ranker(relevance, noise, seed))
                }
            };
            let rank_cfg = RankConfig {
                seed,
                ..cfg.rank.clone()
            };
            let context = record.context.as_deref().unwrap_or("");
            let (mut ranking, stats) =
                tree_rank(&record.candidates, &rank_cfg, oracle.as_ref(), context)?;
            if let Some(k) = cfg.rank.top_k {
                ranking.truncate(k);
            }
            Ok(PredictionRecord {
                instance_id: record.instance_id.clone(),
                predicted: None,
                ranking: Some(ranking),
                oracle_calls: Some(stats.oracle_calls),
            })
        })
        .collect();

    let mut failures = Vec::new();
    let mut records = Vec::new();
    for (i, result) in results.into_iter().enumerate() {
        match result {
            Ok(r) => records.push(r),
            Err(e) => failures.push((i, e)),
        }
    }
    if !failures.is_empty() {
        return Err(aggregate_failures(failures));
    }
    for record in &records {
        serde_json::to_writer(&mut output, record)?;
        output.write_all(b"\n")?;
    }
    Ok(records.len())
}

fn read_predictions(path: &Path) -> Result<HashMap<String, PredictionRecord>> {
    let mut map = HashMap::new();
    for (idx, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PredictionRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: idx + 1,
                message: e.to_string(),
            })?;
        map.insert(record.instance_id.clone(), record);
    }
    Ok(map)
}

/// Produce predictions with the configured backend for one instance.
fn infer_one(
    cfg: &PipelineConfig,
    assembler: &PromptAssembler,
    corpus: &Corpus,
    spaces: &BTreeMap<TaskKind, LabelSpace>,
    backend: &RunBackend,
    ordinal: usize,
    instance: &TaskInstance,
) -> Result<(PredictionRecord, usize)> {
    let table = check_instance(corpus, instance, ordinal)?;
    let demo_row = assembler.demo_row(ordinal, &table);
    let oracle = backend.for_instance(cfg, instance, ordinal);
    let id = instance.effective_id(ordinal);

    if instance.task.is_classification() {
        let space = space_for_instance(instance, spaces)?;
        let got = classify_instance(instance, &space, &cfg.classify, oracle.as_ref(), |subset| {
            Ok(assembler
                .assemble(instance, &table, demo_row, Some(subset))?
                .record
                .assembled)
        })?;
        return Ok((
            PredictionRecord {
                instance_id: id,
                predicted: Some(got.labels),
                ranking: None,
                oracle_calls: None,
            },
            got.unmatched_fragments,
        ));
    }

    if instance.task.is_ranking() {
        let candidates = instance.candidates.as_deref().unwrap_or(&[]);
        if candidates.is_empty() {
            return Err(Error::InvalidInstance {
                instance: id,
                message: "ranking instance has no candidates".into(),
            });
        }
        let rank_cfg = RankConfig {
            seed: derive_seed(cfg.seed, ordinal as u64),
            ..cfg.rank.clone()
        };
        let context = assembler.rank_context(instance, &table)?;
        let (ranking, stats) = tree_rank(candidates, &rank_cfg, oracle.as_ref(), &context)?;
        return Ok((
            PredictionRecord {
                instance_id: id,
                predicted: None,
                ranking: Some(ranking),
                oracle_calls: Some(stats.oracle_calls),
            },
            0,
        ));
    }

    // QA and fact verification: one completion per instance
    let assembled = assembler.assemble(instance, &table, demo_row, None)?;
    let answer = oracle.complete(
        &assembled.record.assembled,
        max_generation_tokens(instance.task),
    )?;
    Ok((
        PredictionRecord {
            instance_id: id,
            predicted: Some(vec![answer.trim().to_string()]),
            ranking: None,
            oracle_calls: None,
        },
        0,
    ))
}

/// Evaluate predictions against gold labels, routing each task to its
/// metric: micro P/R/F1 for the multi-label classification tasks, accuracy
/// for entity linking, QA and fact verification, MAP for the ranking tasks.
///
/// Predictions come from a file when given, otherwise the configured
/// backend produces them.
pub fn cmd_eval(cfg: &PipelineConfig, predictions_path: Option<&Path>) -> Result<EvalReport> {
    let corpus = load_corpus(
        required(&cfg.tables, "tables")?,
        required(&cfg.instances, "instances")?,
    )?;
    let spaces = load_label_spaces(cfg)?;
    let assembler = PromptAssembler::new(cfg);

    let mut report = EvalReport {
        instances: corpus.instances.len(),
        ..EvalReport::default()
    };

    let predictions: HashMap<String, PredictionRecord> = match predictions_path {
        Some(path) => read_predictions(path)?,
        None => {
            let backend = RunBackend::from_config(cfg)?;
            let results: Vec<Result<(PredictionRecord, usize)>> = corpus
                .instances
                .par_iter()
                .enumerate()
                .map(|(ordinal, instance)| {
                    infer_one(
                        cfg, &assembler, &corpus, &spaces, &backend, ordinal, instance,
                    )
                })
                .collect();
            let mut failures = Vec::new();
            let mut map = HashMap::new();
            for (i, result) in results.into_iter().enumerate() {
                match result {
                    Ok((r, unmatched)) => {
                        report.add_warning("unmatched-fragments", unmatched);
                        map.insert(r.instance_id.clone(), r);
                    }
                    Err(e) => failures.push((i, e)),
                }
            }
            if !failures.is_empty() {
                return Err(aggregate_failures(failures));
            }
            map
        }
    };

    let mut by_task: BTreeMap<TaskKind, Vec<(usize, &TaskInstance)>> = BTreeMap::new();
    for (ordinal, instance) in corpus.instances.iter().enumerate() {
        by_task
            .entry(instance.task)
            .or_default()
            .push((ordinal, instance));
    }

    for (task, instances) in by_task {
        let mut metrics = TaskMetrics {
            instances: instances.len(),
            ..TaskMetrics::default()
        };
        let mut missing = 0usize;

        match task {
            TaskKind::ColumnTypeAnnotation | TaskKind::RelationExtraction => {
                let mut preds = Vec::new();
                let mut golds = Vec::new();
                for (ordinal, instance) in &instances {
                    let id = instance.effective_id(*ordinal);
                    let predicted = predictions
                        .get(&id)
                        .and_then(|p| p.predicted.clone())
                        .unwrap_or_else(|| {
                            missing += 1;
                            Vec::new()
                        });
                    preds.push(predicted);
                    golds.push(instance.gold.clone());
                }
                let (p, r, f1) = micro_prf(&preds, &golds)?;
                metrics.precision = Some(p);
                metrics.recall = Some(r);
                metrics.micro_f1 = Some(f1);
            }
            TaskKind::RowPopulation | TaskKind::SchemaAugmentation => {
                let mut pairs: Vec<(Vec<String>, HashSet<String>)> = Vec::new();
                let mut dropped_gold = 0usize;
                for (ordinal, instance) in &instances {
                    let id = instance.effective_id(*ordinal);
                    let Some(ranking) = predictions.get(&id).and_then(|p| p.ranking.clone()) else {
                        missing += 1;
                        continue;
                    };
                    let in_ranking: HashSet<&String> = ranking.iter().collect();
                    let mut relevant = HashSet::new();
                    for g in &instance.gold {
                        if in_ranking.contains(g) {
                            relevant.insert(g.clone());
                        } else {
                            dropped_gold += 1;
                        }
                    }
                    pairs.push((ranking, relevant));
                }
                let (map, skipped) = mean_average_precision(&pairs)?;
                metrics.map = Some(map);
                report.add_warning("empty-relevant-skipped", skipped);
                report.add_warning("gold-not-in-candidates", dropped_gold);
            }
            _ => {
                // single-answer tasks: entity linking, both QA tasks, facts
                let mut preds = Vec::new();
                let mut golds = Vec::new();
                for (ordinal, instance) in &instances {
                    let id = instance.effective_id(*ordinal);
                    let predicted = predictions
                        .get(&id)
                        .and_then(|p| p.predicted.as_ref())
                        .and_then(|v| v.first().cloned())
                        .unwrap_or_else(|| {
                            missing += 1;
                            String::new()
                        });
                    preds.push(predicted);
                    golds.push(instance.gold.first().cloned().unwrap_or_default());
                }
                metrics.accuracy = Some(exact_accuracy(&preds, &golds, true)?);
            }
        }

        report.add_warning("missing-predictions", missing);
        report.tasks.insert(task.id().to_string(), metrics);
    }
    Ok(report)
}

/// Pretty-print one assembled prompt for debugging.
pub fn cmd_inspect(cfg: &PipelineConfig, selector: &str) -> Result<String> {
    let corpus = load_corpus(
        required(&cfg.tables, "tables")?,
        required(&cfg.instances, "instances")?,
    )?;
    let spaces = load_label_spaces(cfg)?;
    let assembler = PromptAssembler::new(cfg);

    let (ordinal, instance) = corpus
        .instances
        .iter()
        .enumerate()
        .find(|(i, inst)| inst.effective_id(*i) == selector || i.to_string() == selector)
        .ok_or_else(|| Error::InvalidConfig(format!("no instance matches {selector:?}")))?;

    let table = check_instance(&corpus, instance, ordinal)?;
    let demo_row = assembler.demo_row(ordinal, &table);

    let candidate_subset: Option<Vec<String>> = if instance.task.is_classification() {
        let space = space_for_instance(instance, &spaces)?;
        let subsets = crate::classify::divide_labels(&space, cfg.classify.subset_size);
        subsets.into_iter().next()
    } else if instance.task.is_ranking() {
        instance.candidates.clone()
    } else {
        None
    };

    let assembled = assembler.assemble(instance, &table, demo_row, candidate_subset.as_deref())?;
    let mut out = String::new();
    out.push_str(&format!(
        "# instance {} task {} table {:?} ({} tokens, limit {})\n\n",
        instance.effective_id(ordinal),
        instance.task,
        instance.table_id,
        assembled.tokens,
        cfg.plan.model_limit
    ));
    out.push_str(&assembled.record.assembled);
    out.push('\n');
    if !instance.gold.is_empty() {
        out.push_str(&format!("\n# gold response: {}\n", response_text(instance)));
    }
    for warning in &assembled.warnings {
        out.push_str(&format!("# warning: {warning}\n"));
    }
    Ok(out)
}
