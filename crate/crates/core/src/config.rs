//! Pipeline configuration: JSON config file schema plus the resolved form
//! the commands run with. Flags override file values; the seed must come
//! from one of the two (no wall-clock seeding).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::budget::{measure_prologue_reserve, BudgetPlan, Tokenizer, WordTokenizer};
use crate::classify::ClassifyConfig;
use crate::error::{Error, Result};
use crate::rank::RankConfig;
use crate::serialize::{Layout, TemplateRegistry, ALPACA_PROLOGUE, VICUNA_PROLOGUE};
use crate::table::TaskKind;

/// Fixed chatbot preamble preceding the instruction blocks.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrologueChoice {
    #[default]
    Alpaca,
    Vicuna,
    #[serde(untagged)]
    Custom(String),
}

impl PrologueChoice {
    pub fn text(&self) -> &str {
        match self {
            PrologueChoice::Alpaca => ALPACA_PROLOGUE,
            PrologueChoice::Vicuna => VICUNA_PROLOGUE,
            PrologueChoice::Custom(text) => text,
        }
    }
}

/// How the demonstrated entity row is picked for column-level tasks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowSampling {
    /// Always the first row; reproducible without a seed.
    #[default]
    Deterministic,
    /// Seeded uniform row choice.
    Random,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendChoice {
    #[default]
    Mock,
    Http,
}

/// Behavior of the mock backend in end-to-end runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MockMode {
    /// Echo gold labels, rank gold candidates first, answer gold text.
    #[default]
    Perfect,
    /// Answer none-of-the-above everywhere.
    Nota,
    /// Perfect completions but rankings with adjacent-swap noise.
    Noisy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockSettings {
    pub mode: MockMode,
    /// Adjacent-swap probability used by the noisy mode.
    pub noise: f64,
}

impl Default for MockSettings {
    fn default() -> Self {
        MockSettings {
            mode: MockMode::Perfect,
            noise: 0.1,
        }
    }
}

/// HTTP endpoint settings; unset fields fall back to environment variables.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpSettings {
    pub endpoint: Option<String>,
    pub auth_token: Option<String>,
    pub timeout_secs: Option<u64>,
    pub max_in_flight: Option<usize>,
    /// Use OpenAI-completions request/response bodies instead of the
    /// minimal `{"prompt","max_tokens"}` / `{"text"}` pair.
    pub openai_style: bool,
    pub model: Option<String>,
}

/// Budget section of the config file; omitted values take the defaults.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BudgetSettings {
    pub model_limit: Option<usize>,
    pub metadata_reserve: Option<usize>,
    pub offset: Option<usize>,
    /// Per-task overrides keyed by task id.
    pub instruction_reserve: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifySettings {
    pub subset_size: Option<usize>,
    pub pos_neg_ratio: Option<(u32, u32)>,
    pub runoff_rounds: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankSettings {
    pub subset_size: Option<usize>,
    pub top_k: Option<usize>,
}

/// On-disk config file schema.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub budget: BudgetSettings,
    pub classify: ClassifySettings,
    pub rank: RankSettings,
    pub prologue: PrologueChoice,
    pub layout: Layout,
    pub row_sampling: RowSampling,
    pub backend: BackendChoice,
    pub mock: MockSettings,
    pub http: HttpSettings,
    /// Directory of template override files.
    pub templates_dir: Option<PathBuf>,
    pub tables: Option<PathBuf>,
    pub instances: Option<PathBuf>,
    /// Label-space files keyed by task id.
    pub labels: BTreeMap<String, PathBuf>,
    pub output: Option<PathBuf>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }
}

/// Fully resolved configuration the pipeline commands run with.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub seed: u64,
    pub plan: BudgetPlan,
    pub classify: ClassifyConfig,
    pub rank: RankConfig,
    pub prologue: PrologueChoice,
    pub layout: Layout,
    pub row_sampling: RowSampling,
    pub backend: BackendChoice,
    pub mock: MockSettings,
    pub http: HttpSettings,
    pub registry: TemplateRegistry,
    pub tables: Option<PathBuf>,
    pub instances: Option<PathBuf>,
    pub labels: BTreeMap<TaskKind, PathBuf>,
    pub output: Option<PathBuf>,
}

impl PipelineConfig {
    /// Resolve a config file plus an optional seed override into a runnable
    /// configuration. The seed is mandatory; everything else has defaults.
    pub fn resolve(file: ConfigFile, seed_override: Option<u64>) -> Result<Self> {
        let seed = seed_override.or(file.seed).ok_or_else(|| {
            Error::InvalidConfig("a seed is required (config file `seed` or --seed)".into())
        })?;

        let tok = WordTokenizer;
        let mut plan =
            BudgetPlan::with_prologue_reserve(measure_prologue_reserve(file.prologue.text(), &tok));
        if let Some(limit) = file.budget.model_limit {
            plan.model_limit = limit;
        }
        if let Some(meta) = file.budget.metadata_reserve {
            plan.metadata_reserve = meta;
        }
        if let Some(offset) = file.budget.offset {
            plan.offset = offset;
        }
        for (task_id, reserve) in &file.budget.instruction_reserve {
            let task = TaskKind::from_id(task_id)?;
            plan.instruction_reserve.insert(task, *reserve);
        }
        plan.validate()?;

        let mut classify = ClassifyConfig {
            seed,
            ..ClassifyConfig::default()
        };
        if let Some(s) = file.classify.subset_size {
            classify.subset_size = s;
        }
        if let Some(r) = file.classify.pos_neg_ratio {
            classify.pos_neg_ratio = r;
        }
        if let Some(r) = file.classify.runoff_rounds {
            classify.runoff_rounds = r;
        }
        classify.validate()?;

        let mut rank = RankConfig {
            seed,
            ..RankConfig::default()
        };
        if let Some(s) = file.rank.subset_size {
            rank.subset_size = s;
        }
        rank.top_k = file.rank.top_k;

        let mut registry = TemplateRegistry::builtin();
        if let Some(dir) = &file.templates_dir {
            registry.apply_overrides(dir)?;
        }

        let mut labels = BTreeMap::new();
        for (task_id, path) in file.labels {
            labels.insert(TaskKind::from_id(&task_id)?, path);
        }

        Ok(PipelineConfig {
            seed,
            plan,
            classify,
            rank,
            prologue: file.prologue,
            layout: file.layout,
            row_sampling: file.row_sampling,
            backend: file.backend,
            mock: file.mock,
            http: file.http,
            registry,
            tables: file.tables,
            instances: file.instances,
            labels,
            output: file.output,
        })
    }

    /// Default configuration with a fixed seed, for library callers.
    pub fn with_seed(seed: u64) -> Self {
        Self::resolve(
            ConfigFile {
                seed: Some(seed),
                ..ConfigFile::default()
            },
            None,
        )
        .expect("default config resolves")
    }

    pub fn tokenizer(&self) -> impl Tokenizer {
        WordTokenizer
    }
}
