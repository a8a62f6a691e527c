//! Run configuration: TOML file plus CLI-flag overrides.
//!
//! Every value has a default, the config file overrides defaults, and flags
//! override the file. The fully resolved config is copied into the output
//! directory on every eval run for provenance.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use tabgr_core::eval::Task;
use tabgr_core::pipeline::{Mode, PipelineConfig};
use tabgr_core::qgppr::{OrderSensitiveMode, PprConfig};

use crate::CliError;

/// Optional fields exactly as they appear in the TOML file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub mode: Option<String>,
    pub task: Option<String>,
    #[serde(default)]
    pub ppr: PprSection,
    #[serde(default)]
    pub llm: LlmSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PprSection {
    pub alpha: Option<f64>,
    pub iterations: Option<usize>,
    pub w_row: Option<f64>,
    pub w_col: Option<f64>,
    pub v_col: Option<f64>,
    pub v_val: Option<f64>,
    pub use_idf: Option<bool>,
    pub order_sensitive_mode: Option<String>,
    pub order_triggers: Option<Vec<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSection {
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub mock_script: Option<PathBuf>,
    pub value_selection: Option<bool>,
    pub temperature: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub dataset: Option<PathBuf>,
    pub tables: Option<PathBuf>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub full_graph_fallback: Option<bool>,
    pub forward_fill_cols: Option<Vec<usize>>,
    pub max_rounds: Option<usize>,
}

/// Flag overrides shared by the pipeline commands.
#[derive(Debug, Default, Clone, clap::Args)]
pub struct Overrides {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Pipeline mode: full | decomposed.
    #[arg(long)]
    pub mode: Option<String>,
    /// Dataset task: qa | fv.
    #[arg(long)]
    pub task: Option<String>,
    /// Teleport probability (defaults to 0.35 full / 0.15 decomposed).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Row propagation weight; the column weight becomes 1 - w_row.
    #[arg(long)]
    pub w_row: Option<f64>,
    /// Power iteration count.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Question records (JSON Lines).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Table records (JSON Lines).
    #[arg(long)]
    pub tables: Option<PathBuf>,
    /// Remote chat-completion endpoint base URL.
    #[arg(long)]
    pub llm_base_url: Option<String>,
    /// Model name sent to the endpoint.
    #[arg(long)]
    pub llm_model: Option<String>,
    /// Scripted mock LLM (JSON pattern/response list).
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
    /// Comma-separated shuffle seeds.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Worker count for question-level parallelism.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// The fully resolved run configuration.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub task: Task,
    pub ppr: PprConfig,
    pub llm_base_url: Option<String>,
    pub llm_model: String,
    pub mock_script: Option<PathBuf>,
    pub llm_value_selection: bool,
    pub llm_temperature: f64,
    pub dataset: Option<PathBuf>,
    pub tables: Option<PathBuf>,
    pub workers: usize,
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    pub full_graph_fallback: bool,
    pub forward_fill_cols: Vec<usize>,
    pub max_rounds: usize,
    pub order_triggers: Option<Vec<String>>,
}

impl RunConfig {
    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            mode: self.mode,
            ppr: self.ppr.clone(),
            llm_value_selection: self.llm_value_selection,
            full_graph_fallback: self.full_graph_fallback,
            order_triggers: self.order_triggers.clone(),
            forward_fill_cols: self.forward_fill_cols.clone(),
            max_rounds: self.max_rounds,
        }
    }

    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

fn parse_mode(text: &str) -> Result<Mode, CliError> {
    match text {
        "full" => Ok(Mode::Full),
        "decomposed" => Ok(Mode::Decomposed),
        other => Err(CliError::Config(format!(
            "unknown mode {other:?} (expected full | decomposed)"
        ))),
    }
}

fn parse_task(text: &str) -> Result<Task, CliError> {
    match text {
        "qa" => Ok(Task::Qa),
        "fv" => Ok(Task::Fv),
        other => Err(CliError::Config(format!(
            "unknown task {other:?} (expected qa | fv)"
        ))),
    }
}

fn parse_order_mode(text: &str) -> Result<OrderSensitiveMode, CliError> {
    match text {
        "auto" => Ok(OrderSensitiveMode::Auto),
        "always_preserve" => Ok(OrderSensitiveMode::AlwaysPreserve),
        "never_preserve" => Ok(OrderSensitiveMode::NeverPreserve),
        other => Err(CliError::Config(format!(
            "unknown order_sensitive_mode {other:?}"
        ))),
    }
}

pub fn parse_seeds(text: &str) -> Result<Vec<u64>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|e| CliError::Config(format!("bad seed {s:?}: {e}")))
        })
        .collect()
}

/// Load the file config (if any) and fold in the flag overrides.
pub fn resolve(overrides: &Overrides) -> Result<RunConfig, CliError> {
    let file: FileConfig = match &overrides.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            toml::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };

    let mode_text = overrides.mode.clone().or(file.mode);
    let mode = match mode_text.as_deref() {
        Some(text) => parse_mode(text)?,
        None => Mode::Full,
    };
    let task = match overrides.task.clone().or(file.task).as_deref() {
        Some(text) => parse_task(text)?,
        None => Task::Qa,
    };

    // Mode-dependent defaults, file values, then flags.
    let mut ppr = match mode {
        Mode::Full => PprConfig::full_graph(),
        Mode::Decomposed => PprConfig::decomposed(),
    };
    if let Some(alpha) = file.ppr.alpha {
        ppr.alpha = alpha;
    }
    if let Some(iterations) = file.ppr.iterations {
        ppr.iterations = iterations;
    }
    match (file.ppr.w_row, file.ppr.w_col) {
        (Some(w_row), Some(w_col)) => {
            ppr.w_row = w_row;
            ppr.w_col = w_col;
        }
        (Some(w_row), None) => {
            ppr.w_row = w_row;
            ppr.w_col = 1.0 - w_row;
        }
        (None, Some(w_col)) => {
            ppr.w_col = w_col;
            ppr.w_row = 1.0 - w_col;
        }
        (None, None) => {}
    }
    if let Some(v_col) = file.ppr.v_col {
        ppr.v_col = v_col;
    }
    if let Some(v_val) = file.ppr.v_val {
        ppr.v_val = v_val;
    }
    if let Some(use_idf) = file.ppr.use_idf {
        ppr.use_idf = use_idf;
    }
    if let Some(text) = &file.ppr.order_sensitive_mode {
        ppr.order_sensitive_mode = parse_order_mode(text)?;
    }
    if let Some(alpha) = overrides.alpha {
        ppr.alpha = alpha;
    }
    if let Some(w_row) = overrides.w_row {
        ppr.w_row = w_row;
        ppr.w_col = 1.0 - w_row;
    }
    if let Some(iterations) = overrides.iterations {
        ppr.iterations = iterations;
    }
    ppr.validate()
        .map_err(|e| CliError::Config(e.to_string()))?;

    let seeds = match &overrides.seeds {
        Some(text) => parse_seeds(text)?,
        None => file.run.seeds.unwrap_or_else(|| vec![1, 2]),
    };

    let config = RunConfig {
        mode,
        task,
        ppr,
        llm_base_url: overrides.llm_base_url.clone().or(file.llm.base_url),
        llm_model: overrides
            .llm_model
            .clone()
            .or(file.llm.model)
            .unwrap_or_else(|| "default".to_string()),
        mock_script: overrides.mock_script.clone().or(file.llm.mock_script),
        llm_value_selection: file.llm.value_selection.unwrap_or(false),
        llm_temperature: file.llm.temperature.unwrap_or(0.0),
        dataset: overrides.dataset.clone().or(file.run.dataset),
        tables: overrides.tables.clone().or(file.run.tables),
        workers: overrides.workers.or(file.run.workers).unwrap_or(1).max(1),
        out: overrides
            .out
            .clone()
            .or(file.run.out)
            .unwrap_or_else(|| PathBuf::from("out")),
        seeds,
        full_graph_fallback: file.run.full_graph_fallback.unwrap_or(false),
        forward_fill_cols: file.run.forward_fill_cols.unwrap_or_default(),
        max_rounds: file.run.max_rounds.unwrap_or(3),
        order_triggers: file.ppr.order_triggers,
    };

    if config.llm_base_url.is_some() && config.mock_script.is_some() {
        return Err(CliError::Config(
            "configure exactly one of llm.base_url and llm.mock_script".to_string(),
        ));
    }
    Ok(config)
}

/// Copy the resolved config into the output directory.
pub fn write_provenance(config: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let path = dir.join("resolved_config.json");
    let text = serde_json::to_string_pretty(&config.snapshot())
        .map_err(|e| CliError::Input(e.to_string()))?;
    std::fs::write(&path, text + "\n")
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}
