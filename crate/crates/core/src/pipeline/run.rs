//! Batch runs driven by a TOML config.
//!
//! ```toml
//! [run]
//! id = "pku-demo"
//! family = "content_aware"
//! output_dir = "runs/pku-demo"
//!
//! [dataset]
//! path = "pku.jsonl"
//! preset = "pku"
//!
//! [generation]
//! k_coarse = 10
//! k_cot = 4
//! n = 10
//!
//! [backend]
//! mode = "replay"
//! transcript_dir = "transcripts"
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{GenerationConfig, Pipeline, PipelineError, RankerWeights, RefinementTrace};
use crate::dataset::{compute_area_stats, ingest_file, load_raster, CanonicalDataset, DatasetManifest, IngestOptions, LayoutRecord, TaskKind};
use crate::gateway::{BackendConfig, Gateway, Mode};
use crate::layout::Layout;
use crate::metrics::{evaluate, EvalItem, EvalSettings, Metric, MetricReport, UNDERLAY};
use crate::prompt::{PromptCatalog, TaskFamily};
use crate::retrieval::{build_index, load_index, CostWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub id: String,
    pub family: TaskFamily,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Interchange JSONL holding both splits.
    pub path: PathBuf,
    /// Named dataset; supplies the vocabulary unless `vocabulary` is set.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub vocabulary: Option<Vec<String>>,
    #[serde(default = "default_train")]
    pub train_split: String,
    #[serde(default = "default_test")]
    pub test_split: String,
    /// Prebuilt index; built from the train split when absent.
    #[serde(default)]
    pub index: Option<PathBuf>,
    #[serde(default)]
    pub strict: bool,
}

fn default_train() -> String {
    "train".into()
}

fn default_test() -> String {
    "test".into()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Metric names; the family's table when empty.
    pub metrics: Vec<String>,
    pub text_labels: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub generation: GenerationConfig,
    #[serde(default)]
    pub ranker: RankerWeights,
    #[serde(default)]
    pub retrieval: CostWeights,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub eval: EvalSection,
    /// Directory of template overrides.
    #[serde(default)]
    pub templates: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Anchor relative paths at `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.run.output_dir);
        fix(&mut self.dataset.path);
        if let Some(p) = &mut self.dataset.index {
            fix(p);
        }
        if let Some(p) = &mut self.backend.transcript_dir {
            fix(p);
        }
        if let Some(p) = &mut self.templates {
            fix(p);
        }
    }
}

/// Command-line adjustments applied on top of a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub no_rag: bool,
    pub no_cot: bool,
    pub stages: Option<u8>,
    pub output_dir: Option<PathBuf>,
    pub limit: Option<usize>,
}

impl RunOverrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.generation.seed = s;
        }
        if let Some(m) = self.mode {
            cfg.backend.mode = m;
        }
        cfg.generation.no_rag |= self.no_rag;
        cfg.generation.no_cot |= self.no_cot;
        if let Some(s) = self.stages {
            cfg.generation.stages = s;
        }
        if let Some(d) = &self.output_dir {
            cfg.run.output_dir = d.clone();
        }
        if self.limit.is_some() {
            cfg.run.limit = self.limit;
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub items: usize,
    pub failures: usize,
    pub report: MetricReport,
}

struct RunLog(std::fs::File);

impl RunLog {
    fn line(&mut self, msg: impl AsRef<str>) -> std::io::Result<()> {
        let ts = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
        writeln!(self.0, "[{ts:.3}] {}", msg.as_ref())
    }
}

/// Load a config file and run it. Relative paths in the file resolve against its directory.
pub fn run_task(config_path: impl AsRef<Path>, overrides: &RunOverrides) -> Result<RunSummary, PipelineError> {
    let path = config_path.as_ref();
    let mut cfg = RunConfig::load(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    cfg.resolve_paths(&base);
    overrides.apply(&mut cfg);
    run_with_config(&cfg)
}

fn family_metrics(family: TaskFamily) -> Vec<Metric> {
    match family {
        TaskFamily::ContentAware => Metric::CONTENT_AWARE.to_vec(),
        _ => vec![Metric::Align, Metric::Ove, Metric::Val, Metric::MIoU],
    }
}

/// Everything a run needs before the first item is generated.
pub struct Prepared {
    pub pipeline: Pipeline,
    pub dataset: CanonicalDataset,
}

/// Ingest the dataset, load or build the index and set up the gateway.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared, PipelineError> {
    cfg.generation.validate()?;
    cfg.ranker.validate()?;
    let family = cfg.run.family;
    let mut manifest = match &cfg.dataset.preset {
        Some(name) => DatasetManifest::preset(name)?,
        None => DatasetManifest::new("custom", task_kind(family), Vec::new()),
    };
    if let Some(v) = &cfg.dataset.vocabulary {
        manifest.vocabulary = v.clone();
    }
    if manifest.vocabulary.is_empty() {
        return Err(PipelineError::Config("dataset needs a preset or an explicit vocabulary".into()));
    }
    let ingest_opts = IngestOptions { strict: cfg.dataset.strict, check_split_sizes: false };
    let dataset = ingest_file(&cfg.dataset.path, &manifest, &ingest_opts)?;
    let area_stats = compute_area_stats(&dataset, &cfg.dataset.train_split)?;
    let index = match &cfg.dataset.index {
        Some(p) => load_index(p)?,
        None => build_index(&dataset, &cfg.dataset.train_split, cfg.retrieval)?.index,
    };
    let catalog = match &cfg.templates {
        Some(dir) => PromptCatalog::load_dir(dir)?,
        None => PromptCatalog::builtin(),
    };
    // Replay keys include the model name, so the environment only applies to live traffic.
    let backend = match cfg.backend.mode {
        Mode::Replay => cfg.backend.clone(),
        Mode::Live | Mode::Record => cfg.backend.clone().with_env(),
    };
    let gateway = Gateway::new(backend)?;
    let pipeline = Pipeline {
        run_id: cfg.run.id.clone(),
        gateway,
        catalog,
        index,
        area_stats,
        vocabulary: manifest.vocabulary.clone(),
        config: cfg.generation.clone(),
        ranker: cfg.ranker,
    };
    Ok(Prepared { pipeline, dataset })
}

/// Run a fully resolved config and write the run directory:
/// `traces/{id}.json`, `generated.jsonl`, `metrics.tsv` and `run.log`.
pub fn run_with_config(cfg: &RunConfig) -> Result<RunSummary, PipelineError> {
    let family = cfg.run.family;
    let Prepared { pipeline, dataset } = prepare(cfg)?;

    let mut items: Vec<&Layout> = dataset.split(&cfg.dataset.test_split).map(|it| &it.pixels).collect();
    if let Some(limit) = cfg.run.limit {
        items.truncate(limit);
    }
    if items.is_empty() {
        return Err(PipelineError::Config(format!("split `{}` has no items", cfg.dataset.test_split)));
    }

    let run_dir = cfg.run.output_dir.clone();
    let traces_dir = run_dir.join("traces");
    if traces_dir.exists() {
        std::fs::remove_dir_all(&traces_dir)?;
    }
    std::fs::create_dir_all(&traces_dir)?;
    let mut log = RunLog(std::fs::File::create(run_dir.join("run.log"))?);
    log.line(format!(
        "run {} family={} items={} mode={:?} k_coarse={} k_cot={} n={} stages={} no_rag={} no_cot={} seed={}",
        cfg.run.id,
        family,
        items.len(),
        cfg.backend.mode,
        cfg.generation.k_coarse,
        cfg.generation.k_cot,
        cfg.generation.n,
        cfg.generation.stages,
        cfg.generation.no_rag,
        cfg.generation.no_cot,
        cfg.generation.seed
    ))?;

    let traces: Vec<RefinementTrace> = items.par_iter().map(|item| pipeline.run_item(item, family)).collect();

    let mut generated = std::io::BufWriter::new(std::fs::File::create(run_dir.join("generated.jsonl"))?);
    let mut eval_items = Vec::new();
    let mut failures = 0;
    let dataset_dir = cfg.dataset.path.parent().map(Path::to_path_buf).unwrap_or_default();
    for (item, trace) in items.iter().zip(&traces) {
        let file = traces_dir.join(format!("{}.json", sanitize(&trace.item_id)));
        std::fs::write(&file, serde_json::to_string_pretty(trace)? + "\n")?;
        match (&trace.final_layout, &trace.error) {
            (Some(layout), None) => {
                let stage_fallbacks = trace.stages.iter().filter(|s| s.fallback).count();
                log.line(format!("item {}: ok ({} elements, {stage_fallbacks} stage fallbacks)", trace.item_id, layout.len()))?;
                serde_json::to_writer(&mut generated, &LayoutRecord::from_layout(layout, cfg.dataset.test_split.clone()))?;
                generated.write_all(b"\n")?;
                let mut e = EvalItem::new(layout.clone());
                if !item.is_empty() {
                    e.reference = Some((*item).clone());
                }
                let raster = |p: &Option<String>| -> Result<_, PipelineError> {
                    p.as_ref().map(|p| load_raster(dataset_dir.join(p))).transpose().map_err(Into::into)
                };
                e.saliency = raster(&item.task_meta.saliency)?;
                e.gradient = raster(&item.task_meta.gradient)?;
                eval_items.push(e);
            }
            _ => {
                failures += 1;
                let msg = trace.error.clone().unwrap_or_else(|| "no final layout".into());
                log.line(format!("item {}: failed: {msg}", trace.item_id))?;
                serde_json::to_writer(&mut generated, &serde_json::json!({"id": trace.item_id, "error": msg}))?;
                generated.write_all(b"\n")?;
            }
        }
    }
    generated.flush()?;

    let metrics = if cfg.eval.metrics.is_empty() {
        family_metrics(family)
    } else {
        Metric::parse_list(&cfg.eval.metrics.join(","))?
    };
    let mut settings = EvalSettings::new(metrics);
    settings.area_stats = Some(pipeline.area_stats.clone());
    if family == TaskFamily::ContentAware {
        settings.overlap_exclude = vec![UNDERLAY.to_string()];
    }
    if let Some(t) = &cfg.eval.text_labels {
        settings.text_labels = t.clone();
    }
    let report = if eval_items.is_empty() {
        log.line("no successful items; metrics skipped")?;
        let mut r = MetricReport::default();
        for m in &settings.metrics {
            r.applicability.insert(m.key().to_string(), crate::metrics::Applicability::Skipped("no successful items".into()));
        }
        r
    } else {
        evaluate(&eval_items, &settings)?
    };
    std::fs::write(run_dir.join("metrics.tsv"), report.to_tsv())?;
    log.line(format!("done: {} items, {failures} failed", items.len()))?;
    Ok(RunSummary { run_dir, items: items.len(), failures, report })
}

fn task_kind(family: TaskFamily) -> TaskKind {
    match family {
        TaskFamily::ContentAware => TaskKind::ContentAware,
        TaskFamily::TextToLayout => TaskKind::TextToLayout,
        _ => TaskKind::ConstraintExplicit,
    }
}

/// Item ids become file names; keep them to a safe character set.
fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' }).collect()
}
