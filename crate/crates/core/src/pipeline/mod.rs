//! End-to-end generation for one item: exemplar retrieval, `n` coarse
//! candidates ranked down to one, then the staged refinement prompts.
//! Everything the LLM saw and returned is kept in a [`RefinementTrace`].

mod ranker;
mod run;

pub use ranker::{constraint_satisfaction, rank_candidates, CandidateScore, RankerWeights};
pub use run::{prepare, run_task, run_with_config, DatasetSection, EvalSection, Prepared, RunConfig, RunOverrides, RunSection, RunSummary};

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{AreaStats, DatasetError, RasterError};
use crate::gateway::{extract_layout, Gateway, GatewayError, Mode};
use crate::layout::{self, to_html, BBox, Canvas, Element, Layout, LayoutError};
use crate::metrics::MetricError;
use crate::prompt::{ConstraintSpec, PromptCatalog, PromptError, Provenance, TaskFamily};
use crate::retrieval::{pseudo_query, topk_retrieve, RetrievalError, RetrievalIndex, RetrieveOptions};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no candidate layout could be extracted")]
    NoViableCandidate,
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    /// Exemplars in the coarse prompt.
    pub k_coarse: usize,
    /// Exemplars in each refinement prompt; a prefix of the coarse set.
    pub k_cot: usize,
    /// Coarse candidates per round.
    pub n: u32,
    /// Refinement stages to run, 1 to 3.
    pub stages: u8,
    /// Seeded random exemplars instead of retrieval.
    pub no_rag: bool,
    /// Stop after the coarse step.
    pub no_cot: bool,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self { k_coarse: 10, k_cot: 4, n: 10, stages: 3, no_rag: false, no_cot: false, seed: 0 }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.k_coarse == 0 || self.k_cot == 0 || self.n == 0 {
            return Err(PipelineError::Config("k_coarse, k_cot and n must be at least 1".into()));
        }
        if !(1..=3).contains(&self.stages) {
            return Err(PipelineError::Config(format!("stages must be 1, 2 or 3 (got {}); use no_cot to skip refinement", self.stages)));
        }
        Ok(())
    }
}

/// Everything needed to generate for one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInput {
    pub id: String,
    pub constraint: ConstraintSpec,
    /// Pixel canvas of the request.
    pub canvas: (u32, u32),
    /// Normalized retrieval query.
    pub query: Layout,
    /// Per-item seed for random choices.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExemplarSource {
    Retrieval,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplars {
    pub source: ExemplarSource,
    /// Coarse exemplars in rank order, placed on the request canvas.
    pub coarse: Vec<Layout>,
    /// Similarity per coarse exemplar; empty for random selection.
    pub similarities: Vec<f64>,
    pub k_cot: usize,
}

impl Exemplars {
    pub fn cot(&self) -> &[Layout] {
        &self.coarse[..self.k_cot.min(self.coarse.len())]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub index: u32,
    pub raw: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layout: Option<Layout>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<CandidateScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseTrace {
    pub provenance: Provenance,
    pub rounds: u32,
    pub candidates: Vec<CandidateRecord>,
    /// Candidate index of the winner.
    pub chosen: Option<u32>,
}

impl CoarseTrace {
    pub fn chosen_layout(&self) -> Result<&Layout, PipelineError> {
        self.chosen
            .and_then(|c| self.candidates.iter().find(|r| r.index == c))
            .and_then(|r| r.layout.as_ref())
            .ok_or(PipelineError::NoViableCandidate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub candidate: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: u8,
    pub provenance: Provenance,
    /// Snippet of the layout this stage started from.
    pub input_html: String,
    pub attempts: Vec<Attempt>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layout: Option<Layout>,
    /// Set when no attempt parsed and the input layout was carried forward.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementTrace {
    pub run_id: String,
    pub item_id: String,
    pub family: TaskFamily,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constraint: Option<ConstraintSpec>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exemplar_source: Option<ExemplarSource>,
    pub coarse_exemplar_ids: Vec<String>,
    pub cot_exemplar_ids: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coarse: Option<CoarseTrace>,
    pub stages: Vec<StageRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_layout: Option<Layout>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Seed for one item, stable across runs and platforms.
pub fn item_seed(seed: u64, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// Normalized retrieval query for a constraint: its own geometry when it has
/// one, else one centered square per requested element.
pub fn query_for(id: &str, constraint: &ConstraintSpec, canvas: (u32, u32), stats: &AreaStats) -> Result<Layout, PipelineError> {
    let geometry = match constraint {
        ConstraintSpec::Completion { partial: l } | ConstraintSpec::Refinement { noisy: l } => Some(layout::normalize(l)?),
        ConstraintSpec::GenTs { elements } => {
            let (w, h) = (f64::from(canvas.0), f64::from(canvas.1));
            let els = elements
                .iter()
                .map(|e| Element::new(e.label.clone(), BBox::from_center(0.5, 0.5, (e.width / w).min(1.0), (e.height / h).min(1.0))))
                .collect();
            Some(Layout::new(id, Canvas::unit(), els))
        }
        _ => None,
    };
    let mut q = match geometry {
        Some(g) => g,
        None => pseudo_query(id, &constraint.categories(), stats, canvas),
    };
    q.id = id.to_string();
    q.task_meta = Default::default();
    q.task_meta.original_size = Some(canvas);
    if q.is_empty() {
        return Err(PipelineError::Config(format!("item `{id}`: constraint requests no elements")));
    }
    Ok(q)
}

/// Shared state for generating a batch of items.
#[derive(Debug)]
pub struct Pipeline {
    pub run_id: String,
    pub gateway: Gateway,
    pub catalog: PromptCatalog,
    pub index: RetrievalIndex,
    pub area_stats: AreaStats,
    pub vocabulary: Vec<String>,
    pub config: GenerationConfig,
    pub ranker: RankerWeights,
}

impl Pipeline {
    /// Constraint, canvas and query for a dataset item. A stored constraint
    /// wins; otherwise one is derived from the item's own layout, and an item
    /// with nothing to derive from asks for each vocabulary label once.
    pub fn task_input(&self, item: &Layout, family: TaskFamily) -> Result<TaskInput, PipelineError> {
        let seed = item_seed(self.config.seed, &item.id);
        let px = item.to_pixels();
        let constraint = match &item.task_meta.constraints {
            Some(v) => {
                let spec = ConstraintSpec::from_json(v.clone())?;
                if spec.family() != family {
                    return Err(PipelineError::Config(format!(
                        "item `{}` carries a {} constraint but the run is {family}",
                        item.id,
                        spec.family()
                    )));
                }
                spec
            }
            None if px.is_empty() => {
                let categories: BTreeMap<String, usize> = self.vocabulary.iter().map(|l| (l.clone(), 1)).collect();
                match family {
                    TaskFamily::ContentAware => ConstraintSpec::ContentAware { canvas: (px.canvas.width, px.canvas.height), categories },
                    TaskFamily::TextToLayout => ConstraintSpec::TextToLayout {
                        text: px.task_meta.text.clone().ok_or_else(|| {
                            PipelineError::Config(format!("item `{}` has neither elements nor a description", item.id))
                        })?,
                        categories,
                    },
                    _ => return Err(PipelineError::Config(format!("item `{}` has no elements to derive a {family} constraint from", item.id))),
                }
            }
            None => ConstraintSpec::derive(family, &px, seed)?,
        };
        let canvas = constraint.canvas().map_or((px.canvas.width, px.canvas.height), |c| (c.width, c.height));
        let query = query_for(&item.id, &constraint, canvas, &self.area_stats)?;
        Ok(TaskInput { id: item.id.clone(), constraint, canvas, query, seed })
    }

    /// Top `k_coarse` by similarity, or a seeded random draw under `no_rag`.
    pub fn select_exemplars(&self, input: &TaskInput) -> Result<Exemplars, PipelineError> {
        let k = self.config.k_coarse;
        let (source, picks): (ExemplarSource, Vec<(usize, Option<f64>)>) = if self.config.no_rag {
            if self.index.is_empty() {
                return Err(RetrievalError::EmptyIndex.into());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(input.seed);
            let chosen = sample(&mut rng, self.index.len(), k.min(self.index.len()));
            (ExemplarSource::Random, chosen.into_iter().map(|i| (i, None)).collect())
        } else {
            let mut opts = RetrieveOptions::top(k);
            opts.exclude_self = true;
            let hits = topk_retrieve(&input.query, &self.index, &opts)?;
            let position: BTreeMap<&str, usize> = self.index.entries.iter().enumerate().map(|(i, e)| (e.id.as_str(), i)).collect();
            (ExemplarSource::Retrieval, hits.iter().map(|h| (position[h.id.as_str()], Some(h.similarity))).collect())
        };
        let coarse = picks.iter().map(|&(i, _)| self.index.layout_of(&self.index.entries[i], input.canvas)).collect();
        let similarities = picks.iter().filter_map(|&(_, s)| s).collect();
        Ok(Exemplars { source, coarse, similarities, k_cot: self.config.k_cot })
    }

    fn extract(&self, raw: &str, canvas: (u32, u32)) -> Result<Layout, String> {
        extract_layout(raw, &self.vocabulary, Some(canvas)).map_err(|f| f.reason)
    }

    /// Sample `n` candidates, extract, rank. A round with no usable candidate
    /// is repeated once with fresh candidate indices when talking to a live
    /// backend; replayed runs get a single round.
    pub fn generate_coarse(&self, input: &TaskInput, exemplars: &Exemplars) -> Result<CoarseTrace, PipelineError> {
        let bundle = self.catalog.build_coarse_prompt(&exemplars.coarse, &input.constraint)?;
        let n = self.config.n;
        let max_rounds = if self.gateway.config().mode == Mode::Replay { 1 } else { 2 };
        let mut candidates = Vec::new();
        let mut rounds = 0;
        while rounds < max_rounds {
            let start = rounds * n;
            let texts = self.gateway.complete_range(&bundle, start..start + n, self.gateway.config().temperature)?;
            rounds += 1;
            for (offset, raw) in texts.into_iter().enumerate() {
                let (layout, failure) = match self.extract(&raw, input.canvas) {
                    Ok(l) => (Some(l), None),
                    Err(reason) => (None, Some(reason)),
                };
                candidates.push(CandidateRecord { index: start + offset as u32, raw, layout, failure, score: None });
            }
            if candidates.iter().any(|c| c.layout.is_some()) {
                break;
            }
        }
        let viable: Vec<usize> = (0..candidates.len()).filter(|&i| candidates[i].layout.is_some()).collect();
        let mut chosen = None;
        if !viable.is_empty() {
            let layouts: Vec<Layout> = viable.iter().map(|&i| candidates[i].layout.clone().unwrap()).collect();
            let (best, scores) = rank_candidates(&layouts, &input.constraint, &self.ranker)?;
            for (&i, s) in viable.iter().zip(scores) {
                candidates[i].score = Some(s);
            }
            chosen = Some(candidates[viable[best]].index);
        }
        Ok(CoarseTrace { provenance: bundle.provenance, rounds, candidates, chosen })
    }

    /// Run the refinement stages in order. Each stage gets one retry; when
    /// both attempts fail the stage's input is carried forward.
    pub fn refine_cot(&self, coarse: &Layout, input: &TaskInput, exemplars: &Exemplars) -> Result<(Vec<StageRecord>, Layout), PipelineError> {
        let family = input.constraint.family();
        let temperature = self.gateway.config().cot_temperature;
        let mut current = coarse.clone();
        let mut stages = Vec::new();
        for t in 1..=self.config.stages {
            let bundle = self.catalog.build_stage_prompt(t, family, exemplars.cot(), &current, &input.constraint)?;
            let mut attempts = Vec::new();
            let mut parsed = None;
            for candidate in 0..2u32 {
                match self.gateway.complete_range(&bundle, candidate..candidate + 1, temperature) {
                    Ok(mut texts) => {
                        let raw = texts.pop().unwrap_or_default();
                        match self.extract(&raw, input.canvas) {
                            Ok(l) => {
                                attempts.push(Attempt { candidate, raw: Some(raw), error: None });
                                parsed = Some(l);
                            }
                            Err(reason) => attempts.push(Attempt { candidate, raw: Some(raw), error: Some(reason) }),
                        }
                    }
                    Err(e) => attempts.push(Attempt { candidate, raw: None, error: Some(e.to_string()) }),
                }
                if parsed.is_some() {
                    break;
                }
            }
            let input_html = to_html(&current).0;
            let fallback = parsed.is_none();
            if let Some(l) = &parsed {
                current = l.clone();
            }
            stages.push(StageRecord { stage: t, provenance: bundle.provenance, input_html, attempts, layout: parsed, fallback });
        }
        Ok((stages, current))
    }

    /// Full generation for one item. Never fails: errors end up in the trace.
    pub fn run_item(&self, item: &Layout, family: TaskFamily) -> RefinementTrace {
        let mut trace = RefinementTrace {
            run_id: self.run_id.clone(),
            item_id: item.id.clone(),
            family,
            constraint: None,
            seed: item_seed(self.config.seed, &item.id),
            exemplar_source: None,
            coarse_exemplar_ids: Vec::new(),
            cot_exemplar_ids: Vec::new(),
            coarse: None,
            stages: Vec::new(),
            final_layout: None,
            error: None,
        };
        if let Err(e) = self.fill_trace(item, family, &mut trace) {
            trace.error = Some(e.to_string());
        }
        trace
    }

    fn fill_trace(&self, item: &Layout, family: TaskFamily, trace: &mut RefinementTrace) -> Result<(), PipelineError> {
        let input = self.task_input(item, family)?;
        trace.constraint = Some(input.constraint.clone());
        let exemplars = self.select_exemplars(&input)?;
        trace.exemplar_source = Some(exemplars.source);
        trace.coarse_exemplar_ids = exemplars.coarse.iter().map(|l| l.id.clone()).collect();
        let coarse_trace = self.generate_coarse(&input, &exemplars)?;
        let coarse = coarse_trace.chosen_layout().cloned();
        trace.coarse = Some(coarse_trace);
        let coarse = coarse?;
        let mut final_layout = if self.config.no_cot {
            coarse
        } else {
            trace.cot_exemplar_ids = exemplars.cot().iter().map(|l| l.id.clone()).collect();
            let (stages, last) = self.refine_cot(&coarse, &input, &exemplars)?;
            trace.stages = stages;
            last
        };
        final_layout.id = item.id.clone();
        trace.final_layout = Some(final_layout);
        Ok(())
    }
}
