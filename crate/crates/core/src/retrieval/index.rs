use std::cmp::Ordering;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{solve_features, similarity_from_distance, CostWeights, Feature, RetrievalError, Solver};
use crate::dataset::CanonicalDataset;
use crate::layout::{BBox, Canvas, Element, Layout};

pub const INDEX_VERSION: &str = "layoutcot-index/1";

/// `[label id, cx, cy, w, h]`, normalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexElement(pub u32, pub f64, pub f64, pub f64, pub f64);

impl IndexElement {
    fn feature(&self) -> Feature {
        Feature { label: self.0, cx: self.1, cy: self.2, w: self.3, h: self.4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub elements: Vec<IndexElement>,
}

/// Flat database of exemplar layouts for retrieval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalIndex {
    pub version: String,
    pub vocabulary: Vec<String>,
    /// Cost weights the index was built for; used when a query passes none.
    pub weights: CostWeights,
    pub entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone)]
pub struct IndexBuild {
    pub index: RetrievalIndex,
    pub warnings: Vec<String>,
}

impl RetrievalIndex {
    pub fn new(vocabulary: Vec<String>, weights: CostWeights) -> Self {
        Self { version: INDEX_VERSION.to_string(), vocabulary, weights, entries: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn label_id(&self, label: &str) -> u32 {
        self.vocabulary.iter().position(|v| v == label).map_or(u32::MAX, |i| i as u32)
    }

    /// Features for a normalized layout; labels outside the vocabulary never match.
    fn features(&self, layout: &Layout) -> Vec<Feature> {
        layout.elements.iter().map(|e| Feature::from_bbox(self.label_id(&e.label), &e.bbox)).collect()
    }

    /// Add a normalized layout. Returns `false` (and adds nothing) when it has no elements.
    pub fn insert(&mut self, layout: &Layout) -> bool {
        if layout.is_empty() {
            return false;
        }
        let elements = self
            .features(layout)
            .into_iter()
            .map(|f| IndexElement(f.label, f.cx, f.cy, f.w, f.h))
            .collect();
        self.entries.push(IndexEntry { id: layout.id.clone(), elements });
        true
    }

    pub fn entry(&self, id: &str) -> Option<&IndexEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Rebuild an entry as a normalized layout on a canvas of `pixel_size`.
    pub fn layout_of(&self, entry: &IndexEntry, pixel_size: (u32, u32)) -> Layout {
        let elements = entry
            .elements
            .iter()
            .map(|e| {
                let label = self.vocabulary.get(e.0 as usize).cloned().unwrap_or_else(|| "unknown".into());
                Element::new(label, BBox::from_center(e.1, e.2, e.3, e.4))
            })
            .collect();
        let mut layout = Layout::new(entry.id.clone(), Canvas::unit(), elements);
        layout.task_meta.original_size = Some(pixel_size);
        layout
    }
}

/// Index the non-empty normalized layouts of one split.
pub fn build_index(dataset: &CanonicalDataset, split: &str, weights: CostWeights) -> Result<IndexBuild, RetrievalError> {
    weights.validate()?;
    let mut index = RetrievalIndex::new(dataset.manifest.vocabulary.clone(), weights);
    let mut warnings = Vec::new();
    for item in dataset.split(split) {
        if !index.insert(&item.normalized) {
            warnings.push(format!("layout `{}` has no elements; skipped", item.id()));
        }
    }
    if index.is_empty() {
        return Err(RetrievalError::EmptySplit(split.to_string()));
    }
    Ok(IndexBuild { index, warnings })
}

pub fn save_index(index: &RetrievalIndex, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(file, index)?;
    Ok(())
}

pub fn load_index(path: impl AsRef<Path>) -> Result<RetrievalIndex, RetrievalError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let index: RetrievalIndex = serde_json::from_reader(file)?;
    if index.version != INDEX_VERSION {
        return Err(RetrievalError::VersionMismatch { found: index.version, expected: INDEX_VERSION.to_string() });
    }
    Ok(index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone)]
pub struct RetrieveOptions {
    pub k: usize,
    /// Overrides the index's weights when set.
    pub weights: Option<CostWeights>,
    pub scale: f64,
    /// Skip the entry whose id equals the query's id.
    pub exclude_self: bool,
    pub solver: Solver,
}

impl RetrieveOptions {
    pub fn top(k: usize) -> Self {
        Self { k, weights: None, scale: 1.0, exclude_self: false, solver: Solver::Exact }
    }
}

fn rank(a: &RetrievalHit, b: &RetrievalHit) -> Ordering {
    b.similarity.total_cmp(&a.similarity).then_with(|| a.id.cmp(&b.id))
}

/// The `k` most similar entries, by descending similarity then ascending id.
///
/// `query` must be normalized. Scoring runs in parallel over entries; the
/// ranking itself is deterministic.
pub fn topk_retrieve(
    query: &Layout,
    index: &RetrievalIndex,
    options: &RetrieveOptions,
) -> Result<Vec<RetrievalHit>, RetrievalError> {
    if options.k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    if index.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    if query.is_empty() {
        return Err(RetrievalError::EmptyLayout(query.id.clone()));
    }
    let weights = options.weights.unwrap_or(index.weights);
    weights.validate()?;
    let normalized;
    let query = if query.is_normalized() {
        query
    } else {
        normalized = crate::layout::normalize(query)?;
        &normalized
    };
    let q = index.features(query);
    let mut hits: Vec<RetrievalHit> = index
        .entries
        .par_iter()
        .filter(|e| !(options.exclude_self && e.id == query.id))
        .map(|e| {
            let target: Vec<Feature> = e.elements.iter().map(IndexElement::feature).collect();
            let plan = solve_features(&q, &target, &weights, options.solver);
            RetrievalHit { id: e.id.clone(), similarity: similarity_from_distance(plan.cost, options.scale) }
        })
        .collect();
    let k = options.k.min(hits.len());
    if k < hits.len() {
        hits.select_nth_unstable_by(k, rank);
        hits.truncate(k);
    }
    hits.sort_by(rank);
    Ok(hits)
}
