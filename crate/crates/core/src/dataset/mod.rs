//! JSON Lines layout datasets, training-split area statistics and raster input.

mod raster;

pub use raster::{load_raster, read_pgm, save_pgm, write_pgm, RasterError, SaliencyRaster};

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::{self, BBox, Canvas, Element, Layout, TaskMeta};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: label `{label}` is not in the `{dataset}` vocabulary")]
    Vocabulary { line: usize, label: String, dataset: String },
    #[error("duplicate layout id `{0}`")]
    DuplicateId(String),
    #[error("split `{split}` has {actual} records, manifest declares {expected}")]
    SplitCount { split: String, expected: usize, actual: usize },
    #[error("split `{0}` is empty")]
    EmptySplit(String),
    #[error("unknown dataset preset `{0}`")]
    UnknownPreset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ContentAware,
    ConstraintExplicit,
    TextToLayout,
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "content_aware" => Ok(TaskKind::ContentAware),
            "constraint_explicit" => Ok(TaskKind::ConstraintExplicit),
            "text_to_layout" => Ok(TaskKind::TextToLayout),
            other => Err(format!("unknown task kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub task_kind: TaskKind,
    pub vocabulary: Vec<String>,
    #[serde(default)]
    pub split_sizes: BTreeMap<String, usize>,
}

fn labels(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, task_kind: TaskKind, vocabulary: Vec<String>) -> Self {
        Self { name: name.into(), task_kind, vocabulary, split_sizes: BTreeMap::new() }
    }

    /// Built-in manifests for the five public benchmarks (split sizes and vocabulary size).
    pub fn preset(name: &str) -> Result<Self, DatasetError> {
        let (task, vocab, train, test): (TaskKind, Vec<String>, usize, usize) = match name.to_ascii_lowercase().as_str() {
            "pku" => (TaskKind::ContentAware, labels(&["text", "logo", "underlay"]), 9_974, 905),
            "cgl" => (
                TaskKind::ContentAware,
                labels(&["text", "logo", "underlay", "embellishment", "highlighted_text"]),
                38_510,
                1_647,
            ),
            "rico" => (
                TaskKind::ConstraintExplicit,
                labels(&[
                    "text", "image", "icon", "text_button", "list_item", "input", "background_image", "card",
                    "web_view", "radio_button", "drawer", "checkbox", "advertisement", "modal", "pager_indicator",
                    "slider", "on_off_switch", "button_bar", "toolbar", "number_stepper", "multi_tab",
                    "date_picker", "map_view", "video", "bottom_navigation",
                ]),
                31_694,
                3_729,
            ),
            "publaynet" => (TaskKind::ConstraintExplicit, labels(&["text", "title", "list", "table", "figure"]), 311_397, 10_998),
            "webui" => (
                TaskKind::TextToLayout,
                labels(&["text", "link", "button", "title", "description", "image", "background", "logo", "icon", "input"]),
                3_835,
                487,
            ),
            _ => return Err(DatasetError::UnknownPreset(name.to_string())),
        };
        let mut manifest = Self::new(name.to_ascii_lowercase(), task, vocab);
        manifest.split_sizes.insert("train".into(), train);
        manifest.split_sizes.insert("test".into(), test);
        Ok(manifest)
    }
}

/// One line of the interchange format. Boxes are `[left, top, width, height]` in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutRecord {
    pub id: String,
    pub split: String,
    pub canvas: RecordCanvas,
    #[serde(default)]
    pub elements: Vec<RecordElement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saliency: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraints: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordCanvas {
    pub w: u32,
    pub h: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordElement {
    pub label: String,
    pub bbox: [f64; 4],
}

impl LayoutRecord {
    /// Pixel-space layout carrying the record's annotations.
    pub fn to_layout(&self) -> Layout {
        let elements = self
            .elements
            .iter()
            .map(|e| Element::new(e.label.clone(), BBox::new(e.bbox[0], e.bbox[1], e.bbox[2], e.bbox[3])))
            .collect();
        let mut canvas = Canvas::new(self.canvas.w, self.canvas.h);
        canvas.background_ref = self.saliency.clone();
        let mut layout = Layout::new(self.id.clone(), canvas, elements);
        layout.task_meta = TaskMeta {
            original_size: None,
            text: self.text.clone(),
            constraints: self.constraints.clone(),
            saliency: self.saliency.clone(),
            gradient: self.gradient.clone(),
        };
        layout
    }

    pub fn from_layout(layout: &Layout, split: impl Into<String>) -> Self {
        let px = layout.to_pixels();
        Self {
            id: px.id.clone(),
            split: split.into(),
            canvas: RecordCanvas { w: px.canvas.width, h: px.canvas.height },
            elements: px
                .elements
                .iter()
                .map(|e| RecordElement { label: e.label.clone(), bbox: [e.bbox.left, e.bbox.top, e.bbox.width, e.bbox.height] })
                .collect(),
            saliency: px.task_meta.saliency.clone(),
            gradient: px.task_meta.gradient.clone(),
            text: px.task_meta.text.clone(),
            constraints: px.task_meta.constraints.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetItem {
    pub split: String,
    /// Layout as ingested, in pixels.
    pub pixels: Layout,
    pub normalized: Layout,
    /// Fraction of elements passing the validity predicate.
    pub validity: f64,
}

impl DatasetItem {
    pub fn id(&self) -> &str {
        &self.pixels.id
    }
}

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Fail on labels outside the vocabulary instead of dropping them.
    pub strict: bool,
    /// Compare split counts with the manifest's declared sizes.
    pub check_split_sizes: bool,
}

#[derive(Debug, Clone)]
pub struct CanonicalDataset {
    pub manifest: DatasetManifest,
    items: Vec<DatasetItem>,
    by_id: HashMap<String, usize>,
    pub split_counts: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
}

impl CanonicalDataset {
    pub fn empty(manifest: DatasetManifest) -> Self {
        Self { manifest, items: Vec::new(), by_id: HashMap::new(), split_counts: BTreeMap::new(), warnings: Vec::new() }
    }

    pub fn items(&self) -> &[DatasetItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&DatasetItem> {
        self.by_id.get(id).map(|&i| &self.items[i])
    }

    pub fn split<'a>(&'a self, split: &'a str) -> impl Iterator<Item = &'a DatasetItem> + 'a {
        self.items.iter().filter(move |it| it.split == split)
    }

    pub fn push(&mut self, split: impl Into<String>, pixels: Layout) -> Result<(), DatasetError> {
        if self.by_id.contains_key(&pixels.id) {
            return Err(DatasetError::DuplicateId(pixels.id));
        }
        let normalized = layout::normalize(&pixels).map_err(|e| DatasetError::Schema { line: 0, message: e.to_string() })?;
        let validity = layout::validate_layout(&normalized, layout::DEFAULT_MIN_AREA_RATIO).fraction_valid;
        let split = split.into();
        *self.split_counts.entry(split.clone()).or_insert(0) += 1;
        self.by_id.insert(pixels.id.clone(), self.items.len());
        self.items.push(DatasetItem { split, pixels, normalized, validity });
        Ok(())
    }

    /// Write every item back as interchange records, in ingestion order.
    pub fn export<W: Write>(&self, mut out: W) -> Result<(), DatasetError> {
        for item in &self.items {
            serde_json::to_writer(&mut out, &LayoutRecord::from_layout(&item.pixels, item.split.clone()))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Read interchange records into a validated, normalized dataset.
pub fn ingest<R: BufRead>(
    source: R,
    manifest: &DatasetManifest,
    options: &IngestOptions,
) -> Result<CanonicalDataset, DatasetError> {
    let mut dataset = CanonicalDataset::empty(manifest.clone());
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut record: LayoutRecord =
            serde_json::from_str(&line).map_err(|e| DatasetError::Schema { line: line_no, message: e.to_string() })?;
        if record.canvas.w == 0 || record.canvas.h == 0 {
            return Err(DatasetError::Schema { line: line_no, message: "canvas must have positive size".into() });
        }
        if let Some(bad) = record.elements.iter().find(|e| e.bbox.iter().any(|v| !v.is_finite()) || e.bbox[2] < 0.0 || e.bbox[3] < 0.0) {
            return Err(DatasetError::Schema { line: line_no, message: format!("invalid bbox {:?}", bad.bbox) });
        }
        let known = |label: &str| manifest.vocabulary.iter().any(|v| v == label);
        if let Some(bad) = record.elements.iter().find(|e| !known(&e.label)) {
            if options.strict {
                return Err(DatasetError::Vocabulary { line: line_no, label: bad.label.clone(), dataset: manifest.name.clone() });
            }
            let before = record.elements.len();
            record.elements.retain(|e| known(&e.label));
            dataset.warnings.push(format!(
                "line {line_no}: dropped {} element(s) with labels outside the vocabulary",
                before - record.elements.len()
            ));
        }
        let split = record.split.clone();
        dataset.push(split, record.to_layout()).map_err(|e| match e {
            DatasetError::Schema { message, .. } => DatasetError::Schema { line: line_no, message },
            other => other,
        })?;
    }
    if options.check_split_sizes {
        for (split, &expected) in &manifest.split_sizes {
            let actual = dataset.split_counts.get(split).copied().unwrap_or(0);
            if actual != expected {
                return Err(DatasetError::SplitCount { split: split.clone(), expected, actual });
            }
        }
    }
    Ok(dataset)
}

/// Read interchange records from a file.
pub fn ingest_file(
    path: impl AsRef<Path>,
    manifest: &DatasetManifest,
    options: &IngestOptions,
) -> Result<CanonicalDataset, DatasetError> {
    let file = std::fs::File::open(path)?;
    ingest(std::io::BufReader::new(file), manifest, options)
}

/// Per-label mean normalized area over a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AreaStats {
    pub mean_area: BTreeMap<String, f64>,
}

impl AreaStats {
    pub fn get(&self, label: &str) -> Option<f64> {
        self.mean_area.get(label).copied()
    }
}

/// Mean of `width * height` per label over the normalized layouts of `split`.
pub fn compute_area_stats(dataset: &CanonicalDataset, split: &str) -> Result<AreaStats, DatasetError> {
    area_stats_of(dataset.split(split).map(|it| &it.normalized)).ok_or_else(|| DatasetError::EmptySplit(split.into()))
}

/// Area statistics over arbitrary normalized layouts; `None` when no layout is given.
pub fn area_stats_of<'a>(layouts: impl IntoIterator<Item = &'a Layout>) -> Option<AreaStats> {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut seen = false;
    for layout in layouts {
        seen = true;
        for el in &layout.elements {
            let entry = sums.entry(el.label.clone()).or_insert((0.0, 0));
            entry.0 += el.bbox.width * el.bbox.height;
            entry.1 += 1;
        }
    }
    seen.then(|| AreaStats {
        mean_area: sums.into_iter().map(|(label, (sum, n))| (label, sum / n as f64)).collect(),
    })
}
