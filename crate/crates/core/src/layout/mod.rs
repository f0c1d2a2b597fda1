//! Canonical layout types and the operations every other module builds on.
//!
//! A [`Layout`] is an ordered list of labeled boxes on a [`Canvas`]. Layouts
//! live either in pixel space (canvas is the real poster/page size) or in
//! normalized space (canvas is the unit square and the pixel size is kept in
//! [`TaskMeta::original_size`]).

mod html;

pub use html::{parse_html, parse_html_with, to_html, HtmlSnippet, ParseOptions, ParsedLayout};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum element area, as a fraction of the canvas, for an element to count as valid.
pub const DEFAULT_MIN_AREA_RATIO: f64 = 0.001;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayoutError {
    #[error("canvas has zero width or height ({width}x{height})")]
    ZeroCanvas { width: u32, height: u32 },
    #[error("no canvas and no recognizable element found in snippet")]
    ParseFailure,
    #[error("negative {field} ({value}) for element `{label}`")]
    NegativeDimension { label: String, field: &'static str, value: f64 },
    #[error("label `{0}` is not in the vocabulary")]
    UnknownLabel(String),
    #[error("element `{label}` is missing the `{property}` style property")]
    MissingProperty { label: String, property: &'static str },
}

/// Axis-aligned box, left-top origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct BBox {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

/// Overlap of two intervals as `(start, length)`. When one interval lies inside
/// the other its own length is returned, so no rounding creeps in.
fn overlap_1d(a: f64, la: f64, b: f64, lb: f64) -> Option<(f64, f64)> {
    let (ea, eb) = (a + la, b + lb);
    let start = a.max(b);
    let end = ea.min(eb);
    if end <= start {
        return None;
    }
    let len = if a >= b && ea <= eb {
        la
    } else if b >= a && eb <= ea {
        lb
    } else {
        end - start
    };
    Some((start, len))
}

impl BBox {
    pub const fn new(left: f64, top: f64, width: f64, height: f64) -> Self {
        Self { left, top, width, height }
    }

    /// Build from center coordinates and size.
    pub fn from_center(cx: f64, cy: f64, width: f64, height: f64) -> Self {
        Self::new(cx - width / 2.0, cy - height / 2.0, width, height)
    }

    pub fn right(&self) -> f64 {
        self.left + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.top + self.height
    }

    pub fn center_x(&self) -> f64 {
        self.left + self.width / 2.0
    }

    pub fn center_y(&self) -> f64 {
        self.top + self.height / 2.0
    }

    /// Area, treating negative extents as empty.
    pub fn area(&self) -> f64 {
        self.width.max(0.0) * self.height.max(0.0)
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let (left, width) = overlap_1d(self.left, self.width, other.left, other.width)?;
        let (top, height) = overlap_1d(self.top, self.height, other.top, other.height)?;
        Some(BBox::new(left, top, width, height))
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        self.intersection(other).map_or(0.0, |b| b.area())
    }

    pub fn union_area(&self, other: &BBox) -> f64 {
        self.area() + other.area() - self.intersection_area(other)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let union = self.union_area(other);
        if union <= 0.0 {
            0.0
        } else {
            self.intersection_area(other) / union
        }
    }

    /// True when `other` lies entirely inside `self` (shared edges allowed).
    pub fn contains(&self, other: &BBox) -> bool {
        other.left >= self.left
            && other.top >= self.top
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.left && x < self.right() && y >= self.top && y < self.bottom()
    }

    pub fn scaled(&self, sx: f64, sy: f64) -> BBox {
        BBox::new(self.left * sx, self.top * sy, self.width * sx, self.height * sy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub label: String,
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub locked: bool,
}

impl Element {
    pub fn new(label: impl Into<String>, bbox: BBox) -> Self {
        Self { label: label.into(), bbox, locked: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Canvas {
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_ref: Option<String>,
}

impl Canvas {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, background_ref: None }
    }

    pub fn unit() -> Self {
        Self::new(1, 1)
    }

    pub fn area(&self) -> f64 {
        f64::from(self.width) * f64::from(self.height)
    }
}

/// Task annotations carried alongside a layout.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskMeta {
    /// Pixel canvas size before normalization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_size: Option<(u32, u32)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraints: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saliency: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient: Option<String>,
}

impl TaskMeta {
    pub fn is_empty(&self) -> bool {
        *self == TaskMeta::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub id: String,
    pub canvas: Canvas,
    pub elements: Vec<Element>,
    #[serde(default, skip_serializing_if = "TaskMeta::is_empty")]
    pub task_meta: TaskMeta,
}

impl Layout {
    pub fn new(id: impl Into<String>, canvas: Canvas, elements: Vec<Element>) -> Self {
        Self { id: id.into(), canvas, elements, task_meta: TaskMeta::default() }
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    /// A unit canvas marks a normalized layout.
    pub fn is_normalized(&self) -> bool {
        self.canvas.width == 1 && self.canvas.height == 1
    }

    /// Pixel size of the canvas this layout was drawn on.
    pub fn pixel_size(&self) -> (u32, u32) {
        if self.is_normalized() {
            self.task_meta.original_size.unwrap_or((1, 1))
        } else {
            (self.canvas.width, self.canvas.height)
        }
    }

    /// Map back to pixel space; pixel layouts are returned unchanged.
    pub fn to_pixels(&self) -> Layout {
        if !self.is_normalized() {
            return self.clone();
        }
        let (w, h) = self.pixel_size();
        let mut out = self.clone();
        out.canvas.width = w;
        out.canvas.height = h;
        for el in &mut out.elements {
            el.bbox = el.bbox.scaled(f64::from(w), f64::from(h));
        }
        out
    }

    /// Count of elements per label, sorted by label.
    pub fn label_counts(&self) -> std::collections::BTreeMap<String, usize> {
        let mut counts = std::collections::BTreeMap::new();
        for el in &self.elements {
            *counts.entry(el.label.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// Same canvas size and element list; ids and annotations are ignored.
    pub fn same_geometry(&self, other: &Layout) -> bool {
        self.canvas.width == other.canvas.width
            && self.canvas.height == other.canvas.height
            && self.elements.len() == other.elements.len()
            && self
                .elements
                .iter()
                .zip(&other.elements)
                .all(|(a, b)| a.label == b.label && a.bbox == b.bbox)
    }
}

/// Divide every box by the canvas size; the canvas becomes the unit square.
pub fn normalize(layout: &Layout) -> Result<Layout, LayoutError> {
    let Canvas { width, height, .. } = layout.canvas;
    if width == 0 || height == 0 {
        return Err(LayoutError::ZeroCanvas { width, height });
    }
    if layout.is_normalized() {
        return Ok(layout.clone());
    }
    let mut out = layout.clone();
    out.canvas.width = 1;
    out.canvas.height = 1;
    out.task_meta.original_size = Some((width, height));
    for el in &mut out.elements {
        let b = el.bbox;
        el.bbox = BBox::new(
            b.left / f64::from(width),
            b.top / f64::from(height),
            b.width / f64::from(width),
            b.height / f64::from(height),
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: Vec<bool>,
    pub fraction_valid: f64,
}

impl ValidationReport {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Flag elements that are too small or fall outside the canvas.
///
/// Expects a normalized layout. An empty layout reports a fraction of 1.0.
pub fn validate_layout(layout: &Layout, min_area_ratio: f64) -> ValidationReport {
    let unit = BBox::new(0.0, 0.0, 1.0, 1.0);
    let valid: Vec<bool> = layout
        .elements
        .iter()
        .map(|el| el.bbox.area() >= min_area_ratio && unit.intersection_area(&el.bbox) > 0.0)
        .collect();
    let fraction_valid = if valid.is_empty() {
        1.0
    } else {
        valid.iter().filter(|v| **v).count() as f64 / valid.len() as f64
    };
    ValidationReport { valid, fraction_valid }
}
