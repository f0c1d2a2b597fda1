//! Layout similarity from optimal transport, and top-K exemplar retrieval.
//!
//! Two layouts are compared by moving uniform mass from the elements of one
//! onto the elements of the other. Moving element `e` onto `f` costs
//!
//! ```text
//! mu(e, f) = w_geo * (|dcx| + |dcy| + |dw| + |dh|) / 4 + w_label * [label(e) != label(f)]
//! ```
//!
//! on normalized coordinates, the distance `D` is the cheapest total cost and
//! the similarity is `exp(-scale * D)`.

mod index;
pub mod transport;

pub use index::{
    build_index, load_index, save_index, topk_retrieve, IndexBuild, IndexElement, IndexEntry, RetrievalHit,
    RetrievalIndex, RetrieveOptions, INDEX_VERSION,
};
pub use transport::TransportPlan;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::AreaStats;
use crate::layout::{self, BBox, Canvas, Element, Layout};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("layout `{0}` has no elements; transport distance is undefined")]
    EmptyLayout(String),
    #[error("retrieval index is empty")]
    EmptyIndex,
    #[error("split `{0}` has no usable layouts")]
    EmptySplit(String),
    #[error("index version `{found}` is not supported (expected `{expected}`)")]
    VersionMismatch { found: String, expected: String },
    #[error("cost weights must be non-negative and sum to 1 (got {w_geo}, {w_label})")]
    InvalidWeights { w_geo: f64, w_label: f64 },
    #[error("k must be at least 1")]
    InvalidK,
    #[error(transparent)]
    Layout(#[from] layout::LayoutError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub w_geo: f64,
    pub w_label: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { w_geo: 0.5, w_label: 0.5 }
    }
}

impl CostWeights {
    pub fn new(w_geo: f64, w_label: f64) -> Result<Self, RetrievalError> {
        let w = Self { w_geo, w_label };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        let ok = self.w_geo >= 0.0 && self.w_label >= 0.0 && (self.w_geo + self.w_label - 1.0).abs() < 1e-12;
        if ok {
            Ok(())
        } else {
            Err(RetrievalError::InvalidWeights { w_geo: self.w_geo, w_label: self.w_label })
        }
    }
}

/// How the transport problem is solved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Solver {
    /// Min-cost flow on the integer-scaled problem.
    #[default]
    Exact,
    /// Entropic approximation; cheaper on large layouts, not exact.
    Sinkhorn { epsilon: f64, max_iter: usize },
}

impl Solver {
    pub fn sinkhorn_default() -> Self {
        Solver::Sinkhorn { epsilon: 0.01, max_iter: 1000 }
    }
}

/// Element in the compact form used for matching: label id plus clamped
/// center/size in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Feature {
    pub label: u32,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Feature {
    pub(crate) fn from_bbox(label: u32, b: &BBox) -> Self {
        let c = |v: f64| v.clamp(0.0, 1.0);
        Self { label, cx: c(b.center_x()), cy: c(b.center_y()), w: c(b.width), h: c(b.height) }
    }
}

pub(crate) fn feature_cost(a: &Feature, b: &Feature, weights: &CostWeights) -> f64 {
    let geo = ((a.cx - b.cx).abs() + (a.cy - b.cy).abs() + (a.w - b.w).abs() + (a.h - b.h).abs()) / 4.0;
    let label = if a.label == b.label { 0.0 } else { 1.0 };
    weights.w_geo * geo + weights.w_label * label
}

/// Cost of matching two normalized elements, in `[0, 1]`.
pub fn element_cost(a: &Element, b: &Element, weights: &CostWeights) -> f64 {
    let same = u32::from(a.label != b.label);
    feature_cost(&Feature::from_bbox(0, &a.bbox), &Feature::from_bbox(same, &b.bbox), weights)
}

pub(crate) fn solve_features(a: &[Feature], b: &[Feature], weights: &CostWeights, solver: Solver) -> TransportPlan {
    let cost: Vec<f64> = a.iter().flat_map(|x| b.iter().map(move |y| feature_cost(x, y, weights))).collect();
    match solver {
        Solver::Exact => transport::solve_exact(&cost, a.len(), b.len()),
        Solver::Sinkhorn { epsilon, max_iter } => transport::solve_sinkhorn(&cost, a.len(), b.len(), epsilon, max_iter, 1e-9),
    }
}

fn normalized(layout: &Layout) -> Result<std::borrow::Cow<'_, Layout>, RetrievalError> {
    if layout.is_normalized() {
        Ok(std::borrow::Cow::Borrowed(layout))
    } else {
        Ok(std::borrow::Cow::Owned(layout::normalize(layout)?))
    }
}

/// Features of both layouts with labels interned over their union.
fn paired_features(a: &Layout, b: &Layout) -> Result<(Vec<Feature>, Vec<Feature>), RetrievalError> {
    for l in [a, b] {
        if l.is_empty() {
            return Err(RetrievalError::EmptyLayout(l.id.clone()));
        }
    }
    let (a, b) = (normalized(a)?, normalized(b)?);
    let mut labels: Vec<String> = Vec::new();
    let mut intern = |label: &str| -> u32 {
        match labels.iter().position(|l| l == label) {
            Some(i) => i as u32,
            None => {
                labels.push(label.to_string());
                (labels.len() - 1) as u32
            }
        }
    };
    let fa: Vec<Feature> = a.elements.iter().map(|e| Feature::from_bbox(intern(&e.label), &e.bbox)).collect();
    let fb: Vec<Feature> = b.elements.iter().map(|e| Feature::from_bbox(intern(&e.label), &e.bbox)).collect();
    Ok((fa, fb))
}

/// Optimal plan between two layouts under uniform element masses.
pub fn transport_distance(a: &Layout, b: &Layout, weights: &CostWeights) -> Result<TransportPlan, RetrievalError> {
    transport_distance_with(a, b, weights, Solver::Exact)
}

pub fn transport_distance_with(
    a: &Layout,
    b: &Layout,
    weights: &CostWeights,
    solver: Solver,
) -> Result<TransportPlan, RetrievalError> {
    weights.validate()?;
    let (fa, fb) = paired_features(a, b)?;
    Ok(solve_features(&fa, &fb, weights, solver))
}

/// `exp(-scale * D)` in `(0, 1]`.
pub fn similarity_from_distance(distance: f64, scale: f64) -> f64 {
    (-scale * distance).exp()
}

pub fn ltsim_score(a: &Layout, b: &Layout, weights: &CostWeights, scale: f64) -> Result<f64, RetrievalError> {
    Ok(similarity_from_distance(transport_distance(a, b, weights)?.cost, scale))
}

/// Stand-in query for a layout with no elements: one centered square per
/// requested element, sized by the label's mean training area.
pub fn pseudo_query(id: &str, categories: &BTreeMap<String, usize>, stats: &AreaStats, original_size: (u32, u32)) -> Layout {
    let fallback = if stats.mean_area.is_empty() {
        0.01
    } else {
        stats.mean_area.values().sum::<f64>() / stats.mean_area.len() as f64
    };
    let elements = categories
        .iter()
        .flat_map(|(label, &count)| {
            let side = stats.get(label).unwrap_or(fallback).sqrt().min(1.0);
            std::iter::repeat_n(Element::new(label.clone(), BBox::from_center(0.5, 0.5, side, side)), count)
        })
        .collect();
    let mut layout = Layout::new(id, Canvas::unit(), elements);
    layout.task_meta.original_size = Some(original_size);
    layout
}

#[cfg(test)]
mod tests {
    use super::*;

    fn el(label: &str, l: f64, t: f64, w: f64, h: f64) -> Element {
        Element::new(label, BBox::new(l, t, w, h))
    }

    fn unit(elements: Vec<Element>) -> Layout {
        Layout::new("q", Canvas::unit(), elements)
    }

    #[test]
    fn element_cost_cases() {
        let w = CostWeights::default();
        let a = el("text", 0.1, 0.2, 0.3, 0.4);
        assert_eq!(element_cost(&a, &a, &w), 0.0);
        assert_eq!(element_cost(&a, &el("logo", 0.1, 0.2, 0.3, 0.4), &w), 0.5);
        let shifted = el("text", 0.5, 0.2, 0.3, 0.4);
        assert!((element_cost(&a, &shifted, &w) - 0.05).abs() < 1e-15);
        assert_eq!(element_cost(&a, &shifted, &w), element_cost(&shifted, &a, &w));
    }

    #[test]
    fn identical_layouts_have_zero_distance() {
        let l = unit(vec![el("text", 0.1, 0.1, 0.3, 0.1), el("logo", 0.6, 0.1, 0.2, 0.2), el("text", 0.1, 0.5, 0.3, 0.1)]);
        let plan = transport_distance(&l, &l, &CostWeights::default()).unwrap();
        assert_eq!(plan.cost, 0.0);
        assert_eq!(ltsim_score(&l, &l, &CostWeights::default(), 1.0).unwrap(), 1.0);
    }

    #[test]
    fn single_elements_forced_plan() {
        let a = unit(vec![el("text", 0.1, 0.1, 0.3, 0.1)]);
        let b = unit(vec![el("logo", 0.1, 0.1, 0.3, 0.1)]);
        let plan = transport_distance(&a, &b, &CostWeights::default()).unwrap();
        assert_eq!(plan.mass, vec![1.0]);
        assert_eq!(plan.cost, 0.5);
        let s = ltsim_score(&a, &b, &CostWeights::default(), 1.0).unwrap();
        assert!((s - 0.606_530_659_712_633_4).abs() < 1e-15);
        let s2 = ltsim_score(&a, &b, &CostWeights::default(), 2.0).unwrap();
        assert!((s2.ln() - 2.0 * s.ln()).abs() < 1e-15);
    }

    #[test]
    fn empty_layout_is_error() {
        let a = unit(vec![]);
        let b = unit(vec![el("text", 0.0, 0.0, 0.1, 0.1)]);
        assert!(matches!(transport_distance(&a, &b, &CostWeights::default()), Err(RetrievalError::EmptyLayout(_))));
    }

    #[test]
    fn weights_must_sum_to_one() {
        assert!(CostWeights::new(0.7, 0.3).is_ok());
        assert!(CostWeights::new(0.7, 0.7).is_err());
        assert!(CostWeights::new(-0.5, 1.5).is_err());
    }

    #[test]
    fn pixel_layouts_are_normalized_first() {
        let a = Layout::new("a", Canvas::new(200, 100), vec![el("text", 20.0, 10.0, 100.0, 50.0)]);
        let b = unit(vec![el("text", 0.1, 0.1, 0.5, 0.5)]);
        assert_eq!(transport_distance(&a, &b, &CostWeights::default()).unwrap().cost, 0.0);
    }

    #[test]
    fn pseudo_query_uses_mean_areas() {
        let stats = AreaStats { mean_area: [("text".to_string(), 0.04), ("logo".to_string(), 0.01)].into() };
        let cats: BTreeMap<String, usize> = [("text".to_string(), 2), ("logo".to_string(), 1)].into();
        let q = pseudo_query("p", &cats, &stats, (513, 750));
        assert_eq!(q.len(), 3);
        let text = q.elements.iter().find(|e| e.label == "text").unwrap();
        assert!((text.bbox.area() - 0.04).abs() < 1e-15);
        assert!((text.bbox.center_x() - 0.5).abs() < 1e-15);
    }
}
