//! Metrics computed from box geometry alone.

use std::collections::BTreeMap;

use super::{assignment, MetricError};
use crate::layout::{BBox, Layout};

pub const UNDERLAY: &str = "underlay";

fn anchors(b: &BBox) -> [f64; 6] {
    [b.left, b.center_x(), b.right(), b.top, b.center_y(), b.bottom()]
}

/// Mean over elements of the smallest gap between one of its six anchors
/// (left, x-center, right, top, y-center, bottom) and the same anchor of any
/// other element. A single element scores 0.
pub fn alignment(layout: &Layout) -> Result<f64, MetricError> {
    if layout.is_empty() {
        return Err(MetricError::EmptyLayout(layout.id.clone()));
    }
    let n = layout.len();
    if n == 1 {
        return Ok(0.0);
    }
    let anchors: Vec<[f64; 6]> = layout.elements.iter().map(|e| anchors(&e.bbox)).collect();
    let total: f64 = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .flat_map(|j| (0..6).map(move |k| (j, k)))
                .map(|(j, k)| (anchors[i][k] - anchors[j][k]).abs())
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(total / n as f64)
}

/// Summed pairwise intersection area over summed element area, ignoring
/// elements whose label is in `exclude_labels`.
pub fn overlap(layout: &Layout, exclude_labels: &[String]) -> f64 {
    let boxes: Vec<&BBox> = layout
        .elements
        .iter()
        .filter(|e| !exclude_labels.contains(&e.label))
        .map(|e| &e.bbox)
        .collect();
    if boxes.len() < 2 {
        return 0.0;
    }
    let area: f64 = boxes.iter().map(|b| b.area()).sum();
    if area <= 0.0 {
        return 0.0;
    }
    let mut inter = 0.0;
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            inter += boxes[i].intersection_area(boxes[j]);
        }
    }
    inter / area
}

/// Mean IoU under the best label-preserving one-to-one matching. The mean is
/// taken over the larger of the two element counts, so unmatched elements
/// count as zero.
pub fn max_iou(generated: &Layout, reference: &Layout) -> Result<f64, MetricError> {
    for l in [generated, reference] {
        if l.is_empty() {
            return Err(MetricError::EmptyLayout(l.id.clone()));
        }
    }
    let mut groups: BTreeMap<&str, (Vec<&BBox>, Vec<&BBox>)> = BTreeMap::new();
    for e in &generated.elements {
        groups.entry(&e.label).or_default().0.push(&e.bbox);
    }
    for e in &reference.elements {
        groups.entry(&e.label).or_default().1.push(&e.bbox);
    }
    let mut total = 0.0;
    for (gen, refs) in groups.values() {
        let weights: Vec<f64> = gen.iter().flat_map(|g| refs.iter().map(move |r| g.iou(r))).collect();
        total += assignment::max_weight_matching(&weights, gen.len(), refs.len());
    }
    Ok(total / generated.len().max(reference.len()) as f64)
}

fn split_underlays(layout: &Layout) -> (Vec<&BBox>, Vec<&BBox>) {
    let mut under = Vec::new();
    let mut content = Vec::new();
    for e in &layout.elements {
        if e.label == UNDERLAY {
            under.push(&e.bbox);
        } else {
            content.push(&e.bbox);
        }
    }
    (under, content)
}

/// Mean over underlays of the best fraction of a content element's area it
/// covers. `None` when the layout has no underlay.
pub fn underlay_loose(layout: &Layout) -> Option<f64> {
    let (under, content) = split_underlays(layout);
    if under.is_empty() {
        return None;
    }
    let total: f64 = under
        .iter()
        .map(|u| {
            content
                .iter()
                .filter(|e| e.area() > 0.0)
                .map(|e| e.intersection_area(u) / e.area())
                .fold(0.0, f64::max)
        })
        .sum();
    Some(total / under.len() as f64)
}

/// Fraction of underlays that fully contain at least one content element.
/// `None` when the layout has no underlay.
pub fn underlay_strict(layout: &Layout) -> Option<f64> {
    let (under, content) = split_underlays(layout);
    if under.is_empty() {
        return None;
    }
    let hits = under.iter().filter(|u| content.iter().any(|e| u.contains(e))).count();
    Some(hits as f64 / under.len() as f64)
}
