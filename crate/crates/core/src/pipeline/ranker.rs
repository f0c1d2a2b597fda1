//! Candidate ranking for the coarse step.
//!
//! ```text
//! score_j = -w_align * norm(align_j) - w_overlap * norm(overlap_j) + w_constraint * sat_j
//! ```
//!
//! `norm` is min-max over the candidate set (a constant column maps to 0) and
//! `sat_j` is the fraction of constraint clauses the candidate satisfies.

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::layout::{normalize, BBox, Element, Layout};
use crate::metrics::{alignment, overlap, UNDERLAY};
use crate::prompt::{ConstraintSpec, TaskFamily};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankerWeights {
    pub w_align: f64,
    pub w_overlap: f64,
    pub w_constraint: f64,
}

impl Default for RankerWeights {
    fn default() -> Self {
        Self { w_align: 1.0, w_overlap: 1.0, w_constraint: 1.0 }
    }
}

impl RankerWeights {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let w = [self.w_align, self.w_overlap, self.w_constraint];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().all(|v| *v == 0.0) {
            return Err(PipelineError::Config(format!(
                "ranker weights must be non-negative with at least one positive (got {}, {}, {})",
                self.w_align, self.w_overlap, self.w_constraint
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub alignment: f64,
    pub overlap: f64,
    pub satisfaction: f64,
    pub score: f64,
}

/// Relative size tolerance for sized-element clauses.
const SIZE_TOLERANCE: f64 = 0.1;
/// Pixel tolerance for elements that must stay fixed.
const FIXED_TOLERANCE: f64 = 1.0;

fn count_clauses(layout: &Layout, constraint: &ConstraintSpec, out: &mut Vec<bool>) {
    let want = constraint.categories();
    if want.is_empty() {
        return;
    }
    let have = layout.label_counts();
    for (label, n) in &want {
        out.push(have.get(label) == Some(n));
    }
    out.push(have.keys().all(|l| want.contains_key(l)));
}

/// The `i`-th element (in order) of each label, so constraint indices can be
/// mapped onto candidate elements.
fn occurrence_map<'a>(labels: impl Iterator<Item = &'a str>, layout: &'a Layout) -> Vec<Option<&'a Element>> {
    let mut seen = std::collections::BTreeMap::<&str, usize>::new();
    labels
        .map(|l| {
            let k = seen.entry(l).or_insert(0);
            let found = layout.elements.iter().filter(|e| e.label == l).nth(*k);
            *k += 1;
            found
        })
        .collect()
}

fn close(a: &BBox, b: &BBox) -> bool {
    (a.left - b.left).abs() <= FIXED_TOLERANCE
        && (a.top - b.top).abs() <= FIXED_TOLERANCE
        && (a.width - b.width).abs() <= FIXED_TOLERANCE
        && (a.height - b.height).abs() <= FIXED_TOLERANCE
}

/// Fraction of constraint clauses `layout` satisfies; 1 when there are none.
/// `layout` is compared in its own pixel space.
pub fn constraint_satisfaction(layout: &Layout, constraint: &ConstraintSpec) -> f64 {
    let px = layout.to_pixels();
    let mut clauses = Vec::new();
    match constraint {
        ConstraintSpec::GenT { .. } | ConstraintSpec::TextToLayout { .. } | ConstraintSpec::Refinement { .. } => {
            count_clauses(&px, constraint, &mut clauses)
        }
        ConstraintSpec::GenTs { elements } => {
            count_clauses(&px, constraint, &mut clauses);
            let mut used = vec![false; px.elements.len()];
            for want in elements {
                let hit = px.elements.iter().enumerate().position(|(i, e)| {
                    !used[i]
                        && e.label == want.label
                        && (e.bbox.width - want.width).abs() <= SIZE_TOLERANCE * want.width
                        && (e.bbox.height - want.height).abs() <= SIZE_TOLERANCE * want.height
                });
                if let Some(i) = hit {
                    used[i] = true;
                }
                clauses.push(hit.is_some());
            }
        }
        ConstraintSpec::GenR { elements, relations } => {
            count_clauses(&px, constraint, &mut clauses);
            let mapped = occurrence_map(elements.iter().map(String::as_str), &px);
            for r in relations {
                let ok = match (mapped[r.subject], mapped[r.object]) {
                    (Some(a), Some(b)) => r.relation.holds(&a.bbox, &b.bbox),
                    _ => false,
                };
                clauses.push(ok);
            }
        }
        ConstraintSpec::Completion { partial } => {
            let (pw, ph) = partial.pixel_size();
            let (cw, ch) = px.pixel_size();
            let (sx, sy) = (f64::from(pw) / f64::from(cw), f64::from(ph) / f64::from(ch));
            let mut used = vec![false; px.elements.len()];
            for fixed in &partial.to_pixels().elements {
                let hit = px.elements.iter().enumerate().position(|(i, e)| {
                    !used[i] && e.label == fixed.label && close(&e.bbox.scaled(sx, sy), &fixed.bbox)
                });
                if let Some(i) = hit {
                    used[i] = true;
                }
                clauses.push(hit.is_some());
            }
        }
        ConstraintSpec::ContentAware { categories, .. } => {
            let have = px.label_counts();
            clauses.extend(categories.keys().map(|l| have.contains_key(l)));
        }
    }
    if clauses.is_empty() {
        1.0
    } else {
        clauses.iter().filter(|c| **c).count() as f64 / clauses.len() as f64
    }
}

fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; values.len()]
    }
}

/// Best candidate index and every candidate's score; ties go to the lowest index.
pub fn rank_candidates(
    candidates: &[Layout],
    constraint: &ConstraintSpec,
    weights: &RankerWeights,
) -> Result<(usize, Vec<CandidateScore>), PipelineError> {
    weights.validate()?;
    if candidates.is_empty() || candidates.iter().any(Layout::is_empty) {
        return Err(PipelineError::NoViableCandidate);
    }
    let exclude = if constraint.family() == TaskFamily::ContentAware { vec![UNDERLAY.to_string()] } else { Vec::new() };
    let align: Vec<f64> = candidates
        .iter()
        .map(|c| Ok(alignment(&normalize(c)?)?))
        .collect::<Result<_, PipelineError>>()?;
    let over: Vec<f64> = candidates.iter().map(|c| overlap(&c.to_pixels(), &exclude)).collect();
    let sat: Vec<f64> = candidates.iter().map(|c| constraint_satisfaction(c, constraint)).collect();
    let (na, no) = (min_max(&align), min_max(&over));
    let scores: Vec<CandidateScore> = (0..candidates.len())
        .map(|j| CandidateScore {
            alignment: align[j],
            overlap: over[j],
            satisfaction: sat[j],
            score: -weights.w_align * na[j] - weights.w_overlap * no[j] + weights.w_constraint * sat[j],
        })
        .collect();
    // differences below rounding noise count as ties; the band scales with the
    // weights so multiplying them by a constant never flips the winner
    let tie = 1e-12 * (weights.w_align + weights.w_overlap + weights.w_constraint);
    let mut best = 0;
    for j in 1..scores.len() {
        if scores[j].score > scores[best].score + tie {
            best = j;
        }
    }
    Ok((best, scores))
}
