use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PromptError;
use crate::layout::{to_html, BBox, Canvas, Element, Layout};

/// Task family; selects the template set and the constraint shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFamily {
    ContentAware,
    GenT,
    GenTs,
    GenR,
    Completion,
    Refinement,
    TextToLayout,
}

impl TaskFamily {
    pub const ALL: [TaskFamily; 7] = [
        TaskFamily::ContentAware,
        TaskFamily::GenT,
        TaskFamily::GenTs,
        TaskFamily::GenR,
        TaskFamily::Completion,
        TaskFamily::Refinement,
        TaskFamily::TextToLayout,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskFamily::ContentAware => "content_aware",
            TaskFamily::GenT => "gen_t",
            TaskFamily::GenTs => "gen_ts",
            TaskFamily::GenR => "gen_r",
            TaskFamily::Completion => "completion",
            TaskFamily::Refinement => "refinement",
            TaskFamily::TextToLayout => "text_to_layout",
        }
    }
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskFamily {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        TaskFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == key)
            .ok_or_else(|| PromptError::UnknownTemplate(format!("unknown task family `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    Above,
    Below,
    LeftOf,
    RightOf,
    Larger,
    Smaller,
    Equal,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Above => "above",
            Relation::Below => "below",
            Relation::LeftOf => "left-of",
            Relation::RightOf => "right-of",
            Relation::Larger => "larger",
            Relation::Smaller => "smaller",
            Relation::Equal => "equal",
        }
    }

    /// Whether `a` stands in this relation to `b`. Positional relations
    /// require the boxes to be fully separated on that axis; size relations
    /// compare areas with a 10% band for `equal`.
    pub fn holds(self, a: &BBox, b: &BBox) -> bool {
        let ratio = if b.area() > 0.0 { a.area() / b.area() } else { f64::INFINITY };
        match self {
            Relation::Above => a.bottom() <= b.top,
            Relation::Below => a.top >= b.bottom(),
            Relation::LeftOf => a.right() <= b.left,
            Relation::RightOf => a.left >= b.right(),
            Relation::Larger => ratio > SIZE_BAND,
            Relation::Smaller => ratio < 1.0 / SIZE_BAND,
            Relation::Equal => (1.0 / SIZE_BAND..=SIZE_BAND).contains(&ratio),
        }
    }

    /// The relation observed between two boxes, positional first.
    pub fn observe(a: &BBox, b: &BBox) -> Relation {
        [
            Relation::Above,
            Relation::Below,
            Relation::LeftOf,
            Relation::RightOf,
            Relation::Larger,
            Relation::Smaller,
        ]
        .into_iter()
        .find(|r| r.holds(a, b))
        .unwrap_or(Relation::Equal)
    }
}

const SIZE_BAND: f64 = 1.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationTriple {
    pub subject: usize,
    pub relation: Relation,
    pub object: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizedElement {
    pub label: String,
    /// Pixels on the query canvas.
    pub width: f64,
    pub height: f64,
}

/// User-side constraint `c` for one generation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintSpec {
    GenT { categories: BTreeMap<String, usize> },
    GenTs { elements: Vec<SizedElement> },
    GenR { elements: Vec<String>, relations: Vec<RelationTriple> },
    Completion { partial: Layout },
    Refinement { noisy: Layout },
    ContentAware { canvas: (u32, u32), categories: BTreeMap<String, usize> },
    TextToLayout { text: String, categories: BTreeMap<String, usize> },
}

fn invalid(msg: impl Into<String>) -> PromptError {
    PromptError::InvalidPayload(msg.into())
}

fn check_counts(categories: &BTreeMap<String, usize>) -> Result<(), PromptError> {
    if categories.is_empty() {
        return Err(invalid("no categories given"));
    }
    if let Some((label, _)) = categories.iter().find(|(l, &c)| c == 0 || l.trim().is_empty()) {
        return Err(invalid(format!("category `{label}` must be a non-empty label with a positive count")));
    }
    Ok(())
}

fn check_layout(what: &str, layout: &Layout) -> Result<(), PromptError> {
    if layout.is_empty() {
        return Err(invalid(format!("{what} layout has no elements")));
    }
    if layout.canvas.width == 0 || layout.canvas.height == 0 {
        return Err(invalid(format!("{what} layout has a zero-sized canvas")));
    }
    Ok(())
}

fn counts<'a>(labels: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for l in labels {
        *out.entry(l.to_string()).or_insert(0) += 1;
    }
    out
}

impl ConstraintSpec {
    pub fn family(&self) -> TaskFamily {
        match self {
            ConstraintSpec::GenT { .. } => TaskFamily::GenT,
            ConstraintSpec::GenTs { .. } => TaskFamily::GenTs,
            ConstraintSpec::GenR { .. } => TaskFamily::GenR,
            ConstraintSpec::Completion { .. } => TaskFamily::Completion,
            ConstraintSpec::Refinement { .. } => TaskFamily::Refinement,
            ConstraintSpec::ContentAware { .. } => TaskFamily::ContentAware,
            ConstraintSpec::TextToLayout { .. } => TaskFamily::TextToLayout,
        }
    }

    /// Parse and validate in one step.
    pub fn from_json(value: serde_json::Value) -> Result<Self, PromptError> {
        let spec: ConstraintSpec = serde_json::from_value(value).map_err(|e| invalid(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        match self {
            ConstraintSpec::GenT { categories } => check_counts(categories),
            ConstraintSpec::GenTs { elements } => {
                if elements.is_empty() {
                    return Err(invalid("gen_ts needs at least one element"));
                }
                for e in elements {
                    if e.label.trim().is_empty() || !(e.width > 0.0 && e.height > 0.0) || !e.width.is_finite() || !e.height.is_finite() {
                        return Err(invalid(format!("element `{}` needs a label and positive finite size", e.label)));
                    }
                }
                Ok(())
            }
            ConstraintSpec::GenR { elements, relations } => {
                if elements.is_empty() {
                    return Err(invalid("gen_r needs at least one element"));
                }
                for r in relations {
                    if r.subject >= elements.len() || r.object >= elements.len() || r.subject == r.object {
                        return Err(invalid(format!(
                            "relation {} {} {} does not name two distinct elements of {}",
                            r.subject,
                            r.relation.as_str(),
                            r.object,
                            elements.len()
                        )));
                    }
                }
                Ok(())
            }
            ConstraintSpec::Completion { partial } => check_layout("partial", partial),
            ConstraintSpec::Refinement { noisy } => check_layout("noisy", noisy),
            ConstraintSpec::ContentAware { canvas, categories } => {
                if canvas.0 == 0 || canvas.1 == 0 {
                    return Err(invalid("content_aware canvas must be non-zero"));
                }
                check_counts(categories)
            }
            ConstraintSpec::TextToLayout { text, categories } => {
                if text.trim().is_empty() {
                    return Err(invalid("text_to_layout needs a description"));
                }
                if categories.values().any(|&c| c == 0) {
                    return Err(invalid("category counts must be positive"));
                }
                Ok(())
            }
        }
    }

    /// Requested label multiset.
    pub fn categories(&self) -> BTreeMap<String, usize> {
        match self {
            ConstraintSpec::GenT { categories }
            | ConstraintSpec::ContentAware { categories, .. }
            | ConstraintSpec::TextToLayout { categories, .. } => categories.clone(),
            ConstraintSpec::GenTs { elements } => counts(elements.iter().map(|e| e.label.as_str())),
            ConstraintSpec::GenR { elements, .. } => counts(elements.iter().map(String::as_str)),
            ConstraintSpec::Completion { partial: l } | ConstraintSpec::Refinement { noisy: l } => l.label_counts(),
        }
    }

    /// Build the constraint a ground-truth layout satisfies. `layout` must be
    /// in pixel space. The seed drives relation sampling and refinement noise.
    pub fn derive(family: TaskFamily, layout: &Layout, seed: u64) -> Result<Self, PromptError> {
        let px = layout.to_pixels();
        let spec = match family {
            TaskFamily::GenT => ConstraintSpec::GenT { categories: px.label_counts() },
            TaskFamily::GenTs => ConstraintSpec::GenTs {
                elements: px
                    .elements
                    .iter()
                    .map(|e| SizedElement { label: e.label.clone(), width: e.bbox.width.round(), height: e.bbox.height.round() })
                    .collect(),
            },
            TaskFamily::GenR => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n = px.elements.len();
                let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
                let take = n.min(pairs.len());
                let mut chosen: Vec<usize> = sample(&mut rng, pairs.len(), take).into_vec();
                chosen.sort_unstable();
                let picked: Vec<(usize, usize)> = chosen.into_iter().map(|i| pairs[i]).collect();
                ConstraintSpec::GenR {
                    elements: px.elements.iter().map(|e| e.label.clone()).collect(),
                    relations: picked
                        .into_iter()
                        .map(|(i, j)| RelationTriple {
                            subject: i,
                            relation: Relation::observe(&px.elements[i].bbox, &px.elements[j].bbox),
                            object: j,
                        })
                        .collect(),
                }
            }
            TaskFamily::Completion => {
                let keep = px.elements.len().div_ceil(5);
                let mut partial = Layout::new(px.id.clone(), px.canvas.clone(), px.elements[..keep].to_vec());
                partial.task_meta.original_size = None;
                ConstraintSpec::Completion { partial }
            }
            TaskFamily::Refinement => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let noise = Normal::new(0.0, NOISE_STD).expect("valid std");
                let (w, h) = (f64::from(px.canvas.width), f64::from(px.canvas.height));
                let elements = px
                    .elements
                    .iter()
                    .map(|e| {
                        let b = e.bbox;
                        let mut jitter = |v: f64, scale: f64| ((v / scale + noise.sample(&mut rng)) * scale).round();
                        let left = jitter(b.left, w).clamp(0.0, w - 1.0);
                        let top = jitter(b.top, h).clamp(0.0, h - 1.0);
                        let width = jitter(b.width, w).max(1.0);
                        let height = jitter(b.height, h).max(1.0);
                        Element::new(e.label.clone(), BBox::new(left, top, width, height))
                    })
                    .collect();
                ConstraintSpec::Refinement { noisy: Layout::new(px.id.clone(), px.canvas.clone(), elements) }
            }
            TaskFamily::ContentAware => {
                ConstraintSpec::ContentAware { canvas: (px.canvas.width, px.canvas.height), categories: px.label_counts() }
            }
            TaskFamily::TextToLayout => ConstraintSpec::TextToLayout {
                text: layout.task_meta.text.clone().ok_or_else(|| invalid(format!("layout `{}` has no text description", layout.id)))?,
                categories: px.label_counts(),
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Elements that must survive unchanged into the output.
    pub fn fixed_elements(&self) -> &[Element] {
        match self {
            ConstraintSpec::Completion { partial } => &partial.elements,
            _ => &[],
        }
    }

    /// Canvas the request is drawn on, when the constraint fixes one.
    pub fn canvas(&self) -> Option<Canvas> {
        match self {
            ConstraintSpec::ContentAware { canvas, .. } => Some(Canvas::new(canvas.0, canvas.1)),
            ConstraintSpec::Completion { partial: l } | ConstraintSpec::Refinement { noisy: l } => {
                let (w, h) = l.pixel_size();
                Some(Canvas::new(w, h))
            }
            _ => None,
        }
    }
}

/// Standard deviation of refinement noise, in canvas units.
const NOISE_STD: f64 = 0.01;

fn count_lines(out: &mut String, categories: &BTreeMap<String, usize>) {
    let total: usize = categories.values().sum();
    write!(out, "Total elements: {total}").unwrap();
    for (label, n) in categories {
        write!(out, "\n{label}: {n}").unwrap();
    }
}

/// Canonical text block for a constraint.
pub fn render_constraint(spec: &ConstraintSpec) -> Result<String, PromptError> {
    spec.validate()?;
    let mut out = String::new();
    match spec {
        ConstraintSpec::GenT { categories } => count_lines(&mut out, categories),
        ConstraintSpec::GenTs { elements } => {
            count_lines(&mut out, &spec.categories());
            for (i, e) in elements.iter().enumerate() {
                write!(out, "\nelement {i}: {}, width {}px, height {}px", e.label, e.width, e.height).unwrap();
            }
        }
        ConstraintSpec::GenR { elements, relations } => {
            count_lines(&mut out, &spec.categories());
            if !relations.is_empty() {
                for (i, label) in elements.iter().enumerate() {
                    write!(out, "\nelement {i}: {label}").unwrap();
                }
                for r in relations {
                    write!(
                        out,
                        "\nrelation: element {} ({}) {} element {} ({})",
                        r.subject,
                        elements[r.subject],
                        r.relation.as_str(),
                        r.object,
                        elements[r.object]
                    )
                    .unwrap();
                }
            }
        }
        ConstraintSpec::Completion { partial } => {
            write!(out, "Partial layout to complete (keep these elements unchanged):\n{}", to_html(partial)).unwrap();
        }
        ConstraintSpec::Refinement { noisy } => {
            write!(out, "Noisy layout to refine:\n{}", to_html(noisy)).unwrap();
        }
        ConstraintSpec::ContentAware { canvas, categories } => {
            writeln!(out, "Canvas: {}x{}px", canvas.0, canvas.1).unwrap();
            count_lines(&mut out, categories);
        }
        ConstraintSpec::TextToLayout { text, .. } => out.push_str(text),
    }
    Ok(out)
}

/// Hex SHA-256 of the canonical rendering.
pub fn constraint_digest(spec: &ConstraintSpec) -> Result<String, PromptError> {
    Ok(hex::encode(Sha256::digest(render_constraint(spec)?.as_bytes())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cats(pairs: &[(&str, usize)]) -> BTreeMap<String, usize> {
        pairs.iter().map(|(l, c)| (l.to_string(), *c)).collect()
    }

    fn poster() -> Layout {
        Layout::new(
            "p",
            Canvas::new(100, 200),
            vec![
                Element::new("title", BBox::new(10.0, 10.0, 80.0, 20.0)),
                Element::new("text", BBox::new(10.0, 40.0, 80.0, 30.0)),
                Element::new("text", BBox::new(10.0, 80.0, 40.0, 30.0)),
            ],
        )
    }

    #[test]
    fn gen_t_lists_counts() {
        let r = render_constraint(&ConstraintSpec::GenT { categories: cats(&[("text", 2), ("title", 1)]) }).unwrap();
        assert_eq!(r, "Total elements: 3\ntext: 2\ntitle: 1");
        assert_eq!(r.lines().count(), 3);
    }

    #[test]
    fn empty_relations_render_like_gen_t() {
        let gen_r = ConstraintSpec::GenR { elements: vec!["text".into(), "title".into(), "text".into()], relations: vec![] };
        let gen_t = ConstraintSpec::GenT { categories: cats(&[("text", 2), ("title", 1)]) };
        assert_eq!(render_constraint(&gen_r).unwrap(), render_constraint(&gen_t).unwrap());
    }

    #[test]
    fn relations_are_listed() {
        let spec = ConstraintSpec::GenR {
            elements: vec!["title".into(), "text".into()],
            relations: vec![RelationTriple { subject: 0, relation: Relation::Above, object: 1 }],
        };
        let r = render_constraint(&spec).unwrap();
        assert!(r.ends_with("relation: element 0 (title) above element 1 (text)"));
        let bad = ConstraintSpec::GenR {
            elements: vec!["title".into()],
            relations: vec![RelationTriple { subject: 0, relation: Relation::Above, object: 0 }],
        };
        assert!(matches!(render_constraint(&bad), Err(PromptError::InvalidPayload(_))));
    }

    #[test]
    fn completion_embeds_partial() {
        let spec = ConstraintSpec::derive(TaskFamily::Completion, &poster(), 0).unwrap();
        let r = render_constraint(&spec).unwrap();
        assert_eq!(r.matches("<div").count(), 2, "canvas div plus one fixed element");
        assert!(r.contains(r#"<div class="title" style="left:10px; top:10px; width:80px; height:20px"></div>"#));
    }

    #[test]
    fn payload_shape_is_checked() {
        assert!(ConstraintSpec::from_json(serde_json::json!({"kind": "gen_t", "categories": {}})).is_err());
        assert!(ConstraintSpec::from_json(serde_json::json!({"kind": "gen_t", "elements": []})).is_err());
        assert!(ConstraintSpec::from_json(serde_json::json!({"kind": "text_to_layout", "text": " ", "categories": {}})).is_err());
        let ok = ConstraintSpec::from_json(serde_json::json!({"kind": "content_aware", "canvas": [513, 750], "categories": {"logo": 1}}))
            .unwrap();
        assert_eq!(ok.family(), TaskFamily::ContentAware);
        assert_eq!(render_constraint(&ok).unwrap(), "Canvas: 513x750px\nTotal elements: 1\nlogo: 1");
    }

    #[test]
    fn derive_is_seeded() {
        let l = poster();
        for fam in TaskFamily::ALL {
            if fam == TaskFamily::TextToLayout {
                assert!(ConstraintSpec::derive(fam, &l, 3).is_err());
                continue;
            }
            let a = ConstraintSpec::derive(fam, &l, 3).unwrap();
            assert_eq!(a, ConstraintSpec::derive(fam, &l, 3).unwrap());
            assert_eq!(a.family(), fam);
        }
        let ConstraintSpec::GenR { relations, .. } = ConstraintSpec::derive(TaskFamily::GenR, &l, 1).unwrap() else {
            unreachable!()
        };
        for r in relations {
            assert!(r.relation.holds(&l.elements[r.subject].bbox, &l.elements[r.object].bbox));
        }
    }

    #[test]
    fn relation_geometry() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(0.0, 20.0, 10.0, 10.0);
        assert_eq!(Relation::observe(&a, &b), Relation::Above);
        assert_eq!(Relation::observe(&b, &a), Relation::Below);
        let c = BBox::new(5.0, 5.0, 30.0, 30.0);
        assert_eq!(Relation::observe(&a, &c), Relation::Smaller);
        assert_eq!(Relation::observe(&a, &BBox::new(2.0, 2.0, 10.0, 10.0)), Relation::Equal);
    }

    #[test]
    fn digest_is_stable() {
        let spec = ConstraintSpec::GenT { categories: cats(&[("text", 1)]) };
        let d = constraint_digest(&spec).unwrap();
        assert_eq!(d.len(), 64);
        assert_eq!(d, hex::encode(Sha256::digest(b"Total elements: 1\ntext: 1")));
    }
}
