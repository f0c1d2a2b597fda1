//! Layout quality metrics for single layouts and populations.

pub mod assignment;
mod content;
mod geometry;
mod reasonableness;

pub use content::{occlusion, readability, utilization};
pub use geometry::{alignment, max_iou, overlap, underlay_loose, underlay_strict, UNDERLAY};
pub use reasonableness::{score_from_ratios, size_reasonableness, tolerance, LabelScore, ReScore};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{AreaStats, SaliencyRaster};
use crate::layout::{self, Layout};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("layout `{0}` has no elements")]
    EmptyLayout(String),
    #[error("population is empty")]
    EmptyPopulation,
    #[error("no training area statistics for label `{0}`")]
    MissingLabelStats(String),
    #[error("training mean area of label `{0}` is zero")]
    ZeroTrainingArea(String),
    #[error("raster {raster:?} does not match canvas {canvas:?}")]
    DimensionMismatch { canvas: (u32, u32), raster: (usize, usize) },
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error(transparent)]
    Layout(#[from] layout::LayoutError),
}

/// Metric columns, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Occ,
    Rea,
    Uti,
    Align,
    UndL,
    UndS,
    Ove,
    Val,
    Re,
    #[serde(rename = "miou")]
    MIoU,
}

impl Metric {
    pub const ALL: [Metric; 10] = [
        Metric::Occ,
        Metric::Rea,
        Metric::Uti,
        Metric::Align,
        Metric::UndL,
        Metric::UndS,
        Metric::Ove,
        Metric::Val,
        Metric::Re,
        Metric::MIoU,
    ];

    /// Columns reported for content-aware runs.
    pub const CONTENT_AWARE: [Metric; 9] = [
        Metric::Occ,
        Metric::Rea,
        Metric::Uti,
        Metric::Align,
        Metric::UndL,
        Metric::UndS,
        Metric::Ove,
        Metric::Val,
        Metric::Re,
    ];

    /// Columns reported for constraint-explicit and text-to-layout runs.
    pub const GRAPHIC: [Metric; 3] = [Metric::MIoU, Metric::Align, Metric::Ove];

    pub fn key(self) -> &'static str {
        match self {
            Metric::Occ => "occ",
            Metric::Rea => "rea",
            Metric::Uti => "uti",
            Metric::Align => "align",
            Metric::UndL => "und_l",
            Metric::UndS => "und_s",
            Metric::Ove => "ove",
            Metric::Val => "val",
            Metric::Re => "r_e",
            Metric::MIoU => "miou",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Metric::Occ => "Occ",
            Metric::Rea => "Rea",
            Metric::Uti => "Uti",
            Metric::Align => "Align",
            Metric::UndL => "Und_l",
            Metric::UndS => "Und_s",
            Metric::Ove => "Ove",
            Metric::Val => "Val",
            Metric::Re => "R_e",
            Metric::MIoU => "mIoU",
        }
    }

    fn precision(self) -> usize {
        match self {
            Metric::Align | Metric::Ove => 4,
            _ => 3,
        }
    }

    /// Parse a comma-separated list, keeping report order.
    pub fn parse_list(list: &str) -> Result<Vec<Metric>, MetricError> {
        let mut out: Vec<Metric> = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse())
            .collect::<Result<_, _>>()?;
        out.sort();
        out.dedup();
        Ok(out)
    }
}

impl std::str::FromStr for Metric {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        Metric::ALL
            .into_iter()
            .find(|m| m.key() == lower || m.title().eq_ignore_ascii_case(s))
            .ok_or_else(|| MetricError::UnknownMetric(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "reason")]
pub enum Applicability {
    Computed,
    Skipped(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricReport {
    pub values: BTreeMap<String, f64>,
    pub applicability: BTreeMap<String, Applicability>,
    pub population_size: usize,
}

impl MetricReport {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        self.values.get(metric.key()).copied()
    }

    fn set(&mut self, metric: Metric, value: f64) {
        self.values.insert(metric.key().to_string(), value);
        self.applicability.insert(metric.key().to_string(), Applicability::Computed);
    }

    fn skip(&mut self, metric: Metric, reason: &str) {
        self.values.remove(metric.key());
        self.applicability.insert(metric.key().to_string(), Applicability::Skipped(reason.to_string()));
    }

    fn columns(&self) -> Vec<Metric> {
        Metric::ALL.into_iter().filter(|m| self.applicability.contains_key(m.key())).collect()
    }

    /// Header row and value row, tab separated; skipped metrics print `-`.
    pub fn to_tsv(&self) -> String {
        let cols = self.columns();
        let header: Vec<&str> = cols.iter().map(|m| m.title()).collect();
        let values: Vec<String> = cols.iter().map(|m| self.get(*m).map_or("-".to_string(), |v| v.to_string())).collect();
        format!("{}\n{}\n", header.join("\t"), values.join("\t"))
    }

    /// Aligned table at the precision used for reporting.
    pub fn to_pretty(&self) -> String {
        let cols = self.columns();
        let cells: Vec<(String, String)> = cols
            .iter()
            .map(|m| {
                let v = self.get(*m).map_or("-".to_string(), |v| format!("{:.*}", m.precision(), v));
                (m.title().to_string(), v)
            })
            .collect();
        let mut out = String::new();
        let widths: Vec<usize> = cells.iter().map(|(h, v)| h.len().max(v.len())).collect();
        for ((h, _), w) in cells.iter().zip(&widths) {
            write!(out, "{h:>w$}  ").unwrap();
        }
        out = out.trim_end().to_string();
        out.push('\n');
        let mut row = String::new();
        for ((_, v), w) in cells.iter().zip(&widths) {
            write!(row, "{v:>w$}  ").unwrap();
        }
        out.push_str(row.trim_end());
        out.push('\n');
        out
    }
}

/// One generated layout with whatever evaluation inputs exist for it.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub generated: Layout,
    pub reference: Option<Layout>,
    pub saliency: Option<SaliencyRaster>,
    pub gradient: Option<SaliencyRaster>,
}

impl EvalItem {
    pub fn new(generated: Layout) -> Self {
        Self { generated, reference: None, saliency: None, gradient: None }
    }
}

#[derive(Debug, Clone)]
pub struct EvalSettings {
    pub metrics: Vec<Metric>,
    /// Training statistics; needed for `R_e`.
    pub area_stats: Option<AreaStats>,
    /// Labels left out of the overlap metric.
    pub overlap_exclude: Vec<String>,
    /// Labels that count as text for readability.
    pub text_labels: Vec<String>,
    pub min_area_ratio: f64,
}

impl EvalSettings {
    pub fn new(metrics: Vec<Metric>) -> Self {
        Self {
            metrics,
            area_stats: None,
            overlap_exclude: Vec::new(),
            text_labels: vec!["text".to_string()],
            min_area_ratio: layout::DEFAULT_MIN_AREA_RATIO,
        }
    }

    /// Defaults for content-aware posters: underlays do not count as overlap.
    pub fn content_aware(area_stats: Option<AreaStats>) -> Self {
        Self { area_stats, overlap_exclude: vec![UNDERLAY.to_string()], ..Self::new(Metric::CONTENT_AWARE.to_vec()) }
    }
}

/// Compensated (Neumaier) summation.
pub(crate) fn fsum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| fsum(values.iter().copied()) / values.len() as f64)
}

/// Evaluate a population. Per-layout metrics are averaged over the layouts
/// they apply to; a metric with no applicable layout is reported as skipped.
pub fn evaluate(items: &[EvalItem], settings: &EvalSettings) -> Result<MetricReport, MetricError> {
    let mut report = MetricReport { population_size: items.len(), ..Default::default() };
    let normalized: Vec<Layout> = items
        .iter()
        .map(|it| if it.generated.is_normalized() { Ok(it.generated.clone()) } else { layout::normalize(&it.generated) })
        .collect::<Result<_, _>>()?;

    for &metric in &settings.metrics {
        let mut values = Vec::new();
        let mut reason = "no applicable layout";
        match metric {
            Metric::Align => {
                for l in normalized.iter().filter(|l| !l.is_empty()) {
                    values.push(alignment(l)?);
                }
                reason = "all layouts empty";
            }
            Metric::Ove => {
                values.extend(normalized.iter().filter(|l| !l.is_empty()).map(|l| overlap(l, &settings.overlap_exclude)));
                reason = "all layouts empty";
            }
            Metric::UndL => {
                values.extend(normalized.iter().filter_map(underlay_loose));
                reason = "no_underlay";
            }
            Metric::UndS => {
                values.extend(normalized.iter().filter_map(underlay_strict));
                reason = "no_underlay";
            }
            Metric::Val => {
                let mut valid = 0usize;
                let mut total = 0usize;
                for l in &normalized {
                    let r = layout::validate_layout(l, settings.min_area_ratio);
                    valid += r.valid_count();
                    total += r.valid.len();
                }
                if total > 0 {
                    values.push(valid as f64 / total as f64);
                }
                reason = "no elements";
            }
            Metric::MIoU => {
                for (l, it) in normalized.iter().zip(items) {
                    if let Some(reference) = &it.reference {
                        if l.is_empty() || reference.is_empty() {
                            continue;
                        }
                        let reference = if reference.is_normalized() { reference.clone() } else { layout::normalize(reference)? };
                        values.push(max_iou(l, &reference)?);
                    }
                }
                reason = "no reference layouts";
            }
            Metric::Occ | Metric::Uti => {
                for (l, it) in normalized.iter().zip(items) {
                    if let Some(sal) = &it.saliency {
                        values.push(if metric == Metric::Occ { occlusion(l, sal)? } else { utilization(l, sal)? });
                    }
                }
                reason = "no saliency rasters";
            }
            Metric::Rea => {
                let mut any_raster = false;
                for (l, it) in normalized.iter().zip(items) {
                    if let Some(grad) = &it.gradient {
                        any_raster = true;
                        values.extend(readability(l, grad, &settings.text_labels)?);
                    }
                }
                reason = if any_raster { "no text elements" } else { "no gradient rasters" };
            }
            Metric::Re => {
                match &settings.area_stats {
                    Some(stats) => match size_reasonableness(&normalized, stats) {
                        Ok(score) => values.push(score.value),
                        Err(MetricError::EmptyPopulation) => reason = "no elements",
                        Err(e) => return Err(e),
                    },
                    None => reason = "no training statistics",
                }
                // population metric: the single value is the result
            }
        }
        match mean(&values) {
            Some(v) => report.set(metric, v),
            None => report.skip(metric, reason),
        }
    }
    Ok(report)
}
