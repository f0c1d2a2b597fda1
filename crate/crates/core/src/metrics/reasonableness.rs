//! Size reasonableness `R_e`: how far each label's mean generated area drifts
//! from its training mean, with a ±10% log-space tolerance band.

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::dataset::{area_stats_of, AreaStats};
use crate::layout::Layout;

/// Half-width of the tolerance band, `ln(1.1)`.
pub fn tolerance() -> f64 {
    1.1_f64.ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label: String,
    /// Generated mean area over training mean area.
    pub ratio: f64,
    /// `|ln ratio|`.
    pub deviation: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReScore {
    pub labels: Vec<LabelScore>,
    pub value: f64,
}

/// Per-label excess beyond the band, combined as `exp(-rms(excess))`.
pub fn score_from_ratios<'a>(ratios: impl IntoIterator<Item = (&'a str, f64)>) -> Result<ReScore, MetricError> {
    let tau = tolerance();
    let mut labels = Vec::new();
    let mut sum_sq = 0.0;
    for (label, ratio) in ratios {
        let deviation = ratio.ln().abs();
        let excess = (deviation - tau).max(0.0);
        sum_sq += excess * excess;
        labels.push(LabelScore { label: label.to_string(), ratio, deviation, score: (-excess).exp() });
    }
    if labels.is_empty() {
        return Err(MetricError::EmptyPopulation);
    }
    let value = (-(sum_sq / labels.len() as f64).sqrt()).exp();
    Ok(ReScore { labels, value })
}

/// `R_e` of a population of normalized layouts against training statistics.
pub fn size_reasonableness(population: &[Layout], stats: &AreaStats) -> Result<ReScore, MetricError> {
    let generated = area_stats_of(population).ok_or(MetricError::EmptyPopulation)?;
    let mut ratios = Vec::with_capacity(generated.mean_area.len());
    for (label, &mean) in &generated.mean_area {
        let train = stats.get(label).ok_or_else(|| MetricError::MissingLabelStats(label.clone()))?;
        if train <= 0.0 {
            return Err(MetricError::ZeroTrainingArea(label.clone()));
        }
        ratios.push((label.as_str(), mean / train));
    }
    score_from_ratios(ratios)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{BBox, Canvas, Element};

    #[test]
    fn exact_match_scores_one() {
        let r = score_from_ratios([("text", 1.0), ("logo", 1.0)]).unwrap();
        assert_eq!(r.value, 1.0);
        assert!(r.labels.iter().all(|l| l.score == 1.0));
    }

    #[test]
    fn band_edge_scores_one() {
        let r = score_from_ratios([("text", 1.1)]).unwrap();
        assert_eq!(r.labels[0].score, 1.0);
        assert_eq!(r.value, 1.0);
        // the lower edge of the band is 1/1.1, not 0.9
        assert_eq!(score_from_ratios([("text", 1.0 / 1.1)]).unwrap().value, 1.0);
        assert!(score_from_ratios([("text", 0.9)]).unwrap().value < 1.0);
    }

    #[test]
    fn single_label_outside_band() {
        let r = score_from_ratios([("text", 1.2)]).unwrap();
        let expected = (-(1.2_f64.ln() - 1.1_f64.ln())).exp();
        assert!((r.value - expected).abs() < 1e-12);
        assert!((r.value - 0.916_666_666_666_666_7).abs() < 1e-12);
    }

    #[test]
    fn population_errors() {
        let l = Layout::new("a", Canvas::unit(), vec![Element::new("text", BBox::new(0.0, 0.0, 0.5, 0.2))]);
        assert!(matches!(size_reasonableness(std::slice::from_ref(&l), &AreaStats::default()), Err(MetricError::MissingLabelStats(_))));
        let zero = AreaStats { mean_area: [("text".to_string(), 0.0)].into() };
        assert!(matches!(size_reasonableness(std::slice::from_ref(&l), &zero), Err(MetricError::ZeroTrainingArea(_))));
        assert!(matches!(size_reasonableness(&[], &zero), Err(MetricError::EmptyPopulation)));
        let stats = AreaStats { mean_area: [("text".to_string(), 0.1)].into() };
        assert_eq!(size_reasonableness(&[l], &stats).unwrap().value, 1.0);
    }
}
