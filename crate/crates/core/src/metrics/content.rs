//! Metrics that read a saliency or gradient raster under the layout.
//!
//! A pixel belongs to a box when the box contains the pixel center, mapped to
//! normalized canvas coordinates.

use super::MetricError;
use crate::dataset::SaliencyRaster;
use crate::layout::{BBox, Layout};

/// Relative aspect-ratio difference tolerated between a raster and the canvas.
const ASPECT_TOLERANCE: f64 = 0.02;

fn check_dims(layout: &Layout, raster: &SaliencyRaster) -> Result<(), MetricError> {
    let (w, h) = layout.pixel_size();
    if (w, h) == (1, 1) {
        return Ok(());
    }
    let canvas_aspect = f64::from(w) / f64::from(h);
    let raster_aspect = raster.width as f64 / raster.height as f64;
    if (canvas_aspect / raster_aspect - 1.0).abs() > ASPECT_TOLERANCE {
        return Err(MetricError::DimensionMismatch {
            canvas: (w, h),
            raster: (raster.width, raster.height),
        });
    }
    Ok(())
}

fn mark(mask: &mut [bool], raster: &SaliencyRaster, b: &BBox) {
    let (w, h) = (raster.width as f64, raster.height as f64);
    let x0 = ((b.left * w - 0.5).floor().max(0.0)) as usize;
    let y0 = ((b.top * h - 0.5).floor().max(0.0)) as usize;
    let x1 = ((b.right() * w + 0.5).ceil().max(0.0) as usize).min(raster.width);
    let y1 = ((b.bottom() * h + 0.5).ceil().max(0.0) as usize).min(raster.height);
    for y in y0..y1 {
        let cy = (y as f64 + 0.5) / h;
        for x in x0..x1 {
            if b.contains_point((x as f64 + 0.5) / w, cy) {
                mask[y * raster.width + x] = true;
            }
        }
    }
}

fn coverage<'a>(raster: &SaliencyRaster, boxes: impl IntoIterator<Item = &'a BBox>) -> Vec<bool> {
    let mut mask = vec![false; raster.values.len()];
    for b in boxes {
        mark(&mut mask, raster, b);
    }
    mask
}

fn normalized(layout: &Layout) -> Result<std::borrow::Cow<'_, Layout>, MetricError> {
    if layout.is_normalized() {
        Ok(std::borrow::Cow::Borrowed(layout))
    } else {
        Ok(std::borrow::Cow::Owned(crate::layout::normalize(layout)?))
    }
}

/// Mean saliency over pixels covered by any element; 0 when nothing is covered.
pub fn occlusion(layout: &Layout, saliency: &SaliencyRaster) -> Result<f64, MetricError> {
    check_dims(layout, saliency)?;
    let layout = normalized(layout)?;
    let mask = coverage(saliency, layout.elements.iter().map(|e| &e.bbox));
    let (sum, n) = mask
        .iter()
        .zip(&saliency.values)
        .filter(|(m, _)| **m)
        .fold((0.0, 0usize), |(s, n), (_, v)| (s + v, n + 1));
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Share of the non-salient mass `sum(1 - s)` that elements cover.
pub fn utilization(layout: &Layout, saliency: &SaliencyRaster) -> Result<f64, MetricError> {
    check_dims(layout, saliency)?;
    let layout = normalized(layout)?;
    let mask = coverage(saliency, layout.elements.iter().map(|e| &e.bbox));
    let total: f64 = saliency.values.iter().map(|v| 1.0 - v).sum();
    if total <= 0.0 {
        return Ok(0.0);
    }
    let covered: f64 = mask.iter().zip(&saliency.values).filter(|(m, _)| **m).map(|(_, v)| 1.0 - v).sum();
    Ok(covered / total)
}

/// Mean gradient intensity under elements labeled with one of `text_labels`.
/// `None` when the layout has no such element.
pub fn readability(layout: &Layout, gradient: &SaliencyRaster, text_labels: &[String]) -> Result<Option<f64>, MetricError> {
    check_dims(layout, gradient)?;
    let layout = normalized(layout)?;
    let texts: Vec<&BBox> = layout
        .elements
        .iter()
        .filter(|e| text_labels.contains(&e.label))
        .map(|e| &e.bbox)
        .collect();
    if texts.is_empty() {
        return Ok(None);
    }
    let mask = coverage(gradient, texts);
    let (sum, n) = mask
        .iter()
        .zip(&gradient.values)
        .filter(|(m, _)| **m)
        .fold((0.0, 0usize), |(s, n), (_, v)| (s + v, n + 1));
    Ok(Some(if n == 0 { 0.0 } else { sum / n as f64 }))
}
