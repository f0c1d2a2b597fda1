//! SVG drawings of layouts for visual inspection.

use std::fmt::Write as _;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::dataset::SaliencyRaster;
use crate::layout::Layout;

const PALETTE: [&str; 12] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac", "#1f77b4", "#17becf",
];

/// Side length used for normalized layouts that carry no pixel size.
const UNIT_SIDE: u32 = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderStyle {
    pub fill_opacity: f64,
    pub stroke_width: f64,
    pub show_labels: bool,
    pub show_background: bool,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self { fill_opacity: 0.45, stroke_width: 2.0, show_labels: true, show_background: true }
    }
}

/// Palette color for a label; FNV-1a so it never changes between builds.
pub fn label_color(label: &str) -> &'static str {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    PALETTE[(h % PALETTE.len() as u64) as usize]
}

fn num(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".to_string() } else { s.to_string() }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Uncompressed 24-bit BMP of a grayscale raster; every browser can show it.
pub fn raster_to_bmp(raster: &SaliencyRaster) -> Vec<u8> {
    let (w, h) = (raster.width, raster.height);
    let row = (w * 3).div_ceil(4) * 4;
    let data_len = row * h;
    let mut out = Vec::with_capacity(54 + data_len);
    out.extend_from_slice(b"BM");
    out.extend_from_slice(&((54 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&54u32.to_le_bytes());
    out.extend_from_slice(&40u32.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&24u16.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    out.extend_from_slice(&2835i32.to_le_bytes());
    out.extend_from_slice(&2835i32.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for y in (0..h).rev() {
        let start = out.len();
        for x in 0..w {
            let g = (raster.values[y * w + x].clamp(0.0, 1.0) * 255.0).round() as u8;
            out.extend_from_slice(&[g, g, g]);
        }
        out.resize(start + row, 0);
    }
    out
}

/// One `rect` per element in element order over a canvas-sized view box.
/// Normalized layouts are drawn at their original pixel size when known.
pub fn render_svg(layout: &Layout, style: &RenderStyle, background: Option<&SaliencyRaster>) -> String {
    let px = if layout.is_normalized() && layout.task_meta.original_size.is_none() {
        let mut l = layout.clone();
        l.task_meta.original_size = Some((UNIT_SIDE, UNIT_SIDE));
        l.to_pixels()
    } else {
        layout.to_pixels()
    };
    let (w, h) = (px.canvas.width, px.canvas.height);
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" data-layout="{}">"#,
        escape(&px.id)
    )
    .unwrap();
    writeln!(out, r##"  <rect class="canvas" x="0" y="0" width="{w}" height="{h}" fill="#ffffff" stroke="#333333" stroke-width="1"/>"##).unwrap();
    if let (Some(bg), true) = (background, style.show_background) {
        let data = base64::engine::general_purpose::STANDARD.encode(raster_to_bmp(bg));
        writeln!(out, r#"  <image x="0" y="0" width="{w}" height="{h}" preserveAspectRatio="none" href="data:image/bmp;base64,{data}"/>"#).unwrap();
    }
    for el in &px.elements {
        let b = el.bbox;
        let color = label_color(&el.label);
        writeln!(
            out,
            r#"  <rect class="element" data-label="{}" x="{}" y="{}" width="{}" height="{}" fill="{color}" fill-opacity="{}" stroke="{color}" stroke-width="{}"/>"#,
            escape(&el.label),
            num(b.left),
            num(b.top),
            num(b.width.max(0.0)),
            num(b.height.max(0.0)),
            num(style.fill_opacity),
            num(style.stroke_width)
        )
        .unwrap();
        if style.show_labels {
            let size = (f64::from(h.min(w)) / 40.0).max(8.0);
            writeln!(
                out,
                r##"  <text x="{}" y="{}" font-family="sans-serif" font-size="{}" fill="#111111">{}</text>"##,
                num(b.left + 2.0),
                num(b.top + size),
                num(size),
                escape(&el.label)
            )
            .unwrap();
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{BBox, Canvas, Element};

    fn poster(n: usize) -> Layout {
        let labels = ["text", "logo", "underlay"];
        Layout::new(
            "p&1",
            Canvas::new(200, 300),
            (0..n).map(|i| Element::new(labels[i % 3], BBox::new(10.0 * i as f64, 20.0, 50.5, 30.25))).collect(),
        )
    }

    fn parse(svg: &str) -> roxmltree::Document<'_> {
        roxmltree::Document::parse(svg).expect("well-formed XML")
    }

    #[test]
    fn empty_layout_draws_canvas_only() {
        let svg = render_svg(&poster(0), &RenderStyle::default(), None);
        let doc = parse(&svg);
        let rects: Vec<_> = doc.descendants().filter(|n| n.has_tag_name("rect")).collect();
        assert_eq!(rects.len(), 1);
        assert_eq!(rects[0].attribute("class"), Some("canvas"));
        assert_eq!(doc.root_element().attribute("viewBox"), Some("0 0 200 300"));
    }

    #[test]
    fn one_rect_per_element_in_order() {
        let svg = render_svg(&poster(3), &RenderStyle::default(), None);
        let doc = parse(&svg);
        let rects: Vec<_> = doc.descendants().filter(|n| n.has_tag_name("rect") && n.attribute("class") == Some("element")).collect();
        assert_eq!(rects.len(), 3);
        let labels: Vec<_> = rects.iter().map(|r| r.attribute("data-label").unwrap()).collect();
        assert_eq!(labels, ["text", "logo", "underlay"]);
        assert_eq!(rects[1].attribute("fill"), Some(label_color("logo")));
        assert_eq!(rects[1].attribute("width"), Some("50.5"));
        assert_eq!(svg, render_svg(&poster(3), &RenderStyle::default(), None));
    }

    #[test]
    fn colors_are_stable() {
        assert_eq!(label_color("text"), label_color("text"));
        assert!(PALETTE.contains(&label_color("anything")));
    }

    #[test]
    fn background_is_embedded() {
        let bg = SaliencyRaster::new(3, 2, vec![0.0, 0.5, 1.0, 1.0, 0.5, 0.0]).unwrap();
        let svg = render_svg(&poster(1), &RenderStyle::default(), Some(&bg));
        let doc = parse(&svg);
        let img = doc.descendants().find(|n| n.has_tag_name("image")).unwrap();
        let data = img.attribute("href").unwrap().strip_prefix("data:image/bmp;base64,").unwrap();
        let bmp = base64::engine::general_purpose::STANDARD.decode(data).unwrap();
        assert_eq!(&bmp[..2], b"BM");
        // 3 px * 3 bytes padded to 12, two rows
        assert_eq!(bmp.len(), 54 + 24);
        // bottom row first: (1.0, 0.5, 0.0)
        assert_eq!(&bmp[54..63], &[255, 255, 255, 128, 128, 128, 0, 0, 0]);
        let off = RenderStyle { show_background: false, ..Default::default() };
        assert!(!render_svg(&poster(1), &off, Some(&bg)).contains("<image"));
    }

    #[test]
    fn normalized_layouts_scale() {
        let mut l = Layout::new("n", Canvas::unit(), vec![Element::new("text", BBox::new(0.25, 0.5, 0.5, 0.25))]);
        let svg = render_svg(&l, &RenderStyle::default(), None);
        assert!(svg.contains(r#"x="128" y="256" width="256" height="128""#));
        l.task_meta.original_size = Some((100, 40));
        assert!(render_svg(&l, &RenderStyle::default(), None).contains(r#"viewBox="0 0 100 40""#));
    }
}
