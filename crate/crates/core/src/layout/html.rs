use std::fmt::Write as _;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{BBox, Canvas, Element, Layout, LayoutError};

static DIV_TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)<div\b([^>]*)>").unwrap());
static CLASS_ATTR: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?is)\bclass\s*=\s*(?:"([^"]*)"|'([^']*)'|([^\s>"']+))"#).unwrap()
});
static STYLE_ATTR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"(?is)\bstyle\s*=\s*(?:"([^"]*)"|'([^']*)')"#).unwrap());
static NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*([-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?)\s*(?:px)?\s*$").unwrap());

/// Layout serialized in the snippet grammar the LLM reads and writes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HtmlSnippet(pub String);

impl HtmlSnippet {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for HtmlSnippet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn round_half_up(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

/// Emit the canonical snippet in integer pixels. Normalized layouts are
/// mapped back to their original canvas first.
pub fn to_html(layout: &Layout) -> HtmlSnippet {
    let px = layout.to_pixels();
    let mut out = String::with_capacity(96 + 96 * px.elements.len());
    write!(
        out,
        r#"<html><body><div class="canvas" style="width:{}px; height:{}px"></div>"#,
        px.canvas.width, px.canvas.height
    )
    .unwrap();
    for el in &px.elements {
        let b = el.bbox;
        write!(
            out,
            r#"<div class="{}" style="left:{}px; top:{}px; width:{}px; height:{}px"></div>"#,
            el.label,
            round_half_up(b.left),
            round_half_up(b.top),
            round_half_up(b.width),
            round_half_up(b.height)
        )
        .unwrap();
    }
    out.push_str("</body></html>");
    HtmlSnippet(out)
}

#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    /// Reject unknown classes and incomplete element styles instead of warning.
    pub strict: bool,
    /// Canvas to assume when the snippet carries none.
    pub default_canvas: Option<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLayout {
    pub layout: Layout,
    pub warnings: Vec<String>,
}

/// Lenient parse; see [`parse_html_with`].
pub fn parse_html(snippet: &str, vocabulary: &[String]) -> Result<ParsedLayout, LayoutError> {
    parse_html_with(snippet, vocabulary, &ParseOptions::default())
}

fn attr<'a>(re: &Regex, attrs: &'a str) -> Option<&'a str> {
    let caps = re.captures(attrs)?;
    caps.iter().skip(1).flatten().next().map(|m| m.as_str())
}

fn style_props(style: &str) -> Vec<(String, f64)> {
    style
        .split(';')
        .filter_map(|decl| {
            let (key, value) = decl.split_once(':')?;
            let num = NUMBER.captures(value)?.get(1)?.as_str().parse::<f64>().ok()?;
            Some((key.trim().to_ascii_lowercase(), num))
        })
        .collect()
}

fn prop(props: &[(String, f64)], key: &str) -> Option<f64> {
    props.iter().rev().find(|(k, _)| k == key).map(|(_, v)| *v)
}

/// Extract a layout from LLM output or a stored snippet.
///
/// Everything outside `<div ...>` tags is ignored, so prose, code fences and
/// missing wrapper tags are tolerated. When several canvas divs appear, the
/// last one starts the layout that is returned. An empty `vocabulary` accepts
/// every class.
pub fn parse_html_with(
    snippet: &str,
    vocabulary: &[String],
    options: &ParseOptions,
) -> Result<ParsedLayout, LayoutError> {
    struct Tag<'a> {
        classes: Vec<&'a str>,
        props: Vec<(String, f64)>,
    }

    let tags: Vec<Tag<'_>> = DIV_TAG
        .captures_iter(snippet)
        .map(|c| {
            let attrs = c.get(1).map_or("", |m| m.as_str());
            Tag {
                classes: attr(&CLASS_ATTR, attrs).map(|c| c.split_whitespace().collect()).unwrap_or_default(),
                props: attr(&STYLE_ATTR, attrs).map(style_props).unwrap_or_default(),
            }
        })
        .collect();

    let is_canvas = |t: &Tag<'_>| t.classes.iter().any(|c| c.eq_ignore_ascii_case("canvas"));
    let start = tags.iter().rposition(is_canvas).unwrap_or(0);

    let mut canvas = None;
    let mut elements = Vec::new();
    let mut warnings = Vec::new();
    for tag in &tags[start..] {
        if is_canvas(tag) {
            if let (Some(w), Some(h)) = (prop(&tag.props, "width"), prop(&tag.props, "height")) {
                if w < 0.0 || h < 0.0 {
                    return Err(LayoutError::NegativeDimension {
                        label: "canvas".into(),
                        field: if w < 0.0 { "width" } else { "height" },
                        value: w.min(h),
                    });
                }
                canvas = Some((round_half_up(w) as u32, round_half_up(h) as u32));
            }
            continue;
        }
        let label = if vocabulary.is_empty() {
            tag.classes.first().copied()
        } else {
            tag.classes.iter().copied().find(|c| vocabulary.iter().any(|v| v == c))
        };
        let Some(label) = label else {
            let name = tag.classes.join(" ");
            if options.strict {
                return Err(LayoutError::UnknownLabel(name));
            }
            warnings.push(if name.is_empty() {
                "div without class ignored".to_string()
            } else {
                format!("unknown class `{name}` ignored")
            });
            continue;
        };
        let mut coords = [0.0; 4];
        let mut missing = None;
        for (slot, key) in coords.iter_mut().zip(["left", "top", "width", "height"]) {
            match prop(&tag.props, key) {
                Some(v) => *slot = v,
                None => {
                    missing = Some(key);
                    break;
                }
            }
        }
        if let Some(property) = missing {
            if options.strict {
                return Err(LayoutError::MissingProperty { label: label.to_string(), property });
            }
            warnings.push(format!("element `{label}` without `{property}` ignored"));
            continue;
        }
        let [left, top, width, height] = coords;
        for (field, value) in [("width", width), ("height", height)] {
            if value < 0.0 {
                return Err(LayoutError::NegativeDimension { label: label.to_string(), field, value });
            }
        }
        elements.push(Element::new(label, BBox::new(left, top, width, height)));
    }

    if canvas.is_none() && elements.is_empty() {
        return Err(LayoutError::ParseFailure);
    }
    let (w, h) = canvas.or(options.default_canvas).unwrap_or_else(|| {
        let right = elements.iter().map(|e| e.bbox.right()).fold(1.0_f64, f64::max);
        let bottom = elements.iter().map(|e| e.bbox.bottom()).fold(1.0_f64, f64::max);
        (right.ceil() as u32, bottom.ceil() as u32)
    });
    if canvas.is_none() {
        warnings.push(format!("snippet has no canvas; assumed {w}x{h}"));
    }
    Ok(ParsedLayout { layout: Layout::new("", Canvas::new(w, h), elements), warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vec<String> {
        ["text", "logo", "underlay"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn empty_layout_is_canvas_only() {
        let l = Layout::new("e", Canvas::new(100, 200), vec![]);
        assert_eq!(
            to_html(&l).0,
            r#"<html><body><div class="canvas" style="width:100px; height:200px"></div></body></html>"#
        );
    }

    #[test]
    fn single_element_transcription() {
        let l = Layout::new("e", Canvas::new(100, 200), vec![Element::new("text", BBox::new(10.0, 20.0, 30.0, 40.0))]);
        let html = to_html(&l).0;
        assert_eq!(html.matches("<div").count(), 2);
        assert!(html.contains(r#"<div class="text" style="left:10px; top:20px; width:30px; height:40px"></div>"#));
    }

    #[test]
    fn rounds_half_up() {
        let l = Layout::new("e", Canvas::new(100, 100), vec![Element::new("text", BBox::new(0.5, 1.49, 2.5, -0.5))]);
        assert!(to_html(&l).0.contains("left:1px; top:1px; width:3px; height:0px"));
    }

    #[test]
    fn prose_is_ignored() {
        let text = "Here is the final layout:\n<html><body><div class=\"canvas\" style=\"width:102px; height:150px\"></div>\
                    <div class=\"logo\" style=\"left:10px; top:5px; width:40px; height:12px\"></div></body></html>\nHope this helps!";
        let parsed = parse_html(text, &vocab()).unwrap();
        assert_eq!(parsed.layout.canvas, Canvas::new(102, 150));
        assert_eq!(parsed.layout.elements, vec![Element::new("logo", BBox::new(10.0, 5.0, 40.0, 12.0))]);
        assert!(parsed.warnings.is_empty());
    }

    #[test]
    fn unknown_class_becomes_warning() {
        let text = r#"<div class="canvas" style="width:10px; height:10px"></div>
            <div class="banner" style="left:1px; top:1px; width:2px; height:2px"></div>
            <div class="text" style="left:1px; top:1px; width:2px; height:2px"></div>"#;
        let parsed = parse_html(text, &vocab()).unwrap();
        assert_eq!(parsed.layout.elements.len(), 1);
        assert_eq!(parsed.warnings.len(), 1);

        let strict = ParseOptions { strict: true, ..Default::default() };
        assert_eq!(parse_html_with(text, &vocab(), &strict), Err(LayoutError::UnknownLabel("banner".into())));
    }

    #[test]
    fn reordered_and_spaced_styles() {
        let text = r#"<DIV  class='text'   style = "height: 40px;width:30.0px;top :20px;left:10px;" ></DIV>"#;
        let opts = ParseOptions { default_canvas: Some((100, 100)), ..Default::default() };
        let parsed = parse_html_with(text, &vocab(), &opts).unwrap();
        assert_eq!(parsed.layout.elements[0].bbox, BBox::new(10.0, 20.0, 30.0, 40.0));
        assert_eq!(parsed.layout.canvas, Canvas::new(100, 100));
    }

    #[test]
    fn refusal_is_parse_failure() {
        assert_eq!(parse_html("I'm sorry, I can't help with that.", &vocab()), Err(LayoutError::ParseFailure));
    }

    #[test]
    fn negative_dimension_rejected() {
        let text = r#"<div class="canvas" style="width:10px; height:10px"></div><div class="text" style="left:1px; top:1px; width:-2px; height:2px"></div>"#;
        assert!(matches!(parse_html(text, &vocab()), Err(LayoutError::NegativeDimension { field: "width", .. })));
    }

    #[test]
    fn last_snippet_wins() {
        let text = r#"Before: <div class="canvas" style="width:10px; height:10px"></div><div class="text" style="left:1px; top:1px; width:2px; height:2px"></div>
            After: <div class="canvas" style="width:10px; height:10px"></div><div class="logo" style="left:3px; top:3px; width:2px; height:2px"></div>"#;
        let parsed = parse_html(text, &vocab()).unwrap();
        assert_eq!(parsed.layout.elements.len(), 1);
        assert_eq!(parsed.layout.elements[0].label, "logo");
    }

    #[test]
    fn to_html_is_deterministic() {
        let l = Layout::new("x", Canvas::new(513, 750), vec![Element::new("underlay", BBox::new(1.0, 2.0, 3.0, 4.0))]);
        assert_eq!(to_html(&l), to_html(&l.clone()));
    }
}
