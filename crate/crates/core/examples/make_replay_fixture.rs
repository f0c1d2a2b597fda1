//! Regenerates `tests/fixtures/replay5`: a small poster dataset, its
//! saliency rasters, a run config, and the transcripts a replayed run needs.
//!
//! Responses come from a scripted backend, so the fixture is reproducible
//! and exercises the interesting paths on purpose: unparseable candidates,
//! one clearly best candidate per item, a stage that needs its retry, and a
//! stage that falls back. Both the default run and the `no_rag` ablation are
//! recorded. `--no-cot` and `--stages 1` reuse the default run's requests.
//!
//!     cargo run -p layoutcot --example make_replay_fixture

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use layoutcot::dataset::{save_pgm, LayoutRecord, SaliencyRaster};
use layoutcot::gateway::{Backend, Completion, Gateway, GatewayError, Mode, Request};
use layoutcot::layout::{parse_html, to_html};
use layoutcot::pipeline::{prepare, run_with_config, RunConfig};
use layoutcot::prompt::{PromptCatalog, Stage, TaskFamily};
use layoutcot::{BBox, Canvas, Element, Layout};

const W: u32 = 300;
const H: u32 = 450;
const RASTER: (usize, usize) = (60, 90);
const N_TRAIN: usize = 40;
const N_TEST: usize = 5;

/// Coarse candidate that is never parseable.
const PROSE_CANDIDATE: u32 = 3;
/// (item, stage): first attempt unparseable, retry succeeds.
const RETRY: (usize, u8) = (1, 1);
/// (item, stage): both attempts unparseable.
const FALLBACK: (usize, u8) = (2, 2);

const CONFIG: &str = r#"[run]
id = "replay5"
family = "content_aware"
output_dir = "out"

[dataset]
path = "dataset.jsonl"
preset = "pku"

[generation]
k_coarse = 10
k_cot = 4
n = 10
stages = 3

[backend]
mode = "replay"
transcript_dir = "transcripts"
"#;

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/replay5")
}

/// Coarse candidate carrying the clean layout; never `PROSE_CANDIDATE`.
fn dominant(item: usize) -> u32 {
    [1, 4, 6, 8, 0][item]
}

/// Logo on top, a headline with its underlay, and one or two text lines,
/// all sharing a left edge.
fn poster(id: &str, (w, h): (u32, u32), rng: &mut ChaCha8Rng) -> Layout {
    let left = f64::from(rng.random_range(20..60u32));
    let width = f64::from(rng.random_range(150..220u32));
    let mut y = f64::from(rng.random_range(20..60u32));
    let mut el = Vec::new();
    el.push(Element::new("logo", BBox::new(left, y, 60.0, 30.0)));
    y += 30.0 + f64::from(rng.random_range(20..40u32));
    let head_h = f64::from(rng.random_range(40..70u32));
    el.push(Element::new("underlay", BBox::new(left - 8.0, y - 8.0, width + 16.0, head_h + 16.0)));
    el.push(Element::new("text", BBox::new(left, y, width, head_h)));
    y += head_h + 30.0;
    for _ in 0..rng.random_range(1..=2) {
        let h = f64::from(rng.random_range(20..35u32));
        el.push(Element::new("text", BBox::new(left, y, width * 0.8, h)));
        y += h + 12.0;
    }
    Layout::new(id, Canvas::new(w, h), el)
}

/// A bright blob on the right half, where a product photo would be.
fn saliency(rng: &mut ChaCha8Rng) -> SaliencyRaster {
    let (w, h) = RASTER;
    let cx = rng.random_range(0.6..0.8) * w as f64;
    let cy = rng.random_range(0.4..0.7) * h as f64;
    let r = rng.random_range(0.15..0.25) * w as f64;
    let values = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() / r;
            let v = (1.0 - d).clamp(0.0, 1.0);
            (v * 255.0).round() / 255.0
        })
        .collect();
    SaliencyRaster::new(w, h, values).unwrap()
}

fn gradient(rng: &mut ChaCha8Rng) -> SaliencyRaster {
    let (w, h) = RASTER;
    let values = (0..w * h).map(|_| f64::from(rng.random_range(0..64u8)) / 255.0).collect();
    SaliencyRaster::new(w, h, values).unwrap()
}

/// The same elements pushed around enough to overlap and lose alignment.
fn jitter(layout: &Layout, rng: &mut ChaCha8Rng) -> Layout {
    let mut out = layout.clone();
    let (w, h) = (f64::from(out.canvas.width), f64::from(out.canvas.height));
    for e in &mut out.elements {
        e.bbox.left = (e.bbox.left + f64::from(rng.random_range(-40..40i32))).clamp(0.0, w - e.bbox.width);
        e.bbox.top = (e.bbox.top + f64::from(rng.random_range(-60..60i32))).clamp(0.0, h - e.bbox.height);
    }
    out
}

fn rounded(layout: &Layout) -> Layout {
    let mut out = layout.clone();
    for e in &mut out.elements {
        let b = e.bbox;
        e.bbox = BBox::new(b.left.round(), b.top.round(), b.width.round(), b.height.round());
    }
    out
}

/// Share one left edge across text and logo.
fn align_left(layout: &Layout) -> Layout {
    let mut out = layout.clone();
    let left = out.elements.iter().filter(|e| e.label != "underlay").map(|e| e.bbox.left).fold(f64::INFINITY, f64::min);
    if left.is_finite() {
        for e in out.elements.iter_mut().filter(|e| e.label != "underlay") {
            e.bbox.left = left;
        }
    }
    out
}

/// Fit every underlay around the first text element with an 8px margin.
fn fit_underlay(layout: &Layout) -> Layout {
    let mut out = layout.clone();
    if let Some(t) = out.elements.iter().find(|e| e.label == "text").map(|e| e.bbox) {
        for e in out.elements.iter_mut().filter(|e| e.label == "underlay") {
            e.bbox = BBox::new(t.left - 8.0, t.top - 8.0, t.width + 16.0, t.height + 16.0);
        }
    }
    out
}

struct Scripted {
    /// System text of each stage, coarse first.
    stage_system: Vec<String>,
    /// Index and ground truth of the item being generated.
    current: Mutex<Option<(usize, Layout)>>,
}

impl Scripted {
    fn respond(&self, req: &Request) -> String {
        let (item, truth) = self.current.lock().unwrap().clone().expect("item set before generation");
        let stage = self.stage_system.iter().position(|s| *s == req.system).expect("system text of a known stage") as u8;
        let mut rng = ChaCha8Rng::seed_from_u64((item as u64) << 32 | u64::from(stage) << 16 | u64::from(req.candidate));
        if stage == 0 {
            return match req.candidate {
                PROSE_CANDIDATE => "I'm sorry, I can't produce a layout for this poster without seeing the image.".into(),
                c if c == dominant(item) => format!("```html\n{}\n```", to_html(&rounded(&truth))),
                c if c % 2 == 0 => format!(
                    "Here is a layout that keeps clear of the product:\n\n{}\n\nThe logo anchors the top.",
                    to_html(&jitter(&truth, &mut rng))
                ),
                _ => to_html(&jitter(&truth, &mut rng)).0,
            };
        }
        if (item, stage) == FALLBACK || ((item, stage) == RETRY && req.candidate == 0) {
            return "Sure! I moved the logo slightly up and widened the underlay.".into();
        }
        let current = parse_html(&req.user, &[]).expect("prompt carries the current layout").layout;
        let next = match stage {
            1 => align_left(&current),
            2 => fit_underlay(&current),
            _ => current,
        };
        format!("```html\n{}\n```", to_html(&rounded(&next)))
    }
}

impl Backend for &'static Scripted {
    fn complete(&self, req: &Request) -> Result<Completion, GatewayError> {
        Ok(Completion { text: self.respond(req), prompt_tokens: None, completion_tokens: None })
    }
}

fn main() {
    let dir = fixture_dir();
    let transcripts = dir.join("transcripts");
    if transcripts.exists() {
        std::fs::remove_dir_all(&transcripts).unwrap();
    }
    std::fs::create_dir_all(dir.join("rasters")).unwrap();
    std::fs::create_dir_all(&transcripts).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut lines = Vec::new();
    let mut truths = Vec::new();
    for i in 0..N_TRAIN {
        let l = poster(&format!("train-{i:03}"), (W, H), &mut rng);
        lines.push(serde_json::to_string(&LayoutRecord::from_layout(&l, "train")).unwrap());
    }
    for i in 0..N_TEST {
        let id = format!("test-{i}");
        // A content-aware prompt names only the canvas and the categories, so
        // items sharing both would share every request. Distinct sizes keep
        // each item's transcripts its own.
        let size = (W + 30 * i as u32, H + 45 * i as u32);
        let mut l = poster(&id, size, &mut rng);
        // Push the foreground left so it clears the salient blob.
        for e in &mut l.elements {
            e.bbox.left = (e.bbox.left - 10.0).max(0.0);
        }
        let sal = format!("rasters/{id}.sal.pgm");
        let grad = format!("rasters/{id}.grad.pgm");
        save_pgm(&saliency(&mut rng), dir.join(&sal)).unwrap();
        save_pgm(&gradient(&mut rng), dir.join(&grad)).unwrap();
        l.task_meta.saliency = Some(sal);
        l.task_meta.gradient = Some(grad);
        lines.push(serde_json::to_string(&LayoutRecord::from_layout(&l, "test")).unwrap());
        truths.push(l);
    }
    std::fs::write(dir.join("dataset.jsonl"), lines.join("\n") + "\n").unwrap();
    std::fs::write(dir.join("run.toml"), CONFIG).unwrap();

    let catalog = PromptCatalog::builtin();
    let stage_system = Stage::ALL.iter().map(|s| catalog.get(TaskFamily::ContentAware, *s).unwrap().system_text.clone()).collect();
    let backend: &'static Scripted = Box::leak(Box::new(Scripted { stage_system, current: Mutex::new(None) }));

    let mut cfg = RunConfig::from_toml(CONFIG).unwrap();
    cfg.resolve_paths(&dir);
    let mut record = cfg.backend.clone();
    record.mode = Mode::Record;

    for no_rag in [false, true] {
        let mut variant = cfg.clone();
        variant.generation.no_rag = no_rag;
        let mut prepared = prepare(&variant).unwrap();
        prepared.pipeline.gateway = Gateway::with_backend(record.clone(), Box::new(backend)).unwrap();
        for (i, truth) in truths.iter().enumerate() {
            *backend.current.lock().unwrap() = Some((i, truth.clone()));
            let trace = prepared.pipeline.run_item(truth, TaskFamily::ContentAware);
            assert!(trace.error.is_none(), "{}: {:?}", truth.id, trace.error);
            let coarse = trace.coarse.as_ref().unwrap();
            if !no_rag {
                assert_eq!(coarse.chosen, Some(dominant(i)), "{}: scripted best candidate not chosen", truth.id);
            }
            let fallbacks: Vec<u8> = trace.stages.iter().filter(|s| s.fallback).map(|s| s.stage).collect();
            assert_eq!(fallbacks, if i == FALLBACK.0 { vec![FALLBACK.1] } else { vec![] }, "{}", truth.id);
        }
    }

    let expected: BTreeMap<String, serde_json::Value> = (0..N_TEST)
        .map(|i| {
            let v = serde_json::json!({
                "dominant": dominant(i),
                "retry_stage": (i == RETRY.0).then_some(RETRY.1),
                "fallback_stage": (i == FALLBACK.0).then_some(FALLBACK.1),
            });
            (format!("test-{i}"), v)
        })
        .collect();
    std::fs::write(dir.join("expected.json"), serde_json::to_string_pretty(&expected).unwrap() + "\n").unwrap();

    // Confirm the recording is complete by replaying it.
    let out = tempfile::tempdir().unwrap();
    for no_rag in [false, true] {
        let mut replay = cfg.clone();
        replay.generation.no_rag = no_rag;
        replay.run.output_dir = out.path().join(if no_rag { "no_rag" } else { "default" });
        let summary = run_with_config(&replay).unwrap();
        assert_eq!(summary.failures, 0);
        for (i, truth) in truths.iter().enumerate().filter(|_| !no_rag) {
            let path = summary.run_dir.join(format!("traces/{}.json", truth.id));
            let trace: serde_json::Value = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
            assert_eq!(trace["coarse"]["chosen"], dominant(i), "{}: replay disagrees with the recording", truth.id);
        }
        print!("{}", summary.report.to_pretty());
    }
    let n = std::fs::read_dir(&transcripts).unwrap().count();
    println!("wrote {} ({n} transcripts)", dir.display());
}
