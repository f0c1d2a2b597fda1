//! `layoutcot` command-line tool.
//!
//! Exit status: 0 on success, 1 when a command fails on its inputs, 2 on a
//! malformed command line (the relevant help text is printed to stderr).

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand};

use layoutcot::dataset::{area_stats_of, ingest_file, load_raster, DatasetManifest, IngestOptions, LayoutRecord, TaskKind};
use layoutcot::gateway::{replay_check, BackendConfig, Gateway, Mode};
use layoutcot::layout::{normalize, parse_html};
use layoutcot::metrics::{evaluate, EvalItem, EvalSettings, Metric};
use layoutcot::pipeline::{prepare, run_task, RunConfig, RunOverrides};
use layoutcot::prompt::{PromptCatalog, Stage};
use layoutcot::render::{render_svg, RenderStyle};
use layoutcot::retrieval::{build_index, load_index, save_index, topk_retrieve, CostWeights, RetrieveOptions};
use layoutcot::Layout;

#[derive(Parser, Debug)]
#[command(name = "layoutcot", version, about = "Retrieval-guided LLM layout generation")]
struct Cli {
    /// Run config (TOML). Needed by `generate` and `prompts render`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed for derived constraints and random exemplars.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// LLM access mode.
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[command(subcommand)]
    command: Command,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse::<Mode>().map_err(|e| e.to_string())
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate an interchange JSONL file and report per-split counts.
    Ingest(IngestArgs),
    /// Build or inspect a retrieval index.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Print the most similar index entries for a query layout.
    Retrieve(RetrieveArgs),
    /// Run generation for a config and write a run directory.
    Generate(GenerateArgs),
    /// Score generated layouts, optionally against references.
    Eval(EvalArgs),
    /// Draw layouts as SVG.
    Render(RenderArgs),
    /// Inspect prompt templates.
    #[command(subcommand)]
    Prompts(PromptsCommand),
    /// Check LLM access or stored transcripts.
    #[command(subcommand)]
    Gateway(GatewayCommand),
}

#[derive(Args, Debug)]
struct VocabArgs {
    /// Named dataset supplying the vocabulary (pku, cgl, rico, publaynet, webui).
    #[arg(long)]
    preset: Option<String>,
    /// Comma-separated labels; overrides the preset's vocabulary.
    #[arg(long, value_delimiter = ',')]
    vocab: Option<Vec<String>>,
    /// Fail on labels outside the vocabulary instead of dropping them.
    #[arg(long)]
    strict: bool,
}

impl VocabArgs {
    fn manifest(&self) -> Result<DatasetManifest> {
        let mut m = match &self.preset {
            Some(p) => DatasetManifest::preset(p)?,
            None => DatasetManifest::new("custom", TaskKind::ConstraintExplicit, Vec::new()),
        };
        if let Some(v) = &self.vocab {
            m.vocabulary = v.clone();
        }
        if m.vocabulary.is_empty() {
            return Err(usage("pass --preset or --vocab"));
        }
        Ok(m)
    }
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    vocab: VocabArgs,
    /// Require the preset's published split sizes.
    #[arg(long)]
    check_splits: bool,
    /// Write the canonical records here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum IndexCommand {
    /// Index one split of a dataset.
    Build(IndexBuildArgs),
    /// Print size and vocabulary of an index file.
    Info {
        #[arg(long)]
        index: PathBuf,
    },
}

#[derive(Args, Debug)]
struct IndexBuildArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    vocab: VocabArgs,
    #[arg(long, default_value = "train")]
    split: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    w_geo: f64,
    #[arg(long, default_value_t = 0.5)]
    w_label: f64,
}

#[derive(Args, Debug)]
struct RetrieveArgs {
    #[arg(long)]
    index: PathBuf,
    /// Use an indexed layout as the query.
    #[arg(long, conflicts_with = "query", required_unless_present = "query")]
    query_id: Option<String>,
    /// File holding one interchange record or an HTML snippet.
    #[arg(long)]
    query: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Leave out the entry whose id equals the query's.
    #[arg(long)]
    exclude_self: bool,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Random exemplars instead of retrieved ones.
    #[arg(long)]
    no_rag: bool,
    /// Stop after the coarse step.
    #[arg(long)]
    no_cot: bool,
    /// Number of refinement stages (1 to 3).
    #[arg(long)]
    stages: Option<u8>,
    #[arg(long)]
    limit: Option<usize>,
    /// Run directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Generated layouts as interchange JSONL; `{"id","error"}` lines count as failures.
    #[arg(long)]
    generated: PathBuf,
    /// Reference layouts, matched by id.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Training records for R_e statistics.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long, default_value = "train")]
    train_split: String,
    /// Comma-separated metric names.
    #[arg(long)]
    metrics: Option<String>,
    /// Leave underlays out of the overlap metric.
    #[arg(long)]
    content_aware: bool,
    /// Tab-separated output with full precision.
    #[arg(long)]
    tsv: bool,
}

#[derive(Args, Debug)]
struct RenderArgs {
    /// Interchange JSONL or a single HTML snippet.
    #[arg(long)]
    input: PathBuf,
    /// Only this layout.
    #[arg(long)]
    id: Option<String>,
    /// An `.svg` file for a single layout, otherwise a directory.
    #[arg(long)]
    out: PathBuf,
    /// Grayscale PGM drawn under the layout.
    #[arg(long)]
    background: Option<PathBuf>,
    /// Use each record's saliency raster as background.
    #[arg(long, conflicts_with = "background")]
    saliency: bool,
    #[arg(long)]
    no_labels: bool,
}

#[derive(Subcommand, Debug)]
enum PromptsCommand {
    /// List templates and their placeholders.
    List {
        /// Template directory overriding the built-ins.
        #[arg(long)]
        templates: Option<PathBuf>,
    },
    /// Print the prompt the pipeline would send for one item.
    Render(PromptsRenderArgs),
}

#[derive(Args, Debug)]
struct PromptsRenderArgs {
    /// Test item; the first one when omitted.
    #[arg(long)]
    id: Option<String>,
    /// coarse, 1, 2 or 3.
    #[arg(long, default_value = "coarse")]
    stage: String,
    /// Layout being refined (record or HTML); required for refinement stages.
    #[arg(long)]
    current: Option<PathBuf>,
    /// Print the bundle as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand, Debug)]
enum GatewayCommand {
    /// Probe the backend, or count transcripts in replay mode.
    Ping {
        #[arg(long)]
        transcripts: Option<PathBuf>,
    },
    /// Recompute every transcript key from its stored request.
    ReplayCheck {
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

/// Error raised for a command line that parses but cannot be acted on.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            print_help_for(&argv);
            return ExitCode::from(2);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            print_help_for(&argv);
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Long help of the deepest subcommand named on the command line.
fn print_help_for(argv: &[String]) {
    let mut cmd = Cli::command();
    let mut path = Vec::new();
    {
        let mut cur = &cmd;
        for arg in argv.iter().skip(1) {
            if let Some(sub) = cur.find_subcommand(arg) {
                path.push(sub.get_name().to_string());
                cur = sub;
            }
        }
    }
    cmd.build();
    let mut cur = &mut cmd;
    for name in &path {
        cur = cur.find_subcommand_mut(name).expect("found above");
    }
    let _ = writeln!(std::io::stderr(), "\n{}", cur.render_long_help());
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Index(IndexCommand::Build(a)) => index_build(a),
        Command::Index(IndexCommand::Info { index }) => index_info(index),
        Command::Retrieve(a) => retrieve(a),
        Command::Generate(a) => generate(cli, a),
        Command::Eval(a) => eval(a),
        Command::Render(a) => render(a),
        Command::Prompts(PromptsCommand::List { templates }) => prompts_list(templates.as_deref()),
        Command::Prompts(PromptsCommand::Render(a)) => prompts_render(cli, a),
        Command::Gateway(GatewayCommand::Ping { transcripts }) => gateway_ping(cli, transcripts.as_deref()),
        Command::Gateway(GatewayCommand::ReplayCheck { dir }) => gateway_replay_check(cli, dir.as_deref()),
    }
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let manifest = a.vocab.manifest()?;
    let opts = IngestOptions { strict: a.vocab.strict, check_split_sizes: a.check_splits };
    let ds = ingest_file(&a.input, &manifest, &opts).with_context(|| format!("ingesting {}", a.input.display()))?;
    for w in &ds.warnings {
        eprintln!("warning: {w}");
    }
    for (split, n) in &ds.split_counts {
        println!("{split}\t{n}");
    }
    if let Some(out) = &a.out {
        ds.export(std::io::BufWriter::new(std::fs::File::create(out)?))?;
    }
    Ok(())
}

fn index_build(a: &IndexBuildArgs) -> Result<()> {
    let manifest = a.vocab.manifest()?;
    let opts = IngestOptions { strict: a.vocab.strict, check_split_sizes: false };
    let ds = ingest_file(&a.dataset, &manifest, &opts).with_context(|| format!("ingesting {}", a.dataset.display()))?;
    let weights = CostWeights::new(a.w_geo, a.w_label)?;
    let built = build_index(&ds, &a.split, weights)?;
    for w in ds.warnings.iter().chain(&built.warnings) {
        eprintln!("warning: {w}");
    }
    save_index(&built.index, &a.out)?;
    println!("indexed {} layouts into {}", built.index.len(), a.out.display());
    Ok(())
}

fn index_info(path: &Path) -> Result<()> {
    let index = load_index(path)?;
    println!("version\t{}", index.version);
    println!("entries\t{}", index.len());
    println!("vocabulary\t{}", index.vocabulary.join(","));
    println!("weights\tgeo={} label={}", index.weights.w_geo, index.weights.w_label);
    Ok(())
}

/// Read a layout from a file holding one interchange record or an HTML snippet.
fn read_layout_file(path: &Path, vocabulary: &[String]) -> Result<Layout> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        let first = trimmed.lines().next().unwrap_or_default();
        let rec: LayoutRecord = serde_json::from_str(first).with_context(|| format!("parsing {}", path.display()))?;
        Ok(rec.to_layout())
    } else {
        let mut parsed = parse_html(&text, vocabulary)?;
        for w in &parsed.warnings {
            eprintln!("warning: {w}");
        }
        parsed.layout.id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(parsed.layout)
    }
}

fn retrieve(a: &RetrieveArgs) -> Result<()> {
    let index = load_index(&a.index)?;
    let query = match (&a.query_id, &a.query) {
        (Some(id), _) => {
            let entry = index.entry(id).with_context(|| format!("`{id}` is not in the index"))?;
            index.layout_of(entry, (1, 1))
        }
        (None, Some(path)) => normalize(&read_layout_file(path, &index.vocabulary)?)?,
        (None, None) => return Err(usage("pass --query-id or --query")),
    };
    if a.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let mut opts = RetrieveOptions::top(a.k);
    opts.exclude_self = a.exclude_self;
    for hit in topk_retrieve(&query, &index, &opts)? {
        println!("{}\t{:.6}", hit.id, hit.similarity);
    }
    Ok(())
}

fn config_path(cli: &Cli, command: &str) -> Result<PathBuf> {
    cli.config.clone().ok_or_else(|| usage(format!("`{command}` needs --config")))
}

fn generate(cli: &Cli, a: &GenerateArgs) -> Result<()> {
    let path = config_path(cli, "generate")?;
    let overrides = RunOverrides {
        seed: cli.seed,
        mode: cli.mode,
        no_rag: a.no_rag,
        no_cot: a.no_cot,
        stages: a.stages,
        output_dir: a.out.clone(),
        limit: a.limit,
    };
    let summary = run_task(&path, &overrides)?;
    eprintln!("wrote {} ({} items, {} failed)", summary.run_dir.display(), summary.items, summary.failures);
    print!("{}", summary.report.to_pretty());
    Ok(())
}

/// Generated records plus the ids of failed items.
fn read_generated(path: &Path) -> Result<(Vec<LayoutRecord>, Vec<String>)> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        if v.get("error").is_some() {
            failed.push(v.get("id").and_then(|x| x.as_str()).unwrap_or("?").to_string());
            continue;
        }
        ok.push(serde_json::from_value(v).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok((ok, failed))
}

fn eval(a: &EvalArgs) -> Result<()> {
    let (generated, failed) = read_generated(&a.generated)?;
    if !failed.is_empty() {
        eprintln!("{} failed item(s) skipped", failed.len());
    }
    let references: BTreeMap<String, LayoutRecord> = match &a.reference {
        Some(p) => read_generated(p)?.0.into_iter().map(|r| (r.id.clone(), r)).collect(),
        None => BTreeMap::new(),
    };
    let ref_dir = a.reference.as_deref().and_then(Path::parent).map(Path::to_path_buf);
    let gen_dir = a.generated.parent().map(Path::to_path_buf).unwrap_or_default();

    let mut items = Vec::new();
    for rec in &generated {
        let mut item = EvalItem::new(rec.to_layout());
        let reference = references.get(&rec.id);
        if let Some(r) = reference.filter(|r| !r.elements.is_empty()) {
            item.reference = Some(r.to_layout());
        }
        // Rasters come from whichever record names them, relative to that file.
        let raster = |field: fn(&LayoutRecord) -> &Option<String>| -> Result<_> {
            let (name, dir) = match (reference.and_then(|r| field(r).as_ref()), field(rec)) {
                (Some(n), _) => (n, ref_dir.clone().unwrap_or_default()),
                (None, Some(n)) => (n, gen_dir.clone()),
                (None, None) => return Ok(None),
            };
            let path = dir.join(name);
            Ok(Some(load_raster(&path).with_context(|| format!("loading {}", path.display()))?))
        };
        item.saliency = raster(|r| &r.saliency)?;
        item.gradient = raster(|r| &r.gradient)?;
        items.push(item);
    }
    if items.is_empty() {
        bail!("no generated layouts to evaluate");
    }

    let metrics = match &a.metrics {
        Some(list) => Metric::parse_list(list)?,
        None if a.content_aware => Metric::CONTENT_AWARE.to_vec(),
        None if !references.is_empty() => vec![Metric::Align, Metric::Ove, Metric::Val, Metric::MIoU],
        None => vec![Metric::Align, Metric::Ove, Metric::Val],
    };
    let mut settings = if a.content_aware { EvalSettings::content_aware(None) } else { EvalSettings::new(Vec::new()) };
    settings.metrics = metrics;
    if let Some(train) = &a.train {
        let (records, _) = read_generated(train)?;
        let layouts: Vec<Layout> = records
            .iter()
            .filter(|r| r.split == a.train_split)
            .map(|r| normalize(&r.to_layout()))
            .collect::<Result<_, _>>()?;
        settings.area_stats = area_stats_of(&layouts);
        if settings.area_stats.is_none() {
            bail!("{} has no `{}` layouts", train.display(), a.train_split);
        }
    }
    let report = evaluate(&items, &settings)?;
    if a.tsv {
        print!("{}", report.to_tsv());
    } else {
        print!("{}", report.to_pretty());
    }
    Ok(())
}

fn file_name(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' }).collect()
}

fn render(a: &RenderArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let layouts: Vec<Layout> = if text.trim_start().starts_with('{') {
        read_generated(&a.input)?.0.iter().map(LayoutRecord::to_layout).collect()
    } else {
        vec![read_layout_file(&a.input, &[])?]
    };
    let layouts: Vec<Layout> = match &a.id {
        Some(id) => {
            let one: Vec<Layout> = layouts.into_iter().filter(|l| &l.id == id).collect();
            if one.is_empty() {
                bail!("no layout `{id}` in {}", a.input.display());
            }
            one
        }
        None => layouts,
    };
    let style = RenderStyle { show_labels: !a.no_labels, ..Default::default() };
    let fixed_bg = a.background.as_ref().map(load_raster).transpose()?;
    let input_dir = a.input.parent().map(Path::to_path_buf).unwrap_or_default();
    let single_file = a.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("svg"));
    if single_file && layouts.len() != 1 {
        return Err(usage(format!("{} layouts cannot go to one file; pass --id or a directory", layouts.len())));
    }
    if !single_file {
        std::fs::create_dir_all(&a.out)?;
    }
    for layout in &layouts {
        let bg = match (&fixed_bg, a.saliency, &layout.task_meta.saliency) {
            (Some(bg), _, _) => Some(bg.clone()),
            (None, true, Some(p)) => Some(load_raster(input_dir.join(p))?),
            _ => None,
        };
        let svg = render_svg(layout, &style, bg.as_ref());
        let path = if single_file { a.out.clone() } else { a.out.join(format!("{}.svg", file_name(&layout.id))) };
        std::fs::write(&path, svg)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn prompts_list(templates: Option<&Path>) -> Result<()> {
    let catalog = match templates {
        Some(dir) => PromptCatalog::load_dir(dir)?,
        None => PromptCatalog::builtin(),
    };
    for t in catalog.iter() {
        let names: Vec<&str> = t.placeholders.iter().map(String::as_str).collect();
        println!("{}\t{}", t.id, names.join(","));
    }
    Ok(())
}

fn load_config(cli: &Cli, command: &str) -> Result<RunConfig> {
    let path = config_path(cli, command)?;
    let mut cfg = RunConfig::load(&path).with_context(|| format!("loading {}", path.display()))?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new("")));
    if let Some(s) = cli.seed {
        cfg.generation.seed = s;
    }
    if let Some(m) = cli.mode {
        cfg.backend.mode = m;
    }
    Ok(cfg)
}

fn prompts_render(cli: &Cli, a: &PromptsRenderArgs) -> Result<()> {
    let stage: Stage = a.stage.parse().map_err(|e: layoutcot::prompt::PromptError| usage(e.to_string()))?;
    if stage != Stage::Coarse && a.current.is_none() {
        return Err(usage("refinement stages need --current"));
    }
    let mut cfg = load_config(cli, "prompts render")?;
    // Rendering never calls the model; keep the gateway offline.
    cfg.backend.mode = Mode::Replay;
    if cfg.backend.transcript_dir.is_none() {
        cfg.backend.transcript_dir = Some(std::env::temp_dir());
    }
    let prepared = prepare(&cfg)?;
    let pipeline = &prepared.pipeline;
    let item = match &a.id {
        Some(id) => prepared.dataset.get(id).with_context(|| format!("no item `{id}` in the dataset"))?,
        None => prepared.dataset.split(&cfg.dataset.test_split).next().with_context(|| format!("split `{}` is empty", cfg.dataset.test_split))?,
    };
    let input = pipeline.task_input(&item.pixels, cfg.run.family)?;
    let exemplars = pipeline.select_exemplars(&input)?;
    let bundle = match stage {
        Stage::Coarse => pipeline.catalog.build_coarse_prompt(&exemplars.coarse, &input.constraint)?,
        _ => {
            let path = a.current.as_deref().expect("checked above");
            let current = read_layout_file(path, &pipeline.vocabulary)?;
            let t = Stage::ALL.iter().position(|s| *s == stage).expect("known stage") as u8;
            pipeline.catalog.build_stage_prompt(t, cfg.run.family, exemplars.cot(), &current, &input.constraint)?
        }
    };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&bundle)?);
    } else {
        println!("=== system ({}) ===\n{}\n=== user ===\n{}", bundle.provenance.template, bundle.system, bundle.user);
    }
    Ok(())
}

fn backend_config(cli: &Cli) -> Result<BackendConfig> {
    let mut backend = match &cli.config {
        Some(_) => load_config(cli, "gateway")?.backend,
        None => BackendConfig { mode: cli.mode.unwrap_or_default(), ..Default::default() },
    };
    if backend.mode != Mode::Replay {
        backend = backend.with_env();
    }
    Ok(backend)
}

fn gateway_ping(cli: &Cli, transcripts: Option<&Path>) -> Result<()> {
    let mut backend = backend_config(cli)?;
    if let Some(dir) = transcripts {
        backend.transcript_dir = Some(dir.to_path_buf());
    }
    if backend.mode == Mode::Replay && backend.transcript_dir.is_none() {
        return Err(usage("replay mode needs --transcripts or a config with transcript_dir"));
    }
    let gateway = Gateway::new(backend)?;
    println!("{}", gateway.ping()?.trim());
    Ok(())
}

fn gateway_replay_check(cli: &Cli, dir: Option<&Path>) -> Result<()> {
    let dir = match dir {
        Some(d) => d.to_path_buf(),
        None => backend_config(cli)?.transcript_dir.ok_or_else(|| usage("pass --dir or a config with transcript_dir"))?,
    };
    let report = replay_check(&dir)?;
    for p in &report.mismatched {
        println!("mismatch\t{}", p.display());
    }
    println!("checked {} transcripts, {} mismatched", report.checked, report.mismatched.len());
    if !report.mismatched.is_empty() {
        bail!("{} transcript(s) do not match their request", report.mismatched.len());
    }
    Ok(())
}
