use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use slicewise::analyze::{
    attach_model, identify_error_slices, overlap_matrix, slice_overlap, symmetric_overlap, ErrorSliceReport,
    ParentRule, PerformanceColumn,
};
use slicewise::bench::{bench_algorithms, format_scaling, scaling};
use slicewise::enumerate::{Algorithm, EnumConfig, SliceLattice, DEFAULT_MAX_DEPTH, DEFAULT_MIN_COUNT};
use slicewise::generate::{assign_tags, AssignOptions, GenerationConfig, GenerationSession, ImagePair};
use slicewise::index::{build_index, NamedKey};
use slicewise::llm::{HttpClient, HttpConfig, LlmClient, RecordingClient, ReplayClient, Transcript};
use slicewise::predict::{
    evaluate_predicted, instruct_predict, substitute_tags, EmbeddingProvider, HashEmbedder, InstructOptions, Metric,
    PredictedSlice, SubstituteOptions, TableEmbedder,
};
use slicewise::repair::{prioritize_groups, prioritize_pool, GroupRule, RepairOptions};
use slicewise::schema::{load_dataset, load_schema, AttributeSchema, Category, TaggedDataset, Task};
use slicewise::service::{self, BIND_ENV, DEFAULT_BIND, WORKSPACE_ENV};
use slicewise::synth::{planted_dataset, pose_reference_corpus, random_dataset, PlantedSpec, RandomSpec};
use slicewise::workspace::Manifest;

#[derive(Parser)]
#[command(
    name = "slicewise",
    version,
    about = "Find, predict and repair model error slices over tagged data"
)]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an attribute schema with a multimodal model.
    Generate(GenerateArgs),
    /// Tag images under a frozen schema.
    Tag(TagArgs),
    /// Enumerate every slice with enough samples into a lattice.
    Enumerate(EnumerateArgs),
    /// Rank a model's error slices.
    Analyze(AnalyzeArgs),
    /// Compare the error slices of two or more models.
    Overlap(OverlapArgs),
    /// Predict error slices not seen in the data.
    Predict(PredictArgs),
    /// Choose pool data for repair, worst slices first.
    Select(SelectArgs),
    /// Serve a workspace over HTTP.
    Serve(ServeArgs),
    /// Time the three enumeration algorithms.
    Bench(BenchArgs),
    /// Write synthetic schemas and datasets.
    Synth(SynthArgs),
    /// Write a workspace manifest naming existing artifacts.
    Workspace(WorkspaceArgs),
}

#[derive(Args)]
struct LlmArgs {
    /// Answer from a recorded transcript instead of calling the endpoint.
    #[arg(long)]
    llm_replay: Option<PathBuf>,
    /// Record every exchange to this transcript file.
    #[arg(long)]
    llm_record: Option<PathBuf>,
}

struct LlmSession {
    client: RecordingClient<Arc<dyn LlmClient>>,
    record: Option<PathBuf>,
}

impl LlmArgs {
    fn open(&self) -> Result<LlmSession> {
        let inner: Arc<dyn LlmClient> = match &self.llm_replay {
            Some(path) => {
                let transcript =
                    Transcript::read_ndjson(reader(path)?).with_context(|| format!("reading {}", path.display()))?;
                Arc::new(ReplayClient::new(&transcript))
            }
            None => Arc::new(HttpClient::new(HttpConfig::from_env()?)),
        };
        Ok(LlmSession {
            client: RecordingClient::new(inner),
            record: self.llm_record.clone(),
        })
    }
}

impl LlmSession {
    fn finish(&self) -> Result<()> {
        if let Some(path) = &self.record {
            self.client.transcript().write_ndjson(writer(path)?)?;
        }
        Ok(())
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    task: Task,
    /// Class names; the first is the main object class.
    #[arg(long = "class", required = true)]
    classes: Vec<String>,
    /// JSON list of {class, first, second} image pairs for comparative
    /// attribute generation. Without it the task-specific query is used.
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Hand-picked attribute as `category:name`, e.g. `global:lighting`.
    #[arg(long = "seed-attribute")]
    seed_attributes: Vec<String>,
    /// Skip the model query for attributes (use only seeds and pairs).
    #[arg(long)]
    no_task_query: bool,
    /// File of image paths, one per line, reviewed to refine tags.
    #[arg(long)]
    review_images: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    review_subset: usize,
    #[arg(long, default_value_t = 1)]
    retries: usize,
    #[arg(long)]
    out: PathBuf,
    /// Write every exchange with its stage and prompt here.
    #[arg(long)]
    audit: Option<PathBuf>,
    #[command(flatten)]
    llm: LlmArgs,
}

#[derive(Args)]
struct TagArgs {
    #[arg(long)]
    schema: PathBuf,
    /// File of image paths, one per line; the path is the sample id.
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    main_class: String,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    /// Requests per image before it is quarantined.
    #[arg(long, default_value_t = 2)]
    attempts: usize,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    quarantine: Option<PathBuf>,
    #[command(flatten)]
    llm: LlmArgs,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
}

#[derive(Args)]
struct EnumerateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "efficient")]
    algo: Algorithm,
    #[arg(long, default_value_t = DEFAULT_MAX_DEPTH)]
    depth: usize,
    #[arg(long, default_value_t = DEFAULT_MIN_COUNT)]
    min_count: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    lattice: PathBuf,
    /// NDJSON of {id, performance} lines, or a dataset with performance.
    #[arg(long)]
    performance: PathBuf,
    #[arg(long)]
    model_id: String,
    /// How far below overall performance a slice must average.
    #[arg(long, default_value_t = 0.2)]
    threshold: f64,
    /// Parent rule for post-processing: min, max or none.
    #[arg(long, default_value = "min")]
    rule: String,
    /// Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OverlapArgs {
    #[arg(long = "report", required = true, num_args = 1..)]
    reports: Vec<PathBuf>,
    /// Share of each report's top slices compared.
    #[arg(long, default_value_t = 0.1)]
    fraction: f64,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Strategy {
    Substitute,
    Instruct,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long, value_enum, default_value = "substitute")]
    strategy: Strategy,
    /// Error-slice report seeding tag substitution.
    #[arg(long)]
    report: Option<PathBuf>,
    /// JSON object mapping tag text to its embedding vector.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Use hash pseudo-embeddings of this dimension instead of a table.
    #[arg(long)]
    hash_dim: Option<usize>,
    #[arg(long, default_value_t = 20)]
    top_k: usize,
    #[arg(long, default_value = "euclidean")]
    metric: Metric,
    /// Pairs per requested combination.
    #[arg(long, default_value_t = 2)]
    pairs: usize,
    #[arg(long)]
    main_class: Option<String>,
    #[arg(long)]
    confusion_class: Option<String>,
    #[arg(long, default_value_t = 1)]
    retries: usize,
    #[arg(long, default_value = "llm")]
    model_id: String,
    /// Dataset with performance on which to measure the predictions.
    #[arg(long)]
    evaluate: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MIN_COUNT)]
    min_count: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    llm: LlmArgs,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    pool: PathBuf,
    #[arg(long)]
    budget: usize,
    /// Rank groups (images) instead of samples.
    #[arg(long)]
    group: bool,
    #[arg(long, default_value = "best-rank")]
    group_rule: GroupRule,
    /// Slice key to move ahead of the ranking; repeatable, kept in order.
    #[arg(long = "pin")]
    pins: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = WORKSPACE_ENV)]
    workspace: PathBuf,
    #[arg(long, env = BIND_ENV, default_value = DEFAULT_BIND)]
    bind: SocketAddr,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = DEFAULT_MAX_DEPTH)]
    depth: usize,
    #[arg(long, default_value_t = DEFAULT_MIN_COUNT)]
    min_count: usize,
    /// Reference corpus size when no dataset is given.
    #[arg(long, default_value_t = 7000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "algo", default_values = ["naive", "tree", "efficient"])]
    algorithms: Vec<Algorithm>,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Also time efficient enumeration at these corpus sizes.
    #[arg(long, value_delimiter = ',')]
    scaling: Vec<usize>,
    #[arg(long, requires = "dataset")]
    schema: Option<PathBuf>,
    #[arg(long, requires = "schema")]
    dataset: Option<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SynthKind {
    /// The 46-attribute pose-scale reference corpus.
    Pose,
    Random,
    /// Random background plus a planted low-performance combination.
    Planted,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "pose")]
    kind: SynthKind,
    #[arg(long, default_value_t = 7000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    attributes: usize,
    #[arg(long, default_value_t = 4)]
    tags: usize,
    #[arg(long, default_value_t = 50)]
    planted: usize,
    #[arg(long)]
    out_schema: PathBuf,
    #[arg(long)]
    out_dataset: PathBuf,
}

#[derive(Args)]
struct WorkspaceArgs {
    #[arg(long)]
    root: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    lattice: PathBuf,
    /// `id=performance.ndjson,report.json`; repeatable.
    #[arg(long = "model")]
    models: Vec<String>,
    #[arg(long)]
    pool: Option<PathBuf>,
}

fn reader(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn writer(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json(path: Option<&Path>, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match path {
        Some(p) => writer(p)?.write_all(text.as_bytes())?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn read_schema(path: &Path) -> Result<Arc<AttributeSchema>> {
    Ok(Arc::new(
        load_schema(reader(path)?).with_context(|| format!("schema {}", path.display()))?,
    ))
}

fn read_dataset(schema: &Arc<AttributeSchema>, path: &Path) -> Result<TaggedDataset> {
    load_dataset(schema.clone(), reader(path)?).with_context(|| format!("dataset {}", path.display()))
}

fn read_report(path: &Path) -> Result<ErrorSliceReport> {
    ErrorSliceReport::read_json(reader(path)?).with_context(|| format!("report {}", path.display()))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for line in reader(path)?.lines() {
        let line = line?;
        let line = line.trim();
        if !line.is_empty() {
            out.push(line.to_string());
        }
    }
    Ok(out)
}

fn generate(args: GenerateArgs) -> Result<()> {
    let config = GenerationConfig {
        review_subset: args.review_subset,
        retries: args.retries,
        ..GenerationConfig::default()
    };
    let mut session = GenerationSession::new(args.task, args.classes, config);
    let mut seeds = Vec::new();
    for s in &args.seed_attributes {
        let (cat, name) = s
            .split_once(':')
            .with_context(|| format!("seed attribute `{s}` is not category:name"))?;
        let category = Category::from_form_key(cat).with_context(|| format!("unknown category `{cat}`"))?;
        seeds.push((name, category));
    }
    session.seed_attributes(seeds)?;
    let llm = args.llm.open()?;
    let result = (|| -> Result<AttributeSchema> {
        if let Some(path) = &args.pairs {
            let pairs: Vec<ImagePair> =
                serde_json::from_reader(reader(path)?).with_context(|| format!("pairs {}", path.display()))?;
            session.generate_attributes_comparative(&llm.client, &pairs)?;
        }
        if !args.no_task_query {
            session.generate_attributes_task(&llm.client)?;
        }
        session.determine_tags(&llm.client)?;
        let review = match &args.review_images {
            Some(path) => read_lines(path)?,
            None => Vec::new(),
        };
        Ok(session.refine_tags_from_data(&llm.client, &review)?)
    })();
    llm.finish()?;
    if let Some(path) = &args.audit {
        write_json(
            Some(path),
            &json!({ "audit": session.audit(), "flags": session.flags() }),
        )?;
    }
    for flag in session.flags() {
        log::warn!("{}", serde_json::to_string(flag)?);
    }
    let schema = result?;
    writer(&args.out)?.write_all((schema.to_json_pretty() + "\n").as_bytes())?;
    eprintln!("{} attributes written to {}", schema.len(), args.out.display());
    Ok(())
}

fn tag(args: TagArgs) -> Result<()> {
    let schema = read_schema(&args.schema)?;
    let images = read_lines(&args.images)?;
    let opts = AssignOptions {
        main_class: args.main_class,
        parallelism: args.parallelism,
        attempts: args.attempts,
        checkpoint: args.checkpoint,
    };
    let llm = args.llm.open()?;
    let outcome = assign_tags(&schema, &llm.client, &images, &opts);
    llm.finish()?;
    let outcome = outcome?;
    outcome.dataset.write_ndjson(writer(&args.out)?)?;
    if let Some(path) = &args.quarantine {
        write_json(Some(path), &outcome.quarantine)?;
    }
    eprintln!(
        "{} tagged, {} quarantined, {} resumed, {} requests",
        outcome.dataset.len(),
        outcome.quarantine.len(),
        outcome.resumed,
        outcome.requests
    );
    Ok(())
}

fn enumerate(args: EnumerateArgs) -> Result<()> {
    let schema = read_schema(&args.data.schema)?;
    let dataset = read_dataset(&schema, &args.data.dataset)?;
    let cfg = EnumConfig::new(args.depth, args.min_count).with_threads(args.threads);
    let lattice = args.algo.run(&build_index(&dataset), &cfg)?;
    let mut out = writer(&args.out)?;
    lattice.write_json(&mut out)?;
    out.flush()?;
    for (d, layer) in lattice.layers().iter().enumerate() {
        eprintln!("depth {}: {} slices", d + 1, layer.len());
    }
    eprintln!(
        "{} slices ({}) written to {}",
        lattice.len(),
        args.algo,
        args.out.display()
    );
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    let lattice = Arc::new(
        SliceLattice::read_json(reader(&args.lattice)?)
            .with_context(|| format!("lattice {}", args.lattice.display()))?,
    );
    let perf = PerformanceColumn::read_ndjson(reader(&args.performance)?)
        .with_context(|| format!("performance {}", args.performance.display()))?;
    let mut view = attach_model(lattice, &args.model_id, &perf)?;
    if args.rule != "none" {
        view = view.postprocess(args.rule.parse::<ParentRule>().map_err(anyhow::Error::msg)?);
    }
    let report = identify_error_slices(&view, args.threshold)?;
    eprintln!(
        "{}: overall {:.4}, {} of {} retained slices are error slices",
        report.model_id,
        report.overall_perf,
        report.len(),
        report.retained_count
    );
    write_json(args.out.as_deref(), &report)
}

fn overlap(args: OverlapArgs) -> Result<()> {
    let reports: Vec<ErrorSliceReport> = args.reports.iter().map(|p| read_report(p)).collect::<Result<_>>()?;
    if let [a, b] = reports.as_slice() {
        return write_json(
            None,
            &json!({
                "a": a.model_id,
                "b": b.model_id,
                "fraction": args.fraction,
                "overlap": slice_overlap(a, b, args.fraction)?,
                "reverse": slice_overlap(b, a, args.fraction)?,
                "symmetric": symmetric_overlap(a, b, args.fraction)?,
            }),
        );
    }
    let models: Vec<&str> = reports.iter().map(|r| r.model_id.as_str()).collect();
    let matrix = overlap_matrix(&reports, args.fraction)?;
    write_json(
        None,
        &json!({ "fraction": args.fraction, "models": models, "matrix": matrix }),
    )
}

fn predict(args: PredictArgs) -> Result<()> {
    let schema = read_schema(&args.schema)?;
    let (predicted, details): (Vec<PredictedSlice>, serde_json::Value) = match args.strategy {
        Strategy::Substitute => {
            let report_path = args
                .report
                .as_deref()
                .context("--report is required for substitution")?;
            let report = read_report(report_path)?;
            let provider: Box<dyn EmbeddingProvider> = match (&args.embeddings, args.hash_dim) {
                (Some(path), _) => Box::new(TableEmbedder::from_json(&std::fs::read_to_string(path)?)?),
                (None, Some(dim)) => Box::new(HashEmbedder { dim }),
                (None, None) => bail!("substitution needs --embeddings or --hash-dim"),
            };
            let opts = SubstituteOptions {
                top_k: args.top_k,
                metric: args.metric,
            };
            let out = substitute_tags(&report, &schema, provider.as_ref(), &opts)?;
            (out.predicted, json!({ "skipped": out.skipped }))
        }
        Strategy::Instruct => {
            let opts = InstructOptions {
                task: schema.task(),
                pair_count: args.pairs,
                main_class: args
                    .main_class
                    .clone()
                    .context("--main-class is required for instruction")?,
                confusion_class: args.confusion_class.clone(),
                retries: args.retries,
                model_id: args.model_id.clone(),
            };
            let llm = args.llm.open()?;
            let out = instruct_predict(&schema, &llm.client, &opts);
            llm.finish()?;
            let out = out?;
            (
                out.predicted,
                json!({ "dropped": out.dropped, "attempts": out.attempts }),
            )
        }
    };
    let evaluation = match &args.evaluate {
        Some(path) => Some(evaluate_predicted(
            &predicted,
            &read_dataset(&schema, path)?,
            args.min_count,
        )?),
        None => None,
    };
    eprintln!("{} predicted slices", predicted.len());
    write_json(
        args.out.as_deref(),
        &json!({
            "version": "1",
            "kind": "predicted-slices",
            "predicted": predicted,
            "details": details,
            "evaluation": evaluation,
        }),
    )
}

fn select(args: SelectArgs) -> Result<()> {
    let report = read_report(&args.report)?;
    let schema = read_schema(&args.schema)?;
    let pool = read_dataset(&schema, &args.pool)?;
    let pinned = args
        .pins
        .iter()
        .map(|p| p.parse::<NamedKey>())
        .collect::<Result<Vec<_>, _>>()?;
    let opts = RepairOptions {
        pinned,
        group_rule: args.group_rule,
    };
    let plan = if args.group {
        prioritize_groups(&report, &pool, args.budget, &opts)?
    } else {
        prioritize_pool(&report, &pool, args.budget, &opts)
    };
    for w in &plan.warnings {
        log::warn!("{w}");
    }
    let justified = plan.selections.iter().filter(|s| s.slice_key.is_some()).count();
    eprintln!("{} selected, {} from error slices", plan.len(), justified);
    write_json(args.out.as_deref(), &plan)
}

fn serve(args: ServeArgs) -> Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(service::serve(args.workspace, args.bind))
}

fn bench(args: BenchArgs) -> Result<()> {
    let cfg = EnumConfig::new(args.depth, args.min_count).with_threads(args.threads);
    let dataset = match (&args.schema, &args.dataset) {
        (Some(s), Some(d)) => read_dataset(&read_schema(s)?, d)?,
        _ => pose_reference_corpus(args.samples, args.seed),
    };
    let report = bench_algorithms(&dataset, &cfg, &args.algorithms, args.repeats)?;
    let points = if args.scaling.is_empty() {
        Vec::new()
    } else {
        scaling(&args.scaling, args.seed, &cfg, args.repeats)?
    };
    if args.json {
        return write_json(None, &json!({ "algorithms": report, "scaling": points }));
    }
    print!("{report}");
    if !report.counts_agree() {
        bail!("algorithms disagree on the slice count");
    }
    if !points.is_empty() {
        print!("\n{}", format_scaling(&points));
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let dataset = match args.kind {
        SynthKind::Pose => pose_reference_corpus(args.samples, args.seed),
        SynthKind::Random => random_dataset(&RandomSpec::fixed(args.attributes, args.tags, args.samples), args.seed),
        SynthKind::Planted => {
            if args.attributes < 3 {
                bail!("a planted combination needs at least 3 attributes");
            }
            let spec = PlantedSpec {
                background: RandomSpec::fixed(args.attributes, args.tags, args.samples),
                combination: vec![(0, 0), (1, 1 % args.tags), (2, 0)],
                planted_count: args.planted,
                planted_performance: 0.2,
                background_performance: 0.95,
                background_noise: 0.03,
            };
            let planted = planted_dataset(&spec, args.seed);
            eprintln!("planted {}", NamedKey::new(planted.pairs.clone()));
            planted.dataset
        }
    };
    writer(&args.out_schema)?.write_all((dataset.schema().to_json_pretty() + "\n").as_bytes())?;
    let mut out = writer(&args.out_dataset)?;
    dataset.write_ndjson(&mut out)?;
    out.flush()?;
    eprintln!("{} samples over {} attributes", dataset.len(), dataset.schema().len());
    Ok(())
}

fn workspace(args: WorkspaceArgs) -> Result<()> {
    let mut manifest = Manifest::new(args.schema, args.dataset, args.lattice);
    for m in &args.models {
        let (id, paths) = m
            .split_once('=')
            .with_context(|| format!("model `{m}` is not id=perf,report"))?;
        let (perf, report) = paths
            .split_once(',')
            .with_context(|| format!("model `{m}` is not id=perf,report"))?;
        manifest = manifest.with_model(id, perf, report);
    }
    if let Some(pool) = args.pool {
        manifest = manifest.with_pool(pool);
    }
    std::fs::create_dir_all(&args.root)?;
    manifest.write(&args.root)?;
    // load once so broken references fail now rather than at serve time
    slicewise::workspace::Workspace::load(&args.root)?;
    eprintln!("workspace written to {}", args.root.display());
    Ok(())
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Generate(_) => "generate",
        Command::Tag(_) => "tag",
        Command::Enumerate(_) => "enumerate",
        Command::Analyze(_) => "analyze",
        Command::Overlap(_) => "overlap",
        Command::Predict(_) => "predict",
        Command::Select(_) => "select",
        Command::Serve(_) => "serve",
        Command::Bench(_) => "bench",
        Command::Synth(_) => "synth",
        Command::Workspace(_) => "workspace",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let name = command_name(&cli.command);
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Tag(a) => tag(a),
        Command::Enumerate(a) => enumerate(a),
        Command::Analyze(a) => analyze(a),
        Command::Overlap(a) => overlap(a),
        Command::Predict(a) => predict(a),
        Command::Select(a) => select(a),
        Command::Serve(a) => serve(a),
        Command::Bench(a) => bench(a),
        Command::Synth(a) => synth(a),
        Command::Workspace(a) => workspace(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let causes: Vec<String> = e.chain().skip(1).map(|c| c.to_string()).collect();
            let doc = json!({
                "version": "1",
                "kind": "error",
                "command": name,
                "error": e.to_string(),
                "causes": causes,
            });
            eprintln!("{doc}");
            ExitCode::FAILURE
        }
    }
}
