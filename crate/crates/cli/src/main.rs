use clap::{Args, Parser, Subcommand};
use star_core::agent::{self, AgentError, AnswerGenerator, HttpGenerator, Query, ReferenceGenerator};
use star_core::bundle::{self, BundleError};
use star_core::canonical::{self, FloatStyle, EVIDENCE_DIGITS};
use star_core::config::{ConfigError, RetrievalConfig};
use star_core::eval::{self, DescriptiveJudge, EvalConfig, EvalError, HttpJudge, Method, TokenJudge};
use star_core::evidence::{MidpointSelector, RetrievalIndex};
use star_core::store::{self, IngestOptions, StoreError};
use star_core::synth::{self, QATask, ScenarioSpec, SynthError};
use star_core::vector::{HashEmbedder, EXTERNAL_SCHEME};
use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

const DEFAULT_SEED: u64 = 42;
const TASKS_FILE: &str = "tasks.jsonl";
const GEN_MANIFEST_FILE: &str = "gen_manifest.json";

#[derive(Parser)]
#[command(name = "star", version, about = "Task-conditioned retrieval over long-horizon robot memory")]
struct Cli {
    /// TOML retrieval config; flags below override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, short, global = true)]
    verbose: bool,
    /// Scenario seed for `gen` and spec-driven `eval`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    delta_bar: Option<f64>,
    /// Evidence budget K.
    #[arg(long = "top-k", global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    r_adj: Option<f64>,
    #[arg(long, global = true)]
    max_rounds: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate record files and write a sealed snapshot bundle.
    Build(BuildArgs),
    /// Answer one question against a snapshot.
    Query(QueryArgs),
    /// Run the benchmark for one retrieval method.
    Eval(EvalArgs),
    /// Generate a synthetic warehouse scenario.
    Gen(GenArgs),
}

#[derive(Args)]
struct BuildArgs {
    /// Directory holding captions.jsonl, primitives.jsonl and keyframes.jsonl.
    #[arg(long, conflicts_with_all = ["captions", "primitives", "keyframes"])]
    input: Option<PathBuf>,
    #[arg(long, requires_all = ["primitives", "keyframes"])]
    captions: Option<PathBuf>,
    #[arg(long)]
    primitives: Option<PathBuf>,
    #[arg(long)]
    keyframes: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Memory duration in seconds; defaults to the latest recorded time.
    #[arg(long)]
    horizon: Option<f64>,
    /// Ignore unknown fields instead of rejecting them.
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    snapshot: PathBuf,
    #[arg(long)]
    text: String,
    /// Description of what the robot is currently looking at.
    #[arg(long)]
    observation: Option<String>,
    /// Query time on the memory clock; defaults to the horizon.
    #[arg(long)]
    now: Option<f64>,
    /// Print the answer as one canonical JSON line.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, requires = "tasks", conflicts_with = "spec")]
    snapshot: Option<PathBuf>,
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// Scenario spec to generate in memory; the built-in warehouse if omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value = "star")]
    method: String,
    /// Line-delimited report output.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Remote judge for descriptive answers.
    #[arg(long)]
    judge_url: Option<String>,
    /// TOML file with evaluation thresholds.
    #[arg(long)]
    eval_config: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    /// TOML scenario spec; the built-in warehouse if omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Data(String),
    Usage(String),
}

impl Failure {
    fn data(e: impl Display) -> Self {
        Failure::Data(e.to_string())
    }

    fn usage(e: impl Display) -> Self {
        Failure::Usage(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Build(a) => cmd_build(&cli, a),
        Command::Query(a) => cmd_query(&cli, a),
        Command::Eval(a) => cmd_eval(&cli, a),
        Command::Gen(a) => cmd_gen(&cli, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

/// File config (or `base`), then flag overrides, then validation.
fn effective_config(cli: &Cli, base: Option<RetrievalConfig>) -> Result<RetrievalConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => RetrievalConfig::load(path).map_err(config_failure)?,
        None => base.unwrap_or_default(),
    };
    let o = &cli.overrides;
    if let Some(v) = o.tau {
        cfg.tau = v;
    }
    if let Some(v) = o.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = o.delta_bar {
        cfg.delta_bar = v;
    }
    if let Some(v) = o.k {
        cfg.k = v;
    }
    if let Some(v) = o.r_adj {
        cfg.r_adj = v;
    }
    if let Some(v) = o.max_rounds {
        cfg.max_rounds = v;
    }
    cfg.validate().map_err(config_failure)?;
    Ok(cfg)
}

fn config_failure(e: ConfigError) -> Failure {
    Failure::usage(e)
}

fn store_failure(e: StoreError) -> Failure {
    match e {
        StoreError::Io { .. } => Failure::usage(e),
        other => Failure::data(other),
    }
}

fn bundle_failure(dir: &Path, e: BundleError) -> Failure {
    Failure::usage(format!("cannot load snapshot {}: {e}", dir.display()))
}

fn write_file(path: &Path, body: &str) -> CmdResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Failure::usage(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, body).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn generator_for(cfg: &RetrievalConfig) -> Box<dyn AnswerGenerator> {
    match &cfg.external_generator_url {
        Some(url) => Box::new(HttpGenerator::new(url.clone(), Duration::from_secs_f64(cfg.generator_timeout_s))),
        None => Box::new(ReferenceGenerator),
    }
}

fn cmd_build(cli: &Cli, a: &BuildArgs) -> CmdResult {
    let cfg = effective_config(cli, None)?;
    let (captions, primitives, keyframes) = match (&a.input, &a.captions) {
        (Some(dir), _) => (
            dir.join(bundle::CAPTIONS_FILE),
            dir.join(bundle::PRIMITIVES_FILE),
            dir.join(bundle::KEYFRAMES_FILE),
        ),
        (None, Some(c)) => (
            c.clone(),
            a.primitives.clone().expect("clap requires primitives"),
            a.keyframes.clone().expect("clap requires keyframes"),
        ),
        (None, None) => return Err(Failure::usage("give --input DIR or --captions/--primitives/--keyframes")),
    };
    let embedder = HashEmbedder::new(cfg.embedding_dim).map_err(Failure::usage)?;
    let snapshot = store::ingest(
        &captions,
        &primitives,
        &keyframes,
        &embedder,
        IngestOptions {
            strict: !a.lenient,
            horizon: a.horizon,
        },
    )
    .map_err(store_failure)?;
    let scheme = &snapshot.embedding_spec().scheme_id;
    if cfg.embedder == EXTERNAL_SCHEME && scheme != EXTERNAL_SCHEME {
        return Err(Failure::data(format!(
            "config expects externally supplied vectors, records embed as {scheme}"
        )));
    }
    let manifest = bundle::write_bundle(&snapshot, &cfg, &a.out).map_err(Failure::usage)?;
    println!("snapshot written to {}", a.out.display());
    println!("  captions:   {}", snapshot.captions().len());
    println!("  primitives: {}", snapshot.primitives().len());
    println!("  keyframes:  {}", snapshot.keyframes().len());
    println!("  horizon:    {} s", snapshot.horizon());
    println!(
        "  embedding:  {} (d = {})",
        snapshot.embedding_spec().scheme_id,
        snapshot.embedding_spec().dimension
    );
    println!("  validation: ok");
    if cli.verbose {
        for (name, entry) in &manifest.files {
            println!("  {name} sha256 {}", entry.sha256);
        }
    }
    Ok(())
}

fn cmd_query(cli: &Cli, a: &QueryArgs) -> CmdResult {
    let (snapshot, manifest) = bundle::load_bundle(&a.snapshot).map_err(|e| bundle_failure(&a.snapshot, e))?;
    let cfg = effective_config(cli, Some(manifest.config))?;
    let index = RetrievalIndex::build(&snapshot).map_err(Failure::data)?;
    let mut query = Query::new(a.text.clone(), a.now.unwrap_or(snapshot.horizon()));
    if let Some(obs) = &a.observation {
        query = query.with_observation(obs.clone());
    }
    let generator = generator_for(&cfg);
    let result = agent::answer_query(&query, &snapshot, &index, &cfg, generator.as_ref(), &MidpointSelector::default())
        .map_err(|e| match e {
            AgentError::UnparseableQuery | AgentError::InvalidQuery(_) | AgentError::Generator(_) => Failure::usage(e),
            other => Failure::data(other),
        })?;
    let answer = &result.answer;
    if a.json {
        println!("{}", answer.to_canonical());
    } else {
        println!("kind:   {}", answer.kind.as_str());
        println!("found:  {}", answer.found);
        println!("answer: {}", answer.text);
        if let Some(p) = answer.position {
            println!("position: [{}, {}, {}]", p[0], p[1], p[2]);
        }
        if let Some(t) = answer.time_ago {
            println!("time_ago_s: {t}");
        }
        println!("rounds: {}", answer.rounds_used);
    }
    if cli.verbose {
        println!("--- rounds");
        for d in &result.history {
            println!("round {} cues {:?}", d.round, d.cues);
        }
        println!("--- evidence");
        println!("{}", answer.evidence.to_canonical());
        if let Some(trace) = &result.trace {
            println!("--- merge trace");
            print!("{}", trace.to_jsonl());
        }
    }
    Ok(())
}

fn read_tasks(path: &Path) -> Result<Vec<QATask>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let mut tasks = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let task = serde_json::from_str(line)
            .map_err(|e| Failure::data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        tasks.push(task);
    }
    Ok(tasks)
}

fn load_spec(cli: &Cli, path: Option<&Path>) -> Result<ScenarioSpec, Failure> {
    let mut spec = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?;
            ScenarioSpec::from_toml_str(&text).map_err(Failure::data)?
        }
        None => ScenarioSpec::warehouse(DEFAULT_SEED),
    };
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    spec.validate().map_err(Failure::data)?;
    Ok(spec)
}

fn synth_failure(e: SynthError) -> Failure {
    Failure::data(e)
}

fn cmd_eval(cli: &Cli, a: &EvalArgs) -> CmdResult {
    let method = Method::parse(&a.method).map_err(Failure::usage)?;
    let eval_cfg = match &a.eval_config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?;
            toml::from_str::<EvalConfig>(&text).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?
        }
        None => EvalConfig::default(),
    };
    let (snapshot, tasks, cfg) = match &a.snapshot {
        Some(dir) => {
            let (snapshot, manifest) = bundle::load_bundle(dir).map_err(|e| bundle_failure(dir, e))?;
            let cfg = effective_config(cli, Some(manifest.config))?;
            let tasks = read_tasks(a.tasks.as_deref().expect("clap requires tasks"))?;
            (snapshot, tasks, cfg)
        }
        None => {
            let cfg = effective_config(cli, None)?;
            let spec = load_spec(cli, a.spec.as_deref())?;
            let embedder = cfg.embedder().map_err(Failure::usage)?;
            let (snapshot, tasks) = synth::generate_synthetic_memory(&spec, embedder.as_ref()).map_err(synth_failure)?;
            (snapshot, tasks, cfg)
        }
    };
    let judge: Box<dyn DescriptiveJudge> = match &a.judge_url {
        Some(url) => Box::new(HttpJudge::new(url.clone(), Duration::from_secs_f64(cfg.generator_timeout_s))),
        None => Box::new(TokenJudge),
    };
    let index = RetrievalIndex::build(&snapshot).map_err(Failure::data)?;
    let generator = generator_for(&cfg);
    let report = eval::run_benchmark_with(&snapshot, &index, &tasks, method, &cfg, &eval_cfg, judge.as_ref(), generator.as_ref())
        .map_err(|e| match e {
            EvalError::UnknownMethod(_) | EvalError::Judge(_) => Failure::usage(e),
            EvalError::Agent(AgentError::Generator(_)) => Failure::usage(e),
            other => Failure::data(other),
        })?;
    print!("{}", eval::render_table(std::slice::from_ref(&report)));
    if let Some(path) = &a.report {
        write_file(path, &report.to_jsonl())?;
        println!("report written to {}", path.display());
    }
    if cli.verbose {
        if let Some(lat) = &report.latency {
            println!("latency p95 {:.3} ms", lat.p95_ms);
        }
    }
    Ok(())
}

fn jsonl<T: serde::Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&canonical::to_canonical_string(item, FloatStyle::RoundTrip));
        out.push('\n');
    }
    out
}

fn cmd_gen(cli: &Cli, a: &GenArgs) -> CmdResult {
    let cfg = effective_config(cli, None)?;
    let spec = load_spec(cli, a.spec.as_deref())?;
    let scenario = synth::generate_scenario(&spec).map_err(synth_failure)?;
    let files = [
        (bundle::CAPTIONS_FILE, jsonl(&scenario.captions)),
        (bundle::PRIMITIVES_FILE, jsonl(&scenario.primitives)),
        (bundle::KEYFRAMES_FILE, jsonl(&scenario.keyframes)),
        (TASKS_FILE, jsonl(&scenario.tasks)),
    ];
    let mut hashes = BTreeMap::new();
    for (name, body) in &files {
        write_file(&a.out.join(name), body)?;
        hashes.insert(*name, bundle::sha256_hex(body.as_bytes()));
    }
    let manifest = serde_json::json!({
        "spec": spec,
        "config": cfg,
        "horizon": scenario.horizon,
        "counts": {
            "captions": scenario.captions.len(),
            "primitives": scenario.primitives.len(),
            "keyframes": scenario.keyframes.len(),
            "tasks": scenario.tasks.len(),
        },
        "sha256": hashes,
    });
    let mut text = canonical::render(&manifest, FloatStyle::Significant(EVIDENCE_DIGITS));
    text.push('\n');
    write_file(&a.out.join(GEN_MANIFEST_FILE), &text)?;
    println!(
        "generated {} captions, {} primitives, {} keyframes, {} tasks (seed {}) in {}",
        scenario.captions.len(),
        scenario.primitives.len(),
        scenario.keyframes.len(),
        scenario.tasks.len(),
        spec.seed,
        a.out.display()
    );
    Ok(())
}
