//! Command-line surface: `graph-build`, `generate`, `calibrate`, `train`,
//! and `report`, orchestrating the library modules over files.
//!
//! Exit codes: 0 on success, 2 on validation errors, 3 on client errors.
//! Errors are printed to stderr as one-line JSON
//! (`{"error":{"kind":...,"message":...}}`) so scripts can parse them.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::cartography::{build_error_set, calibrate_baseline, Baseline, DEFAULT_BASELINE_EPOCHS};
use crate::curation::{
    last_complete_window, resume_dynamic_loop, run_dynamic_loop, LoopConfig, WindowSummary,
};
use crate::datagen::{
    corpus_stats, generate_exercise_corpus, generate_textbook_corpus, read_exercise_corpus,
    write_exercise_corpus, write_textbook_corpus, CorpusStats, DatagenConfig, DatagenError,
    ItemFailure,
};
use crate::llm_client::{
    ClientError, GenerationClient, LiveClient, RecordingClient, ReplayClient,
};
use crate::skill_graph::{
    build_from_syllabus, decompose_skill, load_syllabus, merge, GraphError, SkillGraph,
};
use crate::synth::SynthClient;
use crate::toy_trainer::{ToyHyper, ToyTrainer};
use crate::util::write_atomic;

/// Exit code for validation errors.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit code for generation-client errors.
pub const EXIT_CLIENT: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Client(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Client(_) => "client",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Client(m) => m,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Client(_) => EXIT_CLIENT,
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        CliError::Client(e.to_string())
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Client(c) => CliError::Client(c.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<DatagenError> for CliError {
    fn from(e: DatagenError) -> Self {
        match e {
            DatagenError::Client(c) => CliError::Client(c.to_string()),
            DatagenError::Graph(GraphError::Client(c)) => CliError::Client(c.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<crate::curation::CurationError> for CliError {
    fn from(e: crate::curation::CurationError) -> Self {
        use crate::curation::CurationError as CE;
        match e {
            CE::Datagen(d) => d.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<crate::cartography::CartographyError> for CliError {
    fn from(e: crate::cartography::CartographyError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<crate::toy_trainer::TrainerError> for CliError {
    fn from(e: crate::toy_trainer::TrainerError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "dsa",
    version,
    about = "Skill-graph curriculum generation and dynamics-driven data curation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a skill graph from a syllabus and/or recursive decomposition.
    GraphBuild(GraphBuildArgs),
    /// Generate a textbook or exercise corpus from a skill graph.
    Generate(GenerateArgs),
    /// Calibrate the error baseline from a corrupted corpus slice.
    Calibrate(CalibrateArgs),
    /// Run the dynamic training loop over an exercise corpus.
    Train(TrainArgs),
    /// Inspect a training run directory.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone)]
pub struct BackendArgs {
    /// Generation backend: stub, replay, or live.
    #[arg(long, default_value = "stub")]
    pub backend: String,
    /// Replay-cache directory (required for replay; records for live).
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Record stub responses into the cache directory.
    #[arg(long, default_value_t = false)]
    pub record: bool,
    /// Model name sent by the live backend.
    #[arg(long, default_value = "gpt-4")]
    pub model: String,
}

#[derive(Args, Debug)]
pub struct GraphBuildArgs {
    /// Syllabus JSON (array of levels).
    #[arg(long)]
    pub syllabus: Option<PathBuf>,
    /// Skill name to decompose recursively through the client.
    #[arg(long)]
    pub decompose: Option<String>,
    /// Maximum decomposition depth.
    #[arg(long, default_value_t = 2)]
    pub depth: u32,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Output graph JSON path.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a DOT rendering here.
    #[arg(long)]
    pub dot: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Input graph JSON.
    #[arg(long)]
    pub graph: PathBuf,
    /// Generate the textbook corpus.
    #[arg(long, default_value_t = false)]
    pub textbooks: bool,
    /// Generate the exercise corpus.
    #[arg(long, default_value_t = false)]
    pub exercises: bool,
    /// Item count (exercises) or skill limit (textbooks; default all).
    #[arg(long)]
    pub n: Option<usize>,
    /// Self-consistency sample count.
    #[arg(long, default_value_t = 3)]
    pub k: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Output corpus JSONL path.
    #[arg(long)]
    pub out: PathBuf,
    /// Statistics report path (default: <out>.stats.json).
    #[arg(long)]
    pub stats_out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct TrainerArgs {
    /// Label classes for the toy trainer.
    #[arg(long, default_value_t = 16)]
    pub classes: usize,
    #[arg(long, default_value_t = 2048)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 0.5)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// Exercise corpus JSONL.
    #[arg(long)]
    pub data: PathBuf,
    /// Fraction of the corpus corrupted into error examples (the slice is
    /// at least 32 items when the corpus allows).
    #[arg(long, default_value_t = 0.05)]
    pub noise_fraction: f64,
    /// Calibration epochs.
    #[arg(long, default_value_t = DEFAULT_BASELINE_EPOCHS)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub trainer: TrainerArgs,
    /// Output baseline JSON path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Exercise corpus JSONL.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Baseline JSON from `calibrate`.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Skill graph JSON (needed for augmentation prompts).
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Run config JSON; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root directory for run outputs.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Run identifier (defaults to run-<seed>).
    #[arg(long)]
    pub run_id: Option<String>,
    /// Resume this run id from its last complete window.
    #[arg(long)]
    pub resume: Option<String>,
    #[arg(long)]
    pub max_windows: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub trainer: TrainerArgs,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Run directory (runs/<run-id>).
    #[arg(long)]
    pub run: PathBuf,
    /// Output format: json, text, or dot.
    #[arg(long, default_value = "text")]
    pub format: String,
}

/// Reference fine-tuning hyperparameters for full-scale LLM runs. Recorded
/// in the run config for provenance; the desk-scale trainer has its own
/// knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceHyperparams {
    pub pretrain_learning_rate: f64,
    pub instruct_learning_rate: f64,
    pub batch_size: usize,
    pub pretrain_epochs_per_level: usize,
    pub instruct_epochs: usize,
}

impl Default for ReferenceHyperparams {
    fn default() -> Self {
        ReferenceHyperparams {
            pretrain_learning_rate: 3e-4,
            instruct_learning_rate: 3e-5,
            batch_size: 16,
            pretrain_epochs_per_level: 2,
            instruct_epochs: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientSettings {
    pub backend: String,
    pub cache_dir: Option<PathBuf>,
    pub record: bool,
    pub model: String,
    pub stub_seed: u64,
}

impl Default for ClientSettings {
    fn default() -> Self {
        ClientSettings {
            backend: "stub".into(),
            cache_dir: None,
            record: false,
            model: "gpt-4".into(),
            stub_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerSettings {
    pub classes: usize,
    pub vocab_size: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for TrainerSettings {
    fn default() -> Self {
        TrainerSettings { classes: 16, vocab_size: 2048, learning_rate: 0.5, batch_size: 16 }
    }
}

/// The canonical record of one training run, stored as `config.json` in the
/// run directory. Seeds are explicit; nothing defaults to wall-clock state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub run_id: String,
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub baseline: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub client: ClientSettings,
    #[serde(rename = "loop")]
    pub loop_config: LoopConfig,
    pub trainer: TrainerSettings,
    pub baseline_epochs: usize,
    pub noise_fraction: f64,
    pub reference_hyperparams: ReferenceHyperparams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_id: "run-0".into(),
            seed: 0,
            data: None,
            baseline: None,
            graph: None,
            client: ClientSettings::default(),
            loop_config: LoopConfig::default(),
            trainer: TrainerSettings::default(),
            baseline_epochs: DEFAULT_BASELINE_EPOCHS,
            noise_fraction: 0.05,
            reference_hyperparams: ReferenceHyperparams::default(),
        }
    }
}

fn build_client(settings: &ClientSettings) -> Result<Box<dyn GenerationClient>, CliError> {
    match settings.backend.as_str() {
        "stub" => {
            let stub = SynthClient::generic(settings.stub_seed);
            if settings.record {
                let dir = settings.cache_dir.clone().ok_or_else(|| {
                    CliError::Validation("--record requires --cache-dir".into())
                })?;
                Ok(Box::new(RecordingClient::new(stub, dir)))
            } else {
                Ok(Box::new(stub))
            }
        }
        "replay" => {
            let dir = settings.cache_dir.clone().ok_or_else(|| {
                CliError::Validation("replay backend requires --cache-dir".into())
            })?;
            Ok(Box::new(ReplayClient::new(dir)))
        }
        "live" => {
            let dir = settings.cache_dir.clone().ok_or_else(|| {
                CliError::Validation("live backend requires --cache-dir for recording".into())
            })?;
            Ok(Box::new(LiveClient::from_env(settings.model.clone(), dir)?))
        }
        other => Err(CliError::Validation(format!(
            "unknown backend {other:?} (expected stub, replay, or live)"
        ))),
    }
}

fn settings_from_backend_args(args: &BackendArgs, stub_seed: u64) -> ClientSettings {
    ClientSettings {
        backend: args.backend.clone(),
        cache_dir: args.cache_dir.clone(),
        record: args.record,
        model: args.model.clone(),
        stub_seed,
    }
}

/// Parse argv and execute; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let payload = serde_json::json!({
                "error": { "kind": e.kind(), "message": e.message() }
            });
            eprintln!("{payload}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::GraphBuild(args) => cmd_graph_build(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Train(args) => cmd_train(args),
        Command::Report(args) => {
            let report = cmd_report(&args.run, &args.format)?;
            println!("{report}");
            Ok(())
        }
    }
}

fn cmd_graph_build(args: GraphBuildArgs) -> Result<(), CliError> {
    if args.syllabus.is_none() && args.decompose.is_none() {
        return Err(CliError::Validation(
            "graph-build needs --syllabus and/or --decompose".into(),
        ));
    }
    if args.depth == 0 {
        return Err(CliError::Validation("--depth must be >= 1".into()));
    }
    let syllabus_graph = match &args.syllabus {
        Some(path) => Some(build_from_syllabus(&load_syllabus(path)?)?),
        None => None,
    };
    let llm_graph = match &args.decompose {
        Some(target) => {
            let client = build_client(&settings_from_backend_args(&args.backend, args.seed))?;
            Some(decompose_skill(target, client.as_ref(), args.depth)?)
        }
        None => None,
    };
    let graph = match (syllabus_graph, llm_graph) {
        (Some(s), Some(l)) => {
            let (merged, report) = merge(&s, &l)?;
            if !report.dropped_edges.is_empty() {
                eprintln!(
                    "{}",
                    serde_json::json!({ "merge_report": { "dropped_edges": report.dropped_edges } })
                );
            }
            println!(
                "merged graphs: {} unified names, {} dropped edges",
                report.unified_names.len(),
                report.dropped_edges.len()
            );
            merged
        }
        (Some(s), None) => s,
        (None, Some(l)) => l,
        (None, None) => unreachable!(),
    };
    graph.save(&args.out)?;
    if let Some(dot_path) = &args.dot {
        write_atomic(dot_path, graph.export_dot().as_bytes())?;
    }
    println!("graph: {} skills, {} edges -> {}", graph.len(), graph.edge_count(), args.out.display());
    Ok(())
}

fn print_stats(stats: &CorpusStats, failures: &[ItemFailure]) {
    println!("{:>6} {:>8} {:>10}", "level", "skills", "tokens");
    for row in &stats.levels {
        println!("{:>6} {:>8} {:>10}", row.level, row.skill_count, row.token_count);
    }
    println!("{:>6} {:>8} {:>10}  (tokens are approximate)", "total", stats.total_skills, stats.total_tokens);
    if !failures.is_empty() {
        println!("{} item(s) failed generation", failures.len());
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    if args.textbooks == args.exercises {
        return Err(CliError::Validation(
            "pass exactly one of --textbooks or --exercises".into(),
        ));
    }
    let graph = SkillGraph::load(&args.graph)?;
    let client = build_client(&settings_from_backend_args(&args.backend, args.seed))?;
    let cfg = DatagenConfig {
        exercise_count: args.n.unwrap_or(100),
        self_consistency_k: args.k,
        seed: args.seed,
        ..DatagenConfig::default()
    };
    let stats_path = args
        .stats_out
        .clone()
        .unwrap_or_else(|| args.out.with_extension("stats.json"));
    let (stats, failures) = if args.textbooks {
        let (docs, failures) = generate_textbook_corpus(&graph, &cfg, client.as_ref(), args.n)?;
        write_textbook_corpus(&args.out, &docs)?;
        (corpus_stats(&graph, &docs, &[]), failures)
    } else {
        let n = args.n.unwrap_or(100);
        let (items, failures) = generate_exercise_corpus(&graph, &cfg, client.as_ref(), n)?;
        write_exercise_corpus(&args.out, &items)?;
        (corpus_stats(&graph, &[], &items), failures)
    };
    let report = serde_json::json!({
        "stats": stats,
        "failures": failures,
        "approximate_tokens": true,
    });
    let mut bytes = serde_json::to_vec_pretty(&report)?;
    bytes.push(b'\n');
    write_atomic(&stats_path, &bytes)?;
    print_stats(&stats, &failures);
    println!("corpus -> {}", args.out.display());
    Ok(())
}

fn trainer_settings_from_args(args: &TrainerArgs) -> TrainerSettings {
    TrainerSettings {
        classes: args.classes,
        vocab_size: args.vocab_size,
        learning_rate: args.learning_rate,
        batch_size: args.batch_size,
    }
}

fn build_trainer(
    items: &[crate::datagen::ExerciseItem],
    settings: &TrainerSettings,
    seed: u64,
) -> ToyTrainer {
    ToyTrainer::from_corpus(
        items,
        settings.classes,
        settings.vocab_size,
        ToyHyper { learning_rate: settings.learning_rate, batch_size: settings.batch_size },
        seed,
    )
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<(), CliError> {
    if !(args.noise_fraction > 0.0 && args.noise_fraction <= 1.0) {
        return Err(CliError::Validation(format!(
            "--noise-fraction {} outside (0, 1]",
            args.noise_fraction
        )));
    }
    let items = read_exercise_corpus(&args.data)?;
    if items.is_empty() {
        return Err(CliError::Validation("calibration corpus is empty".into()));
    }
    let error_set = build_error_set(&items, args.noise_fraction, args.seed);
    let settings = trainer_settings_from_args(&args.trainer);
    let mut trainer = build_trainer(&items, &settings, args.seed);
    let baseline = calibrate_baseline(&error_set, &mut trainer, args.epochs)?;
    baseline.save(&args.out)?;
    println!(
        "baseline: loss_b {:.6}, sigma_b {:.6} over {} error examples ({} epochs) -> {}",
        baseline.loss_b,
        baseline.sigma_b,
        baseline.n_error_examples,
        baseline.epochs_used,
        args.out.display()
    );
    Ok(())
}

fn load_run_config(path: &Path) -> Result<RunConfig, CliError> {
    let bytes = std::fs::read(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    if let Some(resume_id) = &args.resume {
        return cmd_train_resume(&args, resume_id);
    }
    let mut config = match &args.config {
        Some(path) => load_run_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
        config.loop_config.seed = seed;
    }
    if let Some(mw) = args.max_windows {
        config.loop_config.max_windows = mw;
    }
    if let Some(data) = &args.data {
        config.data = Some(data.clone());
    }
    if let Some(baseline) = &args.baseline {
        config.baseline = Some(baseline.clone());
    }
    if let Some(graph) = &args.graph {
        config.graph = Some(graph.clone());
    }
    // Backend flags override the config file when explicitly provided;
    // clap defaults make "stub with no cache" the out-of-the-box behavior.
    if args.config.is_none()
        || args.backend.backend != "stub"
        || args.backend.cache_dir.is_some()
        || args.backend.record
    {
        config.client = settings_from_backend_args(&args.backend, config.seed);
    }
    if args.config.is_none() {
        config.trainer = trainer_settings_from_args(&args.trainer);
    }
    config.run_id = args.run_id.clone().unwrap_or_else(|| format!("run-{}", config.seed));
    config.loop_config.seed = config.seed;

    let data_path = config
        .data
        .clone()
        .ok_or_else(|| CliError::Validation("train needs --data (or data in --config)".into()))?;
    let baseline_path = config.baseline.clone().ok_or_else(|| {
        CliError::Validation("train needs --baseline (or baseline in --config)".into())
    })?;
    let graph_path = config.graph.clone().ok_or_else(|| {
        CliError::Validation("train needs --graph (or graph in --config)".into())
    })?;

    let dataset = read_exercise_corpus(&data_path)?;
    let baseline = Baseline::load(&baseline_path)?;
    let graph = SkillGraph::load(&graph_path)?;
    let client = build_client(&config.client)?;
    let mut trainer = build_trainer(&dataset, &config.trainer, config.seed);

    let run_dir = args.out.join(&config.run_id);
    if run_dir.exists() {
        return Err(CliError::Validation(format!(
            "run directory {} already exists (use --resume {} to continue it)",
            run_dir.display(),
            config.run_id
        )));
    }
    std::fs::create_dir_all(&run_dir)?;
    let mut bytes = serde_json::to_vec_pretty(&config)?;
    bytes.push(b'\n');
    write_atomic(&run_dir.join("config.json"), &bytes)?;

    let outcome = run_dynamic_loop(
        &dataset,
        &graph,
        &mut trainer,
        client.as_ref(),
        &baseline,
        &config.loop_config,
        &run_dir,
    )?;
    print_windows(&outcome.windows);
    println!(
        "run {}: {} window(s), final dataset {} item(s), converged: {} -> {}",
        config.run_id,
        outcome.windows.len(),
        outcome.final_dataset.len(),
        outcome.converged,
        run_dir.display()
    );
    Ok(())
}

fn cmd_train_resume(args: &TrainArgs, resume_id: &str) -> Result<(), CliError> {
    let run_dir = args.out.join(resume_id);
    let config_path = run_dir.join("config.json");
    if !config_path.exists() {
        return Err(CliError::Validation(format!(
            "cannot resume: {} not found",
            config_path.display()
        )));
    }
    let mut config = load_run_config(&config_path)?;
    if let Some(mw) = args.max_windows {
        config.loop_config.max_windows = mw;
    }
    let baseline_path = config
        .baseline
        .clone()
        .ok_or_else(|| CliError::Validation("run config lacks a baseline path".into()))?;
    let graph_path = config
        .graph
        .clone()
        .ok_or_else(|| CliError::Validation("run config lacks a graph path".into()))?;
    let baseline = Baseline::load(&baseline_path)?;
    let graph = SkillGraph::load(&graph_path)?;
    let client = build_client(&config.client)?;
    let (outcome, _trainer) = resume_dynamic_loop(
        &graph,
        client.as_ref(),
        &baseline,
        &config.loop_config,
        &run_dir,
    )?;
    print_windows(&outcome.windows);
    println!(
        "resumed run {}: {} window(s) total, converged: {}",
        resume_id,
        outcome.windows.len(),
        outcome.converged
    );
    Ok(())
}

fn print_windows(windows: &[WindowSummary]) {
    for w in windows {
        println!(
            "window {:>2}: trained {} -> {} items | err {} hard {} easy {} amb {} | holdout {}",
            w.window_index,
            w.trained_examples,
            w.dataset_size_after,
            w.cartography.error,
            w.cartography.hard_to_learn,
            w.cartography.easy_to_learn,
            w.cartography.ambiguous,
            w.holdout_loss.map(|l| format!("{l:.4}")).unwrap_or_else(|| "-".into()),
        );
    }
}

/// Render a report of a run directory in the requested format.
pub fn cmd_report(run_dir: &Path, format: &str) -> Result<String, CliError> {
    if !run_dir.is_dir() {
        return Err(CliError::Validation(format!("{} is not a run directory", run_dir.display())));
    }
    let run_id = run_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    let last = last_complete_window(run_dir)?.unwrap_or(0);
    let mut windows: Vec<WindowSummary> = Vec::new();
    for k in 1..=last {
        let path = run_dir.join(format!("window-{k}")).join("summary.json");
        if !path.exists() {
            break;
        }
        windows.push(serde_json::from_slice(&std::fs::read(&path)?)?);
    }
    match format {
        "json" => {
            let value = serde_json::json!({
                "run_id": run_id,
                "window_count": windows.len(),
                "windows": windows,
            });
            Ok(serde_json::to_string_pretty(&value)?)
        }
        "text" => {
            let mut out = format!("run {run_id}: {} window(s)\n", windows.len());
            out.push_str(&format!(
                "{:>7} {:>8} {:>8} {:>6} {:>6} {:>6} {:>6} {:>10}\n",
                "window", "trained", "after", "err", "hard", "easy", "amb", "holdout"
            ));
            for w in &windows {
                out.push_str(&format!(
                    "{:>7} {:>8} {:>8} {:>6} {:>6} {:>6} {:>6} {:>10}\n",
                    w.window_index,
                    w.trained_examples,
                    w.dataset_size_after,
                    w.cartography.error,
                    w.cartography.hard_to_learn,
                    w.cartography.easy_to_learn,
                    w.cartography.ambiguous,
                    w.holdout_loss.map(|l| format!("{l:.4}")).unwrap_or_else(|| "-".into()),
                ));
            }
            Ok(out)
        }
        "dot" => {
            let mut out = String::from("digraph run {\n");
            out.push_str(&format!("  \"window-0\" [label=\"window 0 (input)\"];\n"));
            for w in &windows {
                out.push_str(&format!(
                    "  \"window-{}\" [label=\"window {}: {} items, err {} hard {} easy {} amb {}\"];\n",
                    w.window_index,
                    w.window_index,
                    w.dataset_size_after,
                    w.cartography.error,
                    w.cartography.hard_to_learn,
                    w.cartography.easy_to_learn,
                    w.cartography.ambiguous,
                ));
                out.push_str(&format!(
                    "  \"window-{}\" -> \"window-{}\";\n",
                    w.window_index - 1,
                    w.window_index
                ));
            }
            out.push_str("}\n");
            Ok(out)
        }
        other => Err(CliError::Validation(format!(
            "unknown report format {other:?} (expected json, text, or dot)"
        ))),
    }
}
