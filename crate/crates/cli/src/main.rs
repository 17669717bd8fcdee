//! The `edgeprune` command line: analyze a graph, compile it onto a
//! platform, run one device's manifest, launch a whole deployment, sweep
//! partition points and price splits from a compute profile.
//!
//! Exit codes: 0 on success, 1 on a domain error (inconsistent graph,
//! failed run), 2 on a usage error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use edgeprune_core::analyzer;
use edgeprune_core::deploy::{self, DeploymentManifest, LaunchOptions};
use edgeprune_core::explorer::{self, Profile, SweepOptions};
use edgeprune_core::model::{self, ApplicationGraph, DpgSpec, Mapping, PlatformGraph};
use edgeprune_core::netfifo::LinkShape;
use edgeprune_core::runtime::{self, RunOptions};

#[derive(Parser)]
#[command(
    name = "edgeprune",
    version,
    about = "Partitioned dataflow inference across endpoint and server devices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a graph against the design rules and the deadlock analysis.
    Analyze(AnalyzeArgs),
    /// Split a mapped graph into per-device deployment manifests.
    Compile(CompileArgs),
    /// Start one runtime process per manifest of a compiled deployment.
    Launch(LaunchArgs),
    /// Execute one device's manifest in this process.
    Run(RunArgs),
    /// Measure or predict every partition point and report the best one.
    Explore(ExploreArgs),
    /// Price every partition point from a compute profile without running.
    Predict(PredictArgs),
}

#[derive(Args, Clone, Copy)]
struct ShapeArgs {
    /// Transmit bandwidth cap in bytes per second (0 leaves the link unshaped).
    #[arg(long = "shape-bw", value_name = "BYTES_PER_S", default_value_t = 0.0)]
    shape_bw: f64,
    /// One-way delay added to every transmitted frame, in milliseconds.
    #[arg(long = "shape-lat", value_name = "MS", default_value_t = 0.0)]
    shape_lat: f64,
}

impl ShapeArgs {
    fn link(&self) -> LinkShape {
        LinkShape::new(self.shape_bw, self.shape_lat)
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Application graph document.
    #[arg(short = 'g', long = "graph", value_name = "FILE")]
    graph: PathBuf,
    /// Write the full analysis report as JSON.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct CompileArgs {
    /// Application graph document.
    #[arg(short = 'g', long = "graph", value_name = "FILE")]
    graph: PathBuf,
    /// Platform graph document.
    #[arg(short = 'p', long = "platform", value_name = "FILE")]
    platform: PathBuf,
    /// Actor-to-device mapping document.
    #[arg(short = 'm', long = "mapping", value_name = "FILE")]
    mapping: PathBuf,
    /// Output directory for the manifests and the launch index.
    #[arg(short = 'o', long = "out", value_name = "DIR")]
    out: PathBuf,
    /// Port base for devices whose address does not carry one.
    #[arg(long, env = "EDGEPRUNE_BASE_PORT", default_value_t = deploy::DEFAULT_BASE_PORT)]
    base_port: u16,
    /// Serialize the pipeline through a feedback edge so round trips can
    /// be measured per frame.
    #[arg(long)]
    latency_feedback: bool,
}

#[derive(Args)]
struct LaunchArgs {
    /// Deployment directory produced by compile.
    #[arg(short = 'd', long = "dir", value_name = "DIR")]
    dir: PathBuf,
    /// Override the frame budget of every source actor.
    #[arg(long)]
    frames: Option<u64>,
    #[command(flatten)]
    shape: ShapeArgs,
    /// Global seed for kernels that do not pin their own.
    #[arg(long)]
    seed: Option<u64>,
    /// Wall-clock budget in seconds for the whole fleet.
    #[arg(long, default_value_t = 120)]
    timeout: u64,
    /// Directory receiving the per-device stats files (default: the
    /// deployment directory).
    #[arg(long, value_name = "DIR")]
    stats_dir: Option<PathBuf>,
    /// Write the merged statistics as JSON.
    #[arg(long, value_name = "FILE")]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Deployment manifest for this device.
    #[arg(short = 'M', long = "manifest", value_name = "FILE")]
    manifest: PathBuf,
    /// Override the frame budget of every source actor.
    #[arg(long)]
    frames: Option<u64>,
    /// Write run statistics as JSON.
    #[arg(long, value_name = "FILE")]
    stats: Option<PathBuf>,
    /// Wrap the graph in a feedback loop before running. Only valid for a
    /// manifest holding the whole graph; distributed feedback runs are
    /// compiled with `compile --latency-feedback` instead.
    #[arg(long)]
    latency_feedback: bool,
    /// Global seed for kernels that do not pin their own.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    shape: ShapeArgs,
    /// Budget in seconds for all cut edges to come up.
    #[arg(long, default_value_t = 30)]
    connect_timeout: u64,
    /// Hard wall-clock cap on the run, in seconds.
    #[arg(long, default_value_t = 600)]
    run_timeout: u64,
}

#[derive(Args)]
struct ExploreArgs {
    /// Application graph document.
    #[arg(short = 'g', long = "graph", value_name = "FILE")]
    graph: PathBuf,
    /// Platform graph document.
    #[arg(short = 'p', long = "platform", value_name = "FILE")]
    platform: PathBuf,
    /// Endpoint device holding the prefix side of every split.
    #[arg(long, value_name = "DEV")]
    client: String,
    /// Server device holding the suffix side.
    #[arg(long, value_name = "DEV")]
    server: String,
    /// Measured frames per split, after warmup.
    #[arg(long)]
    frames: u64,
    /// Leading frames discarded from each measurement.
    #[arg(long, default_value_t = 3)]
    warmup: u64,
    #[command(flatten)]
    shape: ShapeArgs,
    /// Smallest partition point to sweep.
    #[arg(long, default_value_t = 1)]
    pp_min: usize,
    /// Largest partition point to sweep (default: N-1).
    #[arg(long)]
    pp_max: Option<usize>,
    /// Report file, one CSV row per split.
    #[arg(short = 'o', long = "out", value_name = "FILE")]
    out: PathBuf,
    /// Fill the report from the cost model without launching anything.
    #[arg(long)]
    predict_only: bool,
    /// Global seed handed to every launched runtime.
    #[arg(long)]
    seed: Option<u64>,
    /// Port base for devices whose address does not carry one.
    #[arg(long, env = "EDGEPRUNE_BASE_PORT", default_value_t = deploy::DEFAULT_BASE_PORT)]
    base_port: u16,
    /// Working directory for per-split manifests and stats (default: a
    /// directory named after the report).
    #[arg(long, value_name = "DIR")]
    work_dir: Option<PathBuf>,
    /// Wall-clock budget in seconds per launched split.
    #[arg(long, default_value_t = 120)]
    timeout: u64,
}

#[derive(Args)]
struct PredictArgs {
    /// Application graph document.
    #[arg(short = 'g', long = "graph", value_name = "FILE")]
    graph: PathBuf,
    /// JSON object of per-actor compute times in milliseconds; defaults
    /// to the times declared in kernel parameters.
    #[arg(long, value_name = "FILE")]
    times: Option<PathBuf>,
    #[command(flatten)]
    shape: ShapeArgs,
    /// Predict full round trips instead of endpoint times.
    #[arg(long)]
    roundtrip: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EDGEPRUNE_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let outcome = match cli.command {
        Command::Analyze(args) => analyze(args),
        Command::Compile(args) => compile(args),
        Command::Launch(args) => launch(args),
        Command::Run(args) => run(args),
        Command::Explore(args) => explore(args),
        Command::Predict(args) => predict(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    let text = read(&args.graph)?;
    let graph = model::parse_application_graph_for_analysis(&text)
        .with_context(|| format!("graph `{}`", args.graph.display()))?;
    let report = analyzer::analyze(&graph);
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    for diagnostic in &report.diagnostics {
        eprintln!("{diagnostic}");
    }
    if !report.is_consistent() {
        bail!("graph `{}` is inconsistent", graph.name);
    }
    println!(
        "graph `{}` is consistent ({} rate assignments checked)",
        graph.name, report.checked_assignments
    );
    Ok(())
}

fn compile(args: CompileArgs) -> Result<()> {
    let graph = load_graph(&args.graph)?;
    let graph = if args.latency_feedback {
        deploy::add_latency_feedback(&graph)?
    } else {
        graph
    };
    let platform = load_platform(&args.platform)?;
    let mapping = load_mapping(&args.mapping, &graph, &platform)?;
    let manifests = deploy::partition(&graph, &platform, &mapping, args.base_port)?;
    log::info!("partitioned `{}` across {} devices", graph.name, manifests.len());
    let paths = deploy::emit_manifests(&manifests, &args.out)?;
    for path in &paths {
        println!("{}", path.display());
    }
    Ok(())
}

fn launch(args: LaunchArgs) -> Result<()> {
    let binary = std::env::current_exe().context("cannot locate this executable")?;
    let opts = LaunchOptions {
        frames: args.frames,
        shape: args.shape.link(),
        seed: args.seed,
        timeout: Duration::from_secs(args.timeout),
        stats_dir: args.stats_dir.clone(),
        ..LaunchOptions::new(binary)
    };
    let merged = deploy::launch(&args.dir, &opts)?;
    if let Some(path) = &args.stats {
        write_json(path, &merged)?;
    }
    for (device, stats) in &merged.devices {
        let endpoint = stats.endpoint_times_ms();
        if endpoint.is_empty() {
            println!("device {device}: {} frames", stats.frames_processed);
        } else {
            println!(
                "device {device}: {} frames, mean endpoint {:.2} ms",
                stats.frames_processed,
                runtime::stats::mean(&endpoint)
            );
        }
    }
    if merged.failed {
        for err in &merged.errors {
            eprintln!("{err}");
        }
        bail!("deployment failed");
    }
    println!("processed {} frames", merged.frames_processed);
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let manifest = deploy::load_manifest_file(&args.manifest)?;
    let opts = RunOptions {
        frames: args.frames,
        seed: args.seed,
        shape: args.shape.link(),
        latency_feedback: args.latency_feedback,
        connect_timeout: Duration::from_secs(args.connect_timeout),
        run_timeout: Some(Duration::from_secs(args.run_timeout)),
    };
    log::info!("running device `{}` from {}", manifest.device, args.manifest.display());
    let stats = if args.latency_feedback {
        if !manifest.net_edges.is_empty() {
            bail!(
                "latency feedback needs the whole graph in one process; \
                 compile the deployment with --latency-feedback instead"
            );
        }
        runtime::run_local(&whole_graph(&manifest)?, &opts)?
    } else {
        runtime::run_manifest(&manifest, &opts)?
    };
    if let Some(path) = &args.stats {
        write_json(path, &stats)?;
    }
    println!(
        "device {}: {} frames in {:.1} ms",
        stats.device, stats.frames_processed, stats.elapsed_ms
    );
    if stats.failed {
        for err in &stats.errors {
            eprintln!("{err}");
        }
        bail!("run failed");
    }
    Ok(())
}

fn explore(args: ExploreArgs) -> Result<()> {
    let graph = load_graph(&args.graph)?;
    let platform = load_platform(&args.platform)?;
    let binary = std::env::current_exe().context("cannot locate this executable")?;
    let work_dir = args
        .work_dir
        .clone()
        .unwrap_or_else(|| args.out.with_extension("sweep"));
    let mut opts = SweepOptions::new(&args.client, &args.server, args.frames, binary, work_dir);
    opts.warmup = args.warmup;
    opts.shape = args.shape.link();
    opts.seed = args.seed;
    opts.pp_min = args.pp_min;
    opts.pp_max = args.pp_max;
    opts.predict_only = args.predict_only;
    opts.base_port = args.base_port;
    opts.timeout = Duration::from_secs(args.timeout);

    let report = explorer::sweep(&graph, &platform, &opts)?;
    fs::write(&args.out, explorer::report_csv(&report))
        .with_context(|| format!("cannot write `{}`", args.out.display()))?;
    println!("wrote {} ({} rows)", args.out.display(), report.rows.len());
    match report.chosen_pp {
        Some(pp) => println!("chosen partition point: {pp}"),
        None => bail!("no partition point produced a usable measurement"),
    }
    Ok(())
}

fn predict(args: PredictArgs) -> Result<()> {
    let graph = load_graph(&args.graph)?;
    let index = explorer::precedence_index(&graph)?;
    let profile = match &args.times {
        Some(path) => {
            let actor_ms: BTreeMap<String, f64> = serde_json::from_str(&read(path)?)
                .with_context(|| format!("times file `{}`", path.display()))?;
            Profile { actor_ms }
        }
        None => Profile::from_params(&graph),
    };
    let shape = args.shape.link();
    let mut points = explorer::partition_points(&graph, &index);
    points.push(explorer::local_point(&graph, &index));
    println!("pp,client_actors,crossing_bytes,predicted_ms");
    for point in &points {
        let ms = if args.roundtrip {
            explorer::predict_roundtrip_ms(point, &profile, &shape)?
        } else {
            explorer::predict_endpoint_ms(point, &profile, &shape)?
        };
        let label = if point.server_actors.is_empty() {
            "local".to_string()
        } else {
            point.pp.to_string()
        };
        println!("{label},{},{},{ms:.3}", point.client_actors.len(), point.crossing_bytes);
    }
    Ok(())
}

/// Rebuilds the application graph held by a whole-graph manifest, grouping
/// actors back into their declared dynamic processing groups.
fn whole_graph(manifest: &DeploymentManifest) -> Result<ApplicationGraph> {
    let mut dpgs: Vec<DpgSpec> = Vec::new();
    for actor in &manifest.actors {
        if let Some(id) = &actor.dpg {
            match dpgs.iter_mut().find(|d| &d.id == id) {
                Some(dpg) => dpg.members.push(actor.id.clone()),
                None => dpgs.push(DpgSpec { id: id.clone(), members: vec![actor.id.clone()] }),
            }
        }
    }
    Ok(ApplicationGraph::from_parts(
        manifest.graph_name.clone(),
        manifest.actors.clone(),
        manifest.edges.clone(),
        dpgs,
    )?)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read `{}`", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write `{}`", path.display()))
}

fn load_graph(path: &Path) -> Result<ApplicationGraph> {
    model::parse_application_graph(&read(path)?)
        .with_context(|| format!("graph `{}`", path.display()))
}

fn load_platform(path: &Path) -> Result<PlatformGraph> {
    model::parse_platform_graph(&read(path)?)
        .with_context(|| format!("platform `{}`", path.display()))
}

fn load_mapping(path: &Path, graph: &ApplicationGraph, platform: &PlatformGraph) -> Result<Mapping> {
    model::parse_mapping(&read(path)?, graph, platform)
        .with_context(|| format!("mapping `{}`", path.display()))
}
