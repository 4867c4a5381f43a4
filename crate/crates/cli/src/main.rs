use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sg3d_core::detection::RelationDictionary;
use sg3d_core::frame::CameraIntrinsics;
use sg3d_core::graph::{self, SceneGraph3D};
use sg3d_core::pddl::{check_pddl, to_problem, ExportProfile};
use sg3d_core::pipeline::{build_dir, PipelineConfig};
use sg3d_core::query::{evaluate, parse_query, QueryContext, Taxonomy};
use sg3d_core::synth::{
    evaluate_graph, generate_bundle, relation_corpus, GroundTruth, NoiseSpec, TrajectorySpec, WorldSpec,
};
use sg3d_core::Error;

#[derive(Parser)]
#[command(
    name = "sg3d",
    version,
    about = "Build, query and export 3-D scene graphs from RGB-D frame bundles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a scene graph from a frame bundle directory.
    Build(BuildArgs),
    /// Run queries against a graph, from -e or interactively.
    Query(QueryArgs),
    /// Write a PDDL problem for a graph.
    ExportPddl(PddlArgs),
    /// Write a graph as Graphviz DOT.
    ExportDot(DotArgs),
    /// Render a synthetic frame bundle and its ground truth.
    Synth(SynthArgs),
    /// Score a graph against synthetic ground truth.
    Eval(EvalArgs),
    /// Build a relation dictionary from a corpus CSV.
    DictBuild(DictArgs),
    /// Configuration helpers.
    Config {
        #[command(subcommand)]
        command: ConfigCommand,
    },
}

#[derive(Subcommand)]
enum ConfigCommand {
    /// Print the default configuration as TOML.
    PrintDefaults,
}

#[derive(Args)]
struct BuildArgs {
    bundle: PathBuf,
    #[arg(short, long, default_value = "graph.json")]
    output: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set sim.threshold=0.75
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    no_abir: bool,
    #[arg(long)]
    no_kge: bool,
    #[arg(long)]
    no_sdr: bool,
    #[arg(long)]
    no_same_node: bool,
    /// Report path; defaults to <output stem>.report.json next to the graph.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also write the keyframe grouping as JSON.
    #[arg(long, value_name = "PATH")]
    dump_groups: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    graph: PathBuf,
    /// Query to run; repeatable. Without it queries are read from stdin.
    #[arg(short = 'e', long = "expr")]
    expr: Vec<String>,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    #[arg(long)]
    colors: Option<PathBuf>,
    /// Print answers as JSON lines.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct PddlArgs {
    graph: PathBuf,
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Goal formula, e.g. "(and (in cup_1 sink))".
    #[arg(long)]
    goal: String,
    #[arg(long, default_value = "scene")]
    name: String,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct DotArgs {
    graph: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    world: PathBuf,
    #[arg(long)]
    trajectory: PathBuf,
    /// Noise description; default noise when omitted.
    #[arg(long)]
    noise: Option<PathBuf>,
    /// Camera intrinsics JSON; 640x480 with fx = fy = 525 when omitted.
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long)]
    output: PathBuf,
    /// Also write the relation corpus seen along the trajectory.
    #[arg(long, value_name = "PATH")]
    corpus: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    graph: PathBuf,
    ground_truth: PathBuf,
    /// Taxonomy replacing the one stored with the ground truth.
    #[arg(long)]
    taxonomy: Option<PathBuf>,
}

#[derive(Args)]
struct DictArgs {
    corpus: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = RelationDictionary::DEFAULT_SIGMA_FLOOR)]
    sigma_floor: f64,
}

enum Failure {
    Usage(String),
    Input(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Dimension(_) | Error::EmptyLabels | Error::BinMismatch(..) | Error::EmptyHistogram => {
                Failure::Internal(e.to_string())
            }
            _ => Failure::Input(e.to_string()),
        }
    }
}

fn io_fail(path: &Path, e: io::Error) -> Failure {
    Failure::Input(format!("{}: {e}", path.display()))
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| io_fail(p, e)),
        None => match io::stdout().lock().write_all(text.as_bytes()) {
            Err(e) if e.kind() == io::ErrorKind::BrokenPipe => std::process::exit(0),
            r => r.map_err(|e| Failure::Internal(format!("stdout: {e}"))),
        },
    }
}

/// Prints a line to stdout; a closed pipe ends the program quietly.
fn say(line: &str) -> Result<(), Failure> {
    let mut out = io::stdout().lock();
    match writeln!(out, "{line}") {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => std::process::exit(0),
        Err(e) => Err(Failure::Internal(format!("stdout: {e}"))),
        Ok(()) => Ok(()),
    }
}

fn report_path(output: &Path) -> PathBuf {
    let stem = output
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "graph".into());
    output.with_file_name(format!("{stem}.report.json"))
}

fn build(a: BuildArgs) -> Result<(), Failure> {
    let mut overrides = a.set;
    if let Some(s) = a.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(t) = a.threads {
        overrides.push(format!("threads={t}"));
    }
    for (off, key) in [
        (a.no_abir, "abir"),
        (a.no_kge, "kge"),
        (a.no_sdr, "sdr"),
        (a.no_same_node, "same_node"),
    ] {
        if off {
            overrides.push(format!("stages.{key}=false"));
        }
    }
    let cfg = match &a.config {
        Some(p) => PipelineConfig::load(p, &overrides)?,
        None => PipelineConfig::from_toml_with("", &overrides)?,
    };
    let out = build_dir(&a.bundle, &cfg)?;
    graph::save(&out.graph, &a.output)?;
    let report = a.report.unwrap_or_else(|| report_path(&a.output));
    let text = serde_json::to_string_pretty(&out.report).map_err(|e| Failure::Internal(e.to_string()))?;
    fs::write(&report, text + "\n").map_err(|e| io_fail(&report, e))?;
    if let Some(p) = &a.dump_groups {
        let text = serde_json::to_string_pretty(&out.grouping).map_err(|e| Failure::Internal(e.to_string()))?;
        fs::write(p, text + "\n").map_err(|e| io_fail(p, e))?;
    }
    eprintln!("{}", out.report.summary());
    Ok(())
}

fn query_context(a: &QueryArgs) -> Result<QueryContext, Failure> {
    let mut ctx = QueryContext {
        graph_path: Some(a.graph.clone()),
        ..QueryContext::default()
    };
    if let Some(p) = &a.taxonomy {
        ctx.taxonomy = Taxonomy::load(p)?;
    }
    if let Some(p) = &a.colors {
        ctx.colors = sg3d_core::query::ColorTable::load(p)?;
    }
    Ok(ctx)
}

fn answer(g: &SceneGraph3D, text: &str, ctx: &QueryContext, json: bool) -> Result<String, Error> {
    let q = parse_query(text)?;
    let r = evaluate(g, &q, ctx);
    Ok(if json {
        serde_json::to_string(&r).expect("query result serializes")
    } else {
        r.summary()
    })
}

fn query(a: QueryArgs) -> Result<(), Failure> {
    let g = graph::load(&a.graph)?;
    let ctx = query_context(&a)?;
    if !a.expr.is_empty() {
        for e in &a.expr {
            say(&answer(&g, e, &ctx, a.json)?)?;
        }
        return Ok(());
    }
    let stdin = io::stdin();
    let interactive = io::IsTerminal::is_terminal(&stdin);
    let mut failed = false;
    loop {
        if interactive {
            eprint!("sg3d> ");
            io::stderr().flush().ok();
        }
        let mut line = String::new();
        if stdin
            .lock()
            .read_line(&mut line)
            .map_err(|e| Failure::Input(format!("stdin: {e}")))?
            == 0
        {
            break;
        }
        let line = line.trim();
        match line {
            "" => continue,
            ":q" | ":quit" | "exit" | "quit" => break,
            _ => match answer(&g, line, &ctx, a.json) {
                Ok(s) => say(&s)?,
                Err(e) => {
                    eprintln!("error: {e}");
                    failed = true;
                }
            },
        }
    }
    if failed && !interactive {
        return Err(Failure::Input("one or more queries failed".into()));
    }
    Ok(())
}

fn export_pddl(a: PddlArgs) -> Result<(), Failure> {
    let g = graph::load(&a.graph)?;
    let profile = match &a.profile {
        Some(p) => ExportProfile::load(p)?,
        None => ExportProfile::builtin(),
    };
    let problem = to_problem(&g, &profile, &a.goal, &a.name)?;
    for w in &problem.warnings {
        log::warn!("{w}");
    }
    let text = problem.render();
    check_pddl(&text).map_err(|d| Failure::Internal(format!("generated problem fails its own check: {d}")))?;
    write_out(a.output.as_deref(), &text)
}

fn export_dot(a: DotArgs) -> Result<(), Failure> {
    let g = graph::load(&a.graph)?;
    write_out(a.output.as_deref(), &graph::to_dot(&g))
}

fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 525.0,
        fy: 525.0,
        cx: 319.5,
        cy: 239.5,
        width: 640,
        height: 480,
        depth_scale: 1000.0,
    }
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let world = WorldSpec::load(&a.world)?;
    let trajectory = TrajectorySpec::load(&a.trajectory)?;
    let mut noise = match &a.noise {
        Some(p) => NoiseSpec::load(p)?,
        None => NoiseSpec::default(),
    };
    if let Some(s) = a.seed {
        noise.seed = s;
    }
    let k = match &a.intrinsics {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_fail(p, e))?;
            let k: CameraIntrinsics =
                serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?;
            k.validate()?;
            k
        }
        None => default_intrinsics(),
    };
    let truth = generate_bundle(&world, &trajectory, &noise, &k, &a.output)?;
    if let Some(p) = &a.corpus {
        let text = relation_corpus(&world, &trajectory, &k, &noise)?;
        fs::write(p, text).map_err(|e| io_fail(p, e))?;
    }
    eprintln!(
        "{} frames, {} objects, {} relations written to {}",
        truth.visibility.len(),
        truth.objects.len(),
        truth.relations.len(),
        a.output.display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), Failure> {
    let g = graph::load(&a.graph)?;
    let mut truth = GroundTruth::load(&a.ground_truth)?;
    if let Some(p) = &a.taxonomy {
        let text = fs::read_to_string(p).map_err(|e| io_fail(p, e))?;
        truth.taxonomy = serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?;
    }
    let m = evaluate_graph(&g, &truth)?;
    let text = serde_json::to_string_pretty(&m).map_err(|e| Failure::Internal(e.to_string()))?;
    say(&text)
}

fn dict_build(a: DictArgs) -> Result<(), Failure> {
    if a.sigma_floor.is_nan() || a.sigma_floor <= 0.0 {
        return Err(Failure::Usage("--sigma-floor must be positive".into()));
    }
    let file = fs::File::open(&a.corpus).map_err(|e| io_fail(&a.corpus, e))?;
    let dict = RelationDictionary::build_from_corpus(io::BufReader::new(file), a.sigma_floor)?;
    dict.save(&a.output)?;
    eprintln!("{} triples written to {}", dict.len(), a.output.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Build(a) => build(a),
        Command::Query(a) => query(a),
        Command::ExportPddl(a) => export_pddl(a),
        Command::ExportDot(a) => export_dot(a),
        Command::Synth(a) => synth(a),
        Command::Eval(a) => eval(a),
        Command::DictBuild(a) => dict_build(a),
        Command::Config {
            command: ConfigCommand::PrintDefaults,
        } => write_out(None, &PipelineConfig::default().to_toml()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(m)) => {
            eprintln!("internal error: {m}");
            ExitCode::from(3)
        }
    }
}
