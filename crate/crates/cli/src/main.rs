use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use structctl::dynamics::BuildingModel;
use structctl::environment::{EnvConfig, Environment};
use structctl::evaluation::{run_evaluation, ControllerSpec, Execution, ExcitationSpec, RunManifest};
use structctl::excitation::{generate_with_impulses, load_record, RecordFormat, TrainingExcitationConfig, Units};
use structctl::lqg::{design_lqg, LqgConfig, LqgController};
use structctl::policy::{load_policy, Controller, ZeroController};
use structctl::protocol::{serve_stdio, serve_tcp, SessionOptions, DEFAULT_PORT, PORT_ENV};
use structctl::{Error, Result};

/// Active seismic structural-control toolkit: simulation, evaluation and an
/// environment server for external trainers.
#[derive(Debug, Parser)]
#[command(name = "structctl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Configuration file helpers.
    Config {
        #[command(subcommand)]
        action: ConfigCommand,
    },
    /// Simulate one record and write the response history as CSV.
    Simulate(SimulateArgs),
    /// Run an evaluation manifest and write metrics and plot data.
    Evaluate(EvaluateArgs),
    /// Expose an environment over the line-delimited JSON protocol.
    Serve(ServeArgs),
    /// Write a synthetic training excitation (noise plus impulses) as CSV.
    GenerateExcitation(GenerateArgs),
    /// Validate a policy file and print its structure.
    InspectPolicy(InspectArgs),
}

#[derive(Debug, Subcommand)]
enum ConfigCommand {
    /// Write a default configuration file.
    Init(InitArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ConfigKind {
    /// Environment configuration (benchmark model, reward, excitation source).
    Env,
    /// Building model only.
    Model,
    /// Evaluation manifest template.
    Manifest,
}

#[derive(Debug, Args)]
struct InitArgs {
    #[arg(long, value_enum, default_value = "env")]
    kind: ConfigKind,
    /// Destination file; stdout when omitted.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Overwrite an existing file.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct EnvArgs {
    /// Environment configuration JSON (defaults to the benchmark building).
    #[arg(long)]
    env_config: Option<PathBuf>,
    /// Building model JSON; replaces the model of the environment configuration.
    #[arg(long)]
    model: Option<PathBuf>,
}

impl EnvArgs {
    fn load(&self) -> Result<EnvConfig> {
        let mut cfg = match &self.env_config {
            Some(p) => EnvConfig::from_json_file(p)?,
            None => EnvConfig::default(),
        };
        if let Some(p) = &self.model {
            cfg.model = BuildingModel::from_json_file(p)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ControllerKind {
    Zero,
    Lqg,
    Policy,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Ground-motion record.
    #[arg(long)]
    record: PathBuf,
    /// Record format; guessed from the extension when omitted.
    #[arg(long)]
    format: Option<RecordFormat>,
    /// Acceleration units, overriding any declared in the file.
    #[arg(long)]
    units: Option<Units>,
    /// Multiply the record by this factor.
    #[arg(long)]
    scale: Option<f64>,
    #[command(flatten)]
    env: EnvArgs,
    #[arg(long, value_enum, default_value = "zero")]
    controller: ControllerKind,
    /// Policy file for `--controller policy`.
    #[arg(long, required_if_eq("controller", "policy"))]
    policy: Option<PathBuf>,
    /// Destination CSV; stdout when omitted.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Run manifest JSON.
    manifest: PathBuf,
    /// Run excitations one after another instead of in parallel.
    #[arg(long)]
    sequential: bool,
    /// Override the manifest's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Serve a single session on stdin/stdout.
    #[arg(long, conflicts_with = "port")]
    stdio: bool,
    /// TCP port.
    #[arg(long, env = PORT_ENV, default_value_t = DEFAULT_PORT)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Let clients request episodes from record files on this machine.
    #[arg(long)]
    allow_file_sources: bool,
    /// Exit after this many TCP sessions have finished.
    #[arg(long)]
    max_sessions: Option<usize>,
    #[command(flatten)]
    env: EnvArgs,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Duration in s.
    #[arg(long, default_value_t = 20.0)]
    duration: f64,
    /// Sample interval in s.
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    /// Noise standard deviation in m/s².
    #[arg(long, default_value_t = structctl::excitation::DEFAULT_NOISE_STD)]
    noise_std: f64,
    /// Expected impulses per second.
    #[arg(long, default_value_t = 0.2)]
    impulse_rate: f64,
    /// Smallest impulse magnitude in m/s².
    #[arg(long, default_value_t = 1.0)]
    impulse_min: f64,
    /// Largest impulse magnitude in m/s².
    #[arg(long, default_value_t = 4.0)]
    impulse_max: f64,
    /// Impulse width in samples.
    #[arg(long, default_value_t = 1)]
    impulse_width: usize,
    /// Destination CSV; stdout when omitted.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    policy: PathBuf,
    /// Also check the layout against this environment.
    #[command(flatten)]
    env: EnvArgs,
    /// Print a JSON summary instead of text.
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Config {
            action: ConfigCommand::Init(args),
        } => config_init(args),
        Command::Simulate(args) => simulate(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Serve(args) => serve(args),
        Command::GenerateExcitation(args) => generate(args),
        Command::InspectPolicy(args) => inspect(args),
    }
}

/// Write `bytes` to `path`, or stdout when `path` is `None`.
fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| io_error(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| io_error(Path::new("<stdout>"), e))
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

fn config_init(args: InitArgs) -> Result<()> {
    let text = match args.kind {
        ConfigKind::Env => serde_json::to_string_pretty(&EnvConfig::default())?,
        ConfigKind::Model => serde_json::to_string_pretty(&BuildingModel::benchmark())?,
        ConfigKind::Manifest => serde_json::to_string_pretty(&RunManifest {
            model: None,
            env_config: None,
            controller: ControllerSpec::Lqg(LqgConfig::default()),
            excitations: vec![ExcitationSpec::Record {
                path: "records/elcentro_ns.at2".into(),
                format: Some(RecordFormat::StrongMotion),
                units: None,
                name: Some("El Centro 1940".into()),
                scale: None,
            }],
            output_dir: "results".into(),
            seed: 0,
        })?,
    };
    if let Some(p) = &args.output {
        if p.exists() && !args.force {
            return Err(Error::Config(format!("{} exists; pass --force to overwrite", p.display())));
        }
    }
    emit(args.output.as_deref(), format!("{text}\n").as_bytes())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let cfg = args.env.load()?;
    let format = args.format.unwrap_or_else(|| RecordFormat::from_path(&args.record));
    let mut record = load_record(&args.record, format, args.units)?;
    if let Some(s) = args.scale {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::Parameter("--scale must be positive".into()));
        }
        record = record.scaled(s);
    }
    let env = Environment::new(cfg.clone())?;
    let mut controller: Box<dyn Controller> = match args.controller {
        ControllerKind::Zero => Box::new(ZeroController::new(env.act_dim())),
        ControllerKind::Lqg => Box::new(LqgController::new(Arc::new(design_lqg(&cfg, &LqgConfig::default())?))),
        ControllerKind::Policy => {
            let path = args.policy.as_ref().expect("clap enforces --policy");
            Box::new(load_policy(path, Some(env.layout()))?)
        }
    };
    let history = env.simulate_controlled(&record, controller.as_mut())?;
    let mut bytes = Vec::new();
    history.write_csv(&mut bytes).map_err(|e| io_error(Path::new("<buffer>"), e))?;
    emit(args.output.as_deref(), &bytes)
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let mut manifest = RunManifest::load(&args.manifest)?;
    if let Some(dir) = args.output_dir {
        manifest.output_dir = dir;
    }
    let execution = if args.sequential { Execution::Sequential } else { Execution::default() };
    let out = run_evaluation(&manifest, execution)?;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
    println!("manifest sha256 {}", out.manifest_hash);
    for r in &out.reports {
        println!("{}: J1 [{}] J2 [{}] J3 {:.4} J4 [{}]", r.earthquake, fmt(&r.j1), fmt(&r.j2), r.j3, fmt(&r.j4));
    }
    let s = &out.summary;
    println!("mean over {}: J1 [{}] J2 [{}] J3 {:.4} J4 [{}]", s.n_earthquakes, fmt(&s.j1), fmt(&s.j2), s.j3, fmt(&s.j4));
    println!("wrote {} files to {}", out.files.len(), manifest.output_dir.display());
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let cfg = args.env.load()?;
    let options = SessionOptions {
        allow_file_sources: args.allow_file_sources,
    };
    if args.stdio {
        return serve_stdio(cfg, options);
    }
    let addr = format!("{}:{}", args.host, args.port);
    let listener = TcpListener::bind(&addr).map_err(|e| Error::Config(format!("cannot listen on {addr}: {e}")))?;
    if let Ok(local) = listener.local_addr() {
        eprintln!("listening on {local}");
    }
    serve_tcp(listener, cfg, options, args.max_sessions)
}

fn generate(args: GenerateArgs) -> Result<()> {
    let cfg = TrainingExcitationConfig {
        duration: args.duration,
        dt: args.dt,
        noise_std: args.noise_std,
        impulse_rate: args.impulse_rate,
        impulse_amp_range: (args.impulse_min, args.impulse_max),
        impulse_width: args.impulse_width,
        seed: args.seed,
    };
    let (record, impulses) = generate_with_impulses(&cfg)?;
    let mut bytes = Vec::new();
    record.write_csv(&mut bytes).map_err(|e| io_error(Path::new("<buffer>"), e))?;
    emit(args.output.as_deref(), &bytes)?;
    if args.output.is_some() {
        eprintln!("{} samples, {} impulses, peak {:.4} m/s2", record.samples.len(), impulses.len(), record.peak());
    }
    Ok(())
}

fn inspect(args: InspectArgs) -> Result<()> {
    let expected = match (&args.env.env_config, &args.env.model) {
        (None, None) => None,
        _ => Some(args.env.load()?.layout()),
    };
    let policy = load_policy(&args.policy, expected.as_ref())?;
    let layout = policy.layout();
    if args.json {
        let layers: Vec<_> = policy
            .shape()
            .iter()
            .map(|(rows, cols, act)| serde_json::json!({"rows": rows, "cols": cols, "activation": act}))
            .collect();
        let summary = serde_json::json!({
            "input_dim": policy.input_dim(),
            "output_dim": policy.output_dim(),
            "layers": layers,
            "obs_layout": layout,
            "metadata": policy.metadata(),
        });
        println!("{}", serde_json::to_string_pretty(&summary)?);
        return Ok(());
    }
    println!("input {} -> output {}", policy.input_dim(), policy.output_dim());
    println!(
        "observation: {} frames x stories {:?} + ground + {} last actions",
        layout.k, layout.instrumented, layout.n_act
    );
    for (i, (rows, cols, act)) in policy.shape().iter().enumerate() {
        println!("layer {}: {cols} -> {rows} {act:?}", i + 1);
    }
    if let Some(meta) = policy.metadata() {
        for (k, v) in meta {
            println!("{k}: {v}");
        }
    }
    Ok(())
}
