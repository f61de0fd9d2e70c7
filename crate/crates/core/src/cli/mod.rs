//! The `heterolab` command line.
//!
//! Exit codes: 0 on success, 2 for usage and input errors, 3 for numerical
//! failures. Every run writes `<name>.manifest.json` next to its outputs;
//! `heterolab rerun --manifest <file>` replays it.

mod config;
mod exec;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::*;
pub use exec::{case_style_spectra, execute, load_density_dir};

use crate::error::{Error, Result};
use crate::io::write_json;
use crate::quadlab::QConstruction;
use crate::slq::ProbeDistribution;

pub const OUT_DIR_ENV: &str = "HETEROLAB_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "heterolab-out";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "heterolab",
    version,
    about = "Blockwise Hessian spectra, SLQ and optimizer experiments"
)]
struct Cli {
    /// Output directory [default: heterolab-out].
    #[arg(long, global = true, env = OUT_DIR_ENV)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Spectral density of an operator (or one of its blocks) by SLQ.
    Slq(SlqArgs),
    /// Pairwise JS distances among blockwise densities, and JS⁰.
    Heatmap(HeatmapArgs),
    /// Gradient descent or Adam on a block-diagonal quadratic.
    Quad(QuadArgs),
    /// Small-network experiments.
    Mlp {
        #[command(subcommand)]
        command: MlpCommand,
    },
    /// Replay a run from its manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum MlpCommand {
    /// Block dominance of the exact Hessian along training.
    Blockdiag(MlpArgs),
    /// SGD vs AdamW and JS⁰ as every layer's output is scaled by c.
    Scaling(MlpArgs),
    /// Blockwise SLQ densities of a fresh or trained network.
    SlqNet(MlpArgs),
}

#[derive(Debug, Args)]
struct MlpArgs {
    /// TOML config (keys as in the manifest's `config` object).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file stem.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Debug, Args)]
struct SourceArgs {
    /// Dense symmetric matrix as CSV.
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// `linspace:LO:HI:N`, `case:K` or `case:K:MULT`.
    #[arg(long)]
    synthetic: Option<String>,
    /// Block partition as JSON (1-based inclusive ranges).
    #[arg(long)]
    partition: Option<PathBuf>,
}

impl SourceArgs {
    fn apply(&self, src: &mut OperatorSource) {
        if self.matrix.is_some() || self.synthetic.is_some() {
            src.matrix = self.matrix.clone();
            src.synthetic = self.synthetic.clone();
        }
        if self.partition.is_some() {
            src.partition = self.partition.clone();
        }
    }
}

#[derive(Debug, Args)]
struct SlqArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    source: SourceArgs,
    /// 1-based block of the partition.
    #[arg(long)]
    block: Option<usize>,
    /// Lanczos steps.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    num_probes: Option<usize>,
    /// Blur width (default 1% of the node span).
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    probe: Option<ProbeDistribution>,
    #[arg(long, value_enum)]
    reorth: Option<OnOff>,
    /// Points of the exported density grid.
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long)]
    name: Option<String>,
}

#[derive(Debug, Args)]
struct HeatmapArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of density JSON files.
    #[arg(long)]
    densities: Option<PathBuf>,
    #[command(flatten)]
    source: SourceArgs,
    /// Simplified estimator on this fraction of blocks.
    #[arg(long)]
    simplified: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    num_probes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    probe: Option<ProbeDistribution>,
    /// Divide each density's axis by its 10th largest node first.
    #[arg(long)]
    normalize_10th: bool,
    #[arg(long)]
    name: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VerifyArg {
    Prop1,
    Thm1,
    Prop2,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum QArg {
    Orthogonal,
    Gaussian,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum QuadOptArg {
    Gd,
    Adam,
}

#[derive(Debug, Args)]
struct QuadArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// 1, 2, 3, 4, d1 or scalar.
    #[arg(long)]
    case: Option<String>,
    /// Eigenvalue-list files, one per block (overrides --case).
    #[arg(long, num_args = 1..)]
    spectra: Vec<PathBuf>,
    #[arg(long, value_enum)]
    optimizer: Option<QuadOptArg>,
    #[arg(long)]
    beta2: Option<f64>,
    /// `auto` or a step size.
    #[arg(long)]
    eta: Option<EtaSetting>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    q: Option<QArg>,
    /// Condition number of the d1 instance.
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long, value_enum)]
    verify: Option<VerifyArg>,
    #[arg(long)]
    name: Option<String>,
}

fn load_or_default<T: Default + serde::de::DeserializeOwned>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        Some(p) => load_toml(p),
        None => Ok(T::default()),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn resolve_slq(a: SlqArgs) -> Result<RunSpec> {
    let mut c: SlqRun = load_or_default(&a.config)?;
    a.source.apply(&mut c.source);
    if a.block.is_some() {
        c.block = a.block;
    }
    set(&mut c.m, a.m);
    set(&mut c.num_probes, a.num_probes);
    if a.sigma.is_some() {
        c.sigma = a.sigma;
    }
    set(&mut c.seed, a.seed);
    set(&mut c.probe, a.probe);
    set(&mut c.reorth, a.reorth.map(|r| matches!(r, OnOff::On)));
    if a.grid_points.is_some() {
        c.grid_points = a.grid_points;
    }
    set(&mut c.name, a.name);
    Ok(RunSpec::Slq(c))
}

fn resolve_heatmap(a: HeatmapArgs) -> Result<RunSpec> {
    let mut c: HeatmapRun = load_or_default(&a.config)?;
    if a.densities.is_some() {
        c.densities = a.densities;
    }
    a.source.apply(&mut c.source);
    if a.simplified.is_some() {
        c.simplified = a.simplified;
    }
    if a.m.is_some() {
        c.m = a.m;
    }
    if a.num_probes.is_some() {
        c.num_probes = a.num_probes;
    }
    set(&mut c.seed, a.seed);
    set(&mut c.probe, a.probe);
    c.normalize_10th |= a.normalize_10th;
    set(&mut c.name, a.name);
    Ok(RunSpec::Heatmap(c))
}

fn resolve_quad(a: QuadArgs) -> Result<RunSpec> {
    let mut c: QuadRun = load_or_default(&a.config)?;
    set(&mut c.case, a.case);
    if !a.spectra.is_empty() {
        c.spectra = a.spectra;
    }
    set(
        &mut c.optimizer,
        a.optimizer.map(|o| match o {
            QuadOptArg::Gd => QuadOptimizer::Gd,
            QuadOptArg::Adam => QuadOptimizer::Adam,
        }),
    );
    set(&mut c.beta2, a.beta2);
    set(&mut c.eta, a.eta);
    set(&mut c.steps, a.steps);
    set(&mut c.seed, a.seed);
    set(
        &mut c.q,
        a.q.map(|q| match q {
            QArg::Orthogonal => QConstruction::Orthogonal,
            QArg::Gaussian => QConstruction::Gaussian,
        }),
    );
    set(&mut c.kappa, a.kappa);
    if let Some(v) = a.verify {
        c.verify = Some(match v {
            VerifyArg::Prop1 => Verify::Prop1,
            VerifyArg::Thm1 => Verify::Thm1,
            VerifyArg::Prop2 => Verify::Prop2,
        });
    }
    set(&mut c.name, a.name);
    Ok(RunSpec::Quad(c))
}

fn resolve_mlp(cmd: MlpCommand) -> Result<RunSpec> {
    Ok(match cmd {
        MlpCommand::Blockdiag(a) => {
            let mut c: BlockdiagRun = load_or_default(&a.config)?;
            set(&mut c.seed, a.seed);
            set(&mut c.name, a.name);
            RunSpec::MlpBlockdiag(c)
        }
        MlpCommand::Scaling(a) => {
            let mut c: ScalingRun = load_or_default(&a.config)?;
            set(&mut c.experiment.seed, a.seed);
            set(&mut c.name, a.name);
            RunSpec::MlpScaling(c)
        }
        MlpCommand::SlqNet(a) => {
            let mut c: SlqNetRun = load_or_default(&a.config)?;
            set(&mut c.seed, a.seed);
            set(&mut c.name, a.name);
            RunSpec::MlpSlqNet(c)
        }
    })
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    if m.schema_version != SCHEMA_VERSION {
        return Err(Error::parse(
            path,
            format!("unsupported manifest schema_version {}", m.schema_version),
        ));
    }
    Ok(m)
}

/// Runs `spec` into `out_dir` and writes its manifest; returns the manifest
/// path.
pub fn run_spec(spec: &RunSpec, out_dir: &Path) -> Result<PathBuf> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let outputs = execute(spec, out_dir)?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        tool: format!("heterolab {}", env!("CARGO_PKG_VERSION")),
        run: spec.clone(),
        outputs,
    };
    let path = out_dir.join(format!("{}.manifest.json", spec.name()));
    write_json(&path, &manifest)?;
    Ok(path)
}

fn dispatch(cli: Cli) -> Result<()> {
    let (spec, out_dir) = match cli.command {
        Command::Rerun { manifest } => {
            let m = read_manifest(&manifest)?;
            let dir = cli
                .out_dir
                .unwrap_or_else(|| manifest.parent().map(Path::to_path_buf).unwrap_or_default());
            (m.run, dir)
        }
        other => {
            let spec = match other {
                Command::Slq(a) => resolve_slq(a)?,
                Command::Heatmap(a) => resolve_heatmap(a)?,
                Command::Quad(a) => resolve_quad(a)?,
                Command::Mlp { command } => resolve_mlp(command)?,
                Command::Rerun { .. } => unreachable!(),
            };
            (spec, cli.out_dir.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)))
        }
    };
    let manifest = run_spec(&spec, &out_dir)?;
    eprintln!("wrote {}", manifest.display());
    Ok(())
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
