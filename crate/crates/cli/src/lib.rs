//! Command-line front end: `analyze`, `synth`, `simulate` and `wrap`.

pub mod report;
mod simulate;
mod wrap;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use ptxasw_core::emulator::Limits;
use ptxasw_core::pipeline::{synthesize_module, AnalysisConfig, KernelError, SolverChoice, MAX_DELTA};
use ptxasw_core::ptx::{parse_module, print_module, ParseError, PtxModule};
use ptxasw_core::synth::Mode;

pub use report::Report;
pub use simulate::{simulate, Comparison, DimArg, SimulateArgs, SimulateError, SimulateOutcome};
pub use wrap::{find_ptx_argument, WrapArgs};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DIFF: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_ANALYSIS: i32 = 3;
pub const EXIT_SPAWN: i32 = 4;

pub const MODE_ENV: &str = "PTXASW_MODE";
pub const ASSEMBLER_ENV: &str = "PTXASW_REAL_ASSEMBLER";

#[derive(Debug, Parser)]
#[command(name = "ptxasw", version, about = "Replace redundant PTX global loads with warp shuffles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Report shuffle opportunities without writing PTX.
    Analyze(AnalyzeArgs),
    /// Rewrite a PTX module.
    Synth(SynthArgs),
    /// Run a kernel in the warp simulator, optionally against a second module.
    Simulate(SimulateArgs),
    /// Synthesize the PTX input of an assembler command line, then run the assembler.
    Wrap(WrapArgs),
    /// Print the JSON Schema of the report.
    Schema,
}

/// Settings shared by every command that analyzes PTX.
#[derive(Debug, Clone, Args)]
pub struct ToolConfig {
    #[arg(long, env = MODE_ENV, default_value = "full")]
    pub mode: Mode,
    /// Largest lane distance |N| to consider.
    #[arg(long, default_value_t = MAX_DELTA, value_parser = clap::value_parser!(u32).range(0..=MAX_DELTA as i64))]
    pub max_delta: u32,
    /// Flows explored per kernel before analysis is cut short.
    #[arg(long, default_value_t = Limits::default().max_flows)]
    pub max_flows: usize,
    /// Statements executed per flow before it is cut short.
    #[arg(long, default_value_t = Limits::default().max_steps)]
    pub max_steps: usize,
    /// Time limit per external solver query.
    #[arg(long, default_value_t = Limits::default().solver_timeout.as_millis() as u64)]
    pub solver_timeout_ms: u64,
    /// SMT-LIB2 solver binary (default: $PTXASW_SOLVER, then `z3`).
    #[arg(long, conflicts_with = "no_solver")]
    pub solver: Option<PathBuf>,
    /// Decide everything internally; undecided pairs are not shuffled.
    #[arg(long)]
    pub no_solver: bool,
    /// Write the JSON report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Kernels analyzed in parallel (0 = one per core).
    #[arg(long, short = 'j', default_value_t = 0)]
    pub jobs: usize,
}

impl Default for ToolConfig {
    fn default() -> ToolConfig {
        ToolConfig {
            mode: Mode::Full,
            max_delta: MAX_DELTA,
            max_flows: Limits::default().max_flows,
            max_steps: Limits::default().max_steps,
            solver_timeout_ms: Limits::default().solver_timeout.as_millis() as u64,
            solver: None,
            no_solver: false,
            report: None,
            jobs: 0,
        }
    }
}

impl ToolConfig {
    pub fn analysis(&self) -> AnalysisConfig {
        AnalysisConfig {
            mode: self.mode,
            max_abs_delta: self.max_delta,
            limits: Limits {
                max_flows: self.max_flows,
                max_steps: self.max_steps,
                solver_timeout: Duration::from_millis(self.solver_timeout_ms),
            },
            solver: match (&self.solver, self.no_solver) {
                (_, true) => SolverChoice::Internal,
                (Some(p), false) => SolverChoice::Program(p.clone()),
                (None, false) => SolverChoice::Env,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub input: PathBuf,
    #[command(flatten)]
    pub config: ToolConfig,
    /// Print the report as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
    /// Also print the memory trace of every analyzed flow.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    pub input: PathBuf,
    /// Output file; standard output when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub config: ToolConfig,
    /// On a parse or analysis error, still write the input unchanged to the output.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set, num_args = 0..=1, default_missing_value = "true")]
    pub best_effort: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum ToolError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{source}", path.display())]
    Parse { path: PathBuf, source: ParseError },
    #[error(transparent)]
    Analysis(KernelError),
}

impl ToolError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ToolError::Io { .. } | ToolError::Parse { .. } => EXIT_PARSE,
            ToolError::Analysis(_) => EXIT_ANALYSIS,
        }
    }
}

/// Output of synthesizing one file.
#[derive(Debug, Clone)]
pub struct Synthesized {
    pub module: PtxModule,
    pub text: String,
    pub report: Report,
    /// Per kernel, the printed trace of each flow.
    pub traces: Vec<(String, Vec<String>)>,
}

pub fn synthesize_file(input: &Path, config: &ToolConfig) -> Result<Synthesized, ToolError> {
    let bytes = std::fs::read(input).map_err(|source| ToolError::Io {
        path: input.to_path_buf(),
        source,
    })?;
    synthesize_source(input, &bytes, config)
}

pub fn synthesize_source(name: &Path, bytes: &[u8], config: &ToolConfig) -> Result<Synthesized, ToolError> {
    let src = String::from_utf8_lossy(bytes);
    let m = parse_module(&src).map_err(|source| ToolError::Parse {
        path: name.to_path_buf(),
        source,
    })?;
    let (module, outcomes) = synthesize_module(&m, &config.analysis(), config.jobs).map_err(ToolError::Analysis)?;
    let traces = outcomes.iter().map(|o| (o.stats.kernel.clone(), o.traces.clone())).collect();
    let report = Report::new(bytes, outcomes.into_iter().map(|o| o.stats).collect());
    let text = if report.kernels.iter().all(|k| k.shuffles_emitted + k.movs_emitted == 0) {
        // Nothing to change: keep the input byte for byte.
        src.into_owned()
    } else {
        print_module(&module)
    };
    Ok(Synthesized {
        module,
        text,
        report,
        traces,
    })
}

pub(crate) fn write_report(config: &ToolConfig, report: &Report) -> anyhow::Result<()> {
    if let Some(p) = &config.report {
        std::fs::write(p, report.to_json() + "\n").map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))?;
    }
    Ok(())
}

fn write_output(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| anyhow::anyhow!("{}: {e}", p.display())),
        None => Ok(std::io::stdout().write_all(text.as_bytes())?),
    }
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> i32 {
    match synthesize_file(&args.input, &args.config) {
        Ok(s) => {
            if args.trace {
                for (kernel, flows) in &s.traces {
                    for (i, t) in flows.iter().enumerate() {
                        println!("# {kernel} flow {i}\n{t}");
                    }
                }
            }
            if args.json {
                println!("{}", s.report.to_json());
            } else {
                print!("{}", s.report.table());
            }
            report_or_exit(write_report(&args.config, &s.report), EXIT_OK)
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn cmd_synth(args: &SynthArgs) -> i32 {
    match synthesize_file(&args.input, &args.config) {
        Ok(s) => {
            eprint!("{}", s.report.table());
            let r = write_output(args.output.as_deref(), &s.text).and_then(|_| write_report(&args.config, &s.report));
            report_or_exit(r, EXIT_OK)
        }
        Err(e) => {
            eprintln!("error: {e}");
            if args.best_effort {
                if let Ok(bytes) = std::fs::read(&args.input) {
                    eprintln!("warning: copying {} through unchanged", args.input.display());
                    if let Err(w) = write_output(args.output.as_deref(), &String::from_utf8_lossy(&bytes)) {
                        eprintln!("error: {w}");
                    }
                }
            }
            e.exit_code()
        }
    }
}

fn report_or_exit(r: anyhow::Result<()>, ok: i32) -> i32 {
    match r {
        Ok(()) => ok,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_PARSE
        }
    }
}

pub fn run(cli: Cli) -> i32 {
    match cli.command {
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Simulate(a) => simulate::cmd_simulate(&a),
        Command::Wrap(a) => wrap::cmd_wrap(&a),
        Command::Schema => {
            println!("{}", serde_json::to_string_pretty(&report::schema()).expect("schema serializes"));
            EXIT_OK
        }
    }
}
