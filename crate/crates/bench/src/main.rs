use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use hipbi_bench::config::{ConfigError, ModeKind, RunConfig};
use hipbi_bench::episode::{run_episode, ControllerKind, EpisodeError, ExecutionMode};
use hipbi_bench::plot::{emit_trajectory_plot, PlotError};
use hipbi_bench::suite::{self, controller_for, planner_seed};
use hipbi_bench::trace::{self, TraceError, TraceHeader};
use hipbi_bench::wallclock::run_episode_wall_clock;

#[derive(Parser)]
#[command(name = "hipbi", version, about = "Policy-blending benchmark runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed (run) or seed base (sweeps).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    controller: Option<ControllerKind>,
    #[arg(long)]
    mode: Option<ModeKind>,
    /// Planner horizon.
    #[arg(long)]
    lookahead: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write its trace.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also render the trajectory as SVG.
        #[arg(long)]
        plot: bool,
    },
    /// Controller x mode x horizon grid; writes suite.csv.
    Suite {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Toy-box sweep over box speeds; writes ablate_speed.csv.
    AblateSpeed {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Render a trace file as SVG.
    Plot {
        /// Trace file written by `run`.
        trace: PathBuf,
        /// Output file or directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Parse and check a configuration file.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

enum Failure {
    Config(String),
    Io(String),
    Run(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Run(_) => 1,
            Failure::Config(_) => 2,
            Failure::Io(_) => 3,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<EpisodeError> for Failure {
    fn from(e: EpisodeError) -> Self {
        match e {
            EpisodeError::Mismatch(_) => Failure::Config(e.to_string()),
            _ => Failure::Run(e.to_string()),
        }
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<TraceError> for Failure {
    fn from(e: TraceError) -> Self {
        match e {
            TraceError::Io(_) => Failure::Io(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<PlotError> for Failure {
    fn from(e: PlotError) -> Self {
        match e {
            PlotError::Io(_) => Failure::Io(e.to_string()),
            PlotError::EmptyTrace => Failure::Run(e.to_string()),
        }
    }
}

fn load(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(c) = common.controller {
        cfg.controller.kind = c;
        cfg.sweep.controllers = vec![c];
    }
    if let Some(m) = common.mode {
        cfg.mode.kind = m;
        cfg.sweep.modes = vec![m];
    }
    if let Some(h) = common.lookahead {
        cfg.planner.horizon = h;
        cfg.sweep.horizons = vec![h];
        cfg.sweep.ablation_horizon = h;
    }
    if let Some(s) = common.seed {
        cfg.sweep.seed_base = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn timing(cfg: &RunConfig, mode: ModeKind) -> String {
    match (mode, cfg.mode.wall_clock) {
        (ModeKind::Sync, _) => "sync".into(),
        (ModeKind::Async, false) => format!("latency_steps={}", cfg.mode.latency_steps),
        (ModeKind::Async, true) => format!("wall_clock step_period_ms={}", cfg.mode.step_period_ms),
    }
}

fn run(common: &Common, plot: bool) -> Result<(), Failure> {
    let cfg = load(common)?;
    let seed = cfg.sweep.seed_base;
    let env = cfg.env();
    let spec = cfg.scenario_spec(seed);
    let controller = controller_for(&cfg, cfg.controller.kind, cfg.planner.horizon);
    let mode = cfg.mode.kind;
    let record = if mode == ModeKind::Async && cfg.mode.wall_clock {
        let period = Duration::from_millis(cfg.mode.step_period_ms);
        run_episode_wall_clock(&env, &spec, |s| cfg.experts_for(s), &controller, cfg.mode.async_n_iters, period, planner_seed(seed, 0))?
    } else {
        let exec: ExecutionMode = cfg.execution_mode(mode);
        run_episode(&env, &spec, |s| cfg.experts_for(s), &controller, exec, planner_seed(seed, 0), true)?
    };
    std::fs::create_dir_all(&common.out)?;
    let stem = format!("{}_{}_{}_{}", cfg.scenario.env.name(), controller.kind.name(), mode.name(), seed);
    let header = TraceHeader::new(&record, cfg.scenario.env.name(), controller.kind.name(), mode.name(), timing(&cfg, mode), seed);
    let trace_path = common.out.join(format!("{stem}.jsonl"));
    trace::save_trace(&trace_path, &header, &record.trace)?;
    println!(
        "suc={} safe={} l2d={:.3} ts={} trace={}",
        record.suc,
        record.safe,
        record.l2d,
        record.ts,
        trace_path.display()
    );
    if plot && !record.trace.is_empty() {
        let svg = common.out.join(format!("{stem}.svg"));
        emit_trajectory_plot(&record, &svg)?;
        println!("plot={}", svg.display());
    }
    Ok(())
}

fn write_rows(out: &Path, name: &str, rows: &[suite::SuiteRow]) -> Result<(), Failure> {
    std::fs::create_dir_all(out)?;
    let path = out.join(name);
    suite::write_csv(rows, std::fs::File::create(&path)?)?;
    suite::write_csv(rows, std::io::stdout())?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn sweep(common: &Common, episodes: Option<usize>, speeds: bool) -> Result<(), Failure> {
    let mut cfg = load(common)?;
    if let Some(n) = episodes {
        cfg.sweep.episodes = n;
    }
    cfg.validate()?;
    let (n, base) = (cfg.sweep.episodes, cfg.sweep.seed_base);
    if speeds {
        let rows = suite::run_speed_ablation(&cfg, &cfg.sweep.speeds, n, base)?;
        write_rows(&common.out, "ablate_speed.csv", &rows)
    } else {
        let rows = suite::run_suite(&cfg, n, base)?;
        write_rows(&common.out, "suite.csv", &rows)
    }
}

fn plot(trace_path: &Path, out: &Path) -> Result<(), Failure> {
    let (header, steps) = trace::load_trace(trace_path)?;
    let record = trace::record_from(&header, steps);
    let target = if out.extension().is_some_and(|e| e == "svg") {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        out.to_path_buf()
    } else {
        std::fs::create_dir_all(out)?;
        let stem = trace_path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        out.join(format!("{stem}.svg"))
    };
    emit_trajectory_plot(&record, &target)?;
    println!("{}", target.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { common, plot: p } => run(common, *p),
        Command::Suite { common, episodes } => sweep(common, *episodes, false),
        Command::AblateSpeed { common, episodes } => sweep(common, *episodes, true),
        Command::Plot { trace, out } => plot(trace, out),
        Command::ValidateConfig { config } => RunConfig::load(config).map_err(Failure::from).map(|_| {
            println!("ok");
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = match &f {
                Failure::Config(m) => format!("config error: {m}"),
                Failure::Io(m) => format!("i/o error: {m}"),
                Failure::Run(m) => format!("error: {m}"),
            };
            eprintln!("{msg}");
            ExitCode::from(f.code())
        }
    }
}
