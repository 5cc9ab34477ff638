use clap::{Parser, Subcommand, ValueEnum};
use lfdvs::harness::io::{
    read_csv, read_demos, read_references, trace_from_rows, trace_rows, write_csv, write_demos,
    write_json, write_references, write_trace_detail, PlanRow, TrajectoryRow,
};
use lfdvs::harness::pipeline::{grip_pose, learn, mandrel_legs, plan};
use lfdvs::harness::{
    gen_demos, run_sweep, run_table, run_trial, ExperimentConfig, HarnessError, Prepared, SweepKind,
};
use lfdvs::sim::{evaluate, ServoMode};
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "lfdvs", version, about = "Learn, plan and simulate bimanual stitching from demonstrations")]
struct Cli {
    /// TOML experiment configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for all artifacts.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic demonstrations into <out>/demos.
    GenDemos,
    /// Fit the model and write model.json and references/.
    Learn {
        /// Demonstration directory; defaults to paths.demos, then <out>/demos.
        #[arg(long)]
        demos: Option<PathBuf>,
    },
    /// Derive the speed plan from the references into plan.csv.
    Plan,
    /// Run one simulated trial and write its trace and metrics.
    Simulate {
        #[arg(long, value_enum, default_value_t = Mode::VisualServo)]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        /// Reference down-sampling factor.
        #[arg(long, default_value_t = 1)]
        factor: usize,
    },
    /// Score a trajectory CSV against the references.
    Evaluate {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Run a parameter sweep.
    Sweep {
        #[arg(long, value_enum)]
        kind: Kind,
    },
    /// Run the visual-servo trials and the open-loop baseline as a table.
    Report,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    OpenLoop,
    VisualServo,
}

impl From<Mode> for ServoMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::OpenLoop => ServoMode::OpenLoop,
            Mode::VisualServo => ServoMode::VisualServo,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Speed,
    Bias,
    Latency,
}

impl From<Kind> for SweepKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Speed => SweepKind::Speed,
            Kind::Bias => SweepKind::Bias,
            Kind::Latency => SweepKind::Latency,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("serializable"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let record = json!({
                "error": e.kind(),
                "message": e.to_string(),
                "path": e.path().map(|p| p.display().to_string()),
            });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

fn prepared(cfg: &ExperimentConfig, out: &Path) -> Result<Prepared, HarnessError> {
    let refs = read_references(&out.join("references"))?;
    let rows: Vec<PlanRow> = read_csv(&out.join("plan.csv"))?;
    Prepared::new(cfg, &refs, &rows)
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn run(cli: &Cli) -> Result<serde_json::Value, HarnessError> {
    let cfg = load_config(cli)?;
    let out = &cli.out_dir;
    create_dir(out)?;
    match &cli.command {
        Command::GenDemos => {
            let dir = out.join("demos");
            create_dir(&dir)?;
            let demos = gen_demos(&cfg.demos, cfg.seed)?;
            write_demos(&dir, &demos)?;
            Ok(json!({ "demos": demos.len(), "dir": path_str(&dir) }))
        }
        Command::Learn { demos } => {
            let dir = demos
                .clone()
                .or_else(|| cfg.paths.demos.clone())
                .unwrap_or_else(|| out.join("demos"));
            let demos = read_demos(&dir)?;
            let learned = learn(&demos, &cfg)?;
            let refs_dir = out.join("references");
            create_dir(&refs_dir)?;
            write_references(&refs_dir, &learned.references)?;
            let model = out.join("model.json");
            write_json(&model, &learned.model)?;
            let components: Vec<_> = learned
                .model
                .primitives
                .iter()
                .map(|p| json!({ "primitive": p.label, "components": p.tools.iter().map(|t| t.components).collect::<Vec<_>>() }))
                .collect();
            Ok(json!({ "model": path_str(&model), "references": path_str(&refs_dir), "primitives": components }))
        }
        Command::Plan => {
            let refs = read_references(&out.join("references"))?;
            let rows = plan(&refs, &cfg.context)?;
            let path = out.join("plan.csv");
            write_csv(&path, &rows)?;
            Ok(json!({ "plan": path_str(&path), "rows": rows.len() }))
        }
        Command::Simulate { mode, trial, factor } => {
            if *factor == 0 {
                return Err(HarnessError::Config("factor must be at least 1".into()));
            }
            let prep = prepared(&cfg, out)?;
            let mode = ServoMode::from(*mode);
            let (trace, metrics) = run_trial(&prep, &cfg, mode, *trial, *factor)?;
            let stem = format!("{}_{}", mode.name(), trial);
            let trace_path = out.join(format!("trace_{stem}.csv"));
            write_csv(&trace_path, &trace_rows(&trace))?;
            write_trace_detail(&out.join(format!("trace_{stem}_detail.csv")), &trace)?;
            let metrics_path = out.join(format!("metrics_{stem}.json"));
            write_json(&metrics_path, &metrics)?;
            Ok(json!({
                "trace": path_str(&trace_path),
                "metrics": metrics,
                "updates": trace.updates,
                "rejected_frames": trace.rejected,
            }))
        }
        Command::Evaluate { trace } => {
            let refs = read_references(&out.join("references"))?;
            let truth: Vec<_> = mandrel_legs(&refs, &grip_pose(&cfg))?
                .into_iter()
                .map(|l| l.reference)
                .collect();
            let rows: Vec<TrajectoryRow> = read_csv(trace)?;
            let record = trace_from_rows(&rows, cfg.robot.control_period)?;
            let metrics = evaluate(&record, &truth)?;
            Ok(json!({ "trace": path_str(trace), "metrics": metrics }))
        }
        Command::Sweep { kind } => {
            let prep = prepared(&cfg, out)?;
            let kind = SweepKind::from(*kind);
            let report = run_sweep(&prep, &cfg, kind)?;
            let name = serde_json::to_value(kind).expect("serializable");
            let path = out.join(format!("sweep_{}.json", name.as_str().unwrap_or("sweep")));
            write_json(&path, &report)?;
            Ok(json!({ "report": path_str(&path), "points": report.points }))
        }
        Command::Report => {
            let prep = prepared(&cfg, out)?;
            let report = run_table(&prep, &cfg)?;
            let path = out.join("report.json");
            write_json(&path, &report)?;
            Ok(json!({ "report": path_str(&path), "config_hash": report.header.config_hash, "rows": report.rows }))
        }
    }
}
