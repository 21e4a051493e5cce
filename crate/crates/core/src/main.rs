use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use marketsim::config::{read_table, ExperimentConfig};
use marketsim::runner::{ab_dirs, load_trial, run_ab, run_experiment, verify_run, RunError};
use marketsim::study::{event_study, outcomes_csv, profit_summary, StudyParams};
use marketsim::time::parse_duration;

#[derive(Parser)]
#[command(name = "marketsim", version, about = "Deterministic discrete-event market simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulation start, "HH:MM:SS" on the configured date or nanoseconds.
    #[arg(long)]
    start: Option<String>,
    #[arg(long)]
    stop: Option<String>,
    /// Output directory for logs, archives and the manifest.
    #[arg(long)]
    log_dir: Option<PathBuf>,
    /// Configuration override, e.g. `IMPACT.greed=0.5` or `BACKGROUND.count=50`. Repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn overrides(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(seed) = self.seed {
            out.push(format!("seed={seed}"));
        }
        if let Some(start) = &self.start {
            out.push(format!("start={start}"));
        }
        if let Some(stop) = &self.stop {
            out.push(format!("stop={stop}"));
        }
        out.extend(self.set.iter().cloned());
        out
    }

    fn output_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.log_dir.clone().or_else(|| cfg.logging.log_dir.clone()).unwrap_or_else(|| {
            let stem = self.config.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
            PathBuf::from("runs").join(format!("{stem}_seed{}", cfg.seed))
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and archive its artifacts.
    Run(RunArgs),
    /// Paired control/treatment runs differing by one agent.
    Ab {
        #[command(flatten)]
        run: RunArgs,
        /// TOML holding exactly one [[agents]] entry to add or modify.
        #[arg(long)]
        patch: PathBuf,
    },
    /// Event study across archived runs that contain an impact agent.
    Study {
        /// Glob matching run directories.
        #[arg(long)]
        runs: String,
        #[arg(long, default_value = "10m")]
        pre: String,
        #[arg(long, default_value = "30m")]
        post: String,
        #[arg(long, default_value = "30s")]
        bucket: String,
        /// Trailing-mean window over buckets for the smoothed curve.
        #[arg(long, default_value_t = 1)]
        smoothing: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check artifact hashes against a run manifest.
    Verify {
        dir: PathBuf,
        /// Also re-execute the embedded configuration and compare outputs.
        #[arg(long)]
        rerun: bool,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn duration(text: &str) -> Result<i64, RunError> {
    parse_duration(text).map_err(|e| RunError::Artifact(format!("{text}: {e}")))
}

fn write(path: &Path, content: &str) -> Result<(), RunError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| RunError::Io { path: parent.display().to_string(), reason: e.to_string() })?;
    }
    std::fs::write(path, content).map_err(|e| RunError::Io { path: path.display().to_string(), reason: e.to_string() })
}

fn dispatch(command: Command) -> Result<bool, RunError> {
    match command {
        Command::Run(args) => {
            let cfg = ExperimentConfig::load(&args.config, &args.overrides())?;
            let dir = args.output_dir(&cfg);
            let out = run_experiment(&cfg, false)?;
            out.write_to(&dir)?;
            let s = &out.manifest.stats;
            println!(
                "{}: {} agents, {} events, {} messages, {} artifacts",
                dir.display(),
                out.manifest.agents.len(),
                s.events_delivered,
                s.messages_sent,
                out.manifest.artifacts.len()
            );
            Ok(true)
        }
        Command::Ab { run, patch } => {
            let doc = read_table(&run.config)?;
            let patch_doc = read_table(&patch)?;
            let base = run.config.parent().unwrap_or(Path::new("."));
            let ab = run_ab(&doc, &patch_doc, &run.overrides(), base)?;
            let root = run.output_dir(&ab.control_config);
            let (c_dir, t_dir) = ab_dirs(&root);
            ab.control.write_to(&c_dir)?;
            ab.treatment.write_to(&t_dir)?;
            let summary = serde_json::to_string_pretty(&ab.summary).expect("summary serializes");
            write(&root.join("ab_summary.json"), &(summary.clone() + "\n"))?;
            println!("{summary}");
            Ok(ab.summary.pass)
        }
        Command::Study { runs, pre, post, bucket, smoothing, out } => {
            let params = StudyParams {
                pre_ns: duration(&pre)?,
                post_ns: duration(&post)?,
                bucket_ns: duration(&bucket)?,
                smoothing,
            };
            let paths = glob::glob(&runs).map_err(|e| RunError::Artifact(format!("bad glob {runs}: {e}")))?;
            let mut trials = Vec::new();
            for entry in paths {
                let dir = entry.map_err(|e| RunError::Artifact(e.to_string()))?;
                if dir.join(marketsim::runner::MANIFEST_FILE).is_file() {
                    trials.push(load_trial(&dir)?);
                }
            }
            if trials.is_empty() {
                return Err(RunError::Artifact(format!("no run directories match {runs}")));
            }
            let result = event_study(&trials, params).map_err(|e| RunError::Artifact(e.to_string()))?;
            write(&out, &result.to_csv())?;
            let (labels, outcomes): (Vec<String>, Vec<_>) =
                trials.iter().filter_map(|t| t.impact.map(|o| (t.label.clone(), o))).unzip();
            let trials_path = out
                .with_file_name(format!("{}_trials.csv", out.file_stem().and_then(|s| s.to_str()).unwrap_or("study")));
            write(&trials_path, &outcomes_csv(&labels, &outcomes))?;
            let summary = profit_summary(&outcomes);
            println!(
                "{} trials used, {} excluded; wrote {} and {}",
                result.curves.len(),
                result.excluded.len(),
                out.display(),
                trials_path.display()
            );
            for label in &result.excluded {
                println!("excluded (no trades in window): {label}");
            }
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            Ok(true)
        }
        Command::Verify { dir, rerun } => {
            let report = verify_run(&dir, rerun)?;
            for p in &report.problems {
                println!("MISMATCH {p}");
            }
            println!("{} artifacts checked, {} problem(s)", report.checked, report.problems.len());
            Ok(report.ok())
        }
    }
}
