//! Command-line front end for the placement experiments.

pub mod config;
mod plot;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ecosched_core::experiment::{
    compare_strategies, render_comparison, render_table, run_traced, write_runs_csv,
    ExperimentReport,
};
use ecosched_core::{Denominator, StrategyKind};

pub use config::{parse_scenario_file, parse_scenario_str, Scenario, ScenarioFile};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot read {}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } | CliError::Parse(_) | CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "ecosched",
    version,
    about = "Energy-aware pod placement experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every configured strategy and write reports, CSV and plots.
    Run(RunArgs),
    /// Like `run`, plus a side-by-side comparison; needs two or more strategies.
    Compare(RunArgs),
    /// Parse and validate scenario files without running them.
    Validate {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        /// Print the fully resolved form of each file.
        #[arg(long)]
        explain: bool,
    },
    /// Run once per strategy and write the full counter history.
    DumpMetrics(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    pub scenario: PathBuf,
    /// Base seed; run r uses seed + r.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub runs: Option<u32>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the file's scheduler list; repeatable.
    #[arg(long = "strategy", value_parser = parse_strategy)]
    pub strategies: Vec<StrategyKind>,
    #[arg(long, value_parser = parse_denominator)]
    pub denominator: Option<Denominator>,
    /// Also write the counter history of run 0 for each strategy.
    #[arg(long)]
    pub dump_metrics: bool,
    /// `dotted.key=value` override applied to the file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

fn parse_strategy(s: &str) -> Result<StrategyKind, String> {
    s.parse()
}

fn parse_denominator(s: &str) -> Result<Denominator, String> {
    match s {
        "s1" => Ok(Denominator::S1),
        "s2" => Ok(Denominator::S2),
        _ => Err(format!("expected s1 or s2, got `{s}`")),
    }
}

impl RunArgs {
    pub fn load(&self) -> Result<Scenario, CliError> {
        let mut s = parse_scenario_file(&self.scenario, &self.overrides)?;
        if let Some(seed) = self.seed {
            s.setup.simulation.seed = seed;
        }
        if let Some(runs) = self.runs {
            if runs == 0 {
                return Err(CliError::Validation("--runs: must be >= 1".into()));
            }
            s.runs = runs;
        }
        if !self.strategies.is_empty() {
            s.strategies.clear();
            for k in &self.strategies {
                if !s.strategies.contains(k) {
                    s.strategies.push(*k);
                }
            }
        }
        if let Some(d) = self.denominator {
            s.setup.protocol.denominator = d;
        }
        Ok(s)
    }
}

/// Paths written by one invocation, in write order.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

impl Artifacts {
    fn write(&mut self, path: PathBuf, contents: &[u8]) -> Result<(), CliError> {
        fs::write(&path, contents)
            .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))?;
        self.files.push(path);
        Ok(())
    }
}

fn strategy_report(report: &ExperimentReport, index: usize) -> ExperimentReport {
    ExperimentReport {
        strategies: vec![report.strategies[index].clone()],
        ..report.clone()
    }
}

/// Runs the scenario and writes all artifacts from this thread once every
/// run has finished.
pub fn run_command(
    args: &RunArgs,
    compare: bool,
) -> Result<(ExperimentReport, Artifacts), CliError> {
    let scenario = args.load()?;
    if compare && scenario.strategies.len() < 2 {
        return Err(CliError::Validation(format!(
            "compare needs at least two strategies, got {}",
            scenario.strategies.len()
        )));
    }
    let report = compare_strategies(
        &scenario.setup,
        &scenario.strategies,
        scenario.runs,
        scenario.base_seed(),
    )
    .map_err(runtime)?;

    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Runtime(format!("creating {}: {e}", args.out.display())))?;
    let label = scenario.label();
    let out = |name: String| args.out.join(name);
    let mut artifacts = Artifacts::default();

    let mut csv = Vec::new();
    write_runs_csv([&report], &mut csv).map_err(runtime)?;
    artifacts.write(out(format!("{label}_runs.csv")), &csv)?;

    for (i, s) in report.strategies.iter().enumerate() {
        let table = render_table(&strategy_report(&report, i)).map_err(runtime)?;
        artifacts.write(
            out(format!("{label}_{}_report.txt", s.strategy)),
            table.as_bytes(),
        )?;
        let svg = plot::phase_energy_svg(&format!("{label} {}", s.strategy), s);
        let path = out(format!("{label}_{}_phase_energy.svg", s.strategy));
        // Plots are best effort.
        match fs::write(&path, svg) {
            Ok(()) => artifacts.files.push(path),
            Err(e) => artifacts
                .warnings
                .push(format!("plot {} not written: {e}", path.display())),
        }
    }
    if compare {
        let text = format!(
            "{}\n{}",
            render_table(&report).map_err(runtime)?,
            render_comparison(&report).map_err(runtime)?
        );
        artifacts.write(out(format!("{label}_comparison.txt")), text.as_bytes())?;
    }
    if args.dump_metrics {
        dump_metrics(&scenario, &args.out, &mut artifacts, &mut Vec::new())?;
    }
    Ok((report, artifacts))
}

/// Writes `<label>_<strategy>_metrics.csv` for run 0 of each strategy and
/// appends a score trace per strategy to `trace`.
pub fn dump_metrics(
    scenario: &Scenario,
    out_dir: &Path,
    artifacts: &mut Artifacts,
    trace: &mut Vec<String>,
) -> Result<(), CliError> {
    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Runtime(format!("creating {}: {e}", out_dir.display())))?;
    let label = scenario.label();
    for &strategy in &scenario.strategies {
        let (result, store) =
            run_traced(&scenario.setup, strategy, 0, scenario.base_seed()).map_err(runtime)?;
        let mut csv = Vec::new();
        store.write_csv(&mut csv).map_err(runtime)?;
        artifacts.write(
            out_dir.join(format!("{label}_{strategy}_metrics.csv")),
            &csv,
        )?;
        let scores: Vec<String> = result
            .scores
            .iter()
            .map(|(n, s)| format!("{n}={s:.6}"))
            .collect();
        trace.push(format!(
            "{label} {strategy} seed {}: scores [{}] -> {} (e_s1 {:.3} J, e_s2 {:.3} J, ei {:.3}%)",
            result.seed,
            scores.join(", "),
            result.chosen_node,
            result.e_s1,
            result.e_s2,
            result.ei
        ));
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    let print = |out: &mut std::io::StdoutLock, s: &str| {
        let _ = out.write_all(s.as_bytes());
    };
    match cli.command {
        Command::Run(args) => {
            let (report, artifacts) = run_command(&args, false)?;
            print(&mut stdout, &render_table(&report).map_err(runtime)?);
            report_artifacts(&mut stdout, &artifacts);
        }
        Command::Compare(args) => {
            let (report, artifacts) = run_command(&args, true)?;
            print(&mut stdout, &render_table(&report).map_err(runtime)?);
            print(&mut stdout, "\n");
            print(&mut stdout, &render_comparison(&report).map_err(runtime)?);
            report_artifacts(&mut stdout, &artifacts);
        }
        Command::Validate { scenarios, explain } => {
            let mut first_error = None;
            for path in &scenarios {
                match parse_scenario_file(path, &[]) {
                    Ok(s) => {
                        print(
                            &mut stdout,
                            &format!(
                                "ok {}: {} with {} run(s) of {}\n",
                                path.display(),
                                s.label(),
                                s.runs,
                                s.strategies
                                    .iter()
                                    .map(|k| k.as_str())
                                    .collect::<Vec<_>>()
                                    .join(", ")
                            ),
                        );
                        if explain {
                            print(&mut stdout, &ScenarioFile::from_scenario(&s).to_toml()?);
                        }
                    }
                    Err(e) => {
                        eprintln!("error {}: {e}", path.display());
                        first_error.get_or_insert(e);
                    }
                }
            }
            if let Some(e) = first_error {
                return Err(e);
            }
        }
        Command::DumpMetrics(args) => {
            let scenario = args.load()?;
            let mut artifacts = Artifacts::default();
            let mut trace = Vec::new();
            dump_metrics(&scenario, &args.out, &mut artifacts, &mut trace)?;
            for line in trace {
                print(&mut stdout, &format!("{line}\n"));
            }
            report_artifacts(&mut stdout, &artifacts);
        }
    }
    Ok(())
}

fn report_artifacts(out: &mut std::io::StdoutLock, artifacts: &Artifacts) {
    for f in &artifacts.files {
        let _ = writeln!(out, "wrote {}", f.display());
    }
    for w in &artifacts.warnings {
        eprintln!("warning: {w}");
    }
}

/// Parses `args` and executes the command, mapping failures to exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "ecosched",
            "compare",
            "s.toml",
            "--strategy",
            "greenness_eq1",
            "--strategy",
            "k8s-least-allocated",
            "--denominator",
            "s1",
            "--runs",
            "2",
            "--set",
            "workload.rps=3",
        ])
        .unwrap();
        let Command::Compare(args) = cli.command else {
            panic!()
        };
        assert_eq!(
            args.strategies,
            [StrategyKind::GreennessEq1, StrategyKind::LeastAllocated]
        );
        assert_eq!(args.denominator, Some(Denominator::S1));
        assert_eq!(args.runs, Some(2));
        assert_eq!(args.overrides, ["workload.rps=3"]);
        assert!(Cli::try_parse_from(["ecosched", "run", "s.toml", "--denominator", "s3"]).is_err());
        assert!(
            Cli::try_parse_from(["ecosched", "run", "s.toml", "--strategy", "random"]).is_err()
        );
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Parse(String::new()).exit_code(), 2);
        assert_eq!(CliError::Validation(String::new()).exit_code(), 2);
        assert_eq!(CliError::Runtime(String::new()).exit_code(), 3);
    }
}
