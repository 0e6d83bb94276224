//! `migpack`: place, compact and reconfigure MIG workloads from JSON files,
//! evaluate plans, and run seeded experiments.
//!
//! Exit codes: 0 on success, 1 for invalid input, 2 when an internal
//! invariant breaks. Errors are printed to stderr as one JSON object.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use migpack::format;
use migpack::harness::{self, Approach, TestCase, UseCase};
use migpack::metrics;
use migpack::{Error, Result};

#[derive(Parser)]
#[command(name = "migpack", version, about = "MIG-aware GPU workload placement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Place new workloads onto a cluster.
    Place {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        workloads: PathBuf,
        #[arg(long, value_enum)]
        approach: PlaceApproach,
        /// Solver time limit in seconds.
        #[arg(long, default_value_t = 30.0)]
        time_limit: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pack existing workloads onto fewer GPUs without repartitioning.
    Compact {
        #[arg(long)]
        state: PathBuf,
        #[arg(long, value_enum)]
        approach: RepackApproach,
        #[arg(long, default_value_t = 30.0)]
        time_limit: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repartition GPUs to pack existing workloads onto fewer GPUs.
    Reconfigure {
        #[arg(long)]
        state: PathBuf,
        #[arg(long, value_enum)]
        approach: RepackApproach,
        #[arg(long, default_value_t = 30.0)]
        time_limit: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the metrics of a plan against its initial state.
    Evaluate {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        plan: PathBuf,
    },
    /// Write seeded random test cases.
    Generate {
        #[arg(long)]
        gpus: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum)]
        use_case: UseCaseArg,
        #[arg(long, default_value_t = 1)]
        cases: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run approaches over a directory of test cases and summarize.
    Experiment {
        #[arg(long)]
        cases: PathBuf,
        /// Comma-separated list, e.g. `first-fit,load-balanced,rule,mip`.
        #[arg(long, value_delimiter = ',', default_value = "first-fit,load-balanced,rule,mip,joint-mip")]
        approaches: Vec<String>,
        #[arg(long, default_value_t = 30.0)]
        time_limit: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PlaceApproach {
    Rule,
    Mip,
    FirstFit,
    LoadBalanced,
    JointMip,
}

impl From<PlaceApproach> for Approach {
    fn from(a: PlaceApproach) -> Self {
        match a {
            PlaceApproach::Rule => Approach::RuleBased,
            PlaceApproach::Mip => Approach::Mip,
            PlaceApproach::FirstFit => Approach::FirstFit,
            PlaceApproach::LoadBalanced => Approach::LoadBalanced,
            PlaceApproach::JointMip => Approach::JointMip,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RepackApproach {
    Rule,
    Mip,
}

impl From<RepackApproach> for Approach {
    fn from(a: RepackApproach) -> Self {
        match a {
            RepackApproach::Rule => Approach::RuleBased,
            RepackApproach::Mip => Approach::Mip,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum UseCaseArg {
    Initial,
    Compaction,
    Reconfiguration,
}

impl From<UseCaseArg> for UseCase {
    fn from(u: UseCaseArg) -> Self {
        match u {
            UseCaseArg::Initial => UseCase::Initial,
            UseCaseArg::Compaction => UseCase::Compaction,
            UseCaseArg::Reconfiguration => UseCase::Reconfiguration,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_error("usage", &e.to_string());
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(e.kind(), &e.to_string());
            ExitCode::from(if e.is_internal() { 2 } else { 1 })
        }
    }
}

fn report_error(kind: &str, message: &str) {
    let body = serde_json::json!({ "error": kind, "message": message.trim_end() });
    eprintln!("{body}");
}

fn time_limit(seconds: f64) -> Result<Duration> {
    Duration::try_from_secs_f64(seconds)
        .map_err(|_| Error::InvalidInput(format!("time limit must be a nonnegative number of seconds, got {seconds}")))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => Ok(fs::write(path, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_plan(case: TestCase, approach: Approach, seconds: f64, out: Option<&Path>) -> Result<()> {
    let plan = harness::run_approach(&case, approach, time_limit(seconds)?)?;
    write_output(out, &format::plan_to_json(&plan)?)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Place {
            state,
            workloads,
            approach,
            time_limit,
            out,
        } => {
            let case = TestCase {
                seed: 0,
                use_case: UseCase::Initial,
                cluster: format::state_from_json(&read(&state)?)?,
                new_workloads: format::workloads_from_json(&read(&workloads)?)?,
            };
            run_plan(case, approach.into(), time_limit, out.as_deref())
        }
        Command::Compact {
            state,
            approach,
            time_limit,
            out,
        } => {
            let case = repack_case(&state, UseCase::Compaction)?;
            run_plan(case, approach.into(), time_limit, out.as_deref())
        }
        Command::Reconfigure {
            state,
            approach,
            time_limit,
            out,
        } => {
            let case = repack_case(&state, UseCase::Reconfiguration)?;
            run_plan(case, approach.into(), time_limit, out.as_deref())
        }
        Command::Evaluate { state, plan } => {
            let initial = format::state_from_json(&read(&state)?)?;
            let plan = format::plan_from_json(&read(&plan)?)?;
            let report = metrics::evaluate(&initial, &plan);
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Generate {
            gpus,
            seed,
            use_case,
            cases,
            out,
        } => {
            fs::create_dir_all(&out)?;
            for case in harness::generate_cases(gpus, seed, use_case.into(), cases)? {
                let path = out.join(format!("case-{:06}.json", case.seed));
                fs::write(path, format::test_case_to_json(&case)?)?;
            }
            Ok(())
        }
        Command::Experiment {
            cases,
            approaches,
            time_limit: seconds,
            out,
        } => {
            let approaches: Vec<Approach> = approaches
                .iter()
                .map(|a| a.trim().parse())
                .collect::<Result<_>>()?;
            let cases = load_cases(&cases)?;
            let report = harness::run_experiment(&cases, &approaches, time_limit(seconds)?)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("reports.json"), serde_json::to_string_pretty(&report)? + "\n")?;
            fs::write(out.join("summary.json"), serde_json::to_string_pretty(&report.summary)? + "\n")?;
            fs::write(out.join("summary.csv"), metrics::summary_csv(&report.summary)?)?;
            Ok(())
        }
    }
}

fn repack_case(state: &Path, use_case: UseCase) -> Result<TestCase> {
    Ok(TestCase {
        seed: 0,
        use_case,
        cluster: format::state_from_json(&read(state)?)?,
        new_workloads: Vec::new(),
    })
}

/// Test-case files of a directory, in file-name order.
fn load_cases(dir: &Path) -> Result<Vec<TestCase>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidInput(format!("no test cases in {}", dir.display())));
    }
    paths.iter().map(|p| format::test_case_from_json(&read(p)?)).collect()
}
