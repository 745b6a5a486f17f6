//! The `qif` command-line driver.
//!
//! Exit codes: 0 success, 1 unreadable or unparsable input, 2 evaluation,
//! budget or oracle failure, 3 bad scheduler, 64 bad command line.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::dist::{format_ratio, ratio_string, Rational, SecretDist};
use crate::error::Error;
use crate::lang::{parse, ProgramDecl};
use crate::leakage::LeakageReport;
use crate::oracle::{compare_with_pks, oracle_enumerate};
use crate::pks::{build_pks, to_dot, Pks};
use crate::sched::SchedulerPolicy;
use crate::semantics::DEFAULT_BUDGET;

pub const EXIT_INPUT: i32 = 1;
pub const EXIT_SEMANTIC: i32 = 2;
pub const EXIT_SCHEDULER: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

/// Largest secret domain the oracle check will enumerate.
pub const ORACLE_MAX_SECRETS: u64 = 1 << 12;

#[derive(Debug, Parser)]
#[command(name = "qif", version, about = "Scheduler-aware leakage analysis for small concurrent programs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute trace leakage and the comparison measures
    Analyze(Common),
    /// List every trace with its probability and final belief
    Traces(Common),
    /// Render the Kripke structure as Graphviz DOT
    ExportDot(Common),
    /// Check the Kripke structure against the brute-force oracle
    OracleCheck {
        #[command(flatten)]
        common: Common,
        /// Check this exported structure instead of building one
        #[arg(long, value_name = "PATH")]
        pks: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Program source file
    pub program: PathBuf,
    /// uniform, priority:L,R or table:PATH
    #[arg(long, default_value = "uniform")]
    pub scheduler: String,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Maximum number of steps per trace
    #[arg(long, env = "QIF_BUDGET", default_value_t = DEFAULT_BUDGET)]
    pub budget: usize,
    /// Write output here instead of stdout
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Parse(_) => EXIT_INPUT,
            Error::Scheduler(_) | Error::NotEnabled { .. } => EXIT_SCHEDULER,
            _ => EXIT_SEMANTIC,
        };
        Failure { code, message: e.to_string() }
    }
}

fn fail(code: i32, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

/// Runs the command line `args` (including the program name) and returns
/// the exit status.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let text = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = sink.write_all(text.as_bytes());
            return code;
        }
    };
    match dispatch(&cli.command, stdout) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(stderr, "qif: {}", f.message);
            f.code
        }
    }
}

fn load_program(path: &Path) -> Result<ProgramDecl, Failure> {
    let text =
        std::fs::read_to_string(path).map_err(|e| fail(EXIT_INPUT, format!("cannot read {}: {e}", path.display())))?;
    parse(&text).map_err(|e| fail(EXIT_INPUT, format!("{}:{e}", path.display())))
}

fn program_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "program".into())
}

fn emit(common: &Common, text: &str, stdout: &mut dyn Write) -> Result<(), Failure> {
    match &common.out {
        Some(path) => {
            std::fs::write(path, text).map_err(|e| fail(EXIT_INPUT, format!("cannot write {}: {e}", path.display())))
        }
        None => stdout.write_all(text.as_bytes()).map_err(|e| fail(EXIT_INPUT, e.to_string())),
    }
}

fn prepare(common: &Common) -> Result<(ProgramDecl, SchedulerPolicy), Failure> {
    let prog = load_program(&common.program)?;
    let policy = SchedulerPolicy::from_cli(&common.scheduler)?;
    if common.budget == 0 {
        return Err(fail(EXIT_SEMANTIC, "budget must be at least 1"));
    }
    Ok((prog, policy))
}

#[derive(Serialize)]
struct TraceListing {
    id: usize,
    #[serde(with = "ratio_string")]
    probability: Rational,
    o_sequence: Vec<u64>,
    steps: Vec<String>,
    final_posterior: SecretDist,
}

fn listing(pks: &Pks) -> Vec<TraceListing> {
    pks.traces()
        .iter()
        .enumerate()
        .map(|(id, t)| TraceListing {
            id,
            probability: t.probability.clone(),
            o_sequence: t.o_sequence.clone(),
            steps: pks.trace_commands(t).into_iter().map(|(th, c)| format!("t{th}: {c}")).collect(),
            final_posterior: pks.final_posterior(t).clone(),
        })
        .collect()
}

fn dispatch(command: &Command, stdout: &mut dyn Write) -> Result<i32, Failure> {
    match command {
        Command::Analyze(common) => {
            let (prog, policy) = prepare(common)?;
            let pks = build_pks(&prog, &policy, common.budget)?;
            let report = LeakageReport::new(&pks, &program_name(&common.program), &policy.name())?;
            let text = match common.format {
                Format::Text => report.to_text(),
                Format::Json => report.to_json() + "\n",
            };
            emit(common, &text, stdout)?;
        }
        Command::Traces(common) => {
            let (prog, policy) = prepare(common)?;
            let pks = build_pks(&prog, &policy, common.budget)?;
            let rows = listing(&pks);
            let text = match common.format {
                Format::Json => serde_json::to_string_pretty(&rows).expect("serializable") + "\n",
                Format::Text => {
                    let mut out = String::new();
                    for r in &rows {
                        out.push_str(&format!(
                            "#{} p={} O={:?}\n  {}\n  posterior {}\n",
                            r.id,
                            format_ratio(&r.probability),
                            r.o_sequence,
                            r.steps.join("; "),
                            r.final_posterior
                        ));
                    }
                    out
                }
            };
            emit(common, &text, stdout)?;
        }
        Command::ExportDot(common) => {
            let (prog, policy) = prepare(common)?;
            let pks = build_pks(&prog, &policy, common.budget)?;
            let text = match common.format {
                Format::Text => to_dot(&pks),
                Format::Json => pks.to_json() + "\n",
            };
            emit(common, &text, stdout)?;
        }
        Command::OracleCheck { common, pks } => {
            let (prog, policy) = prepare(common)?;
            if prog.domain.size() > ORACLE_MAX_SECRETS {
                return Err(fail(EXIT_SEMANTIC, format!("oracle check is limited to {ORACLE_MAX_SECRETS} secrets")));
            }
            let structure = match pks {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| fail(EXIT_INPUT, format!("cannot read {}: {e}", path.display())))?;
                    Pks::from_json(&text)?
                }
                None => build_pks(&prog, &policy, common.budget)?,
            };
            let runs = oracle_enumerate(&prog, &policy, structure.prior(), common.budget)?;
            match compare_with_pks(&structure, &runs) {
                Ok(()) => {
                    let n = structure.traces().len();
                    emit(common, &format!("ok: {n} traces agree with {} oracle runs\n", runs.len()), stdout)?;
                }
                Err(diff) => {
                    emit(common, &diff, stdout)?;
                    return Err(fail(EXIT_SEMANTIC, "structure disagrees with the oracle"));
                }
            }
        }
    }
    Ok(0)
}
