//! The `claw` command line.
//!
//! Exit status: 0 clean, 1 findings (violations, denials, leaks), 2 usage or
//! input errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::compile::{compile, export_table, import_table, Compiled};
use crate::lang::parse;
use crate::model::SecurityModel;
use crate::monitor::{explain, parse_trace, replay, Format, ReplayOptions, Report, Update};
use crate::validate::{emit_smtlib, validate, Validation};

#[derive(Parser, Debug)]
#[command(name = "claw", version, about = "Validate, compile and enforce agent security policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a policy against its builtin, static and leak rules.
    Validate {
        policy: PathBuf,
        /// Also write the SMT-LIB2 encoding here.
        #[arg(long, value_name = "OUT")]
        smtlib: Option<PathBuf>,
    },
    /// Compile a policy into a rule table file.
    Compile {
        policy: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Write the table even if validation fails.
        #[arg(long)]
        force: bool,
        /// Version stamped on every scope table.
        #[arg(long, default_value_t = 1)]
        version: u64,
    },
    /// Replay a syscall trace through the monitor.
    Replay {
        #[command(flatten)]
        source: Source,
        trace: PathBuf,
        #[command(flatten)]
        run: RunFlags,
        #[arg(long, value_enum, default_value_t = FormatArg::Text)]
        format: FormatArg,
    },
    /// Replay a trace and show why one event was decided as it was.
    Explain {
        #[command(flatten)]
        source: Source,
        trace: PathBuf,
        #[command(flatten)]
        run: RunFlags,
        #[arg(long)]
        seq: u64,
    },
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct Source {
    /// Policy file, compiled on the fly.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Table file written by `claw compile`.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunFlags {
    /// Swap in the tables of FILE from sequence number SEQ on.
    #[arg(long = "update", value_name = "SEQ:FILE")]
    updates: Vec<String>,
    /// Judge Monitor-scope processes as well.
    #[arg(long)]
    enforce_monitor: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FormatArg {
    Text,
    Tagged,
}

/// An error that ends the command with exit status 2.
struct InputError(String);

fn read(path: &Path) -> Result<String, InputError> {
    fs::read_to_string(path).map_err(|e| InputError(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<SecurityModel, InputError> {
    let text = read(path)?;
    parse(&text).map_err(|errs| {
        let lines: Vec<String> = errs.0.iter().map(|e| format!("{}:{e}", path.display())).collect();
        InputError(lines.join("\n"))
    })
}

fn compile_model(path: &Path, model: &SecurityModel) -> Result<Compiled, InputError> {
    compile(model).map_err(|e| InputError(format!("{}: {e}", path.display())))
}

fn load_table(path: &Path) -> Result<Compiled, InputError> {
    import_table(&read(path)?).map_err(|e| InputError(format!("{}:{e}", path.display())))
}

fn check(model: &SecurityModel, path: &Path) -> Result<Validation, InputError> {
    validate(model).map_err(|e| InputError(format!("{}: {e}", path.display())))
}

fn print_findings(v: &Validation, out: &mut dyn Write) -> std::io::Result<()> {
    for violation in &v.violations {
        writeln!(out, "violation {violation}")?;
    }
    for leak in &v.leaks {
        writeln!(out, "leak {leak}")?;
    }
    writeln!(
        out,
        "{} violations, {} unguarded leaks",
        v.violations.len(),
        v.unguarded_leaks().count()
    )
}

fn load_source(source: &Source) -> Result<Compiled, InputError> {
    match (&source.policy, &source.table) {
        (Some(p), _) => compile_model(p, &load_model(p)?),
        (None, Some(t)) => load_table(t),
        (None, None) => Err(InputError("one of --policy or --table is required".into())),
    }
}

fn load_updates(specs: &[String]) -> Result<Vec<Update>, InputError> {
    let mut out = Vec::new();
    for spec in specs {
        let (seq, file) = spec
            .split_once(':')
            .ok_or_else(|| InputError(format!("--update expects SEQ:FILE, found `{spec}`")))?;
        let at_seq: u64 = seq
            .parse()
            .map_err(|_| InputError(format!("--update sequence number `{seq}` is not a number")))?;
        let compiled = load_table(Path::new(file))?;
        out.extend(compiled.tables.into_iter().map(|table| Update { at_seq, table }));
    }
    Ok(out)
}

fn run_replay(source: &Source, trace: &Path, run: &RunFlags) -> Result<Report, InputError> {
    let compiled = load_source(source)?;
    let trace_text = read(trace)?;
    let parsed = parse_trace(&trace_text).map_err(|e| InputError(format!("{}:{e}", trace.display())))?;
    let updates = load_updates(&run.updates)?;
    let options = ReplayOptions {
        enforce_monitor: run.enforce_monitor,
    };
    Ok(replay(&compiled, &parsed, updates, options))
}

fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, InputError> {
    let io = |e: std::io::Error| InputError(e.to_string());
    match cli.command {
        Command::Validate { policy, smtlib } => {
            let model = load_model(&policy)?;
            let v = check(&model, &policy)?;
            if let Some(path) = smtlib {
                fs::write(&path, emit_smtlib(&model)).map_err(|e| InputError(format!("{}: {e}", path.display())))?;
            }
            print_findings(&v, out).map_err(io)?;
            Ok(if v.is_clean() { 0 } else { 1 })
        }
        Command::Compile {
            policy,
            out: target,
            force,
            version,
        } => {
            let model = load_model(&policy)?;
            let v = check(&model, &policy)?;
            if !v.is_clean() && !force {
                print_findings(&v, out).map_err(io)?;
                writeln!(err, "refusing to compile {}: validation failed (use --force)", policy.display()).map_err(io)?;
                return Ok(1);
            }
            let compiled = compile_model(&policy, &model)?.with_version(version);
            let mut text = export_table(&compiled);
            if !v.is_clean() {
                let banner = format!(
                    "# WARNING: compiled with --force despite {} violations and {} unguarded leaks\n",
                    v.violations.len(),
                    v.unguarded_leaks().count()
                );
                let at = text.find('\n').map_or(text.len(), |i| i + 1);
                text.insert_str(at, &banner);
                writeln!(err, "warning: {}", banner.trim_start_matches("# WARNING: ").trim_end()).map_err(io)?;
            }
            fs::write(&target, &text).map_err(|e| InputError(format!("{}: {e}", target.display())))?;
            let rules: usize = compiled.tables.iter().map(|t| t.rule_count()).sum();
            writeln!(out, "wrote {} ({rules} rules, {} monitors)", target.display(), compiled.specs.len()).map_err(io)?;
            Ok(0)
        }
        Command::Replay {
            source,
            trace,
            run,
            format,
        } => {
            let report = run_replay(&source, &trace, &run)?;
            let format = match format {
                FormatArg::Text => Format::Text,
                FormatArg::Tagged => Format::Tagged,
            };
            out.write_all(report.render(format).as_bytes()).map_err(io)?;
            Ok(if report.has_findings() { 1 } else { 0 })
        }
        Command::Explain { source, trace, run, seq } => {
            let report = run_replay(&source, &trace, &run)?;
            let chain = explain(&report, seq).map_err(|e| InputError(e.to_string()))?;
            write!(out, "{chain}").map_err(io)?;
            Ok(0)
        }
    }
}

/// Runs the command line; returns the exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli, out, err) {
        Ok(code) => code,
        Err(InputError(message)) => {
            let _ = writeln!(err, "error: {message}");
            2
        }
    }
}
