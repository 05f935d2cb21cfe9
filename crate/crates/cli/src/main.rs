//! `nakasim`: run scenarios, verify stored traces, list presets.
//!
//! Exit status: 0 when every gate passes, 1 when a property violation is
//! witnessed, 2 on usage, configuration or I/O errors.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use nakasim_core::experiment::run_experiment_with_jobs;
use nakasim_core::scenario::{ResolvedVariant, ScenarioDoc};
use nakasim_core::verify::{
    bound_report, check_consistency, check_consistency_bruteforce, check_liveness, check_recovery_lemma, Verdict,
};
use nakasim_core::{presets, RunTrace};

const PROPERTIES: &[&str] = &["consistency", "consistency_bruteforce", "liveness", "recovery_lemma", "bounds"];

#[derive(Parser)]
#[command(name = "nakasim", version, about = "Round-based simulator for Nakamoto and Stubborn Nakamoto consensus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and evaluate its gates.
    Run(RunArgs),
    /// Re-run verifiers on stored JSONL traces.
    Verify(VerifyArgs),
    /// List the shipped presets.
    Presets {
        /// Print the named preset's TOML source.
        #[arg(long)]
        show: Option<String>,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// Scenario TOML file.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    scenario: Option<PathBuf>,
    /// Shipped preset name.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Trials per variant and sweep cell.
    #[arg(long)]
    trials: Option<u64>,
    /// Output directory for report.json and traces.
    #[arg(long, env = "NAKASIM_OUT", default_value = "nakasim-out")]
    out: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// `key=value` with a dotted key, e.g. `nodes.2.power=20`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Write one JSONL trace per trial under OUT/traces.
    #[arg(long)]
    traces: bool,
    /// Print verdicts only; write nothing to disk.
    #[arg(long, conflicts_with = "traces")]
    verify_only: bool,
}

#[derive(clap::Args)]
struct VerifyArgs {
    /// Trace files written by `nakasim run --traces`.
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    /// Property to check; repeatable. Defaults to consistency.
    #[arg(long = "property", short = 'p')]
    properties: Vec<String>,
    /// T_conf in rounds, for liveness.
    #[arg(long)]
    t_conf: Option<u64>,
    /// Only transactions issued at or after this round, for liveness.
    #[arg(long, default_value_t = 0)]
    since: u64,
    #[arg(long, default_value_t = 0.2)]
    epsilon: f64,
    /// Window length in rounds, for bounds.
    #[arg(long, default_value_t = 1000)]
    window: u64,
    /// Windows sampled per trace, for bounds.
    #[arg(long, default_value_t = 20)]
    windows_per_trace: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Presets { show } => cmd_presets(show),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_doc(args: &RunArgs) -> Result<ScenarioDoc> {
    let mut doc = match (&args.scenario, &args.preset) {
        (Some(path), _) => ScenarioDoc::from_path(path)?,
        (None, Some(name)) => presets::load(name)?,
        (None, None) => bail!("either --scenario or --preset is required"),
    };
    for o in &args.overrides {
        doc.apply_override(o)?;
    }
    if let Some(seed) = args.seed {
        doc.set("seed", (seed as i64).into())?;
    }
    if let Some(trials) = args.trials {
        doc.set("trials", (trials as i64).into())?;
    }
    Ok(doc)
}

fn file_label(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn cmd_run(args: RunArgs) -> Result<bool> {
    let doc = load_doc(&args)?;
    let trace_dir = args.out.join("traces");
    let write_trace = |v: &ResolvedVariant, t: &RunTrace| -> nakasim_core::Result<()> {
        let dir = trace_dir.join(file_label(&v.label));
        fs::create_dir_all(&dir)?;
        let file = fs::File::create(dir.join(format!("trial-{:05}.jsonl", t.header.trial)))?;
        t.write_jsonl(std::io::BufWriter::new(file))
    };
    let sink: Option<&nakasim_core::experiment::TraceSink<'_>> = if args.traces { Some(&write_trace) } else { None };
    let report = run_experiment_with_jobs(&doc, args.jobs, sink)?;
    print!("{}", report.summary());
    if !args.verify_only {
        fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
        let path = args.out.join("report.json");
        fs::write(&path, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing {}", path.display()))?;
        println!("report written to {}", path.display());
    }
    Ok(report.pass)
}

fn read_trace(path: &Path) -> Result<RunTrace> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    RunTrace::read_jsonl(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn print_verdict(path: &Path, v: &Verdict) -> Result<()> {
    println!("{} {}", path.display(), serde_json::to_string(v)?);
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<bool> {
    let props = if args.properties.is_empty() { vec!["consistency".to_string()] } else { args.properties.clone() };
    for p in &props {
        if !PROPERTIES.contains(&p.as_str()) {
            bail!("unknown property {p:?}; known properties: {}", PROPERTIES.join(", "));
        }
    }
    if props.iter().any(|p| p == "liveness") && args.t_conf.is_none() {
        bail!("liveness needs --t-conf");
    }
    let traces: Vec<(PathBuf, RunTrace)> =
        args.traces.iter().map(|p| Ok((p.clone(), read_trace(p)?))).collect::<Result<_>>()?;
    let mut pass = true;
    for (path, trace) in &traces {
        for p in &props {
            let v = match p.as_str() {
                "consistency" => check_consistency(trace),
                "consistency_bruteforce" => check_consistency_bruteforce(trace),
                "liveness" => check_liveness(trace, args.t_conf.expect("checked above"), args.since)?,
                "recovery_lemma" => check_recovery_lemma(trace),
                _ => continue,
            };
            pass &= v.pass;
            print_verdict(path, &v)?;
        }
    }
    if props.iter().any(|p| p == "bounds") {
        let all: Vec<RunTrace> = traces.into_iter().map(|(_, t)| t).collect();
        let r = bound_report(&all, args.epsilon, args.window, args.windows_per_trace, 0);
        println!("bounds {}", serde_json::to_string(&r)?);
    }
    Ok(pass)
}

fn cmd_presets(show: Option<String>) -> Result<bool> {
    if let Some(name) = show {
        match presets::source(&name) {
            Some(src) => print!("{src}"),
            None => bail!("unknown preset {name:?}; run `nakasim presets` for the list"),
        }
        return Ok(true);
    }
    for name in presets::names() {
        let s = presets::load(name)?.scenario()?;
        let text = s.description.split_whitespace().collect::<Vec<_>>().join(" ");
        let first = text.split(". ").next().unwrap_or_default().trim_end_matches('.');
        for (i, l) in textwrap::wrap(first, 64).iter().enumerate() {
            let label = if i == 0 { name } else { "" };
            println!("{label:<26} {l}");
        }
    }
    Ok(true)
}
