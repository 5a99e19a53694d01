use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use convoforge_core::sim::load_task;
use convoforge_core::{parse_schema, GatewayContext};
use convoforge_harness::experiment::write_transcripts;
use convoforge_harness::replay::recorded_steps;
use convoforge_harness::{replay, run_experiment, score, write_csv, ExperimentConfig};

#[derive(Parser)]
#[command(name = "convoforge", version, about = "Conversational robot assistant gateway and experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP gateway (port from CONVOFORGE_PORT, default 8732).
    Serve(ServeArgs),
    /// Check a dialogue schema and/or task layout.
    Validate(ValidateArgs),
    /// Run seeded sessions in both modes and write per-session metrics as CSV.
    Experiment(ExperimentArgs),
    /// Re-check a recorded transcript and print it.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    task: Option<PathBuf>,
}

#[derive(Args)]
#[group(required = true, multiple = true)]
struct ValidateArgs {
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    task: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Overrides CONVOFORGE_PORT.
    #[arg(long)]
    port: Option<u16>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Sessions per mode.
    #[arg(long = "n", default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 0.2)]
    error_rate: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// CSV destination; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for per-session JSONL transcripts.
    #[arg(long)]
    transcripts: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    transcript: PathBuf,
    /// Task layout used to re-score steps; shipped default if omitted.
    #[arg(long)]
    task: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report("usage", &e.render().to_string());
            return ExitCode::from(2);
        }
    };
    tracing_subscriber::fmt()
        .with_writer(io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn,convoforge_server=info".into()),
        )
        .init();

    let result = match cli.command {
        Command::Serve(a) => serve(a),
        Command::Validate(a) => validate(a),
        Command::Experiment(a) => experiment(a),
        Command::Replay(a) => replay_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report("error", &format!("{e:#}"));
            ExitCode::from(1)
        }
    }
}

fn report(kind: &str, message: &str) {
    let line = json!({ "error": kind, "message": message.trim_end() });
    eprintln!("{line}");
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn serve(a: ServeArgs) -> Result<()> {
    let ctx = convoforge_server::load_context(a.config.schema.as_deref(), a.config.task.as_deref())?;
    let port = match a.port {
        Some(p) => p,
        None => convoforge_server::port_from_env()?,
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = convoforge_server::bind(SocketAddr::from((Ipv4Addr::UNSPECIFIED, port))).await?;
        convoforge_server::serve(listener, Arc::new(ctx)).await
    })?;
    Ok(())
}

fn validate(a: ValidateArgs) -> Result<()> {
    let schema = match &a.schema {
        Some(p) => {
            let s = parse_schema(&read(p)?).with_context(|| format!("invalid schema {}", p.display()))?;
            println!(
                "schema {}: {} dialogues, {} catalogs, {} apis",
                s.name,
                s.dialogues.len(),
                s.catalogs.len(),
                s.apis.len()
            );
            Some(s)
        }
        None => None,
    };
    if let Some(p) = &a.task {
        let t = load_task(&read(p)?).with_context(|| format!("invalid task {}", p.display()))?;
        println!("task: {} areas, {} steps, {} items", t.areas.len(), t.steps.len(), t.items.len());
        if let Some(s) = schema {
            GatewayContext::new(s, t).context("schema and task disagree")?;
        }
    }
    Ok(())
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let ctx = Arc::new(GatewayContext::default_assembly());
    let exp = run_experiment(
        ctx,
        ExperimentConfig {
            n_per_mode: a.n,
            error_rate: a.error_rate,
            base_seed: a.seed,
        },
    )?;
    let records = exp.records();
    match &a.out {
        Some(path) => {
            let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
            write_csv(&records, BufWriter::new(f))?;
        }
        None => write_csv(&records, io::stdout().lock())?,
    }
    if let Some(dir) = &a.transcripts {
        write_transcripts(&exp.runs, dir)?;
    }
    let s = &exp.summary;
    let mut err = io::stderr().lock();
    for (name, m) in [("conversation", &s.conversation), ("baseline", &s.baseline)] {
        writeln!(
            err,
            "{name:<12} n={:<3} time {:8.3} s (sd {:.3})  steps {:.2} (sd {:.2})",
            m.sessions, m.time.mean, m.time.stddev, m.steps.mean, m.steps.stddev
        )?;
    }
    writeln!(
        err,
        "conversation vs baseline: time {:+.1}%, correct steps {:+.1}%",
        s.time_delta * 100.0,
        s.steps_delta * 100.0
    )?;
    Ok(())
}

fn replay_cmd(a: ReplayArgs) -> Result<()> {
    let task = match &a.task {
        Some(p) => load_task(&read(p)?)?,
        None => load_task(convoforge_core::DEFAULT_TASK)?,
    };
    let rep = replay(&a.transcript).with_context(|| format!("cannot replay {}", a.transcript.display()))?;
    print!("{}", rep.rendered);
    let rescored = score(&rep.entries, &task);
    if recorded_steps(&rep.entries) != Some(rescored) {
        bail!(
            "recorded {:?} correct steps, re-scoring gives {rescored}",
            recorded_steps(&rep.entries)
        );
    }
    Ok(())
}
