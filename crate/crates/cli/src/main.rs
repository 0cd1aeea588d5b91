use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use miabnet::dot::export_dot;
use miabnet::scenario::load_config;
use miabnet::{generate_topology, run, summarize, Record, Topology, TopologyKind, Trace};

#[derive(Parser)]
#[command(
    name = "miabnet",
    version,
    about = "Random-walk route discovery simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random topology as JSON.
    Gen {
        #[arg(long)]
        kind: TopologyKind,
        #[arg(long)]
        nodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the config's `output.trace`, then `<config>.jsonl`.
        #[arg(long)]
        trace_out: Option<PathBuf>,
        #[arg(long)]
        summary_out: Option<PathBuf>,
        #[arg(long)]
        dot_out: Option<PathBuf>,
    },
    /// Recompute the summary of a recorded trace.
    Summarize {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        topology: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn gen(kind: TopologyKind, nodes: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    let t = generate_topology(kind, nodes, seed)?;
    let mut json = t.to_json();
    json.push('\n');
    match out {
        Some(path) => write_file(path, json.as_bytes()),
        None => Ok(std::io::stdout().write_all(json.as_bytes())?),
    }
}

fn run_config(
    config: &Path,
    trace_out: Option<PathBuf>,
    summary_out: Option<PathBuf>,
    dot_out: Option<PathBuf>,
) -> Result<()> {
    let loaded = load_config(config)?;
    let scenario = &loaded.scenario;
    let trace = run(scenario)?;

    let trace_path = trace_out
        .or(loaded.outputs.trace)
        .unwrap_or_else(|| config.with_extension("jsonl"));
    let file = fs::File::create(&trace_path)
        .with_context(|| format!("writing {}", trace_path.display()))?;
    let mut w = BufWriter::new(file);
    trace.write_jsonl(&mut w)?;
    w.flush()?;

    let summary = summarize(&trace, &scenario.topology)?;
    if let Some(path) = summary_out.or(loaded.outputs.summary) {
        let mut json = serde_json::to_string_pretty(&summary)?;
        json.push('\n');
        write_file(&path, json.as_bytes())?;
    }
    if let Some(path) = dot_out.or(loaded.outputs.dot) {
        let first_route = trace.iter().find_map(|e| match &e.record {
            Record::RouteFound { path, .. } => Some(path.clone()),
            _ => None,
        });
        let dot = export_dot(&scenario.topology, first_route.as_deref())?;
        write_file(&path, dot.as_bytes())?;
    }
    print!("{}", summary.to_table());
    Ok(())
}

fn summarize_trace(trace: &Path, topology: &Path, json: bool) -> Result<()> {
    let file = fs::File::open(trace).with_context(|| format!("reading {}", trace.display()))?;
    let trace = Trace::read_jsonl(BufReader::new(file))
        .with_context(|| format!("parsing {}", trace.display()))?;
    let text =
        fs::read_to_string(topology).with_context(|| format!("reading {}", topology.display()))?;
    let topology =
        Topology::from_json(&text).with_context(|| format!("parsing {}", topology.display()))?;
    let summary = summarize(&trace, &topology)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        print!("{}", summary.to_table());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Gen {
            kind,
            nodes,
            seed,
            out,
        } => gen(kind, nodes, seed, out.as_deref()),
        Command::Run {
            config,
            trace_out,
            summary_out,
            dot_out,
        } => run_config(&config, trace_out, summary_out, dot_out),
        Command::Summarize {
            trace,
            topology,
            json,
        } => summarize_trace(&trace, &topology, json),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
