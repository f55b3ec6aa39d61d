//! `likadj` command-line interface.

mod commands;
mod config;
mod error;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use config::{Command, Format, Provider, RunConfig};
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "likadj", version, about = "Second-order adjustments of the signed root likelihood ratio statistic")]
struct Cli {
    /// Command to run.
    #[arg(value_enum)]
    command: Command,
    /// Registered model name.
    #[arg(long)]
    model: Option<String>,
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Tested value of the interest parameter.
    #[arg(long)]
    psi0: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Write output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Full-precision table entries.
    #[arg(long)]
    precise: bool,
    /// Table number for `table`.
    #[arg(long)]
    table: Option<u8>,
    /// Pivot kind for `pivots`.
    #[arg(long)]
    kind: Option<String>,
    /// Expansion quantity for `verify`.
    #[arg(long)]
    quantity: Option<String>,
    /// Comma-separated sample sizes for `verify`.
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    provider: Option<Provider>,
    /// Worker threads for simulations (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Observed data as headerless CSV, one row per observation index.
    #[arg(long)]
    data: Option<PathBuf>,
}

fn merged(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => config::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(c) = cfg.command {
        if c != cli.command {
            return Err(CliError::Config(format!("config is for `{c:?}` but `{:?}` was requested", cli.command)));
        }
    }
    cfg.command = Some(cli.command);
    if let Some(m) = &cli.model {
        if cfg.model.as_ref().is_some_and(|old| old != m) {
            cfg.model_config = None;
        }
        cfg.model = Some(m.clone());
    }
    macro_rules! take {
        ($($f:ident),*) => { $( if let Some(v) = cli.$f.clone() { cfg.$f = v.into(); } )* };
    }
    take!(psi0, table, kind, quantity, n_grid, data);
    if let Some(v) = cli.reps {
        cfg.reps = v;
    }
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    if let Some(v) = cli.format {
        cfg.format = v;
    }
    if let Some(v) = cli.provider {
        cfg.provider = v;
    }
    if let Some(v) = cli.workers {
        cfg.workers = v;
    }
    cfg.precise |= cli.precise;
    Ok(cfg)
}

fn render(cfg: &RunConfig, out: &commands::Outcome) -> Result<Vec<u8>, CliError> {
    let echo = config::to_value(cfg);
    match cfg.format {
        Format::Json => {
            let doc = json!({ "config": echo, "result": out.result });
            let mut s = serde_json::to_string_pretty(&doc).map_err(CliError::numeric)?;
            s.push('\n');
            Ok(s.into_bytes())
        }
        Format::Csv => {
            let mut buf = format!("# config: {}\n", serde_json::to_string(&echo).map_err(CliError::numeric)?).into_bytes();
            for note in &out.notes {
                buf.extend(format!("# {note}\n").bytes());
            }
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(&out.header).map_err(CliError::numeric)?;
            for r in &out.rows {
                w.write_record(r).map_err(CliError::numeric)?;
            }
            w.into_inner().map_err(|e| CliError::Numeric(e.to_string()))
        }
    }
}

fn execute(cli: &Cli) -> Result<Option<CliError>, CliError> {
    let (cfg, mc) = commands::resolve(merged(cli)?, cli.n, cli.q)?;
    let outcome = commands::run(&cfg, mc.as_ref())?;
    let bytes = render(&cfg, &outcome)?;
    match &cli.out {
        Some(p) => std::fs::write(p, &bytes).map_err(|e| CliError::Config(format!("cannot write {}: {e}", p.display())))?,
        None => std::io::stdout().write_all(&bytes).map_err(CliError::numeric)?,
    }
    Ok(outcome.failure.map(CliError::Validation))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let err = match execute(&cli) {
        Ok(None) => return ExitCode::SUCCESS,
        Ok(Some(e)) | Err(e) => e,
    };
    eprintln!("likadj: {err}");
    ExitCode::from(err.exit_code() as u8)
}
