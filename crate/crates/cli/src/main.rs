use std::fs;
use std::io::{self, Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use serde_json::Value;

use kwb_cli::{emit_report, run_with, Command, Format, Verb};

/// Finite workbench for tree-indexed theories, independent-partition Boolean
/// algebras and generic hypergraphs.
///
/// Parameters are a JSON object, read from --input, from an inline argument,
/// or from stdin.
#[derive(Parser)]
#[command(name = "kwb", version)]
struct Cli {
    verb: Verb,

    /// Inline JSON parameters. For type-check a leading `Q` or `P` sets the
    /// shape.
    args: Vec<String>,

    /// JSON parameter file
    #[arg(long)]
    input: Option<PathBuf>,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,

    /// Write the report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,

    /// Worker threads for searches (results do not depend on it)
    #[arg(long)]
    jobs: Option<usize>,

    /// Record elapsed wall-clock time in the report
    #[arg(long)]
    timing: bool,
}

fn read_params(cli: &Cli) -> anyhow::Result<Value> {
    let mut inline: Vec<&str> = cli.args.iter().map(String::as_str).collect();
    let shape = match inline.first() {
        Some(&s @ ("Q" | "P")) if cli.verb == Verb::TypeCheck => {
            inline.remove(0);
            Some(s)
        }
        _ => None,
    };
    let text = match (inline.as_slice(), &cli.input) {
        ([], Some(path)) => {
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?
        }
        ([json], None) => json.to_string(),
        ([], None) => {
            let mut buf = String::new();
            io::stdin()
                .read_to_string(&mut buf)
                .context("reading stdin")?;
            buf
        }
        _ => anyhow::bail!("give parameters once: inline, via --input, or on stdin"),
    };
    let mut params: Value = serde_json::from_str(&text).context("parameters are not JSON")?;
    if let Some(s) = shape {
        let obj = params
            .as_object_mut()
            .context("parameters must be a JSON object")?;
        obj.insert("shape".into(), Value::String(s.into()));
    }
    Ok(params)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let params = match read_params(&cli) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("kwb: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cmd = Command {
        verb: cli.verb,
        params,
        seed: cli.seed,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.jobs {
        pool = pool.num_threads(n);
    }
    let outcome = match pool.build() {
        Ok(pool) => pool.install(|| run_with(&cmd, cli.timing)),
        Err(e) => {
            eprintln!("kwb: {e}");
            return ExitCode::from(1);
        }
    };
    let report = match outcome {
        Ok(r) => r,
        Err(e) => {
            eprintln!("kwb: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let bytes = emit_report(&report, cli.format);
    let written = match &cli.out {
        Some(path) => {
            fs::write(path, &bytes).with_context(|| format!("writing {}", path.display()))
        }
        None => io::stdout().write_all(&bytes).context("writing stdout"),
    };
    if let Err(e) = written {
        eprintln!("kwb: {e:#}");
        return ExitCode::from(1);
    }
    ExitCode::SUCCESS
}
