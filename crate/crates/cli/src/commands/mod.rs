mod gen_data;
mod gradcheck;
mod report;
mod train;
mod verify;

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::args::{Cli, Command};
use crate::{CmdResult, Failure};

pub const THREADS_ENV: &str = "SKNN_THREADS";

/// Settings shared by every subcommand after defaults are resolved.
pub struct Globals {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub json: bool,
}

pub fn run(cli: Cli) -> CmdResult {
    let threads = resolve_threads(cli.threads)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Usage(format!("cannot start {threads} worker threads: {e}")))?;

    let mut config = serde_json::to_value(&cli).expect("arguments serialize");
    config["threads"] = threads.into();
    eprintln!("config: {config}");

    let globals = Globals {
        seed: cli.seed,
        out: cli.out,
        json: cli.json,
    };
    match &cli.command {
        Command::GenData(a) => gen_data::run(&globals, a),
        Command::Train(a) => train::run(&globals, a),
        Command::Verify(a) => verify::run(&globals, a),
        Command::Gradcheck(a) => gradcheck::run(&globals, a),
        Command::Report(a) => report::run(&globals, a),
    }
}

/// `--threads`, else the core count, capped by `SKNN_THREADS` when set.
fn resolve_threads(flag: Option<usize>) -> Result<usize, Failure> {
    let cap =
        match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
                Failure::Usage(format!("{THREADS_ENV}=`{v}` is not a thread count"))
            })?),
            Err(_) => None,
        };
    let wanted =
        flag.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let n = cap.map_or(wanted, |c| wanted.min(c));
    if n == 0 {
        return Err(Failure::Usage("thread count must be >= 1".into()));
    }
    Ok(n)
}

/// Writes `report` to `--out` when given and to stdout under `--json`;
/// otherwise calls `table` for the human-readable form.
pub fn emit<T: Serialize>(g: &Globals, report: &T, table: impl FnOnce()) -> CmdResult {
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    if let Some(path) = &g.out {
        write_text(path, &(text.clone() + "\n"))?;
    }
    if g.json {
        println!("{text}");
    } else {
        table();
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> CmdResult {
    std::fs::write(path, text).map_err(|e| Failure::Runtime(e.into()))
}

/// Left-aligned first column, right-aligned rest.
pub fn print_table(header: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect();
        println!("{}", parts.join("  ").trim_end());
    };
    line(header.to_vec());
    line(
        widths
            .iter()
            .map(|&w| "-".repeat(w))
            .collect::<Vec<_>>()
            .iter()
            .map(String::as_str)
            .collect(),
    );
    for row in rows {
        line(row.iter().map(String::as_str).collect());
    }
}
