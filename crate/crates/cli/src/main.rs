mod args;
mod commands;
mod report;

use std::io::Write;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;

use args::{Cli, Format};
use report::Report;

const USAGE: u8 = 1;
const DESIGN: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();

    let out = cli.command.output().clone();
    let report = match commands::run(cli.command) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    if let Err(e) = emit(&report, out.format, out.output.as_deref()) {
        return fail(&e);
    }
    for f in &report.errors {
        eprintln!("error in {}: {}\n  module: {}\n  hint: {}", f.context, f.message, f.module, f.hint);
    }
    if report.errors.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(DESIGN)
    }
}

fn emit(report: &Report, format: Format, path: Option<&std::path::Path>) -> anyhow::Result<()> {
    let text = match format {
        Format::Json => report.to_json()?,
        Format::Table => report.to_table(),
    };
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn fail(e: &anyhow::Error) -> ExitCode {
    eprintln!("error: {e:#}");
    match e.downcast_ref::<fuzzydid::Error>() {
        Some(fe) => {
            eprintln!("  module: {}\n  hint: {}", fe.module(), fe.hint());
            ExitCode::from(if fe.is_design() { DESIGN } else { USAGE })
        }
        None => ExitCode::from(USAGE),
    }
}
