use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use rankcomp_harness::{Cli, HarnessError};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match rankcomp_harness::cli::run(&cli) {
        Ok(summary) => {
            for p in &summary.outputs {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            let record = err.record();
            let line = serde_json::to_string(&record)
                .context("serializing error record")
                .unwrap_or_else(|e| {
                    format!("{{\"error\":\"internal\",\"message\":{:?}}}", e.to_string())
                });
            eprintln!("{line}");
            ExitCode::from(exit_byte(&err))
        }
    }
}

fn exit_byte(err: &HarnessError) -> u8 {
    u8::try_from(err.exit_code()).unwrap_or(1)
}
