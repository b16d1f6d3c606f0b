mod args;
mod commands;
mod input;
mod output;

use std::io::Write;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use lfgw_core::Error;

use args::{Cli, Command};
use commands::CliError;

fn exit_code(e: &CliError) -> u8 {
    match e {
        CliError::Usage(_) => 1,
        CliError::Core(err) => match err {
            Error::Unclassifiable(_) | Error::Inconclusive(_) => 2,
            Error::MomentDiverged(_) | Error::DivergentPerpetuity(_) => 3,
            Error::BudgetExceeded { .. } | Error::TailUnavailable(_) => 4,
            _ => 1,
        },
    }
}

fn common(cmd: &Command) -> &args::Common {
    match cmd {
        Command::Classify(c)
        | Command::Yaglom(c)
        | Command::Survival(c)
        | Command::Martingale(c)
        | Command::Decompose(c)
        | Command::Kozlov(c) => c,
        Command::Quenched(q) => &q.common,
        Command::Simulate(s) => &s.common,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let start = Instant::now();
    let result = commands::run(&cli.command).and_then(|report| {
        let c = common(&cli.command);
        if let Some(out) = &c.out {
            output::persist(&report, c.format, out)?;
        }
        Ok(report)
    });
    match result {
        Ok(report) => {
            let mut text = report.headline.join("\n");
            text.push('\n');
            text.push_str(&serde_json::to_string_pretty(&report.summary).expect("summary serializes"));
            text.push('\n');
            // a closed pipe downstream is not an error of ours
            let _ = std::io::stdout().lock().write_all(text.as_bytes());
            eprintln!("wall-clock {:.3}s", start.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(e) => {
            match &e {
                CliError::Usage(msg) => eprintln!("error: {msg}"),
                CliError::Core(err) => eprintln!("error: {err}"),
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
