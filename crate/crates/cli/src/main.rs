use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches};
use hilo_cli::{dispatch, Command, RunConfig, KEYS};

fn cli() -> clap::Command {
    let mut cmd = clap::Command::new("hilo")
        .about("Nonuniform dependence laboratory for 2D compressible gas dynamics")
        .arg(
            Arg::new("command")
                .required(true)
                .value_parser(Command::ALL.map(|c| c.name()))
                .help("norms | ansatz | residual | evolve | demo | fit"),
        )
        .arg(Arg::new("config").long("config").value_name("PATH").help("key = value configuration file"));
    for (key, help) in KEYS {
        cmd = cmd.arg(Arg::new(*key).long(*key).value_name("VALUE").action(ArgAction::Set).help(*help));
    }
    cmd
}

/// Flags in the order they appeared on the command line.
fn flag_values(m: &ArgMatches) -> Vec<(String, String)> {
    let mut flags: Vec<(usize, String, String)> = KEYS
        .iter()
        .filter_map(|(k, _)| {
            let v = m.get_one::<String>(k)?;
            let idx = m.index_of(k).unwrap_or(usize::MAX);
            Some((idx, k.to_string(), v.clone()))
        })
        .collect();
    flags.sort();
    flags.into_iter().map(|(_, k, v)| (k, v)).collect()
}

fn main() -> ExitCode {
    let m = cli().get_matches();
    let command: Command = m.get_one::<String>("command").expect("required").parse().expect("validated by clap");
    let file = m.get_one::<String>("config").map(PathBuf::from);
    let cfg = match RunConfig::load(command, file.as_deref(), &flag_values(&m)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    let mut log = |s: &str| eprintln!("{s}");
    match dispatch(&cfg, &mut log) {
        Ok(outcome) => {
            for v in &outcome.verdicts {
                println!("[{}] {}: {}", if v.passed { "PASS" } else { "FAIL" }, v.item, v.detail);
            }
            println!("results in {}", outcome.dir.display());
            if outcome.passed() {
                ExitCode::SUCCESS
            } else {
                eprintln!("{}", serde_json::json!({ "failed": outcome.failures() }));
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            eprintln!("{}", serde_json::json!({ "failed": ["error"], "error": format!("{e:#}") }));
            ExitCode::from(2)
        }
    }
}
