use std::ffi::OsString;
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;

mod args;
mod commands;

use args::{Cli, Command};

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;

/// Appends `--key value` for every config entry whose flag is not already on
/// the command line, so explicit flags always win.
fn merge_config(argv: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let strs: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let path = strs.iter().enumerate().find_map(|(i, a)| {
        if a == "--config" {
            strs.get(i + 1).cloned()
        } else {
            a.strip_prefix("--config=").map(str::to_string)
        }
    });
    let Some(path) = path else { return Ok(argv) };
    let text =
        std::fs::read_to_string(Path::new(&path)).map_err(|e| cat_prune::Error::invalid(format!("{path}: {e}")))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| cat_prune::Error::invalid(format!("{path}: {e}")))?;
    let serde_json::Value::Object(map) = value else {
        return Err(cat_prune::Error::invalid(format!("{path}: config must be a JSON object")).into());
    };
    let given = |flag: &str| strs.iter().any(|a| a == flag || a.starts_with(&format!("{flag}=")));
    let mut out = argv;
    for (key, v) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        if given(&flag) {
            continue;
        }
        match v {
            serde_json::Value::Bool(true) => out.push(flag.into()),
            serde_json::Value::Bool(false) | serde_json::Value::Null => {}
            serde_json::Value::String(s) => out.extend([flag.into(), s.into()]),
            serde_json::Value::Number(n) => out.extend([flag.into(), n.to_string().into()]),
            serde_json::Value::Array(items) => {
                let joined: Vec<String> = items
                    .iter()
                    .map(|i| match i {
                        serde_json::Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect();
                out.extend([flag.into(), joined.join(",").into()]);
            }
            serde_json::Value::Object(_) => {
                return Err(cat_prune::Error::invalid(format!("{path}: nested value for {key}")).into())
            }
        }
    }
    Ok(out)
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("CAT_PRUNE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        cat_prune::Error::invalid(format!("CAT_PRUNE_THREADS must be a non-negative integer, got {raw:?}"))
    })?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err
        .chain()
        .find_map(|e| e.downcast_ref::<cat_prune::Error>())
        .is_some_and(|e| e.is_validation());
    if validation {
        EXIT_USAGE
    } else {
        EXIT_RUNTIME
    }
}

fn run() -> anyhow::Result<()> {
    init_threads()?;
    let argv = merge_config(std::env::args_os().collect())?;
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            std::process::exit(e.exit_code());
        }
    };
    match &cli.command {
        Command::Score(a) => commands::score(a),
        Command::Select(a) => commands::select(a),
        Command::Subset(a) => commands::subset(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Noise(a) => commands::noise(a),
        Command::Eval(a) => commands::eval(a),
        Command::E2e(a) => commands::e2e(a),
        Command::Synth(a) => commands::synth(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
