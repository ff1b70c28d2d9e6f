//! `narb`: ingest corpora, build pools, train and evaluate probes, prompt
//! models, score baselines and join result tables.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};

use commands::Run;
use config::{ConfigError, RunConfig, KEYS};

const SUBCOMMANDS: &[(&str, &str)] = &[
    ("ingest", "Load a raw corpus (source=arn|asp|litbank) into normalized JSON-lines"),
    ("pools", "Build ranking pools or auxiliary span instances"),
    ("train", "Cross-validated probe training; per-fold probes, rankings and results"),
    ("eval", "Re-score the saved probes of a train run on their test folds"),
    ("layers", "Per-layer sweep plus all_layers, with averaged mixture weights"),
    ("prompt", "Prompted ranking through a provider, with transcript"),
    ("baselines", "Similarity baselines over sampled same/different-group pairs"),
    ("report", "Join probe and prompt result CSVs into one comparison table"),
];

fn cli() -> Command {
    let mut root = Command::new("narb")
        .about("Probing and prompting for narrative and rhetorical parallelism")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about) in SUBCOMMANDS {
        let mut sub = Command::new(*name)
            .about(*about)
            .arg(
                Arg::new("config")
                    .long("config")
                    .value_name("FILE")
                    .value_parser(clap::value_parser!(PathBuf))
                    .help("INI-style key = value file; flags override it"),
            )
            .arg(
                Arg::new("set")
                    .long("set")
                    .value_name("KEY=VALUE")
                    .action(ArgAction::Append)
                    .help("Override any config key"),
            );
        for (key, default, help, _) in KEYS {
            let help = if default.is_empty() {
                help.to_string()
            } else {
                format!("{help} [default: {default}]")
            };
            sub = sub.arg(Arg::new(*key).long(key.replace('_', "-")).value_name("VALUE").help(help));
        }
        root = root.subcommand(sub);
    }
    root
}

fn overrides(m: &ArgMatches) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (key, ..) in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            out.push((key.to_string(), v.clone()));
        }
    }
    for kv in m.get_many::<String>("set").into_iter().flatten() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| config::config_err("set", format!("expected KEY=VALUE, got `{kv}`")))?;
        out.push((k.trim().replace('-', "_"), v.trim().to_string()));
    }
    Ok(out)
}

fn dispatch(name: &str, m: &ArgMatches) -> anyhow::Result<PathBuf> {
    let cfg = RunConfig::resolve(m.get_one::<PathBuf>("config").map(PathBuf::as_path), &overrides(m)?)?;
    let jobs: usize = cfg.parse("jobs")?;
    if jobs > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    let run = Run::start(cfg, name)?;
    match name {
        "ingest" => commands::ingest(&run),
        "pools" => commands::pools(&run),
        "train" => commands::train(&run),
        "eval" => commands::eval(&run),
        "layers" => commands::layers(&run),
        "prompt" => commands::prompt(&run),
        "baselines" => commands::baselines(&run),
        "report" => commands::report(&run),
        _ => unreachable!("clap rejects unknown subcommands"),
    }?;
    Ok(run.dir)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand required");
    match dispatch(name, sub) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            match e.downcast_ref::<ConfigError>() {
                Some(c) => eprintln!("narb: {c}"),
                None => eprintln!("narb: {}", format!("{e:#}").replace('\n', " ")),
            }
            ExitCode::from(1)
        }
    }
}
