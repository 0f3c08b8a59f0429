//! Command-line entry point: `prepare`, `train`, `eval`, `map`,
//! `selfcheck`. Shared flags: `--config`, `--out`, `--seed`,
//! `--threads`, `--repeats`, `--checkpoint`, `--all`, `--print-config`.
//! Exit codes: 0 ok, 1 usage, 2 data error, 3 numerical failure.

mod commands;
mod config;

pub use commands::{build_model, cmd_eval, cmd_map, cmd_prepare, cmd_selfcheck, cmd_train, split_summary};
pub use config::{parse_toml, Overrides, Precision, RunConfig, TomlValue};

use crate::error::{Error, Result};
use crate::parallel;
use std::path::PathBuf;

const USAGE: &str = "\
sehybridsn — spectral-spatial scene classification

Usage: sehybridsn <command> [flags]

Commands:
  prepare     Build the standardized + PCA cube, the pinned split and a
              per-class summary table.
  train       Train the configured model; writes checkpoint(s) and
              JSON/CSV reports. --repeats N aggregates N seeded runs.
  eval        Score a checkpoint on the test split (OA, AA, kappa,
              per-class accuracy).
  map         Render the scene classification map as a binary PPM.
  selfcheck   Run gradient, oracle and round-trip verification.

Flags:
  --config PATH      TOML run configuration (required except selfcheck)
  --out DIR          output directory (overrides [output] dir)
  --seed N           base seed (overrides [train] seed)
  --threads N        worker cap, 0 = all cores (overrides [output] threads)
  --repeats N        number of seeded runs (overrides [train] repeats)
  --checkpoint PATH  checkpoint for eval/map
  --all              map: classify every pixel, not only labeled ones
  --print-config     print the fully resolved configuration and exit
";

#[derive(Debug)]
struct ParsedArgs {
    command: String,
    config: Option<PathBuf>,
    overrides: Overrides,
    print_config: bool,
}

fn parse_args(args: &[String]) -> Result<ParsedArgs> {
    if args.is_empty() {
        return Err(Error::usage(format!("missing command\n\n{USAGE}")));
    }
    let command = args[0].clone();
    let mut parsed = ParsedArgs {
        command,
        config: None,
        overrides: Overrides::default(),
        print_config: false,
    };
    let mut i = 1;
    let value_of = |i: &mut usize, flag: &str| -> Result<String> {
        *i += 1;
        args.get(*i)
            .cloned()
            .ok_or_else(|| Error::usage(format!("{flag} needs a value")))
    };
    while i < args.len() {
        match args[i].as_str() {
            "--config" => parsed.config = Some(PathBuf::from(value_of(&mut i, "--config")?)),
            "--out" => parsed.overrides.out = Some(PathBuf::from(value_of(&mut i, "--out")?)),
            "--seed" => {
                let v = value_of(&mut i, "--seed")?;
                parsed.overrides.seed = Some(
                    v.parse::<u64>()
                        .map_err(|_| Error::usage(format!("--seed must be an unsigned integer, got '{v}'")))?,
                );
            }
            "--threads" => {
                let v = value_of(&mut i, "--threads")?;
                parsed.overrides.threads = Some(
                    v.parse::<usize>()
                        .map_err(|_| Error::usage(format!("--threads must be an integer, got '{v}'")))?,
                );
            }
            "--repeats" => {
                let v = value_of(&mut i, "--repeats")?;
                parsed.overrides.repeats = Some(
                    v.parse::<usize>()
                        .map_err(|_| Error::usage(format!("--repeats must be an integer, got '{v}'")))?,
                );
            }
            "--checkpoint" => {
                parsed.overrides.checkpoint = Some(PathBuf::from(value_of(&mut i, "--checkpoint")?))
            }
            "--all" => parsed.overrides.classify_all = true,
            "--print-config" => parsed.print_config = true,
            "--help" | "-h" => {
                return Err(Error::usage(USAGE.to_string()));
            }
            other => {
                return Err(Error::usage(format!("unknown flag '{other}'\n\n{USAGE}")));
            }
        }
        i += 1;
    }
    Ok(parsed)
}

fn dispatch(parsed: &ParsedArgs) -> Result<()> {
    if parsed.command == "selfcheck" {
        return cmd_selfcheck();
    }
    let config_path = parsed
        .config
        .as_ref()
        .ok_or_else(|| Error::usage(format!("'{}' needs --config PATH", parsed.command)))?;
    let cfg = RunConfig::load(config_path, &parsed.overrides)?;
    parallel::set_thread_limit(cfg.threads);
    if parsed.print_config {
        print!("{}", cfg.render());
        return Ok(());
    }
    // Published runs are self-describing: every resolved value is echoed.
    print!("{}", cfg.render());
    match parsed.command.as_str() {
        "prepare" => cmd_prepare(&cfg),
        "train" => cmd_train(&cfg),
        "eval" => cmd_eval(&cfg),
        "map" => cmd_map(&cfg),
        other => Err(Error::usage(format!("unknown command '{other}'\n\n{USAGE}"))),
    }
}

/// Runs the CLI and returns the process exit code.
pub fn main_with_args(args: &[String]) -> i32 {
    match parse_args(args).and_then(|parsed| dispatch(&parsed)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
