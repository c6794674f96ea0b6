//! `s2c` command-line driver.
//!
//! Every config key is a long kebab-case flag. A command starts from the
//! `run.cfg` of its main input (or `--config`), applies the flags, and
//! writes the resolved config with its hash next to its outputs.
//!
//! Exit codes: 0 success, 1 failed check or run, 2 usage or asset error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Arg, ArgAction, ArgMatches, Command};
use s2c::dataio::{RunConfig, KEYS};
use s2c::pipeline::{self, PipelineError, SampleSet};
use s2c::synthdata::Split;
use s2c::verify::{run_verify, LibraryKernels};

/// Errors that map to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn config_args() -> Vec<Arg> {
    KEYS.iter()
        .map(|k| {
            Arg::new(k.key)
                .long(k.key)
                .value_name("VALUE")
                .help(format!("{} [default: {}]", k.help, k.default))
                .help_heading("Config")
        })
        .collect()
}

fn path_arg(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name).long(name).value_name("PATH").required(true).value_parser(clap::value_parser!(PathBuf)).help(help)
}

fn cli() -> Command {
    let config = Arg::new("config")
        .long("config")
        .value_name("PATH")
        .value_parser(clap::value_parser!(PathBuf))
        .help("base config file instead of the input's run.cfg");
    let with_config = |c: Command| c.arg(config.clone()).args(config_args());
    Command::new("s2c")
        .about("Dual-stream diffusion for coordinated two-hand motion from event features")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(with_config(
            Command::new("gen-data")
                .about("Generate the synthetic dataset and its metric embedder")
                .arg(path_arg("out", "output directory")),
        ))
        .subcommand(with_config(
            Command::new("train-position")
                .about("Train the position predictors (stage one)")
                .arg(path_arg("data", "dataset directory"))
                .arg(path_arg("out", "output directory")),
        ))
        .subcommand(with_config(
            Command::new("train-motion")
                .about("Train the motion denoisers from a stage-one checkpoint (stage two)")
                .arg(path_arg("data", "dataset directory"))
                .arg(path_arg("checkpoint", "stage-one checkpoint"))
                .arg(path_arg("out", "output directory")),
        ))
        .subcommand(with_config(
            Command::new("sample")
                .about("Generate both hands' motion for a dataset split")
                .arg(path_arg("data", "dataset directory"))
                .arg(path_arg("checkpoint", "trained model checkpoint"))
                .arg(path_arg("out", "output directory"))
                .arg(
                    Arg::new("split")
                        .long("split")
                        .value_name("SPLIT")
                        .default_value("test")
                        .value_parser(["train", "val", "test"])
                        .help("dataset split to sample"),
                ),
        ))
        .subcommand(with_config(
            Command::new("evaluate")
                .about("Score samples against ground truth and write metrics.csv")
                .arg(path_arg("data", "dataset directory"))
                .arg(path_arg("samples", "samples container"))
                .arg(path_arg("out", "output directory")),
        ))
        .subcommand(with_config(
            Command::new("ablate")
                .about("Train, sample and score every cell of the module ablation grid")
                .arg(path_arg("data", "dataset directory"))
                .arg(path_arg("out", "output directory"))
                .arg(
                    Arg::new("seeds")
                        .long("seeds")
                        .value_name("LIST")
                        .default_value("7,8,9")
                        .help("comma-separated model seeds"),
                )
                .arg(
                    Arg::new("cells")
                        .long("cells")
                        .value_name("GRID")
                        .help("cells as dn,ps,mode triples joined by ';' [default: the six ablation rows]"),
                ),
        ))
        .subcommand(
            Command::new("verify").about("Run the fast invariant suite").arg(
                Arg::new("quiet").long("quiet").action(ArgAction::SetTrue).help("print only the summary line"),
            ),
        )
}

/// Base config (explicit file, else `fallback/run.cfg` when present, else
/// defaults) with every given flag applied.
fn resolve_config(m: &ArgMatches, fallback: Option<&Path>) -> Result<RunConfig> {
    let base = match m.get_one::<PathBuf>("config") {
        Some(p) => {
            if !p.exists() {
                return Err(PipelineError::Missing(p.clone()).into());
            }
            RunConfig::read(p)?
        }
        None => match fallback.map(|d| d.join(pipeline::RUN_CONFIG_FILE)).filter(|p| p.exists()) {
            Some(p) => RunConfig::read(&p)?,
            None => RunConfig::default(),
        },
    };
    let mut cfg = base;
    for k in KEYS {
        if let Some(v) = m.get_one::<String>(k.key) {
            cfg.set(k.key, v).map_err(|e| UsageError(e.to_string()))?;
        }
    }
    Ok(cfg)
}

fn path<'a>(m: &'a ArgMatches, name: &str) -> &'a PathBuf {
    m.get_one::<PathBuf>(name).expect("required by clap")
}

fn parent(p: &Path) -> &Path {
    p.parent().unwrap_or(Path::new("."))
}

fn announce(cfg: &RunConfig, out: &Path) {
    println!("config-hash {} -> {}", cfg.hash_hex(), out.display());
}

fn gen_data(m: &ArgMatches) -> Result<()> {
    let cfg = resolve_config(m, None)?;
    let out = path(m, "out");
    let data = pipeline::gen_data(&cfg, out)?;
    println!(
        "{} clips (train {}, val {}, test {})",
        data.clips.len(),
        data.splits.train,
        data.splits.val,
        data.splits.test
    );
    announce(&cfg, out);
    Ok(())
}

fn train_position(m: &ArgMatches) -> Result<()> {
    let data_dir = path(m, "data");
    let cfg = resolve_config(m, Some(data_dir))?;
    let out = path(m, "out");
    let data = pipeline::load_dataset(data_dir)?;
    let (model, log) = pipeline::train_position(&cfg, &data)?;
    pipeline::write_run_config(&cfg, out)?;
    model.save(&out.join(pipeline::POSITION_CHECKPOINT))?;
    let loss_path = out.join(pipeline::POSITION_LOSS_FILE);
    log.write_csv(&loss_path).with_context(|| loss_path.display().to_string())?;
    announce(&cfg, out);
    Ok(())
}

fn train_motion(m: &ArgMatches) -> Result<()> {
    let checkpoint = path(m, "checkpoint");
    let cfg = resolve_config(m, Some(parent(checkpoint)))?;
    let out = path(m, "out");
    let data = pipeline::load_dataset(path(m, "data"))?;
    let mut model = pipeline::load_model(&cfg, checkpoint)?;
    let log = pipeline::train_motion(&cfg, &mut model, &data)?;
    pipeline::write_run_config(&cfg, out)?;
    model.save(&out.join(pipeline::MODEL_CHECKPOINT))?;
    let loss_path = out.join(pipeline::MOTION_LOSS_FILE);
    log.write_csv(&loss_path).with_context(|| loss_path.display().to_string())?;
    announce(&cfg, out);
    Ok(())
}

fn sample(m: &ArgMatches) -> Result<()> {
    let checkpoint = path(m, "checkpoint");
    let cfg = resolve_config(m, Some(parent(checkpoint)))?;
    let out = path(m, "out");
    let data = pipeline::load_dataset(path(m, "data"))?;
    let model = pipeline::load_model(&cfg, checkpoint)?;
    let split: Split = m.get_one::<String>("split").expect("defaulted").parse().map_err(|e: String| UsageError(e))?;
    let indices = pipeline::eval_indices(&cfg, &data, split);
    let mut total = 0.0;
    let samples = pipeline::sample_clips(&cfg, &model, &data, &indices, |clip, secs| {
        total += secs;
        println!("clip {clip}: {secs:.3} s");
    })?;
    pipeline::write_run_config(&cfg, out)?;
    samples.write(&out.join(pipeline::SAMPLES_FILE))?;
    println!("{} clips in {total:.1} s", indices.len());
    announce(&cfg, out);
    Ok(())
}

fn evaluate(m: &ArgMatches) -> Result<()> {
    let samples_path = path(m, "samples");
    let cfg = resolve_config(m, Some(parent(samples_path)))?;
    let out = path(m, "out");
    let data_dir = path(m, "data");
    let data = pipeline::load_dataset(data_dir)?;
    let embedder = pipeline::load_embedder(data_dir)?;
    let samples = SampleSet::read(samples_path)?;
    let report = pipeline::evaluate(&cfg, &samples, &data, &embedder)?;
    pipeline::write_run_config(&cfg, out)?;
    let csv = report.to_csv(&cfg.hash_hex(), cfg.u64("seed"));
    let metrics_path = out.join(pipeline::METRICS_FILE);
    std::fs::write(&metrics_path, &csv).with_context(|| metrics_path.display().to_string())?;
    print!("{csv}");
    Ok(())
}

fn ablate(m: &ArgMatches) -> Result<()> {
    let data_dir = path(m, "data");
    let cfg = resolve_config(m, Some(data_dir))?;
    let out = path(m, "out");
    let seeds: Vec<u64> = m
        .get_one::<String>("seeds")
        .expect("defaulted")
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| UsageError(format!("bad seed {s:?}"))))
        .collect::<Result<_, _>>()?;
    let cells = match m.get_one::<String>("cells") {
        Some(text) => pipeline::parse_cells(text).map_err(|e| UsageError(e.to_string()))?,
        None => pipeline::ABLATION_CELLS.to_vec(),
    };
    let data = pipeline::load_dataset(data_dir)?;
    let embedder = pipeline::load_embedder(data_dir)?;
    let table = pipeline::ablate(&cfg, &data, &embedder, &cells, &seeds, |row| match &row.outcome {
        Ok(rep) => println!(
            "{} seed {} [{}]: fid {:.4}",
            row.cell.label(),
            row.seed,
            row.config_hash,
            rep.get("fid", "both").unwrap_or(f64::NAN)
        ),
        Err(e) => println!("{} seed {} [{}]: failed: {e}", row.cell.label(), row.seed, row.config_hash),
    })?;
    pipeline::write_run_config(&cfg, out)?;
    for (name, text) in [(pipeline::ABLATION_FILE, table.to_csv()), (pipeline::ABLATION_SUMMARY_FILE, table.summary_csv())] {
        let p = out.join(name);
        std::fs::write(&p, text).with_context(|| p.display().to_string())?;
    }
    let ordering: Vec<String> =
        table.fusion_ordering().iter().map(|(mode, fid)| format!("{} ({fid:.4})", mode.as_str())).collect();
    println!("fusion modes by mean FID: {}", ordering.join(" < "));
    if !table.all_finite() {
        return Err(anyhow!("some ablation cells failed or produced non-finite metrics"));
    }
    Ok(())
}

fn verify(m: &ArgMatches) -> Result<bool> {
    let report = run_verify(&LibraryKernels);
    let text = report.to_text();
    if m.get_flag("quiet") {
        print!("{}", text.lines().last().map(|l| format!("{l}\n")).unwrap_or_default());
    } else {
        print!("{text}");
    }
    Ok(report.passed())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<PipelineError>() {
        Some(e) if e.is_asset_error() => 2,
        _ if err.downcast_ref::<s2c::dataio::ConfigError>().is_some() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match matches.subcommand() {
        Some(("gen-data", m)) => gen_data(m).map(|_| true),
        Some(("train-position", m)) => train_position(m).map(|_| true),
        Some(("train-motion", m)) => train_motion(m).map(|_| true),
        Some(("sample", m)) => sample(m).map(|_| true),
        Some(("evaluate", m)) => evaluate(m).map(|_| true),
        Some(("ablate", m)) => ablate(m).map(|_| true),
        Some(("verify", m)) => verify(m),
        _ => unreachable!("subcommand required"),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_consistent() {
        cli().debug_assert();
    }

    #[test]
    fn every_config_key_is_a_flag() {
        let cmd = cli();
        let sub = cmd.find_subcommand("train-position").unwrap();
        for k in KEYS {
            assert!(sub.get_arguments().any(|a| a.get_long() == Some(k.key)), "missing --{}", k.key);
        }
    }
}
