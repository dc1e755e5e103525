//! Command-line entry point.
//!
//! Exit codes: 0 on success (including partial run failures, which are
//! recorded per run), 1 on configuration or usage errors, 2 when the work
//! itself fails or every run fails.

mod config;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

pub use config::{
    parse_config, parse_with_overrides, render_config, ConfigError, ConfigErrorKind, Origin, KEYS, SECTIONS,
};

use crate::error::{Error, Result};
use crate::genmodel::{preset_spec, read_dataset, write_dataset};
use crate::harness::{
    aggregate, decode_csv, emit_csv, emit_json, output_paths, run_experiment, test_data, train_data,
    train_models, ExperimentConfig, ExperimentKind, ModelVariant, BAYES_VARIANT,
};
use crate::metrics::evaluate;
use crate::predictors::{read_model, write_model};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "i2m2", version, about = "Inter- and intra-modality product-of-experts laboratory")]
struct Cli {
    /// Config file in the flat `key = value` format.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, applied after the file (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Single seed replacing the configured seeds and the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for experiments, output file for generate and train.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print the default config and exit.
    #[arg(long)]
    print_defaults: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a dataset from the configured preset.
    Generate {
        #[arg(long, value_enum, default_value = "train")]
        split: Split,
    },
    /// Train one model variant on a dataset file and write the model.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "i2m2")]
        variant: String,
    },
    /// Evaluate a model on a dataset file; prints a JSON report.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Variant comparison on the configured preset.
    Compare,
    /// Test-time noise sweep over the configured grid.
    SweepNoise,
    /// In-distribution versus shifted test accuracy.
    Ood,
    /// Predictive and label entropies.
    Entropy,
    /// Aggregate a results CSV into mean, std and count per metric.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn load_config(cli: &Cli) -> std::result::Result<ExperimentConfig, Failure> {
    let text = match &cli.config {
        Some(path) => fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?,
        None => String::new(),
    };
    let mut config = parse_with_overrides(&text, &cli.set)?;
    if let Some(seed) = cli.seed {
        config.seeds = vec![seed];
        config.train.seed = seed;
    }
    Ok(config)
}

fn required_out(cli: &Cli, what: &str) -> std::result::Result<PathBuf, Failure> {
    cli.out
        .clone()
        .ok_or_else(|| Failure::Config(format!("{what} needs --out <file>")))
}

fn write_stdout(stdout: &mut dyn Write, text: &str) -> Result<()> {
    stdout
        .write_all(text.as_bytes())
        .map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn dispatch(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> std::result::Result<(), Failure> {
    if cli.print_defaults {
        write_stdout(stdout, &render_config(&ExperimentConfig::default()))?;
        return Ok(());
    }
    let Some(command) = &cli.command else {
        return Err(Failure::Config("no subcommand given (try --help)".into()));
    };
    let mut config = load_config(cli)?;
    let kind = match command {
        Command::Generate { split } => {
            let out = required_out(cli, "generate")?;
            let spec = preset_spec(config.preset)?;
            let seed = config.seeds[0];
            let data = match split {
                Split::Train => train_data(&spec, &config, seed)?,
                Split::Test => test_data(&spec, &config, seed)?,
            };
            write_dataset(&data, &out)?;
            return Ok(());
        }
        Command::Train { data, variant } => {
            let out = required_out(cli, "train")?;
            let variant: ModelVariant = variant
                .parse()
                .map_err(|e: Error| Failure::Config(e.to_string()))?;
            let dataset = read_dataset(data)?;
            config.variants = vec![variant];
            let model = train_models(&config, &dataset, config.train.seed).remove(0);
            let stack = model.stack.map_err(Failure::Runtime)?;
            write_model(&stack, &out)?;
            return Ok(());
        }
        Command::Eval { model, data } => {
            let stack = read_model(model)?;
            let dataset = read_dataset(data)?;
            let probs = stack.predict_proba_batch(dataset.samples())?;
            let report = evaluate(&probs, &dataset.labels())?;
            let mut text =
                serde_json::to_string_pretty(&report).map_err(|e| Error::Serialization(e.to_string()))?;
            text.push('\n');
            write_stdout(stdout, &text)?;
            return Ok(());
        }
        Command::Report { input } => {
            let text = fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
            let records = decode_csv(&text)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            let ser = |e: csv::Error| Error::Serialization(e.to_string());
            w.write_record(["preset", "variant", "metric", "mean", "std", "count"])
                .map_err(ser)?;
            for a in aggregate(&records) {
                w.write_record([
                    a.preset,
                    a.variant,
                    a.metric,
                    a.mean.to_string(),
                    a.std.to_string(),
                    a.count.to_string(),
                ])
                .map_err(ser)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Serialization(e.to_string()))?;
            stdout
                .write_all(&bytes)
                .map_err(|e| Error::io(Path::new("<stdout>"), e))?;
            return Ok(());
        }
        Command::Compare => ExperimentKind::Comparison,
        Command::SweepNoise => ExperimentKind::NoiseSweep,
        Command::Ood => ExperimentKind::Ood,
        Command::Entropy => ExperimentKind::Entropy,
    };
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    let records = run_experiment(&config, kind)?;
    let (csv_path, json_path) = output_paths(&config, kind);
    emit_csv(&records, &csv_path)?;
    emit_json(&records, &json_path)?;
    write_stdout(stdout, &format!("{}\n{}\n", csv_path.display(), json_path.display()))?;

    let runs: Vec<_> = records.iter().filter(|r| r.variant != BAYES_VARIANT).collect();
    let failed = runs.iter().filter(|r| r.error.is_some()).count();
    for r in runs.iter().filter(|r| r.error.is_some()) {
        let _ = writeln!(
            stderr,
            "run {} seed {} failed: {}",
            r.variant,
            r.seed,
            r.error.as_deref().unwrap_or("")
        );
    }
    if !runs.is_empty() && failed == runs.len() {
        return Err(Failure::Runtime("every run failed".into()));
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = stderr.write_all(text.as_bytes());
            } else {
                let _ = stdout.write_all(text.as_bytes());
            }
            return code;
        }
    };
    match dispatch(&cli, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(Failure::Config(msg)) => {
            let _ = writeln!(stderr, "config error: {msg}");
            EXIT_CONFIG
        }
        Err(Failure::Runtime(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_RUNTIME
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn invoke(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            std::iter::once("i2m2").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn print_defaults_round_trips() {
        let (code, out, _) = invoke(&["--print-defaults"]);
        assert_eq!(code, 0);
        assert_eq!(parse_config(&out).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn malformed_config_exits_one() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cfg");
        fs::write(&path, "[generator]\nn_train = -5\n").unwrap();
        let (code, _, err) = invoke(&["compare", "--config", path.to_str().unwrap()]);
        assert_eq!(code, 1);
        assert!(err.contains("line 2"), "{err}");
        assert!(err.contains("n_train"), "{err}");
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(invoke(&["frobnicate"]).0, 1);
        assert_eq!(invoke(&[]).0, 1);
        assert_eq!(invoke(&["compare", "--set", "nope=1"]).0, 1);
        assert_eq!(invoke(&["generate"]).0, 1);
        assert_eq!(invoke(&["--help"]).0, 0);
    }

    #[test]
    fn missing_input_is_a_runtime_error() {
        let (code, _, err) = invoke(&["report", "--input", "/nonexistent/results.csv"]);
        assert_eq!(code, 2);
        assert!(err.contains("/nonexistent/results.csv"));
    }

    #[test]
    fn all_runs_failing_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        let (code, _, err) = invoke(&[
            "compare",
            "--out",
            out,
            "--seed",
            "0",
            "--set",
            "n_train=300",
            "--set",
            "n_test=200",
            "--set",
            "bayes_samples=1000",
            "--set",
            "lr_stage1=1e6",
            "--set",
            "lr_stage2=1e6",
            "--set",
            "variants=i2m2",
        ]);
        assert_eq!(code, 2, "{err}");
        assert!(err.contains("failed"));
    }
}
