use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use covband::harness::{
    self, run_many, run_once_with_snapshot, run_sweep, theoretical_slope, Aggregate, RegretTrace,
    RunConfig, SweepConfig, SweepSeries,
};
use covband::suites;

#[derive(Parser)]
#[command(name = "covband", version, about = "Run covariate bandit experiments")]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one machine/policy configuration.
    Run(RunArgs),
    /// Run a sweep over horizons and policies and fit scaling exponents.
    Sweep(RunArgs),
    /// Run a named acceptance suite.
    Check {
        /// One of: static, lemma, scaling, partition, all.
        suite: String,
        #[arg(long, env = "COVBAND_SEED")]
        seed: Option<u64>,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON experiment spec.
    #[arg(long)]
    spec: PathBuf,
    /// Output directory (overrides the spec's `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed (overrides the spec's `base_seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Replications per configuration.
    #[arg(long)]
    reps: Option<u64>,
    /// Trace file format.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    #[default]
    Csv,
    Json,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn from_core(err: covband::Error) -> Self {
        if err.is_config() {
            Failure::Config(err.into())
        } else {
            Failure::Runtime(err.into())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Self {
        Failure::Runtime(err.into())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        Failure::Runtime(err)
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot configure {threads} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Check { suite, seed } => cmd_check(&suite, seed.unwrap_or(0)),
    };
    match outcome {
        Ok(code) => code,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Output settings a spec file may carry next to the experiment itself.
struct Loaded<T> {
    config: T,
    out: PathBuf,
    format: Format,
}

fn load<T: serde::de::DeserializeOwned>(args: &RunArgs) -> CliResult<Loaded<T>> {
    let text = fs::read_to_string(&args.spec)
        .with_context(|| format!("reading {}", args.spec.display()))
        .map_err(Failure::Config)?;
    let mut doc: Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", args.spec.display()))
        .map_err(Failure::Config)?;
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| Failure::Config(anyhow::anyhow!("the spec must be a JSON object")))?;
    let out = match obj.remove("out") {
        Some(Value::String(s)) => PathBuf::from(s),
        Some(_) => return Err(Failure::Config(anyhow::anyhow!("`out` must be a string"))),
        None => PathBuf::from("out"),
    };
    let format = match obj.remove("format") {
        Some(v) => serde_json::from_value(v)
            .context("`format` must be \"csv\" or \"json\"")
            .map_err(Failure::Config)?,
        None => Format::default(),
    };
    if let Some(seed) = args.seed {
        obj.insert("base_seed".into(), seed.into());
    } else if !obj.contains_key("base_seed") {
        if let Some(seed) = env_seed()? {
            obj.insert("base_seed".into(), seed.into());
        }
    }
    if let Some(reps) = args.reps {
        obj.insert("reps".into(), reps.into());
    }
    let config = serde_json::from_value(doc)
        .context("invalid experiment spec")
        .map_err(Failure::Config)?;
    Ok(Loaded {
        config,
        out: args.out.clone().unwrap_or(out),
        format: args.format.unwrap_or(format),
    })
}

fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var("COVBAND_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .with_context(|| format!("COVBAND_SEED={v} is not an integer"))
            .map_err(Failure::Config),
        Err(_) => Ok(None),
    }
}

#[derive(Serialize)]
struct RunSummary<'a> {
    run_id: String,
    config: &'a RunConfig,
    #[serde(flatten)]
    aggregate: &'a Aggregate,
}

fn cmd_run(args: &RunArgs) -> CliResult<ExitCode> {
    let Loaded { config, out, format } = load::<RunConfig>(args)?;
    let aggregate = run_many(&config).map_err(Failure::from_core)?;
    let run_id = config.policy.label();
    fs::create_dir_all(&out)?;
    write_traces(&out, format, aggregate.traces.iter().map(|t| (run_id.clone(), t)))?;
    write_json(
        &out.join("summary.json"),
        &RunSummary {
            run_id: run_id.clone(),
            config: &config,
            aggregate: &aggregate,
        },
    )?;
    let (_, snapshot) = run_once_with_snapshot::<f64>(&config, 0).map_err(Failure::from_core)?;
    if let Some(snapshot) = snapshot {
        write_json(&out.join("tree.json"), &snapshot)?;
    }
    println!(
        "{run_id}: mean final regret {:.3} over {} reps -> {}",
        aggregate.final_regret.mean,
        config.reps,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    config: &'a SweepConfig,
    /// Exponent `1 - beta (alpha + 1) / (2 beta + d)` from the machine's
    /// declared class, when the margin exponent is finite.
    reference_slope: Option<f64>,
    series: &'a [SweepSeries],
}

fn cmd_sweep(args: &RunArgs) -> CliResult<ExitCode> {
    let Loaded { config, out, format } = load::<SweepConfig>(args)?;
    let machine = config.machine.build::<f64>().map_err(Failure::from_core)?;
    let reference_slope = machine
        .class_params()
        .filter(|c| c.alpha.is_finite())
        .map(|c| theoretical_slope(c.alpha, c.beta, machine.dim()));
    let series = run_sweep(&config).map_err(Failure::from_core)?;
    fs::create_dir_all(&out)?;
    let rows = series.iter().flat_map(|s| {
        s.points.iter().flat_map(move |p| {
            let id = format!("{}-n{}", s.policy, p.n);
            p.aggregate.traces.iter().map(move |t| (id.clone(), t))
        })
    });
    write_traces(&out, format, rows)?;
    write_json(
        &out.join("summary.json"),
        &SweepSummary {
            config: &config,
            reference_slope,
            series: &series,
        },
    )?;
    for s in &series {
        match &s.fit {
            Some(fit) => println!("{}: slope {:.3} (stderr {:.3})", s.policy, fit.slope, fit.stderr),
            None => println!("{}: too few positive points for a fit", s.policy),
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(suite: &str, seed: u64) -> CliResult<ExitCode> {
    let ids = suites::suite_criteria(suite).map_err(Failure::from_core)?;
    let mut all = true;
    for id in ids {
        let outcome = suites::run_criterion(id, seed).map_err(Failure::from_core)?;
        println!("{outcome}");
        all &= outcome.passed;
    }
    Ok(if all { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    run_id: &'a str,
    #[serde(flatten)]
    trace: &'a RegretTrace,
}

fn write_traces<'a>(
    out: &Path,
    format: Format,
    rows: impl Iterator<Item = (String, &'a RegretTrace)>,
) -> CliResult<()> {
    match format {
        Format::Csv => {
            let file = BufWriter::new(fs::File::create(out.join("traces.csv"))?);
            harness::write_traces_csv(file, rows.map(|(id, t)| (id, t.clone())))
                .map_err(|e| Failure::Runtime(e.into()))
        }
        Format::Json => {
            let rows: Vec<(String, &RegretTrace)> = rows.collect();
            let records: Vec<TraceRecord> = rows
                .iter()
                .map(|(id, trace)| TraceRecord { run_id: id, trace })
                .collect();
            write_json(&out.join("traces.json"), &records)
        }
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).context("serializing output")?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
