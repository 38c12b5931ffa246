use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use mta_core::run::{self, Method, RunConfig};
use mta_core::synth::{self, SynthConfig};
use mta_core::Error;

/// Multi-touch attribution: prepare logs, train, evaluate, replay budgets.
#[derive(Parser)]
#[command(name = "mta", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic event log and its schema.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long, default_value_t = 5000)]
        users: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Parse, filter, sample and split the event log.
    Prepare(Common),
    /// Train the neural models.
    Train(WithMethods),
    /// AUC and log-loss on the test split.
    Eval(WithMethods),
    /// Export per-touch credits.
    Attribute {
        #[command(flatten)]
        m: WithMethods,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Budget allocation and offline replay on the test split.
    Replay {
        #[command(flatten)]
        m: WithMethods,
        /// Extra train-split attribution file to evaluate alongside.
        #[arg(long)]
        attributions: Option<PathBuf>,
    },
    /// Per-length counts and conversion rates of the prepared data.
    Stats(Common),
    /// prepare, train, eval, attribute and replay in one go.
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    run_name: Option<String>,
}

#[derive(Args)]
struct WithMethods {
    #[command(flatten)]
    common: Common,
    /// Restrict to these methods (repeatable); defaults to `eval.methods`.
    #[arg(long = "method", value_parser = parse_method)]
    methods: Vec<Method>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).map_err(|e| e.to_string())
}

impl Common {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.out_dir {
            cfg.out_dir = d.clone();
        }
        if let Some(n) = &self.run_name {
            cfg.run_name = n.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl WithMethods {
    fn load(&self) -> anyhow::Result<(RunConfig, Vec<Method>)> {
        let cfg = self.common.load()?;
        let methods = if self.methods.is_empty() {
            cfg.eval.methods.clone()
        } else {
            self.methods.clone()
        };
        Ok((cfg, methods))
    }
}

fn write_synth(out: &Path, schema: &Path, users: usize, seed: u64) -> anyhow::Result<()> {
    let cfg = SynthConfig {
        users,
        ..Default::default()
    };
    let recs = synth::generate(&cfg, seed)?;
    let f = std::fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    synth::write_log(std::io::BufWriter::new(f), &recs)?;
    let text = toml::to_string(&synth::schema())?;
    std::fs::write(schema, text).with_context(|| format!("writing {}", schema.display()))?;
    println!("{} records for {users} users -> {}", recs.len(), out.display());
    Ok(())
}

fn exec(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Synth {
            out,
            schema,
            users,
            seed,
        } => write_synth(&out, &schema, users, seed)?,
        Cmd::Prepare(c) => {
            let cfg = c.load()?;
            let s = run::prepare(&cfg)?;
            println!(
                "{} records ({} skipped), {} sequences, {} after filtering, {} after sampling; train {} val {} test {}",
                s.records, s.skipped_rows, s.sequences, s.filtered, s.sampled, s.train, s.val, s.test
            );
        }
        Cmd::Train(m) => {
            let (cfg, methods) = m.load()?;
            run::train(&cfg, &methods)?;
        }
        Cmd::Eval(m) => {
            let (cfg, methods) = m.load()?;
            println!("method\tauc\tlogloss");
            for (method, auc, ll) in run::eval(&cfg, &methods)? {
                println!("{}\t{auc}\t{ll}", method.name());
            }
        }
        Cmd::Attribute { m, split } => {
            let (cfg, methods) = m.load()?;
            for p in run::attribute(&cfg, &methods, &split)? {
                println!("{}", p.display());
            }
        }
        Cmd::Replay { m, attributions } => {
            let (cfg, methods) = m.load()?;
            let rows = run::replay_eval(&cfg, &methods, attributions.as_deref())?;
            mta_core::evalkit::write_metrics_tsv(std::io::stdout().lock(), &rows)?;
        }
        Cmd::Stats(c) => {
            let cfg = c.load()?;
            let data = run::Dataset::load(&cfg)?;
            let mut all = data.train;
            all.extend(data.val);
            all.extend(data.test);
            run::write_length_stats(std::io::stdout().lock(), &all)?;
        }
        Cmd::Run(c) => {
            let cfg = c.load()?;
            run::run_all(&cfg)?;
            println!("{}", cfg.run_dir().display());
        }
    }
    Ok(())
}

/// 2 bad configuration, 3 unreadable data, 4 version mismatch, 5 numeric
/// failure, 1 anything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        Some(Error::Io { .. } | Error::Stream(_) | Error::Parse(_)) => 3,
        Some(Error::Version(_)) => 4,
        Some(Error::NonFinite(_) | Error::UndefinedMetric(_)) => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match exec(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
