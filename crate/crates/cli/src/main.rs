use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use driftfl::federation::{evaluate, Checkpoint};
use driftfl::harness::{self, load_config, load_idx, parse_config, DatasetSpec, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "driftfl",
    version,
    about = "Federated learning simulator with drift-aware calibration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment, or one per seed with --seeds.
    Run(RunArgs),
    /// Run full CAFE and its three single-part ablations on a shared partition.
    Ablation(RunArgs),
    /// Score a dataset with a saved checkpoint.
    Infer(InferArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    /// Baseline head: linear or cosine.
    #[arg(long)]
    head: Option<String>,
    #[arg(long)]
    clients: Option<i64>,
    #[arg(long)]
    dir_alpha: Option<f64>,
    #[arg(long)]
    cf: Option<f64>,
    #[arg(long)]
    sample_rate: Option<f64>,
    #[arg(long)]
    rounds: Option<i64>,
    #[arg(long)]
    local_epochs: Option<i64>,
    #[arg(long)]
    batch_size: Option<i64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    mu_local: Option<f64>,
    #[arg(long)]
    mu_global: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    prox: Option<f64>,
    #[arg(long)]
    hidden: Option<i64>,
    #[arg(long)]
    seed: Option<i64>,
    /// Comma-separated seeds, e.g. 1,2,3.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<i64>>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record wall-clock seconds in the metrics (output is then not reproducible).
    #[arg(long)]
    wall_clock: bool,
    /// Train clients one after another instead of in parallel.
    #[arg(long)]
    sequential: bool,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(String, toml::Value)> {
        use toml::Value;
        let mut o: Vec<(String, Value)> = Vec::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                o.push((k.to_string(), v));
            }
        };
        put("method", self.method.clone().map(Value::String));
        put("head", self.head.clone().map(Value::String));
        put("clients", self.clients.map(Value::Integer));
        put("dir-alpha", self.dir_alpha.map(Value::Float));
        put("cf", self.cf.map(Value::Float));
        put("sample-rate", self.sample_rate.map(Value::Float));
        put("rounds", self.rounds.map(Value::Integer));
        put("local-epochs", self.local_epochs.map(Value::Integer));
        put("batch-size", self.batch_size.map(Value::Integer));
        put("lr", self.lr.map(Value::Float));
        put("mu-local", self.mu_local.map(Value::Float));
        put("mu-global", self.mu_global.map(Value::Float));
        put("tau", self.tau.map(Value::Float));
        put("gamma", self.gamma.map(Value::Float));
        put("alpha", self.alpha.map(Value::Float));
        put("beta", self.beta.map(Value::Float));
        put("prox", self.prox.map(Value::Float));
        put("hidden", self.hidden.map(Value::Integer));
        put("seed", self.seed.map(Value::Integer));
        put(
            "seeds",
            self.seeds
                .as_ref()
                .map(|s| Value::Array(s.iter().map(|&v| Value::Integer(v)).collect())),
        );
        put("out", self.out.as_ref().map(|p| Value::String(p.display().to_string())));
        put("wall-clock", self.wall_clock.then_some(Value::Boolean(true)));
        put("parallel", self.sequential.then_some(Value::Boolean(false)));
        o
    }

    fn config(&self) -> Result<ExperimentConfig> {
        let overrides = self.overrides();
        Ok(match &self.config {
            Some(path) => load_config(path, &overrides)?,
            None => parse_config("", &overrides)?,
        })
    }
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Config whose dataset supplies the test split.
    #[arg(long, conflicts_with_all = ["images", "labels"])]
    config: Option<PathBuf>,
    /// IDX image file to score.
    #[arg(long, requires = "labels")]
    images: Option<PathBuf>,
    /// IDX label file matching --images.
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Write one predicted class per line to this file.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

fn infer(args: &InferArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let test = match (&args.config, &args.images, &args.labels) {
        (_, Some(images), Some(labels)) => load_idx(images, labels, args.classes)?,
        (Some(path), _, _) => {
            let cfg = load_config(path, &[])?;
            harness::load_dataset(&cfg.dataset, ck.seed)?.1
        }
        (None, _, _) => {
            let cfg = ExperimentConfig::default();
            if !matches!(cfg.dataset, DatasetSpec::Synthetic(_)) {
                bail!("no dataset given");
            }
            harness::load_dataset(&cfg.dataset, ck.seed)?.1
        }
    };
    let (acc, loss, _) = evaluate(&ck, &test)?;
    println!("round {} accuracy {acc:.4} loss {loss:.4}", ck.round);
    if let Some(path) = &args.predictions {
        let preds = ck.predict(test.features())?;
        let text: String = preds.iter().map(|p| format!("{p}\n")).collect();
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run(args) => {
            let cfg = args.config()?;
            let report = harness::run(&cfg)?;
            for (seed, acc) in &report.final_accuracy {
                println!("seed {seed} final accuracy {acc:.4}");
            }
            if let Some(s) = &report.summary {
                log::info!("summary written to {}", s.display());
            }
        }
        Command::Ablation(args) => {
            let cfg = args.config()?;
            if cfg.federation.method != driftfl::Method::Cafe {
                bail!("ablation requires --method cafe");
            }
            for (ablation, acc) in harness::run_ablation_to_dir(&cfg)? {
                println!("{} final accuracy {acc:.4}", ablation.name());
            }
        }
        Command::Infer(args) => infer(&args)?,
    }
    Ok(())
}
