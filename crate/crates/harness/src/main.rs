use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use diffnn::checkpoint::Checkpoint;
use harness::eval::{evaluate_named, sweep, SweepRow};
use harness::metrics::{read_metrics, MetricsSink};
use harness::trainer::{checkpoint_config, CHECKPOINT_FILE, METRICS_FILE, SUMMARY_FILE};
use harness::{HarnessError, PolicyRegistry, TrainOptions, Trainer};
use swipt_core::SystemConfig;

#[derive(Debug, Parser)]
#[command(name = "dwmro", version, about = "Decentralized world-model agents for a SWIPT HetNet")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one agent per FUE and stream metrics.
    Train(TrainArgs),
    /// Evaluate policies with mean actions and threshold gates.
    Evaluate(EvaluateArgs),
    /// Evaluate policies over a list of FUE counts.
    Sweep(SweepArgs),
    /// Print checkpoint blocks and the config hash.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// TOML config; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Keep every gate closed.
    #[arg(long)]
    pure_dwm: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Continue from `<out>/checkpoint.ckpt`.
    #[arg(long)]
    resume: bool,
    /// Also write one metrics row per slot.
    #[arg(long)]
    slot_rows: bool,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Must match the checkpoint's config when both are given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    /// Comma-separated policy names.
    #[arg(long, value_delimiter = ',')]
    policy: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the JSON summaries here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "2,4,6,8,10")]
    k: Vec<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    policy: Vec<String>,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    /// Train fresh agents at each K for this many episodes before evaluating.
    #[arg(long)]
    train_episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV; stdout when omitted. Per-K training runs go next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    ckpt: PathBuf,
}

fn load_config(path: Option<&Path>) -> Result<SystemConfig, HarnessError> {
    Ok(match path {
        Some(p) => SystemConfig::load(p)?,
        None => SystemConfig::from_toml_str("")?,
    })
}

/// Copies the knobs that `train` flags may override, so a config file
/// matches the checkpoint it produced.
fn align_run_knobs(config: &SystemConfig, saved: &SystemConfig) -> SystemConfig {
    let mut c = config.clone();
    c.training.episodes = saved.training.episodes;
    c.training.seed = saved.training.seed;
    c.training.pure_dwm = saved.training.pure_dwm;
    c
}

fn default_policies(has_ckpt: bool) -> Vec<String> {
    let mut v = vec!["random".to_string(), "egt".to_string()];
    if has_ckpt {
        v.push("dwm".to_string());
        v.push("dwm-ro".to_string());
    }
    v
}

/// Drops rows of episodes the checkpoint has not reached, so a resumed run
/// does not duplicate them.
fn trim_metrics(path: &Path, next_episode: u64) -> Result<(), HarnessError> {
    if !path.exists() {
        return Ok(());
    }
    let rows: Vec<_> = read_metrics(path)?
        .into_iter()
        .filter(|r| r.episode < next_episode)
        .collect();
    let sink = MetricsSink::open(path, false)?;
    for r in rows {
        sink.send(r)?;
    }
    sink.close()
}

fn train(args: TrainArgs) -> Result<(), HarnessError> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(s) = args.seed {
        config.training.seed = s;
    }
    if let Some(n) = args.episodes {
        config.training.episodes = n;
    }
    if args.pure_dwm {
        config.training.pure_dwm = true;
    }
    config.validate()?;
    std::fs::create_dir_all(&args.out)?;
    let ckpt = args.out.join(CHECKPOINT_FILE);
    let metrics = args.out.join(METRICS_FILE);

    let mut trainer = if args.resume && ckpt.exists() {
        let c = Checkpoint::load(&ckpt)?;
        let saved = checkpoint_config(&c)?;
        let mut wanted = config.clone();
        wanted.training.episodes = saved.training.episodes;
        if wanted.hash() != saved.hash() {
            return Err(HarnessError::Checkpoint(
                "config differs from the checkpoint beyond the episode count".into(),
            ));
        }
        let mut t = Trainer::from_checkpoint(&c)?;
        t.set_episodes(config.training.episodes);
        trim_metrics(&metrics, t.next_episode)?;
        t
    } else {
        Trainer::new(&config)?
    };

    let sink = MetricsSink::open(&metrics, args.resume)?;
    let opts = TrainOptions {
        out_dir: args.out.clone(),
        slot_rows: args.slot_rows,
    };
    let result = trainer.run(&opts, &sink);
    sink.close()?;
    let report = result?;
    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(args.out.join(SUMMARY_FILE), &json)?;
    println!("{json}");
    Ok(())
}

/// Loads trained agents and the embedded config, checking an explicit
/// config against it.
fn load_agents(ckpt: &Path, config: Option<&Path>) -> Result<(Trainer, SystemConfig), HarnessError> {
    let c = Checkpoint::load(ckpt)?;
    let saved = checkpoint_config(&c)?;
    if let Some(p) = config {
        let given = align_run_knobs(&SystemConfig::load(p)?, &saved);
        if given.hash() != saved.hash() {
            return Err(HarnessError::Checkpoint(format!(
                "config hash {} does not match checkpoint hash {}",
                given.hash_hex(),
                saved.hash_hex()
            )));
        }
    }
    Ok((Trainer::from_checkpoint(&c)?, saved))
}

fn evaluate(args: EvaluateArgs) -> Result<(), HarnessError> {
    let (trainer, config) = match &args.ckpt {
        Some(p) => {
            let (t, c) = load_agents(p, args.config.as_deref())?;
            (Some(t), c)
        }
        None => (None, load_config(args.config.as_deref())?),
    };
    let seed = args.seed.unwrap_or(config.training.seed);
    let agents = trainer.as_ref().map(|t| t.agents.as_slice());
    let policies = if args.policy.is_empty() {
        default_policies(agents.is_some())
    } else {
        args.policy
    };
    let registry = PolicyRegistry::builtin();
    let mut out = Vec::new();
    for name in &policies {
        out.push(evaluate_named(&registry, name, &config, agents, seed, args.episodes)?);
    }
    let json = serde_json::to_string_pretty(&out)?;
    match args.out {
        Some(p) => std::fs::write(p, json)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn sweep_cmd(args: SweepArgs) -> Result<(), HarnessError> {
    let (trainer, config) = match &args.ckpt {
        Some(p) => {
            let (t, c) = load_agents(p, args.config.as_deref())?;
            (Some(t), c)
        }
        None => (None, load_config(args.config.as_deref())?),
    };
    let seed = args.seed.unwrap_or(config.training.seed);
    let registry = PolicyRegistry::builtin();
    let trains = args.train_episodes.is_some();
    let policies = if args.policy.is_empty() {
        default_policies(trainer.is_some() || trains)
    } else {
        args.policy
    };
    let names: Vec<&str> = policies.iter().map(String::as_str).collect();

    let rows: Vec<SweepRow> = match args.train_episodes {
        None => {
            let agents = trainer.as_ref().map(|t| t.agents.as_slice());
            sweep(&registry, &config, &args.k, &names, agents, seed, args.episodes)?
        }
        Some(n) => {
            let root = args
                .out
                .as_ref()
                .and_then(|p| p.parent().map(Path::to_path_buf))
                .unwrap_or_else(|| PathBuf::from("."));
            let mut rows = Vec::new();
            for &k in &args.k {
                let mut cfg = config.with_num_fues(k)?;
                cfg.training.episodes = n;
                let dir = root.join(format!("k{k}"));
                std::fs::create_dir_all(&dir)?;
                let mut t = Trainer::new(&cfg)?;
                let sink = MetricsSink::open(&dir.join(METRICS_FILE), false)?;
                let res = t.run(
                    &TrainOptions {
                        out_dir: dir.clone(),
                        slot_rows: false,
                    },
                    &sink,
                );
                sink.close()?;
                res?;
                rows.extend(sweep(&registry, &cfg, &[k], &names, Some(&t.agents), seed, args.episodes)?);
            }
            rows
        }
    };

    let write = |w: Box<dyn std::io::Write>| -> Result<(), HarnessError> {
        let mut csv = csv::Writer::from_writer(w);
        for r in &rows {
            csv.serialize(r)?;
        }
        csv.flush()?;
        Ok(())
    };
    match &args.out {
        Some(p) => write(Box::new(std::fs::File::create(p)?)),
        None => write(Box::new(std::io::stdout())),
    }
}

fn inspect(args: InspectArgs) -> Result<(), HarnessError> {
    let c = Checkpoint::load(&args.ckpt)?;
    let config = checkpoint_config(&c)?;
    println!("config_hash {}", config.hash_hex());
    println!("num_fues {}", config.num_fues());
    if let Ok(b) = c.get("meta.next_episode") {
        println!("next_episode {}", b.as_u64()?.first().copied().unwrap_or(0));
    }
    for (name, block) in &c.blocks {
        let shape: Vec<String> = block.shape.iter().map(usize::to_string).collect();
        println!("{name} {} [{}]", block.data.dtype_name(), shape.join(", "));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Inspect(a) => inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
