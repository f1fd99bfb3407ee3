//! `crowdnav`: train, evaluate and export crowd-navigation policies.

mod manifest;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crowdnav::config::Config;
use crowdnav::evaluation::{format_table, report_json};
use crowdnav::export::{read_records, select_record, validate, write_records, TrajectoryFile};
use crowdnav::pipeline::{self, PolicyKind};
use crowdnav::reward::Ablation;
use crowdnav::simulation::EnvType;
use crowdnav::training::LogLine;
use crowdnav::valuenet::{load_checkpoint_for, save_checkpoint};
use crowdnav::{Error, Result};

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "crowdnav", version, about = "Crowd-aware robot navigation workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Imitation stage then V-learning; writes a checkpoint and a training log.
    Train(TrainArgs),
    /// Greedy seeded evaluation; writes reports and episode records.
    Eval(EvalArgs),
    /// Writes one episode of a record file as a trajectory file.
    Export(ExportArgs),
    /// Collects ORCA demonstrations only.
    Demo(DemoArgs),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the static-obstacle environment.
    #[arg(long, value_parser = parse_env)]
    env: Option<EnvType>,
    /// Overrides the reward variant.
    #[arg(long, value_parser = parse_ablation)]
    ablation: Option<Ablation>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Overrides the number of RL episodes.
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Number of evaluation episodes.
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long, default_value = "net", value_parser = parse_policy)]
    policy: PolicyKind,
    /// Checkpoint for `--policy net`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Parallel episode workers; defaults to the available cores.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct ExportArgs {
    /// Episode record file written by `eval`.
    #[arg(long)]
    records: PathBuf,
    /// Position of the episode in the record file.
    #[arg(long)]
    index: usize,
    /// Trajectory file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DemoArgs {
    #[command(flatten)]
    common: Common,
    /// Number of demonstration episodes.
    #[arg(long)]
    episodes: Option<usize>,
}

fn parse_env(s: &str) -> std::result::Result<EnvType, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_ablation(s: &str) -> std::result::Result<Ablation, String> {
    s.parse()
}

fn parse_policy(s: &str) -> std::result::Result<PolicyKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } => 2,
        Error::Io { .. } => 3,
        Error::Divergence(_) => 4,
        Error::CheckpointVersion { .. } | Error::Dimension(_) => 5,
        Error::IndexOutOfRange { .. } => 6,
        _ => 1,
    }
}

fn load_config(c: &Common) -> Result<Config> {
    let mut cfg = Config::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.train.seed = seed;
        cfg.eval.seed = Some(seed);
    }
    if let Some(env) = c.env {
        cfg.scenario.env_type = env;
    }
    if let Some(a) = c.ablation {
        cfg.ablation = a;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// JSON Lines sink for [`LogLine`]s.
struct LogWriter {
    path: PathBuf,
    out: BufWriter<fs::File>,
}

impl LogWriter {
    fn create(path: PathBuf) -> Result<Self> {
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            path,
            out: BufWriter::new(file),
        })
    }

    fn line(&mut self, l: &LogLine) -> Result<()> {
        serde_json::to_writer(&mut self.out, l).map_err(|e| Error::parse("log line", e))?;
        self.out.write_all(b"\n").map_err(|e| Error::io(&self.path, e))?;
        match l {
            LogLine::Imitation { epoch, loss } => log::info!("imitation epoch {epoch}: loss {loss:.6}"),
            LogLine::Rl { episode, outcome, .. } if (episode + 1) % 100 == 0 => {
                log::info!("rl episode {}: {}", episode + 1, outcome.name())
            }
            LogLine::Demonstrations { episodes, success, .. } => {
                log::info!("demonstrations: {success}/{episodes} successful")
            }
            _ => {}
        }
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(n) = args.episodes {
        cfg.train.rl_episodes = n;
    }
    let out = &args.common.out;
    prepare_out(out)?;
    let paths = [
        out.join("config.toml"),
        out.join("train_log.jsonl"),
        out.join("checkpoint_il.json"),
        out.join("checkpoint.json"),
    ];
    RunManifest::new("train", cfg.hash(), cfg.train.seed, paths.to_vec()).write(out)?;
    write_text(&paths[0], &cfg.to_toml())?;
    let mut log = LogWriter::create(paths[1].clone())?;
    let mut sink = |l: &LogLine| log.line(l);
    let trained = pipeline::imitation(&cfg, &mut sink).and_then(|(il, demos)| {
        save_checkpoint(&il, &paths[2])?;
        pipeline::reinforce(&cfg, il, demos, &mut sink)
    });
    let trained = trained.map_err(|e| match e {
        Error::Divergence(m) => Error::Divergence(format!("{m}; see {}", paths[1].display())),
        other => other,
    });
    log.finish()?;
    save_checkpoint(&trained?, &paths[3])?;
    println!("checkpoint written to {}", paths[3].display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(n) = args.episodes {
        cfg.eval.episodes = n;
    }
    let params = match (args.policy, &args.checkpoint) {
        (PolicyKind::Net, Some(p)) => Some(load_checkpoint_for(p, &cfg.network)?),
        (PolicyKind::Net, None) => {
            return Err(Error::Config("--policy net requires --checkpoint".into()));
        }
        _ => None,
    };
    let workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let out = &args.common.out;
    prepare_out(out)?;
    let paths = [
        out.join("report.json"),
        out.join("report.txt"),
        out.join("episodes.jsonl"),
    ];
    let seed = cfg.eval_seed();
    RunManifest::new("eval", cfg.hash(), seed, paths.to_vec()).write(out)?;
    let (report, records) = pipeline::evaluate(&cfg, args.policy, params.as_ref(), cfg.eval.episodes, seed, workers)?;
    write_text(&paths[0], &report_json(&report))?;
    let label = match args.policy {
        PolicyKind::Net => format!("net ({})", cfg.ablation.name()),
        PolicyKind::Orca => "orca".to_string(),
        PolicyKind::Straight => "straight".to_string(),
    };
    let table = format_table(&[(label.as_str(), &report)]);
    write_text(&paths[1], &table)?;
    write_records(&paths[2], &records)?;
    print!("{table}");
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    let records = read_records(&args.records)?;
    let rec = select_record(&records, args.index)?;
    let file = TrajectoryFile::from_record(rec);
    let problems = validate(&file);
    if let Some(v) = problems.first() {
        return Err(Error::parse("trajectory", v));
    }
    file.write(&args.out)?;
    println!("episode {} written to {}", args.index, args.out.display());
    Ok(())
}

fn cmd_demo(args: DemoArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(n) = args.episodes {
        cfg.train.il_episodes = n;
    }
    let out = &args.common.out;
    prepare_out(out)?;
    let paths = [out.join("demo_log.jsonl"), out.join("demonstrations.jsonl")];
    RunManifest::new("demo", cfg.hash(), cfg.train.seed, paths.to_vec()).write(out)?;
    let mut log = LogWriter::create(paths[0].clone())?;
    let data = pipeline::demonstrations(&cfg, &mut |l| log.line(l))?;
    log.finish()?;
    let mut w = LogWriter::create(paths[1].clone())?;
    for e in &data {
        serde_json::to_writer(&mut w.out, e).map_err(|e| Error::parse("experience", e))?;
        w.out.write_all(b"\n").map_err(|e| Error::io(&paths[1], e))?;
    }
    w.finish()?;
    println!("{} experiences written to {}", data.len(), paths[1].display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Export(a) => cmd_export(a),
        Command::Demo(a) => cmd_demo(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
