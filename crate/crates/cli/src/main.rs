use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gridmarl::config::{parse_config, Mode, ScenarioConfig};
use gridmarl::experiment::{
    battery_sweep, loss_sweep, mean_se, par_map, run_seed, BatteryCell, LossPoint, BATTERY_GRID_KWH, BETA_GRID,
};
use gridmarl::metrics::{save_slots_csv, LearningCurves, MetricsBundle};
use gridmarl::sim::{evaluate, evaluate_conventional, train_with, Agents, EpisodeRecord, ProfileSource};
use gridmarl::Error;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "gridmarl", version, about = "Multi-agent DQN microgrid demand-response simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train agents, then evaluate them greedily.
    Train(Common),
    /// Evaluate saved agents.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory holding spa.json and pa_<j>.json.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Evaluate the rule-based baseline.
    Baseline(Common),
    /// Train and evaluate over a grid of battery capacities.
    SweepBattery {
        #[command(flatten)]
        common: Common,
        /// Number of consecutive seeds starting at the master seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
    /// Re-settle one evaluation trace under a grid of loss coefficients.
    SweepLoss {
        #[command(flatten)]
        common: Common,
        /// Reuse saved agents instead of training.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Trace::Agent)]
        trace: Trace,
    },
    /// Tabulate every summary.json below a directory.
    Report {
        /// Results directory to scan.
        dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Trace {
    Agent,
    Conventional,
}

#[derive(Args, Clone)]
struct Common {
    /// Config file, or a preset name (scenario1, scenario2).
    #[arg(long, default_value = "scenario1")]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, env = "GRIDMARL_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<usize>,
    /// 64-wide networks.
    #[arg(long)]
    small: bool,
    /// Worker threads for independent runs.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

#[derive(Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    command: String,
    config_hash: String,
    master_seed: u64,
    mode: Mode,
    episodes: usize,
    status: &'static str,
    artifacts: Vec<PathBuf>,
}

/// Failure classes map onto exit codes.
enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

fn runtime(e: Error) -> Failure {
    Failure::Runtime(e.to_string())
}

fn load_config(c: &Common) -> Result<ScenarioConfig, Failure> {
    let mut cfg = parse_config(&c.config).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(e) = c.episodes {
        cfg.training.set_episodes(e);
    }
    if c.small {
        cfg.training = cfg.training.clone().small();
    }
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(cfg)
}

struct Run {
    out: PathBuf,
    manifest: RunManifest,
}

impl Run {
    /// Creates the output directory and writes the manifest before any work.
    fn start(command: &str, cfg: &ScenarioConfig, out: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(out).map_err(|e| runtime(Error::Io { path: out.into(), source: e }))?;
        let run = Run {
            out: out.to_path_buf(),
            manifest: RunManifest {
                tool: env!("CARGO_PKG_NAME"),
                version: env!("CARGO_PKG_VERSION"),
                command: command.to_string(),
                config_hash: cfg.hash_hex(),
                master_seed: cfg.seed,
                mode: cfg.mode,
                episodes: cfg.training.episodes,
                status: "running",
                artifacts: Vec::new(),
            },
        };
        run.write_manifest()?;
        Ok(run)
    }

    fn write_manifest(&self) -> Result<(), Failure> {
        write_json(&self.out.join("manifest.json"), &self.manifest)
    }

    fn path(&mut self, rel: impl AsRef<Path>) -> Result<PathBuf, Failure> {
        let rel = rel.as_ref().to_path_buf();
        let full = self.out.join(&rel);
        if let Some(dir) = full.parent() {
            fs::create_dir_all(dir).map_err(|e| runtime(Error::Io { path: dir.into(), source: e }))?;
        }
        self.manifest.artifacts.push(rel);
        Ok(full)
    }

    fn finish(mut self) -> Result<(), Failure> {
        self.manifest.status = "complete";
        self.write_manifest()
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| runtime(Error::Io { path: path.into(), source: e }))
}

fn write_records(run: &mut Run, dir: &str, records: &[EpisodeRecord], curves: Option<LearningCurves>) -> Result<(), Failure> {
    let mut bundle = MetricsBundle::from_records(records).map_err(runtime)?;
    bundle.learning_curves = curves;
    bundle.save(run.path(format!("{dir}summary.json"))?).map_err(runtime)?;
    save_slots_csv(records, run.path(format!("{dir}slots.csv"))?).map_err(runtime)
}

fn train_agents(cfg: &ScenarioConfig, run: &mut Run) -> Result<(Agents, LearningCurves), Failure> {
    let source = ProfileSource::from_config(cfg).map_err(|e| Failure::Config(e.to_string()))?;
    let every = cfg.training.checkpoint_every;
    let total = cfg.training.episodes;
    let ckpt_root = run.out.join("checkpoints");
    let outcome = train_with(cfg, source, |summary, agents| {
        let done = summary.episode + 1;
        if done % 100 == 0 || done == total {
            eprintln!(
                "episode {done}/{total}  eps {:.3}  sp profit {:.3} $",
                summary.epsilon, summary.sp_profit
            );
        }
        if every.is_some_and(|n| n > 0 && done % n == 0) {
            agents.save(&ckpt_root.join(format!("episode_{done}")))?;
        }
        Ok(())
    })
    .map_err(runtime)?;
    let final_dir = run.path("checkpoints/final/spa.json")?;
    outcome.agents.save(final_dir.parent().expect("has parent")).map_err(runtime)?;
    let curves = LearningCurves::from_episodes(&outcome.episodes, cfg.training.moving_average_window).map_err(runtime)?;
    write_json(&run.path("training.json")?, &outcome.episodes)?;
    Ok((outcome.agents, curves))
}

fn cmd_train(c: &Common) -> Result<(), Failure> {
    let mut cfg = load_config(c)?;
    cfg.mode = Mode::AgentBased;
    let mut run = Run::start("train", &cfg, &c.out)?;
    let (mut agents, curves) = train_agents(&cfg, &mut run)?;
    let records = evaluate(&cfg, &mut agents, cfg.training.eval_days).map_err(runtime)?;
    write_records(&mut run, "", &records, Some(curves))?;
    run.finish()
}

fn cmd_evaluate(c: &Common, checkpoint: &Path) -> Result<(), Failure> {
    let mut cfg = load_config(c)?;
    cfg.mode = Mode::AgentBased;
    let mut run = Run::start("evaluate", &cfg, &c.out)?;
    let mut agents = Agents::load(checkpoint, cfg.n_prosumers()).map_err(runtime)?;
    let records = evaluate(&cfg, &mut agents, cfg.training.eval_days).map_err(runtime)?;
    write_records(&mut run, "", &records, None)?;
    run.finish()
}

fn cmd_baseline(c: &Common) -> Result<(), Failure> {
    let mut cfg = load_config(c)?;
    cfg.mode = Mode::Conventional;
    let mut run = Run::start("baseline", &cfg, &c.out)?;
    let records = evaluate_conventional(&cfg, cfg.training.eval_days).map_err(runtime)?;
    write_records(&mut run, "", &records, None)?;
    run.finish()
}

#[derive(Serialize)]
struct BatteryPoint {
    capacity_kwh: f64,
    agent_mean_bill_usd: f64,
    agent_mean_bill_se: f64,
    conventional_mean_bill_usd: f64,
    agent_sp_profit_usd: f64,
    agent_sp_profit_se: f64,
    conventional_sp_profit_usd: f64,
    relative_bill_usd: f64,
    relative_sp_profit_usd: f64,
}

fn battery_points(cells: &[BatteryCell]) -> Vec<BatteryPoint> {
    let mut caps: Vec<f64> = cells.iter().map(|c| c.capacity_kwh).collect();
    caps.dedup();
    caps.iter()
        .map(|&cap| {
            let at: Vec<&BatteryCell> = cells.iter().filter(|c| c.capacity_kwh == cap).collect();
            let col = |f: &dyn Fn(&BatteryCell) -> f64| at.iter().map(|c| f(c)).collect::<Vec<_>>();
            let stats = mean_se(&[
                col(&|c| c.agent.mean_daily_bill_usd),
                col(&|c| c.conventional.mean_daily_bill_usd),
                col(&|c| c.agent.sp_daily_profit_usd),
                col(&|c| c.conventional.sp_daily_profit_usd),
                col(&|c| c.relative_bill()),
                col(&|c| c.relative_sp_profit()),
            ]);
            BatteryPoint {
                capacity_kwh: cap,
                agent_mean_bill_usd: stats[0].0,
                agent_mean_bill_se: stats[0].1,
                conventional_mean_bill_usd: stats[1].0,
                agent_sp_profit_usd: stats[2].0,
                agent_sp_profit_se: stats[2].1,
                conventional_sp_profit_usd: stats[3].0,
                relative_bill_usd: stats[4].0,
                relative_sp_profit_usd: stats[5].0,
            }
        })
        .collect()
}

fn cmd_sweep_battery(c: &Common, n_seeds: u64) -> Result<(), Failure> {
    let cfg = load_config(c)?;
    let mut run = Run::start("sweep-battery", &cfg, &c.out)?;
    let seeds: Vec<u64> = (0..n_seeds.max(1)).map(|k| cfg.seed + k).collect();
    let cells = battery_sweep(&cfg, &BATTERY_GRID_KWH, &seeds, c.parallel).map_err(runtime)?;
    for cell in &cells {
        let dir = format!("battery_{}kwh/seed_{}", cell.capacity_kwh, cell.seed);
        cell.agent.save(run.path(format!("{dir}/summary.json"))?).map_err(runtime)?;
        cell.conventional
            .save(run.path(format!("{dir}/conventional_summary.json"))?)
            .map_err(runtime)?;
    }
    write_json(&run.path("sweep_battery.json")?, &battery_points(&cells))?;
    run.finish()
}

fn cmd_sweep_loss(c: &Common, checkpoint: Option<&Path>, trace: Trace) -> Result<(), Failure> {
    let mut cfg = load_config(c)?;
    cfg.mode = Mode::AgentBased;
    let mut run = Run::start("sweep-loss", &cfg, &c.out)?;
    let records = match (trace, checkpoint) {
        (Trace::Conventional, _) => evaluate_conventional(&cfg, cfg.training.eval_days).map_err(runtime)?,
        (Trace::Agent, Some(dir)) => {
            let mut agents = Agents::load(dir, cfg.n_prosumers()).map_err(runtime)?;
            evaluate(&cfg, &mut agents, cfg.training.eval_days).map_err(runtime)?
        }
        (Trace::Agent, None) => {
            let seeds = [cfg.seed];
            let runs = par_map(&seeds, 1, |&s| run_seed(&cfg, s)).map_err(runtime)?;
            runs.into_iter().next().expect("one seed").agent_records
        }
    };
    save_slots_csv(&records, run.path("trace_slots.csv")?).map_err(runtime)?;
    let points: Vec<LossPoint> = loss_sweep(&records, &cfg, &BETA_GRID).map_err(runtime)?;
    write_json(&run.path("sweep_loss.json")?, &points)?;
    run.finish()
}

fn find_summaries(dir: &Path, found: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            find_summaries(&p, found)?;
        } else if p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with("summary.json")) {
            found.push(p);
        }
    }
    Ok(())
}

fn cmd_report(dir: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let mut found = Vec::new();
    find_summaries(dir, &mut found).map_err(|e| Failure::Config(format!("{}: {e}", dir.display())))?;
    if found.is_empty() {
        return Err(Failure::Config(format!("{}: no summary.json found", dir.display())));
    }
    let mut text = format!(
        "{:<60} {:>5} {:>12} {:>12} {:>12}\n",
        "summary", "days", "bill $/day", "sp $/day", "reserve kWh"
    );
    for path in &found {
        let m = MetricsBundle::load(path).map_err(runtime)?;
        let name = path.strip_prefix(dir).unwrap_or(path).display().to_string();
        text += &format!(
            "{:<60} {:>5} {:>12.4} {:>12.4} {:>12.3}\n",
            name, m.days, m.mean_daily_bill_usd, m.sp_daily_profit_usd, m.reserve_daily_energy_kwh
        );
    }
    print!("{text}");
    if let Some(out) = out {
        fs::create_dir_all(out).map_err(|e| runtime(Error::Io { path: out.into(), source: e }))?;
        let path = out.join("report.txt");
        fs::write(&path, text).map_err(|e| runtime(Error::Io { path, source: e }))?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Train(c) => cmd_train(c),
        Command::Evaluate { common, checkpoint } => cmd_evaluate(common, checkpoint),
        Command::Baseline(c) => cmd_baseline(c),
        Command::SweepBattery { common, seeds } => cmd_sweep_battery(common, *seeds),
        Command::SweepLoss {
            common,
            checkpoint,
            trace,
        } => cmd_sweep_loss(common, checkpoint.as_deref(), *trace),
        Command::Report { dir, out } => cmd_report(dir, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(m) => eprintln!("config error: {m}"),
                Failure::Runtime(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
