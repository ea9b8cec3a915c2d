use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use twinsem_core::experiment::{
    read_summary_csv, report, write_episodes_csv, write_slots_csv, Calibrate, Checkpoint, ConstraintCase, Experiment,
    ExperimentConfig, RunSummary, Scheme,
};
use twinsem_core::{Error, Result, TaskKind};

#[derive(Parser)]
#[command(name = "twinsem", version, about = "Semantic uplink simulator for a robot-arm digital twin")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Resolve channel parameters and print the analytic delivery probability.
    CalibrateChannel {
        #[command(flatten)]
        common: Common,
        /// Target delivery probability.
        #[arg(long)]
        target: Option<f64>,
        /// Solve for the transmit threshold instead of the mean gain.
        #[arg(long)]
        beta: bool,
    },
    /// Run the Wired, Wireless and FS schemes.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scheme: Option<Scheme>,
    },
    /// Train the transmission gate against a wireless baseline.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        constraint: ConstraintArgs,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Evaluate a checkpoint next to the Wireless and FS schemes.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        scheme: Option<Scheme>,
    },
    /// Merge summary CSVs of one task into a comparison table.
    Report {
        /// summary.csv files to combine.
        #[arg(long = "input", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Export the ground-truth trajectory of a task script.
    Trajectory {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<TaskKind>,
    #[arg(long)]
    chain: Option<PathBuf>,
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed_trajectory: Option<u64>,
    #[arg(long)]
    seed_channel: Option<u64>,
    #[arg(long)]
    seed_agent: Option<u64>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    /// Use the published channel parameters without calibration.
    #[arg(long)]
    paper_params: bool,
}

#[derive(Args, Clone, Default)]
struct ConstraintArgs {
    /// sc, rc or custom.
    #[arg(long)]
    constraint: Option<String>,
    #[arg(long)]
    c_q: Option<f64>,
    #[arg(long)]
    c_qdot: Option<f64>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(t) = self.task {
            if self.config.is_some() && t != cfg.task && self.script.is_none() {
                cfg.script = None;
            }
            cfg.task = t;
        }
        if let Some(p) = &self.chain {
            cfg.chain = Some(p.clone());
        }
        if let Some(p) = &self.script {
            cfg.script = Some(p.clone());
        }
        if let Some(p) = &self.out_dir {
            cfg.out_dir = p.clone();
        }
        if let Some(s) = self.seed_trajectory {
            cfg.seeds.trajectory = s;
        }
        if let Some(s) = self.seed_channel {
            cfg.seeds.channel = s;
        }
        if let Some(s) = self.seed_agent {
            cfg.seeds.agent = s;
        }
        if let Some(n) = self.eval_episodes {
            cfg.eval_episodes = n;
        }
        if self.paper_params {
            cfg.channel.paper_params = true;
        }
        Ok(cfg)
    }
}

impl ConstraintArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        let Some(case) = &self.constraint else {
            return Ok(());
        };
        cfg.constraint = match case.to_ascii_lowercase().as_str() {
            "sc" => ConstraintCase::Sc,
            "rc" => ConstraintCase::Rc,
            "custom" => match (self.c_q, self.c_qdot) {
                (Some(c_q), Some(c_qdot)) => ConstraintCase::Custom { c_q, c_qdot },
                _ => return Err(Error::Config("custom constraint needs --c-q and --c-qdot".into())),
            },
            other => return Err(Error::Config(format!("unknown constraint `{other}`"))),
        };
        Ok(())
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|e| Error::io(&path, e))
}

fn prepare_out(cfg: &ExperimentConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    Ok(cfg.out_dir.clone())
}

fn write_summary(dir: &Path, rows: &[RunSummary]) -> Result<String> {
    let rep = report(rows)?;
    rep.write_csv(create(dir, "summary.csv")?)?;
    let text = rep.to_text();
    let path = dir.join("summary.txt");
    std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    Ok(text)
}

/// Evaluate `schemes`, writing the first episode of each to `slots.csv`.
fn evaluate(
    ex: &Experiment,
    dir: &Path,
    schemes: &[Scheme],
    mut agent: Option<(&mut twinsem_core::agent::DqnAgent, String)>,
) -> Result<Vec<RunSummary>> {
    let mut summaries = Vec::new();
    let mut traces = Vec::new();
    for &scheme in schemes {
        let (logs, label) = match (scheme, agent.as_mut()) {
            (Scheme::FsPpdqn, Some((a, label))) => (ex.run_scheme(scheme, Some(&mut **a))?, label.clone()),
            _ => (ex.run_scheme(scheme, None)?, scheme.label().to_string()),
        };
        summaries.push(ex.summarize(scheme, Some(&label), &logs));
        traces.push((label, logs.into_iter().next().unwrap_or_default()));
    }
    let refs: Vec<_> = traces.iter().map(|(l, log)| (l.clone(), 0, log)).collect();
    write_slots_csv(create(dir, "slots.csv")?, &refs)?;
    Ok(summaries)
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::CalibrateChannel { common, target, beta } => {
            let mut cfg = common.config()?;
            if let Some(t) = target {
                cfg.channel.target_delivery = t;
            }
            if beta {
                cfg.channel.calibrate = Calibrate::Beta;
            }
            let params = cfg.channel.resolve()?;
            let out = json!({
                "params": params,
                "threshold_gain": params.threshold_gain(),
                "delivery_probability": params.delivery_probability(),
            });
            let text = serde_json::to_string_pretty(&out)?;
            if common.out_dir.is_some() {
                let dir = prepare_out(&cfg)?;
                let path = dir.join("channel.json");
                std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
            }
            println!("{text}");
        }
        Cmd::Baseline { common, scheme } => {
            let mut cfg = common.config()?;
            if scheme.is_some() {
                cfg.scheme = scheme;
            }
            let schemes = match cfg.scheme {
                Some(Scheme::FsPpdqn) => return Err(Error::Config("baseline does not run FS&PPDQN; use eval".into())),
                Some(s) => vec![s],
                None => vec![Scheme::Wired, Scheme::Wireless, Scheme::Fs],
            };
            let ex = Experiment::new(cfg)?;
            let dir = prepare_out(&ex.cfg)?;
            let rows = evaluate(&ex, &dir, &schemes, None)?;
            print!("{}", write_summary(&dir, &rows)?);
        }
        Cmd::Train { common, constraint, episodes } => {
            let mut cfg = common.config()?;
            constraint.apply(&mut cfg)?;
            if let Some(n) = episodes {
                cfg.train_episodes = n;
            }
            let ex = Experiment::new(cfg)?;
            let dir = prepare_out(&ex.cfg)?;
            let baseline = ex.wireless_baseline()?;
            let total = ex.cfg.train_episodes;
            let mut t = ex.train(ex.cfg.constraint, Some(&baseline), |r| {
                if (r.episode + 1) % 100 == 0 || r.episode + 1 == total {
                    eprintln!(
                        "episode {}/{total}: load {} e_q {:.3e} e_qdot {:.3e} lambda ({:.3e}, {:.3e}) eps {:.3}",
                        r.episode + 1,
                        r.cumulative_load,
                        r.mean_e_q,
                        r.mean_e_qdot,
                        r.lambda_q,
                        r.lambda_qdot,
                        r.epsilon
                    );
                }
            })?;
            write_episodes_csv(create(&dir, "episodes.csv")?, &t.rows)?;
            Checkpoint::from_training(ex.cfg.task, &t).save(&dir.join("checkpoint.json"))?;
            let label = format!("{}({})", Scheme::FsPpdqn.label(), t.case.label());
            let rows =
                evaluate(&ex, &dir, &[Scheme::Wireless, Scheme::Fs, Scheme::FsPpdqn], Some((&mut t.agent, label)))?;
            print!("{}", write_summary(&dir, &rows)?);
        }
        Cmd::Eval { common, checkpoint, scheme } => {
            let mut cfg = common.config()?;
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint;
            }
            if scheme.is_some() {
                cfg.scheme = scheme;
            }
            let ck_path = cfg.checkpoint.clone().ok_or_else(|| Error::Config("eval needs --checkpoint".into()))?;
            let ck = Checkpoint::load(&ck_path)?;
            if ck.task != cfg.task {
                return Err(Error::Config(format!("checkpoint was trained on {}, config task is {}", ck.task, cfg.task)));
            }
            let schemes = match cfg.scheme {
                Some(s) => vec![s],
                None => vec![Scheme::Wireless, Scheme::Fs, Scheme::FsPpdqn],
            };
            let ex = Experiment::new(cfg)?;
            let dir = prepare_out(&ex.cfg)?;
            let mut agent = ck.agent()?;
            let label = format!("{}({})", Scheme::FsPpdqn.label(), ck.case.label());
            let rows = evaluate(&ex, &dir, &schemes, Some((&mut agent, label)))?;
            print!("{}", write_summary(&dir, &rows)?);
        }
        Cmd::Report { inputs, out_dir } => {
            let mut rows = Vec::new();
            for p in &inputs {
                rows.extend(read_summary_csv(p)?);
            }
            let rep = report(&rows)?;
            if let Some(dir) = out_dir {
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                write_summary(&dir, &rows)?;
            }
            print!("{}", rep.to_text());
        }
        Cmd::Trajectory { common } => {
            let cfg = common.config()?;
            let ex = Experiment::new(cfg)?;
            let dir = prepare_out(&ex.cfg)?;
            ex.traj.write_csv(create(&dir, "trajectory.csv")?)?;
            println!("{} slots written to {}", ex.traj.len(), dir.join("trajectory.csv").display());
        }
    }
    Ok(())
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim_end().to_string(), 2),
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), e.to_string(), if e.kind() == "config" { 2 } else { 1 }),
    }
}
