use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ciao_core::nn::Checkpoint;
use ciao_core::runner::{self, RunManifest};
use ciao_core::train::{evaluate, ExperimentConfig, Learner, Preset};
use ciao_core::world::{EnvConfig, EnvKind};
use ciao_core::Result;

#[derive(Parser)]
#[command(name = "ciao", about = "Open ad hoc teamwork experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one learner per seed and write CSV metrics.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated training seeds.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint (or a uniform-random learner) greedily.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, conflicts_with = "random", required_unless_present = "random")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        random: bool,
        /// Maximum team size of the evaluation environment.
        #[arg(long, default_value_t = 5)]
        players: usize,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the exhaustive game-theory and tabular Bellman checks.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        instances: usize,
    },
    /// Mean and 95% interval across seeds of matching eval CSVs.
    Aggregate {
        #[arg(required = true, num_args = 2..)]
        files: Vec<PathBuf>,
        /// Write the summary here instead of printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment config; unspecified fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Algorithm preset, e.g. ciao-c, ciao-s-zi, gpl.
    #[arg(long)]
    preset: Option<Preset>,
    /// Environment (wolfpack or lbf) with its default settings.
    #[arg(long)]
    env: Option<EnvKind>,
    /// Total environment steps.
    #[arg(long)]
    steps: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => runner::load_config(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(kind) = self.env {
            c.env = EnvConfig::for_kind(kind, c.num_players_train);
        }
        if let Some(p) = self.preset {
            c = c.with_preset(p);
        }
        if let Some(s) = self.steps {
            c.max_num_steps = s;
        }
        c.validate()?;
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { config, seeds, out } => {
            let manifest = RunManifest::new(config.resolve()?, seeds, out)?;
            println!("config {}", manifest.hash);
            for o in runner::run_experiment(&manifest)? {
                println!("seed {}: {}", o.seed, o.train_csv.display());
                for (_, p) in &o.eval_csvs {
                    println!("seed {}: {}", o.seed, p.display());
                }
            }
        }
        Command::Eval { config, checkpoint, random: _, players, episodes, seed } => {
            let c = config.resolve()?;
            let learner = match checkpoint {
                Some(p) => Some(Learner::from_checkpoint(&c, &Checkpoint::load(&p)?)?),
                None => None,
            };
            let env = c.test_env(players);
            let ret = evaluate(learner.as_ref(), &env, episodes.unwrap_or(c.eval_eps), seed, c.embed)?;
            println!("{ret}");
        }
        Command::Verify { seed, instances } => {
            let checks = runner::verify(seed, instances)?;
            for c in &checks {
                let tag = if c.ok() { "PASS" } else { "FAIL" };
                println!("{tag} {} ({}/{})", c.name, c.passed, c.total);
            }
            return Ok(checks.iter().all(|c| c.ok()));
        }
        Command::Aggregate { files, out } => {
            let rows = runner::aggregate(&files)?;
            match out {
                Some(p) => runner::write_summary(&p, &rows)?,
                None => {
                    println!("episode,steps,mean,ci_low,ci_high,seeds");
                    for r in rows {
                        println!("{},{},{},{},{},{}", r.episode, r.steps, r.mean, r.ci_low, r.ci_high, r.seeds);
                    }
                }
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
