//! Experiment orchestration.
//!
//! A run trains one learner per seed with `num_players_train` agents and,
//! every `saving_frequency` episodes, evaluates the greedy policy for
//! `eval_eps` episodes in each `num_players_test` environment. Output per
//! seed lives in `<out>/seed_<seed>/`:
//!
//! * `train.csv`: `episode,steps,mean_return,td_loss,reg_loss,agent_nll,epsilon`
//! * `eval_<n>.csv`: `episode,steps,mean_return`
//! * `learner.ckpt`: final parameters
//!
//! `<out>/manifest.toml` records the resolved config, the seeds and the
//! config hash.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cag::{AffinityGame, CoalitionStructure, LatticeSpec};
use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::tabular::{
    bellman_backup, dvsc_check, exact_factorized_q, value_iteration, Backup, GameSpec, LearnerPolicy,
};
use crate::train::{derive_seed, evaluate, train, EpisodeMetrics, ExperimentConfig};

/// 97.5% quantile of the standard normal.
pub const Z_95: f64 = 1.96;

const EVAL_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Hex SHA-256 of `blob <len>\0<canonical config>`.
    pub hash: String,
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Canonical TOML text of a config: every field, in declaration order.
pub fn canonical_config(config: &ExperimentConfig) -> Result<String> {
    toml::to_string(config).map_err(|e| Error::Parse(e.to_string()))
}

pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let text = canonical_config(config)?;
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", text.len()).as_bytes());
    h.update(text.as_bytes());
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn new(config: ExperimentConfig, seeds: Vec<u64>, out_dir: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        if seeds.is_empty() {
            return Err(Error::domain("a run needs at least one seed"));
        }
        let hash = config_hash(&config)?;
        Ok(RunManifest { config, seeds, out_dir: out_dir.into(), hash })
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.out_dir.join(format!("seed_{seed}"))
    }

    pub fn write(&self) -> Result<PathBuf> {
        fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;
        let path = self.out_dir.join("manifest.toml");
        let text = toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub episode: usize,
    pub steps: usize,
    pub mean_return: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedOutput {
    pub seed: u64,
    pub train_csv: PathBuf,
    /// `(max agents, path)` per test environment.
    pub eval_csvs: Vec<(usize, PathBuf)>,
    pub checkpoint: PathBuf,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_eval_csv(path: &Path) -> Result<Vec<EvalRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

/// Seed of the evaluation environments for one training seed. The same
/// episodes are replayed at every checkpoint.
pub fn eval_seed(config: &ExperimentConfig, max_agents: usize) -> u64 {
    derive_seed(config.eval_init_seed, EVAL_STREAM, config.seed ^ ((max_agents as u64) << 32))
}

/// Trains and evaluates every seed of the manifest.
pub fn run_experiment(manifest: &RunManifest) -> Result<Vec<SeedOutput>> {
    manifest.write()?;
    let mut outputs = Vec::with_capacity(manifest.seeds.len());
    for &seed in &manifest.seeds {
        let mut config = manifest.config.clone();
        config.seed = seed;
        let dir = manifest.seed_dir(seed);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

        let tests = config.num_players_test.clone();
        let mut evals: Vec<Vec<EvalRow>> = vec![Vec::new(); tests.len()];
        let out = train(&config, |learner, m: &EpisodeMetrics| {
            if (m.episode + 1) % config.saving_frequency != 0 {
                return Ok(());
            }
            for (rows, &n) in evals.iter_mut().zip(&tests) {
                let ret = evaluate(Some(learner), &config.test_env(n), config.eval_eps, eval_seed(&config, n), config.embed)?;
                rows.push(EvalRow { episode: m.episode, steps: m.steps, mean_return: ret });
            }
            Ok(())
        })?;

        let train_csv = dir.join("train.csv");
        write_csv(&train_csv, &out.metrics)?;
        let mut eval_csvs = Vec::with_capacity(tests.len());
        for (rows, &n) in evals.iter().zip(&tests) {
            let path = dir.join(format!("eval_{n}.csv"));
            write_csv(&path, rows)?;
            eval_csvs.push((n, path));
        }
        let checkpoint = dir.join("learner.ckpt");
        out.learner.checkpoint().save(&checkpoint)?;
        outputs.push(SeedOutput { seed, train_csv, eval_csvs, checkpoint });
    }
    Ok(outputs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub episode: usize,
    pub steps: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub seeds: usize,
}

/// Mean and `Z_95 * sd / sqrt(n)` half-width (sample sd) per checkpoint.
pub fn aggregate_series(series: &[Vec<EvalRow>]) -> Result<Vec<SummaryRow>> {
    if series.len() < 2 {
        return Err(Error::domain(format!("aggregation needs at least 2 seeds, got {}", series.len())));
    }
    let grid: Vec<(usize, usize)> = series[0].iter().map(|r| (r.episode, r.steps)).collect();
    for (i, s) in series.iter().enumerate().skip(1) {
        if s.len() != grid.len() || s.iter().zip(&grid).any(|(r, g)| (r.episode, r.steps) != *g) {
            return Err(Error::domain(format!("series {i} has a different checkpoint grid")));
        }
    }
    let n = series.len() as f64;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(c, &(episode, steps))| {
            let xs: Vec<f64> = series.iter().map(|s| s[c].mean_return).collect();
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let half = Z_95 * var.sqrt() / n.sqrt();
            SummaryRow { episode, steps, mean, ci_low: mean - half, ci_high: mean + half, seeds: series.len() }
        })
        .collect())
}

pub fn aggregate(paths: &[PathBuf]) -> Result<Vec<SummaryRow>> {
    let series = paths.iter().map(|p| read_eval_csv(p)).collect::<Result<Vec<_>>>()?;
    aggregate_series(&series)
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_csv(path, rows)
}

/// Outcome of one property family in [`verify`].
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: usize,
    pub total: usize,
}

impl Check {
    pub fn ok(&self) -> bool {
        self.passed == self.total
    }
}

/// Runs the exhaustive game-theory and tabular Bellman checks on
/// `instances` random games per family.
pub fn verify(seed: u64, instances: usize) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    let mut tally = |name, results: Vec<bool>| {
        checks.push(Check { name, passed: results.iter().filter(|&&b| b).count(), total: results.len() });
    };

    let sym = LatticeSpec { lo: -4, hi: 4, singleton_hi: 0, edge_prob: 0.8, symmetric: true };
    let mut r = Vec::new();
    for i in 0..instances {
        let g = sym.generate(1 + i % 6, &mut rng)?;
        let (cs, _) = g.max_social_welfare_partition()?;
        r.push(g.is_inner_stable(&cs)?);
    }
    tally("welfare partition is inner stable", r);

    let nonneg = LatticeSpec { lo: 0, hi: 4, singleton_hi: 0, edge_prob: 0.8, symmetric: false };
    let mut r = Vec::new();
    for i in 0..instances {
        let g = nonneg.generate(1 + i % 6, &mut rng)?;
        r.push(g.is_strict_core_stable(&CoalitionStructure::grand(g.n_agents())?)?);
    }
    tally("non-negative grand coalition is strict core", r);

    // singleton values built from a lattice z below the weights, so the
    // condition holds by construction
    let mut r = Vec::new();
    for i in 0..instances {
        let base = nonneg.generate(1 + i % 6, &mut rng)?;
        let z: BTreeMap<(usize, usize), f64> = base
            .weights()
            .iter()
            .map(|(&e, &w)| (e, 0.25 * rng.gen_range(0..=(w / 0.25) as i32) as f64))
            .collect();
        let mut b = vec![0.0; base.n_agents()];
        for (&(j, _), &v) in &z {
            b[j] += v;
        }
        let g = AffinityGame::new(base.n_agents(), base.weights().clone(), b)?;
        let grand = CoalitionStructure::grand(g.n_agents())?;
        r.push(g.grand_coalition_core_condition(&z)? && g.is_strict_core_stable(&grand)?);
    }
    tally("core condition implies strict core", r);

    let mut contraction = Vec::new();
    let mut factor = Vec::new();
    for i in 0..instances {
        let topology = if i % 2 == 0 { Topology::Star } else { Topology::Complete };
        let game = GameSpec::new(2, 2, 2, 1, topology, 0.9).generate(&mut rng)?;
        let sol = value_iteration(&game, Backup::Optimal)?;
        let fixed = bellman_backup(&game, &sol.q, Backup::Optimal)?;
        let gap = fixed.iter().flatten().zip(sol.q.iter().flatten()).fold(0.0, |m: f64, (a, b)| m.max((a - b).abs()));
        contraction.push(sol.ratios.iter().all(|&q| q <= game.gamma + 1e-9) && gap <= 1e-8);
        factor.push(exact_factorized_q(&game, &LearnerPolicy::uniform(&game)).is_ok());
    }
    tally("Bellman backup contracts to its fixed point", contraction);
    tally("joint Q equals its pairwise and individual parts", factor);

    let mut r = Vec::new();
    for i in 0..instances {
        let topology = if i % 2 == 0 { Topology::Star } else { Topology::Complete };
        let game = GameSpec::new(1, 3, 2, 1, topology, 0.8).generate(&mut rng)?;
        let report = dvsc_check(&game)?;
        r.push(report.holds() && report.optimality_gap <= 1e-8);
    }
    tally("welfare-optimal policy dominates every policy", r);
    Ok(checks)
}
