//! File-based stages of the offline RL pipeline, driven by one JSON config.
//!
//! Every stage reads its inputs from and writes its outputs to `out_dir`,
//! so the output of one stage is the input of the next.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arq::{arq_train, ArqConfig, QEnsemble, QMode};
use crate::data::OfflineDataset;
use crate::dqp::{verify_theorem1, Theorem1Config, Theorem1Report};
use crate::envs::{env_by_name, generate_dataset};
use crate::error::{Error, Result};
use crate::grid::{linspace, DensityGrid};
use crate::nn::Checkpoint;
use crate::policy::{awr_train, evaluate_policy, AwrConfig, AwrPolicy, EvalReport, ImplicitPolicy, LogitMode, Policy};
use crate::sampling::{CacheParams, OdeTolerance, SamplerConfig, ScoreBehavior, SupportCache};
use crate::sde::{train_score_model, ScoreModel, ScoreTrainConfig};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const SCORE_FILE: &str = "score.json";
pub const CACHE_FILE: &str = "cache.jsonl";
pub const CONFIG_FILE: &str = "config.json";
pub const AWR_FILE: &str = "awr.json";
pub const GRID_CSV: &str = "grid.csv";
pub const GRID_PGM: &str = "grid.pgm";

pub fn q_file(mode: QMode) -> String {
    format!("q_{}.json", mode_name(mode))
}

pub fn q_log_file(mode: QMode) -> String {
    format!("q_{}_log.csv", mode_name(mode))
}

fn mode_name(mode: QMode) -> &'static str {
    match mode {
        QMode::Arq => "arq",
        QMode::Qbeta => "qbeta",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub alpha: f64,
    pub mode: LogitMode,
    /// PC steps when sampling candidates at states outside the dataset.
    pub novel_steps: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            alpha: 10.0,
            mode: LogitMode::QLogits,
            novel_steps: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
    pub gamma: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episodes: 100,
            gamma: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub s_points: usize,
    pub a_points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            s_points: 50,
            a_points: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub env: String,
    pub n_transitions: usize,
    pub score: ScoreTrainConfig,
    pub sampler: SamplerConfig,
    pub ode: OdeTolerance,
    pub cache: CacheParams,
    pub q: ArqConfig,
    pub policy: PolicyConfig,
    pub awr: AwrConfig,
    pub eval: EvalConfig,
    pub grid: GridConfig,
    pub theorem1: Theorem1Config,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            env: "lineworld".into(),
            n_transitions: 4000,
            score: ScoreTrainConfig::default(),
            sampler: SamplerConfig::default(),
            ode: OdeTolerance::default(),
            cache: CacheParams::default(),
            q: ArqConfig::default(),
            policy: PolicyConfig::default(),
            awr: AwrConfig::default(),
            eval: EvalConfig::default(),
            grid: GridConfig::default(),
            theorem1: Theorem1Config::default(),
        }
    }
}

/// Per-stage seeds derived from the global one, so stages can be rerun
/// independently.
#[derive(Debug, Clone, Copy)]
enum Stage {
    Data = 1,
    Score = 2,
    Cache = 3,
    Q = 4,
    Awr = 5,
    Eval = 6,
    Theorem = 7,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        env_by_name(&self.env)?;
        if self.n_transitions == 0 {
            return Err(Error::contract("n_transitions must be at least 1"));
        }
        self.sampler.validate()?;
        self.cache.validate()?;
        self.q.validate()?;
        if self.eval.episodes == 0 || self.grid.s_points == 0 || self.grid.a_points == 0 {
            return Err(Error::contract("episode and grid counts must be positive"));
        }
        Ok(())
    }

    fn stage_seed(&self, stage: Stage) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stage as u64)
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.out_dir.join(file)
    }

    /// Write the resolved config next to the outputs.
    pub fn echo(&self) -> Result<()> {
        fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;
        let path = self.path(CONFIG_FILE);
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    fn require(&self, file: &str, what: &str) -> Result<PathBuf> {
        let p = self.path(file);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::Missing(format!("{what} missing: {}", p.display())))
        }
    }

    pub fn load_dataset(&self) -> Result<OfflineDataset> {
        OfflineDataset::load(&self.require(DATASET_FILE, "dataset")?)
    }

    pub fn load_score(&self) -> Result<ScoreModel> {
        let ck = Checkpoint::load(&self.require(SCORE_FILE, "model checkpoint")?)?;
        Ok(ScoreModel::from_checkpoint(&ck)?.0)
    }

    pub fn load_cache(&self) -> Result<SupportCache> {
        SupportCache::load(&self.require(CACHE_FILE, "support cache")?, self.cache)
    }

    pub fn load_q(&self, mode: QMode) -> Result<QEnsemble> {
        let ck = Checkpoint::load(&self.require(&q_file(mode), "Q checkpoint")?)?;
        Ok(QEnsemble::from_checkpoint(&ck)?.0)
    }

    pub fn load_awr(&self) -> Result<AwrPolicy> {
        let ck = Checkpoint::load(&self.require(AWR_FILE, "policy checkpoint")?)?;
        Ok(AwrPolicy::from_checkpoint(&ck)?.0)
    }

    pub fn score_behavior(&self, model: ScoreModel) -> ScoreBehavior {
        ScoreBehavior {
            model,
            sampler: self.sampler,
            tol: self.ode,
        }
    }
}

pub fn gen_data(cfg: &RunConfig) -> Result<OfflineDataset> {
    cfg.echo()?;
    let env = env_by_name(&cfg.env)?;
    let ds = generate_dataset(env.as_ref(), cfg.n_transitions, cfg.stage_seed(Stage::Data))?;
    ds.save(&cfg.path(DATASET_FILE))?;
    Ok(ds)
}

/// Fit the behaviour score model to the dataset's normalized actions.
pub fn bc_train(cfg: &RunConfig) -> Result<ScoreModel> {
    cfg.echo()?;
    let ds = cfg.load_dataset()?;
    let (model, report) = train_score_model(
        ds.states().view(),
        ds.normalized_actions().view(),
        &cfg.score,
        cfg.stage_seed(Stage::Score),
    )?;
    let (first, last) = report.first_last_window();
    let extra = serde_json::json!({ "loss_first": first, "loss_last": last });
    model.to_checkpoint(extra)?.save(&cfg.path(SCORE_FILE))?;
    Ok(model)
}

pub fn build_cache(cfg: &RunConfig) -> Result<SupportCache> {
    cfg.echo()?;
    let ds = cfg.load_dataset()?;
    let behavior = cfg.score_behavior(cfg.load_score()?);
    let cache = SupportCache::build(&behavior, &ds, cfg.cache, cfg.stage_seed(Stage::Cache))?;
    cache.save(&cfg.path(CACHE_FILE))?;
    Ok(cache)
}

/// Train Q; returns the ensemble and the out-of-cache bootstrap count.
pub fn q_train(cfg: &RunConfig, mode: QMode) -> Result<(QEnsemble, usize)> {
    cfg.echo()?;
    let ds = cfg.load_dataset()?;
    let cache = cfg.load_cache()?;
    let qcfg = ArqConfig { mode, ..cfg.q.clone() };
    let (q, report) = arq_train(&ds, &cache, &qcfg, cfg.stage_seed(Stage::Q))?;
    let extra = serde_json::json!({ "out_of_cache": report.out_of_cache });
    q.to_checkpoint(extra)?.save(&cfg.path(&q_file(mode)))?;
    let log = cfg.path(&q_log_file(mode));
    fs::write(&log, report.log_csv()).map_err(|e| Error::io(log, e))?;
    Ok((q, report.out_of_cache))
}

pub fn awr_policy_train(cfg: &RunConfig, mode: QMode) -> Result<AwrPolicy> {
    cfg.echo()?;
    let ds = cfg.load_dataset()?;
    let cache = cfg.load_cache()?;
    let q = cfg.load_q(mode)?;
    let (pol, _) = awr_train(&ds, &q, &cache, cfg.policy.alpha, &cfg.awr, cfg.stage_seed(Stage::Awr))?;
    pol.to_checkpoint(serde_json::Value::Null)?.save(&cfg.path(AWR_FILE))?;
    Ok(pol)
}

/// Which policy `evaluate` rolls out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTarget {
    /// Uniform over in-support candidates.
    Behavior,
    Implicit(QMode),
    Awr,
}

impl EvalTarget {
    pub fn file_name(self) -> String {
        match self {
            EvalTarget::Behavior => "eval_behavior.json".into(),
            EvalTarget::Implicit(m) => format!("eval_implicit_{}.json", mode_name(m)),
            EvalTarget::Awr => "eval_awr.json".into(),
        }
    }
}

pub fn evaluate(cfg: &RunConfig, target: EvalTarget) -> Result<EvalReport> {
    cfg.echo()?;
    let env = env_by_name(&cfg.env)?;
    let seed = cfg.stage_seed(Stage::Eval);
    let report = match target {
        EvalTarget::Awr => {
            let pol = cfg.load_awr()?;
            evaluate_policy(env.as_ref(), &pol, cfg.eval.episodes, cfg.eval.gamma, seed)?
        }
        EvalTarget::Behavior | EvalTarget::Implicit(_) => {
            let ds = cfg.load_dataset()?;
            let cache = cfg.load_cache()?;
            let mut novel = cfg.score_behavior(cfg.load_score()?);
            novel.sampler.n_steps = cfg.policy.novel_steps;
            let q = match target {
                EvalTarget::Implicit(mode) => Some(cfg.load_q(mode)?),
                _ => None,
            };
            let pol = match &q {
                Some(q) => ImplicitPolicy::new(q, &ds, &cache, cfg.policy.alpha, cfg.policy.mode)?,
                None => ImplicitPolicy::behavior_cloning(&ds, &cache)?,
            }
            .with_novel_sampler(&novel);
            evaluate_policy(env.as_ref(), &pol as &dyn Policy, cfg.eval.episodes, cfg.eval.gamma, seed)?
        }
    };
    let path = cfg.path(&target.file_name());
    fs::write(&path, serde_json::to_string_pretty(&report)? + "\n").map_err(|e| Error::io(path, e))?;
    Ok(report)
}

/// Density heatmap over the dataset's state range and the normalized
/// action box.
pub fn density_grid(cfg: &RunConfig) -> Result<DensityGrid> {
    let model = cfg.load_score()?;
    let ds = cfg.load_dataset()?;
    cfg.echo()?;
    let states = ds.states();
    let lo = states.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = states.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let grid = DensityGrid::evaluate(
        &model,
        &ds.header,
        &linspace(lo, hi, cfg.grid.s_points),
        &linspace(-1.0, 1.0, cfg.grid.a_points),
        cfg.cache.log_eps,
        &cfg.ode,
    )?;
    let csv = cfg.path(GRID_CSV);
    fs::write(&csv, grid.to_csv()).map_err(|e| Error::io(csv, e))?;
    let pgm = cfg.path(GRID_PGM);
    fs::write(&pgm, grid.to_pgm()).map_err(|e| Error::io(pgm, e))?;
    Ok(grid)
}

pub fn theorem1(cfg: &RunConfig) -> Result<Theorem1Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.stage_seed(Stage::Theorem));
    verify_theorem1(&cfg.theorem1, &mut rng)
}
