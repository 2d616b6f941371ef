use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use arq::arq::QMode;
use arq::pipeline::{self, EvalTarget, RunConfig};
use arq::Error;

/// Offline RL on toy environments with a score-based behaviour model.
///
/// Every subcommand reads and writes files in the config's `out_dir`.
/// `ARQ_SEED` overrides the config seed.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// JSON run config; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `out_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Arq,
    Qbeta,
}

impl From<Mode> for QMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Arq => QMode::Arq,
            Mode::Qbeta => QMode::Qbeta,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyMode {
    ImplicitEval,
    Awr,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalPolicy {
    Behavior,
    Implicit,
    Awr,
}

#[derive(Subcommand)]
enum Cmd {
    /// Roll out the env's behaviour policy into dataset.jsonl.
    GenData,
    /// Train the score model on the dataset.
    BcTrain,
    /// Sample and filter in-support candidate actions for every transition.
    BuildCache,
    /// Train a Q ensemble against the cache.
    QTrain {
        #[arg(long, value_enum, default_value = "arq")]
        mode: Mode,
    },
    /// Extract a policy from a trained Q ensemble.
    PolicyTrain {
        #[arg(long, value_enum, default_value = "implicit-eval")]
        mode: PolicyMode,
        /// Which Q ensemble to extract from.
        #[arg(long, value_enum, default_value = "arq")]
        q: Mode,
    },
    /// Roll out a policy and write eval_*.json.
    Eval {
        #[arg(long, value_enum, default_value = "implicit")]
        policy: EvalPolicy,
        #[arg(long, value_enum, default_value = "arq")]
        q: Mode,
    },
    /// Check penalized and restricted value iteration agree on random MDPs.
    VerifyTheorem1 {
        #[arg(long)]
        states: Option<usize>,
        #[arg(long)]
        actions: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        mdps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write grid.csv and grid.pgm from the trained score model.
    DensityGrid,
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Ok(s) = std::env::var("ARQ_SEED") {
        cfg.seed = s
            .trim()
            .parse()
            .map_err(|_| Error::Contract(format!("ARQ_SEED is not an unsigned integer: {s:?}")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_eval(r: &arq::policy::EvalReport) {
    println!(
        "{} on {}: mean return {:.4} ± {:.4} over {} episodes (discounted {:.4})",
        r.policy, r.env, r.mean_return, r.std_return, r.episodes, r.mean_discounted
    );
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = load_config(&cli)?;
    match cli.cmd {
        Cmd::GenData => {
            let ds = pipeline::gen_data(&cfg)?;
            println!("wrote {} transitions to {}", ds.len(), cfg.path(pipeline::DATASET_FILE).display());
        }
        Cmd::BcTrain => {
            pipeline::bc_train(&cfg)?;
            println!("wrote {}", cfg.path(pipeline::SCORE_FILE).display());
        }
        Cmd::BuildCache => {
            let cache = pipeline::build_cache(&cfg)?;
            println!(
                "wrote {} entries ({} fallbacks) to {}",
                cache.entries().len(),
                cache.fallback_count(),
                cfg.path(pipeline::CACHE_FILE).display()
            );
        }
        Cmd::QTrain { mode } => {
            let mode = mode.into();
            let (_, ooc) = pipeline::q_train(&cfg, mode)?;
            println!("wrote {} (out-of-cache bootstraps: {ooc})", cfg.path(&pipeline::q_file(mode)).display());
        }
        Cmd::PolicyTrain { mode, q } => match mode {
            // the implicit policy has no parameters beyond Q; evaluate it directly
            PolicyMode::ImplicitEval => print_eval(&pipeline::evaluate(&cfg, EvalTarget::Implicit(q.into()))?),
            PolicyMode::Awr => {
                pipeline::awr_policy_train(&cfg, q.into())?;
                println!("wrote {}", cfg.path(pipeline::AWR_FILE).display());
            }
        },
        Cmd::Eval { policy, q } => {
            let target = match policy {
                EvalPolicy::Behavior => EvalTarget::Behavior,
                EvalPolicy::Implicit => EvalTarget::Implicit(q.into()),
                EvalPolicy::Awr => EvalTarget::Awr,
            };
            print_eval(&pipeline::evaluate(&cfg, target)?);
        }
        Cmd::VerifyTheorem1 {
            states,
            actions,
            iters,
            mdps,
            seed,
        } => {
            let t = &mut cfg.theorem1;
            t.max_states = states.unwrap_or(t.max_states);
            t.max_actions = actions.unwrap_or(t.max_actions);
            t.iters = iters.unwrap_or(t.iters);
            t.mdps = mdps.unwrap_or(t.mdps);
            cfg.seed = seed.unwrap_or(cfg.seed);
            let r = pipeline::theorem1(&cfg)?;
            println!("iteration,q_diff,pi_diff");
            for it in &r.per_iteration {
                println!("{},{:.3e},{:.3e}", it.iteration, it.q_diff, it.pi_diff);
            }
            let worst = r.max_q_diff.max(r.max_pi_diff);
            println!(
                "max residual {worst:.3e} (Q {:.3e}, pi {:.3e}) over {} MDPs x {} iterations",
                r.max_q_diff, r.max_pi_diff, cfg.theorem1.mdps, cfg.theorem1.iters
            );
            if !(worst < 1e-8) {
                return Err(Error::Numerical(format!("residual {worst:.3e} exceeds 1e-8")));
            }
        }
        Cmd::DensityGrid => {
            let g = pipeline::density_grid(&cfg)?;
            if g.failures > 0 {
                eprintln!("warning: {} grid cells failed and were set to the floor {}", g.failures, g.floor);
            }
            println!(
                "wrote {} and {} ({}x{})",
                cfg.path(pipeline::GRID_CSV).display(),
                cfg.path(pipeline::GRID_PGM).display(),
                g.s.len(),
                g.a.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
