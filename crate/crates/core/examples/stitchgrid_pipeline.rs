//! The full file-based pipeline on stitchgrid: data, score model, cache,
//! ARQ and Q^β values, and rollouts of the extracted policies.

use arq::arq::{ArqConfig, QMode};
use arq::envs::{StitchGrid, ToyEnv};
use arq::pipeline::{self, EvalTarget, RunConfig};
use arq::sampling::SamplerConfig;
use arq::sde::ScoreTrainConfig;

fn main() -> arq::Result<()> {
    let cfg = RunConfig {
        out_dir: std::env::temp_dir().join("arq_stitchgrid"),
        env: "stitchgrid".into(),
        n_transitions: 400,
        score: ScoreTrainConfig {
            width: 32,
            blocks: 2,
            steps: 4000,
            ..ScoreTrainConfig::default()
        },
        sampler: SamplerConfig {
            n_steps: 200,
            ..SamplerConfig::default()
        },
        q: ArqConfig {
            steps: 4000,
            lr: 1e-3,
            ..ArqConfig::default()
        },
        ..RunConfig::default()
    };
    pipeline::gen_data(&cfg)?;
    pipeline::bc_train(&cfg)?;
    let cache = pipeline::build_cache(&cfg)?;
    println!("cache: {} entries, {} fallbacks", cache.entries().len(), cache.fallback_count());
    for mode in [QMode::Arq, QMode::Qbeta] {
        pipeline::q_train(&cfg, mode)?;
    }
    for target in [EvalTarget::Behavior, EvalTarget::Implicit(QMode::Qbeta), EvalTarget::Implicit(QMode::Arq)] {
        let r = pipeline::evaluate(&cfg, target)?;
        println!("{:28} return {:7.2} +- {:.2}", target.file_name(), r.mean_return, r.std_return);
    }
    println!("optimal return {}; outputs in {}", StitchGrid::default().optimal_return(), cfg.out_dir.display());
    Ok(())
}
