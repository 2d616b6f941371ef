use std::process::Command;
use std::sync::OnceLock;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use arq::arq::{ArqConfig, QMode};
use arq::pipeline::{self, RunConfig};
use arq::sampling::{log_likelihood, BehaviorModel, CacheParams, SamplerConfig, Which};
use arq::sde::ScoreTrainConfig;

/// A small trained lineworld run shared by the tests below.
fn trained() -> &'static (TempDir, RunConfig) {
    static RUN: OnceLock<(TempDir, RunConfig)> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            seed: 5,
            out_dir: dir.path().to_path_buf(),
            n_transitions: 300,
            score: ScoreTrainConfig {
                width: 32,
                blocks: 1,
                steps: 1500,
                // short run: the default decay would still carry a fifth of the init
                ema_decay: 0.99,
                ..ScoreTrainConfig::default()
            },
            sampler: SamplerConfig {
                n_steps: 100,
                ..SamplerConfig::default()
            },
            cache: CacheParams {
                n: 8,
                ..CacheParams::default()
            },
            q: ArqConfig {
                steps: 300,
                batch_size: 64,
                gamma: 0.9,
                ..ArqConfig::default()
            },
            ..RunConfig::default()
        };
        pipeline::gen_data(&cfg).unwrap();
        pipeline::bc_train(&cfg).unwrap();
        pipeline::build_cache(&cfg).unwrap();
        pipeline::q_train(&cfg, QMode::Arq).unwrap();
        (dir, cfg)
    })
}

#[test]
fn cached_logp_matches_fresh_likelihood() {
    let (_, cfg) = trained();
    let ds = cfg.load_dataset().unwrap();
    let cache = cfg.load_cache().unwrap();
    let model = cfg.load_score().unwrap();
    let mut checked = 0;
    for e in cache.entries().iter().filter(|e| !e.fallback).step_by(37).take(8) {
        let t = &ds.transitions[e.row];
        let s = if e.which == Which::S { &t.s } else { &t.s2 };
        for (a, &lp) in e.actions.iter().zip(&e.logp).take(3) {
            let fresh = log_likelihood(&model, s, a, &cfg.ode).unwrap();
            assert!((fresh - lp).abs() < 1e-3, "row {} cached {lp} fresh {fresh}", e.row);
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn cache_respects_threshold() {
    let (_, cfg) = trained();
    let cache = cfg.load_cache().unwrap();
    assert_eq!(cache.rows(), cfg.n_transitions);
    for e in cache.entries().iter().filter(|e| !e.fallback) {
        assert!(!e.actions.is_empty() && e.actions.len() <= cfg.cache.n);
        assert!(e.logp.iter().all(|&l| l >= cfg.cache.log_eps));
    }
}

#[test]
fn samples_are_more_likely_than_uniform_actions() {
    let (_, cfg) = trained();
    let behavior = cfg.score_behavior(cfg.load_score().unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut sampled, mut uniform) = (0.0, 0.0);
    for s in [-0.6, 0.0, 0.5] {
        let a = behavior.sample_actions(&[s], 32, &mut rng).unwrap();
        let u = Array2::from_shape_fn((32, 1), |_| rng.random_range(-1.0..1.0));
        let la = behavior.log_likelihoods(&[s], a.view()).unwrap();
        sampled += la.iter().sum::<f64>();
        uniform += behavior.log_likelihoods(&[s], u.view()).unwrap().iter().sum::<f64>();
    }
    assert!(sampled > uniform, "sampled {sampled} uniform {uniform}");
}

#[test]
fn q_values_stay_within_reward_bounds() {
    let (_, cfg) = trained();
    let ds = cfg.load_dataset().unwrap();
    let q = cfg.load_q(QMode::Arq).unwrap();
    let (lo, hi) = ds
        .transitions
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t.r), hi.max(t.r)));
    let horizon = 1.0 / (1.0 - cfg.q.gamma);
    let slack = 1.0 + (hi - lo);
    let states = ds.states();
    let actions = ds.normalized_actions();
    for v in q.q_values(states.view(), actions.view()).unwrap() {
        assert!(v.is_finite());
        assert!(v >= lo.min(0.0) * horizon - slack && v <= hi.max(0.0) * horizon + slack, "Q = {v}");
    }
}

#[test]
fn stages_reject_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        out_dir: dir.path().to_path_buf(),
        ..RunConfig::default()
    };
    let err = pipeline::build_cache(&cfg).unwrap_err();
    assert!(!err.is_numerical());
    assert!(err.to_string().contains("missing"), "{err}");
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_arq"))
}

#[test]
fn cli_theorem1_succeeds_and_prints_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli()
        .args(["--out", dir.path().to_str().unwrap(), "verify-theorem1", "--mdps", "3", "--iters", "10"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("iteration,q_diff,pi_diff\n"));
    assert!(text.contains("max residual"));
}

#[test]
fn cli_missing_model_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli().args(["--out", dir.path().to_str().unwrap(), "density-grid"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing"));
}

#[test]
fn cli_rejects_unknown_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, r#"{"seed": 1, "sede": 2}"#).unwrap();
    let out = cli().args(["--config", path.to_str().unwrap(), "gen-data"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn cli_seed_override_changes_the_dataset() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (d, seed) in dirs.iter().zip(["1", "2"]) {
        let cfg = d.path().join("cfg.json");
        std::fs::write(&cfg, r#"{"n_transitions": 20}"#).unwrap();
        let st = cli()
            .env("ARQ_SEED", seed)
            .args(["--config", cfg.to_str().unwrap(), "--out", d.path().to_str().unwrap(), "gen-data"])
            .status()
            .unwrap();
        assert!(st.success());
    }
    let read = |d: &TempDir| std::fs::read(d.path().join(pipeline::DATASET_FILE)).unwrap();
    assert_ne!(read(&dirs[0]), read(&dirs[1]));
}
