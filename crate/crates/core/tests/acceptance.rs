//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line.
//!
//! Run a subset with `cargo test --test acceptance -- <substring>`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use arq::arq::{arq_train, ArqConfig, QMode, TdLoss};
use arq::data::{OfflineDataset, Transition};
use arq::dqp::{theorem1_identity_check, verify_theorem1, Theorem1Config};
use arq::envs::{generate_dataset, lineworld, LineWorld, ToyEnv};
use arq::grid::{linspace, DensityGrid};
use arq::nn::{Activation, Arch, Checkpoint, MlpParams};
use arq::pipeline::{self, EvalTarget, RunConfig};
use arq::policy::{ImplicitPolicy, LogitMode, Policy};
use arq::sampling::{
    log_likelihood_batch, pc_sample, BehaviorModel, CacheParams, OdeTolerance, SamplerConfig, SupportCache,
};
use arq::sde::{train_score_model, ScoreModel, ScoreTrainConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 10] = [
        ("theorem1_equivalence", Duration::from_secs(10), theorem1_equivalence),
        ("theorem1_identity", Duration::from_secs(1), theorem1_identity),
        ("gradient_check", Duration::from_secs(30), gradient_check),
        ("lineworld_fidelity", Duration::from_secs(20 * 60), lineworld_fidelity),
        ("likelihood_oracle", Duration::from_secs(15 * 60), likelihood_oracle),
        ("sampler_statistics", Duration::from_secs(10 * 60), sampler_statistics),
        ("cliffbandit_support", Duration::from_secs(30 * 60), cliffbandit_support),
        ("stitchgrid_ordering", Duration::from_secs(30 * 60), stitchgrid_ordering),
        ("k_pessimism", Duration::from_secs(30 * 60), k_pessimism),
        ("determinism_roundtrip", Duration::from_secs(30 * 60), determinism_roundtrip),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let took = t0.elapsed();
        let in_time = took <= budget;
        let pass = out.pass && in_time;
        if !pass {
            failed += 1;
        }
        let time_note = if in_time { String::new() } else { format!(" over budget {budget:?}") };
        println!(
            "{} {name} [{:.1}s{time_note}] {}",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            out.detail
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn theorem1_equivalence() -> Outcome {
    let cfg = Theorem1Config::default();
    let r = verify_theorem1(&cfg, &mut ChaCha8Rng::seed_from_u64(2024)).unwrap();
    let worst = r.max_q_diff.max(r.max_pi_diff);
    let all_iters = r.per_iteration.len() == cfg.iters && r.per_iteration.iter().all(|i| i.q_diff.max(i.pi_diff) < 1e-8);
    outcome(
        all_iters,
        format!("{} MDPs x {} iterations, worst gap {worst:.2e} (< 1e-8)", cfg.mdps, cfg.iters),
    )
}

fn theorem1_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=6);
        let p: Array1<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
        let q: Array1<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
        let z: f64 = w.iter().sum();
        let pi: Array1<f64> = w.iter().map(|v| v / z).collect();
        worst = worst.max(theorem1_identity_check(pi.view(), q.view(), p.view()).unwrap());
    }
    outcome(worst < 1e-10, format!("1000 triples, worst |LHS - RHS| {worst:.2e} (< 1e-10)"))
}

/// Straight-line forward pass, independent of the library's batched code.
fn reference_forward(net: &MlpParams, x: &[f64], preacts: &mut Vec<f64>) -> Vec<f64> {
    let affine = |l: &arq::nn::Dense, x: &[f64], preacts: &mut Vec<f64>| -> Vec<f64> {
        (0..l.out_dim())
            .map(|o| {
                let z = l.bias[o] + (0..l.in_dim()).map(|i| l.weight[[o, i]] * x[i]).sum::<f64>();
                if l.activation == Activation::Relu {
                    preacts.push(z);
                }
                z
            })
            .collect()
    };
    let act = |a: Activation, v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|z| a.apply(z)).collect() };
    let layers = net.layers();
    match net.arch() {
        Arch::Plain => layers
            .iter()
            .fold(x.to_vec(), |h, l| act(l.activation, affine(l, &h, preacts))),
        Arch::Residual { blocks, activation } => {
            let mut h = affine(&layers[0], x, preacts);
            for k in 0..blocks {
                let (l1, l2) = (&layers[1 + 2 * k], &layers[2 + 2 * k]);
                let u = act(activation, h.clone());
                if activation == Activation::Relu {
                    preacts.extend(&h);
                }
                let v = act(l1.activation, affine(l1, &u, preacts));
                let r = act(l2.activation, affine(l2, &v, preacts));
                h = h.iter().zip(&r).map(|(a, b)| a + b).collect();
            }
            if activation == Activation::Relu {
                preacts.extend(&h);
            }
            let head = &layers[layers.len() - 1];
            act(head.activation, affine(head, &act(activation, h), preacts))
        }
    }
}

fn random_net(rng: &mut ChaCha8Rng) -> MlpParams {
    let acts = [Activation::Relu, Activation::Swish, Activation::Identity];
    let din = rng.random_range(1..=4);
    let dout = rng.random_range(1..=3);
    if rng.random::<bool>() {
        let depth = rng.random_range(1..=3);
        let mut dims = vec![din];
        dims.extend((0..depth).map(|_| rng.random_range(1..=8)));
        dims.push(dout);
        let hidden = acts[rng.random_range(0..3)];
        let out = acts[rng.random_range(0..3)];
        MlpParams::plain(&dims, hidden, out, rng).unwrap()
    } else {
        let act = acts[rng.random_range(0..2)];
        MlpParams::residual(din, rng.random_range(2..=8), rng.random_range(0..=2), dout, act, rng).unwrap()
    }
}

/// Weighted sum of outputs over a batch; the weights play the role of the
/// output gradient.
fn probe(net: &MlpParams, x: ArrayView2<f64>, w: &Array2<f64>) -> f64 {
    (&net.predict(x).unwrap() * w).sum()
}

/// Shift one scalar of layer `li`: weights in row-major order, then biases.
fn perturb(net: &mut MlpParams, li: usize, idx: usize, delta: f64) {
    let layer = &mut net.layers_mut()[li];
    let (rows, cols) = layer.weight.dim();
    if idx < rows * cols {
        layer.weight[[idx / cols, idx % cols]] += delta;
    } else {
        layer.bias[idx - rows * cols] += delta;
    }
}

fn gradient_check() -> Outcome {
    const H: f64 = 1e-4;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut worst, mut checked, mut forward_gap) = (0.0f64, 0usize, 0.0f64);
    for _ in 0..50 {
        let mut net = random_net(&mut rng);
        let batch = 3;
        // keep relu pre-activations clear of the kink so the central
        // difference never straddles it
        let x = loop {
            let x = Array2::from_shape_fn((batch, net.in_dim()), |_| rng.random_range(-2.0..2.0));
            let mut pre = Vec::new();
            for row in x.rows() {
                reference_forward(&net, row.as_slice().unwrap(), &mut pre);
            }
            if pre.iter().all(|z| z.abs() > 2e-3) {
                break x;
            }
        };
        let w = Array2::from_shape_fn((batch, net.out_dim()), |_| rng.random_range(-1.0..1.0));
        let (out, tape) = net.forward_batch(x.view()).unwrap();
        for (r, row) in x.rows().into_iter().enumerate() {
            let reference = reference_forward(&net, row.as_slice().unwrap(), &mut Vec::new());
            for (o, v) in reference.iter().enumerate() {
                forward_gap = forward_gap.max((v - out[[r, o]]).abs());
            }
        }
        let (grads, dx) = net.backward(&tape, w.view()).unwrap();
        for li in 0..net.layers().len() {
            let (rows, cols) = net.layers()[li].weight.dim();
            for idx in 0..rows * cols + rows {
                let analytic = if idx < rows * cols {
                    grads.layers[li].0[[idx / cols, idx % cols]]
                } else {
                    grads.layers[li].1[idx - rows * cols]
                };
                perturb(&mut net, li, idx, H);
                let up = probe(&net, x.view(), &w);
                perturb(&mut net, li, idx, -2.0 * H);
                let down = probe(&net, x.view(), &w);
                perturb(&mut net, li, idx, H);
                worst = worst.max(rel(analytic, (up - down) / (2.0 * H)));
                checked += 1;
            }
        }
        for r in 0..batch {
            for c in 0..net.in_dim() {
                let mut xp = x.clone();
                xp[[r, c]] += H;
                let mut xm = x.clone();
                xm[[r, c]] -= H;
                let fd = (probe(&net, xp.view(), &w) - probe(&net, xm.view(), &w)) / (2.0 * H);
                worst = worst.max(rel(dx[[r, c]], fd));
                checked += 1;
            }
        }
    }
    outcome(
        worst < 1e-4 && forward_gap < 1e-12,
        format!("50 nets, {checked} components, worst relative error {worst:.2e} (< 1e-4), forward gap {forward_gap:.1e}"),
    )
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            r[k] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn lineworld_score_config() -> ScoreTrainConfig {
    ScoreTrainConfig {
        steps: 100_000,
        cosine_decay: true,
        ..ScoreTrainConfig::default()
    }
}

fn lineworld_fidelity() -> Outcome {
    let log_eps = CacheParams::default().log_eps;
    let ds = generate_dataset(&LineWorld, 4000, 0).unwrap();
    let (model, _) = train_score_model(ds.states().view(), ds.normalized_actions().view(), &lineworld_score_config(), 1).unwrap();
    let n = 50;
    let grid = DensityGrid::evaluate(
        &model,
        &ds.header,
        &linspace(-1.0, 1.0, n),
        &linspace(-1.0, 1.0, n),
        log_eps,
        &OdeTolerance::default(),
    )
    .unwrap();
    let jac = ds.header.log_jacobian();
    let (mut exact, mut learned) = (Vec::new(), Vec::new());
    let (mut zero, mut zero_below) = (0, 0);
    let mut cells = Vec::new();
    for (j, &s) in grid.s.iter().enumerate() {
        for (i, &a) in grid.a.iter().enumerate() {
            let d = lineworld::density(s, a);
            let lp = grid.logp[[i, j]];
            cells.push((lp, d > 0.0));
            if d > 1e-6 {
                exact.push(d.ln() + jac);
                learned.push(lp);
            } else if d == 0.0 {
                zero += 1;
                if lp < log_eps {
                    zero_below += 1;
                }
            }
        }
    }
    let rho = spearman(&exact, &learned);
    let frac = zero_below as f64 / zero as f64;
    // brightest decile of the heatmap should sit on the true support
    cells.sort_by(|a, b| b.0.total_cmp(&a.0));
    let top = &cells[..cells.len() / 10];
    let bright_inside = top.iter().filter(|c| c.1).count() as f64 / top.len() as f64;
    outcome(
        rho > 0.9 && frac >= 0.9,
        format!(
            "spearman {rho:.3} (> 0.9) on {} support cells; {zero_below}/{zero} = {frac:.3} zero-density cells below ln eps (>= 0.9); \
             top-decile cells on support {bright_inside:.3}; {} failed cells",
            exact.len(),
            grid.failures
        ),
    )
}

fn gaussian_model(std: f64, steps: usize, seed: u64) -> ScoreModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 4000;
    let a = Array2::from_shape_fn((n, 1), |_| std * rng.sample::<f64, _>(StandardNormal));
    let s = Array2::zeros((n, 1));
    let cfg = ScoreTrainConfig {
        steps,
        ..ScoreTrainConfig::default()
    };
    train_score_model(s.view(), a.view(), &cfg, seed).unwrap().0
}

fn log_p(model: &ScoreModel, actions: &[f64]) -> Vec<f64> {
    let s = Array2::zeros((actions.len(), 1));
    let a = Array2::from_shape_vec((actions.len(), 1), actions.to_vec()).unwrap();
    log_likelihood_batch(model, s.view(), a.view(), &OdeTolerance::default()).unwrap()
}

fn likelihood_oracle() -> Outcome {
    let unit = gaussian_model(1.0, 10_000, 3);
    let half = gaussian_model(0.5, 10_000, 3);
    let lp = log_p(&unit, &[0.0, 2.0]);
    let lp_half = log_p(&half, &[0.0])[0];
    let exact = -0.5 * (2.0 * std::f64::consts::PI).ln();
    let shift = lp_half - lp[0];
    let pass = (lp[0] - exact).abs() <= 0.15 && lp[0] > lp[1] && (shift - 2f64.ln()).abs() <= 0.2;
    outcome(
        pass,
        format!(
            "log p(0) = {:.3} (exact {exact:.3} +- 0.15), log p(2) = {:.3}, halving the data shifts log p(0) by {shift:.3} (0.693 +- 0.2)",
            lp[0], lp[1]
        ),
    )
}

fn moments(x: &Array2<f64>) -> (f64, f64) {
    (x.mean().unwrap(), x.std(0.0))
}

fn sampler_statistics() -> Outcome {
    let model = gaussian_model(0.3, 10_000, 5);
    let base = SamplerConfig::default();
    let twice = SamplerConfig {
        n_steps: 2 * base.n_steps,
        ..base
    };
    let a = pc_sample(&model, &[0.0], 1000, &base, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = pc_sample(&model, &[0.0], 1000, &twice, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let ((ma, sa), (mb, sb)) = (moments(&a), moments(&b));
    // the mean is near zero, so its change is measured against the spread
    let d_mean = (ma - mb).abs() / sa;
    let d_std = (sa - sb).abs() / sa;
    outcome(
        (0.24..=0.36).contains(&sa) && d_mean < 0.1 && d_std < 0.1,
        format!(
            "{} steps: mean {ma:.3} std {sa:.3} (in [0.24, 0.36]); {} steps: mean {mb:.3} std {sb:.3}; \
             relative change mean {d_mean:.3}, std {d_std:.3} (< 0.1)",
            base.n_steps, twice.n_steps
        ),
    )
}

fn small_score_config(width: usize, blocks: usize, steps: usize) -> ScoreTrainConfig {
    ScoreTrainConfig {
        width,
        blocks,
        steps,
        ..ScoreTrainConfig::default()
    }
}

fn cliffbandit_support() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        out_dir: dir.path().to_path_buf(),
        env: "cliffbandit".into(),
        n_transitions: 1000,
        score: small_score_config(32, 2, 4000),
        q: ArqConfig {
            steps: 2000,
            ..ArqConfig::default()
        },
        ..RunConfig::default()
    };
    pipeline::gen_data(&cfg).unwrap();
    let model = pipeline::bc_train(&cfg).unwrap();
    let cache = pipeline::build_cache(&cfg).unwrap();
    let (q, out_of_cache) = pipeline::q_train(&cfg, QMode::Arq).unwrap();
    let ds = cfg.load_dataset().unwrap();
    let behavior = cfg.score_behavior(model);
    let mut cliff = 0;
    let mut fresh_below = 0;
    let alphas = [0.0, 1.0, 10.0, 1e3];
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for &alpha in &alphas {
        let pol = ImplicitPolicy::new(&q, &ds, &cache, alpha, LogitMode::QLogits).unwrap();
        let mut chosen = Vec::new();
        for _ in 0..1000 {
            let a = pol.act(&[0.0], &mut rng).unwrap();
            if arq::envs::cliffbandit::reward(a[0]) == arq::envs::cliffbandit::CLIFF_REWARD {
                cliff += 1;
            }
            chosen.push(ds.header.normalize_action(&a)[0]);
        }
        // fresh likelihood of every distinct chosen action
        chosen.sort_by(f64::total_cmp);
        chosen.dedup();
        let u = Array2::from_shape_vec((chosen.len(), 1), chosen).unwrap();
        let lp = behavior.log_likelihoods(&[0.0], u.view()).unwrap();
        fresh_below += lp.iter().filter(|&&l| l < cfg.cache.log_eps - 0.5).count();
    }
    outcome(
        cliff == 0 && out_of_cache == 0 && fresh_below == 0,
        format!(
            "{} draws over alpha in {alphas:?}: {cliff} cliff actions, {fresh_below} actions below ln eps - 0.5; \
             out-of-cache bootstraps {out_of_cache}",
            1000 * alphas.len()
        ),
    )
}

fn stitch_config(seed: u64, out: &Path) -> RunConfig {
    RunConfig {
        seed,
        out_dir: out.to_path_buf(),
        env: "stitchgrid".into(),
        n_transitions: 400,
        score: small_score_config(32, 2, 4000),
        sampler: SamplerConfig {
            n_steps: 200,
            ..SamplerConfig::default()
        },
        q: ArqConfig {
            steps: 4000,
            lr: 1e-3,
            ..ArqConfig::default()
        },
        eval: pipeline::EvalConfig {
            episodes: 50,
            gamma: 0.99,
        },
        ..RunConfig::default()
    }
}

fn stitchgrid_ordering() -> Outcome {
    let seeds = 5;
    let (mut arq_sum, mut qb_sum, mut bc_sum) = (0.0, 0.0, 0.0);
    let mut rows = Vec::new();
    for seed in 0..seeds {
        let dir = tempfile::tempdir().unwrap();
        let cfg = stitch_config(seed, dir.path());
        pipeline::gen_data(&cfg).unwrap();
        pipeline::bc_train(&cfg).unwrap();
        pipeline::build_cache(&cfg).unwrap();
        pipeline::q_train(&cfg, QMode::Arq).unwrap();
        pipeline::q_train(&cfg, QMode::Qbeta).unwrap();
        let arq = pipeline::evaluate(&cfg, EvalTarget::Implicit(QMode::Arq)).unwrap().mean_return;
        let qb = pipeline::evaluate(&cfg, EvalTarget::Implicit(QMode::Qbeta)).unwrap().mean_return;
        let bc = pipeline::evaluate(&cfg, EvalTarget::Behavior).unwrap().mean_return;
        rows.push(format!("{arq:.2}/{qb:.2}/{bc:.2}"));
        arq_sum += arq;
        qb_sum += qb;
        bc_sum += bc;
    }
    let n = seeds as f64;
    let (arq, qb, bc) = (arq_sum / n, qb_sum / n, bc_sum / n);
    let optimal = arq::envs::StitchGrid::default().optimal_return();
    let closed = (arq - bc) / (optimal - bc);
    outcome(
        arq >= qb && qb >= bc && closed >= 0.2,
        format!(
            "mean return ARQ {arq:.2} >= Qbeta {qb:.2} >= BC {bc:.2}; gap closed {closed:.2} (>= 0.2, optimum {optimal}); per seed arq/qbeta/bc {}",
            rows.join(" ")
        ),
    )
}

/// Uniform behaviour on the normalized box.
struct Uniform;

impl BehaviorModel for Uniform {
    fn action_dim(&self) -> usize {
        1
    }
    fn sample_actions(&self, _s: &[f64], n: usize, rng: &mut ChaCha8Rng) -> arq::Result<Array2<f64>> {
        Ok(Array2::from_shape_fn((n, 1), |_| rng.random_range(-1.0..=1.0)))
    }
    fn log_likelihoods(&self, _s: &[f64], a: ArrayView2<f64>) -> arq::Result<Vec<f64>> {
        Ok(vec![-(2f64.ln()); a.nrows()])
    }
}

/// Contextual bandit with pure-noise rewards, so every true Q value is 0
/// and any positive max-Q is overestimation.
fn noisy_bandit(seed: u64) -> OfflineDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..2000)
        .map(|_| Transition {
            s: vec![rng.random_range(-1.0..=1.0)],
            a: vec![rng.random_range(-1.0..=1.0)],
            r: rng.sample(StandardNormal),
            s2: vec![rng.random_range(-1.0..=1.0)],
            done: false,
            goal: false,
        })
        .collect();
    OfflineDataset::new("noisy-bandit", seed, rows).unwrap()
}

fn mean_max_q(q: &arq::arq::QEnsemble, states: &[f64], rng: &mut ChaCha8Rng) -> f64 {
    let mut total = 0.0;
    for &s in states {
        let a = Uniform.sample_actions(&[s], 30, rng).unwrap();
        let st = Array2::from_elem((30, 1), s);
        let v = q.q_values(st.view(), a.view()).unwrap();
        total += v.into_iter().fold(f64::NEG_INFINITY, f64::max);
    }
    total / states.len() as f64
}

fn k_pessimism() -> Outcome {
    let seeds = 5;
    let (mut k9, mut k1) = (0.0, 0.0);
    let mut rows = Vec::new();
    for seed in 0..seeds {
        let ds = noisy_bandit(seed);
        let cache = SupportCache::build(&Uniform, &ds, CacheParams::default(), seed).unwrap();
        let held_out: Vec<f64> = linspace(-0.95, 0.95, 20);
        let run = |k: usize| {
            let cfg = ArqConfig {
                k,
                gamma: 0.9,
                steps: 3000,
                lr: 1e-3,
                loss: TdLoss::SquaredL2,
                ..ArqConfig::default()
            };
            let (q, _) = arq_train(&ds, &cache, &cfg, seed).unwrap();
            mean_max_q(&q, &held_out, &mut ChaCha8Rng::seed_from_u64(seed))
        };
        let (a, b) = (run(9), run(1));
        rows.push(format!("{a:.3}/{b:.3}"));
        k9 += a;
        k1 += b;
    }
    let (k9, k1) = (k9 / seeds as f64, k1 / seeds as f64);
    outcome(
        k9 <= k1,
        format!("mean max-Q K=9 {k9:.3} <= K=1 {k1:.3}; per seed K9/K1 {}", rows.join(" ")),
    )
}

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

fn run_small_pipeline(cfg: &RunConfig) {
    pipeline::gen_data(cfg).unwrap();
    pipeline::bc_train(cfg).unwrap();
    pipeline::build_cache(cfg).unwrap();
    pipeline::q_train(cfg, QMode::Arq).unwrap();
    pipeline::awr_policy_train(cfg, QMode::Arq).unwrap();
    pipeline::evaluate(cfg, EvalTarget::Awr).unwrap();
    pipeline::evaluate(cfg, EvalTarget::Implicit(QMode::Arq)).unwrap();
    pipeline::density_grid(cfg).unwrap();
}

fn determinism_roundtrip() -> Outcome {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = RunConfig {
        seed: 11,
        out_dir: a.path().to_path_buf(),
        n_transitions: 200,
        score: ScoreTrainConfig {
            // 300 steps: with the default decay the EMA would still be mostly init
            ema_decay: 0.95,
            ..small_score_config(16, 1, 300)
        },
        sampler: SamplerConfig {
            n_steps: 50,
            ..SamplerConfig::default()
        },
        cache: CacheParams {
            n: 8,
            ..CacheParams::default()
        },
        q: ArqConfig {
            steps: 200,
            batch_size: 32,
            ..ArqConfig::default()
        },
        awr: arq::policy::AwrConfig {
            steps: 200,
            ..Default::default()
        },
        eval: pipeline::EvalConfig {
            episodes: 20,
            gamma: 0.99,
        },
        grid: pipeline::GridConfig { s_points: 6, a_points: 5 },
        ..RunConfig::default()
    };
    run_small_pipeline(&cfg);
    run_small_pipeline(&RunConfig {
        out_dir: b.path().to_path_buf(),
        ..cfg.clone()
    });
    // rerun from the echoed config file
    let echoed = std::fs::read_to_string(a.path().join(pipeline::CONFIG_FILE)).unwrap();
    let mut from_echo = RunConfig::from_json(&echoed).unwrap();
    from_echo.out_dir = c.path().to_path_buf();
    run_small_pipeline(&from_echo);

    let (fa, fb, fc) = (files_in(a.path()), files_in(b.path()), files_in(c.path()));
    let names: Vec<&str> = fa.iter().map(|f| f.0.as_str()).collect();
    // the echoed config differs only in out_dir
    let same = |x: &[(String, Vec<u8>)], y: &[(String, Vec<u8>)]| {
        x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.0 == q.0 && (p.0 == pipeline::CONFIG_FILE || p.1 == q.1))
    };
    let reproducible = same(&fa, &fb) && same(&fa, &fc);

    // every format reloads and re-encodes to the same bytes
    let dir = a.path();
    let mut roundtrips = Vec::new();
    let ds = OfflineDataset::load(&dir.join(pipeline::DATASET_FILE)).unwrap();
    roundtrips.push(("dataset", ds.to_jsonl().unwrap().into_bytes() == std::fs::read(dir.join(pipeline::DATASET_FILE)).unwrap()));
    let cache = cfg.load_cache().unwrap();
    roundtrips.push(("cache", cache.to_jsonl().unwrap().into_bytes() == std::fs::read(dir.join(pipeline::CACHE_FILE)).unwrap()));
    for file in [pipeline::SCORE_FILE, "q_arq.json", pipeline::AWR_FILE] {
        let ck = Checkpoint::load(&dir.join(file)).unwrap();
        let bin = file.replace(".json", ".bin");
        let (json, bytes) = ck.encode(&bin).unwrap();
        let ok = json.into_bytes() == std::fs::read(dir.join(file)).unwrap() && bytes == std::fs::read(dir.join(&bin)).unwrap();
        roundtrips.push((file, ok));
    }
    let model = cfg.load_score().unwrap();
    let ck = model.to_checkpoint(serde_json::Value::Null).unwrap();
    let (json, bytes) = ck.encode("m.bin").unwrap();
    let back = ScoreModel::from_checkpoint(&Checkpoint::decode(&json, &bytes).unwrap()).unwrap().0;
    roundtrips.push(("score params", back == model));
    let failed: Vec<&str> = roundtrips.iter().filter(|r| !r.1).map(|r| r.0).collect();
    outcome(
        reproducible && failed.is_empty(),
        format!(
            "two runs and an echoed-config rerun byte-identical over {names:?}: {reproducible}; round-trip failures {failed:?}"
        ),
    )
}
