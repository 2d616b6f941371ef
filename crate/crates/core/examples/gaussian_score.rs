//! Train a score model on N(0, 0.3²) actions, then check the sampler's
//! moments and the ODE log-likelihood against the closed form.

use arq::sampling::{log_likelihood_batch, pc_sample, OdeTolerance, SamplerConfig};
use arq::sde::{train_score_model, ScoreTrainConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const STD: f64 = 0.3;

fn main() -> arq::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let actions = Array2::from_shape_fn((2000, 1), |_| STD * rng.sample::<f64, _>(StandardNormal));
    let states = Array2::zeros((2000, 1));
    let cfg = ScoreTrainConfig {
        steps: 4000,
        ..ScoreTrainConfig::default()
    };
    let (model, report) = train_score_model(states.view(), actions.view(), &cfg, 1)?;
    let (first, last) = report.first_last_window();
    println!("dsm loss {first:.4} -> {last:.4}");

    let x = pc_sample(&model, &[0.0], 1000, &SamplerConfig::default(), &mut rng)?;
    println!("samples: mean {:.3}, std {:.3} (target 0, {STD})", x.mean().unwrap(), x.std(0.0));

    let probe = [0.0, 0.3, 0.6];
    let a = Array2::from_shape_vec((3, 1), probe.to_vec()).unwrap();
    let lp = log_likelihood_batch(&model, Array2::zeros((3, 1)).view(), a.view(), &OdeTolerance::default())?;
    for (v, l) in probe.iter().zip(lp) {
        let exact = -0.5 * (v / STD).powi(2) - (STD * (2.0 * std::f64::consts::PI).sqrt()).ln();
        println!("log p({v:.1}) = {l:.3}, exact {exact:.3}");
    }
    Ok(())
}
