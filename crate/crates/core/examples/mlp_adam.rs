//! Fit y = sin(3x) with a small swish MLP, Adam and an EMA shadow, then
//! round-trip the result through a checkpoint.

use arq::nn::{Activation, AdamState, Checkpoint, EmaParams, MlpParams};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> arq::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = MlpParams::plain(&[1, 32, 32, 1], Activation::Swish, Activation::Identity, &mut rng)?;
    let mut adam = AdamState::new(&net);
    let mut ema = EmaParams::new(&net, 0.99)?;

    for step in 0..3000 {
        let x = Array2::from_shape_fn((64, 1), |_| rng.random_range(-1.0..1.0));
        let y = x.mapv(|v: f64| (3.0 * v).sin());
        let (pred, tape) = net.forward_batch(x.view())?;
        let err = &pred - &y;
        let loss = err.mapv(|e| e * e).mean().unwrap();
        let (grads, _) = net.backward(&tape, (&err * (2.0 / 64.0)).view())?;
        adam.step(&mut net, &grads, 3e-3)?;
        ema.update(&net)?;
        if step % 500 == 0 {
            println!("step {step:5} mse {loss:.5}");
        }
    }

    let shadow = ema.into_shadow();
    let dir = std::env::temp_dir().join("arq_mlp_example");
    std::fs::create_dir_all(&dir).ok();
    let path = dir.join("sine.json");
    Checkpoint::new(serde_json::json!({ "task": "sine" })).with("net", &shadow).save(&path)?;
    let back = Checkpoint::load(&path)?;
    let probe = ndarray::array![[0.5]];
    println!(
        "f(0.5) = {:.4} (target {:.4}), reloaded {:.4}",
        shadow.predict(probe.view())?[[0, 0]],
        1.5f64.sin(),
        back.get("net")?.predict(probe.view())?[[0, 0]]
    );
    Ok(())
}
