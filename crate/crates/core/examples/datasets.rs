//! Generate a behaviour dataset for each toy environment and write it as
//! JSON lines.

use arq::data::OfflineDataset;
use arq::envs::{env_by_name, generate_dataset};

fn main() -> arq::Result<()> {
    let dir = std::env::temp_dir().join("arq_datasets");
    std::fs::create_dir_all(&dir).ok();
    for name in ["lineworld", "stitchgrid", "cliffbandit"] {
        let env = env_by_name(name)?;
        let ds = generate_dataset(env.as_ref(), 500, 1)?;
        let path = dir.join(format!("{name}.jsonl"));
        ds.save(&path)?;
        let back = OfflineDataset::load(&path)?;
        let mean_r = ds.transitions.iter().map(|t| t.r).sum::<f64>() / ds.len() as f64;
        println!(
            "{name:12} {} rows, {} trajectories, actions in [{:.3}, {:.3}], mean reward {mean_r:.3}, reload equal: {}",
            ds.len(),
            ds.trajectories().len(),
            ds.header.action_min[0],
            ds.header.action_max[0],
            back == ds
        );
    }
    println!("written to {}", dir.display());
    Ok(())
}
