//! Train a score model on lineworld and write its log-density heatmap as
//! CSV and PGM next to the exact support.
//!
//! Pass a step count to train longer: `cargo run --release --example density_grid -- 60000`.

use arq::envs::{generate_dataset, lineworld, LineWorld};
use arq::grid::{linspace, DensityGrid};
use arq::sampling::OdeTolerance;
use arq::sde::{train_score_model, ScoreTrainConfig};

fn main() -> arq::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let ds = generate_dataset(&LineWorld, 4000, 0)?;
    let cfg = ScoreTrainConfig {
        steps,
        cosine_decay: true,
        ..ScoreTrainConfig::default()
    };
    let (model, _) = train_score_model(ds.states().view(), ds.normalized_actions().view(), &cfg, 1)?;
    let grid = DensityGrid::evaluate(
        &model,
        &ds.header,
        &linspace(-1.0, 1.0, 60),
        &linspace(-1.0, 1.0, 60),
        -5.0,
        &OdeTolerance::default(),
    )?;

    let dir = std::env::temp_dir().join("arq_density_grid");
    std::fs::create_dir_all(&dir).ok();
    std::fs::write(dir.join("grid.csv"), grid.to_csv()).ok();
    std::fs::write(dir.join("grid.pgm"), grid.to_pgm()).ok();

    // text rendering: '#' learned in-support, '.' exact support only
    for (i, a) in grid.a.iter().enumerate().rev().step_by(3) {
        let row: String = grid
            .s
            .iter()
            .enumerate()
            .map(|(j, &s)| match (grid.logp[[i, j]] >= -5.0, lineworld::density(s, *a) > 0.0) {
                (true, true) => '#',
                (true, false) => 'x',
                (false, true) => '.',
                (false, false) => ' ',
            })
            .collect();
        println!("{a:6.2} |{row}|");
    }
    println!("x marks learned support outside the true one; files in {}", dir.display());
    Ok(())
}
