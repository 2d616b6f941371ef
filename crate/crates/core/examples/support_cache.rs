//! Build a support cache for cliffbandit from its exact behaviour density
//! and show what the ln ε filter keeps.

use arq::envs::{generate_dataset, CliffBandit, NormalizedBehavior, ToyEnv};
use arq::sampling::{CacheParams, SupportCache, Which};

fn main() -> arq::Result<()> {
    let ds = generate_dataset(&CliffBandit, 200, 0)?;
    let exact = CliffBandit.behavior();
    let behavior = NormalizedBehavior {
        inner: exact.as_ref(),
        header: ds.header.clone(),
    };
    for log_eps in [-5.0, 0.0, 1.0] {
        let params = CacheParams {
            log_eps,
            ..CacheParams::default()
        };
        let cache = SupportCache::build(&behavior, &ds, params, 3)?;
        let kept: usize = cache.entries().iter().map(|e| e.actions.len()).sum();
        println!(
            "ln eps {log_eps:5.1}: {kept} candidates over {} entries, {} fallbacks",
            cache.entries().len(),
            cache.fallback_count()
        );
    }
    let cache = SupportCache::build(&behavior, &ds, CacheParams::default(), 3)?;
    let raw: Vec<String> = cache
        .actions(0, Which::S)
        .iter()
        .take(8)
        .map(|u| format!("{:.2}", ds.header.denormalize_action(u)[0]))
        .collect();
    println!("row 0 candidates (raw): {}", raw.join(" "));
    Ok(())
}
