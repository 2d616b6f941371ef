//! Action-restricted Q-learning on cliffbandit with a cache drawn from the
//! exact behaviour, then implicit and AWR policy extraction.
//!
//! The unrestricted optimum a = 0 is never in the data; the best supported
//! action is |a| = 0.2 with return 0.96.

use arq::arq::{arq_train, ArqConfig};
use arq::envs::{generate_dataset, CliffBandit, NormalizedBehavior, ToyEnv};
use arq::policy::{awr_train, evaluate_policy, AwrConfig, ImplicitPolicy, LogitMode};
use arq::sampling::{CacheParams, SupportCache};

fn main() -> arq::Result<()> {
    let ds = generate_dataset(&CliffBandit, 1000, 0)?;
    let exact = CliffBandit.behavior();
    let behavior = NormalizedBehavior {
        inner: exact.as_ref(),
        header: ds.header.clone(),
    };
    let cache = SupportCache::build(&behavior, &ds, CacheParams::default(), 0)?;
    let cfg = ArqConfig {
        steps: 2000,
        lr: 1e-3,
        ..ArqConfig::default()
    };
    let (q, report) = arq_train(&ds, &cache, &cfg, 0)?;
    let last = report.log.last().expect("log rows");
    println!("Q loss {:.4}, mean Q {:.3}, out-of-cache bootstraps {}", last.loss, last.mean_q, report.out_of_cache);

    for alpha in [0.0, 1.0, 10.0, 100.0] {
        let pol = ImplicitPolicy::new(&q, &ds, &cache, alpha, LogitMode::QLogits)?;
        let r = evaluate_policy(&CliffBandit, &pol, 500, 0.99, 1)?;
        println!("implicit alpha {alpha:5}: return {:.3} +- {:.3}", r.mean_return, r.std_return);
    }

    let (awr, _) = awr_train(&ds, &q, &cache, 10.0, &AwrConfig { steps: 2000, ..AwrConfig::default() }, 0)?;
    let r = evaluate_policy(&CliffBandit, &awr, 10, 0.99, 1)?;
    println!("awr alpha 10: return {:.3} (best supported {:.2})", r.mean_return, CliffBandit.optimal_return());
    Ok(())
}
