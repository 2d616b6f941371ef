use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{advantage, softmax, Policy};
use crate::arq::QEnsemble;
use crate::data::{DatasetHeader, OfflineDataset};
use crate::error::{Error, Result};
use crate::sampling::{BehaviorModel, CacheParams, SupportCache, Which};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LogitMode {
    #[default]
    QLogits,
    AdvantageLogits,
}

fn state_key(s: &[f64]) -> Vec<u64> {
    s.iter().map(|v| v.to_bits()).collect()
}

/// Softmax over in-support candidates with logits `α·Q` or `α·A`. Without
/// a Q ensemble the choice is uniform, i.e. the behaviour policy.
///
/// States seen in the dataset use their cached candidates. Other states need
/// a behaviour model: `params.n` fresh samples are drawn and filtered at
/// `params.log_eps`; if none survive, the most likely sample is kept.
pub struct ImplicitPolicy<'a> {
    pub q: Option<&'a QEnsemble>,
    pub alpha: f64,
    pub mode: LogitMode,
    pub header: DatasetHeader,
    cache: &'a SupportCache,
    known: HashMap<Vec<u64>, (usize, Which)>,
    novel: Option<&'a dyn BehaviorModel>,
    params: CacheParams,
}

impl<'a> ImplicitPolicy<'a> {
    pub fn new(q: &'a QEnsemble, ds: &OfflineDataset, cache: &'a SupportCache, alpha: f64, mode: LogitMode) -> Result<Self> {
        Self::build(Some(q), ds, cache, alpha, mode)
    }

    /// Uniform choice among the candidates.
    pub fn behavior_cloning(ds: &OfflineDataset, cache: &'a SupportCache) -> Result<Self> {
        Self::build(None, ds, cache, 0.0, LogitMode::QLogits)
    }

    fn build(
        q: Option<&'a QEnsemble>,
        ds: &OfflineDataset,
        cache: &'a SupportCache,
        alpha: f64,
        mode: LogitMode,
    ) -> Result<Self> {
        if !(alpha >= 0.0) {
            return Err(Error::contract(format!("temperature must be ≥ 0, got {alpha}")));
        }
        if cache.rows() != ds.len() {
            return Err(Error::contract("cache and dataset differ in row count"));
        }
        let mut known = HashMap::new();
        for (row, t) in ds.transitions.iter().enumerate() {
            known.entry(state_key(&t.s)).or_insert((row, Which::S));
            known.entry(state_key(&t.s2)).or_insert((row, Which::S2));
        }
        Ok(ImplicitPolicy {
            q,
            alpha,
            mode,
            header: ds.header.clone(),
            cache,
            known,
            novel: None,
            params: cache.params,
        })
    }

    /// Sample fresh candidates from `behavior` at states missing from the
    /// dataset. `behavior` works in the normalized action box.
    pub fn with_novel_sampler(mut self, behavior: &'a dyn BehaviorModel) -> Self {
        self.novel = Some(behavior);
        self
    }

    /// Normalized in-support candidates for `state`.
    pub fn candidates(&self, state: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
        if let Some(&(row, which)) = self.known.get(&state_key(state)) {
            return Ok(self.cache.actions(row, which).to_vec());
        }
        let behavior = self
            .novel
            .ok_or_else(|| Error::Missing(format!("state {state:?} is not in the dataset and no sampler is set")))?;
        let samples = behavior.sample_actions(state, self.params.n, rng)?;
        let inside: Vec<usize> = (0..samples.nrows())
            .filter(|&i| samples.row(i).iter().all(|v| (-1.0..=1.0).contains(v)))
            .collect();
        let samples = samples.select(ndarray::Axis(0), &inside);
        let logp = behavior.log_likelihoods(state, samples.view())?;
        let mut out: Vec<Vec<f64>> = logp
            .iter()
            .enumerate()
            .filter(|(_, &lp)| self.params.keeps(lp))
            .map(|(i, _)| samples.row(i).to_vec())
            .collect();
        if out.is_empty() {
            let best = logp
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .ok_or_else(|| Error::numerical(format!("no sample for state {state:?} fell inside the action box")))?;
            out.push(samples.row(best).to_vec());
        }
        Ok(out)
    }

    /// Selection probabilities over `candidates`.
    pub fn probabilities(&self, state: &[f64], candidates: &[Vec<f64>]) -> Result<Vec<f64>> {
        let Some(q) = self.q else {
            return Ok(vec![1.0 / candidates.len() as f64; candidates.len()]);
        };
        let logits = match self.mode {
            LogitMode::AdvantageLogits => advantage(q, state, candidates)?,
            LogitMode::QLogits => {
                let states = crate::sampling::repeat_row(state, candidates.len());
                let actions = crate::data::rows_to_array(candidates.iter().map(|a| a.as_slice()), q.action_dim);
                q.q_values(states.view(), actions.view())?
            }
        };
        Ok(softmax(&logits, self.alpha))
    }

    /// One normalized action drawn from the candidate softmax.
    pub fn sample_normalized(&self, state: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let c = self.candidates(state, rng)?;
        let p = self.probabilities(state, &c)?;
        let dist = WeightedIndex::new(&p).map_err(|e| Error::numerical(format!("bad candidate weights: {e}")))?;
        Ok(c[dist.sample(rng)].clone())
    }
}

impl Policy for ImplicitPolicy<'_> {
    fn name(&self) -> String {
        match self.q {
            Some(_) => format!("implicit(alpha={})", self.alpha),
            None => "behavior".into(),
        }
    }

    fn act(&self, state: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        Ok(self.header.denormalize_action(&self.sample_normalized(state, rng)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Transition;
    use crate::nn::{Activation, Arch, Dense, MlpParams};
    use crate::sampling::CacheEntry;
    use ndarray::{array, Array1};
    use rand::SeedableRng;

    /// Q(s, a) = w·a.
    fn linear_q(w: f64) -> QEnsemble {
        let net = MlpParams::from_layers(
            Arch::Plain,
            vec![Dense {
                weight: array![[0.0, w]],
                bias: Array1::zeros(1),
                activation: Activation::Identity,
            }],
        )
        .unwrap();
        QEnsemble::from_nets(vec![net.clone()], vec![net], 0.995, 1, 1).unwrap()
    }

    /// One-state dataset whose cache holds `cands` for every row.
    fn fixture(cands: &[f64]) -> (OfflineDataset, SupportCache) {
        let rows = vec![
            Transition {
                s: vec![0.0],
                a: vec![-1.0],
                r: 0.0,
                s2: vec![0.0],
                done: true,
                goal: false,
            },
            Transition {
                s: vec![0.0],
                a: vec![1.0],
                r: 0.0,
                s2: vec![0.0],
                done: true,
                goal: false,
            },
        ];
        let ds = OfflineDataset::new("t", 0, rows).unwrap();
        let entries = (0..2)
            .flat_map(|row| {
                [Which::S, Which::S2].map(|which| CacheEntry {
                    row,
                    which,
                    actions: cands.iter().map(|&a| vec![a]).collect(),
                    logp: vec![0.0; cands.len()],
                    fallback: false,
                })
            })
            .collect();
        (ds, SupportCache::from_entries(CacheParams::default(), entries).unwrap())
    }

    fn frequencies(pol: &ImplicitPolicy, cands: &[f64], draws: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = vec![0usize; cands.len()];
        for _ in 0..draws {
            let a = pol.sample_normalized(&[0.0], &mut rng).unwrap();
            counts[cands.iter().position(|&c| c == a[0]).unwrap()] += 1;
        }
        counts.into_iter().map(|c| c as f64 / draws as f64).collect()
    }

    #[test]
    fn zero_temperature_is_uniform() {
        let cands = [-0.5, 0.1, 0.7];
        let (ds, cache) = fixture(&cands);
        let q = linear_q(3.0);
        let pol = ImplicitPolicy::new(&q, &ds, &cache, 0.0, LogitMode::QLogits).unwrap();
        let c = pol.candidates(&[0.0], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(pol.probabilities(&[0.0], &c).unwrap(), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn huge_temperature_is_greedy() {
        let cands = [-0.5, 0.1, 0.7];
        let (ds, cache) = fixture(&cands);
        let q = linear_q(1.0);
        let pol = ImplicitPolicy::new(&q, &ds, &cache, 1e6, LogitMode::QLogits).unwrap();
        assert!(frequencies(&pol, &cands, 10_000)[2] >= 0.999);
    }

    #[test]
    fn engineered_probabilities_match_frequencies() {
        // Q gap of ln 3 between the candidates gives [1/4, 3/4] at α = 1
        let cands = [0.0, 1.0];
        let (ds, cache) = fixture(&cands);
        let q = linear_q(3f64.ln());
        let pol = ImplicitPolicy::new(&q, &ds, &cache, 1.0, LogitMode::QLogits).unwrap();
        let p = pol.probabilities(&[0.0], &[vec![0.0], vec![1.0]]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12);
        let n = 10_000.0;
        let f = frequencies(&pol, &cands, n as usize);
        let sigma = (0.25f64 * 0.75 / n).sqrt();
        assert!((f[1] - 0.75).abs() < 3.0 * sigma, "{f:?}");
    }

    #[test]
    fn advantage_and_q_modes_agree() {
        let cands = [-0.9, -0.2, 0.4, 0.8];
        let (ds, cache) = fixture(&cands);
        let q = linear_q(2.5);
        let c: Vec<Vec<f64>> = cands.iter().map(|&a| vec![a]).collect();
        let a = ImplicitPolicy::new(&q, &ds, &cache, 1.3, LogitMode::QLogits).unwrap();
        let b = ImplicitPolicy::new(&q, &ds, &cache, 1.3, LogitMode::AdvantageLogits).unwrap();
        let (pa, pb) = (a.probabilities(&[0.0], &c).unwrap(), b.probabilities(&[0.0], &c).unwrap());
        for (x, y) in pa.iter().zip(&pb) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn unknown_state_without_sampler_is_an_error() {
        let (ds, cache) = fixture(&[0.0]);
        let q = linear_q(1.0);
        let pol = ImplicitPolicy::new(&q, &ds, &cache, 1.0, LogitMode::QLogits).unwrap();
        assert!(pol.candidates(&[0.5], &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn act_returns_raw_actions() {
        let cands = [1.0];
        let (ds, cache) = fixture(&cands);
        let q = linear_q(1.0);
        let pol = ImplicitPolicy::new(&q, &ds, &cache, 1.0, LogitMode::QLogits).unwrap();
        let a = pol.act(&[0.0], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(a, ds.header.denormalize_action(&[1.0]));
    }
}
