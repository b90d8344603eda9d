//! Per-slot rate-selection policies.
//!
//! Thompson Sampling draws one Beta posterior sample per rate and plays the
//! rate with the largest sampled throughput. Constrained Thompson Sampling
//! only accepts joint samples whose success probabilities strictly decrease
//! with the rate index. A UCB1 baseline and a full-CSI oracle complete the
//! set. Every argmax breaks ties toward the lowest rate index.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::channel::{argmax_first, RateTable, Scenario};
use crate::error::{Error, Result};

/// Pull, success and failure counts per rate since the last reset.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ArmStats {
    pulls: Vec<u64>,
    successes: Vec<u64>,
    failures: Vec<u64>,
}

impl ArmStats {
    pub fn new(arms: usize) -> Self {
        Self {
            pulls: vec![0; arms],
            successes: vec![0; arms],
            failures: vec![0; arms],
        }
    }

    /// Builds stats from success and failure counts.
    pub fn from_counts(successes: Vec<u64>, failures: Vec<u64>) -> Self {
        assert_eq!(successes.len(), failures.len(), "count vectors differ in length");
        let pulls = successes.iter().zip(&failures).map(|(s, f)| s + f).collect();
        Self {
            pulls,
            successes,
            failures,
        }
    }

    pub fn len(&self) -> usize {
        self.pulls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pulls.is_empty()
    }

    pub fn record(&mut self, arm: usize, success: bool) {
        self.pulls[arm] += 1;
        if success {
            self.successes[arm] += 1;
        } else {
            self.failures[arm] += 1;
        }
    }

    pub fn reset(&mut self) {
        self.pulls.iter_mut().for_each(|n| *n = 0);
        self.successes.iter_mut().for_each(|n| *n = 0);
        self.failures.iter_mut().for_each(|n| *n = 0);
    }

    pub fn pulls(&self, arm: usize) -> u64 {
        self.pulls[arm]
    }

    pub fn successes(&self, arm: usize) -> u64 {
        self.successes[arm]
    }

    pub fn failures(&self, arm: usize) -> u64 {
        self.failures[arm]
    }

    pub fn total_pulls(&self) -> u64 {
        self.pulls.iter().sum()
    }

    pub fn all_unsampled(&self) -> bool {
        self.pulls.iter().all(|&n| n == 0)
    }

    /// `s_i / N_i`, or `None` for an unsampled arm.
    pub fn empirical_mean(&self, arm: usize) -> Option<f64> {
        match self.pulls[arm] {
            0 => None,
            n => Some(self.successes[arm] as f64 / n as f64),
        }
    }
}

/// A joint posterior sample `λ̂`, one entry per rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledVector(pub Vec<f64>);

impl SampledVector {
    /// Strict decrease across the rate index.
    pub fn is_monotone(&self) -> bool {
        self.0.windows(2).all(|w| w[0] > w[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Ts,
    Cots,
    Ucb,
    Oracle,
}

/// What constrained sampling returns once `cots_max_attempts` joint draws
/// have all been rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CotsFallback {
    /// Sort the last draw into decreasing order.
    Sort,
    /// Weighted isotonic projection of the last draw, each arm weighted by
    /// its posterior pseudo-count `N_i + 2`.
    #[default]
    Isotonic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    #[serde(default = "default_cots_max_attempts")]
    pub cots_max_attempts: u32,
    #[serde(default)]
    pub cots_fallback: CotsFallback,
    #[serde(default = "default_ucb_scale")]
    pub ucb_exploration_scale: f64,
}

fn default_cots_max_attempts() -> u32 {
    1000
}

fn default_ucb_scale() -> f64 {
    1.0
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            cots_max_attempts: default_cots_max_attempts(),
            cots_fallback: CotsFallback::default(),
            ucb_exploration_scale: default_ucb_scale(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cots_max_attempts < 1 {
            return Err(Error::InvalidPolicy("cots_max_attempts must be >= 1".into()));
        }
        if !(self.ucb_exploration_scale >= 0.0 && self.ucb_exploration_scale.is_finite()) {
            return Err(Error::InvalidPolicy(
                "ucb_exploration_scale must be a finite non-negative number".into(),
            ));
        }
        Ok(())
    }
}

/// Posterior `Beta(s + 1, f + 1)` of one arm. The flat prior `Beta(1, 1)` is
/// drawn as a plain uniform.
#[derive(Debug, Clone, Copy)]
enum Posterior {
    Flat,
    Beta(Beta<f64>),
}

impl Posterior {
    fn new(successes: u64, failures: u64) -> Self {
        if successes == 0 && failures == 0 {
            return Posterior::Flat;
        }
        let beta = Beta::new(successes as f64 + 1.0, failures as f64 + 1.0)
            .expect("Beta shape parameters are always >= 1");
        Posterior::Beta(beta)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Posterior::Flat => rng.random(),
            Posterior::Beta(beta) => beta.sample(rng),
        }
    }
}

/// One draw from `Beta(s + 1, f + 1)`.
pub fn sample_beta<R: Rng + ?Sized>(successes: u64, failures: u64, rng: &mut R) -> f64 {
    Posterior::new(successes, failures).sample(rng)
}

/// `argmax_i λ̂_i · r_i`.
pub fn argmax_throughput(lambda: &[f64], rates: &RateTable) -> usize {
    let products = lambda.iter().zip(rates.as_slice()).map(|(l, r)| l * r);
    argmax_first(products).map_or(0, |(i, _)| i)
}

/// Thompson Sampling selection.
pub fn ts_select<R: Rng + ?Sized>(stats: &ArmStats, rates: &RateTable, rng: &mut R) -> usize {
    ts_select_with(stats, rates, |_, s, f| sample_beta(s, f, rng))
}

/// Thompson Sampling with an injected posterior sampler `(arm, s, f) -> λ̂`.
pub fn ts_select_with<S>(stats: &ArmStats, rates: &RateTable, mut sampler: S) -> usize
where
    S: FnMut(usize, u64, u64) -> f64,
{
    let lambda: Vec<f64> = (0..stats.len())
        .map(|i| sampler(i, stats.successes(i), stats.failures(i)))
        .collect();
    argmax_throughput(&lambda, rates)
}

/// Result of constrained posterior sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct CotsDraw {
    pub vector: SampledVector,
    /// Joint draws made, including the accepted one.
    pub attempts: u32,
    /// True when the attempt cap was hit and the last draw was repaired.
    pub fallback: bool,
}

/// Rejection-samples the product of Beta posteriors restricted to strictly
/// decreasing vectors.
pub fn cots_sample<R: Rng + ?Sized>(
    stats: &ArmStats,
    max_attempts: u32,
    fallback: CotsFallback,
    rng: &mut R,
) -> CotsDraw {
    let posteriors: Vec<Posterior> = (0..stats.len())
        .map(|i| Posterior::new(stats.successes(i), stats.failures(i)))
        .collect();
    cots_sample_with(stats, max_attempts, fallback, |i, _, _| posteriors[i].sample(rng))
}

/// [`cots_sample`] with an injected posterior sampler.
///
/// Each attempt draws arms in index order and abandons the attempt at the
/// first entry that is not below its predecessor. The accepted vector has
/// the same law as full joint redraws; only the number of variates consumed
/// changes. The final attempt always draws the full vector so the fallback
/// can be repaired.
pub fn cots_sample_with<S>(
    stats: &ArmStats,
    max_attempts: u32,
    fallback: CotsFallback,
    mut sampler: S,
) -> CotsDraw
where
    S: FnMut(usize, u64, u64) -> f64,
{
    let arms = stats.len();
    let max_attempts = max_attempts.max(1);
    let mut lambda = Vec::with_capacity(arms);
    for attempt in 1..=max_attempts {
        lambda.clear();
        let last = attempt == max_attempts;
        let mut ordered = true;
        for i in 0..arms {
            let x = sampler(i, stats.successes(i), stats.failures(i));
            if let Some(&prev) = lambda.last() {
                if x >= prev {
                    ordered = false;
                    if !last {
                        break;
                    }
                }
            }
            lambda.push(x);
        }
        if ordered {
            return CotsDraw {
                vector: SampledVector(lambda),
                attempts: attempt,
                fallback: false,
            };
        }
    }

    match fallback {
        CotsFallback::Sort => lambda.sort_by(|a, b| b.total_cmp(a)),
        CotsFallback::Isotonic => {
            let weights: Vec<f64> = (0..arms).map(|i| stats.pulls(i) as f64 + 2.0).collect();
            lambda = isotonic_decreasing(&lambda, &weights);
        }
    }
    // Equal neighbours would break strict membership; nudge them apart.
    for i in 1..lambda.len() {
        if lambda[i] >= lambda[i - 1] {
            lambda[i] = next_down(lambda[i - 1]);
        }
    }
    CotsDraw {
        vector: SampledVector(lambda),
        attempts: max_attempts,
        fallback: true,
    }
}

/// Weighted least-squares fit that is non-increasing in the index
/// (pool adjacent violators).
pub fn isotonic_decreasing(values: &[f64], weights: &[f64]) -> Vec<f64> {
    // (mean, weight, length) per block
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        let mut block = (v, w, 1);
        while let Some(&(mean, weight, len)) = blocks.last() {
            if mean >= block.0 {
                break;
            }
            blocks.pop();
            let total = weight + block.1;
            block = ((mean * weight + block.0 * block.1) / total, total, len + block.2);
        }
        blocks.push(block);
    }
    blocks
        .into_iter()
        .flat_map(|(mean, _, len)| std::iter::repeat_n(mean, len))
        .collect()
}

fn next_down(x: f64) -> f64 {
    if x > 0.0 {
        f64::from_bits(x.to_bits() - 1)
    } else if x == 0.0 {
        -f64::from_bits(1)
    } else {
        f64::from_bits(x.to_bits() + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CotsSelection {
    pub index: usize,
    pub attempts: u32,
    pub fallback: bool,
}

/// Constrained Thompson Sampling selection.
pub fn cots_select<R: Rng + ?Sized>(
    stats: &ArmStats,
    rates: &RateTable,
    config: &PolicyConfig,
    rng: &mut R,
) -> CotsSelection {
    let draw = cots_sample(stats, config.cots_max_attempts, config.cots_fallback, rng);
    CotsSelection {
        index: argmax_throughput(&draw.vector.0, rates),
        attempts: draw.attempts,
        fallback: draw.fallback,
    }
}

/// UCB1 on throughput. Untried arms go first, lowest index first.
pub fn ucb_select(
    stats: &ArmStats,
    t_in_segment: u64,
    rates: &RateTable,
    config: &PolicyConfig,
) -> usize {
    if let Some(untried) = (0..stats.len()).find(|&i| stats.pulls(i) == 0) {
        return untried;
    }
    let log_t = (t_in_segment.max(1) as f64).ln();
    let scale = config.ucb_exploration_scale;
    let indices = (0..stats.len()).map(|i| {
        let n = stats.pulls(i) as f64;
        let mean = stats.successes(i) as f64 / n;
        let bonus = scale * (2.0 * log_t / n).sqrt();
        rates.as_slice()[i] * (mean + bonus).min(1.0)
    });
    argmax_first(indices).map_or(0, |(i, _)| i)
}

/// Full-CSI comparator: the optimal rate for the true state at `t`.
pub fn oracle_select(scenario: &Scenario, t: usize) -> Result<usize> {
    let state = scenario.state_at(t)?;
    Ok(scenario.best_rate(state)?.0)
}
