//! Regret and throughput aggregation, plus evaluators for the analytic
//! regret and detection bounds.
//!
//! All logarithms are natural.

use serde::Serialize;

use crate::channel::Scenario;
use crate::controller::RunTrace;
use crate::detect::DetectorConfig;
use crate::error::{Error, Result};

/// Oracle expected throughput at `t` minus that of `chosen`. Never negative.
pub fn instant_regret(scenario: &Scenario, t: usize, chosen: usize) -> Result<f64> {
    let state = scenario.state_at(t)?;
    let (_, best) = scenario.best_rate(state)?;
    Ok(best - scenario.expected_throughput(state, chosen)?)
}

/// Per-slot statistics across runs. Index 0 is slot 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretSeries {
    pub mean_cum_regret: Vec<f64>,
    pub se_cum_regret: Vec<f64>,
    pub mean_cum_throughput: Vec<f64>,
    pub se_cum_throughput: Vec<f64>,
    pub detect_rate: Vec<f64>,
    pub runs: usize,
}

impl RegretSeries {
    pub fn len(&self) -> usize {
        self.mean_cum_regret.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean_cum_regret.is_empty()
    }

    pub fn final_regret(&self) -> f64 {
        self.mean_cum_regret.last().copied().unwrap_or(0.0)
    }

    pub fn final_throughput(&self) -> f64 {
        self.mean_cum_throughput.last().copied().unwrap_or(0.0)
    }
}

/// Cumulative expected regret of one trace, slot by slot.
pub fn cumulative_regret(trace: &RunTrace, scenario: &Scenario) -> Result<Vec<f64>> {
    let mut total = 0.0;
    trace
        .records
        .iter()
        .map(|r| {
            total += instant_regret(scenario, r.t, r.chosen)?;
            Ok(total)
        })
        .collect()
}

/// Cumulative realized throughput `Σ r_{i(t)} X(t)` of one trace.
pub fn cumulative_throughput(trace: &RunTrace, scenario: &Scenario) -> Result<Vec<f64>> {
    let mut total = 0.0;
    trace
        .records
        .iter()
        .map(|r| {
            if r.outcome {
                total += scenario.rates().get(r.chosen)?;
            }
            Ok(total)
        })
        .collect()
}

/// Running mean and sum of squared deviations (Welford).
#[derive(Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.n;
        self.m2 += delta * (x - self.mean);
    }

    fn standard_error(&self) -> f64 {
        if self.n < 2.0 {
            return 0.0;
        }
        let variance = (self.m2 / (self.n - 1.0)).max(0.0);
        (variance / self.n).sqrt()
    }
}

/// Mean and standard error of cumulative regret and realized throughput.
pub fn aggregate(traces: &[RunTrace], scenario: &Scenario) -> Result<RegretSeries> {
    let horizon = scenario.horizon();
    if traces.is_empty() {
        return Err(Error::MismatchedTraces("no traces to aggregate".into()));
    }
    for (k, trace) in traces.iter().enumerate() {
        if trace.len() != horizon {
            return Err(Error::MismatchedTraces(format!(
                "trace {k} has {} slots, scenario has {horizon}",
                trace.len()
            )));
        }
        if let Some((slot, r)) = trace.records.iter().enumerate().find(|(s, r)| r.t != s + 1) {
            return Err(Error::MismatchedTraces(format!(
                "trace {k} row {slot} is slot {}",
                r.t
            )));
        }
    }

    let mut regret = vec![Moments::default(); horizon];
    let mut throughput = vec![Moments::default(); horizon];
    let mut detections = vec![0usize; horizon];
    for trace in traces {
        let cum_regret = cumulative_regret(trace, scenario)?;
        let cum_tp = cumulative_throughput(trace, scenario)?;
        for s in 0..horizon {
            regret[s].push(cum_regret[s]);
            throughput[s].push(cum_tp[s]);
            if trace.records[s].detected {
                detections[s] += 1;
            }
        }
    }

    let runs = traces.len();
    Ok(RegretSeries {
        mean_cum_regret: regret.iter().map(|m| m.mean).collect(),
        se_cum_regret: regret.iter().map(Moments::standard_error).collect(),
        mean_cum_throughput: throughput.iter().map(|m| m.mean).collect(),
        se_cum_throughput: throughput.iter().map(Moments::standard_error).collect(),
        detect_rate: detections.iter().map(|&d| d as f64 / runs as f64).collect(),
        runs,
    })
}

/// Bernoulli KL divergence `D(p ‖ q)` in nats, with `0 · ln 0 = 0`.
pub fn kl_bernoulli(p: f64, q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("KL arguments must lie in [0,1]: p={p}, q={q}")));
    }
    if p == q {
        return Ok(0.0);
    }
    if q == 0.0 || q == 1.0 {
        return Err(Error::Domain(format!("KL({p}, {q}) is infinite")));
    }
    let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
    Ok(term(p, q) + term(1.0 - p, 1.0 - q))
}

/// A probability bound that may exceed 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundValue {
    pub value: f64,
    pub vacuous: bool,
}

impl BoundValue {
    fn new(value: f64) -> Self {
        Self {
            value,
            vacuous: value >= 1.0,
        }
    }
}

/// Per-test false-alarm bound `2 exp(−b² w / 2)`.
pub fn fa_bound(w: usize, b: f64) -> BoundValue {
    BoundValue::new(2.0 * (-b * b * w as f64 / 2.0).exp())
}

/// Missed-detection bound `2 exp(−w (b − δ)² / 2)`.
pub fn md_bound(w: usize, b: f64, delta: f64) -> BoundValue {
    let gap = b - delta;
    BoundValue::new(2.0 * (-(w as f64) * gap * gap / 2.0).exp())
}

/// Computable pieces of the stationary-segment regret bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma1Terms {
    pub state: usize,
    pub segment_len: usize,
    pub epsilon: f64,
    pub optimal_rate: usize,
    pub max_gap: f64,
    /// `max Δ · (2 T² e^{−w b²/2} + T / F)`.
    pub false_alarm_and_forced: f64,
    /// `B`.
    pub b_coefficient: f64,
    /// `B · ln((1 − 1/F) · T)`.
    pub ts_term: f64,
    /// The additive `O(R/ε²)` constant has no published value.
    pub omitted_constant: &'static str,
    /// `ln((1 − 1/F) T)` is read as the log of the product.
    pub log_interpretation: &'static str,
}

/// Coefficient `B = (1+ε) Σ_{i≠i*} 1(μ*/r_i < 1) Δ_i / D(θ_i, μ*/r_i)`.
pub fn b_coefficient(scenario: &Scenario, state: usize, epsilon: f64) -> Result<f64> {
    let (best, best_value) = scenario.best_rate(state)?;
    let mut sum = 0.0;
    for (i, &rate) in scenario.rates().as_slice().iter().enumerate() {
        if i == best {
            continue;
        }
        let q = best_value / rate;
        if q >= 1.0 {
            continue;
        }
        let theta = scenario.theta().get(state, i)?;
        let kl = kl_bernoulli(theta, q)?;
        if kl == 0.0 {
            return Err(Error::DegenerateKl(i));
        }
        let gap = best_value - rate * theta;
        sum += gap / kl;
    }
    Ok((1.0 + epsilon) * sum)
}

/// Evaluates the stationary-segment regret bound for channel state `state`
/// over `segment_len` slots.
pub fn lemma1_bound(
    scenario: &Scenario,
    state: usize,
    segment_len: usize,
    detector: &DetectorConfig,
    epsilon: f64,
) -> Result<Lemma1Terms> {
    if segment_len < 1 {
        return Err(Error::Domain("segment length must be >= 1".into()));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::Domain(format!("epsilon must lie in (0,1], got {epsilon}")));
    }
    detector.validate()?;
    let (best, best_value) = scenario.best_rate(state)?;
    let max_gap = (0..scenario.num_rates())
        .map(|i| scenario.expected_throughput(state, i).map(|v| best_value - v))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let t = segment_len as f64;
    let w = detector.w as f64;
    let f = detector.period as f64;
    let b = detector.b;
    let false_alarm_and_forced = max_gap * (2.0 * t * t * (-w * b * b / 2.0).exp() + t / f);
    let b_coefficient = b_coefficient(scenario, state, epsilon)?;
    let ts_term = b_coefficient * ((1.0 - 1.0 / f) * t).ln();

    Ok(Lemma1Terms {
        state,
        segment_len,
        epsilon,
        optimal_rate: best,
        max_gap,
        false_alarm_and_forced,
        b_coefficient,
        ts_term,
        omitted_constant: "O(R/epsilon^2)",
        log_interpretation: "ln((1-1/F)*T)",
    })
}

/// Prescribed detector parameters for sublinear regret.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Theorem1Params {
    pub delta_min: f64,
    pub changes: usize,
    pub horizon: usize,
    pub alpha: f64,
    pub b: f64,
    pub w: usize,
    #[serde(rename = "F")]
    pub period: usize,
    /// `(48 / δ²) (MT)^α ln(MT)`.
    pub min_coherence: f64,
    /// Whether the declared coherence time meets `min_coherence`.
    pub feasible: Option<bool>,
}

impl Theorem1Params {
    /// The prescription as a detector; fails when `F < 2`.
    pub fn detector(&self) -> Result<DetectorConfig> {
        DetectorConfig::new(self.w, self.b, self.period)
    }
}

/// `b = δ/2`, `w = ⌈(12/δ²) ln MT⌉`, `F = ⌈(MT)^α⌉`.
pub fn theorem1_params(
    delta_min: f64,
    changes: usize,
    horizon: usize,
    alpha: f64,
    declared_coherence: Option<usize>,
) -> Result<Theorem1Params> {
    if !(delta_min > 0.0 && delta_min < 1.0) {
        return Err(Error::Domain(format!("delta_min must lie in (0,1), got {delta_min}")));
    }
    if changes < 1 || horizon < 2 {
        return Err(Error::Domain("need M >= 1 and T >= 2".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!("alpha must be > 0, got {alpha}")));
    }
    let mt = (changes * horizon) as f64;
    let log_mt = mt.ln();
    let w = (12.0 / (delta_min * delta_min) * log_mt).ceil() as usize;
    let period = mt.powf(alpha).ceil() as usize;
    let min_coherence = 48.0 / (delta_min * delta_min) * mt.powf(alpha) * log_mt;
    Ok(Theorem1Params {
        delta_min,
        changes,
        horizon,
        alpha,
        b: delta_min / 2.0,
        w,
        period,
        min_coherence,
        feasible: declared_coherence.map(|l| l as f64 >= min_coherence),
    })
}
