//! Experiment configuration, orchestration and artifact output.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{delta_min, validate_scenario, RawScenario, Scenario};
use crate::controller::{run, RunTrace};
use crate::detect::{detect, DetectorConfig, OutcomeWindow};
use crate::error::{Error, Result};
use crate::metrics::{
    aggregate, fa_bound, lemma1_bound, md_bound, theorem1_params, BoundValue, Lemma1Terms,
    RegretSeries, Theorem1Params,
};
use crate::parallel::map_indexed;
use crate::policy::{CotsFallback, PolicyConfig, PolicyKind};

/// Exact header of every `series_<policy>.csv`.
pub const SERIES_HEADER: &str =
    "t,mean_cum_regret,se_cum_regret,mean_cum_throughput,se_cum_throughput,detect_rate";

/// Per-policy detector choice in the config file: `"off"`, `"default"` (the
/// top-level `[detector]` table) or an inline `{ w, b, F }` table.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum DetectorSetting {
    Named(String),
    Inline(DetectorConfig),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyEntry {
    name: String,
    kind: PolicyKind,
    cots_max_attempts: Option<u32>,
    cots_fallback: Option<CotsFallback>,
    ucb_exploration_scale: Option<f64>,
    detector: Option<DetectorSetting>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    rates: Vec<f64>,
    theta: Vec<Vec<f64>>,
    #[serde(default)]
    change_points: Vec<usize>,
    states: Vec<usize>,
    #[serde(rename = "T")]
    horizon: usize,
    #[serde(rename = "L")]
    coherence: usize,
    n_runs: usize,
    #[serde(default)]
    base_seed: u64,
    output_dir: Option<PathBuf>,
    detector: Option<DetectorConfig>,
    policies: Vec<PolicyEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicySpec {
    pub name: String,
    pub policy: PolicyConfig,
    pub detector: Option<DetectorConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    /// Top-level detector; policies without an explicit setting use it.
    pub detector: Option<DetectorConfig>,
    pub policies: Vec<PolicySpec>,
    pub n_runs: usize,
    pub base_seed: u64,
    pub output_dir: PathBuf,
}

/// Parses and validates a TOML experiment file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    parse_config_str(&text, path)
}

/// [`parse_config`] on in-memory text; `origin` is used in error messages.
/// A relative `output_dir` stays relative to the working directory.
pub fn parse_config_str(text: &str, origin: &Path) -> Result<ExperimentConfig> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_path_buf(),
        message: e.to_string(),
    })?;

    let scenario = validate_scenario(&RawScenario {
        rates: file.rates,
        theta: file.theta,
        change_points: file.change_points,
        states: file.states,
        horizon: file.horizon,
        coherence: file.coherence,
    })?;
    if file.n_runs < 1 {
        return Err(Error::InvalidConfig("n_runs must be >= 1".into()));
    }
    if let Some(d) = &file.detector {
        d.validate()?;
    }
    if file.policies.is_empty() {
        return Err(Error::InvalidConfig("at least one policy is required".into()));
    }

    let mut seen = HashSet::new();
    let mut policies = Vec::with_capacity(file.policies.len());
    for entry in file.policies {
        if !seen.insert(entry.name.clone()) {
            return Err(Error::InvalidConfig(format!("duplicate policy name {:?}", entry.name)));
        }
        let mut policy = PolicyConfig::new(entry.kind);
        if let Some(n) = entry.cots_max_attempts {
            policy.cots_max_attempts = n;
        }
        if let Some(fallback) = entry.cots_fallback {
            policy.cots_fallback = fallback;
        }
        if let Some(scale) = entry.ucb_exploration_scale {
            policy.ucb_exploration_scale = scale;
        }
        policy.validate()?;
        let detector = match entry.detector {
            None => file.detector,
            Some(DetectorSetting::Named(name)) => match name.as_str() {
                "off" => None,
                "default" => Some(file.detector.ok_or_else(|| {
                    Error::InvalidConfig(format!(
                        "policy {:?} asks for the default detector but none is configured",
                        entry.name
                    ))
                })?),
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "policy {:?}: unknown detector setting {other:?}",
                        entry.name
                    )))
                }
            },
            Some(DetectorSetting::Inline(d)) => {
                d.validate()?;
                Some(d)
            }
        };
        policies.push(PolicySpec {
            name: entry.name,
            policy,
            detector,
        });
    }

    let output_dir = file.output_dir.unwrap_or_else(|| PathBuf::from("results"));
    Ok(ExperimentConfig {
        scenario,
        detector: file.detector,
        policies,
        n_runs: file.n_runs,
        base_seed: file.base_seed,
        output_dir,
    })
}

/// How often each true change point was caught and how late.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChangePointStats {
    pub change_point: usize,
    /// Fraction of runs with a detection inside the segment that starts here.
    pub detected_fraction: f64,
    /// Mean `τ − ν` over runs that detected it; `None` if none did.
    pub mean_delay: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicySummary {
    pub name: String,
    pub policy: PolicyConfig,
    pub detector: Option<DetectorConfig>,
    pub final_mean_cum_regret: f64,
    pub final_se_cum_regret: f64,
    pub final_mean_cum_throughput: f64,
    pub final_se_cum_throughput: f64,
    pub mean_detections: f64,
    /// Detections that are not the first one after a true change point.
    pub mean_false_alarms: f64,
    pub change_points: Vec<ChangePointStats>,
    /// Fraction of slots where constrained sampling hit the attempt cap and
    /// repaired its last draw.
    pub cots_fallback_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub horizon: usize,
    pub n_runs: usize,
    pub base_seed: u64,
    pub change_points: Vec<usize>,
    pub policies: Vec<PolicySummary>,
}

/// Outcome of one policy: its runs and aggregated series.
#[derive(Debug, Clone)]
pub struct PolicyResult {
    pub spec: PolicySpec,
    pub traces: Vec<RunTrace>,
    pub series: RegretSeries,
}

/// Runs `n_runs` seeded simulations; run `k` uses seed `base_seed + k`.
pub fn run_policy(
    scenario: &Scenario,
    spec: &PolicySpec,
    n_runs: usize,
    base_seed: u64,
) -> Result<PolicyResult> {
    let traces = map_indexed(n_runs, |k| {
        run(scenario, &spec.policy, spec.detector.as_ref(), base_seed.wrapping_add(k as u64))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let series = aggregate(&traces, scenario)?;
    Ok(PolicyResult {
        spec: spec.clone(),
        traces,
        series,
    })
}

/// Runs every configured policy on the same seed sequence.
pub fn simulate(config: &ExperimentConfig) -> Result<Vec<PolicyResult>> {
    config
        .policies
        .iter()
        .map(|spec| run_policy(&config.scenario, spec, config.n_runs, config.base_seed))
        .collect()
}

fn change_point_stats(scenario: &Scenario, traces: &[RunTrace]) -> (Vec<ChangePointStats>, f64) {
    let horizon = scenario.horizon();
    let points = scenario.schedule().change_points();
    let mut matched_total = 0usize;
    let stats = points
        .iter()
        .enumerate()
        .map(|(m, &nu)| {
            let end = points.get(m + 1).copied().unwrap_or(horizon + 1);
            let delays: Vec<usize> = traces
                .iter()
                .filter_map(|tr| tr.detections.iter().find(|&&d| d >= nu && d < end).map(|d| d - nu))
                .collect();
            matched_total += delays.len();
            ChangePointStats {
                change_point: nu,
                detected_fraction: delays.len() as f64 / traces.len() as f64,
                mean_delay: (!delays.is_empty())
                    .then(|| delays.iter().sum::<usize>() as f64 / delays.len() as f64),
            }
        })
        .collect();
    let detections: usize = traces.iter().map(|t| t.detections.len()).sum();
    let false_alarms = (detections - matched_total) as f64 / traces.len() as f64;
    (stats, false_alarms)
}

pub fn summarize(config: &ExperimentConfig, results: &[PolicyResult]) -> ExperimentSummary {
    let scenario = &config.scenario;
    let policies = results
        .iter()
        .map(|r| {
            let runs = r.traces.len() as f64;
            let (change_points, mean_false_alarms) = change_point_stats(scenario, &r.traces);
            let fallbacks: usize = r.traces.iter().map(RunTrace::cots_fallbacks).sum();
            let last = r.series.len() - 1;
            PolicySummary {
                name: r.spec.name.clone(),
                policy: r.spec.policy,
                detector: r.spec.detector,
                final_mean_cum_regret: r.series.mean_cum_regret[last],
                final_se_cum_regret: r.series.se_cum_regret[last],
                final_mean_cum_throughput: r.series.mean_cum_throughput[last],
                final_se_cum_throughput: r.series.se_cum_throughput[last],
                mean_detections: r.traces.iter().map(|t| t.detections.len()).sum::<usize>() as f64 / runs,
                mean_false_alarms,
                change_points,
                cots_fallback_rate: fallbacks as f64 / (runs * scenario.horizon() as f64),
            }
        })
        .collect();
    ExperimentSummary {
        horizon: scenario.horizon(),
        n_runs: config.n_runs,
        base_seed: config.base_seed,
        change_points: scenario.schedule().change_points().to_vec(),
        policies,
    }
}

#[derive(Serialize)]
struct SeriesRow {
    t: usize,
    mean_cum_regret: f64,
    se_cum_regret: f64,
    mean_cum_throughput: f64,
    se_cum_throughput: f64,
    detect_rate: f64,
}

/// Writes a series in the `SERIES_HEADER` schema.
pub fn write_series<W: std::io::Write>(series: &RegretSeries, out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for s in 0..series.len() {
        writer.serialize(SeriesRow {
            t: s + 1,
            mean_cum_regret: series.mean_cum_regret[s],
            se_cum_regret: series.se_cum_regret[s],
            mean_cum_throughput: series.mean_cum_throughput[s],
            se_cum_throughput: series.se_cum_throughput[s],
            detect_rate: series.detect_rate[s],
        })?;
    }
    writer.flush()?;
    Ok(())
}

/// File name for a policy's series, with unsafe characters replaced.
pub fn series_file_name(policy: &str) -> String {
    let clean: String = policy
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("series_{clean}.csv")
}

/// Runs the experiment and writes `series_<policy>.csv` files and
/// `summary.json` into the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    let results = simulate(config)?;
    write_results(config, &results)
}

/// Writes already simulated results the same way [`run_experiment`] does.
pub fn write_results(config: &ExperimentConfig, results: &[PolicyResult]) -> Result<ExperimentSummary> {
    fs::create_dir_all(&config.output_dir)?;
    for r in results {
        let path = config.output_dir.join(series_file_name(&r.spec.name));
        write_series(&r.series, fs::File::create(path)?)?;
    }
    let summary = summarize(config, results);
    let json = serde_json::to_string_pretty(&summary)?;
    fs::write(config.output_dir.join("summary.json"), json + "\n")?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionBounds {
    pub detector: DetectorConfig,
    pub fa_bound: BoundValue,
    /// Evaluated at `δ = δ_min`.
    pub md_bound: BoundValue,
    /// `2 w F`.
    pub delay_budget: usize,
    /// Set when `2 w F` exceeds the coherence time.
    pub delay_caveat: Option<String>,
    pub segments: Vec<Lemma1Terms>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub log_base: &'static str,
    pub delta_min: f64,
    pub changes: usize,
    pub horizon: usize,
    pub coherence: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub theorem1: Theorem1Params,
    pub detection: Option<DetectionBounds>,
    pub omitted_reason: Option<String>,
}

/// Evaluates the analytic bounds for a configured scenario and detector.
pub fn bounds_report(config: &ExperimentConfig, alpha: f64, epsilon: f64) -> Result<BoundReport> {
    let scenario = &config.scenario;
    let schedule = scenario.schedule();
    let dmin = delta_min(scenario.theta())?;
    let theorem1 = theorem1_params(
        dmin,
        schedule.num_changes(),
        scenario.horizon(),
        alpha,
        Some(schedule.coherence()),
    )?;

    let (detection, omitted_reason) = match &config.detector {
        None => (None, Some("detector off: no false-alarm or miss bounds apply".to_string())),
        Some(d) => {
            let segments = schedule
                .segments(scenario.horizon())
                .into_iter()
                .map(|(start, end, state)| lemma1_bound(scenario, state, end + 1 - start, d, epsilon))
                .collect::<Result<Vec<_>>>()?;
            let delay_budget = 2 * d.w * d.period;
            let delay_caveat = (delay_budget > schedule.coherence()).then(|| {
                format!(
                    "2wF = {delay_budget} exceeds L = {}: the detection-delay guarantee does not hold",
                    schedule.coherence()
                )
            });
            (
                Some(DetectionBounds {
                    detector: *d,
                    fa_bound: fa_bound(d.w, d.b),
                    md_bound: md_bound(d.w, d.b, dmin),
                    delay_budget,
                    delay_caveat,
                    segments,
                }),
                None,
            )
        }
    };

    Ok(BoundReport {
        log_base: "natural",
        delta_min: dmin,
        changes: schedule.num_changes(),
        horizon: scenario.horizon(),
        coherence: schedule.coherence(),
        alpha,
        epsilon,
        theorem1,
        detection,
        omitted_reason,
    })
}

impl BoundReport {
    /// Flat `key = value` rendering.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let t = &self.theorem1;
        let _ = writeln!(s, "log_base = {}", self.log_base);
        let _ = writeln!(s, "delta_min = {}", self.delta_min);
        let _ = writeln!(s, "M = {}", self.changes);
        let _ = writeln!(s, "T = {}", self.horizon);
        let _ = writeln!(s, "L = {}", self.coherence);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "epsilon = {}", self.epsilon);
        let _ = writeln!(s, "theorem1.b = {}", t.b);
        let _ = writeln!(s, "theorem1.w = {}", t.w);
        let _ = writeln!(s, "theorem1.F = {}", t.period);
        let _ = writeln!(s, "theorem1.min_coherence = {}", t.min_coherence);
        let _ = writeln!(s, "theorem1.feasible = {}", t.feasible.unwrap_or(false));
        match &self.detection {
            None => {
                let reason = self.omitted_reason.as_deref().unwrap_or("");
                let _ = writeln!(s, "detection = omitted ({reason})");
            }
            Some(d) => {
                let _ = writeln!(s, "detector.w = {}", d.detector.w);
                let _ = writeln!(s, "detector.b = {}", d.detector.b);
                let _ = writeln!(s, "detector.F = {}", d.detector.period);
                let _ = writeln!(s, "p_fa_bound = {}", d.fa_bound.value);
                let _ = writeln!(s, "p_fa_vacuous = {}", d.fa_bound.vacuous);
                let _ = writeln!(s, "p_md_bound = {}", d.md_bound.value);
                let _ = writeln!(s, "p_md_vacuous = {}", d.md_bound.vacuous);
                let _ = writeln!(s, "delay_budget = {}", d.delay_budget);
                if let Some(c) = &d.delay_caveat {
                    let _ = writeln!(s, "delay_caveat = {c}");
                }
                for (m, seg) in d.segments.iter().enumerate() {
                    let _ = writeln!(s, "segment{m}.state = {}", seg.state + 1);
                    let _ = writeln!(s, "segment{m}.length = {}", seg.segment_len);
                    let _ = writeln!(s, "segment{m}.max_gap = {}", seg.max_gap);
                    let _ = writeln!(s, "segment{m}.false_alarm_and_forced = {}", seg.false_alarm_and_forced);
                    let _ = writeln!(s, "segment{m}.B = {}", seg.b_coefficient);
                    let _ = writeln!(s, "segment{m}.ts_term = {}", seg.ts_term);
                    let _ = writeln!(s, "segment{m}.constant = {} (omitted)", seg.omitted_constant);
                    let _ = writeln!(s, "segment{m}.log_interpretation = {}", seg.log_interpretation);
                }
            }
        }
        s
    }
}

/// Empirical rate of a Bernoulli event next to its analytic bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateCheck {
    pub trials: usize,
    pub empirical: f64,
    pub standard_error: f64,
    pub bound: BoundValue,
    /// `empirical ≤ bound + 3 SE`.
    pub pass: bool,
}

impl RateCheck {
    fn new(events: usize, trials: usize, bound: BoundValue) -> Self {
        let p = events as f64 / trials as f64;
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        Self {
            trials,
            empirical: p,
            standard_error: se,
            bound,
            pass: p <= bound.value + 3.0 * se,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectEval {
    pub w: usize,
    pub b: f64,
    pub theta: f64,
    pub shift: Option<f64>,
    pub false_alarm: RateCheck,
    pub missed_detection: Option<RateCheck>,
}

const TRIALS_PER_CHUNK: usize = 4096;

fn count_fires(
    w: usize,
    config: &DetectorConfig,
    older: f64,
    newer: f64,
    trials: usize,
    seed: u64,
    stream: u64,
) -> usize {
    let chunks = trials.div_ceil(TRIALS_PER_CHUNK);
    map_indexed(chunks, |chunk| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream * (1 << 32) + chunk as u64);
        let n = TRIALS_PER_CHUNK.min(trials - chunk * TRIALS_PER_CHUNK);
        let mut window = OutcomeWindow::new(w);
        let mut fired = 0;
        for _ in 0..n {
            window.reset();
            for _ in 0..w {
                window.record(rng.random::<f64>() < older);
            }
            for _ in 0..w {
                window.record(rng.random::<f64>() < newer);
            }
            fired += usize::from(detect(&window, config));
        }
        fired
    })
    .into_iter()
    .sum()
}

/// Monte Carlo check of the per-test false-alarm and miss bounds.
///
/// False alarms: both halves of a `2w` window drawn at `theta`. Misses: the
/// older half at `theta`, the newer half at `theta + shift`.
pub fn detect_eval(
    w: usize,
    b: f64,
    theta: f64,
    shift: Option<f64>,
    trials: usize,
    seed: u64,
) -> Result<DetectEval> {
    if trials < 1 {
        return Err(Error::Domain("trials must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::Domain(format!("theta must lie in [0,1], got {theta}")));
    }
    // Any period works here; only w and b matter for a single test.
    let config = DetectorConfig::new(w, b, 2)?;
    let fa_events = count_fires(w, &config, theta, theta, trials, seed, 0);
    let false_alarm = RateCheck::new(fa_events, trials, fa_bound(w, b));

    let missed_detection = match shift {
        None => None,
        Some(delta) => {
            let shifted = theta + delta;
            if delta == 0.0 || !(0.0..=1.0).contains(&shifted) {
                return Err(Error::Domain(format!(
                    "shift must be non-zero and keep theta + shift in [0,1], got {delta}"
                )));
            }
            let fired = count_fires(w, &config, theta, shifted, trials, seed, 1);
            Some(RateCheck::new(trials - fired, trials, md_bound(w, b, delta.abs())))
        }
    };

    Ok(DetectEval {
        w,
        b,
        theta,
        shift,
        false_alarm,
        missed_detection,
    })
}
