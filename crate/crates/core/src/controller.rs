//! Joint change detection and rate selection loop.
//!
//! Each slot either plays the sentinel rate (every `F` slots after the last
//! detection) or asks the policy. The outcome always updates the counters
//! and the played rate's window; a detection on that window clears all
//! history.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::channel::Scenario;
use crate::detect::{detect, forced_slot, select_icd, DetectorConfig, OutcomeWindow, SentinelState};
use crate::error::{Error, Result};
use crate::policy::{cots_select, oracle_select, ts_select, ucb_select, ArmStats, PolicyConfig, PolicyKind};

/// Random source used for every run; seeded from a `u64`.
pub type RunRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SlotRecord {
    pub t: usize,
    pub chosen: usize,
    pub forced: bool,
    pub outcome: bool,
    pub detected: bool,
    pub fallback_used: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunTrace {
    pub records: Vec<SlotRecord>,
    pub detections: Vec<usize>,
    pub seed: u64,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn cots_fallbacks(&self) -> usize {
        self.records.iter().filter(|r| r.fallback_used).count()
    }

    /// One CSV row per slot: `t,chosen,forced,outcome,detected,fallback_used`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        for record in &self.records {
            writer.serialize(TraceRow::from(record))?;
        }
        writer.flush()?;
        Ok(())
    }
}

#[derive(Serialize)]
struct TraceRow {
    t: usize,
    chosen: usize,
    forced: u8,
    outcome: u8,
    detected: u8,
    fallback_used: u8,
}

impl From<&SlotRecord> for TraceRow {
    fn from(r: &SlotRecord) -> Self {
        Self {
            t: r.t,
            chosen: r.chosen,
            forced: r.forced.into(),
            outcome: r.outcome.into(),
            detected: r.detected.into(),
            fallback_used: r.fallback_used.into(),
        }
    }
}

/// Mutable state of one run. `detector: None` disables both detection and
/// forced sampling, giving the plain policy.
#[derive(Debug, Clone)]
pub struct Controller {
    stats: ArmStats,
    windows: Vec<OutcomeWindow>,
    sentinel: SentinelState,
    policy: PolicyConfig,
    detector: Option<DetectorConfig>,
    clock: usize,
    horizon: usize,
    detections: Vec<usize>,
}

impl Controller {
    pub fn new(
        scenario: &Scenario,
        policy: PolicyConfig,
        detector: Option<DetectorConfig>,
    ) -> Result<Self> {
        policy.validate()?;
        if let Some(d) = &detector {
            d.validate()?;
        }
        let arms = scenario.num_rates();
        let half = detector.map_or(0, |d| d.w);
        Ok(Self {
            stats: ArmStats::new(arms),
            windows: vec![OutcomeWindow::new(half); arms],
            sentinel: SentinelState::default(),
            policy,
            detector,
            clock: 1,
            horizon: scenario.horizon(),
            detections: Vec::new(),
        })
    }

    pub fn stats(&self) -> &ArmStats {
        &self.stats
    }

    pub fn sentinel(&self) -> SentinelState {
        self.sentinel
    }

    /// Next slot to be played.
    pub fn clock(&self) -> usize {
        self.clock
    }

    pub fn detections(&self) -> &[usize] {
        &self.detections
    }

    pub fn window(&self, arm: usize) -> &OutcomeWindow {
        &self.windows[arm]
    }

    fn policy_choice(&self, scenario: &Scenario, t: usize, rng: &mut RunRng) -> Result<(usize, bool)> {
        let rates = scenario.rates();
        Ok(match self.policy.kind {
            PolicyKind::Ts => (ts_select(&self.stats, rates, rng), false),
            PolicyKind::Cots => {
                let sel = cots_select(&self.stats, rates, &self.policy, rng);
                (sel.index, sel.fallback)
            }
            PolicyKind::Ucb => {
                let in_segment = (t - self.sentinel.last_change) as u64;
                (ucb_select(&self.stats, in_segment, rates, &self.policy), false)
            }
            PolicyKind::Oracle => (oracle_select(scenario, t)?, false),
        })
    }

    /// Plays one slot.
    pub fn step(&mut self, scenario: &Scenario, rng: &mut RunRng) -> Result<SlotRecord> {
        let t = self.clock;
        if t > self.horizon {
            return Err(Error::HorizonExceeded {
                horizon: self.horizon,
            });
        }

        let mut forced = false;
        let mut sentinel_arm = None;
        if let Some(d) = &self.detector {
            if forced_slot(t, self.sentinel.last_change, d.period) {
                if self.sentinel.icd.is_none() {
                    match select_icd(&self.stats, scenario.rates()) {
                        Ok(i) => self.sentinel.icd = Some(i),
                        Err(Error::AllArmsUnsampled) => {
                            log::warn!("slot {t}: forced slot without data, using the policy");
                        }
                        Err(e) => return Err(e),
                    }
                }
                sentinel_arm = self.sentinel.icd;
                forced = sentinel_arm.is_some();
            }
        }

        let (chosen, fallback_used) = match sentinel_arm {
            Some(i) => (i, false),
            None => self.policy_choice(scenario, t, rng)?,
        };

        let outcome = scenario.draw_outcome(t, chosen, rng)?;
        self.stats.record(chosen, outcome);

        let mut detected = false;
        if let Some(d) = &self.detector {
            let window = &mut self.windows[chosen];
            window.record(outcome);
            if detect(window, d) {
                detected = true;
                self.detections.push(t);
                self.sentinel = SentinelState {
                    icd: None,
                    last_change: t,
                };
                self.stats.reset();
                self.windows.iter_mut().for_each(OutcomeWindow::reset);
            }
        }

        self.clock += 1;
        Ok(SlotRecord {
            t,
            chosen,
            forced,
            outcome,
            detected,
            fallback_used,
        })
    }
}

/// Runs a full horizon from a fresh controller.
pub fn run(
    scenario: &Scenario,
    policy: &PolicyConfig,
    detector: Option<&DetectorConfig>,
    seed: u64,
) -> Result<RunTrace> {
    let mut controller = Controller::new(scenario, *policy, detector.copied())?;
    let mut rng = RunRng::seed_from_u64(seed);
    let records = (0..scenario.horizon())
        .map(|_| controller.step(scenario, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunTrace {
        records,
        detections: controller.detections,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{table1_raw, validate_scenario};

    fn table1() -> Scenario {
        validate_scenario(&table1_raw()).unwrap()
    }

    #[test]
    fn first_slot_after_start_is_policy_driven() {
        let s = table1();
        let d = DetectorConfig::new(50, 0.1, 100).unwrap();
        let mut c = Controller::new(&s, PolicyConfig::new(PolicyKind::Ts), Some(d)).unwrap();
        let mut rng = RunRng::seed_from_u64(0);
        let rec = c.step(&s, &mut rng).unwrap();
        assert!(!rec.forced);
        assert_eq!(rec.t, 1);
        assert_eq!(c.stats().total_pulls(), 1);
    }

    #[test]
    fn sentinel_chosen_at_first_forced_slot() {
        let s = table1();
        let d = DetectorConfig::new(1000, 0.99, 10).unwrap();
        let mut c = Controller::new(&s, PolicyConfig::new(PolicyKind::Ts), Some(d)).unwrap();
        let mut rng = RunRng::seed_from_u64(1);
        for _ in 0..9 {
            assert!(!c.step(&s, &mut rng).unwrap().forced);
        }
        let expected = select_icd(c.stats(), s.rates()).unwrap();
        let rec = c.step(&s, &mut rng).unwrap();
        assert!(rec.forced);
        assert_eq!(rec.t, 10);
        assert_eq!(rec.chosen, expected);
        assert_eq!(c.sentinel().icd, Some(expected));
        for _ in 0..10 {
            c.step(&s, &mut rng).unwrap();
        }
        let rec = c.step(&s, &mut rng).unwrap();
        assert_eq!(rec.t, 21);
        assert!(!rec.forced);
    }

    #[test]
    fn detection_clears_history() {
        let s = table1();
        let d = DetectorConfig::new(2, 0.5, 1000).unwrap();
        let mut c = Controller::new(&s, PolicyConfig::new(PolicyKind::Oracle), Some(d)).unwrap();
        let mut rng = RunRng::seed_from_u64(2);
        c.step(&s, &mut rng).unwrap();
        // Oracle plays rate index 2 in state 1; pre-load its window so that the
        // next outcome leaves M2 = 0 and M1 = 1 when it is a success, or
        // produces no shift when it is a failure.
        let arm = 2;
        c.windows[arm].reset();
        for bit in [false, false, true] {
            c.windows[arm].record(bit);
        }
        let mut rec;
        loop {
            let pulls_before = c.stats().total_pulls();
            let snapshot = c.windows[arm].clone();
            rec = c.step(&s, &mut rng).unwrap();
            if rec.outcome {
                break;
            }
            assert!(!rec.detected);
            assert_eq!(c.stats().total_pulls(), pulls_before + 1);
            c.windows[arm] = snapshot;
        }
        assert!(rec.detected);
        assert!(c.stats().all_unsampled());
        assert_eq!(c.sentinel().last_change, rec.t);
        assert_eq!(c.sentinel().icd, None);
        assert!(c.windows.iter().all(|w| w.count() == 0));
        assert_eq!(c.detections(), &[rec.t]);
    }

    #[test]
    fn horizon_is_enforced() {
        let mut raw = table1_raw();
        raw.horizon = 3;
        raw.change_points = vec![];
        raw.states = vec![1];
        let s = validate_scenario(&raw).unwrap();
        let mut c = Controller::new(&s, PolicyConfig::new(PolicyKind::Ts), None).unwrap();
        let mut rng = RunRng::seed_from_u64(0);
        for _ in 0..3 {
            c.step(&s, &mut rng).unwrap();
        }
        assert!(matches!(c.step(&s, &mut rng), Err(Error::HorizonExceeded { horizon: 3 })));
    }

    #[test]
    fn conservation_of_pulls() {
        let s = table1();
        let d = DetectorConfig::new(20, 0.3, 25).unwrap();
        let mut c = Controller::new(&s, PolicyConfig::new(PolicyKind::Cots), Some(d)).unwrap();
        let mut rng = RunRng::seed_from_u64(3);
        for _ in 0..s.horizon() {
            let rec = c.step(&s, &mut rng).unwrap();
            let elapsed = rec.t - c.sentinel().last_change;
            assert_eq!(c.stats().total_pulls(), elapsed as u64);
            if rec.forced && !rec.detected {
                assert_eq!(Some(rec.chosen), c.sentinel().icd);
            }
        }
        assert!(c.detections().windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn unreachable_threshold_never_detects() {
        let s = table1();
        let d = DetectorConfig::new(50, 1.0, 100).unwrap();
        let trace = run(&s, &PolicyConfig::new(PolicyKind::Ts), Some(&d), 5).unwrap();
        assert!(trace.detections.is_empty());
        assert_eq!(trace.records.iter().filter(|r| r.forced).count(), 30);
    }

    #[test]
    fn same_seed_same_trace() {
        let s = table1();
        let d = DetectorConfig::new(50, 0.1, 100).unwrap();
        let p = PolicyConfig::new(PolicyKind::Ts);
        let a = run(&s, &p, Some(&d), 77).unwrap();
        let b = run(&s, &p, Some(&d), 77).unwrap();
        assert_eq!(a, b);
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
        assert_eq!(a.len(), 3000);
    }
}
