//! Two-window mean-shift change detector and sentinel-rate bookkeeping.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::channel::{argmax_first, RateTable};
use crate::error::{Error, Result};
use crate::policy::ArmStats;

/// Detector parameters: half window `w`, threshold `b`, forced-sampling
/// period `F`.
///
/// A threshold of 1 or more can never be exceeded by a difference of two
/// means of bits, so it switches detection off while keeping forced
/// sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub w: usize,
    pub b: f64,
    #[serde(rename = "F")]
    pub period: usize,
}

impl DetectorConfig {
    pub fn new(w: usize, b: f64, period: usize) -> Result<Self> {
        let config = Self { w, b, period };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.w < 1 {
            return Err(Error::InvalidDetector("w must be >= 1".into()));
        }
        if self.period < 2 {
            return Err(Error::InvalidDetector(format!(
                "F must be >= 2, got {}",
                self.period
            )));
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(Error::InvalidDetector(format!("b must be > 0, got {}", self.b)));
        }
        Ok(())
    }

    /// Whether the threshold can ever fire.
    pub fn can_fire(&self) -> bool {
        self.b < 1.0
    }
}

/// The most recent `2w` outcomes of one rate, oldest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutcomeWindow {
    half: usize,
    buf: VecDeque<bool>,
    count: u64,
}

impl OutcomeWindow {
    pub fn new(half: usize) -> Self {
        Self {
            half,
            buf: VecDeque::with_capacity(2 * half),
            count: 0,
        }
    }

    pub fn half(&self) -> usize {
        self.half
    }

    /// Outcomes recorded since the last reset, including evicted ones.
    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn contents(&self) -> impl Iterator<Item = bool> + '_ {
        self.buf.iter().copied()
    }

    pub fn record(&mut self, outcome: bool) {
        if self.buf.len() == 2 * self.half {
            self.buf.pop_front();
        }
        self.buf.push_back(outcome);
        self.count += 1;
    }

    pub fn reset(&mut self) {
        self.buf.clear();
        self.count = 0;
    }

    /// `(M1, M2)`: mean of the latest `w` outcomes and of the `w` before them.
    pub fn means(&self) -> Result<(f64, f64)> {
        let need = 2 * self.half as u64;
        if self.count < need {
            return Err(Error::InsufficientSamples {
                have: self.count,
                need,
            });
        }
        let older = self.buf.iter().take(self.half).filter(|&&x| x).count();
        let newer = self.buf.iter().skip(self.half).filter(|&&x| x).count();
        let w = self.half as f64;
        Ok((newer as f64 / w, older as f64 / w))
    }
}

/// Fires when at least `2w` samples exist and `|M1 − M2| > b`.
pub fn detect(window: &OutcomeWindow, config: &DetectorConfig) -> bool {
    match window.means() {
        Ok((m1, m2)) => (m1 - m2).abs() > config.b,
        Err(_) => false,
    }
}

/// True iff `t − c` is a positive multiple of `F`.
pub fn forced_slot(t: usize, last_change: usize, period: usize) -> bool {
    t > last_change && (t - last_change).is_multiple_of(period)
}

/// Sentinel rate: best empirical throughput `(s_i / N_i) · r_i`, unsampled
/// arms scoring 0.
pub fn select_icd(stats: &ArmStats, rates: &RateTable) -> Result<usize> {
    if stats.all_unsampled() {
        log::warn!("sentinel selection with no samples since the last reset");
        return Err(Error::AllArmsUnsampled);
    }
    let scores = (0..stats.len()).map(|i| stats.empirical_mean(i).unwrap_or(0.0) * rates.as_slice()[i]);
    Ok(argmax_first(scores).map_or(0, |(i, _)| i))
}

/// Sentinel rate and the slot of the most recent detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SentinelState {
    pub icd: Option<usize>,
    pub last_change: usize,
}
