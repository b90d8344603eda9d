//! Ground-truth block-fading channel.
//!
//! The channel is quantized into `Q` states. Each state fixes a success
//! probability for every transmission rate, and the state is piecewise
//! constant between change points. Slots are 1-based throughout
//! (`t ∈ 1..=T`); state and rate indices are 0-based.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transmission rates in Mbps, strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateTable {
    rates: Vec<f64>,
}

impl RateTable {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        if rates.len() < 2 {
            return Err(Error::TooFewRates(rates.len()));
        }
        for (index, &r) in rates.iter().enumerate() {
            let finite_positive = r.is_finite() && r > 0.0;
            if !finite_positive || (index > 0 && r <= rates[index - 1]) {
                return Err(Error::NonMonotoneRates { index });
            }
        }
        Ok(Self { rates })
    }

    /// Builds a table without checking `R ≥ 2` or ordering.
    pub fn new_unchecked(rates: Vec<f64>) -> Self {
        Self { rates }
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.rates
    }

    pub fn get(&self, index: usize) -> Result<f64> {
        self.rates
            .get(index)
            .copied()
            .ok_or(Error::RateIndexOutOfRange(index))
    }

    /// Multiplies every rate by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            rates: self.rates.iter().map(|r| r * factor).collect(),
        }
    }
}

/// `Q × R` success probabilities; row `h` is channel state `h`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaMatrix {
    rows: Vec<Vec<f64>>,
}

impl ThetaMatrix {
    /// Every row must be strictly decreasing with entries strictly inside (0,1).
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Domain("theta must have at least one row".into()));
        }
        let width = rows[0].len();
        for (row, values) in rows.iter().enumerate() {
            if values.len() != width {
                return Err(Error::ThetaShape {
                    row,
                    got: values.len(),
                    expected: width,
                });
            }
            for (column, &p) in values.iter().enumerate() {
                let inside = p > 0.0 && p < 1.0;
                if !inside || (column > 0 && p >= values[column - 1]) {
                    return Err(Error::NonMonotoneThetaRow { row, column });
                }
            }
        }
        Ok(Self { rows })
    }

    /// Builds a matrix without any invariant checks. Degenerate entries
    /// (0 or 1, equal neighbours) are allowed.
    pub fn new_unchecked(rows: Vec<Vec<f64>>) -> Self {
        Self { rows }
    }

    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    pub fn num_rates(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn row(&self, state: usize) -> Result<&[f64]> {
        self.rows
            .get(state)
            .map(Vec::as_slice)
            .ok_or(Error::StateIndexOutOfRange(state))
    }

    pub fn get(&self, state: usize, rate: usize) -> Result<f64> {
        self.row(state)?
            .get(rate)
            .copied()
            .ok_or(Error::RateIndexOutOfRange(rate))
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// Change points `ν_1 < … < ν_M` and the state of each of the `M + 1`
/// stationary segments. The state at `ν_m` is the new state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChangeSchedule {
    change_points: Vec<usize>,
    states: Vec<usize>,
    coherence: usize,
}

impl ChangeSchedule {
    pub fn change_points(&self) -> &[usize] {
        &self.change_points
    }

    /// 0-based state index of each segment.
    pub fn states(&self) -> &[usize] {
        &self.states
    }

    /// Declared coherence time `L`.
    pub fn coherence(&self) -> usize {
        self.coherence
    }

    pub fn num_changes(&self) -> usize {
        self.change_points.len()
    }

    /// `(first slot, last slot, state)` of every stationary segment.
    pub fn segments(&self, horizon: usize) -> Vec<(usize, usize, usize)> {
        let mut starts = vec![1];
        starts.extend(self.change_points.iter().copied());
        starts
            .iter()
            .enumerate()
            .map(|(m, &start)| {
                let end = starts.get(m + 1).map_or(horizon, |next| next - 1);
                (start, end, self.states[m])
            })
            .collect()
    }
}

/// Scenario as written in a configuration file. States are 1-based here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawScenario {
    pub rates: Vec<f64>,
    pub theta: Vec<Vec<f64>>,
    #[serde(default)]
    pub change_points: Vec<usize>,
    pub states: Vec<usize>,
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(rename = "L")]
    pub coherence: usize,
}

/// Validated ground truth. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    rates: RateTable,
    theta: ThetaMatrix,
    schedule: ChangeSchedule,
    horizon: usize,
}

/// Checks every model constraint and builds a [`Scenario`].
pub fn validate_scenario(raw: &RawScenario) -> Result<Scenario> {
    let rates = RateTable::new(raw.rates.clone())?;
    let theta = ThetaMatrix::new(raw.theta.clone())?;
    if theta.num_rates() != rates.len() {
        return Err(Error::ThetaShape {
            row: 0,
            got: theta.num_rates(),
            expected: rates.len(),
        });
    }
    if raw.horizon == 0 {
        return Err(Error::Domain("horizon T must be at least 1".into()));
    }

    let points = &raw.change_points;
    if let Some(&first) = points.first() {
        if first < 1 {
            return Err(Error::BadChangePoints {
                horizon: raw.horizon,
                detail: "first change point must be >= 1".into(),
            });
        }
    }
    if let Some(&last) = points.last() {
        if last > raw.horizon {
            return Err(Error::BadChangePoints {
                horizon: raw.horizon,
                detail: format!("change point {last} exceeds T"),
            });
        }
    }
    for pair in points.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::BadChangePoints {
                horizon: raw.horizon,
                detail: format!("{} does not follow {}", pair[1], pair[0]),
            });
        }
        if pair[1] - pair[0] < raw.coherence {
            return Err(Error::CoherenceViolation {
                prev: pair[0],
                next: pair[1],
                coherence: raw.coherence,
            });
        }
    }

    if raw.states.len() != points.len() + 1 {
        return Err(Error::StateCount {
            expected: points.len() + 1,
            changes: points.len(),
            got: raw.states.len(),
        });
    }
    let mut states = Vec::with_capacity(raw.states.len());
    for &label in &raw.states {
        if label == 0 || label > theta.num_states() {
            return Err(Error::StateIndexOutOfRange(label));
        }
        states.push(label - 1);
    }
    for pair in raw.states.windows(2) {
        if pair[0] == pair[1] {
            return Err(Error::RepeatedState(pair[0], pair[1]));
        }
    }

    Ok(Scenario {
        rates,
        theta,
        schedule: ChangeSchedule {
            change_points: points.clone(),
            states,
            coherence: raw.coherence,
        },
        horizon: raw.horizon,
    })
}

impl Scenario {
    /// Assembles a scenario without validation. `states` are 0-based.
    pub fn new_unchecked(
        rates: RateTable,
        theta: ThetaMatrix,
        change_points: Vec<usize>,
        states: Vec<usize>,
        coherence: usize,
        horizon: usize,
    ) -> Self {
        Self {
            rates,
            theta,
            schedule: ChangeSchedule {
                change_points,
                states,
                coherence,
            },
            horizon,
        }
    }

    pub fn rates(&self) -> &RateTable {
        &self.rates
    }

    pub fn theta(&self) -> &ThetaMatrix {
        &self.theta
    }

    pub fn schedule(&self) -> &ChangeSchedule {
        &self.schedule
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_rates(&self) -> usize {
        self.rates.len()
    }

    fn check_slot(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.horizon {
            return Err(Error::SlotOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        Ok(())
    }

    /// State of the segment containing slot `t`.
    pub fn state_at(&self, t: usize) -> Result<usize> {
        self.check_slot(t)?;
        let segment = self.schedule.change_points.partition_point(|&nu| nu <= t);
        Ok(self.schedule.states[segment])
    }

    /// One Bernoulli ACK draw for playing `rate` in slot `t`.
    pub fn draw_outcome<R: Rng + ?Sized>(&self, t: usize, rate: usize, rng: &mut R) -> Result<bool> {
        let state = self.state_at(t)?;
        let p = self.theta.get(state, rate)?;
        Ok(rng.random::<f64>() < p)
    }

    /// `r_i · θ_{h,i}`.
    pub fn expected_throughput(&self, state: usize, rate: usize) -> Result<f64> {
        let p = self.theta.get(state, rate)?;
        Ok(self.rates.get(rate)? * p)
    }

    /// Optimal rate index and its expected throughput; ties go to the lower index.
    pub fn best_rate(&self, state: usize) -> Result<(usize, f64)> {
        let row = self.theta.row(state)?;
        let products = row.iter().zip(self.rates.as_slice()).map(|(p, r)| p * r);
        Ok(argmax_first(products).expect("theta rows are non-empty"))
    }
}

/// Smallest `|θ_{h,i} − θ_{h',i}|` over all rates and distinct state pairs.
pub fn delta_min(theta: &ThetaMatrix) -> Result<f64> {
    let rows = theta.rows();
    if rows.len() < 2 {
        return Err(Error::SingleStateMatrix);
    }
    let mut best = f64::INFINITY;
    for (h, a) in rows.iter().enumerate() {
        for b in &rows[h + 1..] {
            for (x, y) in a.iter().zip(b) {
                best = best.min((x - y).abs());
            }
        }
    }
    Ok(best)
}

/// Index and value of the maximum; the first maximum wins ties.
pub(crate) fn argmax_first(values: impl IntoIterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best
}

/// The three-state, eight-rate 802.11a/g scenario used throughout the
/// experiments: changes at 750, 1500, 2250 over 3000 slots.
pub fn table1_raw() -> RawScenario {
    RawScenario {
        rates: vec![6.0, 9.0, 12.0, 18.0, 24.0, 36.0, 48.0, 54.0],
        theta: vec![
            vec![0.59, 0.45, 0.34, 0.22, 0.15, 0.10, 0.03, 0.01],
            vec![0.79, 0.74, 0.65, 0.63, 0.52, 0.35, 0.26, 0.22],
            vec![0.99, 0.95, 0.90, 0.85, 0.80, 0.76, 0.60, 0.52],
        ],
        change_points: vec![750, 1500, 2250],
        states: vec![1, 2, 3, 1],
        horizon: 3000,
        coherence: 750,
    }
}
