//! Device clock model and pairwise offset estimation.
//!
//! A [`LocalClock`] maps simulator ("true") time in seconds to a device
//! tick counter, applying a constant frequency error and a phase offset.
//! [`estimate_offset`] implements the timing-sync estimate used to align
//! TDMA slot boundaries between a tag and the master anchor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tick period of a 128 x 499.2 MHz timestamp counter (about 15.65 ps).
pub const UWB_TICK_PERIOD: f64 = 1.0 / (128.0 * 499.2e6);

/// Largest accepted magnitude for a clock's frequency error.
pub const MAX_DRIFT_PPM: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClockError {
    #[error("drift of {0} ppm is outside the supported range of +/-1000 ppm")]
    DriftOutOfRange(f64),
    #[error("tick period must be positive and finite, got {0}")]
    BadTickPeriod(f64),
    #[error("true time must be non-negative, got {0} s")]
    NegativeTime(f64),
    #[error("local time {0} s does not fit the 64-bit tick counter")]
    CounterOverflow(f64),
    #[error("timestamps out of order: {0}")]
    OutOfOrder(&'static str),
}

/// Counter value latched by a device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct DeviceTimestamp(pub u64);

impl DeviceTimestamp {
    /// Ticks elapsed from `earlier` to `self`, or `None` if `earlier` is later.
    pub fn ticks_since(self, earlier: DeviceTimestamp) -> Option<u64> {
        self.0.checked_sub(earlier.0)
    }
}

/// Per-device clock with constant drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalClock {
    /// Phase error in seconds.
    pub offset: f64,
    /// Frequency error in parts per million.
    pub drift_ppm: f64,
    /// Seconds per tick.
    pub tick_period: f64,
}

impl Default for LocalClock {
    fn default() -> Self {
        Self::ideal(UWB_TICK_PERIOD)
    }
}

impl LocalClock {
    pub fn new(offset: f64, drift_ppm: f64, tick_period: f64) -> Result<Self, ClockError> {
        let clock = Self { offset, drift_ppm, tick_period };
        clock.validate()?;
        Ok(clock)
    }

    pub fn ideal(tick_period: f64) -> Self {
        Self { offset: 0.0, drift_ppm: 0.0, tick_period }
    }

    pub fn validate(&self) -> Result<(), ClockError> {
        if !(self.drift_ppm.abs() <= MAX_DRIFT_PPM) {
            return Err(ClockError::DriftOutOfRange(self.drift_ppm));
        }
        if !(self.tick_period > 0.0 && self.tick_period.is_finite()) {
            return Err(ClockError::BadTickPeriod(self.tick_period));
        }
        Ok(())
    }

    /// Frequency ratio of this clock against true time.
    pub fn rate(&self) -> f64 {
        1.0 + self.drift_ppm * 1e-6
    }

    /// Local clock reading in seconds before quantization.
    pub fn local_seconds(&self, true_time: f64) -> f64 {
        true_time * self.rate() + self.offset
    }

    /// Stamps a true instant with this device's tick counter.
    pub fn local_time(&self, true_time: f64) -> Result<DeviceTimestamp, ClockError> {
        if !(true_time >= 0.0) {
            return Err(ClockError::NegativeTime(true_time));
        }
        let local = self.local_seconds(true_time);
        let ticks = snap_floor(local / self.tick_period);
        if !(0.0..u64::MAX as f64).contains(&ticks) {
            return Err(ClockError::CounterOverflow(local));
        }
        Ok(DeviceTimestamp(ticks as u64))
    }

    /// Converts a tick count measured by this device to seconds of its local time.
    pub fn ticks_to_seconds(&self, ticks: u64) -> f64 {
        ticks as f64 * self.tick_period
    }

    pub fn timestamp_seconds(&self, ts: DeviceTimestamp) -> f64 {
        self.ticks_to_seconds(ts.0)
    }

    /// Inverse of [`LocalClock::local_seconds`]: the true time at which this
    /// clock reads `local` seconds.
    pub fn true_time_of(&self, local: f64) -> f64 {
        (local - self.offset) / self.rate()
    }

    /// Returns this clock with its offset moved by `-delta_e`. Drift is unchanged.
    pub fn apply_correction(&self, delta_e: SyncEstimate) -> LocalClock {
        LocalClock { offset: self.offset - delta_e.delta_e, ..*self }
    }
}

/// Floor that treats values within a few ulps of an integer as that integer,
/// so e.g. `1.0 / 1e-9` lands on 1e9 ticks instead of 1e9 - 1.
fn snap_floor(x: f64) -> f64 {
    let nearest = x.round();
    if (x - nearest).abs() <= 8.0 * f64::EPSILON * x.abs().max(1.0) {
        nearest
    } else {
        x.floor()
    }
}

/// Estimated clock offset of device B relative to device A, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SyncEstimate {
    pub delta_e: f64,
}

impl SyncEstimate {
    pub fn negated(self) -> Self {
        Self { delta_e: -self.delta_e }
    }
}

/// Pairwise offset from one exchange: A transmits at `tau1` and receives the
/// reply at `tau4`; B receives at `tau2` and replies at `tau3`.
///
/// The result is `((tau2 - tau1) - (tau4 - tau3)) / 2`. With symmetric flight
/// time and no drift it equals B's offset minus A's offset, so
/// `clock_b.apply_correction(est)` moves B onto A's time base and
/// `clock_a.apply_correction(est.negated())` moves A onto B's.
pub fn estimate_offset(
    clock_a: &LocalClock,
    tau1: DeviceTimestamp,
    tau4: DeviceTimestamp,
    clock_b: &LocalClock,
    tau2: DeviceTimestamp,
    tau3: DeviceTimestamp,
) -> Result<SyncEstimate, ClockError> {
    let round_a = tau4.ticks_since(tau1).ok_or(ClockError::OutOfOrder("tau4 < tau1"))?;
    let reply_b = tau3.ticks_since(tau2).ok_or(ClockError::OutOfOrder("tau3 < tau2"))?;
    if clock_a.tick_period == clock_b.tick_period {
        // Shared time base: evaluate in integer ticks so synchronized devices give exactly zero.
        let twice = (tau2.0 as i128 - tau1.0 as i128) - (tau4.0 as i128 - tau3.0 as i128);
        return Ok(SyncEstimate { delta_e: twice as f64 * clock_a.tick_period / 2.0 });
    }
    let forward = clock_b.timestamp_seconds(tau2) - clock_a.timestamp_seconds(tau1);
    // tau4 - tau3 = (tau1 + round_a) - (tau2 + reply_b), expressed via durations to keep precision.
    let backward = clock_a.ticks_to_seconds(round_a) - clock_b.ticks_to_seconds(reply_b) - forward;
    Ok(SyncEstimate { delta_e: (forward - backward) / 2.0 })
}

/// Runs one A -> B -> A timing exchange in true time and returns the
/// resulting estimate. `reply_delay` is B's turnaround in true seconds.
pub fn sync_exchange(
    clock_a: &LocalClock,
    clock_b: &LocalClock,
    tof: f64,
    reply_delay: f64,
    start: f64,
) -> Result<SyncEstimate, ClockError> {
    let tau1 = clock_a.local_time(start)?;
    let tau2 = clock_b.local_time(start + tof)?;
    let tau3 = clock_b.local_time(start + tof + reply_delay)?;
    let tau4 = clock_a.local_time(start + 2.0 * tof + reply_delay)?;
    estimate_offset(clock_a, tau1, tau4, clock_b, tau2, tau3)
}
