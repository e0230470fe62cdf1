//! Two-way ranging between a tag (device A, initiator) and an anchor (device B).
//!
//! The double-sided exchange is three messages: A polls, B responds after
//! its reply delay, A sends a final message after its own reply delay.
//!
//! ```text
//!   A (tag)                      B (anchor)
//!   tau1 ──── poll ─────────────▶ tau2
//!   tau4 ◀─── response ────────── tau3
//!   tau5 ──── final ────────────▶ tau6
//! ```
//!
//! Estimators return seconds. Conversion to meters happens once, in
//! [`measure_range`].

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{corrupt_range, ChannelModel};
use crate::clock::{ClockError, DeviceTimestamp, LocalClock};
use crate::types::{distance, Anchor, Point3, PropagationCondition, SPEED_OF_LIGHT};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RangingError {
    #[error(transparent)]
    Clock(#[from] ClockError),
    #[error("time of flight must be non-negative, got {0} s")]
    NegativeTof(f64),
    #[error("reply delays must be positive, got A={0} s, B={1} s")]
    BadReplyDelay(f64, f64),
    #[error("exchange is single-sided; tau5/tau6 missing")]
    NotDoubleSided,
    #[error("degenerate exchange: {0}")]
    Degenerate(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TwrMethod {
    #[serde(rename = "SS")]
    SingleSided,
    #[serde(rename = "AltDS")]
    AltDoubleSided,
}

impl TwrMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::SingleSided => "SS",
            Self::AltDoubleSided => "AltDS",
        }
    }
}

/// Timestamps of one ranging transaction plus the clock resolution of
/// each side. `tau5`/`tau6` are present only for double-sided exchanges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwrExchange {
    pub tau1: DeviceTimestamp,
    pub tau2: DeviceTimestamp,
    pub tau3: DeviceTimestamp,
    pub tau4: DeviceTimestamp,
    pub tau5: Option<DeviceTimestamp>,
    pub tau6: Option<DeviceTimestamp>,
    pub reply_delay_a: f64,
    pub reply_delay_b: f64,
    pub tick_a: f64,
    pub tick_b: f64,
    /// True time of the first transmission.
    pub start: f64,
    /// True time at which the last message is received.
    pub end: f64,
}

fn span(later: DeviceTimestamp, earlier: DeviceTimestamp, tick: f64, what: &'static str) -> Result<f64, RangingError> {
    later.ticks_since(earlier).map(|t| t as f64 * tick).ok_or(RangingError::Clock(ClockError::OutOfOrder(what)))
}

impl TwrExchange {
    /// `tau4 - tau1` on A's clock.
    pub fn round_a(&self) -> Result<f64, RangingError> {
        span(self.tau4, self.tau1, self.tick_a, "tau4 < tau1")
    }

    /// `tau3 - tau2` on B's clock.
    pub fn reply_b(&self) -> Result<f64, RangingError> {
        span(self.tau3, self.tau2, self.tick_b, "tau3 < tau2")
    }

    /// `tau6 - tau3` on B's clock.
    pub fn round_b(&self) -> Result<f64, RangingError> {
        let tau6 = self.tau6.ok_or(RangingError::NotDoubleSided)?;
        span(tau6, self.tau3, self.tick_b, "tau6 < tau3")
    }

    /// `tau5 - tau4` on A's clock.
    pub fn reply_a(&self) -> Result<f64, RangingError> {
        let tau5 = self.tau5.ok_or(RangingError::NotDoubleSided)?;
        span(tau5, self.tau4, self.tick_a, "tau5 < tau4")
    }

    pub fn is_double_sided(&self) -> bool {
        self.tau5.is_some() && self.tau6.is_some()
    }
}

/// Turnaround delays in true seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplyDelays {
    /// Tag (initiator) turnaround before the final message.
    pub a: f64,
    /// Anchor (responder) turnaround before the response.
    pub b: f64,
}

impl Default for ReplyDelays {
    fn default() -> Self {
        Self { a: 300e-6, b: 500e-6 }
    }
}

/// Simulates the message sequence, stamping every event through the clock
/// of the device that observes it.
pub fn run_exchange(
    clock_a: &LocalClock,
    clock_b: &LocalClock,
    tof: f64,
    delays: ReplyDelays,
    start: f64,
    double_sided: bool,
) -> Result<TwrExchange, RangingError> {
    if !(tof >= 0.0) {
        return Err(RangingError::NegativeTof(tof));
    }
    if !(delays.a > 0.0 && delays.b > 0.0) {
        return Err(RangingError::BadReplyDelay(delays.a, delays.b));
    }
    let t2 = start + tof;
    let t3 = t2 + delays.b;
    let t4 = t3 + tof;
    let tau1 = clock_a.local_time(start)?;
    let tau2 = clock_b.local_time(t2)?;
    let tau3 = clock_b.local_time(t3)?;
    let tau4 = clock_a.local_time(t4)?;
    let (tau5, tau6, end) = if double_sided {
        let t5 = t4 + delays.a;
        let t6 = t5 + tof;
        (Some(clock_a.local_time(t5)?), Some(clock_b.local_time(t6)?), t6)
    } else {
        (None, None, t4)
    };
    Ok(TwrExchange {
        tau1,
        tau2,
        tau3,
        tau4,
        tau5,
        tau6,
        reply_delay_a: delays.a,
        reply_delay_b: delays.b,
        tick_a: clock_a.tick_period,
        tick_b: clock_b.tick_period,
        start,
        end,
    })
}

/// Time-of-flight estimate. `valid` is false when the estimator produced a
/// negative value; the raw value is kept so callers can inspect it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TofEstimate {
    pub tof: f64,
    pub valid: bool,
}

impl TofEstimate {
    fn new(tof: f64) -> Self {
        Self { tof, valid: tof >= 0.0 }
    }
}

/// Single-sided estimate from the two durations, in seconds.
pub fn ss_twr_durations(round_a: f64, reply_b: f64) -> TofEstimate {
    TofEstimate::new(0.5 * (round_a - reply_b))
}

/// Alternative double-sided estimate from the four durations, in seconds.
pub fn altds_twr_durations(
    round_a: f64,
    round_b: f64,
    reply_a: f64,
    reply_b: f64,
) -> Result<TofEstimate, RangingError> {
    let denom = round_a + round_b + reply_a + reply_b;
    if denom == 0.0 || !denom.is_finite() {
        return Err(RangingError::Degenerate("zero denominator"));
    }
    Ok(TofEstimate::new((round_a * round_b - reply_a * reply_b) / denom))
}

pub fn ss_twr(ex: &TwrExchange) -> Result<TofEstimate, RangingError> {
    Ok(ss_twr_durations(ex.round_a()?, ex.reply_b()?))
}

pub fn altds_twr(ex: &TwrExchange) -> Result<TofEstimate, RangingError> {
    altds_twr_durations(ex.round_a()?, ex.round_b()?, ex.reply_a()?, ex.reply_b()?)
}

pub fn estimate_tof(ex: &TwrExchange, method: TwrMethod) -> Result<TofEstimate, RangingError> {
    match method {
        TwrMethod::SingleSided => ss_twr(ex),
        TwrMethod::AltDoubleSided => altds_twr(ex),
    }
}

/// One anchor-tag range with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeMeasurement {
    pub tag_id: u32,
    pub anchor_id: u32,
    pub epoch: usize,
    /// Estimated range in meters, floored at zero when `valid` is false.
    pub d_est: f64,
    /// Geometric range used to drive the channel.
    pub d_true: f64,
    pub condition_true: PropagationCondition,
    pub condition_detected: Option<PropagationCondition>,
    pub method: TwrMethod,
    pub valid: bool,
}

/// Everything needed to range one tag against one anchor.
#[derive(Debug, Clone, Copy)]
pub struct RangeRequest<'a> {
    pub tag_id: u32,
    pub tag_position: Point3,
    pub tag_clock: &'a LocalClock,
    pub anchor: &'a Anchor,
    pub anchor_clock: &'a LocalClock,
    pub epoch: usize,
    pub condition: PropagationCondition,
    pub method: TwrMethod,
    pub delays: ReplyDelays,
    pub start: f64,
}

/// Corrupts the geometric range through the channel, runs the exchange on
/// the corresponding flight time, and converts the estimate back to meters.
pub fn measure_range<R: Rng + ?Sized>(
    req: &RangeRequest<'_>,
    channel: &ChannelModel,
    rng: &mut R,
) -> Result<(RangeMeasurement, TwrExchange), RangingError> {
    let d_true = distance(&req.tag_position, &req.anchor.position);
    let d_channel = corrupt_range(d_true, req.condition, channel, rng);
    let tof = d_channel / SPEED_OF_LIGHT;
    let double_sided = req.method == TwrMethod::AltDoubleSided;
    let ex = run_exchange(req.tag_clock, req.anchor_clock, tof, req.delays, req.start, double_sided)?;
    let est = estimate_tof(&ex, req.method)?;
    let m = RangeMeasurement {
        tag_id: req.tag_id,
        anchor_id: req.anchor.id,
        epoch: req.epoch,
        d_est: est.tof.max(0.0) * SPEED_OF_LIGHT,
        d_true,
        condition_true: req.condition,
        condition_detected: None,
        method: req.method,
        valid: est.valid,
    };
    Ok((m, ex))
}
