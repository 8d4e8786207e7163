//! Segment timelines for the conventional and amplified kick protocols.
//!
//! Times are absolute, with `t = 0` at the protocol reference: the kick for
//! the conventional protocol, the end of the anti-squeezing step for the
//! amplified one.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use crate::units::{impulse_from_pulse, OscillatorParams};
use crate::{Error, Result};

/// Time between feedback release and the kick in the conventional protocol (s).
pub const DEFAULT_RELEASE_LEAD: f64 = 3.6e-6;

/// Length of the feedback-cooling hold, in feedback time constants.
pub const HOLD_TIME_CONSTANTS: f64 = 20.0;

/// Default readout length after the protocol, in base periods.
pub const DEFAULT_READOUT_PERIODS: f64 = 10.0;

const REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SegmentKind {
    FeedbackHold,
    FreeBase,
    Soft,
    Kick,
    Readout,
}

impl SegmentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SegmentKind::FeedbackHold => "feedback_hold",
            SegmentKind::FreeBase => "free_base",
            SegmentKind::Soft => "soft",
            SegmentKind::Kick => "kick",
            SegmentKind::Readout => "readout",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "feedback_hold" => SegmentKind::FeedbackHold,
            "free_base" => SegmentKind::FreeBase,
            "soft" => SegmentKind::Soft,
            "kick" => SegmentKind::Kick,
            "readout" => SegmentKind::Readout,
            _ => return None,
        })
    }
}

impl fmt::Display for SegmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub kind: SegmentKind,
    /// s
    pub start: f64,
    /// s
    pub duration: f64,
    /// Ω(t)/Ω during the segment.
    pub freq_ratio: f64,
    pub measurement_on: bool,
    pub feedback_on: bool,
    /// Momentum kick in zero-point units; non-zero only for kicks.
    pub kick_dp: f64,
}

impl Segment {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }

    fn base(kind: SegmentKind, start: f64, duration: f64, measurement_on: bool, feedback_on: bool) -> Self {
        Segment {
            kind,
            start,
            duration,
            freq_ratio: 1.0,
            measurement_on,
            feedback_on,
            kick_dp: 0.0,
        }
    }

    fn soft(start: f64, duration: f64, r: f64) -> Self {
        Segment {
            kind: SegmentKind::Soft,
            start,
            duration,
            freq_ratio: 1.0 / r,
            measurement_on: false,
            feedback_on: false,
            kick_dp: 0.0,
        }
    }

    fn kick(at: f64, dp: f64) -> Self {
        Segment {
            kind: SegmentKind::Kick,
            start: at,
            duration: 0.0,
            freq_ratio: 1.0,
            measurement_on: false,
            feedback_on: false,
            kick_dp: dp,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolSchedule {
    pub segments: Vec<Segment>,
    /// Absolute time of the impulse (s).
    pub t_kick: f64,
    /// Protocol reference time; the readout starts here (s).
    pub t_zero: f64,
    pub readout_duration: f64,
    /// Trap softening factor r; 1 for the conventional protocol.
    pub squeeze_ratio: f64,
    /// Electrode pulse duration τ that sets the kick (s).
    pub pulse_duration: f64,
}

impl ProtocolSchedule {
    pub fn is_amplified(&self) -> bool {
        self.segments.iter().any(|s| s.kind == SegmentKind::Soft)
    }

    pub fn kick_dp(&self) -> f64 {
        self.segments
            .iter()
            .find(|s| s.kind == SegmentKind::Kick)
            .map_or(0.0, |s| s.kick_dp)
    }

    pub fn start(&self) -> f64 {
        self.segments.first().map_or(0.0, |s| s.start)
    }

    pub fn end(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.end())
    }

    pub fn readout(&self) -> Option<&Segment> {
        self.segments.iter().find(|s| s.kind == SegmentKind::Readout)
    }
}

fn hold_duration(params: &OscillatorParams) -> f64 {
    if params.gamma_fb > 0.0 {
        HOLD_TIME_CONSTANTS / params.gamma_fb
    } else {
        0.0
    }
}

fn check_readout(params: &OscillatorParams, readout_duration: f64) -> Result<()> {
    let period = params.base_period();
    if !(readout_duration >= period * (1.0 - REL_TOL)) {
        return Err(Error::Schedule(format!(
            "readout of {readout_duration:e} s is shorter than one base period ({period:e} s); \
             retrodiction needs at least a full quadrature rotation"
        )));
    }
    Ok(())
}

/// Feedback hold, free evolution under measurement for `release_lead`,
/// kick at `t = 0`, then readout.
pub fn build_conventional(
    params: &OscillatorParams,
    tau: f64,
    release_lead: f64,
    readout_duration: f64,
) -> Result<ProtocolSchedule> {
    params.validate()?;
    if !(release_lead > 0.0) || !release_lead.is_finite() {
        return Err(Error::InvalidParameter {
            name: "release_lead",
            constraint: "positive",
            value: release_lead,
        });
    }
    check_readout(params, readout_duration)?;
    let dp = impulse_from_pulse(params, params.pulse_voltage, tau)?;
    let hold = hold_duration(params);
    let segments = vec![
        Segment::base(SegmentKind::FeedbackHold, -release_lead - hold, hold, true, true),
        Segment::base(SegmentKind::FreeBase, -release_lead, release_lead, true, false),
        Segment::kick(0.0, dp),
        Segment::base(SegmentKind::Readout, 0.0, readout_duration, true, false),
    ];
    Ok(ProtocolSchedule {
        segments,
        t_kick: 0.0,
        t_zero: 0.0,
        readout_duration,
        squeeze_ratio: 1.0,
        pulse_duration: tau,
    })
}

/// Feedback hold, squeeze for a quarter soft period, kick at maximum
/// momentum squeezing, anti-squeeze for another quarter, then readout from
/// `t = 0` at the base frequency.
pub fn build_amplified(
    params: &OscillatorParams,
    r: f64,
    tau: f64,
    readout_duration: f64,
) -> Result<ProtocolSchedule> {
    params.validate()?;
    if !(r > 1.0) || !r.is_finite() {
        return Err(Error::Schedule(format!(
            "squeeze ratio r = {r} must exceed 1; use the conventional protocol for r = 1"
        )));
    }
    check_readout(params, readout_duration)?;
    let dp = impulse_from_pulse(params, params.pulse_voltage, tau)?;
    let quarter = PI * r / (2.0 * params.omega_base);
    let soft_start = -2.0 * quarter;
    let t_kick = -quarter;
    let hold = hold_duration(params);
    let segments = vec![
        Segment::base(SegmentKind::FeedbackHold, soft_start - hold, hold, true, true),
        Segment::soft(soft_start, quarter, r),
        Segment::kick(t_kick, dp),
        Segment::soft(t_kick, quarter, r),
        Segment::base(SegmentKind::Readout, 0.0, readout_duration, true, false),
    ];
    Ok(ProtocolSchedule {
        segments,
        t_kick,
        t_zero: 0.0,
        readout_duration,
        squeeze_ratio: r,
        pulse_duration: tau,
    })
}

/// Conventional schedule for `r == 1`, amplified otherwise.
pub fn build_for_ratio(
    params: &OscillatorParams,
    r: f64,
    tau: f64,
    readout_duration: f64,
) -> Result<ProtocolSchedule> {
    if r == 1.0 {
        build_conventional(params, tau, DEFAULT_RELEASE_LEAD, readout_duration)
    } else {
        build_amplified(params, r, tau, readout_duration)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Empty,
    NegativeDuration { index: usize },
    NonContiguous { index: usize, gap: f64 },
    KickCount(usize),
    KickHasDuration { index: usize },
    KickTimeMismatch { scheduled: f64, declared: f64 },
    KickNotAtMaxSqueezing { offset: f64 },
    SoftNotHalfPeriod { index: usize },
    SoftGated { index: usize },
    FrequencyRatio { index: usize, ratio: f64 },
    ReadoutMissing,
    ReadoutNotMeasured,
    ReferenceTime { expected: f64, declared: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "empty timeline"),
            Violation::NegativeDuration { index } => {
                write!(f, "segment {index} has a negative duration")
            }
            Violation::NonContiguous { index, gap } => {
                write!(f, "non-contiguous timeline between segments {index} and {} (gap {gap:e} s)", index + 1)
            }
            Violation::KickCount(n) => write!(f, "expected exactly one kick, found {n}"),
            Violation::KickHasDuration { index } => {
                write!(f, "kick segment {index} must have zero duration")
            }
            Violation::KickTimeMismatch { scheduled, declared } => write!(
                f,
                "kick scheduled at {scheduled:e} s but t_kick is {declared:e} s"
            ),
            Violation::KickNotAtMaxSqueezing { offset } => write!(
                f,
                "kick not at maximum squeezing (off the soft-span midpoint by {offset:e} s)"
            ),
            Violation::SoftNotHalfPeriod { index } => write!(
                f,
                "soft span starting at segment {index} is not half a soft period"
            ),
            Violation::SoftGated { index } => write!(
                f,
                "soft segment {index} must have measurement and feedback off"
            ),
            Violation::FrequencyRatio { index, ratio } => {
                write!(f, "segment {index} has an invalid frequency ratio {ratio}")
            }
            Violation::ReadoutMissing => write!(f, "no readout segment"),
            Violation::ReadoutNotMeasured => write!(f, "readout segment has measurement off"),
            Violation::ReferenceTime { expected, declared } => write!(
                f,
                "t_zero is {declared:e} s but the protocol ends at {expected:e} s"
            ),
        }
    }
}

fn close(a: f64, b: f64, scale: f64) -> bool {
    libm::fabs(a - b) <= REL_TOL * scale
}

/// Checks timing and gating invariants; collects every violation found.
pub fn validate(schedule: &ProtocolSchedule) -> core::result::Result<(), Vec<Violation>> {
    let segs = &schedule.segments;
    let mut out = Vec::new();
    if segs.is_empty() {
        return Err(vec![Violation::Empty]);
    }
    let scale = (schedule.end() - schedule.start())
        .max(libm::fabs(schedule.start()))
        .max(libm::fabs(schedule.end()))
        .max(f64::MIN_POSITIVE);

    for (i, s) in segs.iter().enumerate() {
        if s.duration < 0.0 || !s.duration.is_finite() {
            out.push(Violation::NegativeDuration { index: i });
        }
        match s.kind {
            SegmentKind::Soft => {
                if s.measurement_on || s.feedback_on {
                    out.push(Violation::SoftGated { index: i });
                }
                if !(s.freq_ratio > 0.0 && s.freq_ratio < 1.0) {
                    out.push(Violation::FrequencyRatio { index: i, ratio: s.freq_ratio });
                }
            }
            SegmentKind::Kick => {
                if s.duration != 0.0 {
                    out.push(Violation::KickHasDuration { index: i });
                }
            }
            _ => {
                if s.freq_ratio != 1.0 {
                    out.push(Violation::FrequencyRatio { index: i, ratio: s.freq_ratio });
                }
            }
        }
    }
    for (i, w) in segs.windows(2).enumerate() {
        let gap = w[1].start - w[0].end();
        if !close(w[0].end(), w[1].start, scale) {
            out.push(Violation::NonContiguous { index: i, gap });
        }
    }

    let kicks: Vec<usize> = (0..segs.len()).filter(|&i| segs[i].kind == SegmentKind::Kick).collect();
    if kicks.len() != 1 {
        out.push(Violation::KickCount(kicks.len()));
    }
    if let Some(&k) = kicks.first() {
        let kick = &segs[k];
        if !close(kick.start, schedule.t_kick, scale) {
            out.push(Violation::KickTimeMismatch {
                scheduled: kick.start,
                declared: schedule.t_kick,
            });
        }
        let before = k.checked_sub(1).map(|i| &segs[i]);
        let after = segs.get(k + 1);
        let soft_before = before.filter(|s| s.kind == SegmentKind::Soft);
        let soft_after = after.filter(|s| s.kind == SegmentKind::Soft);
        match (soft_before, soft_after) {
            (Some(a), Some(b)) => {
                let span_start = a.start;
                let span_end = b.end();
                let midpoint = 0.5 * (span_start + span_end);
                if !close(kick.start, midpoint, scale) {
                    out.push(Violation::KickNotAtMaxSqueezing {
                        offset: kick.start - midpoint,
                    });
                }
                // The span length against πr/Ω needs Ω; see `validate_with_params`.
                if a.freq_ratio != b.freq_ratio {
                    out.push(Violation::SoftNotHalfPeriod { index: k - 1 });
                }
                if !close(span_end, schedule.t_zero, scale) {
                    out.push(Violation::ReferenceTime {
                        expected: span_end,
                        declared: schedule.t_zero,
                    });
                }
            }
            (None, None) => {
                if !close(kick.start, schedule.t_zero, scale) {
                    out.push(Violation::ReferenceTime {
                        expected: kick.start,
                        declared: schedule.t_zero,
                    });
                }
            }
            _ => out.push(Violation::KickNotAtMaxSqueezing { offset: f64::NAN }),
        }
    }

    match segs.iter().find(|s| s.kind == SegmentKind::Readout) {
        None => out.push(Violation::ReadoutMissing),
        Some(r) if !r.measurement_on => out.push(Violation::ReadoutNotMeasured),
        Some(_) => {}
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Like [`validate`], additionally checking that every soft span lasts
/// exactly half a soft period `πr/Ω` for the given base frequency.
pub fn validate_with_params(
    schedule: &ProtocolSchedule,
    params: &OscillatorParams,
) -> core::result::Result<(), Vec<Violation>> {
    let mut out = match validate(schedule) {
        Ok(()) => Vec::new(),
        Err(v) => v,
    };
    let segs = &schedule.segments;
    for (i, w) in segs.windows(3).enumerate() {
        if w[0].kind == SegmentKind::Soft && w[1].kind == SegmentKind::Kick && w[2].kind == SegmentKind::Soft {
            let r = 1.0 / w[0].freq_ratio;
            let half = PI * r / params.omega_base;
            if !close(w[0].duration + w[2].duration, half, half) {
                out.push(Violation::SoftNotHalfPeriod { index: i });
            }
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

pub(crate) fn ensure_valid(schedule: &ProtocolSchedule, params: &OscillatorParams) -> Result<()> {
    validate_with_params(schedule, params).map_err(Error::InvalidSchedule)
}
