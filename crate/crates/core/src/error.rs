use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use crate::protocol::Violation;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{name} must be {constraint} (got {value})")]
    InvalidParameter {
        name: &'static str,
        constraint: &'static str,
        value: f64,
    },

    #[error("domain error: {0}")]
    Domain(&'static str),

    #[error("time step {dt:e} s too coarse: at most {max:e} s allowed (50 steps per local period)")]
    StepTooCoarse { dt: f64, max: f64 },

    #[error("covariance lost positive definiteness in {context} at t = {time:e} s (V = [{v11:e}, {v12:e}; {v12:e}, {v22:e}])")]
    NotPositiveDefinite {
        context: &'static str,
        time: f64,
        v11: f64,
        v12: f64,
        v22: f64,
    },

    #[error("record too short: need at least {required:e} s after the target time, have {available:e} s")]
    RecordTooShort { required: f64, available: f64 },

    #[error("target time {target:e} s lies outside the record [{start:e}, {end:e}] s")]
    TargetOutsideRecord { target: f64, start: f64, end: f64 },

    #[error("Riccati integration did not converge: {0}")]
    NotDetectable(&'static str),

    #[error("invalid schedule: {}", join(.0))]
    InvalidSchedule(Vec<Violation>),

    #[error("{0}")]
    Schedule(String),

    #[error("need at least {needed} {what}, got {got}")]
    InsufficientData {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("degenerate data: {0}")]
    Degenerate(&'static str),

    #[error("trial {index} failed: {source}")]
    Trial { index: usize, source: Box<Error> },
}

fn join(violations: &[Violation]) -> String {
    use core::fmt::Write;
    let mut out = String::new();
    for (i, v) in violations.iter().enumerate() {
        if i > 0 {
            out.push_str("; ");
        }
        let _ = write!(out, "{v}");
    }
    out
}
