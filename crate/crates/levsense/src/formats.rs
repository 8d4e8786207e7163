//! Measurement records (CSV and `LKR1` binary), schedule JSON and filter
//! trajectory CSV.

use std::io::{BufRead, BufReader, Read, Write};

use levsense_core::estimation::FilterState;
use levsense_core::protocol::{validate_with_params, ProtocolSchedule, Segment, SegmentKind};
use levsense_core::record::MeasurementRecord;
use levsense_core::units::OscillatorParams;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

pub const RECORD_MAGIC: &[u8; 4] = b"LKR1";

/// Nine significant digits, the precision of all tabular outputs.
pub fn fmt9(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.8e}")
    } else {
        format!("{x}")
    }
}

fn io_err(e: std::io::Error) -> AppError {
    AppError::io("<stream>", e)
}

/// Writes `t_s,y,gate`. Values are printed in shortest round-trip form so
/// that records survive conversion between formats unchanged.
pub fn write_record_csv<W: Write>(record: &MeasurementRecord, mut w: W) -> Result<()> {
    writeln!(w, "t_s,y,gate").map_err(io_err)?;
    for (k, (&y, &g)) in record.samples.iter().zip(&record.gate).enumerate() {
        writeln!(w, "{:e},{:e},{}", record.time_of(k), y, u8::from(g)).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Reads a record written by [`write_record_csv`]. The time base is taken
/// from the first two rows and must be uniform.
pub fn read_record_csv<R: Read>(r: R) -> Result<MeasurementRecord> {
    let bad = |d: String| AppError::format("record CSV", d);
    let mut lines = BufReader::new(r).lines();
    let header = lines.next().transpose().map_err(io_err)?.ok_or_else(|| bad("empty file".into()))?;
    if header.trim() != "t_s,y,gate" {
        return Err(bad(format!("expected header `t_s,y,gate`, found `{header}`")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(bad(format!("row {}: expected 3 columns", i + 2)));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("row {}: {e}", i + 2)));
        let gate = match cols[2] {
            "1" => true,
            "0" => false,
            g => return Err(bad(format!("row {}: gate must be 0 or 1, found `{g}`", i + 2))),
        };
        rows.push((num(cols[0])?, num(cols[1])?, gate));
    }
    if rows.len() < 2 {
        return Err(bad("at least two samples are needed to fix the time step".into()));
    }
    let t0 = rows[0].0;
    let dt = rows[1].0 - t0;
    if dt.is_nan() || dt <= 0.0 {
        return Err(bad("time stamps must increase".into()));
    }
    let mut rec = MeasurementRecord::with_capacity(t0, dt, rows.len());
    for (k, &(t, y, g)) in rows.iter().enumerate() {
        if (t - rec.time_of(k)).abs() > 1e-6 * dt {
            return Err(bad(format!("row {}: non-uniform time step", k + 2)));
        }
        if g {
            rec.push(y);
        } else {
            rec.push_gated_off();
        }
    }
    Ok(rec)
}

/// `LKR1`, then little-endian `u64` sample count, `f64` t0, `f64` dt, the
/// samples as `f64` and one gate byte per sample.
pub fn write_record_binary<W: Write>(record: &MeasurementRecord, mut w: W) -> Result<()> {
    let mut buf = Vec::with_capacity(28 + 9 * record.len());
    buf.extend_from_slice(RECORD_MAGIC);
    buf.extend_from_slice(&(record.len() as u64).to_le_bytes());
    buf.extend_from_slice(&record.t0.to_le_bytes());
    buf.extend_from_slice(&record.dt.to_le_bytes());
    for y in &record.samples {
        buf.extend_from_slice(&y.to_le_bytes());
    }
    buf.extend(record.gate.iter().map(|&g| u8::from(g)));
    w.write_all(&buf).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn read_record_binary<R: Read>(mut r: R) -> Result<MeasurementRecord> {
    let bad = |d: &str| AppError::format("LKR1 record", d);
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(io_err)?;
    if buf.len() < 28 || &buf[..4] != RECORD_MAGIC {
        return Err(bad("missing LKR1 header"));
    }
    let u64_at = |i: usize| u64::from_le_bytes(buf[i..i + 8].try_into().unwrap());
    let f64_at = |i: usize| f64::from_le_bytes(buf[i..i + 8].try_into().unwrap());
    let n = usize::try_from(u64_at(4)).map_err(|_| bad("sample count overflows"))?;
    let expected = n.checked_mul(9).and_then(|b| b.checked_add(28)).ok_or_else(|| bad("sample count overflows"))?;
    if buf.len() != expected {
        return Err(bad("payload length does not match the sample count"));
    }
    let (t0, dt) = (f64_at(12), f64_at(20));
    let gates = &buf[28 + 8 * n..];
    let mut rec = MeasurementRecord::with_capacity(t0, dt, n);
    for (k, &g) in gates.iter().enumerate() {
        match g {
            1 => rec.push(f64_at(28 + 8 * k)),
            0 => rec.push_gated_off(),
            _ => return Err(bad("gate bytes must be 0 or 1")),
        }
    }
    Ok(rec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentJson {
    pub kind: String,
    pub duration_s: f64,
    pub freq_ratio: f64,
    pub meas: bool,
    pub fb: bool,
    pub kick_dp: f64,
}

pub fn schedule_to_json(schedule: &ProtocolSchedule) -> Vec<SegmentJson> {
    schedule
        .segments
        .iter()
        .map(|s| SegmentJson {
            kind: s.kind.as_str().to_string(),
            duration_s: s.duration,
            freq_ratio: s.freq_ratio,
            meas: s.measurement_on,
            fb: s.feedback_on,
            kick_dp: s.kick_dp,
        })
        .collect()
}

pub fn write_schedule_json<W: Write>(schedule: &ProtocolSchedule, w: W) -> Result<()> {
    serde_json::to_writer_pretty(w, &schedule_to_json(schedule)).map_err(|e| AppError::format("schedule JSON", e.to_string()))
}

/// Rebuilds a schedule from its segment list. Segments are laid end to end
/// with the readout starting at `t = 0`; the pulse duration is recovered
/// from the kick through the impulse calibration of `params`.
pub fn schedule_from_json(text: &str, params: &OscillatorParams) -> Result<ProtocolSchedule> {
    let bad = |d: String| AppError::format("schedule JSON", d);
    let segs: Vec<SegmentJson> = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    let mut parsed = Vec::with_capacity(segs.len());
    for s in &segs {
        let kind = SegmentKind::parse(&s.kind).ok_or_else(|| bad(format!("unknown segment kind `{}`", s.kind)))?;
        parsed.push(Segment {
            kind,
            start: 0.0,
            duration: s.duration_s,
            freq_ratio: s.freq_ratio,
            measurement_on: s.meas,
            feedback_on: s.fb,
            kick_dp: s.kick_dp,
        });
    }
    let readout = parsed
        .iter()
        .position(|s| s.kind == SegmentKind::Readout)
        .ok_or_else(|| bad("no readout segment".into()))?;
    let mut t = 0.0;
    for s in parsed[..readout].iter_mut().rev() {
        t -= s.duration;
        s.start = t;
    }
    let mut t = 0.0;
    for s in parsed[readout..].iter_mut() {
        s.start = t;
        t += s.duration;
    }
    let kick = parsed.iter().find(|s| s.kind == SegmentKind::Kick);
    let soft = parsed.iter().find(|s| s.kind == SegmentKind::Soft);
    let calib = params.kappa_imp * params.pulse_voltage;
    let dp = kick.map_or(0.0, |k| k.kick_dp);
    let schedule = ProtocolSchedule {
        t_kick: kick.map_or(0.0, |k| k.start),
        t_zero: 0.0,
        readout_duration: parsed[readout].duration,
        squeeze_ratio: soft.map_or(1.0, |s| 1.0 / s.freq_ratio),
        pulse_duration: if calib != 0.0 { dp / calib } else { 0.0 },
        segments: parsed,
    };
    validate_with_params(&schedule, params).map_err(|v| AppError::Core(levsense_core::Error::InvalidSchedule(v)))?;
    Ok(schedule)
}

/// Writes `t_s,q_hat,p_hat,v_qq,v_qp,v_pp`.
pub fn write_trajectory_csv<W: Write>(states: &[FilterState], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| AppError::format("trajectory CSV", e.to_string());
    out.write_record(["t_s", "q_hat", "p_hat", "v_qq", "v_qp", "v_pp"]).map_err(csv_err)?;
    for s in states {
        out.write_record([s.t, s.estimate.q, s.estimate.p, s.cov.xx, s.cov.xy, s.cov.yy].map(fmt9))
            .map_err(csv_err)?;
    }
    out.flush().map_err(io_err)
}
