//! Discretized continuous position records.

use alloc::vec::Vec;

/// A homodyne-equivalent position record.
///
/// Sample `k` covers `[t0 + k·dt, t0 + (k+1)·dt)` and obeys
/// `y_k·dt = √μ·Q(t_k)·dt + dW_k` with `Var(dW_k) = dt`. Samples taken while
/// detection is gated off carry no information; they are stored as NaN with
/// `gate = false`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub t0: f64,
    pub dt: f64,
    pub samples: Vec<f64>,
    pub gate: Vec<bool>,
}

impl MeasurementRecord {
    pub fn new(t0: f64, dt: f64) -> Self {
        MeasurementRecord {
            t0,
            dt,
            samples: Vec::new(),
            gate: Vec::new(),
        }
    }

    pub fn with_capacity(t0: f64, dt: f64, n: usize) -> Self {
        MeasurementRecord {
            t0,
            dt,
            samples: Vec::with_capacity(n),
            gate: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, y: f64) {
        self.samples.push(y);
        self.gate.push(true);
    }

    pub fn push_gated_off(&mut self) {
        self.samples.push(f64::NAN);
        self.gate.push(false);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time_of(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn end_time(&self) -> f64 {
        self.time_of(self.len())
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 * self.dt
    }

    pub fn fully_gated_on(&self) -> bool {
        self.gate.iter().all(|&g| g)
    }

    /// Gated-on samples as `(time, y)` pairs.
    pub fn active(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.samples
            .iter()
            .zip(&self.gate)
            .enumerate()
            .filter(|(_, (_, &g))| g)
            .map(move |(k, (&y, _))| (self.time_of(k), y))
    }

    /// Index of the first sample starting at or after `t`.
    pub(crate) fn index_at(&self, t: f64) -> usize {
        let x = (t - self.t0) / self.dt;
        let k = libm::ceil(x - 1e-6);
        if k <= 0.0 {
            0
        } else {
            k as usize
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timing_and_gating() {
        let mut rec = MeasurementRecord::new(-1.0, 0.25);
        rec.push(0.5);
        rec.push_gated_off();
        rec.push(1.5);
        assert_eq!(rec.len(), 3);
        assert_eq!(rec.end_time(), -0.25);
        assert!(!rec.fully_gated_on());
        assert!(rec.samples[1].is_nan());
        let active: Vec<_> = rec.active().collect();
        assert_eq!(active, [(-1.0, 0.5), (-0.5, 1.5)]);
        assert_eq!(rec.index_at(-0.5), 2);
        assert_eq!(rec.index_at(-0.6), 2);
        assert_eq!(rec.index_at(-2.0), 0);
    }
}
