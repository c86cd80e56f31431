use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::LungError;

/// Pressure-volume breathing parameters.
///
/// The PV curve is `V(p) = frc + tv * sum_n cp[n] * B_{n,N}(p / pr)` with
/// `B` the degree-`N` Bernstein basis, `N = cp.len() - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PvParams {
    /// Functional residual capacity, liters.
    pub frc: f64,
    /// Tidal volume, liters.
    pub tv: f64,
    /// Peak trans-pulmonary pressure, cmH2O.
    pub pr: f64,
    /// Breaths per minute.
    pub rate: f64,
    /// Control constants.
    pub cp: Vec<f64>,
}

impl Default for PvParams {
    fn default() -> Self {
        Self { frc: 2.5, tv: 0.5, pr: 10.0, rate: 12.0, cp: vec![0.0, 0.15, 0.85, 1.0] }
    }
}

impl PvParams {
    pub fn validate(&self) -> Result<(), LungError> {
        self.violations().into_iter().next().map_or(Ok(()), |v| Err(LungError::Argument(v)))
    }

    /// Every violated invariant, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [("frc", self.frc), ("tv", self.tv), ("pr", self.pr), ("rate", self.rate)] {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("{name} must be positive and finite (got {v})"));
            }
        }
        if self.cp.is_empty() {
            out.push("cp must not be empty".into());
        } else if self.cp.iter().any(|c| !c.is_finite()) {
            out.push("cp entries must be finite".into());
        }
        out
    }

    pub fn period_s(&self) -> f64 {
        60.0 / self.rate
    }

    pub fn period_ns(&self) -> i64 {
        (60e9 / self.rate).round() as i64
    }
}

/// Bernstein polynomial with control values `cp` at `x` in [0, 1] (de Casteljau).
pub fn bernstein(cp: &[f64], x: f64) -> f64 {
    let mut work = cp.to_vec();
    let n = work.len();
    for k in 1..n {
        for i in 0..n - k {
            work[i] = (1.0 - x) * work[i] + x * work[i + 1];
        }
    }
    work[0]
}

/// Lung volume in liters at trans-pulmonary `pressure`.
pub fn pv_volume(pressure: f64, params: &PvParams) -> Result<f64, LungError> {
    params.validate()?;
    if !(0.0..=params.pr).contains(&pressure) {
        return Err(LungError::Argument(format!("pressure {pressure} outside [0, {}]", params.pr)));
    }
    Ok(params.frc + params.tv * bernstein(&params.cp, pressure / params.pr))
}

/// Raised-cosine pressure at a cycle phase in [0, 1).
pub fn pressure_at_phase(phase: f64, params: &PvParams) -> f64 {
    let p = params.pr * (1.0 - (TAU * phase).cos()) / 2.0;
    p.clamp(0.0, params.pr)
}

/// Pressure `t` seconds after a cycle start: 0 at the start, `pr` at mid-cycle.
pub fn pressure_waveform(t: f64, params: &PvParams) -> f64 {
    let period = params.period_s();
    pressure_at_phase(t.rem_euclid(period) / period, params)
}

pub fn normalized_volume(volume: f64, params: &PvParams) -> f64 {
    (volume - params.frc) / params.tv
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params(cp: Vec<f64>) -> PvParams {
        PvParams { cp, ..PvParams::default() }
    }

    #[test]
    fn endpoints() {
        let p = PvParams::default();
        assert_eq!(pv_volume(0.0, &p).unwrap(), p.frc);
        assert_eq!(pv_volume(p.pr, &p).unwrap(), p.frc + p.tv);
    }

    #[test]
    fn linear_precision() {
        // Direct power-form evaluation of sum (n/N) C(N,n) x^n (1-x)^(N-n).
        let n = 5usize;
        let p = params((0..=n).map(|k| k as f64 / n as f64).collect());
        for i in 0..=20 {
            let pressure = p.pr * i as f64 / 20.0;
            let x = pressure / p.pr;
            let mut direct = 0.0;
            let mut binom = 1.0;
            for k in 0..=n {
                direct += (k as f64 / n as f64) * binom * x.powi(k as i32) * (1.0 - x).powi((n - k) as i32);
                binom = binom * (n - k) as f64 / (k + 1) as f64;
            }
            let v = pv_volume(pressure, &p).unwrap();
            assert_abs_diff_eq!(v, p.frc + p.tv * direct, epsilon = 1e-14);
            assert_abs_diff_eq!(v, p.frc + p.tv * x, epsilon = 1e-14);
        }
    }

    #[test]
    fn pressure_range_enforced() {
        let p = PvParams::default();
        assert!(pv_volume(-1e-9, &p).is_err());
        assert!(pv_volume(p.pr * 1.000001, &p).is_err());
        assert!(pv_volume(1.0, &PvParams { tv: 0.0, ..p }).is_err());
    }

    #[test]
    fn waveform_shape() {
        let p = PvParams::default();
        let t = p.period_s();
        assert_eq!(pressure_waveform(0.0, &p), 0.0);
        assert_abs_diff_eq!(pressure_waveform(t / 2.0, &p), p.pr, epsilon = 1e-12);
        assert_abs_diff_eq!(pressure_waveform(t / 4.0, &p), p.pr / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pressure_waveform(t * 3.25, &p), p.pr / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn normalized_volume_examples() {
        let p = PvParams::default();
        assert_eq!(normalized_volume(p.frc, &p), 0.0);
        assert_eq!(normalized_volume(p.frc + p.tv, &p), 1.0);
        assert_eq!(normalized_volume(p.frc + p.tv / 4.0, &p), 0.25);
    }

    #[test]
    fn validation_lists_each_problem() {
        let bad = PvParams { frc: -1.0, tv: f64::NAN, pr: 1.0, rate: 0.0, cp: vec![] };
        assert_eq!(bad.violations().len(), 4);
    }
}
