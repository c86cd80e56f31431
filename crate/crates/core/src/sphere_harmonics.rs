//! Real orthonormal spherical harmonics.
//!
//! Convention: no Condon-Shortley phase. For `m > 0` the basis function is
//! `sqrt(2) * N_lm * P_l^m(cos theta) * cos(m phi)`, for `m < 0` it is
//! `sqrt(2) * N_l|m| * P_l^|m|(cos theta) * sin(|m| phi)`. Coefficients are
//! flattened as `l * l + l + m`, which is also the wire order.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::par::Exec;

/// Highest degree the recurrences are evaluated for.
pub const L_MAX: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShError {
    #[error("degree/order out of range: l={l}, m={m} (l <= {max}, |m| <= l)", max = L_MAX)]
    OutOfRange { l: i64, m: i64 },
    #[error("band limit {0} exceeds supported maximum {L_MAX}")]
    BandLimitTooLarge(usize),
    #[error("coefficient vector has length {got}, expected (L+1)^2 = {expected}")]
    BadLength { got: usize, expected: usize },
    #[error("coefficient {0} is not finite")]
    NonFinite(usize),
    #[error("{samples} samples cannot determine {unknowns} coefficients")]
    Underdetermined { samples: usize, unknowns: usize },
    #[error("sample {0} has a non-finite value or direction")]
    BadSample(usize),
    #[error("normal system is singular beyond regularization (pivot ratio {0:.3e})")]
    Conditioning(f64),
}

/// Unit direction in spherical coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    theta: f64,
    phi: f64,
}

impl Direction {
    /// Builds a direction, normalizing `phi` into `[0, 2pi)`. Returns `None`
    /// when `theta` is outside `[0, pi]` or either angle is not finite.
    pub fn new(theta: f64, phi: f64) -> Option<Self> {
        if !theta.is_finite() || !phi.is_finite() || !(0.0..=PI).contains(&theta) {
            return None;
        }
        let mut phi = phi.rem_euclid(TAU);
        if phi >= TAU {
            phi = 0.0;
        }
        Some(Self { theta, phi })
    }

    /// Direction of a non-zero vector. Returns `None` for zero or non-finite input.
    pub fn from_vector(v: [f64; 3]) -> Option<Self> {
        let rho = v[0].hypot(v[1]);
        let norm = rho.hypot(v[2]);
        if !(norm > 0.0) || !norm.is_finite() {
            return None;
        }
        let theta = rho.atan2(v[2]);
        let phi = if rho == 0.0 { 0.0 } else { v[1].atan2(v[0]) };
        Self::new(theta, phi)
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn unit_vector(&self) -> [f64; 3] {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [st * cp, st * sp, ct]
    }
}

#[inline]
pub fn index(l: usize, m: i64) -> usize {
    ((l * l + l) as i64 + m) as usize
}

/// Inverse of [`index`].
pub fn degree_order(idx: usize) -> (usize, i64) {
    let l = (idx as f64).sqrt() as usize;
    let l = if (l + 1) * (l + 1) <= idx { l + 1 } else if l * l > idx { l - 1 } else { l };
    (l, idx as i64 - (l * l + l) as i64)
}

pub fn coeff_count(band_limit: usize) -> usize {
    (band_limit + 1) * (band_limit + 1)
}

/// Band-limited coefficient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ShCoefficients {
    band_limit: usize,
    coeffs: Vec<f64>,
}

impl ShCoefficients {
    pub fn new(band_limit: usize, coeffs: Vec<f64>) -> Result<Self, ShError> {
        if band_limit > L_MAX {
            return Err(ShError::BandLimitTooLarge(band_limit));
        }
        let expected = coeff_count(band_limit);
        if coeffs.len() != expected {
            return Err(ShError::BadLength { got: coeffs.len(), expected });
        }
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(ShError::NonFinite(i));
        }
        Ok(Self { band_limit, coeffs })
    }

    /// Infers the band limit from a flat vector whose length is a perfect square.
    pub fn from_flat(coeffs: Vec<f64>) -> Result<Self, ShError> {
        let n = coeffs.len();
        let l = (n as f64).sqrt().round() as usize;
        if l == 0 || l * l != n {
            return Err(ShError::BadLength { got: n, expected: l.max(1) * l.max(1) });
        }
        Self::new(l - 1, coeffs)
    }

    pub fn zeros(band_limit: usize) -> Self {
        Self { band_limit, coeffs: vec![0.0; coeff_count(band_limit)] }
    }

    pub fn band_limit(&self) -> usize {
        self.band_limit
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn get(&self, l: usize, m: i64) -> f64 {
        self.coeffs[index(l, m)]
    }

    pub fn set(&mut self, l: usize, m: i64, value: f64) {
        self.coeffs[index(l, m)] = value;
    }
}

/// Evaluates every `Y_{l,m}` with `l <= band_limit` at `dir` into `out`
/// (length `(L+1)^2`, flattened order).
///
/// Uses the fully normalized associated Legendre upward recurrence.
pub fn eval_all(band_limit: usize, dir: Direction, out: &mut [f64]) {
    debug_assert_eq!(out.len(), coeff_count(band_limit));
    let (st, ct) = dir.theta.sin_cos();
    let (sp, cp) = dir.phi.sin_cos();
    let big_l = band_limit;

    // p_mm carries the sectoral value for the current m.
    let mut p_mm = 0.5 / PI.sqrt();
    // cos(m phi), sin(m phi) by angle addition.
    let (mut cm, mut sm) = (1.0f64, 0.0f64);
    for m in 0..=big_l {
        if m > 0 {
            p_mm *= ((2 * m + 1) as f64 / (2 * m) as f64).sqrt() * st;
            let c = cm * cp - sm * sp;
            sm = sm * cp + cm * sp;
            cm = c;
        }
        let (wc, ws) = if m == 0 { (1.0, 0.0) } else { (std::f64::consts::SQRT_2 * cm, std::f64::consts::SQRT_2 * sm) };
        let mi = m as i64;
        let store = |out: &mut [f64], l: usize, p: f64| {
            if m == 0 {
                out[index(l, 0)] = p;
            } else {
                out[index(l, mi)] = p * wc;
                out[index(l, -mi)] = p * ws;
            }
        };
        store(out, m, p_mm);
        if m == big_l {
            break;
        }
        let mut p_prev = p_mm;
        let mut p_cur = ((2 * m + 3) as f64).sqrt() * ct * p_mm;
        store(out, m + 1, p_cur);
        for l in (m + 2)..=big_l {
            let lf = l as f64;
            let mf = m as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
            let p_next = a * (ct * p_cur - b * p_prev);
            p_prev = p_cur;
            p_cur = p_next;
            store(out, l, p_cur);
        }
    }
}

/// Single real spherical harmonic `Y_{l,m}(dir)`.
pub fn eval_real_sh(l: usize, m: i64, dir: Direction) -> Result<f64, ShError> {
    if l > L_MAX || m.unsigned_abs() as usize > l {
        return Err(ShError::OutOfRange { l: l as i64, m });
    }
    let mut buf = vec![0.0; coeff_count(l)];
    eval_all(l, dir, &mut buf);
    Ok(buf[index(l, m)])
}

/// Field value `sum c_lm Y_lm(dir)`.
pub fn synthesize(coeffs: &ShCoefficients, dir: Direction) -> f64 {
    let mut buf = vec![0.0; coeffs.len()];
    eval_all(coeffs.band_limit, dir, &mut buf);
    dot(&buf, &coeffs.coeffs)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-major matrix of basis values, one row per direction.
#[derive(Debug, Clone)]
pub struct BasisMatrix {
    band_limit: usize,
    rows: usize,
    values: Vec<f64>,
}

impl BasisMatrix {
    pub fn new(band_limit: usize, dirs: &[Direction], exec: Exec) -> Result<Self, ShError> {
        if band_limit > L_MAX {
            return Err(ShError::BandLimitTooLarge(band_limit));
        }
        let width = coeff_count(band_limit);
        let mut values = vec![0.0; dirs.len() * width];
        exec.fill_rows(&mut values, width, |i, row| eval_all(band_limit, dirs[i], row));
        Ok(Self { band_limit, rows: dirs.len(), values })
    }

    pub fn band_limit(&self) -> usize {
        self.band_limit
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = coeff_count(self.band_limit);
        &self.values[i * w..(i + 1) * w]
    }

    /// Field values at every row direction. `coeffs` may be shorter than
    /// the basis width (a lower band limit), never longer.
    pub fn synthesize(&self, coeffs: &[f64], exec: Exec) -> Vec<f64> {
        let n = coeffs.len().min(coeff_count(self.band_limit));
        exec.map(self.rows, |i| dot(&self.row(i)[..n], &coeffs[..n]))
    }
}

/// Regularized least-squares projection of scattered samples onto the
/// degree-`band_limit` basis.
pub fn analyze(samples: &[(Direction, f64)], band_limit: usize) -> Result<ShCoefficients, ShError> {
    analyze_with(samples, band_limit, Exec::default())
}

pub fn analyze_with(
    samples: &[(Direction, f64)],
    band_limit: usize,
    exec: Exec,
) -> Result<ShCoefficients, ShError> {
    if band_limit > L_MAX {
        return Err(ShError::BandLimitTooLarge(band_limit));
    }
    let unknowns = coeff_count(band_limit);
    if samples.len() < unknowns {
        return Err(ShError::Underdetermined { samples: samples.len(), unknowns });
    }
    if let Some(i) = samples
        .iter()
        .position(|(d, v)| !v.is_finite() || !d.theta.is_finite() || !d.phi.is_finite())
    {
        return Err(ShError::BadSample(i));
    }
    let dirs: Vec<Direction> = samples.iter().map(|s| s.0).collect();
    let basis = BasisMatrix::new(band_limit, &dirs, exec)?;
    let design = DMatrix::from_row_slice(samples.len(), unknowns, &basis.values);
    let values = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.1));
    let normal = design.tr_mul(&design);
    let rhs = design.tr_mul(&values);
    solve_regularized(normal, rhs).map(|c| ShCoefficients { band_limit, coeffs: c.as_slice().to_vec() })
}

/// Pivot-ratio floor below which the regularization term is what keeps the
/// factorization alive.
const CONDITIONING_FLOOR: f64 = 1e-3;
const REFINEMENT_STEPS: usize = 3;

/// Solves `(N + lambda I) x = b` with `lambda = 1e-9 * trace(N) / n`, then
/// refines against the unregularized system.
fn solve_regularized(normal: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>, ShError> {
    let n = normal.nrows();
    let lambda = 1e-9 * normal.trace() / n as f64;
    let mut shifted = normal.clone();
    for i in 0..n {
        shifted[(i, i)] += lambda;
    }
    let chol = shifted.cholesky().ok_or(ShError::Conditioning(0.0))?;
    let l = chol.l_dirty();
    let min_pivot_sq = (0..n).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if min_pivot_sq < lambda / CONDITIONING_FLOOR {
        return Err(ShError::Conditioning(min_pivot_sq / (normal.trace() / n as f64)));
    }
    let mut x = chol.solve(&rhs);
    for _ in 0..REFINEMENT_STEPS {
        let residual = &rhs - &normal * &x;
        x += chol.solve(&residual);
    }
    Ok(x)
}

/// Per-degree power `sum_m c_lm^2`.
pub fn power_spectrum(coeffs: &ShCoefficients) -> Vec<f64> {
    (0..=coeffs.band_limit)
        .map(|l| {
            let l2 = l * l;
            coeffs.coeffs[l2..l2 + 2 * l + 1].iter().map(|c| c * c).sum()
        })
        .collect()
}

/// Deterministic, roughly uniform directions on a Fibonacci spiral.
pub fn fibonacci_directions(count: usize) -> Vec<Direction> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / count as f64;
            let theta = z.clamp(-1.0, 1.0).acos();
            Direction::new(theta, golden * i as f64).expect("theta within range")
        })
        .collect()
}
