//! Spatiotemporal radial-basis threat fields.
//!
//! ```text
//! c(x, t) = offset + amplitude * sum_i  m_i(t) * exp(-1/2 (x - a_i)^T L_i (x - a_i))
//! ```
//!
//! with `m_i(t) = a0_i` for a static field and
//! `m_i(t) = (a0_i / 2) (1.5 + cos(a0_i t))` for a cosine-modulated one.
//! Every function is generic over [`Scalar`] so the same closed forms serve
//! plain evaluation and automatic differentiation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("basis {index}: shape matrix is not positive definite (minors {m1}, {m2})")]
    NotPositiveDefinite { index: usize, m1: f64, m2: f64 },
    #[error("basis {index}: non-finite parameter")]
    NonFinite { index: usize },
    #[error("threat value {value} at ({x1}, {x2}, t = {t}) is not positive")]
    NonPositive { value: f64, x1: f64, x2: f64, t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TemporalMode {
    #[default]
    Static,
    Cosine,
}

/// One Gaussian bump: peak `a0`, center `a`, and symmetric shape matrix
/// `[[l11, l12], [l12, l22]]` in 1/m².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialBasis {
    pub peak: f64,
    pub center: [f64; 2],
    pub shape: [f64; 3],
}

impl RadialBasis {
    pub fn new(peak: f64, center: [f64; 2], shape: [f64; 3]) -> Self {
        Self { peak, center, shape }
    }

    /// Isotropic bump with `shape = I / spread²`.
    pub fn isotropic(peak: f64, center: [f64; 2], spread: f64) -> Self {
        let k = 1.0 / (spread * spread);
        Self::new(peak, center, [k, 0.0, k])
    }

    fn check(&self, index: usize) -> Result<(), FieldError> {
        let all = [self.peak, self.center[0], self.center[1], self.shape[0], self.shape[1], self.shape[2]];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite { index });
        }
        let [l11, l12, l22] = self.shape;
        let m1 = l11;
        let m2 = l11 * l22 - l12 * l12;
        if m1 <= 0.0 || m2 <= 0.0 {
            return Err(FieldError::NotPositiveDefinite { index, m1, m2 });
        }
        Ok(())
    }

    /// Returns (Gaussian factor, L(x - a)).
    fn kernel<S: Scalar>(&self, x: [S; 2]) -> (S, [S; 2]) {
        let [l11, l12, l22] = self.shape;
        let d1 = x[0] - self.center[0];
        let d2 = x[1] - self.center[1];
        let ld1 = d1 * l11 + d2 * l12;
        let ld2 = d1 * l12 + d2 * l22;
        let q = d1 * ld1 + d2 * ld2;
        ((q * -0.5).exp(), [ld1, ld2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreatField {
    bases: Vec<RadialBasis>,
    amplitude: f64,
    offset: f64,
    mode: TemporalMode,
}

impl ThreatField {
    /// Builds a field and checks every shape matrix. Positivity is checked
    /// separately by [`ThreatField::validate_positive`] because it needs the
    /// workspace.
    pub fn new(
        bases: Vec<RadialBasis>,
        amplitude: f64,
        offset: f64,
        mode: TemporalMode,
    ) -> Result<Self, FieldError> {
        for (i, b) in bases.iter().enumerate() {
            b.check(i)?;
        }
        Ok(Self {
            bases,
            amplitude,
            offset,
            mode,
        })
    }

    /// `c ≡ offset` with no bases.
    pub fn constant(offset: f64) -> Self {
        Self {
            bases: Vec::new(),
            amplitude: 5.0,
            offset,
            mode: TemporalMode::Static,
        }
    }

    pub fn bases(&self) -> &[RadialBasis] {
        &self.bases
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn mode(&self) -> TemporalMode {
        self.mode
    }

    pub fn is_static(&self) -> bool {
        self.mode == TemporalMode::Static || self.bases.is_empty()
    }

    /// Field with offset and amplitude multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            amplitude: self.amplitude * k,
            offset: self.offset * k,
            ..self.clone()
        }
    }

    /// Checks c > 0 on a `n × n` grid over `[lo, hi]²`; cosine fields are
    /// additionally sampled over one period of the slowest basis.
    pub fn validate_positive(&self, lo: f64, hi: f64, n: usize) -> Result<(), FieldError> {
        let times: Vec<f64> = match self.mode {
            TemporalMode::Static => vec![0.0],
            TemporalMode::Cosine => {
                let slowest = self
                    .bases
                    .iter()
                    .map(|b| b.peak.abs())
                    .filter(|w| *w > 0.0)
                    .fold(f64::INFINITY, f64::min);
                if slowest.is_finite() {
                    let period = 2.0 * std::f64::consts::PI / slowest;
                    (0..16).map(|k| period * k as f64 / 16.0).collect()
                } else {
                    vec![0.0]
                }
            }
        };
        let n = n.max(2);
        for &t in &times {
            for i in 0..n {
                for j in 0..n {
                    let x1 = lo + (hi - lo) * i as f64 / (n - 1) as f64;
                    let x2 = lo + (hi - lo) * j as f64 / (n - 1) as f64;
                    let value = self.value([x1, x2], t);
                    if !(value > 0.0) {
                        return Err(FieldError::NonPositive { value, x1, x2, t });
                    }
                }
            }
        }
        Ok(())
    }

    /// Basis-specific multiplier m_i(t).
    fn modulation<S: Scalar>(&self, peak: f64, t: S) -> S {
        match self.mode {
            TemporalMode::Static => t.lift(peak),
            TemporalMode::Cosine => ((t * peak).cos() + 1.5) * (0.5 * peak),
        }
    }

    fn modulation_rate<S: Scalar>(&self, peak: f64, t: S) -> S {
        match self.mode {
            TemporalMode::Static => t.lift(0.0),
            TemporalMode::Cosine => (t * peak).sin() * (-0.5 * peak * peak),
        }
    }

    /// c(x, t).
    pub fn value<S: Scalar>(&self, x: [S; 2], t: S) -> S {
        let mut sum: Option<S> = None;
        for b in &self.bases {
            let (g, _) = b.kernel(x);
            let term = self.modulation(b.peak, t) * g;
            sum = Some(match sum {
                Some(s) => s + term,
                None => term,
            });
        }
        match sum {
            Some(s) => s * self.amplitude + self.offset,
            None => x[0].lift(self.offset),
        }
    }

    /// ∂c/∂x.
    pub fn grad_x<S: Scalar>(&self, x: [S; 2], t: S) -> [S; 2] {
        let mut acc: Option<[S; 2]> = None;
        for b in &self.bases {
            let (g, ld) = b.kernel(x);
            let w = self.modulation(b.peak, t) * g * (-self.amplitude);
            let term = [w * ld[0], w * ld[1]];
            acc = Some(match acc {
                Some(a) => [a[0] + term[0], a[1] + term[1]],
                None => term,
            });
        }
        acc.unwrap_or_else(|| [x[0].lift(0.0), x[0].lift(0.0)])
    }

    /// ∂c/∂t; identically zero for static fields.
    pub fn dc_dt<S: Scalar>(&self, x: [S; 2], t: S) -> S {
        if self.mode == TemporalMode::Static {
            return x[0].lift(0.0);
        }
        let mut sum: Option<S> = None;
        for b in &self.bases {
            let (g, _) = b.kernel(x);
            let term = self.modulation_rate(b.peak, t) * g;
            sum = Some(match sum {
                Some(s) => s + term,
                None => term,
            });
        }
        match sum {
            Some(s) => s * self.amplitude,
            None => x[0].lift(0.0),
        }
    }
}
