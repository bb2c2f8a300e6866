//! Reference trajectories `w(t)` in state coordinates `(position, velocity, 0, ...)`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::matops::Matrix;

/// Peak of `d/dtau` of the quintic `10 tau^3 - 15 tau^4 + 6 tau^5`.
pub const QUINTIC_PEAK_SLOPE: f64 = 1.875;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceKind {
    /// Strokes `0 -> A -> 0 -> ...` along quintic rest-to-rest profiles,
    /// separated by holds.
    RestToRest,
    /// `A sin(2 pi f t)`.
    Sinusoid,
    /// Constant position `A`, zero velocity.
    Hold,
}

impl ReferenceKind {
    pub fn name(self) -> &'static str {
        match self {
            ReferenceKind::RestToRest => "rest-to-rest",
            ReferenceKind::Sinusoid => "sinusoid",
            ReferenceKind::Hold => "hold",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rest-to-rest" => Some(ReferenceKind::RestToRest),
            "sinusoid" => Some(ReferenceKind::Sinusoid),
            "hold" => Some(ReferenceKind::Hold),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSpec {
    pub kind: ReferenceKind,
    pub amplitude: f64,
    /// Peak velocity of a stroke (rest-to-rest only).
    pub speed: f64,
    /// Rest time before each stroke (rest-to-rest only).
    pub hold: f64,
    /// Sinusoid frequency in Hz.
    pub frequency: f64,
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        Self {
            kind: ReferenceKind::RestToRest,
            amplitude: 1.0,
            speed: 2.0,
            hold: 1.0,
            frequency: 0.5,
        }
    }
}

fn quintic(tau: f64) -> (f64, f64) {
    let t2 = tau * tau;
    let pos = t2 * tau * (10.0 + tau * (-15.0 + 6.0 * tau));
    let slope = 30.0 * t2 * (1.0 - tau) * (1.0 - tau);
    (pos, slope)
}

impl ReferenceSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !self.amplitude.is_finite() {
            return bad("reference amplitude must be finite");
        }
        match self.kind {
            ReferenceKind::RestToRest => {
                if !(self.speed > 0.0 && self.speed.is_finite()) {
                    return bad("rest-to-rest reference needs speed > 0");
                }
                if !(self.hold >= 0.0 && self.hold.is_finite()) {
                    return bad("rest-to-rest reference needs hold >= 0");
                }
            }
            ReferenceKind::Sinusoid => {
                if !self.frequency.is_finite() {
                    return bad("sinusoid frequency must be finite");
                }
            }
            ReferenceKind::Hold => {}
        }
        Ok(())
    }

    /// Duration of one stroke, `1.875 |A| / v`.
    pub fn move_time(&self) -> f64 {
        QUINTIC_PEAK_SLOPE * self.amplitude.abs() / self.speed
    }

    /// `(position, velocity)` at time `t`.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let a = self.amplitude;
        match self.kind {
            ReferenceKind::Hold => (a, 0.0),
            ReferenceKind::Sinusoid => {
                let om = 2.0 * std::f64::consts::PI * self.frequency;
                (a * (om * t).sin(), a * om * (om * t).cos())
            }
            ReferenceKind::RestToRest => {
                let tm = self.move_time();
                if tm == 0.0 || t < 0.0 {
                    return (0.0, 0.0);
                }
                let period = 2.0 * (self.hold + tm);
                let s = t.rem_euclid(period);
                let half = self.hold + tm;
                let (from, dir, s) = if s < half { (0.0, 1.0, s) } else { (a, -1.0, s - half) };
                if s < self.hold {
                    (from, 0.0)
                } else {
                    let (q, dq) = quintic((s - self.hold) / tm);
                    (from + dir * a * q, dir * a * dq / tm)
                }
            }
        }
    }

    /// `w(t)` as a state-dimension vector.
    pub fn state(&self, t: f64, n: usize) -> DVector<f64> {
        let (pos, vel) = self.eval(t);
        let mut w = DVector::zeros(n);
        if n > 0 {
            w[0] = pos;
        }
        if n > 1 {
            w[1] = vel;
        }
        w
    }

    /// Columns `w(t0 + dt), ..., w(t0 + H dt)`.
    pub fn window(&self, t0: f64, dt: f64, horizon: usize, n: usize) -> Matrix {
        let mut out = Matrix::zeros(n, horizon);
        for j in 0..horizon {
            out.set_column(j, &self.state(t0 + (j + 1) as f64 * dt, n));
        }
        out
    }
}
