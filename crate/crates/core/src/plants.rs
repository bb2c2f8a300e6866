//! Ground-truth plants `x' = f(x) + B u`, integrated with RK4 under a
//! zero-order-hold input, plus timed parameter changes and a seeded sensor.

use nalgebra::{DVector, Matrix2, Vector2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Width of the `tanh` used in place of `sign` for Coulomb friction.
pub const COULOMB_SMOOTHING: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub enum PlantKind {
    /// Damped pendulum with torque input, state `(theta, theta_dot)`:
    /// `m l^2 theta'' = u - d theta' - c tanh(theta'/eps) - m g l sin(theta)`.
    Pendulum { m: f64, l: f64, g: f64, d: f64, c: f64 },
    /// `x' = A x + B u` with two states and one input.
    Linear2nd { a: Matrix2<f64>, b: Vector2<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub kind: PlantKind,
    /// Std of the output measurement noise.
    pub noise_y: f64,
    /// Std of the full-state measurement noise.
    pub noise_x: f64,
    /// Controller sample time.
    pub dt: f64,
    /// RK4 substeps per sample.
    pub substeps: usize,
    /// State coordinate that the output sensor reads.
    pub output: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub x: DVector<f64>,
    pub t: f64,
}

/// A timed parameter step.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeEvent {
    pub time: f64,
    pub parameter: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChangeSchedule {
    events: Vec<ChangeEvent>,
}

impl ChangeSchedule {
    /// Events are stably sorted by time; equal times keep their given order.
    pub fn new(mut events: Vec<ChangeEvent>) -> Result<Self> {
        if events.iter().any(|e| !e.time.is_finite() || !e.value.is_finite()) {
            return Err(Error::InvalidParameter("schedule entries must be finite".into()));
        }
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        Ok(Self { events })
    }

    pub fn events(&self) -> &[ChangeEvent] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

impl PlantModel {
    pub fn pendulum(m: f64, l: f64, g: f64, d: f64, c: f64, dt: f64) -> Self {
        Self {
            kind: PlantKind::Pendulum { m, l, g, d, c },
            noise_y: 0.0,
            noise_x: 0.0,
            dt,
            substeps: 10,
            output: 0,
        }
    }

    pub fn linear2nd(a: Matrix2<f64>, b: Vector2<f64>, dt: f64) -> Self {
        Self {
            kind: PlantKind::Linear2nd { a, b },
            noise_y: 0.0,
            noise_x: 0.0,
            dt,
            substeps: 10,
            output: 0,
        }
    }

    pub fn state_dim(&self) -> usize {
        2
    }

    pub fn input_dim(&self) -> usize {
        1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.dt > 0.0) || self.substeps == 0 {
            return bad("plant needs dt > 0 and substeps >= 1".into());
        }
        if !(self.noise_x >= 0.0) || !(self.noise_y >= 0.0) {
            return bad("noise std must be >= 0".into());
        }
        if self.output >= self.state_dim() {
            return bad(format!("output coordinate {} out of range", self.output));
        }
        match &self.kind {
            PlantKind::Pendulum { m, l, g, d, c } => {
                if !(*m > 0.0 && *l > 0.0 && *g > 0.0) {
                    return bad("pendulum needs m, l, g > 0".into());
                }
                if !(*d >= 0.0 && *c >= 0.0) {
                    return bad("pendulum needs d, c >= 0".into());
                }
            }
            PlantKind::Linear2nd { a, b } => {
                if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
                    return bad("linear plant matrices must be finite".into());
                }
            }
        }
        Ok(())
    }

    /// Continuous-time vector field.
    pub fn derivative(&self, x: &Vector2<f64>, u: f64) -> Vector2<f64> {
        match &self.kind {
            PlantKind::Pendulum { m, l, g, d, c } => {
                let (theta, omega) = (x[0], x[1]);
                let friction = d * omega + c * (omega / COULOMB_SMOOTHING).tanh();
                let acc = (u - friction - m * g * l * theta.sin()) / (m * l * l);
                Vector2::new(omega, acc)
            }
            PlantKind::Linear2nd { a, b } => a * x + b * u,
        }
    }

    pub fn parameter(&self, name: &str) -> Result<f64> {
        let v = match (&self.kind, name) {
            (PlantKind::Pendulum { m, .. }, "m") => *m,
            (PlantKind::Pendulum { l, .. }, "l") => *l,
            (PlantKind::Pendulum { g, .. }, "g") => *g,
            (PlantKind::Pendulum { d, .. }, "d") => *d,
            (PlantKind::Pendulum { c, .. }, "c") => *c,
            (PlantKind::Linear2nd { a, .. }, "a11") => a[(0, 0)],
            (PlantKind::Linear2nd { a, .. }, "a12") => a[(0, 1)],
            (PlantKind::Linear2nd { a, .. }, "a21") => a[(1, 0)],
            (PlantKind::Linear2nd { a, .. }, "a22") => a[(1, 1)],
            (PlantKind::Linear2nd { b, .. }, "b1") => b[0],
            (PlantKind::Linear2nd { b, .. }, "b2") => b[1],
            _ => return Err(Error::UnknownParameter(name.to_string())),
        };
        Ok(v)
    }

    pub fn set_parameter(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = match (&mut self.kind, name) {
            (PlantKind::Pendulum { m, .. }, "m") => m,
            (PlantKind::Pendulum { l, .. }, "l") => l,
            (PlantKind::Pendulum { g, .. }, "g") => g,
            (PlantKind::Pendulum { d, .. }, "d") => d,
            (PlantKind::Pendulum { c, .. }, "c") => c,
            (PlantKind::Linear2nd { a, .. }, "a11") => &mut a[(0, 0)],
            (PlantKind::Linear2nd { a, .. }, "a12") => &mut a[(0, 1)],
            (PlantKind::Linear2nd { a, .. }, "a21") => &mut a[(1, 0)],
            (PlantKind::Linear2nd { a, .. }, "a22") => &mut a[(1, 1)],
            (PlantKind::Linear2nd { b, .. }, "b1") => &mut b[0],
            (PlantKind::Linear2nd { b, .. }, "b2") => &mut b[1],
            _ => return Err(Error::UnknownParameter(name.to_string())),
        };
        *slot = value;
        Ok(())
    }
}

/// Check every event names an existing parameter and keeps the plant valid.
pub fn validate_schedule(plant: &PlantModel, schedule: &ChangeSchedule) -> Result<()> {
    let mut p = plant.clone();
    for e in schedule.events() {
        p.set_parameter(&e.parameter, e.value)?;
        p.validate()?;
    }
    Ok(())
}

/// The plant with every event at or before `t` applied in order.
pub fn apply_schedule(plant: &PlantModel, schedule: &ChangeSchedule, t: f64) -> Result<PlantModel> {
    let mut out = plant.clone();
    for e in schedule.events().iter().take_while(|e| e.time <= t) {
        out.set_parameter(&e.parameter, e.value)?;
    }
    Ok(out)
}

/// Advance one sample of length `dt` with `substeps` RK4 steps, input held.
pub fn step_plant(plant: &PlantModel, state: &PlantState, u: &DVector<f64>) -> Result<PlantState> {
    if state.x.len() != plant.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "plant state",
            expected: plant.state_dim(),
            actual: state.x.len(),
        });
    }
    if u.len() != plant.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "plant input",
            expected: plant.input_dim(),
            actual: u.len(),
        });
    }
    let u = u[0];
    if !u.is_finite() {
        return Err(Error::NonFinite("plant input"));
    }
    let h = plant.dt / plant.substeps as f64;
    let mut x = Vector2::new(state.x[0], state.x[1]);
    for _ in 0..plant.substeps {
        let k1 = plant.derivative(&x, u);
        let k2 = plant.derivative(&(x + k1 * (h / 2.0)), u);
        let k3 = plant.derivative(&(x + k2 * (h / 2.0)), u);
        let k4 = plant.derivative(&(x + k3 * h), u);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    let t = state.t + plant.dt;
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteState { t });
    }
    Ok(PlantState {
        x: DVector::from_column_slice(x.as_slice()),
        t,
    })
}

/// Noisy full-state measurement (for identification) and noisy scalar
/// output (for the observer). Always draws `n + 1` normals so the stream
/// position does not depend on the noise levels.
pub fn measure<R: Rng + ?Sized>(
    plant: &PlantModel,
    state: &PlantState,
    rng: &mut R,
) -> (DVector<f64>, f64) {
    let mut x_meas = state.x.clone();
    for v in x_meas.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v += plant.noise_x * z;
    }
    let z: f64 = StandardNormal.sample(rng);
    let y = state.x[plant.output] + plant.noise_y * z;
    (x_meas, y)
}

/// Mechanical energy of a pendulum state.
pub fn pendulum_energy(plant: &PlantModel, x: &DVector<f64>) -> Option<f64> {
    match plant.kind {
        PlantKind::Pendulum { m, l, g, .. } => {
            Some(0.5 * m * l * l * x[1] * x[1] + m * g * l * (1.0 - x[0].cos()))
        }
        _ => None,
    }
}
