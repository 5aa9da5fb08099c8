//! Benchmark flows (Rössler, Van der Pol, Lorenz) and their time-`h` maps.
//!
//! The discrete dynamical system used everywhere else is one classical RK4
//! step of fixed size `h`; its inverse is the RK4 step of size `-h`.

use std::ops::Deref;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Any coordinate beyond this magnitude is treated as a blow-up.
pub const DIVERGENCE_CAP: f64 = 1e6;

pub const DEFAULT_STEP: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("trajectory diverged at step {step} (|x| = {magnitude:e})")]
    Diverged { step: usize, magnitude: f64 },
    #[error("invalid system: {0}")]
    Invalid(String),
    #[error("observation index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
}

pub type Result<T> = std::result::Result<T, DynError>;

/// A point of phase space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhasePoint(Vec<f64>);

impl PhasePoint {
    pub fn new(coords: Vec<f64>) -> Self {
        PhasePoint(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Euclidean distance.
    pub fn distance(&self, other: &PhasePoint) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl Deref for PhasePoint {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for PhasePoint {
    fn from(v: Vec<f64>) -> Self {
        PhasePoint(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

/// An invertible discrete-time map on `R^q`.
///
/// [`DynamicalSystem`] is the production implementation; tests plug in
/// synthetic maps with known closed forms.
pub trait PhaseMap: Sync {
    fn dim(&self) -> usize;

    /// One application of the map (`Forward`) or of its inverse (`Backward`).
    fn step(&self, p: &PhasePoint, direction: Direction) -> Result<PhasePoint>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum SystemKind {
    Rossler,
    #[serde(rename = "vanderpol")]
    VanDerPol {
        mu: f64,
    },
    Lorenz,
}

impl SystemKind {
    pub fn dim(&self) -> usize {
        match self {
            SystemKind::Rossler | SystemKind::Lorenz => 3,
            SystemKind::VanDerPol { .. } => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SystemKind::Rossler => "rossler",
            SystemKind::VanDerPol { .. } => "vanderpol",
            SystemKind::Lorenz => "lorenz",
        }
    }
}

/// A named vector field together with the RK4 step size that turns it into
/// a diffeomorphism.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicalSystem {
    kind: SystemKind,
    step: f64,
}

impl DynamicalSystem {
    pub fn new(kind: SystemKind, step: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(DynError::Invalid(format!("step must be positive, got {step}")));
        }
        if let SystemKind::VanDerPol { mu } = kind {
            if !mu.is_finite() {
                return Err(DynError::Invalid("mu must be finite".into()));
            }
        }
        Ok(DynamicalSystem { kind, step })
    }

    pub fn rossler() -> Self {
        DynamicalSystem {
            kind: SystemKind::Rossler,
            step: DEFAULT_STEP,
        }
    }

    pub fn lorenz() -> Self {
        DynamicalSystem {
            kind: SystemKind::Lorenz,
            step: DEFAULT_STEP,
        }
    }

    pub fn van_der_pol(mu: f64) -> Result<Self> {
        Self::new(SystemKind::VanDerPol { mu }, DEFAULT_STEP)
    }

    pub fn kind(&self) -> SystemKind {
        self.kind
    }

    pub fn step_size(&self) -> f64 {
        self.step
    }

    pub fn with_step(self, step: f64) -> Result<Self> {
        Self::new(self.kind, step)
    }

    pub fn vector_field(&self, p: &[f64]) -> Result<Vec<f64>> {
        let q = self.kind.dim();
        if p.len() != q {
            return Err(DynError::DimensionMismatch {
                expected: q,
                got: p.len(),
            });
        }
        let mut out = vec![0.0; q];
        self.field_into(p, &mut out);
        Ok(out)
    }

    fn field_into(&self, p: &[f64], out: &mut [f64]) {
        match self.kind {
            SystemKind::Rossler => {
                let (u, v, w) = (p[0], p[1], p[2]);
                out[0] = -v - w;
                out[1] = u + v / 10.0;
                out[2] = 1.0 / 10.0 + w * (u - 14.0);
            }
            SystemKind::VanDerPol { mu } => {
                let (u, v) = (p[0], p[1]);
                out[0] = v;
                out[1] = mu * (1.0 - u * u) * v - u;
            }
            SystemKind::Lorenz => {
                // standard Lorenz-63 sign on the first equation
                let (u, v, w) = (p[0], p[1], p[2]);
                out[0] = 10.0 * (v - u);
                out[1] = u * (28.0 - w) - v;
                out[2] = u * v - 8.0 * w / 3.0;
            }
        }
    }

    /// One classical RK4 step of size `h` (forward) or `-h` (backward).
    pub fn flow_step(&self, p: &PhasePoint, direction: Direction) -> Result<PhasePoint> {
        let q = self.kind.dim();
        if p.dim() != q {
            return Err(DynError::DimensionMismatch {
                expected: q,
                got: p.dim(),
            });
        }
        let h = match direction {
            Direction::Forward => self.step,
            Direction::Backward => -self.step,
        };
        let next = self.rk4(p, h);
        check_bounded(&next, 1)?;
        Ok(PhasePoint(next))
    }

    fn rk4(&self, x: &[f64], h: f64) -> Vec<f64> {
        let q = x.len();
        let mut k1 = vec![0.0; q];
        let mut k2 = vec![0.0; q];
        let mut k3 = vec![0.0; q];
        let mut k4 = vec![0.0; q];
        let mut tmp = vec![0.0; q];
        self.field_into(x, &mut k1);
        for i in 0..q {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        self.field_into(&tmp, &mut k2);
        for i in 0..q {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        self.field_into(&tmp, &mut k3);
        for i in 0..q {
            tmp[i] = x[i] + h * k3[i];
        }
        self.field_into(&tmp, &mut k4);
        (0..q)
            .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect()
    }
}

fn check_bounded(x: &[f64], step: usize) -> Result<()> {
    let magnitude = x.iter().fold(0.0f64, |m, v| if v.is_nan() { f64::INFINITY } else { m.max(v.abs()) });
    if magnitude > DIVERGENCE_CAP {
        return Err(DynError::Diverged { step, magnitude });
    }
    Ok(())
}

impl PhaseMap for DynamicalSystem {
    fn dim(&self) -> usize {
        self.kind.dim()
    }

    fn step(&self, p: &PhasePoint, direction: Direction) -> Result<PhasePoint> {
        self.flow_step(p, direction)
    }
}

/// `[p0, φ(p0), …, φⁿ(p0)]`, or the backward analogue.
pub fn orbit<M: PhaseMap + ?Sized>(
    map: &M,
    p0: &PhasePoint,
    n_steps: usize,
    direction: Direction,
) -> Result<Vec<PhasePoint>> {
    if n_steps == 0 {
        return Err(DynError::Invalid("orbit needs at least one step".into()));
    }
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(p0.clone());
    for k in 1..=n_steps {
        let next = map.step(&out[k - 1], direction).map_err(|e| match e {
            DynError::Diverged { magnitude, .. } => DynError::Diverged { step: k, magnitude },
            other => other,
        })?;
        out.push(next);
    }
    Ok(out)
}

pub type CustomObservation = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Scalar observation of a phase point.
#[derive(Clone)]
pub enum ObservationFn {
    Coordinate(usize),
    Linear(Vec<f64>),
    Custom(CustomObservation),
}

impl std::fmt::Debug for ObservationFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ObservationFn::Coordinate(i) => write!(f, "Coordinate({i})"),
            ObservationFn::Linear(w) => write!(f, "Linear({w:?})"),
            ObservationFn::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl ObservationFn {
    pub fn custom(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        ObservationFn::Custom(Arc::new(f))
    }

    pub fn constant(value: f64) -> Self {
        Self::custom(move |_| value)
    }

    /// Checks the observation against a phase-space dimension.
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            ObservationFn::Coordinate(i) if *i >= dim => {
                Err(DynError::IndexOutOfRange { index: *i, dim })
            }
            ObservationFn::Linear(w) if w.len() != dim => Err(DynError::DimensionMismatch {
                expected: dim,
                got: w.len(),
            }),
            _ => Ok(()),
        }
    }

    pub fn observe(&self, p: &[f64]) -> Result<f64> {
        match self {
            ObservationFn::Coordinate(i) => p.get(*i).copied().ok_or(DynError::IndexOutOfRange {
                index: *i,
                dim: p.len(),
            }),
            ObservationFn::Linear(w) => {
                if w.len() != p.len() {
                    return Err(DynError::DimensionMismatch {
                        expected: w.len(),
                        got: p.len(),
                    });
                }
                Ok(w.iter().zip(p).map(|(a, b)| a * b).sum())
            }
            ObservationFn::Custom(f) => Ok(f(p)),
        }
    }
}

/// Free-function form of [`ObservationFn::observe`].
pub fn observe(omega: &ObservationFn, p: &PhasePoint) -> Result<f64> {
    omega.observe(p)
}
