//! Linear reservoirs `F(x, z) = A x + C z`: random construction, the
//! drive-response recursion, and the generalized synchronization
//! `f(m) = Σ_j A^j C ω(φ^{-j}(m))` together with its Jacobian.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynsys::{DynError, Direction, ObservationFn, PhaseMap, PhasePoint};
use crate::linalg::{self, DenseMatrix, DenseVector, LinalgError};

/// Tolerance used for the cached spectral-radius estimate.
pub const RHO_TOL: f64 = 1e-10;
/// Normalised draws whose radius lands within this margin of 1 are redrawn.
pub const RHO_MARGIN: f64 = 1e-6;
pub const MAX_REDRAWS: usize = 100;
pub const MAX_TRUNCATION: usize = 10_000;
/// Reservoir states beyond this magnitude are reported as overflow.
pub const STATE_OVERFLOW: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReservoirError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Dynamics(#[from] DynError),
    #[error("construction failed: {0}")]
    Construction(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("reservoir is not contracting: spectral radius estimate {rho_hat} >= 1")]
    NotContracting { rho_hat: f64 },
    #[error("truncation depth exceeds {MAX_TRUNCATION}; use a smaller spectral radius")]
    TruncationCap,
    #[error("backward orbit diverged after {achieved_depth} terms (tail bound {tail_bound:e})")]
    BackwardDivergence { achieved_depth: usize, tail_bound: f64 },
    #[error("reservoir state overflow at step {step}")]
    StateOverflow { step: usize },
    #[error("finite-difference Jacobian is not finite (fd_eps = {fd_eps:e})")]
    NonFiniteJacobian { fd_eps: f64 },
}

pub type Result<T> = std::result::Result<T, ReservoirError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Recipe {
    UniformNormalized,
    HaarScaled { scale: f64 },
    TakensShift,
    Custom,
}

/// A linear state map `x ↦ A x + C z` with its cached spectral radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservoirSystem {
    a: DenseMatrix,
    c: DenseVector,
    rho_hat: f64,
    seed: u64,
    recipe: Recipe,
}

impl ReservoirSystem {
    /// Wraps an explicit `(A, C)` pair and estimates its spectral radius.
    pub fn custom(a: DenseMatrix, c: DenseVector, seed: u64) -> Result<Self> {
        Self::with_recipe(a, c, seed, Recipe::Custom)
    }

    pub(crate) fn with_recipe(a: DenseMatrix, c: DenseVector, seed: u64, recipe: Recipe) -> Result<Self> {
        if !a.is_square() || a.rows() != c.dim() || c.dim() == 0 {
            return Err(ReservoirError::InvalidArgument(format!(
                "A is {}x{} but C has dim {}",
                a.rows(),
                a.cols(),
                c.dim()
            )));
        }
        if !a.is_finite() || !c.is_finite() {
            return Err(ReservoirError::InvalidArgument("non-finite entries".into()));
        }
        let rho_hat = linalg::spectral_radius(&a, RHO_TOL)?;
        Ok(ReservoirSystem {
            a,
            c,
            rho_hat,
            seed,
            recipe,
        })
    }

    pub fn dim(&self) -> usize {
        self.c.dim()
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn c(&self) -> &DenseVector {
        &self.c
    }

    pub fn rho_hat(&self) -> f64 {
        self.rho_hat
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn recipe(&self) -> Recipe {
        self.recipe
    }

    /// `A x + C z`
    pub fn apply(&self, x: &[f64], z: f64) -> DenseVector {
        let mut out = vec![0.0; self.dim()];
        self.a.matvec_into(x, &mut out);
        for (o, c) in out.iter_mut().zip(self.c.iter()) {
            *o += c * z;
        }
        DenseVector::new(out)
    }

    pub fn ensure_contracting(&self) -> Result<()> {
        if self.rho_hat < 1.0 {
            Ok(())
        } else {
            Err(ReservoirError::NotContracting { rho_hat: self.rho_hat })
        }
    }

    /// Geometric tail bound `ρ̂^J ‖C‖ sup|ω| / (1 − ρ̂)` of the truncated series.
    pub fn tail_bound(&self, depth: usize, sup_omega: f64) -> f64 {
        if self.rho_hat == 0.0 {
            return if depth >= self.dim() { 0.0 } else { f64::INFINITY };
        }
        self.rho_hat.powi(depth as i32) * self.c.norm() * sup_omega / (1.0 - self.rho_hat)
    }

    /// Checks the structural invariants and that the cached radius matches a
    /// fresh estimate within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        if !self.a.is_square() || self.a.rows() != self.c.dim() {
            return Err(ReservoirError::InvalidArgument("A and C dimensions disagree".into()));
        }
        if !self.a.is_finite() || !self.c.is_finite() || !self.rho_hat.is_finite() {
            return Err(ReservoirError::InvalidArgument("non-finite entries".into()));
        }
        let fresh = linalg::spectral_radius(&self.a, RHO_TOL)?;
        if (fresh - self.rho_hat).abs() > tol {
            return Err(ReservoirError::InvalidArgument(format!(
                "stored spectral radius {} differs from recomputed {fresh}",
                self.rho_hat
            )));
        }
        Ok(())
    }
}

/// `A = A'/‖A'‖₂` with `A'`, `C` IID uniform on `[-0.5, 0.5]`.
///
/// Draws whose normalised spectral radius is within [`RHO_MARGIN`] of one
/// are rejected; after [`MAX_REDRAWS`] rejections construction fails (this
/// always happens for `n = 1`).
pub fn build_uniform(n: usize, seed: u64) -> Result<ReservoirSystem> {
    if n == 0 {
        return Err(ReservoirError::InvalidArgument("reservoir dimension 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_REDRAWS {
        let raw = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-0.5..=0.5));
        let c = DenseVector::new((0..n).map(|_| rng.random_range(-0.5..=0.5)).collect());
        let norm = linalg::operator_norm(&raw)?;
        if norm == 0.0 {
            continue;
        }
        let a = raw.scaled(1.0 / norm);
        let res = ReservoirSystem::with_recipe(a, c, seed, Recipe::UniformNormalized)?;
        if res.rho_hat < 1.0 - RHO_MARGIN {
            return Ok(res);
        }
    }
    Err(ReservoirError::Construction(format!(
        "no draw with spectral radius below {} after {MAX_REDRAWS} attempts",
        1.0 - RHO_MARGIN
    )))
}

/// `A = scale · A'/‖A'‖₂` with `A'` Haar-orthogonal, `C = C'/‖C'‖₂` with
/// `C'` IID uniform on `[-1, 1]`.
pub fn build_haar(n: usize, scale: f64, seed: u64) -> Result<ReservoirSystem> {
    if n == 0 {
        return Err(ReservoirError::InvalidArgument("reservoir dimension 0".into()));
    }
    if !(scale > 0.0 && scale < 1.0) {
        return Err(ReservoirError::InvalidArgument(format!(
            "scale must lie in (0, 1), got {scale}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = linalg::haar_orthogonal(n, &mut rng)?;
    let norm = linalg::operator_norm(&q)?;
    let a = q.scaled(scale / norm);
    let mut c = DenseVector::zeros(n);
    while c.norm() == 0.0 {
        c = DenseVector::new((0..n).map(|_| rng.random_range(-1.0..=1.0)).collect());
    }
    let c = c.scaled(1.0 / c.norm());
    Ok(ReservoirSystem {
        a,
        c,
        // every eigenvalue of an orthogonal matrix has modulus one
        rho_hat: scale,
        seed,
        recipe: Recipe::HaarScaled { scale },
    })
}

/// Lower shift of size `2q+1` with `C = e₁`: its generalized synchronization
/// is the delay map `(ω(m), ω(φ⁻¹m), …, ω(φ^{-2q}m))`.
pub fn build_takens(q: usize) -> Result<ReservoirSystem> {
    if q == 0 {
        return Err(ReservoirError::InvalidArgument("q must be at least 1".into()));
    }
    let n = 2 * q + 1;
    Ok(ReservoirSystem {
        a: DenseMatrix::lower_shift(n),
        c: DenseVector::unit(n, 0),
        rho_hat: 0.0,
        seed: 0,
        recipe: Recipe::TakensShift,
    })
}

/// Driven reservoir states. `states[t] = A states[t-1] + C inputs[t]`, with
/// `states[0] = A x0 + C inputs[0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateTrajectory {
    pub states: Vec<DenseVector>,
    pub inputs: Vec<f64>,
    pub washout_len: usize,
    pub dt: f64,
}

impl StateTrajectory {
    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn post_washout(&self) -> &[DenseVector] {
        &self.states[self.washout_len..]
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Largest relative residual of the recursion between consecutive states.
    pub fn recursion_residual(&self, res: &ReservoirSystem) -> f64 {
        self.states
            .windows(2)
            .zip(&self.inputs[1..])
            .map(|(w, z)| {
                let predicted = res.apply(&w[0], *z);
                predicted.sub(&w[1]).norm() / (1.0 + w[1].norm())
            })
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.states.len() != self.inputs.len() {
            return Err(format!(
                "{} states but {} inputs",
                self.states.len(),
                self.inputs.len()
            ));
        }
        if self.washout_len >= self.states.len() {
            return Err("washout covers the whole trajectory".into());
        }
        let n = self.states[0].dim();
        if self.states.iter().any(|s| s.dim() != n || !s.is_finite()) {
            return Err("states have inconsistent dimension or non-finite entries".into());
        }
        if self.inputs.iter().any(|z| !z.is_finite()) || !self.dt.is_finite() || self.dt <= 0.0 {
            return Err("non-finite inputs or bad dt".into());
        }
        Ok(())
    }
}

/// Runs the drive-response recursion over `inputs` starting from `x0`
/// (zero when `None`), marking the first `washout_len` states as washout.
pub fn drive(
    res: &ReservoirSystem,
    inputs: &[f64],
    x0: Option<&DenseVector>,
    washout_len: usize,
) -> Result<StateTrajectory> {
    let n = res.dim();
    if washout_len >= inputs.len() {
        return Err(ReservoirError::InvalidArgument(format!(
            "washout {washout_len} must be shorter than the input length {}",
            inputs.len()
        )));
    }
    let mut x = match x0 {
        Some(v) if v.dim() != n => {
            return Err(ReservoirError::InvalidArgument(format!(
                "initial state has dim {} but reservoir has {n}",
                v.dim()
            )))
        }
        Some(v) => v.clone(),
        None => DenseVector::zeros(n),
    };
    let mut states = Vec::with_capacity(inputs.len());
    let mut next = vec![0.0; n];
    for (t, z) in inputs.iter().enumerate() {
        res.a.matvec_into(&x, &mut next);
        for (o, c) in next.iter_mut().zip(res.c.iter()) {
            *o += c * z;
        }
        if next.iter().any(|v| !(v.abs() <= STATE_OVERFLOW)) {
            return Err(ReservoirError::StateOverflow { step: t });
        }
        x = DenseVector::new(next.clone());
        states.push(x.clone());
    }
    Ok(StateTrajectory {
        states,
        inputs: inputs.to_vec(),
        washout_len,
        dt: 1.0,
    })
}

/// Smallest `J ≥ 1` with `ρ̂^J ‖C‖ sup|ω| / (1 − ρ̂) < tol`; `N` for a
/// nilpotent reservoir, whose series terminates.
pub fn effective_truncation(res: &ReservoirSystem, sup_omega: f64, tol: f64) -> Result<usize> {
    res.ensure_contracting()?;
    if !(tol > 0.0) || !(sup_omega >= 0.0) {
        return Err(ReservoirError::InvalidArgument("tol must be positive and sup_omega non-negative".into()));
    }
    if res.rho_hat == 0.0 {
        return Ok(res.dim());
    }
    let scale = res.c.norm() * sup_omega / (1.0 - res.rho_hat);
    let mut bound = scale * res.rho_hat;
    for depth in 1..=MAX_TRUNCATION {
        if bound < tol {
            return Ok(depth);
        }
        bound *= res.rho_hat;
    }
    Err(ReservoirError::TruncationCap)
}

/// `Σ_{j<len} A^j C obs[j]` for a precomputed observation sequence
/// `obs[j] = ω(φ^{-j}(m))`.
pub fn gs_from_observations(res: &ReservoirSystem, obs: &[f64]) -> DenseVector {
    let n = res.dim();
    let mut sum = DenseVector::zeros(n);
    let mut term = res.c.as_slice().to_vec();
    let mut next = vec![0.0; n];
    for (j, z) in obs.iter().enumerate() {
        sum.axpy(*z, &term);
        if j + 1 < obs.len() {
            res.a.matvec_into(&term, &mut next);
            std::mem::swap(&mut term, &mut next);
        }
    }
    sum
}

/// Observations `ω(φ^{-j}(m))`, `j = 0..depth`, along the backward orbit.
pub fn backward_observations<M: PhaseMap + ?Sized>(
    res: &ReservoirSystem,
    map: &M,
    omega: &ObservationFn,
    m: &PhasePoint,
    depth: usize,
) -> Result<Vec<f64>> {
    let mut obs = Vec::with_capacity(depth);
    let mut p = m.clone();
    let mut sup = 0.0f64;
    for j in 0..depth {
        let z = omega.observe(&p)?;
        sup = sup.max(z.abs());
        obs.push(z);
        if j + 1 == depth {
            break;
        }
        p = match map.step(&p, Direction::Backward) {
            Ok(next) => next,
            Err(DynError::Diverged { .. }) => {
                return Err(ReservoirError::BackwardDivergence {
                    achieved_depth: j + 1,
                    tail_bound: res.tail_bound(j + 1, sup),
                })
            }
            Err(e) => return Err(e.into()),
        };
    }
    Ok(obs)
}

/// Generalized synchronization truncated after `depth` terms,
/// `Σ_{j<depth} A^j C ω(φ^{-j}(m))`.
pub fn gs_series<M: PhaseMap + ?Sized>(
    res: &ReservoirSystem,
    map: &M,
    omega: &ObservationFn,
    m: &PhasePoint,
    depth: usize,
) -> Result<DenseVector> {
    res.ensure_contracting()?;
    if depth == 0 {
        return Err(ReservoirError::InvalidArgument("truncation depth must be at least 1".into()));
    }
    if m.dim() != map.dim() {
        return Err(DynError::DimensionMismatch {
            expected: map.dim(),
            got: m.dim(),
        }
        .into());
    }
    let obs = backward_observations(res, map, omega, m, depth)?;
    Ok(gs_from_observations(res, &obs))
}

/// `N×q` Jacobian of the truncated synchronization by central differences
/// with absolute step `fd_eps` in each phase coordinate.
pub fn gs_jacobian<M: PhaseMap + ?Sized>(
    res: &ReservoirSystem,
    map: &M,
    omega: &ObservationFn,
    m: &PhasePoint,
    depth: usize,
    fd_eps: f64,
) -> Result<DenseMatrix> {
    if !(fd_eps > 0.0) {
        return Err(ReservoirError::InvalidArgument(format!("fd_eps must be positive, got {fd_eps}")));
    }
    let q = map.dim();
    let n = res.dim();
    let mut jac = DenseMatrix::zeros(n, q);
    for k in 0..q {
        let mut plus = m.coords().to_vec();
        let mut minus = m.coords().to_vec();
        plus[k] += fd_eps;
        minus[k] -= fd_eps;
        let fp = gs_series(res, map, omega, &PhasePoint::new(plus), depth)?;
        let fm = gs_series(res, map, omega, &PhasePoint::new(minus), depth)?;
        for i in 0..n {
            jac[(i, k)] = (fp[i] - fm[i]) / (2.0 * fd_eps);
        }
    }
    if !jac.is_finite() {
        return Err(ReservoirError::NonFiniteJacobian { fd_eps });
    }
    Ok(jac)
}
