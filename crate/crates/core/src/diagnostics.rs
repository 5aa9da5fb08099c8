//! Computable checks of the embedding hypotheses and their conclusions.
//!
//! Every check returns a [`HypothesisReport`]. Monte Carlo versions of the
//! "almost surely" statements live next to negative controls in the tests so
//! that each suite demonstrably has the power to fail.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynsys::{ObservationFn, PhaseMap, PhasePoint};
use crate::linalg::{self, DenseMatrix, DenseVector, LinalgError};
use crate::reservoir::{self, ReservoirError, ReservoirSystem};

/// Relative contraction an echo-state check must reach to pass.
pub const ESP_REL_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Reservoir(#[from] ReservoirError),
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("bad polynomial specification: {0}")]
    BadPolynomials(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, DiagnosticsError>;

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub check: String,
    pub passed: bool,
    pub statistic: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub details: String,
}

impl HypothesisReport {
    fn new(check: &str, passed: bool, statistic: f64, tolerance: f64, samples: usize, details: String) -> Self {
        HypothesisReport {
            check: check.to_string(),
            passed,
            statistic,
            tolerance,
            samples,
            details,
        }
    }
}

impl fmt::Display for HypothesisReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} statistic={:e} tolerance={:e} samples={} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.check,
            self.statistic,
            self.tolerance,
            self.samples,
            self.details
        )
    }
}

/// Eigenvalue of the period-`n` derivative, possibly complex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

impl Eigenvalue {
    pub fn real(re: f64) -> Self {
        Eigenvalue { re, im: 0.0 }
    }

    pub fn complex(re: f64, im: f64) -> Self {
        Eigenvalue { re, im }
    }

    pub fn modulus(&self) -> f64 {
        self.re.hypot(self.im)
    }
}

fn pivot_ratio(diag: &[f64], k: usize) -> f64 {
    if k == 0 || diag.len() < k || diag[0] == 0.0 {
        return 0.0;
    }
    diag[k - 1] / diag[0]
}

/// Krylov reachability: `{C, AC, …, A^{N-1}C}` linearly independent.
pub fn check_reachability(res: &ReservoirSystem, tol: f64) -> Result<HypothesisReport> {
    let k = linalg::krylov_matrix(res.a(), res.c())?;
    let diag = linalg::pivoted_qr_diagonal(&k)?;
    let rank = linalg::rank_from_diagonal(&diag, tol);
    let n = res.dim();
    Ok(HypothesisReport::new(
        "reachability",
        rank == n,
        pivot_ratio(&diag, n),
        tol,
        1,
        format!("rank {rank} of {n}"),
    ))
}

/// Linear independence of `(I − λ_j Aⁿ)⁻¹ (I − A)⁻¹ (I − Aⁿ) C` over the
/// supplied eigenvalues, computed by direct solves. Complex eigenvalues are
/// handled in realified form; the reported rank is the complex rank.
pub fn check_periodic_independence(
    res: &ReservoirSystem,
    eigenvalues: &[Eigenvalue],
    n: usize,
    tol: f64,
) -> Result<HypothesisReport> {
    if eigenvalues.is_empty() || n == 0 {
        return Err(DiagnosticsError::InvalidArgument(
            "need at least one eigenvalue and a positive period".into(),
        ));
    }
    res.ensure_contracting()?;
    let rho_n = res.rho_hat().powi(n as i32);
    for lam in eigenvalues {
        if lam.modulus() * rho_n >= 1.0 {
            return Err(DiagnosticsError::HypothesisViolated(format!(
                "|λ|·ρ̂ⁿ = {} >= 1 for λ = {:?}",
                lam.modulus() * rho_n,
                lam
            )));
        }
    }
    let dim = res.dim();
    let identity = DenseMatrix::identity(dim);
    let a_n = res.a().pow(n)?;
    let i_minus_a = identity.sub(res.a())?;
    let rhs0 = identity.sub(&a_n)?.matvec(res.c())?;
    let base = linalg::solve(&i_minus_a, &rhs0)?;

    let any_complex = eigenvalues.iter().any(|l| l.im != 0.0);
    let mut columns: Vec<DenseVector> = Vec::new();
    for lam in eigenvalues {
        if !any_complex {
            let m = identity.sub(&a_n.scaled(lam.re))?;
            columns.push(linalg::solve(&m, &base)?);
            continue;
        }
        // [[I − aB, bB], [−bB, I − aB]] [y_r; y_i] = [base; 0]
        let (a, b) = (lam.re, lam.im);
        let big = DenseMatrix::from_fn(2 * dim, 2 * dim, |i, j| {
            let (bi, bj) = (i / dim, j / dim);
            let (ii, jj) = (i % dim, j % dim);
            let id = if ii == jj { 1.0 } else { 0.0 };
            let bn = a_n[(ii, jj)];
            match (bi, bj) {
                (0, 0) | (1, 1) => id - a * bn,
                (0, 1) => b * bn,
                _ => -b * bn,
            }
        });
        let mut rhs = base.as_slice().to_vec();
        rhs.extend(std::iter::repeat_n(0.0, dim));
        let y = linalg::solve(&big, &rhs)?;
        let (yr, yi) = y.split_at(dim);
        let mut first = yr.to_vec();
        first.extend_from_slice(yi);
        let mut second: Vec<f64> = yi.iter().map(|v| -v).collect();
        second.extend_from_slice(yr);
        columns.push(DenseVector::new(first));
        columns.push(DenseVector::new(second));
    }
    let stacked = DenseMatrix::from_columns(&columns)?;
    let diag = linalg::pivoted_qr_diagonal(&stacked)?;
    let real_rank = linalg::rank_from_diagonal(&diag, tol);
    let (rank, ratio_index) = if any_complex {
        (real_rank / 2, 2 * eigenvalues.len())
    } else {
        (real_rank, eigenvalues.len())
    };
    let q = eigenvalues.len();
    let mut details = format!("rank {rank} of {q}, period {n}");
    if rho_n == 0.0 || a_n.max_abs() == 0.0 {
        details.push_str("; Aⁿ = 0 so every vector equals (I−A)⁻¹C and the family degenerates to rank 1");
    }
    Ok(HypothesisReport::new(
        "periodic_independence",
        rank == q,
        pivot_ratio(&diag, ratio_index),
        tol,
        1,
        details,
    ))
}

/// Echo state check: `trials` random initial states driven by the same
/// inputs must contract to within [`ESP_REL_TOL`] of their initial spread.
pub fn check_esp(res: &ReservoirSystem, inputs: &[f64], trials: usize, seed: u64) -> Result<HypothesisReport> {
    if trials < 2 || inputs.is_empty() {
        return Err(DiagnosticsError::InvalidArgument(
            "need at least two trials and one input".into(),
        ));
    }
    let n = res.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts: Vec<DenseVector> = (0..trials)
        .map(|_| DenseVector::new((0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()))
        .collect();
    let mut finals = Vec::with_capacity(trials);
    for x0 in &starts {
        let traj = reservoir::drive(res, inputs, Some(x0), 0)?;
        finals.push(traj.states.last().cloned().expect("non-empty trajectory"));
    }
    let spread = |pts: &[DenseVector]| {
        let mut m = 0.0f64;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                m = m.max(pts[i].sub(&pts[j]).norm());
            }
        }
        m
    };
    // Inputs cancel in the difference of two driven states, so the gap obeys
    // δ_t = A δ_{t-1} exactly. Propagating δ avoids the cancellation floor
    // (about eps·‖x‖) that differencing the driven states runs into.
    let mut statistic = 0.0f64;
    let mut tmp = vec![0.0; n];
    for i in 0..trials {
        for j in i + 1..trials {
            let mut delta = starts[i].sub(&starts[j]).into_inner();
            for _ in 0..inputs.len() {
                res.a().matvec_into(&delta, &mut tmp);
                std::mem::swap(&mut delta, &mut tmp);
            }
            statistic = statistic.max(linalg::norm2(&delta));
        }
    }
    let initial = spread(&starts);
    let driven = spread(&finals);
    let power = res.a().pow(inputs.len())?;
    let bound = linalg::operator_norm(&power)? * initial;
    let tolerance = ESP_REL_TOL * initial;
    let floor = 10.0 * f64::EPSILON * finals.iter().map(|x| x.norm()).fold(0.0, f64::max);
    let mut details = format!(
        "initial spread {initial:e}, ‖A^T‖·spread = {bound:e}, driven-state spread {driven:e} (round-off floor {floor:e}), T = {}",
        inputs.len()
    );
    // A^T underflows for long runs; eps·spread absorbs that
    if statistic > 10.0 * bound + f64::EPSILON * initial || driven > 10.0 * bound + floor {
        details.push_str("; spread exceeds the linear contraction bound");
    }
    Ok(HypothesisReport::new(
        "echo_state_property",
        statistic < tolerance,
        statistic,
        tolerance,
        trials,
        details,
    ))
}

/// Immersion check: the Jacobian of the truncated synchronization has full
/// column rank `q` at every sample.
#[allow(clippy::too_many_arguments)]
pub fn check_immersion_rank<M: PhaseMap + ?Sized>(
    res: &ReservoirSystem,
    map: &M,
    omega: &ObservationFn,
    samples: &[PhasePoint],
    depth: usize,
    fd_eps: f64,
    tol: f64,
) -> Result<HypothesisReport> {
    if samples.is_empty() {
        return Err(DiagnosticsError::InvalidArgument("no samples".into()));
    }
    let q = map.dim();
    let mut min_ratio = f64::INFINITY;
    let mut min_rank = usize::MAX;
    let mut deficient = 0usize;
    for m in samples {
        let jac = reservoir::gs_jacobian(res, map, omega, m, depth, fd_eps)?;
        let diag = linalg::pivoted_qr_diagonal(&jac)?;
        let rank = linalg::rank_from_diagonal(&diag, tol);
        min_rank = min_rank.min(rank);
        min_ratio = min_ratio.min(pivot_ratio(&diag, q));
        if rank < q {
            deficient += 1;
        }
    }
    let mut details = format!("minimum rank {min_rank} of {q}; {deficient} rank-deficient samples");
    if res.dim() < 2 * q + 1 {
        details.push_str(&format!(
            "; warning: N = {} < 2q+1 = {}, outside the embedding hypotheses",
            res.dim(),
            2 * q + 1
        ));
    }
    Ok(HypothesisReport::new(
        "immersion_rank",
        deficient == 0,
        min_ratio,
        tol,
        samples.len(),
        details,
    ))
}

/// False-neighbour injectivity surrogate: every pair whose embedded distance
/// is below `near_tol · embedded diameter` must lie within
/// `far_factor · phase diameter` in phase space.
#[allow(clippy::too_many_arguments)]
pub fn check_injectivity<M: PhaseMap + ?Sized>(
    res: &ReservoirSystem,
    map: &M,
    omega: &ObservationFn,
    samples: &[PhasePoint],
    depth: usize,
    near_tol: f64,
    far_factor: f64,
) -> Result<HypothesisReport> {
    let embedded = samples
        .iter()
        .map(|m| reservoir::gs_series(res, map, omega, m, depth))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(false_neighbor_report(samples, &embedded, near_tol, far_factor))
}

/// The pairwise statistic behind [`check_injectivity`], for callers that
/// already hold embedded points.
pub fn false_neighbor_report(
    samples: &[PhasePoint],
    embedded: &[DenseVector],
    near_tol: f64,
    far_factor: f64,
) -> HypothesisReport {
    let count = samples.len();
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    };
    let mut emb_diam = 0.0f64;
    let mut phase_diam = 0.0f64;
    for i in 0..count {
        for j in i + 1..count {
            emb_diam = emb_diam.max(dist(&embedded[i], &embedded[j]));
            phase_diam = phase_diam.max(dist(&samples[i], &samples[j]));
        }
    }
    let near = near_tol * emb_diam;
    let far = far_factor * phase_diam;
    let mut near_pairs = 0usize;
    let mut violations = 0usize;
    let mut worst = 0.0f64;
    for i in 0..count {
        for j in i + 1..count {
            let de = dist(&embedded[i], &embedded[j]);
            if de > near {
                continue;
            }
            let dp = dist(&samples[i], &samples[j]);
            if de == 0.0 && dp == 0.0 {
                continue;
            }
            near_pairs += 1;
            let ratio = if de == 0.0 { f64::MAX } else { dp / de };
            worst = worst.max(ratio);
            if dp >= far {
                violations += 1;
            }
        }
    }
    let collapsed = emb_diam == 0.0 && phase_diam > 0.0;
    if collapsed {
        violations = violations.max(1);
        worst = f64::MAX;
    }
    HypothesisReport::new(
        "injectivity",
        violations == 0,
        worst,
        near_tol,
        count,
        format!(
            "{near_pairs} near pairs, {violations} false neighbours; embedded diameter {emb_diam:e}, phase diameter {phase_diam:e}, far factor {far_factor}"
        ),
    )
}

/// Polynomial given by coefficients in increasing degree.
pub type Polynomial = Vec<f64>;

/// `p(A) C` by Horner's rule.
pub fn polynomial_apply(p: &[f64], a: &DenseMatrix, c: &[f64]) -> DenseVector {
    let n = c.len();
    let mut acc = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    for coef in p.iter().rev() {
        a.matvec_into(&acc, &mut tmp);
        for i in 0..n {
            acc[i] = tmp[i] + coef * c[i];
        }
    }
    DenseVector::new(acc)
}

/// Monte Carlo test that `p_1(A)C, …, p_k(A)C` are independent for random
/// `(A, C)` with IID uniform entries on `[-0.5, 0.5]`.
///
/// Degree and count violations are errors. Linearly dependent polynomials
/// are accepted and simply make every draw fail, which is how the negative
/// control is expressed.
pub fn monte_carlo_lemma_a3(
    n: usize,
    polynomials: &[Polynomial],
    draws: usize,
    seed: u64,
    tol: f64,
) -> Result<HypothesisReport> {
    if n == 0 || draws == 0 {
        return Err(DiagnosticsError::InvalidArgument("dimension and draws must be positive".into()));
    }
    if polynomials.is_empty() || polynomials.len() > n {
        return Err(DiagnosticsError::BadPolynomials(format!(
            "{} polynomials for dimension {n}",
            polynomials.len()
        )));
    }
    for (i, p) in polynomials.iter().enumerate() {
        let degree = p.iter().rposition(|c| *c != 0.0);
        match degree {
            None => return Err(DiagnosticsError::BadPolynomials(format!("polynomial {i} is zero"))),
            Some(d) if d >= n => {
                return Err(DiagnosticsError::BadPolynomials(format!(
                    "polynomial {i} has degree {d} > N-1 = {}",
                    n - 1
                )))
            }
            _ => {}
        }
        if p.iter().any(|c| !c.is_finite()) {
            return Err(DiagnosticsError::BadPolynomials(format!("polynomial {i} has non-finite coefficients")));
        }
    }
    let coeff = DenseMatrix::from_fn(n, polynomials.len(), |i, j| polynomials[j].get(i).copied().unwrap_or(0.0));
    let coeff_rank = linalg::numerical_rank(&coeff, tol)?;

    let k = polynomials.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut full = 0usize;
    let mut worst = f64::INFINITY;
    for _ in 0..draws {
        let a = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-0.5..=0.5));
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..=0.5)).collect();
        let cols: Vec<DenseVector> = polynomials.iter().map(|p| polynomial_apply(p, &a, &c)).collect();
        let m = DenseMatrix::from_columns(&cols)?;
        let diag = linalg::pivoted_qr_diagonal(&m)?;
        if linalg::rank_from_diagonal(&diag, tol) == k {
            full += 1;
        }
        worst = worst.min(pivot_ratio(&diag, k));
    }
    let mut details = format!("{full}/{draws} draws full rank {k}");
    if coeff_rank < k {
        details.push_str(&format!("; polynomials are dependent (coefficient rank {coeff_rank})"));
    }
    Ok(HypothesisReport::new(
        "lemma_a3_independence",
        full == draws,
        worst,
        tol,
        draws,
        details,
    ))
}

/// Reachability over `draws` uniform-normalized reservoirs with seeds
/// `seed, seed+1, …`.
pub fn monte_carlo_reachability(n: usize, draws: usize, seed: u64, tol: f64) -> Result<HypothesisReport> {
    let mut passes = 0usize;
    let mut worst = f64::INFINITY;
    for d in 0..draws as u64 {
        let res = reservoir::build_uniform(n, seed.wrapping_add(d))?;
        let r = check_reachability(&res, tol)?;
        passes += r.passed as usize;
        worst = worst.min(r.statistic);
    }
    Ok(HypothesisReport::new(
        "reachability_monte_carlo",
        passes == draws,
        worst,
        tol,
        draws,
        format!("{passes}/{draws} draws full rank at N = {n}"),
    ))
}

/// Periodic independence over `draws` uniform-normalized reservoirs.
pub fn monte_carlo_periodic_independence(
    n: usize,
    eigenvalues: &[Eigenvalue],
    period: usize,
    draws: usize,
    seed: u64,
    tol: f64,
) -> Result<HypothesisReport> {
    let mut passes = 0usize;
    let mut worst = f64::INFINITY;
    for d in 0..draws as u64 {
        let res = reservoir::build_uniform(n, seed.wrapping_add(d))?;
        let r = check_periodic_independence(&res, eigenvalues, period, tol)?;
        passes += r.passed as usize;
        worst = worst.min(r.statistic);
    }
    Ok(HypothesisReport::new(
        "periodic_independence_monte_carlo",
        passes == draws,
        worst,
        tol,
        draws,
        format!("{passes}/{draws} draws independent at N = {n}, period {period}"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{orbit, Direction, DynamicalSystem};
    use crate::linalg::DEFAULT_RANK_TOL;
    use crate::reservoir::{build_haar, build_takens, build_uniform};

    fn random_invertible(n: usize, seed: u64) -> (DenseMatrix, DenseMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let p = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let cols: Option<Vec<DenseVector>> =
                (0..n).map(|j| linalg::solve(&p, &DenseVector::unit(n, j)).ok()).collect();
            if let Some(cols) = cols {
                return (p, DenseMatrix::from_columns(&cols).unwrap());
            }
        }
    }

    fn conjugate(res: &ReservoirSystem, seed: u64) -> ReservoirSystem {
        let n = res.dim();
        let (p, p_inv) = random_invertible(n, seed);
        let a = p.matmul(res.a()).unwrap().matmul(&p_inv).unwrap();
        let c = p.matvec(res.c()).unwrap();
        ReservoirSystem::custom(a, c, 0).unwrap()
    }

    fn lorenz_samples(count: usize, stride: usize) -> Vec<PhasePoint> {
        let traj = orbit(
            &DynamicalSystem::lorenz(),
            &PhasePoint::new(vec![0.0, 1.0, 1.05]),
            2000 + count * stride,
            Direction::Forward,
        )
        .unwrap();
        traj[2000..].iter().step_by(stride).take(count).cloned().collect()
    }

    #[test]
    fn reachability_examples() {
        let t = check_reachability(&build_takens(2).unwrap(), DEFAULT_RANK_TOL).unwrap();
        assert!(t.passed);
        assert_eq!(t.statistic, 1.0);
        let zero = ReservoirSystem::custom(DenseMatrix::zeros(2, 2), DenseVector::unit(2, 0), 0).unwrap();
        let z = check_reachability(&zero, DEFAULT_RANK_TOL).unwrap();
        assert!(!z.passed);
        assert!(z.details.contains("rank 1"));
    }

    #[test]
    fn reachability_monte_carlo_n7() {
        let r = monte_carlo_reachability(7, 200, 1000, DEFAULT_RANK_TOL).unwrap();
        assert!(r.passed, "{r}");
    }

    #[test]
    fn reachability_invariant_under_isomorphism() {
        for seed in 0..10 {
            let res = build_uniform(6, seed).unwrap();
            let conj = conjugate(&res, 100 + seed);
            assert_eq!(
                check_reachability(&res, DEFAULT_RANK_TOL).unwrap().passed,
                check_reachability(&conj, DEFAULT_RANK_TOL).unwrap().passed
            );
        }
        let degenerate = ReservoirSystem::custom(DenseMatrix::identity(3).scaled(0.5), DenseVector::unit(3, 1), 0).unwrap();
        let conj = conjugate(&degenerate, 7);
        assert!(!check_reachability(&degenerate, DEFAULT_RANK_TOL).unwrap().passed);
        assert!(!check_reachability(&conj, DEFAULT_RANK_TOL).unwrap().passed);
    }

    #[test]
    fn periodic_independence_examples() {
        let lams = [Eigenvalue::real(0.3), Eigenvalue::real(-0.2), Eigenvalue::real(0.5)];
        // Takens with n >= N: Aⁿ = 0, all vectors coincide
        let t = build_takens(1).unwrap();
        let rep = check_periodic_independence(&t, &lams, 3, DEFAULT_RANK_TOL).unwrap();
        assert!(!rep.passed);
        assert!(rep.details.contains("rank 1"));
        assert!(rep.details.contains("degenerates"));
        let single = check_periodic_independence(&t, &lams[..1], 3, DEFAULT_RANK_TOL).unwrap();
        assert!(single.passed);

        let res = build_uniform(7, 3).unwrap();
        assert!(check_periodic_independence(&res, &lams[..1], 2, DEFAULT_RANK_TOL).unwrap().passed);
        assert!(check_periodic_independence(&res, &lams, 2, DEFAULT_RANK_TOL).unwrap().passed);

        let huge = [Eigenvalue::real(1e6)];
        assert!(matches!(
            check_periodic_independence(&res, &huge, 1, DEFAULT_RANK_TOL),
            Err(DiagnosticsError::HypothesisViolated(_))
        ));
    }

    #[test]
    fn periodic_independence_monte_carlo_n7() {
        let lams = [Eigenvalue::real(0.3), Eigenvalue::real(-0.2), Eigenvalue::real(0.5)];
        let r = monte_carlo_periodic_independence(7, &lams, 2, 200, 5000, DEFAULT_RANK_TOL).unwrap();
        assert!(r.passed, "{r}");
    }

    #[test]
    fn periodic_independence_complex_pair() {
        let res = build_uniform(7, 8).unwrap();
        let lams = [Eigenvalue::complex(0.4, 0.3), Eigenvalue::complex(0.4, -0.3), Eigenvalue::real(0.1)];
        let rep = check_periodic_independence(&res, &lams, 2, DEFAULT_RANK_TOL).unwrap();
        assert!(rep.passed, "{rep}");
        // repeating an eigenvalue must drop the rank
        let dup = [Eigenvalue::complex(0.4, 0.3), Eigenvalue::complex(0.4, 0.3)];
        let rep = check_periodic_independence(&res, &dup, 2, DEFAULT_RANK_TOL).unwrap();
        assert!(!rep.passed, "{rep}");
    }

    #[test]
    fn periodic_independence_invariant_under_isomorphism() {
        let lams = [Eigenvalue::real(0.3), Eigenvalue::real(-0.2), Eigenvalue::real(0.5)];
        for seed in 0..10 {
            let res = build_uniform(5, seed).unwrap();
            let conj = conjugate(&res, 50 + seed);
            let a = check_periodic_independence(&res, &lams, 2, DEFAULT_RANK_TOL).unwrap();
            let b = check_periodic_independence(&conj, &lams, 2, DEFAULT_RANK_TOL).unwrap();
            assert_eq!(a.passed, b.passed);
        }
    }

    #[test]
    fn esp_examples() {
        let inputs: Vec<f64> = (0..1000).map(|t| (t as f64 * 0.05).sin() * 10.0).collect();
        let r = build_haar(20, 0.9, 1).unwrap();
        let rep = check_esp(&r, &inputs, 2, 9).unwrap();
        assert!(rep.passed, "{rep}");
        assert!(rep.statistic < 1e-18);
        assert!(!rep.details.contains("exceeds"));

        let t = build_takens(3).unwrap();
        let rep = check_esp(&t, &inputs[..7], 4, 9).unwrap();
        assert!(rep.passed);
        assert_eq!(rep.statistic, 0.0);

        let slow = build_haar(20, 0.999, 1).unwrap();
        let rep = check_esp(&slow, &inputs[..100], 2, 9).unwrap();
        assert!(!rep.passed);
        assert!(rep.details.contains("initial spread"));
    }

    #[test]
    fn immersion_examples() {
        let lorenz = DynamicalSystem::lorenz();
        let samples = lorenz_samples(50, 20);
        let res = build_uniform(7, 0).unwrap();
        let rep = check_immersion_rank(&res, &lorenz, &ObservationFn::Coordinate(0), &samples, 39, 1e-6, 1e-8).unwrap();
        assert!(rep.passed, "{rep}");
        assert!(!rep.details.contains("warning"));

        let rep = check_immersion_rank(&res, &lorenz, &ObservationFn::constant(1.0), &samples[..5], 39, 1e-6, 1e-8)
            .unwrap();
        assert!(!rep.passed);
        assert!(rep.details.contains("minimum rank 0"));

        let small = build_haar(2, 0.5, 3).unwrap();
        let rep = check_immersion_rank(&small, &lorenz, &ObservationFn::Coordinate(0), &samples[..5], 30, 1e-6, 1e-8)
            .unwrap();
        assert!(!rep.passed);
        assert!(rep.details.contains("warning"));
    }

    #[test]
    fn injectivity_examples() {
        // 1-D rotation-free map with identity observation: the delay map is injective
        struct Shrink;
        impl PhaseMap for Shrink {
            fn dim(&self) -> usize {
                1
            }
            fn step(&self, p: &PhasePoint, d: Direction) -> crate::dynsys::Result<PhasePoint> {
                let f = if d == Direction::Forward { 0.5 } else { 2.0 };
                Ok(PhasePoint::new(vec![p[0] * f]))
            }
        }
        let samples: Vec<PhasePoint> = (0..100).map(|i| PhasePoint::new(vec![i as f64 / 100.0])).collect();
        let t = build_takens(1).unwrap();
        let rep = check_injectivity(&t, &Shrink, &ObservationFn::Coordinate(0), &samples, 3, 1e-3, 0.05).unwrap();
        assert!(rep.passed, "{rep}");

        let lorenz = DynamicalSystem::lorenz();
        let samples = lorenz_samples(100, 7);
        let collapsed = ReservoirSystem::custom(
            build_uniform(7, 1).unwrap().a().clone(),
            DenseVector::zeros(7),
            0,
        )
        .unwrap();
        let rep = check_injectivity(&collapsed, &lorenz, &ObservationFn::Coordinate(0), &samples, 20, 1e-3, 0.05).unwrap();
        assert!(!rep.passed);
    }

    #[test]
    fn lemma_a3_examples() {
        let monomials: Vec<Polynomial> = (0..5).map(|j| {
            let mut p = vec![0.0; j + 1];
            p[j] = 1.0;
            p
        }).collect();
        assert!(monte_carlo_lemma_a3(5, &monomials, 200, 1, DEFAULT_RANK_TOL).unwrap().passed);

        let dependent: Vec<Polynomial> = vec![vec![1.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let rep = monte_carlo_lemma_a3(5, &dependent, 50, 1, DEFAULT_RANK_TOL).unwrap();
        assert!(!rep.passed);
        assert!(rep.details.contains("dependent"));

        // Chebyshev T0..T4
        let cheb: Vec<Polynomial> = vec![
            vec![1.0],
            vec![0.0, 1.0],
            vec![-1.0, 0.0, 2.0],
            vec![0.0, -3.0, 0.0, 4.0],
            vec![1.0, 0.0, -8.0, 0.0, 8.0],
        ];
        let rep = monte_carlo_lemma_a3(5, &cheb, 500, 2, DEFAULT_RANK_TOL).unwrap();
        assert!(rep.passed, "{rep}");

        assert!(monte_carlo_lemma_a3(3, &[vec![0.0, 0.0, 0.0, 1.0]], 10, 1, 1e-10).is_err());
        assert!(monte_carlo_lemma_a3(1, &[vec![1.0], vec![2.0]], 10, 1, 1e-10).is_err());
        assert!(monte_carlo_lemma_a3(3, &[vec![0.0]], 10, 1, 1e-10).is_err());
    }

    #[test]
    fn polynomial_apply_matches_explicit_powers() {
        let res = build_uniform(4, 2).unwrap();
        let p = [0.5, -1.0, 2.0];
        let got = polynomial_apply(&p, res.a(), res.c());
        let a2 = res.a().pow(2).unwrap();
        let mut expected = res.c().scaled(0.5);
        expected.axpy(-1.0, &res.a().matvec(res.c()).unwrap());
        expected.axpy(2.0, &a2.matvec(res.c()).unwrap());
        assert!(got.sub(&expected).max_abs() < 1e-14);
    }

    #[test]
    fn reports_are_deterministic_and_serialize() {
        let a = monte_carlo_reachability(5, 20, 3, DEFAULT_RANK_TOL).unwrap();
        let b = monte_carlo_reachability(5, 20, 3, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(a, b);
        let json = serde_json::to_value(&a).unwrap();
        for key in ["check", "passed", "statistic", "tolerance", "samples", "details"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        assert!(a.to_string().starts_with("PASS reachability_monte_carlo"));
    }
}
