//! Ambiguity sets, scenario processes, path simulation, and realized
//! quadratic variation.
//!
//! A *scenario* is one admissible hypothesis `(mu_t, sigma_t)` about the
//! drift and volatility of the driving process, piecewise-constant per time
//! step. An [`AmbiguitySpec`] is the set of hypotheses the agent entertains;
//! a scenario claims membership and a validator checks the claim on the grid.
//! Simulation is an Euler discretization of `dX = mu dt + sigma dW` with one
//! counter-derived random stream per path, so path `k` is reproducible
//! independently of how many paths are drawn and of thread count.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// The set of admissible volatility values: an interval in one dimension, or
/// a finite candidate family of `d x d` matrices in higher dimensions.
///
/// Engines only ever need extreme points (sup/inf of linear functionals of
/// `sigma sigma^T` are attained at extreme candidates), so a finite family
/// loses nothing at desk scale.
#[derive(Debug, Clone)]
pub enum VolatilitySet {
    Interval {
        sigma_lo: f64,
        sigma_hi: f64,
    },
    MatrixFamily {
        candidates: Vec<DMatrix<f64>>,
        /// Smallest eigenvalue of the configured positive-definite floor
        /// `a_hat`; every candidate must satisfy `sigma sigma^T >= a_hat`.
        a_hat_floor: f64,
    },
}

impl VolatilitySet {
    /// One-dimensional interval `[sigma_lo, sigma_hi]`, `0 < lo <= hi`.
    pub fn interval(sigma_lo: f64, sigma_hi: f64) -> Result<Self> {
        if !(sigma_lo.is_finite() && sigma_hi.is_finite()) || sigma_lo <= 0.0 || sigma_lo > sigma_hi
        {
            return Err(Error::InvalidConfig(format!(
                "volatility interval requires 0 < lo <= hi, got [{sigma_lo}, {sigma_hi}]"
            )));
        }
        Ok(Self::Interval { sigma_lo, sigma_hi })
    }

    /// Finite family of `d x d` candidates, each satisfying
    /// `sigma sigma^T >= a_hat` for the given positive-definite `a_hat`.
    pub fn matrix_family(candidates: Vec<DMatrix<f64>>, a_hat: &DMatrix<f64>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::InvalidConfig(
                "matrix-family volatility set needs at least one candidate".into(),
            ));
        }
        let d = a_hat.nrows();
        if a_hat.ncols() != d {
            return Err(Error::InvalidConfig("a_hat must be square".into()));
        }
        let floor = smallest_symmetric_eigenvalue(a_hat);
        if !(floor > 0.0) {
            return Err(Error::InvalidConfig(
                "a_hat must be positive definite".into(),
            ));
        }
        for (i, sigma) in candidates.iter().enumerate() {
            if sigma.nrows() != d || sigma.ncols() != d {
                return Err(Error::InvalidConfig(format!(
                    "candidate {i} is not {d} x {d}"
                )));
            }
            let gram = sigma * sigma.transpose();
            let lambda_min = smallest_symmetric_eigenvalue(&gram);
            if lambda_min + 1e-12 < floor {
                return Err(Error::InvalidConfig(format!(
                    "candidate {i} violates sigma sigma^T >= a_hat \
                     (min eigenvalue {lambda_min:.6e} < floor {floor:.6e})"
                )));
            }
        }
        Ok(Self::MatrixFamily {
            candidates,
            a_hat_floor: floor,
        })
    }

    pub fn dimension(&self) -> usize {
        match self {
            Self::Interval { .. } => 1,
            Self::MatrixFamily { candidates, .. } => candidates[0].nrows(),
        }
    }

    /// Interval bounds; for a matrix family, the square roots of the extreme
    /// traces of `sigma sigma^T` (the bounds relevant for trace functionals).
    pub fn scalar_bounds(&self) -> (f64, f64) {
        match self {
            Self::Interval { sigma_lo, sigma_hi } => (*sigma_lo, *sigma_hi),
            Self::MatrixFamily { candidates, .. } => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for c in candidates {
                    let tr = (c * c.transpose()).trace();
                    lo = lo.min(tr);
                    hi = hi.max(tr);
                }
                (lo.sqrt(), hi.sqrt())
            }
        }
    }

    /// Does the scalar volatility `sigma` lie in the set (interval kind only)?
    pub fn contains_scalar(&self, sigma: f64, tol: f64) -> bool {
        match self {
            Self::Interval { sigma_lo, sigma_hi } => {
                sigma >= sigma_lo - tol && sigma <= sigma_hi + tol
            }
            Self::MatrixFamily { candidates, .. } => candidates
                .iter()
                .any(|c| c.nrows() == 1 && (c[(0, 0)] - sigma).abs() <= tol),
        }
    }

    /// Membership of a volatility matrix, up to `tol` entrywise.
    pub fn contains(&self, sigma: &DMatrix<f64>, tol: f64) -> bool {
        match self {
            Self::Interval { .. } => {
                sigma.nrows() == 1 && sigma.ncols() == 1 && self.contains_scalar(sigma[(0, 0)], tol)
            }
            Self::MatrixFamily { candidates, .. } => candidates
                .iter()
                .any(|c| c.shape() == sigma.shape() && (c - sigma).abs().max() <= tol),
        }
    }
}

fn smallest_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |acc, &x| acc.min(x))
}

/// Parameters of the linked drift-volatility family
/// `mu = mu_min + z`, `sigma^2 = sigma_min^2 + 2 z / gamma`, `0 <= z <= z_bar`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointParams {
    pub mu_min: f64,
    pub sigma_min_sq: f64,
    pub gamma: f64,
    pub z_bar: f64,
}

impl JointParams {
    pub fn new(mu_min: f64, sigma_min_sq: f64, gamma: f64, z_bar: f64) -> Result<Self> {
        if !(sigma_min_sq > 0.0 && gamma > 0.0 && z_bar >= 0.0) {
            return Err(Error::InvalidConfig(
                "joint family requires sigma_min^2 > 0, gamma > 0, z_bar >= 0".into(),
            ));
        }
        Ok(Self {
            mu_min,
            sigma_min_sq,
            gamma,
            z_bar,
        })
    }

    /// The (mu, sigma) pair generated by mixing weight `z in [0, z_bar]`.
    pub fn pair(&self, z: f64) -> (f64, f64) {
        let mu = self.mu_min + z;
        let sigma_sq = self.sigma_min_sq + 2.0 * z / self.gamma;
        (mu, sigma_sq.sqrt())
    }

    fn contains(&self, mu: f64, sigma: f64, tol: f64) -> bool {
        let z = mu - self.mu_min;
        if z < -tol || z > self.z_bar + tol {
            return false;
        }
        let sigma_sq = self.sigma_min_sq + 2.0 * z / self.gamma;
        (sigma * sigma - sigma_sq).abs() <= tol * (1.0 + sigma_sq)
    }
}

type DriftBoundsFn = dyn Fn(f64, &DVector<f64>) -> (DVector<f64>, DVector<f64>) + Send + Sync;
type VolSetFn = dyn Fn(f64, &DVector<f64>) -> VolatilitySet + Send + Sync;

/// The agent's set of admissible drift/volatility hypotheses, as
/// state-dependent set-valued maps evaluated on the grid.
///
/// The built-in constructors ignore the state argument (bounds constant or
/// time-dependent); the callback signature carries it so state-dependent
/// bound rules can be plugged in. The validator enforces boundedness and
/// membership on the grid only.
#[derive(Clone)]
pub struct AmbiguitySpec {
    dim: usize,
    drift_set: Arc<DriftBoundsFn>,
    vol_set: Arc<VolSetFn>,
    pub joint_params: Option<JointParams>,
}

impl std::fmt::Debug for AmbiguitySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AmbiguitySpec")
            .field("dim", &self.dim)
            .field("joint_params", &self.joint_params)
            .finish_non_exhaustive()
    }
}

impl AmbiguitySpec {
    pub fn new(
        dim: usize,
        drift_set: Arc<DriftBoundsFn>,
        vol_set: Arc<VolSetFn>,
        joint_params: Option<JointParams>,
    ) -> Self {
        Self {
            dim,
            drift_set,
            vol_set,
            joint_params,
        }
    }

    /// Constant one-dimensional bounds `mu in [mu_lo, mu_hi]`, `sigma in vol`.
    pub fn constant_1d(mu_lo: f64, mu_hi: f64, vol: VolatilitySet) -> Self {
        Self::new(
            1,
            Arc::new(move |_, _| (DVector::from_element(1, mu_lo), DVector::from_element(1, mu_hi))),
            Arc::new(move |_, _| vol.clone()),
            None,
        )
    }

    /// The linked drift-volatility family: drift and volatility move together
    /// through a common factor `z`.
    pub fn from_joint(params: JointParams) -> Self {
        let (mu_lo, _) = params.pair(0.0);
        let (mu_hi, sigma_hi) = params.pair(params.z_bar);
        let sigma_lo = params.sigma_min_sq.sqrt();
        Self::new(
            1,
            Arc::new(move |_, _| (DVector::from_element(1, mu_lo), DVector::from_element(1, mu_hi))),
            Arc::new(move |_, _| VolatilitySet::Interval {
                sigma_lo,
                sigma_hi: sigma_hi.max(sigma_lo),
            }),
            Some(params),
        )
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn drift_bounds(&self, t: f64, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (self.drift_set)(t, x)
    }

    pub fn vol_set(&self, t: f64, x: &DVector<f64>) -> VolatilitySet {
        (self.vol_set)(t, x)
    }

    /// Membership of one `(mu, sigma)` pair at `(t, x)`, up to `tol`.
    pub fn contains(&self, t: f64, x: &DVector<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>, tol: f64) -> bool {
        if let Some(joint) = &self.joint_params {
            return mu.len() == 1
                && sigma.nrows() == 1
                && joint.contains(mu[0], sigma[(0, 0)], tol);
        }
        let (lo, hi) = self.drift_bounds(t, x);
        if mu.len() != lo.len() {
            return false;
        }
        for i in 0..mu.len() {
            if mu[i] < lo[i] - tol || mu[i] > hi[i] + tol {
                return false;
            }
        }
        self.vol_set(t, x).contains(sigma, tol)
    }

    /// Check every step of a scenario against this set. Bounds are evaluated
    /// at the origin state; built-in specs are state-independent.
    pub fn validate_scenario(&self, scenario: &ScenarioProcess) -> Result<()> {
        if scenario.dim() != self.dim {
            return Err(Error::InvalidScenario(format!(
                "scenario dimension {} does not match ambiguity set dimension {}",
                scenario.dim(),
                self.dim
            )));
        }
        let origin = DVector::zeros(self.dim);
        for k in 0..scenario.n_steps() {
            let t = scenario.times[k];
            if !self.contains(t, &origin, &scenario.mu[k], &scenario.sigma[k], 1e-9) {
                return Err(Error::InvalidScenario(format!(
                    "step {k} (t = {t}): (mu, sigma) outside the ambiguity set"
                )));
            }
        }
        Ok(())
    }
}

/// One admissible hypothesis `theta = (mu_t, sigma_t)`, piecewise-constant
/// per step of its time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioProcess {
    /// Increasing grid `0 = t_0 < ... < t_n = T`, in years.
    pub times: Vec<f64>,
    /// Drift per step (`n` entries).
    pub mu: Vec<DVector<f64>>,
    /// Volatility per step (`n` entries of `d x d` matrices).
    pub sigma: Vec<DMatrix<f64>>,
}

impl ScenarioProcess {
    pub fn new(times: Vec<f64>, mu: Vec<DVector<f64>>, sigma: Vec<DMatrix<f64>>) -> Result<Self> {
        validate_time_grid(&times)?;
        let n = times.len() - 1;
        if mu.len() != n || sigma.len() != n {
            return Err(Error::InvalidScenario(format!(
                "expected {n} drift and volatility entries for {n} steps, got {} and {}",
                mu.len(),
                sigma.len()
            )));
        }
        let d = mu[0].len();
        for (k, (m, s)) in mu.iter().zip(&sigma).enumerate() {
            if m.len() != d || s.nrows() != d || s.ncols() != d {
                return Err(Error::InvalidScenario(format!(
                    "step {k}: inconsistent dimensions"
                )));
            }
            if m.iter().any(|v| !v.is_finite()) || s.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidScenario(format!(
                    "step {k}: non-finite drift or volatility"
                )));
            }
        }
        Ok(Self { times, mu, sigma })
    }

    /// Uniform-grid scalar scenario with constant drift and volatility.
    pub fn constant_1d(mu: f64, sigma: f64, t_max: f64, n_steps: usize) -> Result<Self> {
        Self::piecewise_1d(uniform_grid(t_max, n_steps)?, vec![mu; n_steps], vec![sigma; n_steps])
    }

    /// Scalar scenario from per-step drift and volatility sequences.
    pub fn piecewise_1d(times: Vec<f64>, mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let mu = mu.into_iter().map(|m| DVector::from_element(1, m)).collect();
        let sigma = sigma
            .into_iter()
            .map(|s| DMatrix::from_element(1, 1, s))
            .collect();
        Self::new(times, mu, sigma)
    }

    pub fn dim(&self) -> usize {
        self.mu[0].len()
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn maturity(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn dt(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    /// Per-step quadratic-variation density `v_k = sigma_k sigma_k^T`.
    pub fn v(&self, k: usize) -> DMatrix<f64> {
        &self.sigma[k] * self.sigma[k].transpose()
    }

    /// Scalar volatility at step `k` (one-dimensional scenarios).
    pub fn sigma_scalar(&self, k: usize) -> f64 {
        self.sigma[k][(0, 0)]
    }
}

/// One simulated trajectory of the driving process, starting at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub times: Vec<f64>,
    pub values: Vec<DVector<f64>>,
    pub seed: u64,
}

impl SamplePath {
    pub fn from_values(times: Vec<f64>, values: Vec<DVector<f64>>, seed: u64) -> Result<Self> {
        validate_time_grid(&times)?;
        if values.len() != times.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} grid points",
                values.len(),
                times.len()
            )));
        }
        if values[0].iter().any(|&v| v != 0.0) {
            return Err(Error::InvalidScenario(
                "paths on the canonical state space start at the origin".into(),
            ));
        }
        Ok(Self { times, values, seed })
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Increment `X_{t_{k+1}} - X_{t_k}`.
    pub fn increment(&self, k: usize) -> DVector<f64> {
        &self.values[k + 1] - &self.values[k]
    }

    /// Terminal value for one-dimensional paths.
    pub fn terminal_scalar(&self) -> f64 {
        self.values.last().unwrap()[0]
    }
}

/// Pathwise quadratic variation `<B>` on a grid, with its per-step density.
#[derive(Debug, Clone)]
pub struct QuadraticVariation {
    pub times: Vec<f64>,
    /// Running quadratic variation, `qv[0] = 0`, one `d x d` matrix per grid point.
    pub qv: Vec<DMatrix<f64>>,
    /// Per-step density `(dX)(dX)^T / dt`, one entry per step.
    pub density: Vec<DMatrix<f64>>,
}

impl QuadraticVariation {
    /// Terminal total variation (trace) for scalar paths.
    pub fn terminal_scalar(&self) -> f64 {
        self.qv.last().unwrap()[(0, 0)]
    }
}

/// Euler simulation of `dX = mu dt + sigma dW` under one scenario.
///
/// Path `k` draws from stream `k` of a counter-based generator seeded by the
/// master seed, so results are bit-reproducible across runs and thread
/// counts, and path `k` does not depend on `n_paths`.
pub fn simulate_scenario(
    spec: &ScenarioProcess,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<SamplePath>> {
    if n_paths == 0 {
        return Err(Error::InvalidConfig("n_paths must be at least 1".into()));
    }
    (0..n_paths)
        .into_par_iter()
        .map(|k| simulate_one(spec, seed, k as u64))
        .collect()
}

fn simulate_one(spec: &ScenarioProcess, seed: u64, stream: u64) -> Result<SamplePath> {
    let d = spec.dim();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut values = Vec::with_capacity(spec.times.len());
    values.push(DVector::zeros(d));
    let mut x = DVector::zeros(d);
    for k in 0..spec.n_steps() {
        let dt = spec.dt(k);
        let sqrt_dt = dt.sqrt();
        let dw = DVector::from_fn(d, |_, _| {
            let z: f64 = rng.sample(StandardNormal);
            z * sqrt_dt
        });
        x += &spec.mu[k] * dt + &spec.sigma[k] * dw;
        values.push(x.clone());
    }
    SamplePath::from_values(spec.times.clone(), values, seed)
}

/// Realized quadratic variation of a path: running sums of increment outer
/// products, densities per step.
pub fn realized_qv(path: &SamplePath) -> QuadraticVariation {
    let d = path.dim();
    let mut qv = Vec::with_capacity(path.times.len());
    let mut density = Vec::with_capacity(path.n_steps());
    let mut acc = DMatrix::zeros(d, d);
    qv.push(acc.clone());
    for k in 0..path.n_steps() {
        let dx = path.increment(k);
        let outer = &dx * dx.transpose();
        let dt = path.times[k + 1] - path.times[k];
        density.push(&outer / dt);
        acc += outer;
        qv.push(acc.clone());
    }
    QuadraticVariation {
        times: path.times.clone(),
        qv,
        density,
    }
}

/// Does the realized quadratic variation satisfy the interval sandwich
/// `sigma_lo^2 t - tol <= <B>_t <= sigma_hi^2 t + tol` at every grid time?
///
/// In higher dimensions the trace of `<B>_t` is checked against the extreme
/// candidate traces.
pub fn qv_within_bounds(qv: &QuadraticVariation, gamma: &VolatilitySet, tol: f64) -> bool {
    let (lo, hi) = gamma.scalar_bounds();
    let (lo_sq, hi_sq) = (lo * lo, hi * hi);
    for (k, t) in qv.times.iter().enumerate().skip(1) {
        let total = qv.qv[k].trace();
        if total < lo_sq * t - tol || total > hi_sq * t + tol {
            return false;
        }
    }
    true
}

/// Robustify two candidate volatility trajectories: the agent views as
/// possible every volatility process lying pointwise between them.
///
/// Returns the ambiguity set with per-step interval
/// `[min(v1_k, v2_k), max(v1_k, v2_k)]` and zero drift.
pub fn robustify(times: &[f64], vol1: &[f64], vol2: &[f64]) -> Result<AmbiguitySpec> {
    validate_time_grid(times)?;
    let n = times.len() - 1;
    if vol1.len() != n || vol2.len() != n {
        return Err(Error::GridMismatch(format!(
            "volatility sequences of lengths {} and {} on a grid with {} steps",
            vol1.len(),
            vol2.len(),
            n
        )));
    }
    let grid: Vec<f64> = times.to_vec();
    let envelope: Vec<(f64, f64)> = vol1
        .iter()
        .zip(vol2)
        .map(|(&a, &b)| (a.min(b), a.max(b)))
        .collect();
    let zero = DVector::zeros(1);
    Ok(AmbiguitySpec::new(
        1,
        {
            let zero = zero.clone();
            Arc::new(move |_, _| (zero.clone(), zero.clone()))
        },
        Arc::new(move |t, _| {
            let k = step_index(&grid, t);
            let (lo, hi) = envelope[k];
            VolatilitySet::Interval {
                sigma_lo: lo,
                sigma_hi: hi,
            }
        }),
        None,
    ))
}

/// Index of the step containing time `t` (left-closed intervals; the last
/// step also covers `t = T`).
fn step_index(times: &[f64], t: f64) -> usize {
    let n = times.len() - 1;
    match times[..n].binary_search_by(|probe| probe.partial_cmp(&t).unwrap()) {
        Ok(k) => k,
        Err(0) => 0,
        Err(k) => k - 1,
    }
}

pub(crate) fn uniform_grid(t_max: f64, n_steps: usize) -> Result<Vec<f64>> {
    if !(t_max > 0.0) || n_steps == 0 {
        return Err(Error::InvalidConfig(
            "time grid requires t_max > 0 and at least one step".into(),
        ));
    }
    let dt = t_max / n_steps as f64;
    let mut times: Vec<f64> = (0..=n_steps).map(|k| k as f64 * dt).collect();
    times[n_steps] = t_max;
    Ok(times)
}

fn validate_time_grid(times: &[f64]) -> Result<()> {
    if times.len() < 2 {
        return Err(Error::GridMismatch("time grid needs at least two points".into()));
    }
    if times[0] != 0.0 {
        return Err(Error::GridMismatch("time grid must start at 0".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
        return Err(Error::GridMismatch("time grid must be strictly increasing and finite".into()));
    }
    Ok(())
}
