//! Finite-difference solver for the Black-Scholes-Barenblatt equations and
//! the closed-form Black-Scholes oracle.
//!
//! The superhedging price solves
//! `dc/dt + sup_{lo <= sigma <= hi} { 1/2 sigma^2 S^2 c_SS } + r S c_S - r c = 0`
//! backward from the terminal payoff; the subhedging price takes the inf.
//! Because the Hamiltonian is linear in `sigma^2`, the optimizer is an
//! endpoint selected pointwise by the sign of the discrete second derivative.
//!
//! Discretization is on a uniform log-price grid. The default scheme is
//! implicit in the linear terms with the endpoint selection frozen from the
//! latest known slice and one policy re-selection per step; an explicit
//! scheme with a stability check is available for cross-validation. Both
//! spatial boundaries impose linearity in the price (`c_SS = 0`), i.e. the
//! convection-reaction part of the equation with a one-sided first
//! derivative.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scenario::VolatilitySet;

/// Terminal payoff of the claim.
#[derive(Clone)]
pub enum Payoff {
    Call { strike: f64 },
    Put { strike: f64 },
    /// Long one call at `lo` and one at `hi`, short two at `mid`.
    Butterfly { lo: f64, mid: f64, hi: f64 },
    Zero,
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for Payoff {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Call { strike } => write!(f, "Call {{ strike: {strike} }}"),
            Self::Put { strike } => write!(f, "Put {{ strike: {strike} }}"),
            Self::Butterfly { lo, mid, hi } => {
                write!(f, "Butterfly {{ lo: {lo}, mid: {mid}, hi: {hi} }}")
            }
            Self::Zero => write!(f, "Zero"),
            Self::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Payoff {
    pub fn value(&self, s: f64) -> f64 {
        match self {
            Self::Call { strike } => (s - strike).max(0.0),
            Self::Put { strike } => (strike - s).max(0.0),
            Self::Butterfly { lo, mid, hi } => {
                (s - lo).max(0.0) - 2.0 * (s - mid).max(0.0) + (s - hi).max(0.0)
            }
            Self::Zero => 0.0,
            Self::Custom(f) => f(s),
        }
    }
}

/// Which price bound to solve for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum HedgeDirection {
    #[serde(rename = "super")]
    Superhedge,
    #[serde(rename = "sub")]
    Subhedge,
}

/// Time-stepping scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Implicit,
    Explicit,
}

/// A terminal payoff with rate, ambiguity data, and grid sizes.
#[derive(Debug, Clone)]
pub struct BSBProblem {
    pub payoff: Payoff,
    pub s_min: f64,
    pub s_max: f64,
    pub r: f64,
    pub gamma: VolatilitySet,
    pub maturity: f64,
    pub n_space: usize,
    pub n_time: usize,
}

impl BSBProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        payoff: Payoff,
        s_min: f64,
        s_max: f64,
        r: f64,
        gamma: VolatilitySet,
        maturity: f64,
        n_space: usize,
        n_time: usize,
    ) -> Result<Self> {
        if !(s_min > 0.0 && s_min < s_max && s_max.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "require 0 < s_min < s_max, got [{s_min}, {s_max}]"
            )));
        }
        if !r.is_finite() || !(maturity > 0.0) {
            return Err(Error::InvalidConfig(
                "rate and maturity must be finite, maturity > 0".into(),
            ));
        }
        if n_space < 3 || n_time < 3 {
            return Err(Error::InvalidConfig("grid sizes must be at least 3".into()));
        }
        if !matches!(gamma, VolatilitySet::Interval { .. }) {
            return Err(Error::InvalidConfig(
                "the PDE engine solves one-dimensional interval ambiguity only".into(),
            ));
        }
        Ok(Self {
            payoff,
            s_min,
            s_max,
            r,
            gamma,
            maturity,
            n_space,
            n_time,
        })
    }

    /// Default spatial domain: four standard deviations under the widest
    /// volatility, `s0 exp(+/- 4 sigma_hi sqrt(T))`, on a log-price grid.
    pub fn with_default_domain(
        payoff: Payoff,
        s0: f64,
        r: f64,
        gamma: VolatilitySet,
        maturity: f64,
        n_space: usize,
        n_time: usize,
    ) -> Result<Self> {
        if !(s0 > 0.0) {
            return Err(Error::InvalidConfig("s0 must be positive".into()));
        }
        let (_, hi) = gamma.scalar_bounds();
        let width = 4.0 * hi * maturity.sqrt();
        Self::new(
            payoff,
            s0 * (-width).exp(),
            s0 * width.exp(),
            r,
            gamma,
            maturity,
            n_space,
            n_time,
        )
    }

    fn bounds_sq(&self) -> (f64, f64) {
        let (lo, hi) = self.gamma.scalar_bounds();
        (lo * lo, hi * hi)
    }
}

/// The solved value grid of one hedging bound.
#[derive(Debug, Clone)]
pub struct PriceSurface {
    pub direction: HedgeDirection,
    /// Time levels `0 = t_0 < ... < t_m = T`.
    pub times: Vec<f64>,
    /// Price grid (exponential of the uniform log grid).
    pub spots: Vec<f64>,
    /// `values[time][space]`.
    pub values: Vec<Vec<f64>>,
    /// Selected `sigma^2` per grid point (the terminal row holds the
    /// selection the solver makes stepping away from the payoff).
    pub chosen_sigma_sq: Vec<Vec<f64>>,
}

impl PriceSurface {
    /// Value at `(t, s)` by bilinear interpolation in time and log-price.
    pub fn value_at(&self, t: f64, s: f64) -> Result<f64> {
        let (t0, t1) = (self.times[0], *self.times.last().unwrap());
        let (s0, s1) = (self.spots[0], *self.spots.last().unwrap());
        if !(t >= t0 && t <= t1) || !(s >= s0 && s <= s1) {
            return Err(Error::OutsideGrid { t, s });
        }
        let dt = self.times[1] - self.times[0];
        let it = (((t - t0) / dt).floor() as usize).min(self.times.len() - 2);
        let wt = ((t - self.times[it]) / dt).clamp(0.0, 1.0);
        let x = s.ln();
        let x0 = self.spots[0].ln();
        let dx = self.spots[1].ln() - x0;
        let ix = (((x - x0) / dx).floor() as usize).min(self.spots.len() - 2);
        let wx = ((x - (x0 + ix as f64 * dx)) / dx).clamp(0.0, 1.0);
        let at = |i: usize, j: usize| self.values[i][j];
        Ok((1.0 - wt) * ((1.0 - wx) * at(it, ix) + wx * at(it, ix + 1))
            + wt * ((1.0 - wx) * at(it + 1, ix) + wx * at(it + 1, ix + 1)))
    }

    pub fn terminal_slice(&self) -> &[f64] {
        self.values.last().unwrap()
    }
}

/// Solve one Black-Scholes-Barenblatt bound.
pub fn solve_bsb(
    problem: &BSBProblem,
    direction: HedgeDirection,
    scheme: Scheme,
) -> Result<PriceSurface> {
    let n = problem.n_space;
    let m = problem.n_time;
    let x_min = problem.s_min.ln();
    let dx = (problem.s_max.ln() - x_min) / n as f64;
    let dt = problem.maturity / m as f64;
    let (lo_sq, hi_sq) = problem.bounds_sq();
    let r = problem.r;

    // Log-spaced price grid; the operator is differenced in S so that every
    // row is exact on functions affine in S (discrete convexity survives).
    let spots: Vec<f64> = (0..=n).map(|i| (x_min + i as f64 * dx).exp()).collect();
    let times: Vec<f64> = (0..=m).map(|k| k as f64 * dt).collect();
    let terminal: Vec<f64> = spots.iter().map(|&s| problem.payoff.value(s)).collect();

    if scheme == Scheme::Explicit {
        // Monotonicity bound for the explicit step.
        let mut worst: f64 = 0.0;
        for i in 1..n {
            let sl = spots[i] - spots[i - 1];
            let sr = spots[i + 1] - spots[i];
            let s2 = spots[i] * spots[i];
            worst = worst.max(hi_sq * s2 / (sl * sr) + r.abs() * spots[i] / sl.min(sr) + r.max(0.0));
        }
        if dt * worst > 1.0 {
            let suggested = (problem.maturity * worst / 0.9).ceil() as usize;
            return Err(Error::CflViolation {
                suggested_n_time: suggested.max(problem.n_time + 1),
            });
        }
    }

    // Endpoint selection from the divided second difference on the price
    // grid, which vanishes exactly on functions linear in S.
    let select = |v: &[f64]| -> Vec<f64> {
        let mut sig = vec![hi_sq; n + 1];
        for i in 1..n {
            let sl = spots[i] - spots[i - 1];
            let sr = spots[i + 1] - spots[i];
            let d2 = ((v[i + 1] - v[i]) / sr - (v[i] - v[i - 1]) / sl) / (0.5 * (sl + sr));
            // Where the solution is linear in S the diffusion term vanishes
            // and d2 is round-off; break those ties toward convex so the
            // selection is stable.
            let noise = 1e-9 * (1.0 + v[i].abs()) / (spots[i] * spots[i]);
            let convex = d2 >= -noise;
            sig[i] = match direction {
                HedgeDirection::Superhedge => {
                    if convex {
                        hi_sq
                    } else {
                        lo_sq
                    }
                }
                HedgeDirection::Subhedge => {
                    if convex {
                        lo_sq
                    } else {
                        hi_sq
                    }
                }
            };
        }
        sig[0] = sig[1];
        sig[n] = sig[n - 1];
        sig
    };

    // Row coefficients of L v = 1/2 sig^2 S^2 v_SS + r S v_S - r v on the
    // non-uniform grid: (down, mid, up) weights applied to v[i-1], v[i], v[i+1].
    let row = |i: usize, sig_sq: f64| -> (f64, f64, f64) {
        if i == 0 {
            // Linearity boundary: diffusion dropped, one-sided forward v_S.
            let sr = spots[1] - spots[0];
            let conv = r * spots[0] / sr;
            (0.0, -conv - r, conv)
        } else if i == n {
            let sl = spots[n] - spots[n - 1];
            let conv = r * spots[n] / sl;
            (-conv, conv - r, 0.0)
        } else {
            let sl = spots[i] - spots[i - 1];
            let sr = spots[i + 1] - spots[i];
            let diff = 0.5 * sig_sq * spots[i] * spots[i];
            let d_dn = 2.0 * diff / (sl * (sl + sr));
            let d_up = 2.0 * diff / (sr * (sl + sr));
            let conv = r * spots[i] / (sl + sr);
            (d_dn - conv, -(d_dn + d_up) - r, d_up + conv)
        }
    };

    let step_implicit = |next: &[f64], sig: &[f64]| -> Vec<f64> {
        // (I - dt L) v = next
        let mut sub = vec![0.0; n + 1];
        let mut diag = vec![0.0; n + 1];
        let mut sup = vec![0.0; n + 1];
        for i in 0..=n {
            let (dn, mid, up) = row(i, sig[i]);
            sub[i] = -dt * dn;
            diag[i] = 1.0 - dt * mid;
            sup[i] = -dt * up;
        }
        solve_tridiagonal(&sub, &diag, &sup, next)
    };

    let step_explicit = |next: &[f64], sig: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; n + 1];
        for i in 0..=n {
            let (dn, mid, up) = row(i, sig[i]);
            let lower = if i > 0 { dn * next[i - 1] } else { 0.0 };
            let upper = if i < n { up * next[i + 1] } else { 0.0 };
            out[i] = next[i] + dt * (lower + mid * next[i] + upper);
        }
        out
    };

    let mut values = vec![Vec::new(); m + 1];
    let mut chosen = vec![Vec::new(); m + 1];
    chosen[m] = select(&terminal);
    values[m] = terminal;
    for k in (0..m).rev() {
        let next = &values[k + 1];
        let (slice, sig) = match scheme {
            Scheme::Implicit => {
                // Freeze the selection from the known slice, solve, then
                // re-select on the solution and solve once more if it moved.
                let sig = select(next);
                let trial = step_implicit(next, &sig);
                let sig2 = select(&trial);
                if sig2 == sig {
                    (trial, sig)
                } else {
                    let out = step_implicit(next, &sig2);
                    (out, sig2)
                }
            }
            Scheme::Explicit => {
                let sig = select(next);
                (step_explicit(next, &sig), sig)
            }
        };
        values[k] = slice;
        chosen[k] = sig;
    }

    Ok(PriceSurface {
        direction,
        times,
        spots,
        values,
        chosen_sigma_sq: chosen,
    })
}

fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let w = diag[i] - sub[i] * c[i - 1];
        c[i] = sup[i] / w;
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / w;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Superhedging and subhedging prices read off at one point.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct HedgeInterval {
    pub superhedge: f64,
    pub subhedge: f64,
    pub at: (f64, f64),
}

/// Solve both bounds and evaluate them at `(t, s)`.
pub fn hedge_interval(problem: &BSBProblem, t: f64, s: f64) -> Result<HedgeInterval> {
    let upper = solve_bsb(problem, HedgeDirection::Superhedge, Scheme::Implicit)?;
    let lower = solve_bsb(problem, HedgeDirection::Subhedge, Scheme::Implicit)?;
    Ok(HedgeInterval {
        superhedge: upper.value_at(t, s)?,
        subhedge: lower.value_at(t, s)?,
        at: (t, s),
    })
}

// ---------------------------------------------------------------------------
// Black-Scholes closed form
// ---------------------------------------------------------------------------

/// Standard normal cumulative distribution function.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// European option value in the Black-Scholes model; the oracle for the
/// degenerate (`sigma_lo = sigma_hi`) Barenblatt case.
pub fn bs_closed_form(s: f64, k: f64, r: f64, sigma: f64, tau: f64, put: bool) -> Result<f64> {
    if !(s > 0.0 && k > 0.0 && sigma > 0.0 && tau > 0.0) {
        return Err(Error::Domain(format!(
            "Black-Scholes requires positive spot, strike, volatility, and maturity \
             (got s = {s}, k = {k}, sigma = {sigma}, tau = {tau})"
        )));
    }
    let vol = sigma * tau.sqrt();
    let d1 = ((s / k).ln() + (r + 0.5 * sigma * sigma) * tau) / vol;
    let d2 = d1 - vol;
    let call = s * norm_cdf(d1) - k * (-r * tau).exp() * norm_cdf(d2);
    Ok(if put {
        call - s + k * (-r * tau).exp()
    } else {
        call
    })
}

/// Invert the Black-Scholes formula for the volatility implied by `price`.
pub fn bs_implied_vol(price: f64, s: f64, k: f64, r: f64, tau: f64, put: bool) -> Result<f64> {
    let intrinsic = if put {
        (k * (-r * tau).exp() - s).max(0.0)
    } else {
        (s - k * (-r * tau).exp()).max(0.0)
    };
    let upper_bound = if put { k * (-r * tau).exp() } else { s };
    if !(price > intrinsic && price < upper_bound) {
        return Err(Error::ImpliedVol(format!(
            "price {price} outside the no-arbitrage band ({intrinsic}, {upper_bound})"
        )));
    }
    let (mut lo, mut hi) = (1e-9, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = bs_closed_form(s, k, r, mid, tau, put)?;
        if v > price {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gamma(lo: f64, hi: f64) -> VolatilitySet {
        VolatilitySet::interval(lo, hi).unwrap()
    }

    // Frozen high-precision Black-Scholes values.
    const BS_ATM_R5_V20: f64 = 10.450_583_572_185_566;
    const BS_ATM_R0_V20: f64 = 7.965_567_455_405_796;
    const BS_ATM_R5_V30: f64 = 14.231_254_785_985_83;
    const BS_ATM_R5_V10: f64 = 6.804_957_708_822_153;

    #[test]
    fn closed_form_matches_frozen_references() {
        assert!(
            (bs_closed_form(100.0, 100.0, 0.05, 0.2, 1.0, false).unwrap() - BS_ATM_R5_V20).abs()
                < 1e-10
        );
        assert!(
            (bs_closed_form(100.0, 100.0, 0.0, 0.2, 1.0, false).unwrap() - BS_ATM_R0_V20).abs()
                < 1e-4
        );
        assert!(
            (bs_closed_form(100.0, 100.0, 0.05, 0.3, 1.0, false).unwrap() - BS_ATM_R5_V30).abs()
                < 1e-10
        );
        assert!(
            (bs_closed_form(100.0, 100.0, 0.05, 0.1, 1.0, false).unwrap() - BS_ATM_R5_V10).abs()
                < 1e-10
        );
    }

    #[test]
    fn closed_form_limits() {
        // Deep in the money with vanishing volatility: intrinsic value.
        let v = bs_closed_form(200.0, 100.0, 0.0, 1e-6, 1.0, false).unwrap();
        assert!((v - 100.0).abs() < 1e-4);
        // Vanishing maturity: terminal condition.
        let v = bs_closed_form(123.0, 100.0, 0.05, 0.2, 1e-12, false).unwrap();
        assert!((v - 23.0).abs() < 1e-6);
        // Nonpositive inputs are rejected.
        assert!(bs_closed_form(-1.0, 100.0, 0.0, 0.2, 1.0, false).is_err());
        assert!(bs_closed_form(100.0, 100.0, 0.0, 0.0, 1.0, false).is_err());
    }

    #[test]
    fn put_parity_is_exact() {
        let call = bs_closed_form(110.0, 95.0, 0.03, 0.25, 0.7, false).unwrap();
        let put = bs_closed_form(110.0, 95.0, 0.03, 0.25, 0.7, true).unwrap();
        let parity = call - put - 110.0 + 95.0 * (-0.03f64 * 0.7).exp();
        assert!(parity.abs() < 1e-12);
    }

    fn atm_call_problem(lo: f64, hi: f64, n: usize) -> BSBProblem {
        BSBProblem::with_default_domain(
            Payoff::Call { strike: 100.0 },
            100.0,
            0.05,
            gamma(lo, hi),
            1.0,
            n,
            n,
        )
        .unwrap()
    }

    #[test]
    fn degenerate_interval_reproduces_black_scholes() {
        let problem = atm_call_problem(0.2, 0.2, 400);
        let surface = solve_bsb(&problem, HedgeDirection::Superhedge, Scheme::Implicit).unwrap();
        let v = surface.value_at(0.0, 100.0).unwrap();
        assert!((v - BS_ATM_R5_V20).abs() < 5e-3, "pde = {v}");
    }

    #[test]
    fn convex_call_bounds_are_the_endpoint_black_scholes_prices() {
        let problem = atm_call_problem(0.1, 0.3, 400);
        let interval = hedge_interval(&problem, 0.0, 100.0).unwrap();
        assert!(
            (interval.superhedge - BS_ATM_R5_V30).abs() < 1e-2,
            "super = {}",
            interval.superhedge
        );
        assert!(
            (interval.subhedge - BS_ATM_R5_V10).abs() < 1e-2,
            "sub = {}",
            interval.subhedge
        );
    }

    #[test]
    fn zero_payoff_gives_the_zero_surface() {
        let problem =
            BSBProblem::with_default_domain(Payoff::Zero, 100.0, 0.05, gamma(0.1, 0.3), 1.0, 60, 60)
                .unwrap();
        for dir in [HedgeDirection::Superhedge, HedgeDirection::Subhedge] {
            let surface = solve_bsb(&problem, dir, Scheme::Implicit).unwrap();
            for row in &surface.values {
                assert!(row.iter().all(|v| v.abs() < 1e-14));
            }
        }
    }

    #[test]
    fn terminal_slice_equals_the_payoff_on_the_grid() {
        let problem = atm_call_problem(0.1, 0.3, 80);
        let surface = solve_bsb(&problem, HedgeDirection::Subhedge, Scheme::Implicit).unwrap();
        for (s, v) in surface.spots.iter().zip(surface.terminal_slice()) {
            assert_eq!(*v, problem.payoff.value(*s));
        }
    }

    #[test]
    fn superhedge_dominates_subhedge_pointwise() {
        let problem = BSBProblem::with_default_domain(
            Payoff::Butterfly {
                lo: 90.0,
                mid: 100.0,
                hi: 110.0,
            },
            100.0,
            0.05,
            gamma(0.1, 0.3),
            1.0,
            150,
            150,
        )
        .unwrap();
        let upper = solve_bsb(&problem, HedgeDirection::Superhedge, Scheme::Implicit).unwrap();
        let lower = solve_bsb(&problem, HedgeDirection::Subhedge, Scheme::Implicit).unwrap();
        let n = upper.spots.len();
        for (ur, lr) in upper.values.iter().zip(&lower.values) {
            for (i, (u, l)) in ur.iter().zip(lr).enumerate() {
                if i == 0 || i == n - 1 {
                    // At the truncation boundary the linearity condition can
                    // overshoot by the (tiny) local value scale.
                    assert!(u + 1e-3 >= *l, "boundary: super {u} < sub {l}");
                } else {
                    assert!(u + 1e-9 >= *l, "super {u} < sub {l}");
                }
            }
        }
    }

    #[test]
    fn widening_the_truncated_domain_shrinks_the_boundary_artifact() {
        // Sensitivity of the linearity boundary condition: doubling the
        // log-domain width moves the at-the-money value by less than the
        // scheme tolerance and damps the far-field overshoot.
        let payoff = Payoff::Butterfly {
            lo: 90.0,
            mid: 100.0,
            hi: 110.0,
        };
        let base =
            BSBProblem::with_default_domain(payoff.clone(), 100.0, 0.05, gamma(0.1, 0.3), 1.0, 200, 200)
                .unwrap();
        let width = 8.0 * 0.3;
        let wide = BSBProblem::new(
            payoff,
            100.0 * (-width as f64).exp(),
            100.0 * (width as f64).exp(),
            0.05,
            gamma(0.1, 0.3),
            1.0,
            400,
            200,
        )
        .unwrap();
        let vb = solve_bsb(&base, HedgeDirection::Superhedge, Scheme::Implicit).unwrap();
        let vw = solve_bsb(&wide, HedgeDirection::Superhedge, Scheme::Implicit).unwrap();
        let atm_base = vb.value_at(0.0, 100.0).unwrap();
        let atm_wide = vw.value_at(0.0, 100.0).unwrap();
        assert!((atm_base - atm_wide).abs() < 1e-3, "{atm_base} vs {atm_wide}");
        let min_base = vb.values.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
        let min_wide = vw.values.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
        assert!(min_wide >= min_base - 1e-12);
        assert!(min_wide > -1e-6, "far-field overshoot {min_wide}");
    }

    #[test]
    fn convex_payoff_selects_the_high_variance_everywhere_on_the_superhedge() {
        let problem = atm_call_problem(0.1, 0.3, 120);
        let surface = solve_bsb(&problem, HedgeDirection::Superhedge, Scheme::Implicit).unwrap();
        let hi_sq = 0.09;
        for row in &surface.chosen_sigma_sq {
            for sig in row {
                assert!((sig - hi_sq).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn butterfly_bounds_bracket_every_constant_volatility_price() {
        let problem = BSBProblem::with_default_domain(
            Payoff::Butterfly {
                lo: 90.0,
                mid: 100.0,
                hi: 110.0,
            },
            100.0,
            0.05,
            gamma(0.1, 0.3),
            1.0,
            400,
            400,
        )
        .unwrap();
        let interval = hedge_interval(&problem, 0.0, 100.0).unwrap();
        assert!(interval.superhedge >= interval.subhedge);
        for sigma in [0.1, 0.2, 0.3] {
            let bs = |strike: f64| bs_closed_form(100.0, strike, 0.05, sigma, 1.0, false).unwrap();
            let value = bs(90.0) - 2.0 * bs(100.0) + bs(110.0);
            assert!(
                interval.superhedge >= value - 1e-2,
                "sigma {sigma}: super {} < bs {value}",
                interval.superhedge
            );
            assert!(
                interval.subhedge <= value + 1e-2,
                "sigma {sigma}: sub {} > bs {value}",
                interval.subhedge
            );
        }
    }

    #[test]
    fn degenerate_interval_collapses_the_hedge_interval() {
        let problem = atm_call_problem(0.2, 0.2, 200);
        let interval = hedge_interval(&problem, 0.0, 100.0).unwrap();
        assert!((interval.superhedge - interval.subhedge).abs() < 1e-6);
    }

    #[test]
    fn widening_the_interval_widens_the_price_interval() {
        for payoff in [
            Payoff::Call { strike: 100.0 },
            Payoff::Put { strike: 100.0 },
            Payoff::Butterfly {
                lo: 90.0,
                mid: 100.0,
                hi: 110.0,
            },
        ] {
            let narrow = BSBProblem::with_default_domain(
                payoff.clone(),
                100.0,
                0.05,
                gamma(0.15, 0.25),
                1.0,
                200,
                200,
            )
            .unwrap();
            let wide =
                BSBProblem::with_default_domain(payoff, 100.0, 0.05, gamma(0.1, 0.3), 1.0, 200, 200)
                    .unwrap();
            let i_narrow = hedge_interval(&narrow, 0.0, 100.0).unwrap();
            let i_wide = hedge_interval(&wide, 0.0, 100.0).unwrap();
            assert!(i_wide.superhedge > i_narrow.superhedge - 1e-9);
            assert!(i_wide.subhedge < i_narrow.subhedge + 1e-9);
        }
    }

    #[test]
    fn explicit_scheme_agrees_with_implicit_when_stable() {
        let problem = BSBProblem::with_default_domain(
            Payoff::Call { strike: 100.0 },
            100.0,
            0.05,
            gamma(0.1, 0.3),
            1.0,
            80,
            4000,
        )
        .unwrap();
        let a = solve_bsb(&problem, HedgeDirection::Superhedge, Scheme::Implicit).unwrap();
        let b = solve_bsb(&problem, HedgeDirection::Superhedge, Scheme::Explicit).unwrap();
        let va = a.value_at(0.0, 100.0).unwrap();
        let vb = b.value_at(0.0, 100.0).unwrap();
        assert!((va - vb).abs() < 2e-2, "implicit {va} vs explicit {vb}");
    }

    #[test]
    fn explicit_scheme_reports_the_stability_bound() {
        let problem = atm_call_problem(0.1, 0.3, 400);
        match solve_bsb(&problem, HedgeDirection::Superhedge, Scheme::Explicit) {
            Err(Error::CflViolation { suggested_n_time }) => {
                assert!(suggested_n_time > 400);
            }
            other => panic!("expected a stability error, got {other:?}"),
        }
    }

    #[test]
    fn grid_refinement_changes_the_value_less_than_the_first_order_estimate() {
        let coarse = atm_call_problem(0.1, 0.3, 200);
        let fine = atm_call_problem(0.1, 0.3, 400);
        let vc = solve_bsb(&coarse, HedgeDirection::Superhedge, Scheme::Implicit)
            .unwrap()
            .value_at(0.0, 100.0)
            .unwrap();
        let vf = solve_bsb(&fine, HedgeDirection::Superhedge, Scheme::Implicit)
            .unwrap()
            .value_at(0.0, 100.0)
            .unwrap();
        // First order in time: the coarse-grid error itself bounds the change.
        let first_order_estimate = 2.0 * (vc - BS_ATM_R5_V30).abs().max(1e-3);
        assert!((vf - vc).abs() < first_order_estimate);
    }

    #[test]
    fn outside_grid_queries_error() {
        let problem = atm_call_problem(0.1, 0.3, 50);
        let surface = solve_bsb(&problem, HedgeDirection::Superhedge, Scheme::Implicit).unwrap();
        assert!(matches!(
            surface.value_at(0.0, 1e9),
            Err(Error::OutsideGrid { .. })
        ));
        assert!(matches!(
            surface.value_at(2.0, 100.0),
            Err(Error::OutsideGrid { .. })
        ));
    }

    #[test]
    fn implied_vol_round_trips_and_rejects_out_of_band_prices() {
        let price = bs_closed_form(100.0, 105.0, 0.02, 0.27, 0.8, false).unwrap();
        let vol = bs_implied_vol(price, 100.0, 105.0, 0.02, 0.8, false).unwrap();
        assert!((vol - 0.27).abs() < 1e-9);
        assert!(bs_implied_vol(120.0, 100.0, 105.0, 0.02, 0.8, false).is_err());
        assert!(bs_implied_vol(0.0, 100.0, 105.0, 0.02, 0.8, false).is_err());
    }
}
