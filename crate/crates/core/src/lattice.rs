//! Recombining trinomial tree with ambiguous one-step variance.
//!
//! Node `(k, j)` sits at spatial coordinate `j * step` with
//! `step = sigma_hi * sqrt(h)`. One step moves up/down by `step` with
//! probability `(1 - p)/2` each and stays put with probability `p`, where
//! `p` ranges over `[0, 1 - sigma_lo^2 / sigma_hi^2]`. The one-step variance
//! `(1 - p) sigma_hi^2 h` then sweeps exactly `[sigma_lo^2 h, sigma_hi^2 h]`,
//! which is the tree encoding of the volatility interval.
//!
//! The upper (nonlinear) expectation maximizes over `p` node by node during
//! backward induction; the objective is linear in `p`, so the optimum is
//! always at an endpoint, chosen by the sign of the local convexity test
//! `(V_up + V_down)/2 - V_mid`. Recursive utility runs the same induction in
//! the worst-case (minimizing) direction with a per-node scalar fixed point
//! for the aggregator term.

use crate::error::{Error, Result};

/// Recombining trinomial lattice encoding a volatility interval.
#[derive(Debug, Clone, Copy)]
pub struct TrinomialLattice {
    h: f64,
    n_steps: usize,
    sigma_lo: f64,
    sigma_hi: f64,
    step: f64,
    p_mid_max: f64,
}

impl TrinomialLattice {
    pub fn new(n_steps: usize, maturity: f64, sigma_lo: f64, sigma_hi: f64) -> Result<Self> {
        if n_steps == 0 || !(maturity > 0.0) {
            return Err(Error::InvalidConfig(
                "lattice requires n_steps >= 1 and maturity > 0".into(),
            ));
        }
        if !(sigma_lo > 0.0 && sigma_lo <= sigma_hi && sigma_hi.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lattice requires 0 < sigma_lo <= sigma_hi, got [{sigma_lo}, {sigma_hi}]"
            )));
        }
        let h = maturity / n_steps as f64;
        let p_mid_max = 1.0 - (sigma_lo * sigma_lo) / (sigma_hi * sigma_hi);
        Ok(Self {
            h,
            n_steps,
            sigma_lo,
            sigma_hi,
            step: sigma_hi * h.sqrt(),
            p_mid_max,
        })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn maturity(&self) -> f64 {
        self.h * self.n_steps as f64
    }

    pub fn sigma_lo(&self) -> f64 {
        self.sigma_lo
    }

    pub fn sigma_hi(&self) -> f64 {
        self.sigma_hi
    }

    /// Spatial increment between adjacent nodes.
    pub fn step(&self) -> f64 {
        self.step
    }

    /// Upper bound of the admissible middle-move probability range.
    pub fn p_mid_max(&self) -> f64 {
        self.p_mid_max
    }

    /// Spatial coordinate of node `(k, j)`, `j in {-k, ..., k}`.
    pub fn coord(&self, j: i64) -> f64 {
        j as f64 * self.step
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.h
    }

    /// Middle-move probability realizing one-step variance `sigma^2 h`.
    pub fn p_for_sigma(&self, sigma: f64) -> Result<f64> {
        if sigma < self.sigma_lo - 1e-12 || sigma > self.sigma_hi + 1e-12 {
            return Err(Error::Domain(format!(
                "sigma = {sigma} outside the lattice interval [{}, {}]",
                self.sigma_lo, self.sigma_hi
            )));
        }
        Ok((1.0 - (sigma * sigma) / (self.sigma_hi * self.sigma_hi)).clamp(0.0, self.p_mid_max))
    }

    /// Coordinates of the terminal layer, `j = -n ..= n`.
    pub fn terminal_coords(&self) -> Vec<f64> {
        (-(self.n_steps as i64)..=self.n_steps as i64)
            .map(|j| self.coord(j))
            .collect()
    }
}

/// Optimization direction of the nonlinear expectation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// sup over priors (the nonlinear expectation itself).
    Upper,
    /// inf over priors, i.e. the worst case used by utility.
    Lower,
}

/// A per-node real function on the lattice, layer `k` holding `2k + 1` values.
#[derive(Debug, Clone)]
pub struct NodeFunction {
    lattice: TrinomialLattice,
    layers: Vec<Vec<f64>>,
}

impl NodeFunction {
    pub fn lattice(&self) -> &TrinomialLattice {
        &self.lattice
    }

    pub fn layer(&self, k: usize) -> &[f64] {
        &self.layers[k]
    }

    /// Value at node `(k, j)`, `j in {-k, ..., k}`.
    pub fn value(&self, k: usize, j: i64) -> f64 {
        self.layers[k][(j + k as i64) as usize]
    }

    pub fn root(&self) -> f64 {
        self.layers[0][0]
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn from_layers(lattice: TrinomialLattice, layers: Vec<Vec<f64>>) -> Self {
        debug_assert!(layers
            .iter()
            .enumerate()
            .all(|(k, layer)| layer.len() == 2 * k + 1));
        Self { lattice, layers }
    }
}

/// One-step optimized average. Linearity in `p` puts the optimum at an
/// endpoint: `p = p_max` exactly when the middle child beats the wing
/// average (Upper) or undercuts it (Lower).
#[inline]
fn one_step(lattice: &TrinomialLattice, dir: Direction, up: f64, mid: f64, down: f64) -> f64 {
    let avg = 0.5 * (up + down);
    let gain = mid - avg;
    let take_mid = match dir {
        Direction::Upper => gain > 0.0,
        Direction::Lower => gain < 0.0,
    };
    if take_mid {
        avg + lattice.p_mid_max * gain
    } else {
        avg
    }
}

#[inline]
fn one_step_policy(p: f64, up: f64, mid: f64, down: f64) -> f64 {
    let avg = 0.5 * (up + down);
    avg + p * (mid - avg)
}

fn roll_back_layer(
    next: &[f64],
    mut combine: impl FnMut(f64, f64, f64) -> f64,
) -> Vec<f64> {
    let width = next.len() - 2;
    (0..width)
        .map(|i| combine(next[i + 2], next[i + 1], next[i]))
        .collect()
}

/// Full table of conditional nonlinear expectations of a terminal payoff.
pub fn conditional_expectation_dir(
    lattice: &TrinomialLattice,
    dir: Direction,
    terminal: impl Fn(f64) -> f64,
) -> NodeFunction {
    let n = lattice.n_steps();
    let mut layers = vec![Vec::new(); n + 1];
    layers[n] = lattice.terminal_coords().iter().map(|&x| terminal(x)).collect();
    for k in (0..n).rev() {
        layers[k] = roll_back_layer(&layers[k + 1], |u, m, d| one_step(lattice, dir, u, m, d));
    }
    NodeFunction::from_layers(*lattice, layers)
}

/// Conditional (upper) nonlinear expectation table of a terminal payoff.
/// The root entry is the nonlinear expectation itself; every interior entry
/// equals the one-step maximized average of its children.
pub fn conditional_g_expectation(
    lattice: &TrinomialLattice,
    terminal: impl Fn(f64) -> f64,
) -> NodeFunction {
    conditional_expectation_dir(lattice, Direction::Upper, terminal)
}

/// The nonlinear expectation: sup over admissible priors of the mean of the
/// terminal payoff.
pub fn g_expectation(lattice: &TrinomialLattice, terminal: impl Fn(f64) -> f64) -> f64 {
    conditional_expectation_dir(lattice, Direction::Upper, terminal).root()
}

/// The lower expectation `inf_P E_P = -sup_P E_P[-xi]`.
pub fn lower_expectation(lattice: &TrinomialLattice, terminal: impl Fn(f64) -> f64) -> f64 {
    -g_expectation(lattice, |x| -terminal(x))
}

/// Conditional expectation table under a fixed middle-move probability
/// (a single prior rather than the optimized envelope).
pub fn conditional_expectation_under_policy(
    lattice: &TrinomialLattice,
    p: f64,
    terminal: impl Fn(f64) -> f64,
) -> NodeFunction {
    let n = lattice.n_steps();
    let mut layers = vec![Vec::new(); n + 1];
    layers[n] = lattice.terminal_coords().iter().map(|&x| terminal(x)).collect();
    for k in (0..n).rev() {
        layers[k] = roll_back_layer(&layers[k + 1], |u, m, d| one_step_policy(p, u, m, d));
    }
    NodeFunction::from_layers(*lattice, layers)
}

// ---------------------------------------------------------------------------
// Aggregators and recursive utility
// ---------------------------------------------------------------------------

/// Felicity (period utility) function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Felicity {
    /// `u(c) = c^alpha / alpha`, `alpha != 0`, `alpha <= 1`.
    Power { alpha: f64 },
    /// `u(c) = c` (risk neutrality; the concave boundary case).
    Linear,
}

impl Felicity {
    pub fn power(alpha: f64) -> Result<Self> {
        if alpha == 0.0 || alpha > 1.0 || !alpha.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "power felicity requires alpha != 0, alpha <= 1, got {alpha}"
            )));
        }
        Ok(Self::Power { alpha })
    }

    /// Is `c` in the domain of `u`?
    pub fn admits(&self, c: f64) -> bool {
        match self {
            Self::Power { .. } => c > 0.0,
            Self::Linear => c.is_finite(),
        }
    }

    pub fn u(&self, c: f64) -> f64 {
        match self {
            Self::Power { alpha } => c.powf(*alpha) / alpha,
            Self::Linear => c,
        }
    }

    pub fn u_c(&self, c: f64) -> f64 {
        match self {
            Self::Power { alpha } => c.powf(alpha - 1.0),
            Self::Linear => 1.0,
        }
    }

    pub fn u_cc(&self, c: f64) -> f64 {
        match self {
            Self::Power { alpha } => (alpha - 1.0) * c.powf(alpha - 2.0),
            Self::Linear => 0.0,
        }
    }

    /// Relative risk aversion `-c u_cc / u_c` (`1 - alpha` for power).
    pub fn relative_risk_aversion(&self, c: f64) -> f64 {
        -c * self.u_cc(c) / self.u_c(c)
    }
}

/// Utility aggregator `f(c, v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Aggregator {
    /// `f(c, v) = u(c) - beta v`: discounted expected utility.
    Standard { beta: f64, felicity: Felicity },
    /// Kreps-Porteus: separates risk aversion (`1 - alpha`) from the
    /// elasticity of intertemporal substitution (`1/(1 - rho)`), with
    /// `u(c) = c^alpha / alpha` for terminal lumps. `rho = alpha` collapses
    /// to the standard aggregator with power felicity.
    KrepsPorteus { beta: f64, alpha: f64, rho: f64 },
}

impl Aggregator {
    pub fn standard(beta: f64, felicity: Felicity) -> Result<Self> {
        if !(beta >= 0.0) {
            return Err(Error::InvalidConfig("discount beta must be nonnegative".into()));
        }
        Ok(Self::Standard { beta, felicity })
    }

    pub fn kreps_porteus(beta: f64, alpha: f64, rho: f64) -> Result<Self> {
        if !(beta >= 0.0) {
            return Err(Error::InvalidConfig("discount beta must be nonnegative".into()));
        }
        for (name, v) in [("alpha", alpha), ("rho", rho)] {
            if v == 0.0 || v > 1.0 || !v.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "Kreps-Porteus requires {name} != 0 and {name} <= 1, got {v}"
                )));
            }
        }
        Ok(Self::KrepsPorteus { beta, alpha, rho })
    }

    /// Terminal felicity.
    pub fn felicity(&self) -> Felicity {
        match self {
            Self::Standard { felicity, .. } => *felicity,
            Self::KrepsPorteus { alpha, .. } => Felicity::Power { alpha: *alpha },
        }
    }

    pub fn u(&self, c: f64) -> f64 {
        self.felicity().u(c)
    }

    pub fn u_c(&self, c: f64) -> f64 {
        self.felicity().u_c(c)
    }

    /// Aggregator value. The Kreps-Porteus form, written with `w = alpha v`
    /// (which must stay positive), is
    /// `f(c, v) = (c^rho w^{(alpha - rho)/alpha} - beta w) / rho`.
    pub fn f(&self, c: f64, v: f64) -> f64 {
        match self {
            Self::Standard { beta, felicity } => felicity.u(c) - beta * v,
            Self::KrepsPorteus { beta, alpha, rho } => {
                let w = alpha * v;
                (c.powf(*rho) * w.powf((alpha - rho) / alpha) - beta * w) / rho
            }
        }
    }

    /// Partial derivative `f_v`.
    pub fn f_v(&self, c: f64, v: f64) -> f64 {
        match self {
            Self::Standard { beta, .. } => -beta,
            Self::KrepsPorteus { beta, alpha, rho } => {
                let w = alpha * v;
                (c.powf(*rho) * (alpha - rho) * w.powf(-rho / alpha) - alpha * beta) / rho
            }
        }
    }

    /// Partial derivative `f_c`.
    pub fn f_c(&self, c: f64, v: f64) -> f64 {
        match self {
            Self::Standard { felicity, .. } => felicity.u_c(c),
            Self::KrepsPorteus { alpha, rho, .. } => {
                let w = alpha * v;
                c.powf(rho - 1.0) * w.powf((alpha - rho) / alpha)
            }
        }
    }

    fn requires_positive_value(&self) -> bool {
        matches!(self, Self::KrepsPorteus { .. })
    }
}

/// A node-indexed consumption plan: an absolutely continuous flow on layers
/// `0 .. n` plus a terminal lump at layer `n`.
#[derive(Debug, Clone)]
pub struct ConsumptionPlan {
    /// Flow consumption per node, layers `0 ..= n - 1`.
    pub flow: Vec<Vec<f64>>,
    /// Terminal lump per terminal node.
    pub terminal: Vec<f64>,
}

impl ConsumptionPlan {
    pub fn from_fns(
        lattice: &TrinomialLattice,
        flow: impl Fn(f64, f64) -> f64,
        terminal: impl Fn(f64) -> f64,
    ) -> Self {
        let n = lattice.n_steps();
        let flow = (0..n)
            .map(|k| {
                let t = lattice.time(k);
                (-(k as i64)..=k as i64)
                    .map(|j| flow(t, lattice.coord(j)))
                    .collect()
            })
            .collect();
        let terminal = lattice.terminal_coords().iter().map(|&x| terminal(x)).collect();
        Self { flow, terminal }
    }

    pub fn constant(lattice: &TrinomialLattice, level: f64) -> Self {
        Self::from_fns(lattice, |_, _| level, |_| level)
    }

    /// Zero flow with a terminal payoff only (pair with linear felicity).
    pub fn terminal_only(lattice: &TrinomialLattice, psi: impl Fn(f64) -> f64) -> Self {
        Self::from_fns(lattice, |_, _| 0.0, psi)
    }

    fn validate_domain(&self, agg: &Aggregator) -> Result<()> {
        let felicity = agg.felicity();
        let ok_flow = self.flow.iter().flatten().all(|&c| felicity.admits(c));
        let ok_term = self.terminal.iter().all(|&c| felicity.admits(c));
        if !(ok_flow && ok_term) {
            return Err(Error::Domain(
                "consumption plan leaves the domain of the felicity function".into(),
            ));
        }
        Ok(())
    }
}

/// Solve the per-node implicit relation `V = m + h f(c, V)` by Newton
/// iteration with the analytic `f_v`. The standard aggregator is linear in
/// `V`, so one step is exact; Kreps-Porteus converges quadratically.
fn solve_node_value(agg: &Aggregator, c: f64, m: f64, h: f64) -> Result<f64> {
    if let Aggregator::Standard { beta, felicity } = agg {
        return Ok((m + h * felicity.u(c)) / (1.0 + h * beta));
    }
    let mut v = if m != 0.0 { m } else { agg.u(c.max(1e-12)) };
    for _ in 0..64 {
        if agg.requires_positive_value() {
            let Aggregator::KrepsPorteus { alpha, .. } = agg else { unreachable!() };
            if !(alpha * v > 0.0) {
                return Err(Error::Domain(
                    "Kreps-Porteus recursion left the domain alpha * V > 0".into(),
                ));
            }
        }
        let g = v - m - h * agg.f(c, v);
        let gp = 1.0 - h * agg.f_v(c, v);
        let step = g / gp;
        v -= step;
        if step.abs() <= 1e-13 * (1.0 + v.abs()) {
            return Ok(v);
        }
    }
    Err(Error::Domain(
        "per-node fixed point did not converge in 64 iterations".into(),
    ))
}

/// Backward induction for continuation utility between `layer_hi` (where the
/// boundary values are given) and `layer_lo`, consuming the plan's flow on
/// the way down. Returns the value layer at `layer_lo`.
fn utility_slice_between(
    lattice: &TrinomialLattice,
    dir: Direction,
    agg: &Aggregator,
    flow_at: &impl Fn(usize, usize) -> f64,
    layer_hi: usize,
    boundary: Vec<f64>,
    layer_lo: usize,
) -> Result<Vec<f64>> {
    let h = lattice.h();
    let mut current = boundary;
    for k in (layer_lo..layer_hi).rev() {
        let next = current;
        let mut layer = Vec::with_capacity(2 * k + 1);
        for i in 0..2 * k + 1 {
            let m = one_step(lattice, dir, next[i + 2], next[i + 1], next[i]);
            layer.push(solve_node_value(agg, flow_at(k, i), m, h)?);
        }
        current = layer;
    }
    Ok(current)
}

/// Worst-case recursive utility of a consumption plan: the full table of
/// continuation values, with terminal layer `u(c_T)`.
pub fn recursive_utility(
    lattice: &TrinomialLattice,
    plan: &ConsumptionPlan,
    agg: &Aggregator,
) -> Result<NodeFunction> {
    recursive_utility_dir(lattice, plan, agg, Direction::Lower)
}

/// Recursive utility with an explicit optimization direction (`Lower` is the
/// worst case used throughout; `Upper` the best case, exposed for
/// diagnostics).
pub fn recursive_utility_dir(
    lattice: &TrinomialLattice,
    plan: &ConsumptionPlan,
    agg: &Aggregator,
    dir: Direction,
) -> Result<NodeFunction> {
    plan.validate_domain(agg)?;
    let n = lattice.n_steps();
    if plan.flow.len() != n || plan.terminal.len() != 2 * n + 1 {
        return Err(Error::GridMismatch(
            "consumption plan does not match the lattice".into(),
        ));
    }
    let mut layers = vec![Vec::new(); n + 1];
    layers[n] = plan.terminal.iter().map(|&c| agg.u(c)).collect();
    for k in (0..n).rev() {
        let (head, tail) = layers.split_at_mut(k + 1);
        let next = &tail[0];
        let h = lattice.h();
        let mut layer = Vec::with_capacity(2 * k + 1);
        for i in 0..2 * k + 1 {
            let m = one_step(lattice, dir, next[i + 2], next[i + 1], next[i]);
            layer.push(solve_node_value(agg, plan.flow[k][i], m, h)?);
        }
        head[k] = layer;
    }
    Ok(NodeFunction::from_layers(*lattice, layers))
}

/// Recursive utility on the first `layer` steps with externally supplied
/// continuation values (in place of terminal felicity). Feeding back the
/// layer-`m` slice of a full table must reproduce the root value, which is
/// the recursivity property.
pub fn recursive_utility_given_terminal(
    lattice: &TrinomialLattice,
    plan: &ConsumptionPlan,
    agg: &Aggregator,
    dir: Direction,
    layer: usize,
    continuation: Vec<f64>,
) -> Result<f64> {
    if continuation.len() != 2 * layer + 1 {
        return Err(Error::GridMismatch(
            "continuation slice does not match the requested layer".into(),
        ));
    }
    let flow_at = |k: usize, i: usize| plan.flow[k][i];
    let slice = utility_slice_between(lattice, dir, agg, &flow_at, layer, continuation, 0)?;
    Ok(slice[0])
}

/// Continuation utility of a plan under a fixed middle-move probability
/// (the single-prior evaluation used by minimizer verification).
pub fn utility_under_policy(
    lattice: &TrinomialLattice,
    plan: &ConsumptionPlan,
    agg: &Aggregator,
    p: f64,
) -> Result<NodeFunction> {
    plan.validate_domain(agg)?;
    let n = lattice.n_steps();
    let mut layers = vec![Vec::new(); n + 1];
    layers[n] = plan.terminal.iter().map(|&c| agg.u(c)).collect();
    for k in (0..n).rev() {
        let (head, tail) = layers.split_at_mut(k + 1);
        let next = &tail[0];
        let h = lattice.h();
        let mut layer = Vec::with_capacity(2 * k + 1);
        for i in 0..2 * k + 1 {
            let m = one_step_policy(p, next[i + 2], next[i + 1], next[i]);
            layer.push(solve_node_value(agg, plan.flow[k][i], m, h)?);
        }
        head[k] = layer;
    }
    Ok(NodeFunction::from_layers(*lattice, layers))
}

// ---------------------------------------------------------------------------
// Quadratic-variation-augmented state
// ---------------------------------------------------------------------------

/// Nonlinear expectation of a payoff depending on the terminal state *and*
/// the realized quadratic variation.
///
/// The state is augmented by the cumulative middle-move count `m`; after `k`
/// steps with `m` middle moves the realized quadratic variation is
/// `(k - m) step^2`. Up/down transitions keep `m`, the middle move
/// increments it. Layer `k` holds `(2k + 1)(k + 1)` nodes; storage is two
/// layers at a time.
pub fn g_expectation_qv(
    lattice: &TrinomialLattice,
    dir: Direction,
    terminal: impl Fn(f64, f64) -> f64,
) -> f64 {
    let n = lattice.n_steps();
    let dx2 = lattice.step() * lattice.step();
    let idx = |k: usize, i: usize, m: usize| i * (k + 2) + m;

    let mut current = vec![0.0; (2 * n + 1) * (n + 2)];
    for i in 0..2 * n + 1 {
        let x = lattice.coord(i as i64 - n as i64);
        for m in 0..=n {
            current[idx(n, i, m)] = terminal(x, (n - m) as f64 * dx2);
        }
    }
    for k in (0..n).rev() {
        let mut layer = vec![0.0; (2 * k + 1) * (k + 2)];
        for i in 0..2 * k + 1 {
            for m in 0..=k {
                let up = current[idx(k + 1, i + 2, m)];
                let down = current[idx(k + 1, i, m)];
                let mid = current[idx(k + 1, i + 1, m + 1)];
                layer[idx(k, i, m)] = one_step(lattice, dir, up, mid, down);
            }
        }
        current = layer;
    }
    current[0]
}

// ---------------------------------------------------------------------------
// Weak dynamic consistency demonstration
// ---------------------------------------------------------------------------

/// The nonnegative bump applied after the evaluation time: equal to 1 at and
/// below `sigma_lo^2`, falling linearly to 0 at the midpoint
/// `(sigma_lo^2 + sigma_hi^2) / 2`, and 0 beyond. Degenerate intervals give
/// the zero function.
pub fn dc_phi(x: f64, sigma_lo_sq: f64, sigma_hi_sq: f64) -> f64 {
    if sigma_lo_sq >= sigma_hi_sq {
        return 0.0;
    }
    let mid = 0.5 * (sigma_lo_sq + sigma_hi_sq);
    if x <= sigma_lo_sq {
        1.0
    } else if x >= mid {
        0.0
    } else {
        2.0 * x / (sigma_lo_sq - sigma_hi_sq)
            - (sigma_lo_sq + sigma_hi_sq) / (sigma_lo_sq - sigma_hi_sq)
    }
}

/// Outcome of the weak-dynamic-consistency demonstration.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DcReport {
    /// Worst-case utility of the endowment.
    pub v0_endowment: f64,
    /// Worst-case utility of the perturbed plan.
    pub v0_perturbed: f64,
    /// `V_0(c) - V_0(e)`; zero up to lattice tolerance.
    pub v0_gap: f64,
    /// `V_tau(c) - V_tau(e)` along the all-middle-move history (the discrete
    /// low-volatility event); strictly positive when the interval is
    /// nondegenerate.
    pub conditional_gap: f64,
    /// Bump breakpoints: 1 at and below `phi_one_below`, 0 at and above
    /// `phi_zero_above`.
    pub phi_one_below: f64,
    pub phi_zero_above: f64,
}

/// Build the perturbed plan `c = e + phi(<B>_tau / tau)` after `tau` for the
/// log-linear endowment `e = e0 exp(x)` and report the ex-ante and
/// conditional utility gaps.
///
/// Ex ante the perturbation is worthless because the worst-case prior
/// concentrates on histories where the bump vanishes, yet conditionally on
/// the low-volatility event it is a strict improvement: weak, and only weak,
/// dynamic consistency.
pub fn demo_dynamic_consistency(
    lattice: &TrinomialLattice,
    tau: f64,
    alpha: f64,
    beta: f64,
    e0: f64,
) -> Result<DcReport> {
    if !(alpha < 0.0) {
        return Err(Error::Domain("the demonstration requires alpha < 0".into()));
    }
    if !(e0 > 0.0) {
        return Err(Error::Domain("e0 must be positive".into()));
    }
    let n = lattice.n_steps();
    let k_tau = (tau / lattice.h()).round() as usize;
    if k_tau == 0 || k_tau >= n {
        return Err(Error::InvalidConfig(format!(
            "tau = {tau} must map to an interior layer (got layer {k_tau} of {n})"
        )));
    }
    let agg = Aggregator::standard(beta, Felicity::power(alpha)?)?;
    let endow = |x: f64| e0 * x.exp();

    let plan_e = ConsumptionPlan::from_fns(lattice, |_, x| endow(x), endow);
    let table_e = recursive_utility(lattice, &plan_e, &agg)?;

    let lo_sq = lattice.sigma_lo() * lattice.sigma_lo();
    let hi_sq = lattice.sigma_hi() * lattice.sigma_hi();
    let dx2 = lattice.step() * lattice.step();
    let tau_grid = lattice.time(k_tau);

    // Continuation value at the evaluation layer for each possible
    // middle-move count: the bump is frozen at phi(<B>_tau / tau) there.
    let flow_e = |k: usize, i: usize| endow(lattice.coord(i as i64 - k as i64));
    let mut slices = Vec::with_capacity(k_tau + 1);
    for m in 0..=k_tau {
        let qv_ratio = (k_tau - m) as f64 * dx2 / tau_grid;
        let bump = dc_phi(qv_ratio, lo_sq, hi_sq);
        let flow = |k: usize, i: usize| flow_e(k, i) + bump;
        let boundary = (0..2 * n + 1)
            .map(|i| agg.u(endow(lattice.coord(i as i64 - n as i64)) + bump))
            .collect();
        slices.push(utility_slice_between(
            lattice,
            Direction::Lower,
            &agg,
            &flow,
            n,
            boundary,
            k_tau,
        )?);
    }

    // Pre-tau backward induction over (state, middle-move count) pairs.
    let idx = |k: usize, i: usize, m: usize| i * (k + 2) + m;
    let mut current = vec![0.0; (2 * k_tau + 1) * (k_tau + 2)];
    for i in 0..2 * k_tau + 1 {
        for m in 0..=k_tau {
            current[idx(k_tau, i, m)] = slices[m][i];
        }
    }
    let h = lattice.h();
    for k in (0..k_tau).rev() {
        let mut layer = vec![0.0; (2 * k + 1) * (k + 2)];
        for i in 0..2 * k + 1 {
            let c = flow_e(k, i);
            for m in 0..=k {
                let up = current[idx(k + 1, i + 2, m)];
                let down = current[idx(k + 1, i, m)];
                let mid = current[idx(k + 1, i + 1, m + 1)];
                let mexp = one_step(lattice, Direction::Lower, up, mid, down);
                layer[idx(k, i, m)] = solve_node_value(&agg, c, mexp, h)?;
            }
        }
        current = layer;
    }

    let v0_perturbed = current[0];
    let v0_endowment = table_e.root();
    // All-middle history: m = k_tau middle moves, state still at the origin.
    let conditional_gap = slices[k_tau][k_tau] - table_e.value(k_tau, 0);

    Ok(DcReport {
        v0_endowment,
        v0_perturbed,
        v0_gap: v0_perturbed - v0_endowment,
        conditional_gap,
        phi_one_below: lo_sq,
        phi_zero_above: 0.5 * (lo_sq + hi_sq),
    })
}
