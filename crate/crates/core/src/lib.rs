//! Numerical engines for asset pricing and recursive utility when the
//! volatility of the driving process is ambiguous (known only to lie in a
//! set, rather than following a trusted parametric law).
//!
//! The crate is organised around five engines:
//!
//! * [`scenario`] — ambiguity sets, admissible drift/volatility scenarios,
//!   path simulation, and realized quadratic variation.
//! * [`lattice`] — a recombining trinomial tree whose per-node middle-move
//!   probability range encodes the volatility interval; nonlinear (sup/inf)
//!   expectations and recursive utility by backward induction.
//! * [`pde`] — a finite-difference solver for the Black-Scholes-Barenblatt
//!   equations giving superhedging and subhedging price surfaces, plus the
//!   closed-form Black-Scholes oracle.
//! * [`pricing`] — state-price processes, wealth dynamics, and Monte-Carlo
//!   hedging bounds over finite scenario families.
//! * [`equilibrium`] — representative-agent equilibrium: worst-case
//!   volatility, supergradient state prices, C-CAPM excess returns, and
//!   equilibrium security pricing.
//!
//! [`config`] defines the JSON document schema consumed by the `ambivol`
//! command-line front end and [`export`] the CSV emission helpers.

pub mod config;
pub mod equilibrium;
pub mod error;
pub mod export;
pub mod lattice;
pub mod pde;
pub mod pricing;
pub mod scenario;

pub use error::{Error, Result};
