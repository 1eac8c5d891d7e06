//! Seed-train simulation under growth uncertainty, coupled to multi-objective
//! Bayesian optimization of shake-flask filling volumes.
//!
//! * [`kinetics`]: mechanistic CHO growth and metabolism model.
//! * [`integrator`]: explicit Runge-Kutta integration on exact output grids.
//! * [`seedtrain`]: passaging strategy, Monte-Carlo ensembles and objectives.
//! * [`gp`]: Gaussian-process regression with a squared-exponential kernel.
//! * [`mobo`]: Latin hypercube design, Pareto tools, hypervolume and the
//!   expected-hypervolume-improvement driver.

pub mod gp;
pub mod integrator;
pub mod rng;
pub mod seedtrain;
pub mod kinetics;
pub mod mobo;
