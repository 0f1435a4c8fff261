#![no_std]
extern crate alloc;

pub mod baselines;
pub mod chain;
pub mod dense;
pub mod discrete;
pub mod fluid;
pub mod instances;
pub mod model;
pub mod pipeline;
pub mod relax;
pub mod sim;
pub mod simplex;

pub const PROB_TOL: f64 = 1e-12;
pub const MEASURE_TOL: f64 = 1e-9;
pub const SUPPORT_TOL: f64 = 1e-9;
