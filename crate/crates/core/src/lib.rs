//! Weighted variable-exponent Lebesgue and Sobolev spaces on discretized
//! product measures `D x Omega`, a numerical suite for their functional
//! inequalities, and a solver for the degenerate elliptic problem
//! `-div A(x,t,u,grad u) + A0(x,t,u,grad u) = f` with zero boundary data.

pub mod cli;
pub mod config;
pub mod embeddings;
pub mod error;
pub mod expr;
pub mod families;
pub mod fields;
pub mod measure_grid;
pub mod modular_norm;
pub mod operator;
pub mod solver;

pub use error::{Error, Result};
