//! Parameterized investment strategies over simplex parameter spaces, their
//! universalization by grid quadrature, and Metropolis sampling of the
//! universal description.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod market_model;
pub mod sampler;
pub mod simplex_geom;
pub mod strategies;
pub mod universalizer;
