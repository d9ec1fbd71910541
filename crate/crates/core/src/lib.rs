#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bundle;
pub mod error;
pub mod examples;
pub mod experiment;
pub mod hinf;
pub mod lti;
pub mod modelfree;
pub mod problem;
pub mod solvers;
