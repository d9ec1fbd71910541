//! Reference instances shipped with the crate.

use nalgebra::{dmatrix, DMatrix};

use crate::lti::{Plant, Policy};

/// Optimal cost of [`example13`].
pub const EXAMPLE13_J_STAR: f64 = 7.3475;
/// Optimal cost of [`example_d1`].
pub const EXAMPLE_D1_J_STAR: f64 = 43.26;

/// Three-state, single-input instance together with its initial gain.
pub fn example13() -> (Plant, Policy) {
    let a = dmatrix![1.0, 0.0, -5.0; -1.0, 1.0, 0.0; 0.0, 0.0, 1.0];
    let b = dmatrix![1.0; 0.0; -1.0];
    let q = dmatrix![2.0, -1.0, 0.0; -1.0, 2.0, -1.0; 0.0, -1.0, 2.0];
    let r = dmatrix![1.0];
    let k0 = dmatrix![0.4931, -0.1368, -2.2654];
    (Plant::new(a, b, q, r).expect("valid instance"), Policy::new(k0))
}

/// Four-state, two-input instance together with its initial gain.
pub fn example_d1() -> (Plant, Policy) {
    let a = dmatrix![
        1.7865, 0.3912, 0.8758, 0.5996;
        0.2756, 1.3175, 0.7692, 0.4848;
        0.4764, 0.9786, 1.0618, 0.7591;
        0.4489, 0.7918, 0.6014, 1.7520
    ];
    let b = dmatrix![
        0.1303, 0.0312;
        0.1309, 0.0528;
        0.7452, 0.6727;
        0.2460, 0.0743
    ];
    let q = DMatrix::identity(4, 4) * 1.0613;
    let r = DMatrix::identity(2, 2) * 1.1315;
    let k0 = dmatrix![
        2.4364, 2.2337, 2.4867, 1.5551;
        12.1213, -4.6823, 2.1718, -2.5906
    ];
    (Plant::new(a, b, q, r).expect("valid instance"), Policy::new(k0))
}

/// `A = B = Q = R = I_2` with two stabilizing gains whose midpoint has a
/// cost above the average of the endpoint costs.
pub fn nonconvex_pair() -> (Plant, Policy, Policy) {
    let i2 = DMatrix::identity(2, 2);
    let plant = Plant::new(i2.clone(), i2.clone(), i2.clone(), i2).expect("valid instance");
    let k = dmatrix![0.7, -3.4; 0.2, 1.0];
    let k_prime = dmatrix![0.0, -1.3; 0.6, 1.2];
    (plant, Policy::new(k), Policy::new(k_prime))
}
