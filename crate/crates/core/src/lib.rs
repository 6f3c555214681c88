//! Solver and verifier for two-player ergodic linear-quadratic games with
//! McKean-Vlasov dynamics. Computes Nash-equilibrium feedback laws, ergodic
//! constants and value functions from coupled algebraic Riccati systems, then
//! validates them by interacting-particle simulation, Master-equation residual
//! checks and Nash-deviation experiments.

pub mod hamiltonian;
pub mod measures;
pub mod mvcalculus;
pub mod riccati;
pub mod simulate;
