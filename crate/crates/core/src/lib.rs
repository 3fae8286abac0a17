//! Desk-scale simulator and analysis toolkit for an electron-nuclear spin
//! register around a single optically active defect: DDRF two-qubit gate
//! dynamics, spectroscopy sweeps, Monte Carlo dephasing noise, echo
//! scheduling, and tomography algebra.

pub mod dynamics;
pub mod linalg;
pub mod noise;
pub mod register;
pub mod scheduler;
pub mod spectroscopy;
pub mod tomography;

pub use dynamics::{DensityMatrix, GateParams, Unitary};
pub use register::{NuclearSpinParams, RegisterConfig};
