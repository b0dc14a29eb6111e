//! Allocation of virtual inertia and damping gains to converter-interfaced
//! generators by eigensensitivity-based sequential linear programming.
//!
//! The numerical core is generic over the scalar type through [`Real`];
//! `f64` is the working precision for the allocator and the CLI.

// Negated comparisons are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocator;
pub mod bundle;
pub mod case;
pub mod eigen;
pub mod error;
pub mod freq;
pub mod grid;
pub mod lp;
pub mod modal;
pub mod norms;
pub mod sim;

use nalgebra::{DMatrix, RealField};
use num_traits::{FromPrimitive, ToPrimitive};

pub use error::{Error, Result};

/// Scalar type accepted by every numerical routine.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive {
    /// Converts an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Converts to `f64` for reporting.
    fn f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }

    /// Machine epsilon.
    fn eps() -> Self {
        Self::default_epsilon()
    }
}

impl Real for f64 {}
impl Real for f32 {}

pub type Complex<T> = nalgebra::Complex<T>;

pub type GridCase64 = grid::GridCase<f64>;
pub type GridCase32 = grid::GridCase<f32>;
pub type LinearModel64 = grid::LinearModel<f64>;
pub type LinearModel32 = grid::LinearModel<f32>;
pub type AllocationState64 = grid::AllocationState<f64>;
pub type ModeSet64 = modal::ModeSet<f64>;
pub type ModeSet32 = modal::ModeSet<f32>;
pub type AggregateParams64 = freq::AggregateParams<f64>;
pub type AggregateParams32 = freq::AggregateParams<f32>;
pub type LinearProgram64 = lp::LinearProgram<f64>;
pub type LinearProgram32 = lp::LinearProgram<f32>;
pub type StateSpace64 = grid::StateSpace<f64>;
pub type StateSpace32 = grid::StateSpace<f32>;

/// Frobenius norm, used as the scale for relative tolerances.
pub(crate) fn fro<T: Real>(a: &DMatrix<T>) -> T {
    a.iter().fold(T::zero(), |s, &x| s + x * x).sqrt()
}

/// Modulus of a complex number.
pub(crate) fn cabs<T: Real>(z: Complex<T>) -> T {
    z.re.hypot(z.im)
}
