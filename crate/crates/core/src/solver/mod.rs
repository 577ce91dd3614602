//! Saddle-point solver for min over θ of sup over (γ, λ) of
//! γ − P_n[Λ(γ + λᵗΦ(θ, ·))].
//!
//! The inner problem is strictly concave and solved by damped Newton; the
//! outer problem minimizes the resulting profile with a multistart
//! projected quasi-Newton search inside the parameter box.

mod blocks;
mod inner;
mod outer;

pub use blocks::{first_order_map, newton_blocks, schur_update, NewtonBlocks};
pub use inner::{inner_maximize, InnerSolution};
pub use outer::{outer_minimize, profile_objective, LocalRun, OuterTrace, Profile, SaddleSolution, StopReason};

use serde::{Deserialize, Serialize};

/// Tolerances and iteration caps. Every field has a default and the
/// effective values are echoed into reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Gradient-norm tolerance of the inner Newton iteration.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub armijo: f64,
    pub backtrack: f64,
    /// Inner values above this cap are taken as an unbounded supremum.
    pub divergence_cap: f64,
    /// Inner iterates beyond this norm are taken as escaping to infinity.
    pub escape_radius: f64,
    /// Multistart points per box dimension.
    pub grid_points: usize,
    /// Projected-gradient tolerance of the outer search.
    pub outer_tol: f64,
    pub step_tol: f64,
    pub outer_max_iter: usize,
    /// Local minima whose values differ by less than this are ties.
    pub value_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            inner_tol: 1e-10,
            inner_max_iter: 200,
            armijo: 1e-4,
            backtrack: 0.5,
            divergence_cap: 1e12,
            escape_radius: 1e10,
            grid_points: 8,
            outer_tol: 1e-10,
            step_tol: 1e-13,
            outer_max_iter: 200,
            value_tol: 1e-12,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> crate::Result<()> {
        use crate::GelError::Config;
        let positive = [
            ("inner_tol", self.inner_tol),
            ("armijo", self.armijo),
            ("divergence_cap", self.divergence_cap),
            ("escape_radius", self.escape_radius),
            ("outer_tol", self.outer_tol),
            ("step_tol", self.step_tol),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Config(format!("solver.{name} must be positive, got {v}")));
            }
        }
        if !(self.value_tol.is_finite() && self.value_tol >= 0.0) {
            return Err(Config("solver.value_tol must be nonnegative".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Config("solver.backtrack must lie in (0, 1)".into()));
        }
        if self.grid_points == 0 || self.inner_max_iter == 0 || self.outer_max_iter == 0 {
            return Err(Config(
                "solver.grid_points and iteration caps must be positive".into(),
            ));
        }
        Ok(())
    }
}
