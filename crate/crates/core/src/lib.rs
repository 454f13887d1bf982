//! Contact-informed adaptive motion planning for serial manipulators.
//!
//! The pipeline turns joint-torque residuals into a contact flag, a contacted
//! link, a contact point and force on that link, and finally into smooth
//! deformations of the end-effector reference path:
//!
//! * [`robot`]: kinematics, Jacobians and inverse dynamics of the chain.
//! * [`detection`]: residuals, smoothed detection statistic, hysteresis and link localization.
//! * [`estimation`]: contact location and force by a damped least-squares fit along the link.
//! * [`planner`]: windowed force averaging and bump-shaped path deformation.
//! * [`sim`]: scenario files, the closed-loop simulator, metrics and trace export.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detection;
pub mod error;
pub mod estimation;
pub mod planner;
pub mod robot;
pub mod sim;

pub use error::{Error, Result};
