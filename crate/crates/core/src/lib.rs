//! Closed-loop simulator and experiment harness for robotic nasopharyngeal
//! swab insertion.

pub mod contact;
pub mod experiments;
pub mod head;
pub mod observers;
pub mod phantom;
pub mod scalar;
pub mod servo;
pub mod sim;
pub mod swab;
pub mod trajectory;

pub use scalar::Real;
pub use sim::geometry::{ForceSample, Pose6, Twist6};

/// Swab model in double precision.
pub type Swab = swab::SwabBeam<f64>;
pub type AxialModel = swab::AxialContactModel<f64>;
