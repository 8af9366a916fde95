//! Scheduling and trajectory planning for automated vehicles crossing two
//! adjacent signal-free intersections.

pub mod kinematics;
pub mod network;
pub mod scheduler;
pub mod sim;
pub mod trajectory;
pub mod validate;
