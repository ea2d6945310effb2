pub mod apf;
pub mod clustering;
pub mod geometry;
pub mod nmpc;
pub mod planner;
pub mod sim;
pub mod tracking;
