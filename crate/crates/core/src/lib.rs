//! Multi-robot clutter removal: geometry, scenes, accessibility, motion
//! simulation and sequence planners.

pub mod access;
pub mod bench;
pub mod geometry;
pub mod motion;
pub mod planners;
pub mod scene;
pub mod world;

pub use bench::{BenchConfig, BenchRecord};
pub use geometry::Point2;
pub use motion::Trace;
pub use planners::{Algorithm, Plan, PlannerError, PlannerOptions};
pub use scene::{Fleet, GenMode, Instance};
pub use world::{ObjSet, World};
