pub mod grid;
pub mod harness;
pub mod mapping;
pub mod matching;
pub mod planner;
pub mod policy;
pub mod rng;
pub mod world;
