//! Benchmark environments.

mod gridworld;
mod minigolf;

pub use gridworld::{GridworldConfig, TwoAreasGridworld};
pub use minigolf::{Minigolf, MinigolfConfig, MinigolfModelSimulator, HOLE_REWARD, MISS_REWARD, OVERSHOOT_REWARD};
