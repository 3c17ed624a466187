//! Ready-made example networks: builders for every worked model, plus a
//! named preset registry consumed by the CLI.

pub mod combine;
pub mod filippov;
pub mod fixtures;
pub mod powergrid;
pub mod trains;

pub use trains::{
    build_trains, build_trains_oscillators, build_trains_zero_threshold, OscillatorParams,
    TrainsParams,
};
