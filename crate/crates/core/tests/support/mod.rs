#![allow(dead_code)]

pub mod oracles;
pub mod pipeline;
pub mod synth;
