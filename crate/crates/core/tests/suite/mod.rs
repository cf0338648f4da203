#![allow(dead_code)]

pub mod oracles;
pub mod properties;
pub mod samplers;
