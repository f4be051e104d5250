#![allow(dead_code)]

pub mod dynamics;
pub mod estimator;
pub mod runs;
pub mod spectral;
pub mod structural;
