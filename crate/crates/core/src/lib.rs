#![no_std]

extern crate alloc;

pub mod numerics;
pub mod metrics;
pub mod sae;
pub mod analysis;
pub mod matching;
pub mod statmodel;
