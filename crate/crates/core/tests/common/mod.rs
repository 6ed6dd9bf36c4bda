#![allow(dead_code)]

pub use prunelab_core::fixtures::*;

pub type TestRng = prunelab_core::rng::Rng;

pub fn rng(seed: u64) -> TestRng {
    prunelab_core::rng::seeded_rng(seed)
}
