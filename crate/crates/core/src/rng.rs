//! Reproducible random streams.
//!
//! Every stream used by the engine is a pure function of
//! `(master_seed, purpose, index)`, so results never depend on scheduling
//! or on how many workers share the load.

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Purpose tags separating independent stream families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Scenario = 1,
    TrialData = 2,
    Posterior = 3,
    Projection = 4,
    General = 5,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the stream `(master, purpose, index)`.
pub fn derive_seed(master: u64, purpose: Purpose, index: u64) -> u64 {
    splitmix(splitmix(splitmix(master) ^ (purpose as u64)) ^ index)
}

pub fn stream(master: u64, purpose: Purpose, index: u64) -> Stream {
    Stream::seed_from_u64(derive_seed(master, purpose, index))
}

/// Uniform draw on the open interval (0, 1); endpoints are redrawn.
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 && u < 1.0 {
            return u;
        }
    }
}
