//! Deterministic seeding.
//!
//! A single root seed fans out into independent ChaCha streams, one per
//! [`Role`], so that e.g. the pilots of a scenario can be regenerated without
//! touching the noise draws. Monte-Carlo trials get their own root seeds via
//! [`derive_seed`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// What a random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Role {
    Devices = 1,
    Pilots = 2,
    Activity = 3,
    Scattering = 4,
    Noise = 5,
    Impairment = 6,
}

/// The stream for `role` under `seed`.
pub fn stream(seed: u64, role: Role) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(role as u64);
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a root seed with a path of indices into a child seed.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(root), |acc, &i| splitmix64(acc ^ splitmix64(i)))
}
