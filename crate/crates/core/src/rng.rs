//! Counter-based seeding: every entity draws from its own ChaCha stream, so
//! results never depend on iteration order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream namespaces. Each gets the upper 16 bits of the ChaCha stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum Domain {
    Regions = 1,
    Pois = 2,
    Users = 3,
    Projection = 4,
    SakmInit = 5,
    Split = 6,
    Sampling = 7,
    Bootstrap = 8,
}

pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << 48) | (index & 0xFFFF_FFFF_FFFF));
    rng
}
