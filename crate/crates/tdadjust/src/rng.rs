// SPDX-License-Identifier: MIT
//! Seeded substream discipline.
//!
//! Every random draw comes from a ChaCha8 stream keyed by
//! `(master seed, domain, replication, unit)`. Results are therefore
//! bit-identical regardless of execution order or thread count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Dataset simulation draws.
pub const DOMAIN_SIMULATION: u64 = 0;
/// Random CPTs for the exact membership oracle.
pub const DOMAIN_ORACLE_CPT: u64 = 1;

/// Stream for a (replication, unit) pair within a domain.
///
/// The stream id packs `domain` in the top byte, the replication in the middle
/// 48 bits, and the unit (for example a node index) in the low byte.
pub fn substream(master: u64, domain: u64, replication: u64, unit: u64) -> ChaCha8Rng {
    debug_assert!(unit < 256);
    debug_assert!(replication < 1 << 48);
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(domain << 56 | replication << 8 | unit);
    rng
}
