//! Seeded random streams and the master-seed splitting function.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Name of the splitting scheme, written into run snapshots.
pub const SPLIT_SCHEME: &str = "splitmix64(master ^ fnv1a64(label))";

pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent component seed from a master seed and a label such
/// as `"pretrain/rel3"`.
pub fn derive(master: u64, label: &str) -> u64 {
    splitmix64(master ^ fnv1a64(label.as_bytes()))
}
