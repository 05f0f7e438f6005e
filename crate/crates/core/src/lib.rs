//! Whole-body mobile manipulation learning at desk scale.

pub mod bench;
pub mod collect;
pub mod config;
pub mod cotrain;
pub mod dataset;
pub mod executor;
pub mod nn;
pub mod sim;
pub mod vinn;

/// Derives an independent stream seed from a base seed (SplitMix64 finaliser).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
