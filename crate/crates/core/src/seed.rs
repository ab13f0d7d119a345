//! Deterministic seed derivation for parallel workers.

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for `(worker, cycle)` under `base`; independent of scheduling order.
pub fn split_seed(base: u64, worker: u64, cycle: u64) -> u64 {
    mix64(mix64(mix64(base) ^ worker.wrapping_mul(0xD1B5_4A32_D192_ED03)) ^ cycle)
}
