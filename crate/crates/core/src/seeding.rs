//! Stable seed derivation so per-sample work is independent of worker count
//! and iteration order.

/// FNV-1a 64-bit over the key, then a splitmix64 finalizer mixed with the
/// global seed. Stable across platforms and runs.
pub fn mix_seed(seed: u64, key: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in key {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
