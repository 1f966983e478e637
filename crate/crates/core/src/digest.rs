//! Content digests and seed derivation.

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of the compact JSON serialization of `value`.
pub fn json_digest<T: Serialize + ?Sized>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("serializable value"))
}

/// Mixes a base seed with a path of integers into an independent stream seed
/// (splitmix64 finalizer per step).
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut z = base ^ 0x9e37_79b9_7f4a_7c15;
    for &p in path {
        z = splitmix(z ^ splitmix(p.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    splitmix(z)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a stream seed from a base seed and a string label.
pub fn derive_seed_str(base: u64, label: &str, path: &[u64]) -> u64 {
    let h = Sha256::digest(label.as_bytes());
    let tag = u64::from_le_bytes(h[..8].try_into().expect("8 bytes"));
    let mut full = vec![tag];
    full.extend_from_slice(path);
    derive_seed(base, &full)
}
