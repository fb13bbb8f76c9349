//! Deterministic seed derivation.
//!
//! Every random draw in the workbench flows from one master seed through
//! labelled child streams, so independent components (dataset sampling, gap
//! injection, weight init, shuffles) never share a stream and a whole run
//! is reproducible from the single recorded seed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a child seed from `parent` for the stream named `label` at `index`.
///
/// The derivation hashes `(parent, label, index)` so distinct labels or
/// indices give statistically independent streams regardless of the parent
/// value.
pub fn child_seed(parent: u64, label: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// RNG for the stream named `label` at `index` under `parent`.
pub fn stream(parent: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(child_seed(parent, label, index))
}

/// Hex SHA-256 digest of a byte string, used to fingerprint inputs in
/// manifests and reports.
pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn child_seeds_differ_by_label_and_index() {
        let a = child_seed(7, "gen", 0);
        let b = child_seed(7, "gen", 1);
        let c = child_seed(7, "gap", 0);
        let d = child_seed(8, "gen", 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn child_seed_is_stable() {
        // Frozen: report manifests depend on this mapping staying put.
        assert_eq!(child_seed(0, "gen", 0), child_seed(0, "gen", 0));
        let first = child_seed(42, "split", 3);
        let second = child_seed(42, "split", 3);
        assert_eq!(first, second);
    }

    #[test]
    fn hex_digest_is_sha256() {
        // sha256("") is a well-known constant.
        assert_eq!(
            hex_digest(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
