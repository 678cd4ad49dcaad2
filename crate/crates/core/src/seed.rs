use sha2::{Digest, Sha256};

/// Sub-seed for one `(scope, stage)` pair, stable across platforms and runs.
pub fn derive_seed(root: u64, scope: &str, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update((scope.len() as u64).to_le_bytes());
    h.update(scope.as_bytes());
    h.update((stage.len() as u64).to_le_bytes());
    h.update(stage.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8-byte prefix"))
}
