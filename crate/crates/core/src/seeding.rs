// SPDX-License-Identifier: Apache-2.0

use sha2::{Digest, Sha256};

fn digest(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

/// Derives an independent stream seed from a tuple of byte strings.
pub fn derive_seed(parts: &[&[u8]]) -> u64 {
    let d = digest(parts);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// 48-bit hex digest, used to build stable program ids.
pub fn short_hash(parts: &[&[u8]]) -> String {
    hex::encode(&digest(parts)[..6])
}
