//! Domain-separated hashing, key expansion, and extraction primitives shared
//! by the encryption scheme and both handshakes.
//!
//! Every hash invocation is prefixed with a one-byte domain tag, and
//! multi-part inputs are length-framed, so no two call sites can collide.

use hmac::{Hmac, Mac};
use sha2::{Digest, Sha256};

type HmacSha256 = Hmac<Sha256>;

/// Domain tags. One byte each, never reused across purposes.
pub(crate) mod tag {
    /// Identity string to scalar (the BB2 identity hash).
    pub const IDENTITY: u8 = 0x01;
    /// FO seed + plaintext to encryption scalar.
    pub const FO_SEED: u8 = 0x02;
    /// Target-group element to seed mask.
    pub const FO_MASK: u8 = 0x03;
    /// FO seed to symmetric key.
    pub const FO_SYMKEY: u8 = 0x04;
    /// SIGMA handshake traffic key.
    pub const SIGMA_HTK: u8 = 0x05;
    /// SIGMA application traffic key.
    pub const SIGMA_ATK: u8 = 0x06;
    /// Discovery root secret (semi-static DH hash).
    pub const DISC_ROOT: u8 = 0x07;
    /// Discovery session hash (ephemeral-ephemeral DH).
    pub const DISC_SESSION: u8 = 0x08;
    /// Hierarchical-name digest.
    pub const NAME_DIGEST: u8 = 0x09;
    /// Blessing (certificate chain) digest.
    pub const BLESSING_DIGEST: u8 = 0x0a;
    /// Certificate parent-chain binding digest.
    pub const CHAIN_BIND: u8 = 0x0b;
}

/// SHA-256 over a domain tag followed by length-framed parts.
pub(crate) fn tagged_hash32(domain: u8, parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update([domain]);
    for part in parts {
        h.update((part.len() as u32).to_be_bytes());
        h.update(part);
    }
    h.finalize().into()
}

/// 512-bit expansion of the tagged input: two counter-separated SHA-256
/// blocks. Reduced mod p by the caller to keep scalar bias below 2^-128.
pub(crate) fn tagged_hash64(domain: u8, parts: &[&[u8]]) -> [u8; 64] {
    let mut out = [0u8; 64];
    for (i, chunk) in out.chunks_mut(32).enumerate() {
        let mut h = Sha256::new();
        h.update([domain, i as u8]);
        for part in parts {
            h.update((part.len() as u32).to_be_bytes());
            h.update(part);
        }
        chunk.copy_from_slice(&h.finalize());
    }
    out
}

/// Counter-mode PRG: expands a 32-byte seed into `N` 32-byte blocks using
/// HMAC-SHA-256 as the PRF.
pub(crate) fn prg_expand<const N: usize>(seed: &[u8; 32]) -> [[u8; 32]; N] {
    let mut out = [[0u8; 32]; N];
    for (i, block) in out.iter_mut().enumerate() {
        let mut mac = HmacSha256::new_from_slice(seed).expect("hmac accepts any key length");
        mac.update(&[i as u8]);
        block.copy_from_slice(&mac.finalize().into_bytes());
    }
    out
}

/// HMAC-based key extraction: `Extract(key, input)`.
pub(crate) fn extract_key(key: &[u8; 32], input: &[u8; 32]) -> [u8; 32] {
    let mut mac = HmacSha256::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(input);
    mac.finalize().into_bytes().into()
}
