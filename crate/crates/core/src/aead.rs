//! Thin authenticated-encryption layer (ChaCha20-Poly1305, 256-bit keys).
//!
//! Two nonce regimes: the hybrid encryption scheme uses single-use keys with
//! an all-zero nonce, and the handshakes use a 4-byte direction tag followed
//! by an 8-byte per-session counter.

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Nonce};

/// Poly1305 tag length added to every ciphertext.
pub(crate) const TAG_LEN: usize = 16;

/// Handshake AEAD directions. Each (key, direction) pair has its own counter
/// space, so nonces never repeat within a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Direction {
    AuthServerToClient,
    AuthClientToServer,
    DiscClientHandshake,
    DiscClientEarlyData,
    DiscServerHandshake,
    AppClientToServer,
    AppServerToClient,
}

impl Direction {
    fn bytes(self) -> [u8; 4] {
        match self {
            Direction::AuthServerToClient => *b"mas\0",
            Direction::AuthClientToServer => *b"mac\0",
            Direction::DiscClientHandshake => *b"dc1\0",
            Direction::DiscClientEarlyData => *b"dc2\0",
            Direction::DiscServerHandshake => *b"ds1\0",
            Direction::AppClientToServer => *b"apc\0",
            Direction::AppServerToClient => *b"aps\0",
        }
    }
}

fn nonce(dir: Direction, counter: u64) -> Nonce {
    let mut n = [0u8; 12];
    n[..4].copy_from_slice(&dir.bytes());
    n[4..].copy_from_slice(&counter.to_be_bytes());
    Nonce::from(n)
}

pub(crate) fn seal(key: &[u8; 32], dir: Direction, counter: u64, plaintext: &[u8]) -> Vec<u8> {
    ChaCha20Poly1305::new(key.into())
        .encrypt(&nonce(dir, counter), plaintext)
        .expect("chacha20poly1305 encryption is infallible for in-memory buffers")
}

pub(crate) fn open(
    key: &[u8; 32],
    dir: Direction,
    counter: u64,
    ciphertext: &[u8],
) -> Option<Vec<u8>> {
    ChaCha20Poly1305::new(key.into())
        .decrypt(&nonce(dir, counter), ciphertext)
        .ok()
}

/// Single-use encryption with an all-zero nonce. The key must be fresh
/// (derived from a one-time seed).
pub(crate) fn seal_onetime(key: &[u8; 32], plaintext: &[u8]) -> Vec<u8> {
    ChaCha20Poly1305::new(key.into())
        .encrypt(&Nonce::from([0u8; 12]), plaintext)
        .expect("chacha20poly1305 encryption is infallible for in-memory buffers")
}

pub(crate) fn open_onetime(key: &[u8; 32], ciphertext: &[u8]) -> Option<Vec<u8>> {
    ChaCha20Poly1305::new(key.into())
        .decrypt(&Nonce::from([0u8; 12]), ciphertext)
        .ok()
}
