//! Private mutual authentication and private 0-RTT service discovery.
//!
//! Services advertise and authenticate without revealing who they are to
//! anyone outside their authorization policy. The building block is prefix
//! encryption over hierarchical names (`a/b/c` keys open ciphertexts for
//! `a`, `a/b`, or `a/b/c`), constructed from CCA-secure identity-based
//! encryption on a pairing curve. On top of it sit:
//!
//! - a SIGMA-style mutual authentication handshake in which the server's
//!   certificate chain travels prefix-encrypted under its own policy, with a
//!   cacheable-ciphertext mode and an unlinkable mode ([`mutual_auth`]);
//! - signed, prefix-encrypted service broadcasts carrying a semi-static DH
//!   share and expiry, enabling 0-RTT mutual authentication with early
//!   application data ([`discovery`]);
//! - canonical wire encodings plus mDNS TXT framing and a BLE pointer
//!   record ([`wire`]);
//! - an in-process adversarial message fabric with compromise hooks for
//!   protocol property testing ([`simnet`]).
//!
//! The `privdisc` binary exposes key issuance, advertising, discovery, a
//! loopback connection demo, and benchmarks.

pub mod bench;
pub mod cli;
pub mod discovery;
pub mod mutual_auth;
pub mod pairing_ibe;
pub mod prefix_crypto;
pub mod principals;
pub mod simnet;
pub mod wire;

mod aead;
mod framing;
mod hash;
