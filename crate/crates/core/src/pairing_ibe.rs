//! CCA-secure identity-based encryption over a pairing-friendly curve.
//!
//! The scheme is the second Boneh-Boyen construction (one pairing at
//! decryption, none at encryption) made CCA-secure with the Fujisaki-Okamoto
//! hybrid transform: a random 32-byte seed determines the encryption scalar
//! and the symmetric key, and decryption re-encrypts from the recovered seed
//! and rejects unless the entire ciphertext matches.
//!
//! Master secret is a pair of scalars `(x, y)`; the key for an identity is
//! `(r, g2^{1/(x + H(id) + r*y)})` for a per-key random `r`, so re-extraction
//! yields unlinkable but equally capable keys.

use blstrs::{pairing, Compress, G1Affine, G1Projective, G2Affine, G2Projective, Gt, Scalar};
use ff::{Field, PrimeField};
use group::prime::PrimeCurveAffine;
use group::{Curve, Group};
use num_bigint::BigUint;
use rand::{CryptoRng, RngCore};
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::aead;
use crate::hash::{tag, tagged_hash32, tagged_hash64};

/// Compressed size of a first-source-group element.
pub const G1_BYTES: usize = 48;
/// Compressed size of a second-source-group element.
pub const G2_BYTES: usize = 96;
/// Compressed size of a target-group element (torus compression).
pub const GT_BYTES: usize = 288;
/// FO seed length.
pub const SEED_BYTES: usize = 32;
/// Largest plaintext accepted by [`ibe_encrypt`].
pub const MAX_PLAINTEXT: usize = u16::MAX as usize;

const EXTRACT_RETRIES: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IbeError {
    #[error("unsupported curve identifier {0}")]
    UnsupportedCurve(u8),
    #[error("identity must be non-empty")]
    EmptyIdentity,
    #[error("plaintext exceeds {MAX_PLAINTEXT} bytes")]
    OversizePlaintext,
    #[error("could not derive an identity key after {EXTRACT_RETRIES} attempts")]
    DegenerateIdentityKey,
    #[error("decryption failed")]
    DecryptionFailed,
    #[error("malformed group element")]
    InvalidElement,
}

/// Identifier of the pairing-friendly curve backing a deployment. Carried in
/// every serialized key so artifacts from different curves cannot be mixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum CurveId {
    Bls12381 = 1,
}

impl CurveId {
    pub fn from_tag(tag: u8) -> Result<Self, IbeError> {
        match tag {
            1 => Ok(CurveId::Bls12381),
            other => Err(IbeError::UnsupportedCurve(other)),
        }
    }

    pub fn tag(self) -> u8 {
        self as u8
    }
}

/// Public parameters of the pairing group: generators of both source groups,
/// the pairing of the generators, and the prime group order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupParams {
    curve: CurveId,
}

impl GroupParams {
    pub fn new(curve: CurveId) -> Self {
        GroupParams { curve }
    }

    pub fn bls12_381() -> Self {
        GroupParams {
            curve: CurveId::Bls12381,
        }
    }

    pub fn curve(&self) -> CurveId {
        self.curve
    }

    pub fn g1(&self) -> G1Affine {
        G1Affine::generator()
    }

    pub fn g2(&self) -> G2Affine {
        G2Affine::generator()
    }

    /// `e(g1, g2)`, the generator of the target group.
    pub fn gt_generator(&self) -> Gt {
        Gt::generator()
    }

    /// The prime group order as a big-endian integer.
    pub fn order(&self) -> BigUint {
        scalar_modulus()
    }

    /// Non-degeneracy check: the paired generators must not map to identity.
    pub fn validate(&self) -> Result<(), IbeError> {
        let gt = pairing(&self.g1(), &self.g2());
        if bool::from(gt.is_identity()) || gt != self.gt_generator() {
            return Err(IbeError::InvalidElement);
        }
        Ok(())
    }
}

/// IBE master public key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MasterPublicKey {
    pub curve: CurveId,
    /// `g1^x`; blinds the hashed identity in the first ciphertext element.
    pub x_pub: G1Affine,
    /// `g1^y`; carries the per-key re-randomizer into the second element.
    pub y_pub: G1Affine,
    /// `e(g1, g2)`; base of the mask `v^s`.
    pub gt_base: Gt,
}

/// IBE master secret key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MasterSecretKey {
    pub x: Scalar,
    pub y: Scalar,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MasterKeyPair {
    pub public: MasterPublicKey,
    pub secret: MasterSecretKey,
}

/// Secret key for one identity string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IbeIdentityKey {
    pub identity: Vec<u8>,
    /// Per-key randomizer; fresh on every extraction.
    pub r: Scalar,
    /// `g2^{1/(x + H(identity) + r*y)}`.
    pub k: G2Affine,
}

/// Hybrid ciphertext: two source-group elements, the masked FO seed, and the
/// authenticated symmetric ciphertext.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IbeCiphertext {
    pub c1: G1Affine,
    pub c2: G1Affine,
    pub seed_ct: [u8; SEED_BYTES],
    pub sym_ct: Vec<u8>,
}

impl IbeCiphertext {
    /// Serialized overhead on top of the plaintext, excluding framing.
    pub const OVERHEAD: usize = G1_BYTES + G1_BYTES + SEED_BYTES + aead::TAG_LEN;
}

fn scalar_modulus() -> BigUint {
    let hex = Scalar::MODULUS.trim_start_matches("0x");
    BigUint::parse_bytes(hex.as_bytes(), 16).expect("modulus constant parses")
}

/// Reduce a 512-bit tagged hash modulo the group order.
fn wide_scalar(domain: u8, parts: &[&[u8]]) -> Scalar {
    let wide = tagged_hash64(domain, parts);
    let reduced = BigUint::from_bytes_be(&wide) % scalar_modulus();
    let digits = reduced.to_bytes_be();
    let mut bytes = [0u8; 32];
    bytes[32 - digits.len()..].copy_from_slice(&digits);
    Scalar::from_bytes_be(&bytes).expect("reduced value is below the modulus")
}

/// Map an identity string to a scalar. Deterministic, domain-separated, and
/// uniform up to bias below 2^-128.
pub fn hash_to_scalar(identity: &[u8]) -> Scalar {
    wide_scalar(tag::IDENTITY, &[identity])
}

/// FO seed-and-message hash: derives the encryption scalar `s`.
fn fo_scalar(seed: &[u8; SEED_BYTES], plaintext: &[u8]) -> Scalar {
    wide_scalar(tag::FO_SEED, &[seed, plaintext])
}

/// Canonical bytes of a target-group element, for hashing and serialization.
pub fn gt_to_bytes(gt: &Gt) -> Result<[u8; GT_BYTES], IbeError> {
    // Torus compression is undefined at the identity; no honest protocol
    // value ever lands there.
    if bool::from(gt.is_identity()) {
        return Err(IbeError::InvalidElement);
    }
    let mut out = [0u8; GT_BYTES];
    let mut cursor = &mut out[..];
    gt.write_compressed(&mut cursor)
        .map_err(|_| IbeError::InvalidElement)?;
    Ok(out)
}

pub fn gt_from_bytes(bytes: &[u8; GT_BYTES]) -> Result<Gt, IbeError> {
    Gt::read_compressed(&bytes[..]).map_err(|_| IbeError::InvalidElement)
}

/// Sample a uniformly random nonzero scalar.
pub fn random_scalar(rng: &mut (impl RngCore + CryptoRng)) -> Scalar {
    loop {
        let s = Scalar::random(&mut *rng);
        if !bool::from(s.is_zero()) {
            return s;
        }
    }
}

/// Generate a fresh master key pair.
pub fn ibe_setup(params: &GroupParams, rng: &mut (impl RngCore + CryptoRng)) -> MasterKeyPair {
    let x = random_scalar(rng);
    let y = random_scalar(rng);
    let g1 = G1Projective::generator();
    MasterKeyPair {
        public: MasterPublicKey {
            curve: params.curve(),
            x_pub: (g1 * x).to_affine(),
            y_pub: (g1 * y).to_affine(),
            gt_base: params.gt_generator(),
        },
        secret: MasterSecretKey { x, y },
    }
}

/// Extract an identity key. Resamples the randomizer internally if the key
/// denominator degenerates; fails only after bounded retries.
pub fn ibe_extract(
    msk: &MasterSecretKey,
    identity: &[u8],
    rng: &mut (impl RngCore + CryptoRng),
) -> Result<IbeIdentityKey, IbeError> {
    if identity.is_empty() {
        return Err(IbeError::EmptyIdentity);
    }
    let id_scalar = hash_to_scalar(identity);
    for _ in 0..EXTRACT_RETRIES {
        let r = random_scalar(rng);
        let denom = msk.x + id_scalar + r * msk.y;
        let inverse = denom.invert();
        if bool::from(inverse.is_some()) {
            let k = (G2Projective::generator() * inverse.unwrap()).to_affine();
            return Ok(IbeIdentityKey {
                identity: identity.to_vec(),
                r,
                k,
            });
        }
    }
    Err(IbeError::DegenerateIdentityKey)
}

/// Encrypt `plaintext` to `identity` under a fresh FO seed.
pub fn ibe_encrypt(
    mpk: &MasterPublicKey,
    identity: &[u8],
    plaintext: &[u8],
    rng: &mut (impl RngCore + CryptoRng),
) -> Result<IbeCiphertext, IbeError> {
    let mut seed = [0u8; SEED_BYTES];
    rng.fill_bytes(&mut seed);
    ibe_encrypt_seeded(mpk, identity, plaintext, &seed)
}

/// Deterministic encryption from an explicit FO seed. Exposed so tests and
/// vectors can reproduce ciphertexts byte-for-byte; the seed must never be
/// reused outside that setting.
pub fn ibe_encrypt_seeded(
    mpk: &MasterPublicKey,
    identity: &[u8],
    plaintext: &[u8],
    seed: &[u8; SEED_BYTES],
) -> Result<IbeCiphertext, IbeError> {
    if plaintext.len() > MAX_PLAINTEXT {
        return Err(IbeError::OversizePlaintext);
    }
    let s = fo_scalar(seed, plaintext);
    let id_scalar = hash_to_scalar(identity);

    // C1 = (X * g1^{H(id)})^s, computed from public data only.
    let base = G1Projective::from(mpk.x_pub) + G1Projective::generator() * id_scalar;
    let c1 = (base * s).to_affine();
    let c2 = (G1Projective::from(mpk.y_pub) * s).to_affine();

    let mask_point = mpk.gt_base * s;
    let mask = tagged_hash32(tag::FO_MASK, &[&gt_to_bytes(&mask_point)?]);
    let mut seed_ct = [0u8; SEED_BYTES];
    for (out, (a, b)) in seed_ct.iter_mut().zip(seed.iter().zip(mask.iter())) {
        *out = a ^ b;
    }

    let sym_key = tagged_hash32(tag::FO_SYMKEY, &[seed]);
    let sym_ct = aead::seal_onetime(&sym_key, plaintext);

    Ok(IbeCiphertext {
        c1,
        c2,
        seed_ct,
        sym_ct,
    })
}

/// Decrypt and verify. Recovers `v^s` through the single pairing, unmasks
/// the seed, decrypts, then re-encrypts the recovered (seed, plaintext) from
/// scratch and accepts only if the result matches the received ciphertext in
/// full. Every failure mode collapses to the same error.
pub fn ibe_decrypt(
    mpk: &MasterPublicKey,
    key: &IbeIdentityKey,
    ct: &IbeCiphertext,
) -> Result<Vec<u8>, IbeError> {
    let combined = (G1Projective::from(ct.c1) + G1Projective::from(ct.c2) * key.r).to_affine();
    let mask_point = pairing(&combined, &key.k);
    let mask_bytes = gt_to_bytes(&mask_point).map_err(|_| IbeError::DecryptionFailed)?;
    let mask = tagged_hash32(tag::FO_MASK, &[&mask_bytes]);

    let mut seed = [0u8; SEED_BYTES];
    for (out, (a, b)) in seed.iter_mut().zip(ct.seed_ct.iter().zip(mask.iter())) {
        *out = a ^ b;
    }

    let sym_key = tagged_hash32(tag::FO_SYMKEY, &[&seed]);
    let plaintext = aead::open_onetime(&sym_key, &ct.sym_ct).ok_or(IbeError::DecryptionFailed)?;

    let reencrypted = ibe_encrypt_seeded(mpk, &key.identity, &plaintext, &seed)
        .map_err(|_| IbeError::DecryptionFailed)?;
    let elements_match = reencrypted.c1 == ct.c1 && reencrypted.c2 == ct.c2;
    let bytes_match = bool::from(reencrypted.seed_ct.ct_eq(&ct.seed_ct))
        && bool::from(reencrypted.sym_ct.ct_eq(&ct.sym_ct));
    if !(elements_match && bytes_match) {
        return Err(IbeError::DecryptionFailed);
    }
    Ok(plaintext)
}
