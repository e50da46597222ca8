//! Canonical wire encodings for every persisted or transmitted object, plus
//! mDNS TXT framing and the BLE pointer record.
//!
//! Every frame is `"PDS1" || type_tag || fields`, where each field is
//! `tag(1) || length(2, big-endian) || value`. Parsing is strict: fields
//! must appear in their defined order, unknown or out-of-place tags are
//! rejected, trailing bytes are rejected, and every structural invariant is
//! validated before an object is returned. Encoding is a function of the
//! object, so byte equality of encodings coincides with semantic equality.

use blstrs::{G1Affine, G2Affine, Scalar};
use p256::ecdsa::Signature;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use thiserror::Error;

use crate::discovery::Broadcast;
use crate::mutual_auth::{AuthFinish, AuthInit, AuthResponse};
use crate::pairing_ibe::{
    gt_from_bytes, gt_to_bytes, CurveId, GroupParams, IbeCiphertext, IbeIdentityKey,
    MasterPublicKey, MasterSecretKey, G1_BYTES, G2_BYTES, GT_BYTES,
};
use crate::prefix_crypto::{HierName, PrefixCiphertext, PrefixKeyRing, PrefixPolicy};
use crate::principals::{
    verifying_key_bytes, verifying_key_from_bytes, Blessing, Certificate, SigAlgorithm,
    SigningKeyPair, TrustedRoots, SIGNATURE_BYTES, VERIFYING_KEY_BYTES,
};

pub const MAGIC: [u8; 4] = *b"PDS1";

/// Per-branch serialized overhead of a prefix ciphertext over its payload:
/// the branch field header, the nested frame header, the three fixed group
/// and seed fields with headers, the symmetric-ciphertext field header, and
/// the authenticator tag.
pub const PREFIX_BRANCH_OVERHEAD: usize = 3 + 5 + (3 + 48) + (3 + 48) + (3 + 32) + 3 + 16;

/// mDNS TXT advertisement budget in bytes.
pub const MDNS_MAX_ADVERT: usize = 1300;
/// Generic service label; deliberately carries no service-specific data.
pub const MDNS_SERVICE_LABEL: &str = "_privdisc._tcp.local";
/// Chunk size for base64url TXT values.
pub const TXT_CHUNK: usize = 240;

/// Fixed length of the BLE pointer record.
pub const BLE_POINTER_BYTES: usize = 31;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated frame")]
    Truncated,
    #[error("unknown format version")]
    UnknownVersion,
    #[error("unexpected or unknown field tag")]
    UnknownTag,
    #[error("malformed frame: {0}")]
    Malformed(&'static str),
    #[error("field exceeds maximum encodable length")]
    FieldTooLong,
    #[error("advertisement exceeds the {MDNS_MAX_ADVERT}-byte budget")]
    Oversize,
}

/// Frame type tags.
pub mod frame_type {
    pub const MASTER_PUBLIC: u8 = 1;
    pub const IDENTITY_KEY: u8 = 2;
    pub const KEYRING: u8 = 3;
    pub const BLESSING: u8 = 4;
    pub const POLICY: u8 = 5;
    pub const PREFIX_CT: u8 = 6;
    pub const BROADCAST: u8 = 7;
    pub const AUTH_INIT: u8 = 8;
    pub const AUTH_RESPONSE: u8 = 9;
    pub const AUTH_FINISH: u8 = 10;
    pub const CONNECT_REQUEST: u8 = 11;
    pub const CONNECT_RESPONSE: u8 = 12;
    pub const TRUSTED_ROOTS: u8 = 13;
    pub const MASTER_SECRET: u8 = 14;
    pub const SIGNING_SECRET: u8 = 15;
    pub const CERTIFICATE: u8 = 16;
    pub const IBE_CT: u8 = 17;
    pub const ANCHOR: u8 = 18;
}

pub struct FrameWriter {
    buf: Vec<u8>,
}

impl FrameWriter {
    fn new(type_tag: u8) -> Self {
        let mut buf = Vec::with_capacity(64);
        buf.extend_from_slice(&MAGIC);
        buf.push(type_tag);
        FrameWriter { buf }
    }

    fn field(&mut self, tag: u8, value: &[u8]) -> Result<(), WireError> {
        let len = u16::try_from(value.len()).map_err(|_| WireError::FieldTooLong)?;
        self.buf.push(tag);
        self.buf.extend_from_slice(&len.to_be_bytes());
        self.buf.extend_from_slice(value);
        Ok(())
    }

    fn u64_field(&mut self, tag: u8, value: u64) -> Result<(), WireError> {
        self.field(tag, &value.to_be_bytes())
    }

    fn nested<T: WireObject>(&mut self, tag: u8, obj: &T) -> Result<(), WireError> {
        self.field(tag, &encode(obj)?)
    }

    fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct FrameReader<'a> {
    rest: &'a [u8],
}

impl<'a> FrameReader<'a> {
    fn open(bytes: &'a [u8], expect_type: u8) -> Result<Self, WireError> {
        if bytes.len() < 5 {
            return Err(WireError::Truncated);
        }
        if bytes[..3] != MAGIC[..3] {
            return Err(WireError::Malformed("bad magic"));
        }
        if bytes[3] != MAGIC[3] {
            return Err(WireError::UnknownVersion);
        }
        if bytes[4] != expect_type {
            return Err(WireError::Malformed("unexpected frame type"));
        }
        Ok(FrameReader { rest: &bytes[5..] })
    }

    fn peek_tag(&self) -> Option<u8> {
        self.rest.first().copied()
    }

    /// Read the next field, which must carry `tag`.
    fn field(&mut self, tag: u8) -> Result<&'a [u8], WireError> {
        match self.try_field(tag)? {
            Some(v) => Ok(v),
            None => {
                if self.rest.is_empty() {
                    Err(WireError::Truncated)
                } else {
                    Err(WireError::UnknownTag)
                }
            }
        }
    }

    /// Read the next field if it carries `tag`.
    fn try_field(&mut self, tag: u8) -> Result<Option<&'a [u8]>, WireError> {
        if self.peek_tag() != Some(tag) {
            return Ok(None);
        }
        if self.rest.len() < 3 {
            return Err(WireError::Truncated);
        }
        let len = u16::from_be_bytes([self.rest[1], self.rest[2]]) as usize;
        if self.rest.len() < 3 + len {
            return Err(WireError::Truncated);
        }
        let value = &self.rest[3..3 + len];
        self.rest = &self.rest[3 + len..];
        Ok(Some(value))
    }

    fn repeated(&mut self, tag: u8) -> Result<Vec<&'a [u8]>, WireError> {
        let mut out = Vec::new();
        while let Some(v) = self.try_field(tag)? {
            out.push(v);
        }
        Ok(out)
    }

    fn fixed<const N: usize>(&mut self, tag: u8) -> Result<[u8; N], WireError> {
        let v = self.field(tag)?;
        v.try_into().map_err(|_| WireError::Malformed("bad length"))
    }

    fn u64_field(&mut self, tag: u8) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.fixed::<8>(tag)?))
    }

    fn nested<T: WireObject>(&mut self, tag: u8) -> Result<T, WireError> {
        decode(self.field(tag)?)
    }

    fn finish(self) -> Result<(), WireError> {
        if self.rest.is_empty() {
            Ok(())
        } else {
            Err(WireError::UnknownTag)
        }
    }
}

/// A type with a canonical frame encoding.
pub trait WireObject: Sized {
    const TYPE_TAG: u8;
    fn write_fields(&self, w: &mut FrameWriter) -> Result<(), WireError>;
    fn read_fields(r: &mut FrameReader<'_>) -> Result<Self, WireError>;
}

pub fn encode<T: WireObject>(obj: &T) -> Result<Vec<u8>, WireError> {
    let mut w = FrameWriter::new(T::TYPE_TAG);
    obj.write_fields(&mut w)?;
    Ok(w.finish())
}

/// The type tag of a frame, if the bytes start like one.
pub fn frame_type_of(bytes: &[u8]) -> Option<u8> {
    (bytes.len() >= 5 && bytes[..4] == MAGIC).then(|| bytes[4])
}

pub fn decode<T: WireObject>(bytes: &[u8]) -> Result<T, WireError> {
    let mut r = FrameReader::open(bytes, T::TYPE_TAG)?;
    let obj = T::read_fields(&mut r)?;
    r.finish()?;
    Ok(obj)
}

fn g1_from(bytes: &[u8]) -> Result<G1Affine, WireError> {
    let arr: [u8; G1_BYTES] = bytes
        .try_into()
        .map_err(|_| WireError::Malformed("bad G1 length"))?;
    Option::from(G1Affine::from_compressed(&arr)).ok_or(WireError::Malformed("invalid G1 point"))
}

fn g2_from(bytes: &[u8]) -> Result<G2Affine, WireError> {
    let arr: [u8; G2_BYTES] = bytes
        .try_into()
        .map_err(|_| WireError::Malformed("bad G2 length"))?;
    Option::from(G2Affine::from_compressed(&arr)).ok_or(WireError::Malformed("invalid G2 point"))
}

fn scalar_from(bytes: &[u8]) -> Result<Scalar, WireError> {
    let arr: [u8; 32] = bytes
        .try_into()
        .map_err(|_| WireError::Malformed("bad scalar length"))?;
    Option::from(Scalar::from_bytes_be(&arr)).ok_or(WireError::Malformed("scalar out of range"))
}

fn signature_from(bytes: &[u8]) -> Result<Signature, WireError> {
    if bytes.len() != SIGNATURE_BYTES {
        return Err(WireError::Malformed("bad signature length"));
    }
    Signature::from_slice(bytes).map_err(|_| WireError::Malformed("invalid signature"))
}

fn name_from(bytes: &[u8]) -> Result<HierName, WireError> {
    let s = std::str::from_utf8(bytes).map_err(|_| WireError::Malformed("name not UTF-8"))?;
    HierName::parse(s).map_err(|_| WireError::Malformed("invalid name"))
}

impl WireObject for MasterPublicKey {
    const TYPE_TAG: u8 = frame_type::MASTER_PUBLIC;

    fn write_fields(&self, w: &mut FrameWriter) -> Result<(), WireError> {
        w.field(1, &[self.curve.tag()])?;
        w.field(2, &self.x_pub.to_compressed())?;
        w.field(3, &self.y_pub.to_compressed())?;
        w.field(
            4,
            &gt_to_bytes(&self.gt_base).map_err(|_| WireError::Malformed("bad gt"))?,
        )
    }

    fn read_fields(r: &mut FrameReader<'_>) -> Result<Self, WireError> {
        let curve_tag = r.fixed::<1>(1)?;
        let curve = CurveId::from_tag(curve_tag[0]).map_err(|_| WireError::UnknownVersion)?;
        let x_pub = g1_from(r.field(2)?)?;
        let y_pub = g1_from(r.field(3)?)?;
        let gt_raw: [u8; GT_BYTES] = r.fixed(4)?;
        let gt_base = gt_from_bytes(&gt_raw).map_err(|_| WireError::Malformed("invalid gt"))?;
        // gt_base is scheme-defined: the pairing of the generators.
        if gt_base != GroupParams::new(curve).gt_generator() {
            return Err(WireError::Malformed("gt base mismatch"));
        }
        Ok(MasterPublicKey {
            curve,
            x_pub,
            y_pub,
            gt_base,
        })
    }
}

impl WireObject for MasterSecretKey {
    const TYPE_TAG: u8 = frame_type::MASTER_SECRET;

    fn write_fields(&self, w: &mut FrameWriter) -> Result<(), WireError> {
        w.field(1, &[CurveId::Bls12381.tag()])?;
        w.field(2, &self.x.to_bytes_be())?;
        w.field(3, &self.y.to_bytes_be())
    }

    fn read_fields(r: &mut FrameReader<'_>) -> Result<Self, WireError> {
        let curve_tag = r.fixed::<1>(1)?;
        CurveId::from_tag(curve_tag[0]).map_err(|_| WireError::UnknownVersion)?;
        Ok(MasterSecretKey {
            x: scalar_from(r.field(2)?)?,
            y: scalar_from(r.field(3)?)?,
        })
    }
}

impl WireObject for IbeIdentityKey {
    const TYPE_TAG: u8 = frame_type::IDENTITY_KEY;

    fn write_fields(&self, w: &mut FrameWriter) -> Result<(), WireError> {
        w.field(1, &self.identity)?;
        w.field(2, &self.r.to_bytes_be())?;
        w.field(3, &self.k.to_compressed())
    }

    fn read_fields(r: &mut FrameReader<'_>) -> Result<Self, WireError> {
        let identity = r.field(1)?.to_vec();
        if identity.is_empty() {
            return Err(WireError::Malformed("empty identity"));
        }
        let randomizer = scalar_from(r.field(2)?)?;
        let k = g2_from(r.field(3)?)?;
        Ok(IbeIdentityKey {
            identity,
            r: randomizer,
            k,
        })
    }
}

impl WireObject for PrefixKeyRing {
    const TYPE_TAG: u8 = frame_type::KEYRING;

    fn write_fields(&self, w: &mut FrameWriter) -> Result<(), WireError> {
        w.field(1, self.name().canonical().as_bytes())?;
        for key in self.keys() {
            w.nested(2, key)?;
        }
        Ok(())
    }

    fn read_fields(r: &mut FrameReader<'_>) -> Result<Self, WireError> {
        let name = name_from(r.field(1)?)?;
        let keys = r
            .repeated(2)?
            .into_iter()
            .map(decode::<IbeIdentityKey>)
            .collect::<Result<Vec<_>, _>>()?;
        if keys.len() != name.depth() {
            return Err(WireError::Truncated);
        }
        PrefixKeyRing::from_parts(name, keys)
            .map_err(|_| WireError::Malformed("inconsistent ring"))
    }
}

impl WireObject for Certificate {
    const TYPE_TAG: u8 = frame_type::CERTIFICATE;

    fn write_fields(&self, w: &mut FrameWriter) -> Result<(), WireError> {
        w.field(1, &[SigAlgorithm::EcdsaP256.tag()])?;
        w.field(2, self.extension.as_bytes())?;
        w.field(3, &verifying_key_bytes(&self.subject_public))?;
        w.field(4, &self.issuer_signature.to_bytes())
    }

    fn read_fields(r: &mut FrameReader<'_>) -> Result<Self, WireError> {
        let alg = r.fixed::<1>(1)?;
        SigAlgorithm::from_tag(alg[0]).map_err(|_| WireError::Malformed("unknown algorithm"))?;
        let extension = std::str::from_utf8(r.field(2)?)
            .map_err(|_| WireError::Malformed("extension not UTF-8"))?
            .to_string();
        let key_bytes: [u8; VERIFYING_KEY_BYTES] = r.fixed(3)?;
        let subject_public = verifying_key_from_bytes(&key_bytes)
            .map_err(|_| WireError::Malformed("invalid verification key"))?;
        let issuer_signature = signature_from(r.field(4)?)?;
        Ok(Certificate {
            extension,
            subject_public,
            issuer_signature,
        })
    }
}

impl WireObject for Blessing {
    const TYPE_TAG: u8 = frame_type::BLESSING;

    fn write_fields(&self, w: &mut FrameWriter) -> Result<(), WireError> {
        w.field(1, &(self.chain().len() as u16).to_be_bytes())?;
        for cert in self.chain() {
            w.nested(2, cert)?;
        }
        Ok(())
    }

    fn read_fields(r: &mut FrameReader<'_>) -> Result<Self, WireError> {
        let count = u16::from_be_bytes(r.fixed::<2>(1)?) as usize;
        let chain = r
            .repeated(2)?
            .into_iter()
            .map(decode::<Certificate>)
            .collect::<Result<Vec<_>, _>>()?;
        if chain.len() != count {
            return Err(WireError::Truncated);
        }
        Blessing::from_chain(chain).map_err(|_| WireError::Malformed("invalid chain"))
    }
}

impl WireObject for PrefixPolicy {
    const TYPE_TAG: u8 = frame_type::POLICY;

    fn write_fields(&self, w: &mut FrameWriter) -> Result<(), WireError> {
        w.field(1, &(self.prefixes().len() as u16).to_be_bytes())?;
        for prefix in self.prefixes() {
            w.field(2, prefix.canonical().as_bytes())?;
        }
        Ok(())
    }

    fn read_fields(r: &mut FrameReader<'_>) -> Result<Self, WireError> {
        let count = u16::from_be_bytes(r.fixed::<2>(1)?) as usize;
        let names = r
            .repeated(2)?
            .into_iter()
            .map(name_from)
            .collect::<Result<Vec<_>, _>>()?;
        if names.len() != count {
            return Err(WireError::Malformed("policy count mismatch"));
        }
        let policy =
            PrefixPolicy::new(names.clone()).map_err(|_| WireError::Malformed("empty policy"))?;
        // Canonical form: encoded prefixes must already be normalized.
        if policy.prefixes() != names.as_slice() {
            return Err(WireError::Malformed("policy not in canonical form"));
        }
        Ok(policy)
    }
}

impl WireObject for IbeCiphertext {
    const TYPE_TAG: u8 = frame_type::IBE_CT;

    fn write_fields(&self, w: &mut FrameWriter) -> Result<(), WireError> {
        w.field(1, &self.c1.to_compressed())?;
        w.field(2, &self.c2.to_compressed())?;
        w.field(3, &self.seed_ct)?;
        w.field(4, &self.sym_ct)
    }

    fn read_fields(r: &mut FrameReader<'_>) -> Result<Self, WireError> {
        let c1 = g1_from(r.field(1)?)?;
        let c2 = g1_from(r.field(2)?)?;
        let seed_ct = r.fixed::<32>(3)?;
        let sym_ct = r.field(4)?.to_vec();
        if sym_ct.len() < crate::aead::TAG_LEN {
            return Err(WireError::Malformed("symmetric ciphertext too short"));
        }
        Ok(IbeCiphertext {
            c1,
            c2,
            seed_ct,
            sym_ct,
        })
    }
}

impl WireObject for PrefixCiphertext {
    const TYPE_TAG: u8 = frame_type::PREFIX_CT;

    fn write_fields(&self, w: &mut FrameWriter) -> Result<(), WireError> {
        w.nested(1, self.policy())?;
        for (_, ct) in self.branches() {
            w.nested(2, ct)?;
        }
        Ok(())
    }

    fn read_fields(r: &mut FrameReader<'_>) -> Result<Self, WireError> {
        let policy: PrefixPolicy = r.nested(1)?;
        let cts = r
            .repeated(2)?
            .into_iter()
            .map(decode::<IbeCiphertext>)
            .collect::<Result<Vec<_>, _>>()?;
        if cts.len() != policy.prefixes().len() {
            return Err(WireError::Malformed("branch count mismatch"));
        }
        let branches = policy
            .prefixes()
            .iter()
            .cloned()
            .zip(cts)
            .collect::<Vec<_>>();
        PrefixCiphertext::from_parts(policy, branches)
            .map_err(|_| WireError::Malformed("inconsistent ciphertext"))
    }
}

impl WireObject for TrustedRoots {
    const TYPE_TAG: u8 = frame_type::TRUSTED_ROOTS;

    fn write_fields(&self, w: &mut FrameWriter) -> Result<(), WireError> {
        w.field(1, &(self.anchors().len() as u16).to_be_bytes())?;
        for (name, key) in self.anchors() {
            let mut inner = FrameWriter::new(frame_type::ANCHOR);
            inner.field(1, name.as_bytes())?;
            inner.field(2, &verifying_key_bytes(key))?;
            w.field(2, &inner.finish())?;
        }
        Ok(())
    }

    fn read_fields(r: &mut FrameReader<'_>) -> Result<Self, WireError> {
        let count = u16::from_be_bytes(r.fixed::<2>(1)?) as usize;
        let mut anchors = Vec::new();
        for raw in r.repeated(2)? {
            let mut inner = FrameReader::open(raw, frame_type::ANCHOR)?;
            let name = std::str::from_utf8(inner.field(1)?)
                .map_err(|_| WireError::Malformed("anchor name not UTF-8"))?
                .to_string();
            let key_bytes: [u8; VERIFYING_KEY_BYTES] = inner.fixed(2)?;
            let key = verifying_key_from_bytes(&key_bytes)
                .map_err(|_| WireError::Malformed("invalid anchor key"))?;
            inner.finish()?;
            anchors.push((name, key));
        }
        if anchors.len() != count {
            return Err(WireError::Truncated);
        }
        Ok(TrustedRoots::new(anchors))
    }
}

impl WireObject for SigningKeyPair {
    const TYPE_TAG: u8 = frame_type::SIGNING_SECRET;

    fn write_fields(&self, w: &mut FrameWriter) -> Result<(), WireError> {
        w.field(1, &[SigAlgorithm::EcdsaP256.tag()])?;
        w.field(2, &self.secret_bytes())
    }

    fn read_fields(r: &mut FrameReader<'_>) -> Result<Self, WireError> {
        let alg = r.fixed::<1>(1)?;
        SigAlgorithm::from_tag(alg[0]).map_err(|_| WireError::Malformed("unknown algorithm"))?;
        let secret = r.fixed::<32>(2)?;
        SigningKeyPair::from_secret_bytes(&secret)
            .map_err(|_| WireError::Malformed("invalid signing key"))
    }
}

// --- protocol messages -------------------------------------------------------

impl WireObject for AuthInit {
    const TYPE_TAG: u8 = frame_type::AUTH_INIT;

    fn write_fields(&self, w: &mut FrameWriter) -> Result<(), WireError> {
        w.field(1, &self.sid)?;
        w.field(2, &self.client_share.to_compressed())
    }

    fn read_fields(r: &mut FrameReader<'_>) -> Result<Self, WireError> {
        Ok(AuthInit {
            sid: r.fixed::<16>(1)?,
            client_share: g1_from(r.field(2)?)?,
        })
    }
}

impl WireObject for AuthResponse {
    const TYPE_TAG: u8 = frame_type::AUTH_RESPONSE;

    fn write_fields(&self, w: &mut FrameWriter) -> Result<(), WireError> {
        w.field(1, &self.sid)?;
        w.field(2, &self.server_share.to_compressed())?;
        w.field(3, &self.payload)
    }

    fn read_fields(r: &mut FrameReader<'_>) -> Result<Self, WireError> {
        Ok(AuthResponse {
            sid: r.fixed::<16>(1)?,
            server_share: g1_from(r.field(2)?)?,
            payload: r.field(3)?.to_vec(),
        })
    }
}

impl WireObject for AuthFinish {
    const TYPE_TAG: u8 = frame_type::AUTH_FINISH;

    fn write_fields(&self, w: &mut FrameWriter) -> Result<(), WireError> {
        w.field(1, &self.sid)?;
        w.field(2, &self.payload)
    }

    fn read_fields(r: &mut FrameReader<'_>) -> Result<Self, WireError> {
        Ok(AuthFinish {
            sid: r.fixed::<16>(1)?,
            payload: r.field(2)?.to_vec(),
        })
    }
}

impl WireObject for Broadcast {
    const TYPE_TAG: u8 = frame_type::BROADCAST;

    fn write_fields(&self, w: &mut FrameWriter) -> Result<(), WireError> {
        w.field(1, &self.bid.0)?;
        w.u64_field(2, self.expiry_hint)?;
        w.nested(3, &self.adv)
    }

    fn read_fields(r: &mut FrameReader<'_>) -> Result<Self, WireError> {
        Ok(Broadcast {
            bid: crate::discovery::BroadcastId(r.fixed::<16>(1)?),
            expiry_hint: r.u64_field(2)?,
            adv: r.nested(3)?,
        })
    }
}

impl WireObject for crate::discovery::ConnectRequest {
    const TYPE_TAG: u8 = frame_type::CONNECT_REQUEST;

    fn write_fields(&self, w: &mut FrameWriter) -> Result<(), WireError> {
        w.field(1, &self.bid.0)?;
        w.field(2, &self.sid)?;
        w.field(3, &self.client_share.to_compressed())?;
        w.field(4, &self.c1)?;
        w.field(5, &[self.early_data_ct.is_some() as u8])?;
        if let Some(c2) = &self.early_data_ct {
            w.field(6, c2)?;
        }
        Ok(())
    }

    fn read_fields(r: &mut FrameReader<'_>) -> Result<Self, WireError> {
        let bid = crate::discovery::BroadcastId(r.fixed::<16>(1)?);
        let sid = r.fixed::<16>(2)?;
        let client_share = g1_from(r.field(3)?)?;
        let c1 = r.field(4)?.to_vec();
        let early_data_ct = match r.fixed::<1>(5)? {
            [0] => None,
            [1] => Some(r.field(6)?.to_vec()),
            _ => return Err(WireError::Malformed("bad presence flag")),
        };
        Ok(crate::discovery::ConnectRequest {
            bid,
            sid,
            client_share,
            c1,
            early_data_ct,
        })
    }
}

impl WireObject for crate::discovery::ConnectResponse {
    const TYPE_TAG: u8 = frame_type::CONNECT_RESPONSE;

    fn write_fields(&self, w: &mut FrameWriter) -> Result<(), WireError> {
        w.field(1, &self.bid.0)?;
        w.field(2, &self.sid)?;
        w.field(3, &self.server_share.to_compressed())?;
        w.field(4, &self.c1)?;
        w.field(5, &[self.app_data_ct.is_some() as u8])?;
        if let Some(c2) = &self.app_data_ct {
            w.field(6, c2)?;
        }
        Ok(())
    }

    fn read_fields(r: &mut FrameReader<'_>) -> Result<Self, WireError> {
        let bid = crate::discovery::BroadcastId(r.fixed::<16>(1)?);
        let sid = r.fixed::<16>(2)?;
        let server_share = g1_from(r.field(3)?)?;
        let c1 = r.field(4)?.to_vec();
        let app_data_ct = match r.fixed::<1>(5)? {
            [0] => None,
            [1] => Some(r.field(6)?.to_vec()),
            _ => return Err(WireError::Malformed("bad presence flag")),
        };
        Ok(crate::discovery::ConnectResponse {
            bid,
            sid,
            server_share,
            c1,
            app_data_ct,
        })
    }
}

// --- mDNS TXT framing ----------------------------------------------------------

/// A service advertisement rendered as mDNS TXT key/value pairs under a
/// generic service label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MdnsTxt {
    pub service_label: &'static str,
    pub entries: Vec<(String, String)>,
}

/// Chunk an encoded broadcast into TXT values `p0, p1, ...` (base64url, no
/// padding). Fails when the encoding exceeds the mDNS budget; oversize
/// advertisements must use the BLE pointer mode instead.
pub fn to_mdns_txt(broadcast: &Broadcast) -> Result<MdnsTxt, WireError> {
    let bytes = encode(broadcast)?;
    if bytes.len() > MDNS_MAX_ADVERT {
        return Err(WireError::Oversize);
    }
    let encoded = URL_SAFE_NO_PAD.encode(&bytes);
    let entries = encoded
        .as_bytes()
        .chunks(TXT_CHUNK)
        .enumerate()
        .map(|(i, chunk)| {
            (
                format!("p{i}"),
                String::from_utf8(chunk.to_vec()).expect("base64 output is ASCII"),
            )
        })
        .collect();
    Ok(MdnsTxt {
        service_label: MDNS_SERVICE_LABEL,
        entries,
    })
}

/// Reassemble a broadcast from TXT entries.
pub fn from_mdns_txt(txt: &MdnsTxt) -> Result<Broadcast, WireError> {
    let mut joined = String::new();
    for i in 0..txt.entries.len() {
        let key = format!("p{i}");
        let value = txt
            .entries
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v)
            .ok_or(WireError::Malformed("missing TXT chunk"))?;
        joined.push_str(value);
    }
    let bytes = URL_SAFE_NO_PAD
        .decode(joined.as_bytes())
        .map_err(|_| WireError::Malformed("invalid base64"))?;
    decode(&bytes)
}

// --- BLE pointer record ----------------------------------------------------------

/// Endpoint pointer fitting a 31-byte BLE advertisement: it names where to
/// fetch the real advertisement and reveals nothing about the service.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlePointer {
    /// IPv6 address (or IPv4-mapped) of the auxiliary advertisement host.
    pub address: [u8; 16],
    pub port: u16,
}

const BLE_MAGIC: [u8; 2] = *b"PD";
const BLE_VERSION: u8 = 1;

pub fn to_ble_pointer(pointer: &BlePointer) -> [u8; BLE_POINTER_BYTES] {
    let mut out = [0u8; BLE_POINTER_BYTES];
    out[..2].copy_from_slice(&BLE_MAGIC);
    out[2] = BLE_VERSION;
    out[3..19].copy_from_slice(&pointer.address);
    out[19..21].copy_from_slice(&pointer.port.to_be_bytes());
    // bytes 21..31 reserved, zero
    out
}

pub fn parse_ble_pointer(bytes: &[u8]) -> Result<BlePointer, WireError> {
    let arr: [u8; BLE_POINTER_BYTES] = bytes.try_into().map_err(|_| WireError::Truncated)?;
    if arr[..2] != BLE_MAGIC {
        return Err(WireError::Malformed("bad pointer magic"));
    }
    if arr[2] != BLE_VERSION {
        return Err(WireError::UnknownVersion);
    }
    if arr[21..].iter().any(|&b| b != 0) {
        return Err(WireError::Malformed("reserved bytes not zero"));
    }
    Ok(BlePointer {
        address: arr[3..19].try_into().expect("slice is 16 bytes"),
        port: u16::from_be_bytes([arr[19], arr[20]]),
    })
}
