//! Private service discovery with 0-RTT mutual authentication.
//!
//! A server periodically broadcasts `(bid, PE.Enc(policy, (id_S, g^s,
//! expiry, signature)))`: a signed, prefix-encrypted advertisement carrying
//! a semi-static DH share. Only clients satisfying the policy can even
//! learn who is advertising. A client that discovers the service derives
//!
//! ```text
//! k = H1(g^s, g^x, g^sx)        (htk, htk', exk, eadk) = PRG(k)
//! ```
//!
//! and authenticates in zero round trips, optionally attaching early
//! application data under `eadk`. The server answers with a fresh ephemeral
//! share and both sides settle on
//!
//! ```text
//! atk = Extract(exk, H2(g^x, g^y, g^xy))
//! ```
//!
//! so application traffic regains forward secrecy the moment the handshake
//! completes. Early data does not have it for the broadcast's lifetime;
//! [`demonstrate_pfs_window`] makes that boundary executable.
//!
//! Replay of connection requests is stopped by a per-broadcast session-id
//! cache that fails closed at capacity.

use std::collections::HashSet;
use std::sync::Mutex;

use blstrs::{G1Affine, G1Projective};
use group::prime::PrimeCurveAffine as _;
use group::Group as _;
use rand::{CryptoRng, RngCore};
use thiserror::Error;
use zeroize::Zeroizing;

use crate::aead::{self, Direction};
use crate::framing;
use crate::hash::{extract_key, prg_expand, tag, tagged_hash32};
use crate::pairing_ibe::{random_scalar, MasterPublicKey};
use crate::prefix_crypto::{pe_dec, pe_enc, satisfies, HierName, PrefixCiphertext, PrefixPolicy};
use crate::principals::{
    context, sign, validate_chain, verify, Blessing, Credential, SigningKeyPair, TrustedRoots,
};
use crate::wire;

/// Session identifier, client-chosen.
pub type SessionId = [u8; 16];

/// Default advertisement lifetime (one hour).
pub const DEFAULT_TTL_SECONDS: u64 = 3600;
/// Replay-cache capacity per broadcast; the server refuses new sessions
/// beyond this rather than evicting.
pub const REPLAY_CACHE_CAPACITY: usize = 1 << 20;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DiscoveryError {
    #[error("malformed message")]
    Malformed,
    #[error("broadcast or session expired")]
    Expired,
    #[error("not authorized for this service")]
    NotForUs,
    #[error("signature verification failed")]
    BadSignature,
    #[error("certificate chain did not validate")]
    BadChain,
    #[error("decryption failed")]
    AeadFailure,
    #[error("session id already used for this broadcast")]
    Replay,
    #[error("replay cache at capacity; refusing new sessions")]
    CacheFull,
    #[error("message references an unknown or stale broadcast")]
    UnknownBroadcast,
    #[error("message names a different server")]
    WrongServer,
    #[error("broadcast counter exhausted")]
    CounterOverflow,
    #[error("expiry time arithmetic overflowed")]
    Clock,
    #[error("session is not in the right state for this message")]
    WrongState,
    #[error("missing key material for this role")]
    BadConfig,
}

/// Broadcast identifier: an ascending 8-byte counter and 8 random bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BroadcastId(pub [u8; 16]);

impl BroadcastId {
    fn generate(counter: u64, rng: &mut (impl RngCore + CryptoRng)) -> Self {
        let mut bytes = [0u8; 16];
        bytes[..8].copy_from_slice(&counter.to_be_bytes());
        rng.fill_bytes(&mut bytes[8..]);
        BroadcastId(bytes)
    }

    pub fn counter(&self) -> u64 {
        u64::from_be_bytes(self.0[..8].try_into().expect("slice is 8 bytes"))
    }
}

/// Semi-static state for one broadcast: the DH exponent, its identifier,
/// and expiry. Zeroized on drop; replaced wholesale on rotation.
pub struct SemiStaticState {
    exponent: Zeroizing<[u8; 32]>,
    share: G1Affine,
    bid: BroadcastId,
    expiry: u64,
}

impl SemiStaticState {
    pub fn bid(&self) -> BroadcastId {
        self.bid
    }

    pub fn share(&self) -> &G1Affine {
        &self.share
    }

    pub fn expiry(&self) -> u64 {
        self.expiry
    }

    pub fn is_expired(&self, now: u64) -> bool {
        now >= self.expiry
    }

    /// The semi-static exponent; the broadcast-reveal surface for the
    /// adversarial harness.
    pub fn reveal_semi_static(&self) -> [u8; 32] {
        *self.exponent
    }

    fn diffie_hellman(&self, peer: &G1Affine) -> Option<G1Affine> {
        let scalar: Option<blstrs::Scalar> = blstrs::Scalar::from_bytes_be(&self.exponent).into();
        Some((G1Projective::from(*peer) * scalar?).into())
    }
}

/// A signed, prefix-encrypted service advertisement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Broadcast {
    pub bid: BroadcastId,
    /// Cleartext copy of the expiry for cheap pre-filtering; the signed
    /// copy inside `adv` is authoritative and must match.
    pub expiry_hint: u64,
    pub adv: PrefixCiphertext,
}

/// The four keys of the 0-RTT schedule, in derivation order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscoveryKeys {
    /// Client-to-server handshake traffic key.
    pub htk: [u8; 32],
    /// Server-to-client handshake traffic key (the primed key).
    pub htk_resp: [u8; 32],
    /// Extractor key feeding the session-key derivation.
    pub exk: [u8; 32],
    /// Early-application-data key.
    pub eadk: [u8; 32],
}

/// `PRG(H1(g^s, g^x, g^sx))` split into (htk, htk', exk, eadk).
pub fn key_schedule_0rtt(gs: &G1Affine, gx: &G1Affine, gsx: &G1Affine) -> DiscoveryKeys {
    let seed = tagged_hash32(
        tag::DISC_ROOT,
        &[
            &gs.to_compressed(),
            &gx.to_compressed(),
            &gsx.to_compressed(),
        ],
    );
    let [htk, htk_resp, exk, eadk] = prg_expand(&seed);
    DiscoveryKeys {
        htk,
        htk_resp,
        exk,
        eadk,
    }
}

/// `atk = Extract(exk, H2(g^x, g^y, g^xy))`.
pub fn derive_session_key(exk: &[u8; 32], gx: &G1Affine, gy: &G1Affine, gxy: &G1Affine) -> [u8; 32] {
    let transcript = tagged_hash32(
        tag::DISC_SESSION,
        &[
            &gx.to_compressed(),
            &gy.to_compressed(),
            &gxy.to_compressed(),
        ],
    );
    extract_key(exk, &transcript)
}

pub fn name_digest(name: &HierName) -> [u8; 32] {
    tagged_hash32(tag::NAME_DIGEST, &[name.canonical().as_bytes()])
}

pub fn blessing_digest(blessing_bytes: &[u8]) -> [u8; 32] {
    tagged_hash32(tag::BLESSING_DIGEST, &[blessing_bytes])
}

/// First flow: `(bid, sid, g^x, c1, c2?)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectRequest {
    pub bid: BroadcastId,
    pub sid: SessionId,
    pub client_share: G1Affine,
    /// Client identity and signature under `htk`.
    pub c1: Vec<u8>,
    /// Early application data under `eadk`.
    pub early_data_ct: Option<Vec<u8>>,
}

/// Second flow: `(bid, sid, g^y, c1', c2'?)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectResponse {
    pub bid: BroadcastId,
    pub sid: SessionId,
    pub server_share: G1Affine,
    /// Full-tuple echo under `htk'`.
    pub c1: Vec<u8>,
    /// Application data under `atk`.
    pub app_data_ct: Option<Vec<u8>>,
}

/// Per-broadcast session-id replay filter. Check-and-insert is atomic, so
/// concurrent sessions can share one cache without double-accepting a sid.
pub struct ReplayCache {
    inner: Mutex<ReplayInner>,
}

struct ReplayInner {
    bid: BroadcastId,
    seen: HashSet<SessionId>,
    capacity: usize,
}

impl ReplayCache {
    pub fn new(bid: BroadcastId) -> Self {
        Self::with_capacity(bid, REPLAY_CACHE_CAPACITY)
    }

    pub fn with_capacity(bid: BroadcastId, capacity: usize) -> Self {
        ReplayCache {
            inner: Mutex::new(ReplayInner {
                bid,
                seen: HashSet::new(),
                capacity,
            }),
        }
    }

    pub fn bid(&self) -> BroadcastId {
        self.inner.lock().expect("cache lock").bid
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache lock").seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, sid: &SessionId) -> bool {
        self.inner.lock().expect("cache lock").seen.contains(sid)
    }

    /// Atomically record `sid` as used for `bid`. Fails closed at capacity.
    pub fn admit(&self, bid: BroadcastId, sid: SessionId) -> Result<(), DiscoveryError> {
        let mut inner = self.inner.lock().expect("cache lock");
        if inner.bid != bid {
            return Err(DiscoveryError::UnknownBroadcast);
        }
        if inner.seen.contains(&sid) {
            return Err(DiscoveryError::Replay);
        }
        if inner.seen.len() >= inner.capacity {
            return Err(DiscoveryError::CacheFull);
        }
        inner.seen.insert(sid);
        Ok(())
    }
}

fn broadcast_signature_message(
    bid: &BroadcastId,
    blessing_bytes: &[u8],
    gs: &G1Affine,
    expiry: u64,
) -> Vec<u8> {
    let mut msg = Vec::with_capacity(16 + 4 + blessing_bytes.len() + 48 + 8);
    msg.extend_from_slice(&bid.0);
    msg.extend_from_slice(&(blessing_bytes.len() as u32).to_be_bytes());
    msg.extend_from_slice(blessing_bytes);
    msg.extend_from_slice(&gs.to_compressed());
    msg.extend_from_slice(&expiry.to_be_bytes());
    msg
}

fn connect_signature_message(
    bid: &BroadcastId,
    sid: &SessionId,
    server_digest: &[u8; 32],
    blessing_bytes: &[u8],
    gs: &G1Affine,
    gx: &G1Affine,
) -> Vec<u8> {
    let mut msg = Vec::with_capacity(16 + 16 + 32 + 4 + blessing_bytes.len() + 96);
    msg.extend_from_slice(&bid.0);
    msg.extend_from_slice(sid);
    msg.extend_from_slice(server_digest);
    msg.extend_from_slice(&(blessing_bytes.len() as u32).to_be_bytes());
    msg.extend_from_slice(blessing_bytes);
    msg.extend_from_slice(&gs.to_compressed());
    msg.extend_from_slice(&gx.to_compressed());
    msg
}

/// Server-side broadcast issuer. Owns the semi-static state; starting a new
/// broadcast erases the previous exponent before the new one exists.
#[derive(Default)]
pub struct Advertiser {
    counter: u64,
    state: Option<SemiStaticState>,
}

impl Advertiser {
    pub fn new() -> Self {
        Advertiser {
            counter: 0,
            state: None,
        }
    }

    /// Issue a fresh broadcast under `policy` and rotate the semi-static
    /// state. Returns the broadcast and a fresh replay cache bound to it.
    #[allow(clippy::too_many_arguments)]
    pub fn make_broadcast(
        &mut self,
        blessing: &Blessing,
        keypair: &SigningKeyPair,
        mpk: &MasterPublicKey,
        policy: &PrefixPolicy,
        ttl_seconds: u64,
        now: u64,
        rng: &mut (impl RngCore + CryptoRng),
    ) -> Result<(Broadcast, ReplayCache), DiscoveryError> {
        // Previous semi-static state is erased before anything else.
        self.state = None;

        let counter = self
            .counter
            .checked_add(1)
            .ok_or(DiscoveryError::CounterOverflow)?;
        let expiry = now
            .checked_add(ttl_seconds)
            .filter(|e| *e > now)
            .ok_or(DiscoveryError::Clock)?;
        let bid = BroadcastId::generate(counter, rng);

        let exponent = random_scalar(rng);
        let share: G1Affine = (G1Projective::generator() * exponent).into();

        let blessing_bytes = wire::encode(blessing).map_err(|_| DiscoveryError::Malformed)?;
        let msg = broadcast_signature_message(&bid, &blessing_bytes, &share, expiry);
        let sig = sign(keypair, context::BROADCAST, &msg);
        let payload = framing::pack(&[
            &blessing_bytes,
            &share.to_compressed(),
            &expiry.to_be_bytes(),
            &sig.to_bytes(),
        ]);
        let adv = pe_enc(mpk, policy, &payload, rng).map_err(|_| DiscoveryError::Malformed)?;

        self.counter = counter;
        self.state = Some(SemiStaticState {
            exponent: Zeroizing::new(exponent.to_bytes_be()),
            share,
            bid,
            expiry,
        });

        Ok((
            Broadcast {
                bid,
                expiry_hint: expiry,
                adv,
            },
            ReplayCache::new(bid),
        ))
    }

    pub fn state(&self) -> Option<&SemiStaticState> {
        self.state.as_ref()
    }

    /// Broadcast-reveal hook: the semi-static exponent for `bid`, if it is
    /// the current one. Rotated-away state is gone.
    pub fn reveal_broadcast(&self, bid: &BroadcastId) -> Option<[u8; 32]> {
        self.state
            .as_ref()
            .filter(|s| s.bid == *bid)
            .map(|s| s.reveal_semi_static())
    }
}

/// What a client learns from a broadcast it is authorized to read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscoveredService {
    pub server_name: HierName,
    pub server_share: G1Affine,
    pub bid: BroadcastId,
    pub expiry: u64,
}

/// Validate and decrypt a received broadcast. Every failure is silent at
/// the protocol level; the error only informs the local caller.
pub fn process_broadcast(
    credential: &Credential,
    client_policy: &PrefixPolicy,
    mpk: &MasterPublicKey,
    anchors: &TrustedRoots,
    bytes: &[u8],
    now: u64,
) -> Result<DiscoveredService, DiscoveryError> {
    let broadcast: Broadcast = wire::decode(bytes).map_err(|_| DiscoveryError::Malformed)?;
    // Cheap pre-filter on the cleartext hint; the signed copy decides.
    if now >= broadcast.expiry_hint {
        return Err(DiscoveryError::Expired);
    }
    if !satisfies(&credential.blessing().name(), broadcast.adv.policy()) {
        return Err(DiscoveryError::NotForUs);
    }
    let ring = credential.keyring().ok_or(DiscoveryError::BadConfig)?;
    let payload =
        pe_dec(mpk, ring, &broadcast.adv).map_err(|_| DiscoveryError::AeadFailure)?;
    let [blessing_bytes, share_bytes, expiry_bytes, sig_bytes] =
        framing::unpack::<4>(&payload).ok_or(DiscoveryError::Malformed)?;

    let blessing: Blessing =
        wire::decode(blessing_bytes).map_err(|_| DiscoveryError::Malformed)?;
    let server_name = validate_chain(&blessing, anchors).map_err(|_| DiscoveryError::BadChain)?;
    if !satisfies(&server_name, client_policy) {
        return Err(DiscoveryError::NotForUs);
    }

    let share_arr: [u8; 48] = share_bytes.try_into().map_err(|_| DiscoveryError::Malformed)?;
    let server_share = Option::from(G1Affine::from_compressed(&share_arr))
        .ok_or(DiscoveryError::Malformed)?;
    let expiry = u64::from_be_bytes(
        expiry_bytes
            .try_into()
            .map_err(|_| DiscoveryError::Malformed)?,
    );
    let signature = p256::ecdsa::Signature::from_slice(sig_bytes)
        .map_err(|_| DiscoveryError::Malformed)?;

    let msg = broadcast_signature_message(&broadcast.bid, blessing_bytes, &server_share, expiry);
    if !verify(
        blessing.public_key(),
        context::BROADCAST,
        &msg,
        &signature,
    ) {
        return Err(DiscoveryError::BadSignature);
    }
    // The hint must echo the signed value exactly.
    if expiry != broadcast.expiry_hint {
        return Err(DiscoveryError::Malformed);
    }
    if now >= expiry {
        return Err(DiscoveryError::Expired);
    }

    Ok(DiscoveredService {
        server_name,
        server_share,
        bid: broadcast.bid,
        expiry,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscoverySessionState {
    AwaitResponse,
    Complete,
    Aborted,
}

/// Client side of one 0-RTT session.
pub struct DiscoverySession {
    bid: BroadcastId,
    sid: SessionId,
    secret: Option<Zeroizing<[u8; 32]>>,
    own_share: G1Affine,
    server_share: G1Affine,
    server_name: HierName,
    server_digest: [u8; 32],
    own_blessing_digest: [u8; 32],
    keys: DiscoveryKeys,
    session_key: Option<[u8; 32]>,
    state: DiscoverySessionState,
}

/// Open a 0-RTT connection to a discovered service, optionally carrying
/// early application data in the very first flow.
pub fn client_connect(
    credential: &Credential,
    keypair: &SigningKeyPair,
    service: &DiscoveredService,
    early_data: Option<&[u8]>,
    now: u64,
    rng: &mut (impl RngCore + CryptoRng),
) -> Result<(DiscoverySession, ConnectRequest), DiscoveryError> {
    if now >= service.expiry {
        return Err(DiscoveryError::Expired);
    }
    let mut sid = [0u8; 16];
    rng.fill_bytes(&mut sid);

    let exponent = random_scalar(rng);
    let own_share: G1Affine = (G1Projective::generator() * exponent).into();
    let shared: G1Affine = (G1Projective::from(service.server_share) * exponent).into();
    let keys = key_schedule_0rtt(&service.server_share, &own_share, &shared);

    let server_digest = name_digest(&service.server_name);
    let blessing_bytes =
        wire::encode(credential.blessing()).map_err(|_| DiscoveryError::Malformed)?;
    let msg = connect_signature_message(
        &service.bid,
        &sid,
        &server_digest,
        &blessing_bytes,
        &service.server_share,
        &own_share,
    );
    let sig = sign(keypair, context::DISCOVERY_CLIENT, &msg);

    let c1_plain = framing::pack(&[&server_digest, &blessing_bytes, &sig.to_bytes()]);
    let c1 = aead::seal(&keys.htk, Direction::DiscClientHandshake, 0, &c1_plain);
    let early_data_ct =
        early_data.map(|data| aead::seal(&keys.eadk, Direction::DiscClientEarlyData, 0, data));

    let session = DiscoverySession {
        bid: service.bid,
        sid,
        secret: Some(Zeroizing::new(exponent.to_bytes_be())),
        own_share,
        server_share: service.server_share,
        server_name: service.server_name.clone(),
        server_digest,
        own_blessing_digest: blessing_digest(&blessing_bytes),
        keys,
        session_key: None,
        state: DiscoverySessionState::AwaitResponse,
    };
    let request = ConnectRequest {
        bid: service.bid,
        sid,
        client_share: own_share,
        c1,
        early_data_ct,
    };
    Ok((session, request))
}

/// Successful server-side acceptance of a 0-RTT request.
#[derive(Debug)]
pub struct AcceptedSession {
    pub response: ConnectResponse,
    pub client_name: HierName,
    pub session_key: [u8; 32],
    pub early_data: Option<Vec<u8>>,
}

/// Process a connection request against the current broadcast state.
/// The duplicate check runs before any expensive work; the authoritative
/// cache insertion happens only after the request fully validates, and is
/// atomic with the acceptance decision.
#[allow(clippy::too_many_arguments)]
pub fn server_accept(
    server_blessing: &Blessing,
    server_policy: &PrefixPolicy,
    anchors: &TrustedRoots,
    sstate: &SemiStaticState,
    cache: &ReplayCache,
    request: &ConnectRequest,
    app_data: Option<&[u8]>,
    now: u64,
    rng: &mut (impl RngCore + CryptoRng),
) -> Result<AcceptedSession, DiscoveryError> {
    if request.bid != sstate.bid() {
        return Err(DiscoveryError::UnknownBroadcast);
    }
    if sstate.is_expired(now) {
        return Err(DiscoveryError::Expired);
    }
    if cache.contains(&request.sid) {
        return Err(DiscoveryError::Replay);
    }
    if bool::from(request.client_share.is_identity()) {
        return Err(DiscoveryError::Malformed);
    }

    let shared = sstate
        .diffie_hellman(&request.client_share)
        .ok_or(DiscoveryError::Malformed)?;
    let keys = key_schedule_0rtt(sstate.share(), &request.client_share, &shared);

    let c1_plain = aead::open(&keys.htk, Direction::DiscClientHandshake, 0, &request.c1)
        .ok_or(DiscoveryError::AeadFailure)?;
    let [digest_bytes, blessing_bytes, sig_bytes] =
        framing::unpack::<3>(&c1_plain).ok_or(DiscoveryError::Malformed)?;

    let server_blessing_name = server_blessing.name();
    let own_digest = name_digest(&server_blessing_name);
    let claimed_digest: [u8; 32] = digest_bytes
        .try_into()
        .map_err(|_| DiscoveryError::Malformed)?;
    if claimed_digest != own_digest {
        return Err(DiscoveryError::WrongServer);
    }

    let client_blessing: Blessing =
        wire::decode(blessing_bytes).map_err(|_| DiscoveryError::Malformed)?;
    let client_name =
        validate_chain(&client_blessing, anchors).map_err(|_| DiscoveryError::BadChain)?;
    if !satisfies(&client_name, server_policy) {
        return Err(DiscoveryError::NotForUs);
    }

    let signature = p256::ecdsa::Signature::from_slice(sig_bytes)
        .map_err(|_| DiscoveryError::Malformed)?;
    let msg = connect_signature_message(
        &request.bid,
        &request.sid,
        &own_digest,
        blessing_bytes,
        sstate.share(),
        &request.client_share,
    );
    if !verify(
        client_blessing.public_key(),
        context::DISCOVERY_CLIENT,
        &msg,
        &signature,
    ) {
        return Err(DiscoveryError::BadSignature);
    }

    // Early data must decrypt before we commit to the session.
    let early_data = match &request.early_data_ct {
        Some(ct) => Some(
            aead::open(&keys.eadk, Direction::DiscClientEarlyData, 0, ct)
                .ok_or(DiscoveryError::AeadFailure)?,
        ),
        None => None,
    };

    cache.admit(request.bid, request.sid)?;

    let ephemeral = random_scalar(rng);
    let own_share: G1Affine = (G1Projective::generator() * ephemeral).into();
    let dh: G1Affine = (G1Projective::from(request.client_share) * ephemeral).into();
    let session_key = derive_session_key(&keys.exk, &request.client_share, &own_share, &dh);

    let mut echo = Vec::with_capacity(240);
    echo.extend_from_slice(&request.bid.0);
    echo.extend_from_slice(&request.sid);
    echo.extend_from_slice(&own_digest);
    echo.extend_from_slice(&blessing_digest(blessing_bytes));
    echo.extend_from_slice(&sstate.share().to_compressed());
    echo.extend_from_slice(&request.client_share.to_compressed());
    echo.extend_from_slice(&own_share.to_compressed());
    let c1 = aead::seal(&keys.htk_resp, Direction::DiscServerHandshake, 0, &echo);

    let app_data_ct =
        app_data.map(|data| aead::seal(&session_key, Direction::AppServerToClient, 0, data));

    Ok(AcceptedSession {
        response: ConnectResponse {
            bid: request.bid,
            sid: request.sid,
            server_share: own_share,
            c1,
            app_data_ct,
        },
        client_name,
        session_key,
        early_data,
    })
}

impl DiscoverySession {
    /// Finish the handshake: require the exact tuple echo, derive the
    /// session key, and decrypt any server application data.
    pub fn client_complete(
        &mut self,
        response: &ConnectResponse,
    ) -> Result<([u8; 32], Option<Vec<u8>>), DiscoveryError> {
        match self.try_complete(response) {
            Ok(out) => {
                self.secret = None;
                self.state = DiscoverySessionState::Complete;
                Ok(out)
            }
            Err(e) => {
                self.abort();
                Err(e)
            }
        }
    }

    fn try_complete(
        &mut self,
        response: &ConnectResponse,
    ) -> Result<([u8; 32], Option<Vec<u8>>), DiscoveryError> {
        if self.state != DiscoverySessionState::AwaitResponse {
            return Err(DiscoveryError::WrongState);
        }
        if response.bid != self.bid || response.sid != self.sid {
            return Err(DiscoveryError::WrongState);
        }
        let echo = aead::open(
            &self.keys.htk_resp,
            Direction::DiscServerHandshake,
            0,
            &response.c1,
        )
        .ok_or(DiscoveryError::AeadFailure)?;
        if echo.len() != 240 {
            return Err(DiscoveryError::Malformed);
        }
        let mut expected = Vec::with_capacity(240);
        expected.extend_from_slice(&self.bid.0);
        expected.extend_from_slice(&self.sid);
        expected.extend_from_slice(&self.server_digest);
        expected.extend_from_slice(&self.own_blessing_digest);
        expected.extend_from_slice(&self.server_share.to_compressed());
        expected.extend_from_slice(&self.own_share.to_compressed());
        expected.extend_from_slice(&response.server_share.to_compressed());
        if echo != expected {
            return Err(DiscoveryError::Malformed);
        }

        let secret = self.secret.as_ref().ok_or(DiscoveryError::WrongState)?;
        let scalar: Option<blstrs::Scalar> = blstrs::Scalar::from_bytes_be(secret).into();
        let scalar = scalar.ok_or(DiscoveryError::Malformed)?;
        let dh: G1Affine = (G1Projective::from(response.server_share) * scalar).into();
        let session_key =
            derive_session_key(&self.keys.exk, &self.own_share, &response.server_share, &dh);

        let app_data = match &response.app_data_ct {
            Some(ct) => Some(
                aead::open(&session_key, Direction::AppServerToClient, 0, ct)
                    .ok_or(DiscoveryError::AeadFailure)?,
            ),
            None => None,
        };
        self.session_key = Some(session_key);
        Ok((session_key, app_data))
    }

    pub fn abort(&mut self) {
        self.secret = None;
        self.session_key = None;
        self.state = DiscoverySessionState::Aborted;
    }

    pub fn state(&self) -> DiscoverySessionState {
        self.state
    }

    pub fn bid(&self) -> BroadcastId {
        self.bid
    }

    pub fn sid(&self) -> SessionId {
        self.sid
    }

    pub fn server_name(&self) -> &HierName {
        &self.server_name
    }

    pub fn session_key(&self) -> Option<[u8; 32]> {
        self.session_key
    }

    /// Discovery traffic keys (diagnostics and tests).
    pub fn traffic_keys(&self) -> &DiscoveryKeys {
        &self.keys
    }

    /// Ephemeral exponent while live; the state-reveal surface.
    pub fn reveal_session_state(&self) -> Option<[u8; 32]> {
        self.secret.as_ref().map(|s| **s)
    }
}

// --- forward-secrecy window demonstration ------------------------------------

/// The wire transcript of one completed 0-RTT session.
pub struct SessionTranscript {
    pub request: ConnectRequest,
    pub response: ConnectResponse,
}

/// A secret revealed to the demonstration.
pub enum CompromisedSecret {
    /// The broadcast's semi-static exponent.
    SemiStatic([u8; 32]),
    /// A client session's ephemeral exponent plus the server share it
    /// targeted (both live in client session state).
    ClientState {
        ephemeral: [u8; 32],
        server_share: G1Affine,
    },
}

/// Outcome of replaying a transcript against a compromised secret.
pub struct PfsReport {
    /// Whether the early-application data decrypted.
    pub early_data_recovered: bool,
    pub early_data: Option<Vec<u8>>,
    /// Whether the application data under the session key decrypted using
    /// only keys derivable from the compromised secret and the transcript.
    pub app_data_recovered: bool,
    pub app_data: Option<Vec<u8>>,
}

/// Replay a completed transcript with a revealed secret and report exactly
/// what becomes readable. With the semi-static exponent, early data falls
/// (the documented 0-RTT forward-secrecy gap) but the session key does not,
/// because it also needs the ephemeral-ephemeral DH value. With full client
/// session state, everything falls.
pub fn demonstrate_pfs_window(
    transcript: &SessionTranscript,
    secret: &CompromisedSecret,
) -> PfsReport {
    let gx = transcript.request.client_share;
    let gy = transcript.response.server_share;

    let (keys, session_key_candidates): (DiscoveryKeys, Vec<[u8; 32]>) = match secret {
        CompromisedSecret::SemiStatic(s_bytes) => {
            let s: Option<blstrs::Scalar> = blstrs::Scalar::from_bytes_be(s_bytes).into();
            let Some(s) = s else {
                return PfsReport {
                    early_data_recovered: false,
                    early_data: None,
                    app_data_recovered: false,
                    app_data: None,
                };
            };
            let gs: G1Affine = (G1Projective::generator() * s).into();
            let gsx: G1Affine = (G1Projective::from(gx) * s).into();
            let keys = key_schedule_0rtt(&gs, &gx, &gsx);
            // Every key derivable from (transcript, s): the four schedule
            // keys and an Extract over values the holder can actually
            // compute. g^xy is not among them.
            let candidates = vec![
                keys.htk,
                keys.htk_resp,
                keys.exk,
                keys.eadk,
                derive_session_key(&keys.exk, &gx, &gy, &gs),
                derive_session_key(&keys.exk, &gx, &gy, &gsx),
            ];
            (keys, candidates)
        }
        CompromisedSecret::ClientState {
            ephemeral,
            server_share,
        } => {
            let x: Option<blstrs::Scalar> = blstrs::Scalar::from_bytes_be(ephemeral).into();
            let Some(x) = x else {
                return PfsReport {
                    early_data_recovered: false,
                    early_data: None,
                    app_data_recovered: false,
                    app_data: None,
                };
            };
            let gsx: G1Affine = (G1Projective::from(*server_share) * x).into();
            let keys = key_schedule_0rtt(server_share, &gx, &gsx);
            let gxy: G1Affine = (G1Projective::from(gy) * x).into();
            let candidates = vec![derive_session_key(&keys.exk, &gx, &gy, &gxy)];
            (keys, candidates)
        }
    };

    let early_data = transcript
        .request
        .early_data_ct
        .as_ref()
        .and_then(|ct| aead::open(&keys.eadk, Direction::DiscClientEarlyData, 0, ct));

    let mut app_data = None;
    if let Some(ct) = &transcript.response.app_data_ct {
        for key in &session_key_candidates {
            if let Some(plain) = aead::open(key, Direction::AppServerToClient, 0, ct) {
                app_data = Some(plain);
                break;
            }
        }
    }

    PfsReport {
        early_data_recovered: early_data.is_some(),
        early_data,
        app_data_recovered: app_data.is_some(),
        app_data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::principals::{anchors_for, Principal, SigningKeyPair};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    struct Fixture {
        mpk: MasterPublicKey,
        anchors: TrustedRoots,
        client: Principal,
        server: Principal,
    }

    fn fixture(rng: &mut StdRng) -> Fixture {
        let root = Principal::new_root("idp", rng).unwrap();
        let mpk = root.master_public().unwrap().clone();
        let anchors = anchors_for(&root);

        let client_keys = SigningKeyPair::generate(rng);
        let client_cred = root
            .issue(client_keys.public(), &["u", "alice", "phone"], rng)
            .unwrap();
        let mut client = Principal::from_parts(
            client_keys,
            client_cred,
            PrefixPolicy::single(HierName::parse("idp/s").unwrap()),
        );
        client.set_policy(PrefixPolicy::single(HierName::parse("idp/s").unwrap()));

        let server_keys = SigningKeyPair::generate(rng);
        let server_cred = root
            .issue(server_keys.public(), &["s", "cam"], rng)
            .unwrap();
        let mut server = Principal::from_parts(
            server_keys,
            server_cred,
            PrefixPolicy::single(HierName::parse("idp/u/alice").unwrap()),
        );
        server.set_policy(PrefixPolicy::single(HierName::parse("idp/u/alice").unwrap()));

        Fixture {
            mpk,
            anchors,
            client,
            server,
        }
    }

    fn broadcast(
        fx: &Fixture,
        adv: &mut Advertiser,
        now: u64,
        rng: &mut StdRng,
    ) -> (Vec<u8>, ReplayCache) {
        let (b, cache) = adv
            .make_broadcast(
                fx.server.credential().blessing(),
                fx.server.keypair(),
                &fx.mpk,
                fx.server.policy(),
                DEFAULT_TTL_SECONDS,
                now,
                rng,
            )
            .unwrap();
        (wire::encode(&b).unwrap(), cache)
    }

    #[test]
    fn honest_0rtt_with_early_data() {
        let mut rng = StdRng::seed_from_u64(10);
        let fx = fixture(&mut rng);
        let mut adv = Advertiser::new();
        let (bytes, cache) = broadcast(&fx, &mut adv, 1000, &mut rng);

        let svc = process_broadcast(
            fx.client.credential(),
            fx.client.policy(),
            &fx.mpk,
            &fx.anchors,
            &bytes,
            1000,
        )
        .unwrap();
        assert_eq!(svc.server_name.canonical(), "idp/s/cam");

        let (mut session, request) = client_connect(
            fx.client.credential(),
            fx.client.keypair(),
            &svc,
            Some(b"print me"),
            1000,
            &mut rng,
        )
        .unwrap();
        let accepted = server_accept(
            fx.server.credential().blessing(),
            fx.server.policy(),
            &fx.anchors,
            adv.state().unwrap(),
            &cache,
            &request,
            Some(b"queue position 1"),
            1001,
            &mut rng,
        )
        .unwrap();
        assert_eq!(accepted.early_data.as_deref(), Some(&b"print me"[..]));
        assert_eq!(accepted.client_name.canonical(), "idp/u/alice/phone");

        let (atk, app) = session.client_complete(&accepted.response).unwrap();
        assert_eq!(atk, accepted.session_key);
        assert_eq!(app.as_deref(), Some(&b"queue position 1"[..]));
        assert!(session.reveal_session_state().is_none());
    }

    #[test]
    fn broadcast_counters_ascend_and_rotation_erases_state() {
        let mut rng = StdRng::seed_from_u64(11);
        let fx = fixture(&mut rng);
        let mut adv = Advertiser::new();
        let (b1, _) = adv
            .make_broadcast(
                fx.server.credential().blessing(),
                fx.server.keypair(),
                &fx.mpk,
                fx.server.policy(),
                60,
                0,
                &mut rng,
            )
            .unwrap();
        let bid1 = b1.bid;
        let s1 = adv.state().unwrap().reveal_semi_static();
        let (b2, _) = adv
            .make_broadcast(
                fx.server.credential().blessing(),
                fx.server.keypair(),
                &fx.mpk,
                fx.server.policy(),
                60,
                0,
                &mut rng,
            )
            .unwrap();
        assert!(b2.bid.counter() > bid1.counter());
        let s2 = adv.state().unwrap().reveal_semi_static();
        assert_ne!(s1, s2);
        // prior semi-static exponent no longer reachable from server state
        assert_eq!(adv.reveal_broadcast(&bid1), None);
        assert_eq!(adv.reveal_broadcast(&b2.bid), Some(s2));
    }

    #[test]
    fn expired_broadcast_rejected_even_with_valid_signature() {
        let mut rng = StdRng::seed_from_u64(12);
        let fx = fixture(&mut rng);
        let mut adv = Advertiser::new();
        let (bytes, _) = broadcast(&fx, &mut adv, 1000, &mut rng);
        let late = 1000 + DEFAULT_TTL_SECONDS;
        assert_eq!(
            process_broadcast(
                fx.client.credential(),
                fx.client.policy(),
                &fx.mpk,
                &fx.anchors,
                &bytes,
                late,
            )
            .unwrap_err(),
            DiscoveryError::Expired
        );
    }

    #[test]
    fn stale_unexpired_broadcast_still_accepted() {
        // documented residual risk: replay within the expiry window works
        let mut rng = StdRng::seed_from_u64(13);
        let fx = fixture(&mut rng);
        let mut adv = Advertiser::new();
        let (bytes, _) = broadcast(&fx, &mut adv, 1000, &mut rng);
        // "replayed" to a second client much later, but before expiry
        assert!(process_broadcast(
            fx.client.credential(),
            fx.client.policy(),
            &fx.mpk,
            &fx.anchors,
            &bytes,
            1000 + DEFAULT_TTL_SECONDS - 1,
        )
        .is_ok());
    }

    #[test]
    fn unauthorized_client_sees_nothing() {
        let mut rng = StdRng::seed_from_u64(14);
        let fx = fixture(&mut rng);
        let root2 = Principal::new_root("idp", &mut rng).unwrap();
        let outsider_keys = SigningKeyPair::generate(&mut rng);
        let outsider_cred = root2
            .issue(outsider_keys.public(), &["u", "eve"], &mut rng)
            .unwrap();
        let outsider = Principal::from_parts(
            outsider_keys,
            outsider_cred,
            PrefixPolicy::single(HierName::parse("idp/s").unwrap()),
        );
        let mut adv = Advertiser::new();
        let (bytes, _) = broadcast(&fx, &mut adv, 0, &mut rng);
        assert_eq!(
            process_broadcast(
                outsider.credential(),
                outsider.policy(),
                &fx.mpk,
                &fx.anchors,
                &bytes,
                0,
            )
            .unwrap_err(),
            DiscoveryError::NotForUs
        );
    }

    #[test]
    fn key_schedule_deterministic_and_separated() {
        let mut rng = StdRng::seed_from_u64(15);
        let a = random_scalar(&mut rng);
        let b = random_scalar(&mut rng);
        let gs: G1Affine = (G1Projective::generator() * a).into();
        let gx: G1Affine = (G1Projective::generator() * b).into();
        let gsx: G1Affine = (G1Projective::from(gx) * a).into();
        let k1 = key_schedule_0rtt(&gs, &gx, &gsx);
        let k2 = key_schedule_0rtt(&gs, &gx, &gsx);
        assert_eq!(k1, k2);
        let keys = [k1.htk, k1.htk_resp, k1.exk, k1.eadk];
        for i in 0..4 {
            for j in (i + 1)..4 {
                assert_ne!(keys[i], keys[j]);
            }
        }
    }

    #[test]
    fn duplicate_request_rejected_fresh_sessions_differ() {
        let mut rng = StdRng::seed_from_u64(16);
        let fx = fixture(&mut rng);
        let mut adv = Advertiser::new();
        let (bytes, cache) = broadcast(&fx, &mut adv, 0, &mut rng);
        let svc = process_broadcast(
            fx.client.credential(),
            fx.client.policy(),
            &fx.mpk,
            &fx.anchors,
            &bytes,
            0,
        )
        .unwrap();

        let (_, request1) = client_connect(
            fx.client.credential(),
            fx.client.keypair(),
            &svc,
            None,
            0,
            &mut rng,
        )
        .unwrap();
        let accept = |req: &ConnectRequest, rng: &mut StdRng| {
            server_accept(
                fx.server.credential().blessing(),
                fx.server.policy(),
                &fx.anchors,
                adv.state().unwrap(),
                &cache,
                req,
                None,
                1,
                rng,
            )
        };
        let first = accept(&request1, &mut rng).unwrap();
        assert_eq!(
            accept(&request1, &mut rng).unwrap_err(),
            DiscoveryError::Replay
        );

        let (_, request2) = client_connect(
            fx.client.credential(),
            fx.client.keypair(),
            &svc,
            None,
            0,
            &mut rng,
        )
        .unwrap();
        let second = accept(&request2, &mut rng).unwrap();
        assert_ne!(first.session_key, second.session_key);
    }

    #[test]
    fn cache_fails_closed_at_capacity() {
        let bid = BroadcastId([1u8; 16]);
        let cache = ReplayCache::with_capacity(bid, 2);
        cache.admit(bid, [1u8; 16]).unwrap();
        cache.admit(bid, [2u8; 16]).unwrap();
        assert_eq!(
            cache.admit(bid, [3u8; 16]).unwrap_err(),
            DiscoveryError::CacheFull
        );
        // and a replay is still a replay, not a capacity error
        assert_eq!(
            cache.admit(bid, [2u8; 16]).unwrap_err(),
            DiscoveryError::Replay
        );
    }

    #[test]
    fn echo_mismatch_and_tamper_abort() {
        let mut rng = StdRng::seed_from_u64(17);
        let fx = fixture(&mut rng);
        let mut adv = Advertiser::new();
        let (bytes, cache) = broadcast(&fx, &mut adv, 0, &mut rng);
        let svc = process_broadcast(
            fx.client.credential(),
            fx.client.policy(),
            &fx.mpk,
            &fx.anchors,
            &bytes,
            0,
        )
        .unwrap();
        let (mut session, request) = client_connect(
            fx.client.credential(),
            fx.client.keypair(),
            &svc,
            None,
            0,
            &mut rng,
        )
        .unwrap();
        let accepted = server_accept(
            fx.server.credential().blessing(),
            fx.server.policy(),
            &fx.anchors,
            adv.state().unwrap(),
            &cache,
            &request,
            None,
            0,
            &mut rng,
        )
        .unwrap();

        let mut tampered = accepted.response.clone();
        tampered.c1[8] ^= 1;
        assert_eq!(
            session.client_complete(&tampered).unwrap_err(),
            DiscoveryError::AeadFailure
        );
        assert_eq!(session.state(), DiscoverySessionState::Aborted);
    }

    #[test]
    fn pfs_window_semi_static_vs_client_state() {
        let mut rng = StdRng::seed_from_u64(18);
        let fx = fixture(&mut rng);
        let mut adv = Advertiser::new();
        let (bytes, cache) = broadcast(&fx, &mut adv, 0, &mut rng);
        let svc = process_broadcast(
            fx.client.credential(),
            fx.client.policy(),
            &fx.mpk,
            &fx.anchors,
            &bytes,
            0,
        )
        .unwrap();
        let (mut session, request) = client_connect(
            fx.client.credential(),
            fx.client.keypair(),
            &svc,
            Some(b"early secret"),
            0,
            &mut rng,
        )
        .unwrap();
        let x = session.reveal_session_state().unwrap();
        let accepted = server_accept(
            fx.server.credential().blessing(),
            fx.server.policy(),
            &fx.anchors,
            adv.state().unwrap(),
            &cache,
            &request,
            Some(b"app secret"),
            0,
            &mut rng,
        )
        .unwrap();
        let s = adv.state().unwrap().reveal_semi_static();
        session.client_complete(&accepted.response).unwrap();

        let transcript = SessionTranscript {
            request,
            response: accepted.response.clone(),
        };

        let report = demonstrate_pfs_window(&transcript, &CompromisedSecret::SemiStatic(s));
        assert!(report.early_data_recovered);
        assert_eq!(report.early_data.as_deref(), Some(&b"early secret"[..]));
        assert!(!report.app_data_recovered);

        let report = demonstrate_pfs_window(
            &transcript,
            &CompromisedSecret::ClientState {
                ephemeral: x,
                server_share: svc.server_share,
            },
        );
        assert!(report.app_data_recovered);
        assert_eq!(report.app_data.as_deref(), Some(&b"app secret"[..]));
    }

    #[test]
    fn request_for_stale_bid_rejected() {
        let mut rng = StdRng::seed_from_u64(19);
        let fx = fixture(&mut rng);
        let mut adv = Advertiser::new();
        let (bytes, _) = broadcast(&fx, &mut adv, 0, &mut rng);
        let svc = process_broadcast(
            fx.client.credential(),
            fx.client.policy(),
            &fx.mpk,
            &fx.anchors,
            &bytes,
            0,
        )
        .unwrap();
        let (_, request) = client_connect(
            fx.client.credential(),
            fx.client.keypair(),
            &svc,
            None,
            0,
            &mut rng,
        )
        .unwrap();
        // server rotates before the request arrives
        let (_, cache2) = broadcast(&fx, &mut adv, 0, &mut rng);
        let err = server_accept(
            fx.server.credential().blessing(),
            fx.server.policy(),
            &fx.anchors,
            adv.state().unwrap(),
            &cache2,
            &request,
            None,
            0,
            &mut rng,
        )
        .unwrap_err();
        assert_eq!(err, DiscoveryError::UnknownBroadcast);
    }
}
