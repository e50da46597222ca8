//! Private mutual authentication: a three-message SIGMA-style handshake in
//! which the server's certificate chain travels prefix-encrypted under the
//! server's own authorization policy.
//!
//! Flow: the client opens with `(sid, g^x)`; the server answers with
//! `(sid, g^y, c)` where `c` encrypts its prefix-encrypted identity and a
//! signature over the session state; the client, if mutually authorized,
//! finishes with its own encrypted identity and signature. The client only
//! ever reveals its identity after validating the server, so an aborted
//! handshake leaks nothing about the client to anyone.
//!
//! Three server-response modes:
//!
//! - [`HandshakeMode::Cached`]: the prefix encryption of the server identity
//!   is computed once and reused across handshakes (cheap, but the reused
//!   bytes make the server linkable across sessions);
//! - [`HandshakeMode::Unlinkable`]: the entire response payload is freshly
//!   prefix-encrypted per session, so neither ciphertext nor signature bytes
//!   ever repeat on the wire;
//! - [`HandshakeMode::SigmaBaseline`]: plain SIGMA-I without prefix
//!   encryption, for benchmarking and comparison fixtures.
//!
//! Aborts are silent: no error ever goes on the wire.

use blstrs::G1Affine;
use rand::{CryptoRng, RngCore};
use thiserror::Error;
use zeroize::Zeroizing;

use crate::aead::{self, Direction};
use crate::hash::{tag, tagged_hash32};
use crate::pairing_ibe::MasterPublicKey;
use crate::prefix_crypto::{
    pe_dec, pe_enc, satisfies, HierName, PrefixCiphertext, PrefixPolicy,
};
use crate::principals::{
    context, sign, validate_chain, verify, Blessing, Credential, SigningKeyPair, TrustedRoots,
};
use crate::wire;

/// Client-chosen per-session identifier.
pub type SessionId = [u8; 16];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HandshakeError {
    #[error("session is not in the right state for this message")]
    WrongState,
    #[error("message does not belong to this session")]
    SessionMismatch,
    #[error("malformed handshake message")]
    Malformed,
    #[error("handshake decryption failed")]
    AeadFailure,
    #[error("local identity does not satisfy the peer's policy")]
    NotAuthorized,
    #[error("peer identity does not satisfy the local policy")]
    PeerRejected,
    #[error("peer certificate chain did not validate")]
    BadChain,
    #[error("handshake signature did not verify")]
    BadSignature,
    #[error("session configuration is incomplete for this mode")]
    BadConfig,
}

/// Server response construction strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandshakeMode {
    Cached,
    Unlinkable,
    SigmaBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    AwaitResponse,
    AwaitFinish,
    Complete,
    Aborted,
}

/// Traffic keys for one handshake, derived from the ephemeral DH values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandshakeKeys {
    /// Protects handshake messages.
    pub htk: [u8; 32],
    /// Protects application traffic after completion.
    pub atk: [u8; 32],
}

/// `(htk, atk) = H(g^x, g^y, g^xy)` with per-key domain tags.
pub fn kdf_sigma(gx: &G1Affine, gy: &G1Affine, gxy: &G1Affine) -> HandshakeKeys {
    let parts: [&[u8]; 3] = [
        &gx.to_compressed(),
        &gy.to_compressed(),
        &gxy.to_compressed(),
    ];
    HandshakeKeys {
        htk: tagged_hash32(tag::SIGMA_HTK, &parts),
        atk: tagged_hash32(tag::SIGMA_ATK, &parts),
    }
}

/// First message: `(sid, g^x)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthInit {
    pub sid: SessionId,
    pub client_share: G1Affine,
}

/// Second message: `(sid, g^y, c)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthResponse {
    pub sid: SessionId,
    pub server_share: G1Affine,
    pub payload: Vec<u8>,
}

/// Third message: `(sid, c')`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthFinish {
    pub sid: SessionId,
    pub payload: Vec<u8>,
}

/// Material shared by all of one principal's sessions.
#[derive(Debug, Clone)]
pub struct HandshakeConfig {
    pub mpk: MasterPublicKey,
    pub anchors: TrustedRoots,
    pub mode: HandshakeMode,
}

/// A prefix encryption of the server's blessing, reusable across handshakes
/// in [`HandshakeMode::Cached`]. Immutable once built; share it freely.
#[derive(Debug, Clone)]
pub struct CachedServerIdentity {
    bytes: Vec<u8>,
}

impl CachedServerIdentity {
    pub fn prepare(
        mpk: &MasterPublicKey,
        policy: &PrefixPolicy,
        blessing: &Blessing,
        rng: &mut (impl RngCore + CryptoRng),
    ) -> Result<Self, HandshakeError> {
        let blessing_bytes = wire::encode(blessing).map_err(|_| HandshakeError::Malformed)?;
        let ct = pe_enc(mpk, policy, &blessing_bytes, rng).map_err(|_| HandshakeError::Malformed)?;
        let bytes = wire::encode(&ct).map_err(|_| HandshakeError::Malformed)?;
        Ok(CachedServerIdentity { bytes })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }
}

/// Message the server signs: binds session id, its (possibly encrypted)
/// identity bytes, and both ephemeral shares.
fn server_signature_message(
    sid: &SessionId,
    identity_bytes: &[u8],
    gx: &G1Affine,
    gy: &G1Affine,
) -> Vec<u8> {
    let mut msg = Vec::with_capacity(16 + 4 + identity_bytes.len() + 96);
    msg.extend_from_slice(sid);
    msg.extend_from_slice(&(identity_bytes.len() as u32).to_be_bytes());
    msg.extend_from_slice(identity_bytes);
    msg.extend_from_slice(&gx.to_compressed());
    msg.extend_from_slice(&gy.to_compressed());
    msg
}

fn client_signature_message(
    sid: &SessionId,
    blessing_bytes: &[u8],
    gx: &G1Affine,
    gy: &G1Affine,
) -> Vec<u8> {
    // same framing, different signing context
    server_signature_message(sid, blessing_bytes, gx, gy)
}

/// DH exponent held as zeroize-on-drop bytes.
struct Exponent(Zeroizing<[u8; 32]>);

impl Exponent {
    fn generate(rng: &mut (impl RngCore + CryptoRng)) -> (Self, G1Affine) {
        let scalar = crate::pairing_ibe::random_scalar(rng);
        let share = (blstrs::G1Projective::generator() * scalar).into();
        (Exponent(Zeroizing::new(scalar.to_bytes_be())), share)
    }

    fn diffie_hellman(&self, peer: &G1Affine) -> Option<G1Affine> {
        let scalar: Option<blstrs::Scalar> = blstrs::Scalar::from_bytes_be(&self.0).into();
        Some((blstrs::G1Projective::from(*peer) * scalar?).into())
    }

    fn bytes(&self) -> [u8; 32] {
        *self.0
    }
}

use group::prime::PrimeCurveAffine as _;
use group::Group as _;

/// Client half of the handshake.
pub struct ClientSession {
    config: HandshakeConfig,
    credential: Credential,
    keypair: SigningKeyPair,
    policy: PrefixPolicy,
    sid: SessionId,
    secret: Option<Exponent>,
    own_share: G1Affine,
    keys: Option<HandshakeKeys>,
    peer_name: Option<HierName>,
    state: SessionState,
}

impl ClientSession {
    /// Start a session; returns the session object and the first message.
    pub fn client_init(
        config: HandshakeConfig,
        credential: Credential,
        keypair: SigningKeyPair,
        policy: PrefixPolicy,
        rng: &mut (impl RngCore + CryptoRng),
    ) -> (ClientSession, AuthInit) {
        let mut sid = [0u8; 16];
        rng.fill_bytes(&mut sid);
        let (secret, own_share) = Exponent::generate(rng);
        let session = ClientSession {
            config,
            credential,
            keypair,
            policy,
            sid,
            secret: Some(secret),
            own_share,
            keys: None,
            peer_name: None,
            state: SessionState::AwaitResponse,
        };
        let init = AuthInit {
            sid,
            client_share: own_share,
        };
        (session, init)
    }

    /// Process the server's response. On success the client emits its finish
    /// message, outputs the peer name, and completes. On any failure the
    /// session aborts silently with the client identity never having left
    /// this process.
    pub fn client_process_response(
        &mut self,
        response: &AuthResponse,
    ) -> Result<AuthFinish, HandshakeError> {
        match self.try_process_response(response) {
            Ok(finish) => {
                self.secret = None;
                self.state = SessionState::Complete;
                Ok(finish)
            }
            Err(e) => {
                self.abort();
                Err(e)
            }
        }
    }

    fn try_process_response(
        &mut self,
        response: &AuthResponse,
    ) -> Result<AuthFinish, HandshakeError> {
        if self.state != SessionState::AwaitResponse {
            return Err(HandshakeError::WrongState);
        }
        if response.sid != self.sid {
            return Err(HandshakeError::SessionMismatch);
        }
        let secret = self.secret.as_ref().ok_or(HandshakeError::WrongState)?;
        let shared = secret
            .diffie_hellman(&response.server_share)
            .ok_or(HandshakeError::Malformed)?;
        let keys = kdf_sigma(&self.own_share, &response.server_share, &shared);

        let (server_identity_bytes, signature_bytes, signed_over): (Vec<u8>, Vec<u8>, Vec<u8>) =
            match self.config.mode {
                HandshakeMode::Cached => {
                    let plain = aead::open(&keys.htk, Direction::AuthServerToClient, 0, &response.payload)
                        .ok_or(HandshakeError::AeadFailure)?;
                    let [ct_bytes, sig] = crate::framing::unpack::<2>(&plain).ok_or(HandshakeError::Malformed)?;
                    let ct: PrefixCiphertext =
                        wire::decode(ct_bytes).map_err(|_| HandshakeError::Malformed)?;
                    // Check own authorization before touching any branch, so
                    // an unauthorized client does no decryption at all.
                    if !satisfies(&self.credential.blessing().name(), ct.policy()) {
                        return Err(HandshakeError::NotAuthorized);
                    }
                    let ring = self
                        .credential
                        .keyring()
                        .ok_or(HandshakeError::BadConfig)?;
                    let blessing_bytes = pe_dec(&self.config.mpk, ring, &ct)
                        .map_err(|_| HandshakeError::AeadFailure)?;
                    (blessing_bytes, sig.to_vec(), ct_bytes.to_vec())
                }
                HandshakeMode::Unlinkable => {
                    let ct: PrefixCiphertext =
                        wire::decode(&response.payload).map_err(|_| HandshakeError::Malformed)?;
                    if !satisfies(&self.credential.blessing().name(), ct.policy()) {
                        return Err(HandshakeError::NotAuthorized);
                    }
                    let ring = self
                        .credential
                        .keyring()
                        .ok_or(HandshakeError::BadConfig)?;
                    let inner_ct = pe_dec(&self.config.mpk, ring, &ct)
                        .map_err(|_| HandshakeError::AeadFailure)?;
                    let plain = aead::open(&keys.htk, Direction::AuthServerToClient, 0, &inner_ct)
                        .ok_or(HandshakeError::AeadFailure)?;
                    let [blessing_bytes, sig] =
                        crate::framing::unpack::<2>(&plain).ok_or(HandshakeError::Malformed)?;
                    (blessing_bytes.to_vec(), sig.to_vec(), blessing_bytes.to_vec())
                }
                HandshakeMode::SigmaBaseline => {
                    let plain = aead::open(&keys.htk, Direction::AuthServerToClient, 0, &response.payload)
                        .ok_or(HandshakeError::AeadFailure)?;
                    let [blessing_bytes, sig] =
                        crate::framing::unpack::<2>(&plain).ok_or(HandshakeError::Malformed)?;
                    (blessing_bytes.to_vec(), sig.to_vec(), blessing_bytes.to_vec())
                }
            };

        let server_blessing: Blessing =
            wire::decode(&server_identity_bytes).map_err(|_| HandshakeError::Malformed)?;
        let server_name = validate_chain(&server_blessing, &self.config.anchors)
            .map_err(|_| HandshakeError::BadChain)?;
        if !satisfies(&server_name, &self.policy) {
            return Err(HandshakeError::PeerRejected);
        }
        let signature = p256::ecdsa::Signature::from_slice(&signature_bytes)
            .map_err(|_| HandshakeError::Malformed)?;
        let msg = server_signature_message(
            &self.sid,
            &signed_over,
            &self.own_share,
            &response.server_share,
        );
        if !verify(
            server_blessing.public_key(),
            context::HANDSHAKE_SERVER,
            &msg,
            &signature,
        ) {
            return Err(HandshakeError::BadSignature);
        }

        // All checks passed: the client's identity may now leave the machine.
        let own_blessing_bytes =
            wire::encode(self.credential.blessing()).map_err(|_| HandshakeError::Malformed)?;
        let client_msg = client_signature_message(
            &self.sid,
            &own_blessing_bytes,
            &self.own_share,
            &response.server_share,
        );
        let client_sig = sign(&self.keypair, context::HANDSHAKE_CLIENT, &client_msg);
        let inner = crate::framing::pack(&[&own_blessing_bytes, &client_sig.to_bytes()]);
        let payload = aead::seal(&keys.htk, Direction::AuthClientToServer, 0, &inner);

        self.keys = Some(keys);
        self.peer_name = Some(server_name);
        Ok(AuthFinish {
            sid: self.sid,
            payload,
        })
    }

    pub fn abort(&mut self) {
        self.secret = None;
        self.keys = None;
        self.state = SessionState::Aborted;
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn sid(&self) -> &SessionId {
        &self.sid
    }

    /// Peer name, once complete.
    pub fn peer_name(&self) -> Option<&HierName> {
        self.peer_name.as_ref()
    }

    /// Application traffic key, once complete.
    pub fn session_key(&self) -> Option<[u8; 32]> {
        match self.state {
            SessionState::Complete => self.keys.as_ref().map(|k| k.atk),
            _ => None,
        }
    }

    /// Both traffic keys (diagnostics and tests).
    pub fn traffic_keys(&self) -> Option<&HandshakeKeys> {
        self.keys.as_ref()
    }

    /// Ephemeral exponent while the session is live; `None` after
    /// completion or abort. This is the state-reveal surface for the
    /// adversarial harness.
    pub fn reveal_session_state(&self) -> Option<[u8; 32]> {
        self.secret.as_ref().map(|s| s.bytes())
    }
}

/// Server half of the handshake.
pub struct ServerSession {
    config: HandshakeConfig,
    policy: PrefixPolicy,
    sid: SessionId,
    secret: Option<Exponent>,
    own_share: G1Affine,
    peer_share: G1Affine,
    keys: Option<HandshakeKeys>,
    peer_name: Option<HierName>,
    state: SessionState,
}

impl ServerSession {
    /// Respond to a client's init. In [`HandshakeMode::Cached`] the caller
    /// supplies the precomputed encrypted identity; the other modes build
    /// the response from the blessing directly.
    #[allow(clippy::too_many_arguments)]
    pub fn server_respond(
        config: HandshakeConfig,
        blessing: &Blessing,
        keypair: &SigningKeyPair,
        policy: PrefixPolicy,
        cached: Option<&CachedServerIdentity>,
        init: &AuthInit,
        rng: &mut (impl RngCore + CryptoRng),
    ) -> Result<(ServerSession, AuthResponse), HandshakeError> {
        if bool::from(init.client_share.is_identity()) {
            return Err(HandshakeError::Malformed);
        }
        let (secret, own_share) = Exponent::generate(rng);
        let shared = secret
            .diffie_hellman(&init.client_share)
            .ok_or(HandshakeError::Malformed)?;
        let keys = kdf_sigma(&init.client_share, &own_share, &shared);

        let payload = match config.mode {
            HandshakeMode::Cached => {
                let cached = cached.ok_or(HandshakeError::BadConfig)?;
                let msg = server_signature_message(
                    &init.sid,
                    cached.bytes(),
                    &init.client_share,
                    &own_share,
                );
                let sig = sign(keypair, context::HANDSHAKE_SERVER, &msg);
                let inner = crate::framing::pack(&[cached.bytes(), &sig.to_bytes()]);
                aead::seal(&keys.htk, Direction::AuthServerToClient, 0, &inner)
            }
            HandshakeMode::Unlinkable => {
                let blessing_bytes =
                    wire::encode(blessing).map_err(|_| HandshakeError::Malformed)?;
                let msg = server_signature_message(
                    &init.sid,
                    &blessing_bytes,
                    &init.client_share,
                    &own_share,
                );
                let sig = sign(keypair, context::HANDSHAKE_SERVER, &msg);
                let inner = crate::framing::pack(&[&blessing_bytes, &sig.to_bytes()]);
                let aead_ct = aead::seal(&keys.htk, Direction::AuthServerToClient, 0, &inner);
                let pe_ct = pe_enc(&config.mpk, &policy, &aead_ct, rng)
                    .map_err(|_| HandshakeError::Malformed)?;
                wire::encode(&pe_ct).map_err(|_| HandshakeError::Malformed)?
            }
            HandshakeMode::SigmaBaseline => {
                let blessing_bytes =
                    wire::encode(blessing).map_err(|_| HandshakeError::Malformed)?;
                let msg = server_signature_message(
                    &init.sid,
                    &blessing_bytes,
                    &init.client_share,
                    &own_share,
                );
                let sig = sign(keypair, context::HANDSHAKE_SERVER, &msg);
                let inner = crate::framing::pack(&[&blessing_bytes, &sig.to_bytes()]);
                aead::seal(&keys.htk, Direction::AuthServerToClient, 0, &inner)
            }
        };

        let response = AuthResponse {
            sid: init.sid,
            server_share: own_share,
            payload,
        };
        let session = ServerSession {
            config,
            policy,
            sid: init.sid,
            secret: Some(secret),
            own_share,
            peer_share: init.client_share,
            keys: Some(keys),
            peer_name: None,
            state: SessionState::AwaitFinish,
        };
        Ok((session, response))
    }

    /// Process the client's finish message; completes or aborts silently.
    pub fn server_process_finish(&mut self, finish: &AuthFinish) -> Result<(), HandshakeError> {
        match self.try_process_finish(finish) {
            Ok(()) => {
                self.secret = None;
                self.state = SessionState::Complete;
                Ok(())
            }
            Err(e) => {
                self.abort();
                Err(e)
            }
        }
    }

    fn try_process_finish(&mut self, finish: &AuthFinish) -> Result<(), HandshakeError> {
        if self.state != SessionState::AwaitFinish {
            return Err(HandshakeError::WrongState);
        }
        if finish.sid != self.sid {
            return Err(HandshakeError::SessionMismatch);
        }
        let keys = self.keys.as_ref().ok_or(HandshakeError::WrongState)?;
        let plain = aead::open(&keys.htk, Direction::AuthClientToServer, 0, &finish.payload)
            .ok_or(HandshakeError::AeadFailure)?;
        let [blessing_bytes, sig_bytes] = crate::framing::unpack::<2>(&plain).ok_or(HandshakeError::Malformed)?;
        let blessing: Blessing =
            wire::decode(blessing_bytes).map_err(|_| HandshakeError::Malformed)?;
        let client_name = validate_chain(&blessing, &self.config.anchors)
            .map_err(|_| HandshakeError::BadChain)?;
        if !satisfies(&client_name, &self.policy) {
            return Err(HandshakeError::PeerRejected);
        }
        let signature =
            p256::ecdsa::Signature::from_slice(sig_bytes).map_err(|_| HandshakeError::Malformed)?;
        let msg = client_signature_message(
            &self.sid,
            blessing_bytes,
            &self.peer_share,
            &self.own_share,
        );
        if !verify(
            blessing.public_key(),
            context::HANDSHAKE_CLIENT,
            &msg,
            &signature,
        ) {
            return Err(HandshakeError::BadSignature);
        }
        self.peer_name = Some(client_name);
        Ok(())
    }

    pub fn abort(&mut self) {
        self.secret = None;
        self.keys = None;
        self.state = SessionState::Aborted;
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn sid(&self) -> &SessionId {
        &self.sid
    }

    pub fn peer_name(&self) -> Option<&HierName> {
        self.peer_name.as_ref()
    }

    pub fn session_key(&self) -> Option<[u8; 32]> {
        match self.state {
            SessionState::Complete => self.keys.as_ref().map(|k| k.atk),
            _ => None,
        }
    }

    pub fn traffic_keys(&self) -> Option<&HandshakeKeys> {
        self.keys.as_ref()
    }

    pub fn reveal_session_state(&self) -> Option<[u8; 32]> {
        self.secret.as_ref().map(|s| s.bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::principals::{anchors_for, Principal};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    struct Fixture {
        config: HandshakeConfig,
        client: Principal,
        server: Principal,
        cached: CachedServerIdentity,
    }

    fn fixture(mode: HandshakeMode, rng: &mut StdRng) -> Fixture {
        let root = Principal::new_root("idp", rng).unwrap();
        let mpk = root.master_public().unwrap().clone();
        let anchors = anchors_for(&root);

        let client_keys = crate::principals::SigningKeyPair::generate(rng);
        let client_cred = root
            .issue(client_keys.public(), &["u", "alice", "phone"], rng)
            .unwrap();
        let mut client = Principal::from_parts(
            client_keys,
            client_cred,
            PrefixPolicy::single(HierName::parse("idp/u").unwrap()),
        );
        client.set_policy(PrefixPolicy::single(HierName::parse("idp/s").unwrap()));

        let server_keys = crate::principals::SigningKeyPair::generate(rng);
        let server_cred = root
            .issue(server_keys.public(), &["s", "printer"], rng)
            .unwrap();
        let mut server = Principal::from_parts(
            server_keys,
            server_cred,
            PrefixPolicy::single(HierName::parse("idp/u/alice").unwrap()),
        );
        server.set_policy(PrefixPolicy::single(HierName::parse("idp/u/alice").unwrap()));

        let cached = CachedServerIdentity::prepare(
            &mpk,
            server.policy(),
            server.credential().blessing(),
            rng,
        )
        .unwrap();

        Fixture {
            config: HandshakeConfig {
                mpk,
                anchors,
                mode,
            },
            client,
            server,
            cached,
        }
    }

    fn run(mode: HandshakeMode, rng: &mut StdRng) -> (ClientSession, ServerSession) {
        let fx = fixture(mode, rng);
        let (mut client, init) = ClientSession::client_init(
            fx.config.clone(),
            fx.client.credential().clone(),
            fx.client.keypair().clone(),
            fx.client.policy().clone(),
            rng,
        );
        let (mut server, response) = ServerSession::server_respond(
            fx.config.clone(),
            fx.server.credential().blessing(),
            fx.server.keypair(),
            fx.server.policy().clone(),
            Some(&fx.cached),
            &init,
            rng,
        )
        .unwrap();
        let finish = client.client_process_response(&response).unwrap();
        server.server_process_finish(&finish).unwrap();
        (client, server)
    }

    #[test]
    fn honest_run_agrees_in_all_modes() {
        let mut rng = StdRng::seed_from_u64(1);
        for mode in [
            HandshakeMode::Cached,
            HandshakeMode::Unlinkable,
            HandshakeMode::SigmaBaseline,
        ] {
            let (client, server) = run(mode, &mut rng);
            assert_eq!(client.state(), SessionState::Complete);
            assert_eq!(server.state(), SessionState::Complete);
            assert_eq!(client.session_key(), server.session_key());
            assert_eq!(
                client.traffic_keys().unwrap().htk,
                server.traffic_keys().unwrap().htk
            );
            assert_eq!(client.peer_name().unwrap().canonical(), "idp/s/printer");
            assert_eq!(
                server.peer_name().unwrap().canonical(),
                "idp/u/alice/phone"
            );
            // exponents erased on completion
            assert!(client.reveal_session_state().is_none());
            assert!(server.reveal_session_state().is_none());
        }
    }

    #[test]
    fn kdf_is_deterministic_and_share_order_matters() {
        let mut rng = StdRng::seed_from_u64(2);
        let (_, a) = Exponent::generate(&mut rng);
        let (_, b) = Exponent::generate(&mut rng);
        let (_, c) = Exponent::generate(&mut rng);
        let k1 = kdf_sigma(&a, &b, &c);
        let k2 = kdf_sigma(&a, &b, &c);
        assert_eq!(k1, k2);
        assert_ne!(k1.htk, k1.atk);
        let swapped = kdf_sigma(&b, &a, &c);
        assert_ne!(k1, swapped);
    }

    #[test]
    fn init_has_fresh_sid_and_never_leaks_exponent() {
        let mut rng = StdRng::seed_from_u64(3);
        let fx = fixture(HandshakeMode::Cached, &mut rng);
        let (c1, m1a) = ClientSession::client_init(
            fx.config.clone(),
            fx.client.credential().clone(),
            fx.client.keypair().clone(),
            fx.client.policy().clone(),
            &mut rng,
        );
        let (c2, m1b) = ClientSession::client_init(
            fx.config.clone(),
            fx.client.credential().clone(),
            fx.client.keypair().clone(),
            fx.client.policy().clone(),
            &mut rng,
        );
        assert_ne!(m1a.sid, m1b.sid);
        let bytes = wire::encode(&m1a).unwrap();
        assert_eq!(bytes.len(), 5 + 3 + 16 + 3 + 48);
        // the exponent must not appear in the serialized message
        let x = c1.reveal_session_state().unwrap();
        assert!(!bytes.windows(32).any(|w| w == x));
        let _ = c2;
    }

    #[test]
    fn cached_mode_reuses_encrypted_identity_bytes() {
        let mut rng = StdRng::seed_from_u64(4);
        let fx = fixture(HandshakeMode::Cached, &mut rng);
        // Two sessions; open each response with its own handshake key and
        // compare the embedded encrypted-identity bytes: a cache hit means
        // they are byte-identical even though the AEAD wrapping differs.
        let mut embedded = Vec::new();
        for _ in 0..2 {
            let (client, init) = ClientSession::client_init(
                fx.config.clone(),
                fx.client.credential().clone(),
                fx.client.keypair().clone(),
                fx.client.policy().clone(),
                &mut rng,
            );
            let (_, response) = ServerSession::server_respond(
                fx.config.clone(),
                fx.server.credential().blessing(),
                fx.server.keypair(),
                fx.server.policy().clone(),
                Some(&fx.cached),
                &init,
                &mut rng,
            )
            .unwrap();
            let x = client.reveal_session_state().unwrap();
            let scalar = blstrs::Scalar::from_bytes_be(&x).unwrap();
            let shared: G1Affine =
                (blstrs::G1Projective::from(response.server_share) * scalar).into();
            let keys = kdf_sigma(&init.client_share, &response.server_share, &shared);
            let plain =
                aead::open(&keys.htk, Direction::AuthServerToClient, 0, &response.payload)
                    .unwrap();
            let [ct_bytes, _sig] = crate::framing::unpack::<2>(&plain).unwrap();
            embedded.push(ct_bytes.to_vec());
        }
        assert_eq!(embedded[0], embedded[1]);
        assert_eq!(embedded[0], fx.cached.bytes());
    }

    #[test]
    fn unauthorized_client_aborts_before_sending_identity() {
        let mut rng = StdRng::seed_from_u64(5);
        let fx = fixture(HandshakeMode::Cached, &mut rng);

        // A client outside the server's policy.
        let root2 = Principal::new_root("idp", &mut rng);
        let _ = root2;
        let outsider_keys = crate::principals::SigningKeyPair::generate(&mut rng);
        let (mut client, init) = ClientSession::client_init(
            fx.config.clone(),
            {
                // reuse the fixture root to issue an unauthorized name
                let root = Principal::new_root("idp", &mut rng).unwrap();
                let _ = root;
                fx.client.credential().clone()
            },
            outsider_keys,
            fx.client.policy().clone(),
            &mut rng,
        );
        // Server policy only allows idp/u/alice; swap in a server whose
        // policy excludes the client to trigger the pre-decryption abort.
        let mut server_principal = fx.server.clone();
        server_principal.set_policy(PrefixPolicy::single(
            HierName::parse("idp/u/bob").unwrap(),
        ));
        let cached = CachedServerIdentity::prepare(
            &fx.config.mpk,
            server_principal.policy(),
            server_principal.credential().blessing(),
            &mut rng,
        )
        .unwrap();
        let (_, response) = ServerSession::server_respond(
            fx.config.clone(),
            server_principal.credential().blessing(),
            server_principal.keypair(),
            server_principal.policy().clone(),
            Some(&cached),
            &init,
            &mut rng,
        )
        .unwrap();
        let err = client.client_process_response(&response).unwrap_err();
        assert_eq!(err, HandshakeError::NotAuthorized);
        assert_eq!(client.state(), SessionState::Aborted);
        assert!(client.session_key().is_none());
    }

    #[test]
    fn client_rejects_server_outside_its_own_policy() {
        let mut rng = StdRng::seed_from_u64(9);
        let fx = fixture(HandshakeMode::Cached, &mut rng);
        // client policy only accepts idp/other; the fixture server is idp/s
        let strict_policy = PrefixPolicy::single(HierName::parse("idp/other").unwrap());
        let (mut client, init) = ClientSession::client_init(
            fx.config.clone(),
            fx.client.credential().clone(),
            fx.client.keypair().clone(),
            strict_policy,
            &mut rng,
        );
        let (_, response) = ServerSession::server_respond(
            fx.config.clone(),
            fx.server.credential().blessing(),
            fx.server.keypair(),
            fx.server.policy().clone(),
            Some(&fx.cached),
            &init,
            &mut rng,
        )
        .unwrap();
        assert_eq!(
            client.client_process_response(&response).unwrap_err(),
            HandshakeError::PeerRejected
        );
        assert_eq!(client.state(), SessionState::Aborted);
        // no finish message was produced, so the client identity never left
        assert!(client.session_key().is_none());
    }

    #[test]
    fn finish_replayed_into_other_session_fails() {
        let mut rng = StdRng::seed_from_u64(6);
        let fx = fixture(HandshakeMode::Cached, &mut rng);
        let start = |rng: &mut StdRng| {
            let (client, init) = ClientSession::client_init(
                fx.config.clone(),
                fx.client.credential().clone(),
                fx.client.keypair().clone(),
                fx.client.policy().clone(),
                rng,
            );
            let (server, response) = ServerSession::server_respond(
                fx.config.clone(),
                fx.server.credential().blessing(),
                fx.server.keypair(),
                fx.server.policy().clone(),
                Some(&fx.cached),
                &init,
                rng,
            )
            .unwrap();
            (client, server, response)
        };
        let (mut client_a, mut server_a, response_a) = start(&mut rng);
        let (mut client_b, mut server_b, response_b) = start(&mut rng);
        let finish_a = client_a.client_process_response(&response_a).unwrap();
        let _finish_b = client_b.client_process_response(&response_b).unwrap();

        // Splice finish from session A into session B.
        let spliced = AuthFinish {
            sid: *server_b.sid(),
            payload: finish_a.payload.clone(),
        };
        assert!(server_b.server_process_finish(&spliced).is_err());
        assert_eq!(server_b.state(), SessionState::Aborted);

        // The honest session still completes.
        assert!(server_a.server_process_finish(&finish_a).is_ok());
    }

    #[test]
    fn tampered_finish_aborts() {
        let mut rng = StdRng::seed_from_u64(7);
        let fx = fixture(HandshakeMode::Cached, &mut rng);
        let (mut client, init) = ClientSession::client_init(
            fx.config.clone(),
            fx.client.credential().clone(),
            fx.client.keypair().clone(),
            fx.client.policy().clone(),
            &mut rng,
        );
        let (mut server, response) = ServerSession::server_respond(
            fx.config.clone(),
            fx.server.credential().blessing(),
            fx.server.keypair(),
            fx.server.policy().clone(),
            Some(&fx.cached),
            &init,
            &mut rng,
        )
        .unwrap();
        let mut finish = client.client_process_response(&response).unwrap();
        finish.payload[10] ^= 1;
        assert_eq!(
            server.server_process_finish(&finish).unwrap_err(),
            HandshakeError::AeadFailure
        );
    }

    #[test]
    fn response_signature_binds_shares() {
        let mut rng = StdRng::seed_from_u64(8);
        let fx = fixture(HandshakeMode::Cached, &mut rng);
        let (mut client, init) = ClientSession::client_init(
            fx.config.clone(),
            fx.client.credential().clone(),
            fx.client.keypair().clone(),
            fx.client.policy().clone(),
            &mut rng,
        );
        let (_, mut response) = ServerSession::server_respond(
            fx.config.clone(),
            fx.server.credential().blessing(),
            fx.server.keypair(),
            fx.server.policy().clone(),
            Some(&fx.cached),
            &init,
            &mut rng,
        )
        .unwrap();
        // Replace the server share after signing: key derivation changes,
        // so the AEAD opens with the wrong key and the client aborts.
        let (_, fake_share) = Exponent::generate(&mut rng);
        response.server_share = fake_share;
        assert!(client.client_process_response(&response).is_err());
        assert_eq!(client.state(), SessionState::Aborted);
    }
}
