//! In-process adversarial message fabric and scenario runner.
//!
//! Parties exchange frames through a single queue that an adversary script
//! manipulates: deliver, drop, replay, mutate, inject, delay. Every
//! transmitted frame lands in a transcript, which doubles as the view of a
//! passive eavesdropper on the medium. Scenarios are deterministic given a
//! seed, time is virtual, and compromise hooks expose session state,
//! semi-static broadcast state, session keys, and long-term keys without
//! ever mutating protocol state.

use std::collections::VecDeque;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aead::{self, Direction};
use crate::discovery::{
    client_connect, process_broadcast, server_accept, Advertiser, BroadcastId, DiscoverySession,
    DiscoverySessionState, ReplayCache,
};
use crate::mutual_auth::{
    AuthFinish, AuthInit, AuthResponse, CachedServerIdentity, ClientSession, HandshakeConfig,
    HandshakeMode, ServerSession, SessionState,
};
use crate::pairing_ibe::MasterPublicKey;
use crate::prefix_crypto::{HierName, PrefixKeyRing, PrefixPolicy};
use crate::principals::{Credential, Principal, SigningKeyPair, TrustedRoots};
use crate::wire::{self, frame_type};

/// Virtual seconds of silence after which a live session counts as dead.
pub const SESSION_TIMEOUT_SECS: u64 = 30;
/// Virtual start-of-scenario wall clock.
pub const SCENARIO_EPOCH: u64 = 1_700_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("script references unknown party {0:?}")]
    UnknownParty(String),
    #[error("unparseable script line {0:?}")]
    BadScript(String),
    #[error("scenario exceeded its frame budget")]
    Runaway,
}

/// One adversary-controlled step.
#[derive(Debug, Clone)]
pub enum Action {
    /// Deliver the frame at the queue front.
    Deliver,
    /// Discard the frame at the queue front.
    Drop,
    /// Re-enqueue transcript entry `n` for delivery to its original
    /// recipient.
    Replay(usize),
    /// XOR one byte of the frame at the queue front.
    Mutate { offset: usize, xor: u8 },
    /// Enqueue an adversary-crafted frame.
    Inject {
        from: String,
        to: String,
        bytes: Vec<u8>,
    },
    /// Advance the virtual clock.
    Delay(u64),
}

/// An ordered adversary script plus the policy for whatever remains queued
/// after the last action.
#[derive(Debug, Clone, Default)]
pub struct Script {
    pub actions: Vec<Action>,
    /// Drop (rather than deliver) frames left after the script ends.
    pub drop_rest: bool,
}

impl Script {
    /// Deliver everything in order, touch nothing.
    pub fn passthrough() -> Self {
        Script::default()
    }

    /// Line-oriented text form, one action per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for action in &self.actions {
            match action {
                Action::Deliver => out.push_str("DELIVER\n"),
                Action::Drop => out.push_str("DROP\n"),
                Action::Replay(n) => out.push_str(&format!("REPLAY {n}\n")),
                Action::Mutate { offset, xor } => {
                    out.push_str(&format!("MUTATE {offset} {xor}\n"))
                }
                Action::Inject { from, to, bytes } => {
                    out.push_str(&format!("INJECT {from} {to} {}\n", hex::encode(bytes)))
                }
                Action::Delay(secs) => out.push_str(&format!("DELAY {secs}\n")),
            }
        }
        out.push_str(if self.drop_rest {
            "END DROP-REST\n"
        } else {
            "END DELIVER-REST\n"
        });
        out
    }

    /// Parse the text form produced by [`Script::to_text`].
    pub fn parse_text(text: &str) -> Result<Script, SimError> {
        let mut actions = Vec::new();
        let mut drop_rest = false;
        for line in text.lines() {
            let mut words = line.split_whitespace();
            let bad = || SimError::BadScript(line.to_string());
            match words.next() {
                Some("DELIVER") => actions.push(Action::Deliver),
                Some("DROP") => actions.push(Action::Drop),
                Some("REPLAY") => actions.push(Action::Replay(
                    words.next().and_then(|w| w.parse().ok()).ok_or_else(bad)?,
                )),
                Some("MUTATE") => {
                    let offset = words.next().and_then(|w| w.parse().ok()).ok_or_else(bad)?;
                    let xor = words.next().and_then(|w| w.parse().ok()).ok_or_else(bad)?;
                    actions.push(Action::Mutate { offset, xor });
                }
                Some("INJECT") => {
                    let from = words.next().ok_or_else(bad)?.to_string();
                    let to = words.next().ok_or_else(bad)?.to_string();
                    let bytes = words
                        .next()
                        .and_then(|w| hex::decode(w).ok())
                        .ok_or_else(bad)?;
                    actions.push(Action::Inject { from, to, bytes });
                }
                Some("DELAY") => actions.push(Action::Delay(
                    words.next().and_then(|w| w.parse().ok()).ok_or_else(bad)?,
                )),
                Some("END") => {
                    drop_rest = words.next() == Some("DROP-REST");
                }
                _ => return Err(bad()),
            }
        }
        Ok(Script { actions, drop_rest })
    }
}

/// A frame as captured in the transcript.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameRecord {
    pub seq: usize,
    pub time: u64,
    pub from: String,
    pub to: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartyStatus {
    /// At least one session completed.
    Complete,
    Aborted,
    /// Nothing happened that involves this party.
    Idle,
}

/// A completed session as reported by a party.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionRecord {
    pub bid: Option<String>,
    pub sid: String,
    pub peer: String,
    pub key_digest: String,
}

/// A session activation as reported by an initiating party.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationRecord {
    pub bid: Option<String>,
    pub sid: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartyOutput {
    pub name: String,
    /// Canonical blessing name, when the party has an identity.
    pub principal: Option<String>,
    pub status: PartyStatus,
    pub completions: Vec<CompletionRecord>,
    pub activations: Vec<ActivationRecord>,
    pub detail: String,
}

/// Read-only view of a party's secrets for the compromise hooks.
#[derive(Default)]
pub struct HookView {
    pub ephemeral_exponent: Option<[u8; 32]>,
    pub semi_static: Option<(BroadcastId, [u8; 32])>,
    pub session_key: Option<[u8; 32]>,
    pub signing_secret: Option<[u8; 32]>,
    pub keyring: Option<PrefixKeyRing>,
}

/// Everything `Corrupt` yields: long-term secrets.
pub struct CorruptionDump {
    pub signing_secret: Option<[u8; 32]>,
    pub keyring: Option<PrefixKeyRing>,
}

/// Per-delivery context handed to parties.
pub struct Ctx<'a> {
    pub now: u64,
    pub rng: &'a mut ChaCha20Rng,
}

/// An outbound frame.
pub struct Emit {
    pub to: String,
    pub bytes: Vec<u8>,
}

/// A protocol actor attached to the fabric.
pub trait Party {
    fn name(&self) -> &str;
    /// Called once when the scenario starts.
    fn start(&mut self, ctx: &mut Ctx<'_>) -> Vec<Emit> {
        let _ = ctx;
        Vec::new()
    }
    fn on_frame(&mut self, ctx: &mut Ctx<'_>, from: &str, bytes: &[u8]) -> Vec<Emit>;
    /// Called once when the scenario goes quiet: live sessions time out.
    fn finish(&mut self) {}
    fn output(&self) -> PartyOutput;
    fn hooks(&self) -> HookView {
        HookView::default()
    }
}

/// The message fabric: parties, pending queue, transcript, virtual clock.
pub struct Fabric {
    parties: Vec<Box<dyn Party>>,
    queue: VecDeque<(String, String, Vec<u8>)>,
    transcript: Vec<FrameRecord>,
    clock: u64,
    rng: ChaCha20Rng,
}

fn short_digest(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    hex::encode(&d[..8])
}

impl Fabric {
    pub fn new(seed: u64) -> Self {
        Fabric {
            parties: Vec::new(),
            queue: VecDeque::new(),
            transcript: Vec::new(),
            clock: SCENARIO_EPOCH,
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }

    pub fn add_party(&mut self, party: Box<dyn Party>) {
        self.parties.push(party);
    }

    fn party_index(&self, name: &str) -> Result<usize, SimError> {
        self.parties
            .iter()
            .position(|p| p.name() == name)
            .ok_or_else(|| SimError::UnknownParty(name.to_string()))
    }

    fn enqueue(&mut self, from: &str, emits: Vec<Emit>) -> Result<(), SimError> {
        for emit in emits {
            self.party_index(&emit.to)?;
            self.queue.push_back((from.to_string(), emit.to, emit.bytes));
        }
        Ok(())
    }

    fn deliver_front(&mut self) -> Result<(), SimError> {
        let Some((from, to, bytes)) = self.queue.pop_front() else {
            return Ok(());
        };
        self.transcript.push(FrameRecord {
            seq: self.transcript.len(),
            time: self.clock,
            from: from.clone(),
            to: to.clone(),
            bytes: bytes.clone(),
        });
        let idx = self.party_index(&to)?;
        let mut ctx = Ctx {
            now: self.clock,
            rng: &mut self.rng,
        };
        let emits = self.parties[idx].on_frame(&mut ctx, &from, &bytes);
        self.enqueue(&to.clone(), emits)
    }

    /// Run a script to completion and report.
    pub fn run(&mut self, script: &Script) -> Result<ScenarioReport, SimError> {
        // Start every party in registration order.
        for i in 0..self.parties.len() {
            let mut ctx = Ctx {
                now: self.clock,
                rng: &mut self.rng,
            };
            let emits = self.parties[i].start(&mut ctx);
            let from = self.parties[i].name().to_string();
            self.enqueue(&from, emits)?;
        }

        for action in &script.actions {
            match action {
                Action::Deliver => self.deliver_front()?,
                Action::Drop => {
                    self.queue.pop_front();
                }
                Action::Replay(n) => {
                    if let Some(record) = self.transcript.get(*n).cloned() {
                        self.queue
                            .push_back((record.from, record.to, record.bytes));
                    }
                }
                Action::Mutate { offset, xor } => {
                    if let Some((_, _, bytes)) = self.queue.front_mut() {
                        if let Some(b) = bytes.get_mut(*offset) {
                            *b ^= xor;
                        }
                    }
                }
                Action::Inject { from, to, bytes } => {
                    self.party_index(to)?;
                    self.queue
                        .push_back((from.clone(), to.clone(), bytes.clone()));
                }
                Action::Delay(secs) => {
                    self.clock += secs;
                }
            }
        }

        if script.drop_rest {
            self.queue.clear();
        }
        let mut budget = 10_000usize;
        while !self.queue.is_empty() {
            budget = budget.checked_sub(1).ok_or(SimError::Runaway)?;
            self.deliver_front()?;
        }

        // Queue is quiet; anything still in flight times out and aborts.
        self.clock += SESSION_TIMEOUT_SECS;
        for p in &mut self.parties {
            p.finish();
        }

        Ok(ScenarioReport {
            transcript: self.transcript.clone(),
            outputs: self.parties.iter().map(|p| p.output()).collect(),
            checks: Vec::new(),
        })
    }

    // --- compromise hooks: read-only, never alter protocol state ---

    /// Ephemeral session exponent of an incomplete session.
    pub fn reveal_session_state(&self, party: &str) -> Option<[u8; 32]> {
        let idx = self.party_index(party).ok()?;
        self.parties[idx].hooks().ephemeral_exponent
    }

    /// Semi-static exponent of a party's current broadcast.
    pub fn reveal_broadcast(&self, party: &str, bid: &BroadcastId) -> Option<[u8; 32]> {
        let idx = self.party_index(party).ok()?;
        match self.parties[idx].hooks().semi_static {
            Some((current, s)) if current == *bid => Some(s),
            _ => None,
        }
    }

    /// Application traffic key of a completed session.
    pub fn reveal_key(&self, party: &str) -> Option<[u8; 32]> {
        let idx = self.party_index(party).ok()?;
        self.parties[idx].hooks().session_key
    }

    /// Long-term secrets: signing key and prefix key ring.
    pub fn corrupt(&self, party: &str) -> Option<CorruptionDump> {
        let idx = self.party_index(party).ok()?;
        let hooks = self.parties[idx].hooks();
        Some(CorruptionDump {
            signing_secret: hooks.signing_secret,
            keyring: hooks.keyring,
        })
    }
}

/// The outcome of a scenario: full transcript, per-party outputs, and any
/// scenario-level checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioReport {
    pub transcript: Vec<FrameRecord>,
    pub outputs: Vec<PartyOutput>,
    /// Named boolean checks computed by canned scenarios.
    pub checks: Vec<(String, bool)>,
}

impl ScenarioReport {
    pub fn output(&self, name: &str) -> Option<&PartyOutput> {
        self.outputs.iter().find(|o| o.name == name)
    }

    /// Line-oriented text form for golden-file comparison.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for f in &self.transcript {
            out.push_str(&format!(
                "FRAME seq={} t={} from={} to={} len={} sha={}\n",
                f.seq,
                f.time,
                f.from,
                f.to,
                f.bytes.len(),
                short_digest(&f.bytes)
            ));
        }
        for o in &self.outputs {
            out.push_str(&format!(
                "PARTY name={} principal={} status={:?}",
                o.name,
                o.principal.as_deref().unwrap_or("-"),
                o.status
            ));
            for c in &o.completions {
                out.push_str(&format!(
                    " complete[bid={} sid={} peer={} key={}]",
                    c.bid.as_deref().unwrap_or("-"),
                    c.sid,
                    c.peer,
                    c.key_digest
                ));
            }
            if !o.detail.is_empty() {
                out.push_str(&format!(" detail={}", o.detail));
            }
            out.push('\n');
        }
        for (name, pass) in &self.checks {
            out.push_str(&format!("CHECK name={name} pass={pass}\n"));
        }
        out.push_str("END\n");
        out
    }
}

/// Count overlapping occurrences of `needle` across all transcript frames.
pub fn transcript_scan(transcript: &[FrameRecord], needle: &[u8]) -> usize {
    if needle.is_empty() {
        return 0;
    }
    transcript
        .iter()
        .map(|f| {
            if f.bytes.len() < needle.len() {
                0
            } else {
                f.bytes.windows(needle.len()).filter(|w| *w == needle).count()
            }
        })
        .sum()
}

/// Run `script` over `parties` on a fresh fabric.
pub fn run_scenario(
    seed: u64,
    script: &Script,
    parties: Vec<Box<dyn Party>>,
) -> Result<ScenarioReport, SimError> {
    let mut fabric = Fabric::new(seed);
    for p in parties {
        fabric.add_party(p);
    }
    fabric.run(script)
}

fn hex16(bytes: &[u8; 16]) -> String {
    hex::encode(bytes)
}

fn key_digest(key: &[u8; 32]) -> String {
    let d = Sha256::digest(key);
    hex::encode(&d[..8])
}

// --- mutual-authentication parties -------------------------------------------

/// Client running the private mutual authentication handshake.
pub struct AuthClientParty {
    name: String,
    server: String,
    config: HandshakeConfig,
    credential: Credential,
    keypair: SigningKeyPair,
    policy: PrefixPolicy,
    session: Option<ClientSession>,
    activations: Vec<ActivationRecord>,
    detail: String,
}

impl AuthClientParty {
    pub fn new(
        name: &str,
        server: &str,
        config: HandshakeConfig,
        principal: &Principal,
    ) -> Self {
        AuthClientParty {
            name: name.to_string(),
            server: server.to_string(),
            config,
            credential: principal.credential().clone(),
            keypair: principal.keypair().clone(),
            policy: principal.policy().clone(),
            session: None,
            activations: Vec::new(),
            detail: String::new(),
        }
    }
}

impl Party for AuthClientParty {
    fn name(&self) -> &str {
        &self.name
    }

    fn start(&mut self, ctx: &mut Ctx<'_>) -> Vec<Emit> {
        let (session, init) = ClientSession::client_init(
            self.config.clone(),
            self.credential.clone(),
            self.keypair.clone(),
            self.policy.clone(),
            ctx.rng,
        );
        self.activations.push(ActivationRecord {
            bid: None,
            sid: hex16(session.sid()),
        });
        self.session = Some(session);
        match wire::encode(&init) {
            Ok(bytes) => vec![Emit {
                to: self.server.clone(),
                bytes,
            }],
            Err(_) => Vec::new(),
        }
    }

    fn on_frame(&mut self, _ctx: &mut Ctx<'_>, _from: &str, bytes: &[u8]) -> Vec<Emit> {
        let Some(session) = self.session.as_mut() else {
            return Vec::new();
        };
        if session.state() != SessionState::AwaitResponse {
            return Vec::new(); // session closed; late frames fall on the floor
        }
        let Ok(response) = wire::decode::<AuthResponse>(bytes) else {
            self.detail = "malformed-response".into();
            session.abort();
            return Vec::new();
        };
        match session.client_process_response(&response) {
            Ok(finish) => match wire::encode(&finish) {
                Ok(bytes) => vec![Emit {
                    to: self.server.clone(),
                    bytes,
                }],
                Err(_) => Vec::new(),
            },
            Err(e) => {
                self.detail = format!("abort:{e:?}");
                Vec::new()
            }
        }
    }

    fn finish(&mut self) {
        if let Some(s) = self.session.as_mut() {
            if !matches!(s.state(), SessionState::Complete | SessionState::Aborted) {
                s.abort();
                self.detail = "timeout".into();
            }
        }
    }

    fn output(&self) -> PartyOutput {
        let (status, completions) = match &self.session {
            Some(s) => match s.state() {
                SessionState::Complete => (
                    PartyStatus::Complete,
                    vec![CompletionRecord {
                        bid: None,
                        sid: hex16(s.sid()),
                        peer: s.peer_name().map(|n| n.canonical()).unwrap_or_default(),
                        key_digest: s.session_key().map(|k| key_digest(&k)).unwrap_or_default(),
                    }],
                ),
                _ => (PartyStatus::Aborted, Vec::new()),
            },
            None => (PartyStatus::Idle, Vec::new()),
        };
        PartyOutput {
            name: self.name.clone(),
            principal: Some(self.credential.blessing().name().canonical()),
            status,
            completions,
            activations: self.activations.clone(),
            detail: self.detail.clone(),
        }
    }

    fn hooks(&self) -> HookView {
        HookView {
            ephemeral_exponent: self.session.as_ref().and_then(|s| s.reveal_session_state()),
            session_key: self.session.as_ref().and_then(|s| s.session_key()),
            signing_secret: Some(self.keypair.secret_bytes()),
            keyring: self.credential.keyring().cloned(),
            semi_static: None,
        }
    }
}

/// Server running the private mutual authentication handshake. Accepts any
/// number of sessions, one per session id.
pub struct AuthServerParty {
    name: String,
    config: HandshakeConfig,
    credential: Credential,
    keypair: SigningKeyPair,
    policy: PrefixPolicy,
    cached: Option<CachedServerIdentity>,
    sessions: Vec<(String, ServerSession)>,
    detail: String,
}

impl AuthServerParty {
    pub fn new(
        name: &str,
        config: HandshakeConfig,
        principal: &Principal,
        cached: Option<CachedServerIdentity>,
    ) -> Self {
        AuthServerParty {
            name: name.to_string(),
            config,
            credential: principal.credential().clone(),
            keypair: principal.keypair().clone(),
            policy: principal.policy().clone(),
            cached,
            sessions: Vec::new(),
            detail: String::new(),
        }
    }
}

impl Party for AuthServerParty {
    fn name(&self) -> &str {
        &self.name
    }

    fn finish(&mut self) {
        for (_, s) in &mut self.sessions {
            if !matches!(s.state(), SessionState::Complete | SessionState::Aborted) {
                s.abort();
            }
        }
    }

    fn on_frame(&mut self, ctx: &mut Ctx<'_>, from: &str, bytes: &[u8]) -> Vec<Emit> {
        match wire::frame_type_of(bytes) {
            Some(frame_type::AUTH_INIT) => {
                let Ok(init) = wire::decode::<AuthInit>(bytes) else {
                    self.detail = "malformed-init".into();
                    return Vec::new();
                };
                let sid = hex16(&init.sid);
                if self.sessions.iter().any(|(s, _)| *s == sid) {
                    return Vec::new(); // duplicate init ignored
                }
                match ServerSession::server_respond(
                    self.config.clone(),
                    self.credential.blessing(),
                    &self.keypair,
                    self.policy.clone(),
                    self.cached.as_ref(),
                    &init,
                    ctx.rng,
                ) {
                    Ok((session, response)) => {
                        self.sessions.push((sid, session));
                        match wire::encode(&response) {
                            Ok(bytes) => vec![Emit {
                                to: from.to_string(),
                                bytes,
                            }],
                            Err(_) => Vec::new(),
                        }
                    }
                    Err(e) => {
                        self.detail = format!("abort:{e:?}");
                        Vec::new()
                    }
                }
            }
            Some(frame_type::AUTH_FINISH) => {
                let Ok(finish) = wire::decode::<AuthFinish>(bytes) else {
                    self.detail = "malformed-finish".into();
                    return Vec::new();
                };
                let sid = hex16(&finish.sid);
                if let Some((_, session)) = self.sessions.iter_mut().find(|(s, _)| *s == sid) {
                    if session.state() == SessionState::AwaitFinish {
                        if let Err(e) = session.server_process_finish(&finish) {
                            self.detail = format!("abort:{e:?}");
                        }
                    }
                }
                Vec::new()
            }
            _ => Vec::new(),
        }
    }

    fn output(&self) -> PartyOutput {
        let completions: Vec<CompletionRecord> = self
            .sessions
            .iter()
            .filter(|(_, s)| s.state() == SessionState::Complete)
            .map(|(sid, s)| CompletionRecord {
                bid: None,
                sid: sid.clone(),
                peer: s.peer_name().map(|n| n.canonical()).unwrap_or_default(),
                key_digest: s.session_key().map(|k| key_digest(&k)).unwrap_or_default(),
            })
            .collect();
        let status = if !completions.is_empty() {
            PartyStatus::Complete
        } else if self.sessions.is_empty() && self.detail.is_empty() {
            PartyStatus::Idle
        } else {
            PartyStatus::Aborted
        };
        PartyOutput {
            name: self.name.clone(),
            principal: Some(self.credential.blessing().name().canonical()),
            status,
            completions,
            activations: Vec::new(),
            detail: self.detail.clone(),
        }
    }

    fn hooks(&self) -> HookView {
        let live = self
            .sessions
            .iter()
            .find(|(_, s)| s.reveal_session_state().is_some());
        let complete = self
            .sessions
            .iter()
            .find(|(_, s)| s.session_key().is_some());
        HookView {
            ephemeral_exponent: live.and_then(|(_, s)| s.reveal_session_state()),
            session_key: complete.and_then(|(_, s)| s.session_key()),
            signing_secret: Some(self.keypair.secret_bytes()),
            keyring: self.credential.keyring().cloned(),
            semi_static: None,
        }
    }
}

// --- discovery parties ---------------------------------------------------------

/// Server advertising a service and accepting 0-RTT sessions.
pub struct DiscServerParty {
    name: String,
    listeners: Vec<String>,
    mpk: MasterPublicKey,
    anchors: TrustedRoots,
    credential: Credential,
    keypair: SigningKeyPair,
    policy: PrefixPolicy,
    ttl: u64,
    app_data: Option<Vec<u8>>,
    advertiser: Advertiser,
    cache: Option<ReplayCache>,
    completions: Vec<CompletionRecord>,
    rejects: usize,
    detail: String,
}

impl DiscServerParty {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        listeners: &[&str],
        mpk: MasterPublicKey,
        anchors: TrustedRoots,
        principal: &Principal,
        ttl: u64,
        app_data: Option<Vec<u8>>,
    ) -> Self {
        DiscServerParty {
            name: name.to_string(),
            listeners: listeners.iter().map(|s| s.to_string()).collect(),
            mpk,
            anchors,
            credential: principal.credential().clone(),
            keypair: principal.keypair().clone(),
            policy: principal.policy().clone(),
            ttl,
            app_data,
            advertiser: Advertiser::new(),
            cache: None,
            completions: Vec::new(),
            rejects: 0,
            detail: String::new(),
        }
    }

    pub fn reject_count(&self) -> usize {
        self.rejects
    }
}

impl Party for DiscServerParty {
    fn name(&self) -> &str {
        &self.name
    }

    fn start(&mut self, ctx: &mut Ctx<'_>) -> Vec<Emit> {
        let Ok((broadcast, cache)) = self.advertiser.make_broadcast(
            self.credential.blessing(),
            &self.keypair,
            &self.mpk,
            &self.policy,
            self.ttl,
            ctx.now,
            ctx.rng,
        ) else {
            self.detail = "broadcast-failed".into();
            return Vec::new();
        };
        self.cache = Some(cache);
        let Ok(bytes) = wire::encode(&broadcast) else {
            return Vec::new();
        };
        self.listeners
            .iter()
            .map(|to| Emit {
                to: to.clone(),
                bytes: bytes.clone(),
            })
            .collect()
    }

    fn on_frame(&mut self, ctx: &mut Ctx<'_>, from: &str, bytes: &[u8]) -> Vec<Emit> {
        if wire::frame_type_of(bytes) != Some(frame_type::CONNECT_REQUEST) {
            return Vec::new();
        }
        let Ok(request) = wire::decode::<crate::discovery::ConnectRequest>(bytes) else {
            self.rejects += 1;
            self.detail = "malformed-request".into();
            return Vec::new();
        };
        let (Some(sstate), Some(cache)) = (self.advertiser.state(), self.cache.as_ref()) else {
            self.rejects += 1;
            return Vec::new();
        };
        match server_accept(
            self.credential.blessing(),
            &self.policy,
            &self.anchors,
            sstate,
            cache,
            &request,
            self.app_data.as_deref(),
            ctx.now,
            ctx.rng,
        ) {
            Ok(accepted) => {
                self.completions.push(CompletionRecord {
                    bid: Some(hex16(&request.bid.0)),
                    sid: hex16(&request.sid),
                    peer: accepted.client_name.canonical(),
                    key_digest: key_digest(&accepted.session_key),
                });
                match wire::encode(&accepted.response) {
                    Ok(bytes) => vec![Emit {
                        to: from.to_string(),
                        bytes,
                    }],
                    Err(_) => Vec::new(),
                }
            }
            Err(e) => {
                self.rejects += 1;
                self.detail = format!("reject:{e:?}");
                Vec::new()
            }
        }
    }

    fn output(&self) -> PartyOutput {
        let status = if !self.completions.is_empty() {
            PartyStatus::Complete
        } else if self.rejects > 0 {
            PartyStatus::Aborted
        } else {
            PartyStatus::Idle
        };
        PartyOutput {
            name: self.name.clone(),
            principal: Some(self.credential.blessing().name().canonical()),
            status,
            completions: self.completions.clone(),
            activations: Vec::new(),
            detail: self.detail.clone(),
        }
    }

    fn hooks(&self) -> HookView {
        HookView {
            ephemeral_exponent: None,
            semi_static: self
                .advertiser
                .state()
                .map(|s| (s.bid(), s.reveal_semi_static())),
            session_key: None,
            signing_secret: Some(self.keypair.secret_bytes()),
            keyring: self.credential.keyring().cloned(),
        }
    }
}

/// Client discovering a service and connecting with 0-RTT.
pub struct DiscClientParty {
    name: String,
    mpk: MasterPublicKey,
    anchors: TrustedRoots,
    credential: Credential,
    keypair: SigningKeyPair,
    policy: PrefixPolicy,
    early_data: Option<Vec<u8>>,
    session: Option<DiscoverySession>,
    session_key: Option<[u8; 32]>,
    activations: Vec<ActivationRecord>,
    detail: String,
}

impl DiscClientParty {
    pub fn new(
        name: &str,
        mpk: MasterPublicKey,
        anchors: TrustedRoots,
        principal: &Principal,
        early_data: Option<Vec<u8>>,
    ) -> Self {
        DiscClientParty {
            name: name.to_string(),
            mpk,
            anchors,
            credential: principal.credential().clone(),
            keypair: principal.keypair().clone(),
            policy: principal.policy().clone(),
            early_data,
            session: None,
            session_key: None,
            activations: Vec::new(),
            detail: String::new(),
        }
    }
}

impl Party for DiscClientParty {
    fn name(&self) -> &str {
        &self.name
    }

    fn finish(&mut self) {
        if let Some(s) = self.session.as_mut() {
            if s.state() == DiscoverySessionState::AwaitResponse {
                s.abort();
                self.detail = "timeout".into();
            }
        }
    }

    fn on_frame(&mut self, ctx: &mut Ctx<'_>, from: &str, bytes: &[u8]) -> Vec<Emit> {
        match wire::frame_type_of(bytes) {
            Some(frame_type::BROADCAST) => {
                if self.session.is_some() {
                    return Vec::new(); // one session per scenario
                }
                let svc = match process_broadcast(
                    &self.credential,
                    &self.policy,
                    &self.mpk,
                    &self.anchors,
                    bytes,
                    ctx.now,
                ) {
                    Ok(svc) => svc,
                    Err(e) => {
                        self.detail = format!("drop-broadcast:{e:?}");
                        return Vec::new();
                    }
                };
                match client_connect(
                    &self.credential,
                    &self.keypair,
                    &svc,
                    self.early_data.as_deref(),
                    ctx.now,
                    ctx.rng,
                ) {
                    Ok((session, request)) => {
                        self.activations.push(ActivationRecord {
                            bid: Some(hex16(&session.bid().0)),
                            sid: hex16(&session.sid()),
                        });
                        self.session = Some(session);
                        match wire::encode(&request) {
                            Ok(bytes) => vec![Emit {
                                to: from.to_string(),
                                bytes,
                            }],
                            Err(_) => Vec::new(),
                        }
                    }
                    Err(e) => {
                        self.detail = format!("connect-failed:{e:?}");
                        Vec::new()
                    }
                }
            }
            Some(frame_type::CONNECT_RESPONSE) => {
                let Some(session) = self.session.as_mut() else {
                    return Vec::new();
                };
                if session.state() != DiscoverySessionState::AwaitResponse {
                    return Vec::new();
                }
                let Ok(response) = wire::decode::<crate::discovery::ConnectResponse>(bytes) else {
                    self.detail = "malformed-response".into();
                    session.abort();
                    return Vec::new();
                };
                match session.client_complete(&response) {
                    Ok((key, _app)) => {
                        self.session_key = Some(key);
                    }
                    Err(e) => {
                        self.detail = format!("abort:{e:?}");
                    }
                }
                Vec::new()
            }
            _ => Vec::new(),
        }
    }

    fn output(&self) -> PartyOutput {
        let (status, completions) = match &self.session {
            Some(s) => match s.state() {
                DiscoverySessionState::Complete => (
                    PartyStatus::Complete,
                    vec![CompletionRecord {
                        bid: Some(hex16(&s.bid().0)),
                        sid: hex16(&s.sid()),
                        peer: s.server_name().canonical(),
                        key_digest: s.session_key().map(|k| key_digest(&k)).unwrap_or_default(),
                    }],
                ),
                _ => (PartyStatus::Aborted, Vec::new()),
            },
            None => {
                if self.detail.is_empty() {
                    (PartyStatus::Idle, Vec::new())
                } else {
                    (PartyStatus::Aborted, Vec::new())
                }
            }
        };
        PartyOutput {
            name: self.name.clone(),
            principal: Some(self.credential.blessing().name().canonical()),
            status,
            completions,
            activations: self.activations.clone(),
            detail: self.detail.clone(),
        }
    }

    fn hooks(&self) -> HookView {
        HookView {
            ephemeral_exponent: self.session.as_ref().and_then(|s| s.reveal_session_state()),
            session_key: self.session_key,
            signing_secret: Some(self.keypair.secret_bytes()),
            keyring: self.credential.keyring().cloned(),
            semi_static: None,
        }
    }
}

/// Passive observer: a registered endpoint that never sends. Its view of
/// the network is the scenario transcript itself.
pub struct EavesdropperParty {
    name: String,
    frames_seen: usize,
}

impl EavesdropperParty {
    pub fn new(name: &str) -> Self {
        EavesdropperParty {
            name: name.to_string(),
            frames_seen: 0,
        }
    }
}

impl Party for EavesdropperParty {
    fn name(&self) -> &str {
        &self.name
    }

    fn on_frame(&mut self, _ctx: &mut Ctx<'_>, _from: &str, _bytes: &[u8]) -> Vec<Emit> {
        self.frames_seen += 1;
        Vec::new()
    }

    fn output(&self) -> PartyOutput {
        PartyOutput {
            name: self.name.clone(),
            principal: None,
            status: PartyStatus::Idle,
            completions: Vec::new(),
            activations: Vec::new(),
            detail: format!("frames={}", self.frames_seen),
        }
    }
}

/// Fixture mimicking a legacy handshake that exchanges certificate chains
/// in the clear. Exists so identity-leak scans have a positive control.
pub struct PlaintextPeerParty {
    name: String,
    peer: String,
    blessing_bytes: Vec<u8>,
    initiator: bool,
    received: bool,
}

impl PlaintextPeerParty {
    pub fn new(name: &str, peer: &str, principal: &Principal, initiator: bool) -> Self {
        PlaintextPeerParty {
            name: name.to_string(),
            peer: peer.to_string(),
            blessing_bytes: wire::encode(principal.credential().blessing())
                .expect("blessing encodes"),
            initiator,
            received: false,
        }
    }
}

impl Party for PlaintextPeerParty {
    fn name(&self) -> &str {
        &self.name
    }

    fn start(&mut self, _ctx: &mut Ctx<'_>) -> Vec<Emit> {
        if self.initiator {
            vec![Emit {
                to: self.peer.clone(),
                bytes: self.blessing_bytes.clone(),
            }]
        } else {
            Vec::new()
        }
    }

    fn on_frame(&mut self, _ctx: &mut Ctx<'_>, _from: &str, _bytes: &[u8]) -> Vec<Emit> {
        let first = !self.received;
        self.received = true;
        if !self.initiator && first {
            vec![Emit {
                to: self.peer.clone(),
                bytes: self.blessing_bytes.clone(),
            }]
        } else {
            Vec::new()
        }
    }

    fn output(&self) -> PartyOutput {
        PartyOutput {
            name: self.name.clone(),
            principal: None,
            status: if self.received {
                PartyStatus::Complete
            } else {
                PartyStatus::Idle
            },
            completions: Vec::new(),
            activations: Vec::new(),
            detail: String::new(),
        }
    }
}

// --- file-sharing demo scenario ----------------------------------------------

const BEACON_FRAME_TAG: u8 = 0xB1;
const FILE_FRAME_TAG: u8 = 0xF1;

fn contact_beacon(name: &HierName) -> [u8; 8] {
    let d = Sha256::digest(name.canonical().as_bytes());
    d[..8].try_into().expect("slice is 8 bytes")
}

/// File sender: advertises a truncated hash of its own identity, then runs
/// the private mutual authentication handshake as client and ships the file
/// under the session key.
pub struct FileSenderParty {
    name: String,
    receiver: String,
    config: HandshakeConfig,
    principal: Principal,
    file: Vec<u8>,
    session: Option<ClientSession>,
    sent_file: bool,
    detail: String,
}

impl FileSenderParty {
    pub fn new(
        name: &str,
        receiver: &str,
        config: HandshakeConfig,
        principal: Principal,
        file: Vec<u8>,
    ) -> Self {
        FileSenderParty {
            name: name.to_string(),
            receiver: receiver.to_string(),
            config,
            principal,
            file,
            session: None,
            sent_file: false,
            detail: String::new(),
        }
    }
}

impl Party for FileSenderParty {
    fn name(&self) -> &str {
        &self.name
    }

    fn start(&mut self, _ctx: &mut Ctx<'_>) -> Vec<Emit> {
        let mut beacon = vec![BEACON_FRAME_TAG];
        beacon.extend_from_slice(&contact_beacon(&self.principal.name()));
        vec![Emit {
            to: self.receiver.clone(),
            bytes: beacon,
        }]
    }

    fn on_frame(&mut self, ctx: &mut Ctx<'_>, _from: &str, bytes: &[u8]) -> Vec<Emit> {
        // Receiver answered the beacon with a bare endpoint pointer: begin
        // the private handshake.
        if bytes.len() == wire::BLE_POINTER_BYTES && self.session.is_none() {
            if wire::parse_ble_pointer(bytes).is_err() {
                return Vec::new();
            }
            let (session, init) = ClientSession::client_init(
                self.config.clone(),
                self.principal.credential().clone(),
                self.principal.keypair().clone(),
                self.principal.policy().clone(),
                ctx.rng,
            );
            self.session = Some(session);
            return match wire::encode(&init) {
                Ok(bytes) => vec![Emit {
                    to: self.receiver.clone(),
                    bytes,
                }],
                Err(_) => Vec::new(),
            };
        }
        if wire::frame_type_of(bytes) == Some(frame_type::AUTH_RESPONSE) {
            let Some(session) = self.session.as_mut() else {
                return Vec::new();
            };
            let Ok(response) = wire::decode::<AuthResponse>(bytes) else {
                session.abort();
                return Vec::new();
            };
            return match session.client_process_response(&response) {
                Ok(finish) => {
                    let mut emits = Vec::new();
                    if let Ok(bytes) = wire::encode(&finish) {
                        emits.push(Emit {
                            to: self.receiver.clone(),
                            bytes,
                        });
                    }
                    // handshake done on our side: ship the file under atk
                    if let Some(atk) = session.session_key() {
                        let mut frame = vec![FILE_FRAME_TAG];
                        frame.extend_from_slice(&aead::seal(
                            &atk,
                            Direction::AppClientToServer,
                            0,
                            &self.file,
                        ));
                        self.sent_file = true;
                        emits.push(Emit {
                            to: self.receiver.clone(),
                            bytes: frame,
                        });
                    }
                    emits
                }
                Err(e) => {
                    self.detail = format!("abort:{e:?}");
                    Vec::new()
                }
            };
        }
        Vec::new()
    }

    fn output(&self) -> PartyOutput {
        let status = match &self.session {
            Some(s) if s.state() == SessionState::Complete && self.sent_file => {
                PartyStatus::Complete
            }
            Some(_) => PartyStatus::Aborted,
            None => PartyStatus::Idle,
        };
        PartyOutput {
            name: self.name.clone(),
            principal: Some(self.principal.name().canonical()),
            status,
            completions: Vec::new(),
            activations: Vec::new(),
            detail: self.detail.clone(),
        }
    }
}

/// File receiver: matches beacons against its contact list; on a match it
/// answers with a bare endpoint pointer and serves the private mutual
/// authentication handshake with its identity encrypted to the matched
/// contact's name. Non-contacts get silence.
pub struct FileReceiverParty {
    name: String,
    config: HandshakeConfig,
    principal: Principal,
    contacts: Vec<HierName>,
    session: Option<ServerSession>,
    received_file: Option<Vec<u8>>,
    detail: String,
}

impl FileReceiverParty {
    pub fn new(
        name: &str,
        config: HandshakeConfig,
        principal: Principal,
        contacts: Vec<HierName>,
    ) -> Self {
        FileReceiverParty {
            name: name.to_string(),
            config,
            principal,
            contacts,
            session: None,
            received_file: None,
            detail: String::new(),
        }
    }

    pub fn received_file(&self) -> Option<&[u8]> {
        self.received_file.as_deref()
    }
}

impl Party for FileReceiverParty {
    fn name(&self) -> &str {
        &self.name
    }

    fn on_frame(&mut self, ctx: &mut Ctx<'_>, from: &str, bytes: &[u8]) -> Vec<Emit> {
        if bytes.first() == Some(&BEACON_FRAME_TAG) && bytes.len() == 9 {
            // Identity encrypted under the matched contact's name; silence
            // when nothing matches.
            let matched = self
                .contacts
                .iter()
                .find(|c| contact_beacon(c)[..] == bytes[1..]);
            let Some(contact) = matched else {
                self.detail = "beacon-no-match".into();
                return Vec::new();
            };
            self.principal
                .set_policy(PrefixPolicy::single(contact.clone()));
            let pointer = wire::to_ble_pointer(&wire::BlePointer {
                address: [0u8; 16],
                port: 443,
            });
            let _ = ctx;
            return vec![Emit {
                to: from.to_string(),
                bytes: pointer.to_vec(),
            }];
        }
        match wire::frame_type_of(bytes) {
            Some(frame_type::AUTH_INIT) => {
                let Ok(init) = wire::decode::<AuthInit>(bytes) else {
                    return Vec::new();
                };
                let Ok(cached) = CachedServerIdentity::prepare(
                    &self.config.mpk,
                    self.principal.policy(),
                    self.principal.credential().blessing(),
                    ctx.rng,
                ) else {
                    return Vec::new();
                };
                match ServerSession::server_respond(
                    self.config.clone(),
                    self.principal.credential().blessing(),
                    self.principal.keypair(),
                    self.principal.policy().clone(),
                    Some(&cached),
                    &init,
                    ctx.rng,
                ) {
                    Ok((session, response)) => {
                        self.session = Some(session);
                        match wire::encode(&response) {
                            Ok(bytes) => vec![Emit {
                                to: from.to_string(),
                                bytes,
                            }],
                            Err(_) => Vec::new(),
                        }
                    }
                    Err(e) => {
                        self.detail = format!("abort:{e:?}");
                        Vec::new()
                    }
                }
            }
            Some(frame_type::AUTH_FINISH) => {
                let Some(session) = self.session.as_mut() else {
                    return Vec::new();
                };
                let Ok(finish) = wire::decode::<AuthFinish>(bytes) else {
                    session.abort();
                    return Vec::new();
                };
                if let Err(e) = session.server_process_finish(&finish) {
                    self.detail = format!("abort:{e:?}");
                }
                Vec::new()
            }
            _ => {
                if bytes.first() == Some(&FILE_FRAME_TAG) {
                    if let Some(session) = &self.session {
                        if let Some(atk) = session.session_key() {
                            self.received_file = aead::open(
                                &atk,
                                Direction::AppClientToServer,
                                0,
                                &bytes[1..],
                            );
                        }
                    }
                }
                Vec::new()
            }
        }
    }

    fn output(&self) -> PartyOutput {
        let status = match &self.session {
            Some(s) if s.state() == SessionState::Complete => PartyStatus::Complete,
            Some(_) => PartyStatus::Aborted,
            None => PartyStatus::Idle,
        };
        let detail = match (&self.received_file, self.detail.is_empty()) {
            (Some(f), _) => format!("file-bytes={}", f.len()),
            (None, false) => self.detail.clone(),
            (None, true) => String::new(),
        };
        PartyOutput {
            name: self.name.clone(),
            principal: Some(self.principal.name().canonical()),
            status,
            completions: Vec::new(),
            activations: Vec::new(),
            detail,
        }
    }
}

/// The file-sharing privacy demo: beacon match, private mutual
/// authentication, file transfer under the session key, with a passive
/// eavesdropper registered on the fabric. Checks recorded in the report:
/// the receiver's identity bytes never appear on the wire, both endpoints
/// complete, and a non-contact variant stays silent.
pub fn airdrop_fix_scenario(seed: u64, sender_is_contact: bool) -> ScenarioReport {
    let mut setup_rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5e7);
    let root = Principal::new_root("idp", &mut setup_rng).expect("root");
    let mpk = root.master_public().expect("root has master key").clone();
    let anchors = crate::principals::anchors_for(&root);

    let sender_keys = SigningKeyPair::generate(&mut setup_rng);
    let sender_cred = root
        .issue(sender_keys.public(), &["u", "alice", "laptop"], &mut setup_rng)
        .expect("issue sender");
    let mut sender = Principal::from_parts(
        sender_keys,
        sender_cred,
        PrefixPolicy::single(HierName::parse("idp/u").unwrap()),
    );
    // Sender accepts any receiver under idp/u; its own identity is what the
    // receiver's contact list must match.
    sender.set_policy(PrefixPolicy::single(HierName::parse("idp/u").unwrap()));

    let receiver_keys = SigningKeyPair::generate(&mut setup_rng);
    let receiver_cred = root
        .issue(receiver_keys.public(), &["u", "bob", "phone"], &mut setup_rng)
        .expect("issue receiver");
    let receiver = Principal::from_parts(
        receiver_keys,
        receiver_cred,
        PrefixPolicy::single(HierName::parse("idp/u").unwrap()),
    );

    let contact = if sender_is_contact {
        sender.name()
    } else {
        HierName::parse("idp/u/carol/tablet").unwrap()
    };

    let receiver_blessing_bytes =
        wire::encode(receiver.credential().blessing()).expect("blessing encodes");

    let config = HandshakeConfig {
        mpk,
        anchors,
        mode: HandshakeMode::Cached,
    };

    let mut fabric = Fabric::new(seed);
    fabric.add_party(Box::new(FileSenderParty::new(
        "sender",
        "receiver",
        config.clone(),
        sender,
        b"vacation-photos.tar".to_vec(),
    )));
    fabric.add_party(Box::new(FileReceiverParty::new(
        "receiver",
        config,
        receiver,
        vec![contact],
    )));
    fabric.add_party(Box::new(EavesdropperParty::new("eavesdropper")));

    let mut report = fabric
        .run(&Script::passthrough())
        .expect("scenario parties are registered");

    let leaked = transcript_scan(&report.transcript, &receiver_blessing_bytes);
    let sender_done = report
        .output("sender")
        .map(|o| o.status == PartyStatus::Complete)
        .unwrap_or(false);
    let receiver_done = report
        .output("receiver")
        .map(|o| o.status == PartyStatus::Complete)
        .unwrap_or(false);
    let receiver_frames = report
        .transcript
        .iter()
        .filter(|f| f.from == "receiver")
        .count();

    report
        .checks
        .push(("receiver-identity-hidden".into(), leaked == 0));
    if sender_is_contact {
        report.checks.push(("sender-complete".into(), sender_done));
        report
            .checks
            .push(("receiver-complete".into(), receiver_done));
    } else {
        report
            .checks
            .push(("receiver-silent".into(), receiver_frames == 0));
    }
    report
}
