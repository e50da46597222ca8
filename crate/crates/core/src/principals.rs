//! Principals, signing keys, and blessings.
//!
//! A blessing is a certificate chain binding a hierarchical name to a
//! signature verification key: each certificate extends the name by one
//! component and is signed by the previous certificate's subject key (the
//! root is self-signed). Authorization decisions always use the validated
//! name, never the raw key.
//!
//! Signatures are ECDSA P-256 with deterministic nonces. Every signed
//! payload is framed with a context label and the signer's own verification
//! key, so signatures cannot be replayed across contexts and duplicate
//! signature key selection gets no purchase. Certificates additionally bind
//! a digest of the parent chain, which rules out chain splicing.

use p256::ecdsa::signature::{Signer, Verifier};
use p256::ecdsa::{Signature, SigningKey, VerifyingKey};
use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::hash::{tag, tagged_hash32};
use crate::pairing_ibe::{ibe_setup, GroupParams, MasterKeyPair, MasterPublicKey, MasterSecretKey};
use crate::prefix_crypto::{keyring_extract, HierName, PrefixError, PrefixKeyRing, PrefixPolicy};

/// Serialized verification key length (SEC1 compressed).
pub const VERIFYING_KEY_BYTES: usize = 33;
/// Serialized signature length (fixed-width r || s).
pub const SIGNATURE_BYTES: usize = 64;

/// Signature context labels. Each protocol message family signs under its
/// own label.
pub mod context {
    pub const CERTIFICATE: &[u8] = b"pds:cert:v1";
    pub const HANDSHAKE_SERVER: &[u8] = b"pds:hs-server:v1";
    pub const HANDSHAKE_CLIENT: &[u8] = b"pds:hs-client:v1";
    pub const BROADCAST: &[u8] = b"pds:bcast:v1";
    pub const DISCOVERY_CLIENT: &[u8] = b"pds:disc-client:v1";
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PrincipalError {
    #[error("invalid name component: {0}")]
    InvalidComponent(&'static str),
    #[error("certificate chain is empty")]
    EmptyChain,
    #[error("certificate signature does not verify against its issuer")]
    BrokenLink,
    #[error("chain root is not a trusted anchor")]
    UntrustedRoot,
    #[error("issuer key pair does not match the blessing being extended")]
    IssuerMismatch,
    #[error("key ring name does not match blessing name")]
    CredentialMismatch,
    #[error("malformed key material")]
    Malformed,
}

/// Supported signature algorithms. The wire format carries the tag so the
/// scheme can be swapped without changing message layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum SigAlgorithm {
    EcdsaP256 = 1,
}

impl SigAlgorithm {
    pub fn from_tag(tag: u8) -> Result<Self, PrincipalError> {
        match tag {
            1 => Ok(SigAlgorithm::EcdsaP256),
            _ => Err(PrincipalError::Malformed),
        }
    }

    pub fn tag(self) -> u8 {
        self as u8
    }
}

/// Signing and verification key pair.
#[derive(Debug, Clone)]
pub struct SigningKeyPair {
    secret: SigningKey,
    public: VerifyingKey,
}

impl SigningKeyPair {
    pub fn generate(rng: &mut (impl RngCore + CryptoRng)) -> Self {
        let secret = SigningKey::random(rng);
        let public = *secret.verifying_key();
        SigningKeyPair { secret, public }
    }

    pub fn from_secret_bytes(bytes: &[u8]) -> Result<Self, PrincipalError> {
        let secret = SigningKey::from_slice(bytes).map_err(|_| PrincipalError::Malformed)?;
        let public = *secret.verifying_key();
        Ok(SigningKeyPair { secret, public })
    }

    pub fn secret_bytes(&self) -> [u8; 32] {
        self.secret.to_bytes().into()
    }

    pub fn public(&self) -> &VerifyingKey {
        &self.public
    }
}

pub fn verifying_key_bytes(key: &VerifyingKey) -> [u8; VERIFYING_KEY_BYTES] {
    let point = key.to_encoded_point(true);
    point
        .as_bytes()
        .try_into()
        .expect("compressed P-256 points are 33 bytes")
}

pub fn verifying_key_from_bytes(bytes: &[u8]) -> Result<VerifyingKey, PrincipalError> {
    VerifyingKey::from_sec1_bytes(bytes).map_err(|_| PrincipalError::Malformed)
}

/// Domain-separated signing: the signed blob is the context label
/// (length-framed), the signer's own verification key, then the message.
fn signing_input(context: &[u8], signer: &VerifyingKey, message: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(2 + context.len() + VERIFYING_KEY_BYTES + message.len());
    out.extend_from_slice(&(context.len() as u16).to_be_bytes());
    out.extend_from_slice(context);
    out.extend_from_slice(&verifying_key_bytes(signer));
    out.extend_from_slice(message);
    out
}

pub fn sign(keypair: &SigningKeyPair, context: &[u8], message: &[u8]) -> Signature {
    keypair
        .secret
        .sign(&signing_input(context, &keypair.public, message))
}

pub fn verify(key: &VerifyingKey, context: &[u8], message: &[u8], sig: &Signature) -> bool {
    key.verify(&signing_input(context, key, message), sig)
        .is_ok()
}

/// One link of a blessing: a single name component, the subject's key, and
/// the issuer's signature over (component, key, parent-chain digest).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub extension: String,
    pub subject_public: VerifyingKey,
    pub issuer_signature: Signature,
}

fn valid_component(component: &str) -> Result<(), PrincipalError> {
    if component.is_empty() {
        return Err(PrincipalError::InvalidComponent("empty"));
    }
    if component.len() > crate::prefix_crypto::MAX_COMPONENT_LEN {
        return Err(PrincipalError::InvalidComponent("too long"));
    }
    if component.contains('/') {
        return Err(PrincipalError::InvalidComponent("contains '/'"));
    }
    Ok(())
}

fn certificate_message(
    extension: &str,
    subject: &VerifyingKey,
    parent_digest: &[u8; 32],
) -> Vec<u8> {
    let mut msg = Vec::new();
    msg.extend_from_slice(&(extension.len() as u16).to_be_bytes());
    msg.extend_from_slice(extension.as_bytes());
    msg.extend_from_slice(&verifying_key_bytes(subject));
    msg.extend_from_slice(parent_digest);
    msg
}

/// Running digest over the chain up to and including each certificate.
fn fold_digest(previous: &[u8; 32], cert: &Certificate) -> [u8; 32] {
    tagged_hash32(
        tag::CHAIN_BIND,
        &[
            previous,
            cert.extension.as_bytes(),
            &verifying_key_bytes(&cert.subject_public),
            &cert.issuer_signature.to_bytes(),
        ],
    )
}

/// A certificate chain with its derived hierarchical name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blessing {
    chain: Vec<Certificate>,
}

impl Blessing {
    pub fn from_chain(chain: Vec<Certificate>) -> Result<Self, PrincipalError> {
        if chain.is_empty() {
            return Err(PrincipalError::EmptyChain);
        }
        for cert in &chain {
            valid_component(&cert.extension)?;
        }
        Ok(Blessing { chain })
    }

    pub fn chain(&self) -> &[Certificate] {
        &self.chain
    }

    /// The name bound by this chain: the extensions in order.
    pub fn name(&self) -> HierName {
        HierName::new(self.chain.iter().map(|c| c.extension.clone()))
            .expect("components validated at construction")
    }

    /// The verification key the chain binds the name to.
    pub fn public_key(&self) -> &VerifyingKey {
        &self
            .chain
            .last()
            .expect("chain is non-empty")
            .subject_public
    }

    /// Digest over the whole chain, used to bind child certificates.
    pub fn chain_digest(&self) -> [u8; 32] {
        self.chain
            .iter()
            .fold([0u8; 32], |acc, c| fold_digest(&acc, c))
    }

    /// A blessing for the leading `depth` certificates.
    pub fn truncated(&self, depth: usize) -> Result<Self, PrincipalError> {
        if depth == 0 || depth > self.chain.len() {
            return Err(PrincipalError::EmptyChain);
        }
        Ok(Blessing {
            chain: self.chain[..depth].to_vec(),
        })
    }
}

/// Trusted identity-provider roots: (root name component, root key) records.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrustedRoots {
    anchors: Vec<(String, VerifyingKey)>,
}

impl TrustedRoots {
    pub fn new(anchors: Vec<(String, VerifyingKey)>) -> Self {
        TrustedRoots { anchors }
    }

    pub fn add(&mut self, name: &str, key: VerifyingKey) {
        self.anchors.push((name.to_string(), key));
    }

    pub fn anchors(&self) -> &[(String, VerifyingKey)] {
        &self.anchors
    }

    fn trusts(&self, name: &str, key: &VerifyingKey) -> bool {
        let key = verifying_key_bytes(key);
        self.anchors
            .iter()
            .any(|(n, k)| n == name && verifying_key_bytes(k) == key)
    }
}

/// Validate a chain link-by-link against a trust-anchor set and return the
/// bound name. All downstream authorization uses this name, never the key.
pub fn validate_chain(
    blessing: &Blessing,
    roots: &TrustedRoots,
) -> Result<HierName, PrincipalError> {
    let chain = blessing.chain();
    let root = &chain[0];
    // Root certificate is self-signed over a zero parent digest.
    let root_msg = certificate_message(&root.extension, &root.subject_public, &[0u8; 32]);
    if !verify(
        &root.subject_public,
        context::CERTIFICATE,
        &root_msg,
        &root.issuer_signature,
    ) {
        return Err(PrincipalError::BrokenLink);
    }
    if !roots.trusts(&root.extension, &root.subject_public) {
        return Err(PrincipalError::UntrustedRoot);
    }

    let mut digest = fold_digest(&[0u8; 32], root);
    for window in chain.windows(2) {
        let (issuer, cert) = (&window[0], &window[1]);
        let msg = certificate_message(&cert.extension, &cert.subject_public, &digest);
        if !verify(
            &issuer.subject_public,
            context::CERTIFICATE,
            &msg,
            &cert.issuer_signature,
        ) {
            return Err(PrincipalError::BrokenLink);
        }
        digest = fold_digest(&digest, cert);
    }
    Ok(blessing.name())
}

/// A blessing paired with the prefix-encryption key ring extracted for its
/// name.
#[derive(Debug, Clone)]
pub struct Credential {
    blessing: Blessing,
    keyring: Option<PrefixKeyRing>,
}

impl Credential {
    pub fn new(
        blessing: Blessing,
        keyring: Option<PrefixKeyRing>,
    ) -> Result<Self, PrincipalError> {
        if let Some(ring) = &keyring {
            if ring.name() != &blessing.name() {
                return Err(PrincipalError::CredentialMismatch);
            }
        }
        Ok(Credential { blessing, keyring })
    }

    pub fn blessing(&self) -> &Blessing {
        &self.blessing
    }

    pub fn keyring(&self) -> Option<&PrefixKeyRing> {
        self.keyring.as_ref()
    }
}

/// IBE root material held by an identity provider.
#[derive(Debug, Clone)]
pub struct IbeRoot {
    pub params: GroupParams,
    pub keys: MasterKeyPair,
}

/// A protocol participant: signing keys, credentials, and its own
/// authorization policy. Identity providers additionally hold IBE root
/// material.
#[derive(Debug, Clone)]
pub struct Principal {
    keypair: SigningKeyPair,
    credentials: Vec<Credential>,
    policy: PrefixPolicy,
    ibe_root: Option<IbeRoot>,
}

impl Principal {
    /// Create a self-signed identity provider: a one-certificate blessing,
    /// fresh IBE root material, and a key ring for its own name.
    pub fn new_root(
        name_component: &str,
        rng: &mut (impl RngCore + CryptoRng),
    ) -> Result<Principal, PrincipalError> {
        valid_component(name_component)?;
        let keypair = SigningKeyPair::generate(rng);
        let msg = certificate_message(name_component, &keypair.public, &[0u8; 32]);
        let cert = Certificate {
            extension: name_component.to_string(),
            subject_public: keypair.public,
            issuer_signature: sign(&keypair, context::CERTIFICATE, &msg),
        };
        let blessing = Blessing::from_chain(vec![cert])?;

        let params = GroupParams::bls12_381();
        let master = ibe_setup(&params, rng);
        let name = blessing.name();
        let keyring =
            keyring_extract(&master.secret, &name, rng).map_err(|_| PrincipalError::Malformed)?;
        let policy = PrefixPolicy::single(name);

        Ok(Principal {
            keypair,
            credentials: vec![Credential::new(blessing, Some(keyring))?],
            policy,
            ibe_root: Some(IbeRoot {
                params,
                keys: master,
            }),
        })
    }

    /// Reassemble an identity provider from persisted material.
    pub fn from_parts_with_ibe(
        keypair: SigningKeyPair,
        credential: Credential,
        policy: PrefixPolicy,
        mpk: MasterPublicKey,
        msk: MasterSecretKey,
    ) -> Principal {
        let params = GroupParams::new(mpk.curve);
        Principal {
            keypair,
            credentials: vec![credential],
            policy,
            ibe_root: Some(IbeRoot {
                params,
                keys: MasterKeyPair {
                    public: mpk,
                    secret: msk,
                },
            }),
        }
    }

    /// Assemble a principal from issued material.
    pub fn from_parts(
        keypair: SigningKeyPair,
        credential: Credential,
        policy: PrefixPolicy,
    ) -> Principal {
        Principal {
            keypair,
            credentials: vec![credential],
            policy,
            ibe_root: None,
        }
    }

    pub fn keypair(&self) -> &SigningKeyPair {
        &self.keypair
    }

    pub fn public_key(&self) -> &VerifyingKey {
        &self.keypair.public
    }

    /// The principal's primary credential.
    pub fn credential(&self) -> &Credential {
        &self.credentials[0]
    }

    pub fn credentials(&self) -> &[Credential] {
        &self.credentials
    }

    pub fn add_credential(&mut self, credential: Credential) {
        self.credentials.push(credential);
    }

    pub fn name(&self) -> HierName {
        self.credential().blessing().name()
    }

    pub fn policy(&self) -> &PrefixPolicy {
        &self.policy
    }

    pub fn set_policy(&mut self, policy: PrefixPolicy) {
        self.policy = policy;
    }

    pub fn ibe_root(&self) -> Option<&IbeRoot> {
        self.ibe_root.as_ref()
    }

    /// The master public key if this principal is an IBE root.
    pub fn master_public(&self) -> Option<&MasterPublicKey> {
        self.ibe_root.as_ref().map(|r| &r.keys.public)
    }

    /// Extend this principal's primary blessing onto `subject_public`.
    pub fn bless(
        &self,
        subject_public: &VerifyingKey,
        extension: &str,
    ) -> Result<Blessing, PrincipalError> {
        bless(self, subject_public, extension)
    }

    /// Issue a blessing plus the matching key ring (IBE roots only). The
    /// path is relative to the root's own name; intermediate links are
    /// carrier certificates onto the root's key, the final link binds the
    /// subject's key.
    pub fn issue(
        &self,
        subject_public: &VerifyingKey,
        path: &[&str],
        rng: &mut (impl RngCore + CryptoRng),
    ) -> Result<Credential, PrincipalError> {
        let root = self.ibe_root.as_ref().ok_or(PrincipalError::Malformed)?;
        let mut blessing = self.credential().blessing().clone();
        let (last, intermediate) = path.split_last().ok_or(PrincipalError::EmptyChain)?;
        for component in intermediate {
            blessing = extend_chain(&self.keypair, &blessing, &self.keypair.public, component)?;
        }
        blessing = extend_chain(&self.keypair, &blessing, subject_public, last)?;
        let keyring = keyring_extract(&root.keys.secret, &blessing.name(), rng)
            .map_err(|_| PrincipalError::Malformed)?;
        Credential::new(blessing, Some(keyring))
    }
}

fn extend_chain(
    issuer_keys: &SigningKeyPair,
    parent: &Blessing,
    subject_public: &VerifyingKey,
    extension: &str,
) -> Result<Blessing, PrincipalError> {
    valid_component(extension)?;
    let parent_digest = parent.chain_digest();
    let msg = certificate_message(extension, subject_public, &parent_digest);
    let cert = Certificate {
        extension: extension.to_string(),
        subject_public: *subject_public,
        issuer_signature: sign(issuer_keys, context::CERTIFICATE, &msg),
    };
    let mut chain = parent.chain().to_vec();
    chain.push(cert);
    Blessing::from_chain(chain)
}

/// Extend `issuer`'s blessing by one component onto `subject_public`. The
/// issuer's key pair must be the one the parent chain ends in.
pub fn bless(
    issuer: &Principal,
    subject_public: &VerifyingKey,
    extension: &str,
) -> Result<Blessing, PrincipalError> {
    let parent = issuer.credential().blessing();
    if verifying_key_bytes(parent.public_key()) != verifying_key_bytes(&issuer.keypair.public) {
        return Err(PrincipalError::IssuerMismatch);
    }
    extend_chain(&issuer.keypair, parent, subject_public, extension)
}

/// A trust-anchor set containing exactly the given root principal.
pub fn anchors_for(root: &Principal) -> TrustedRoots {
    let blessing = root.credential().blessing();
    TrustedRoots::new(vec![(
        blessing.chain()[0].extension.clone(),
        blessing.chain()[0].subject_public,
    )])
}

impl From<PrefixError> for PrincipalError {
    fn from(_: PrefixError) -> Self {
        PrincipalError::Malformed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn rng() -> StdRng {
        StdRng::seed_from_u64(42)
    }

    #[test]
    fn root_is_self_consistent() {
        let mut rng = rng();
        let root = Principal::new_root("dev.v.io", &mut rng).unwrap();
        assert_eq!(root.name().canonical(), "dev.v.io");
        assert_eq!(root.credential().blessing().chain().len(), 1);
        let anchors = anchors_for(&root);
        assert_eq!(
            validate_chain(root.credential().blessing(), &anchors).unwrap(),
            root.name()
        );
    }

    #[test]
    fn two_roots_distinct_keys() {
        let mut rng = rng();
        let a = Principal::new_root("a", &mut rng).unwrap();
        let b = Principal::new_root("b", &mut rng).unwrap();
        assert_ne!(
            verifying_key_bytes(a.public_key()),
            verifying_key_bytes(b.public_key())
        );
    }

    #[test]
    fn blessing_chain_grows_one_component_per_bless() {
        let mut rng = rng();
        let alice = Principal::new_root("Alice", &mut rng).unwrap();
        let family_keys = SigningKeyPair::generate(&mut rng);
        let family = alice.bless(family_keys.public(), "Family").unwrap();
        assert_eq!(family.chain().len(), 2);

        let family_principal = Principal::from_parts(
            family_keys,
            Credential::new(family.clone(), None).unwrap(),
            PrefixPolicy::single(family.name()),
        );
        let bob_keys = SigningKeyPair::generate(&mut rng);
        let bob = family_principal.bless(bob_keys.public(), "Bob").unwrap();
        assert_eq!(bob.chain().len(), 3);
        assert_eq!(bob.name().canonical(), "Alice/Family/Bob");

        let anchors = anchors_for(&alice);
        assert_eq!(validate_chain(&bob, &anchors).unwrap(), bob.name());
    }

    #[test]
    fn unknown_root_rejected() {
        let mut rng = rng();
        let root = Principal::new_root("a", &mut rng).unwrap();
        let other = Principal::new_root("a", &mut rng).unwrap();
        let anchors = anchors_for(&other);
        assert_eq!(
            validate_chain(root.credential().blessing(), &anchors),
            Err(PrincipalError::UntrustedRoot)
        );
    }

    #[test]
    fn tampered_certificate_breaks_chain() {
        let mut rng = rng();
        let root = Principal::new_root("a", &mut rng).unwrap();
        let keys = SigningKeyPair::generate(&mut rng);
        let blessing = root.bless(keys.public(), "x").unwrap();
        let mut chain = blessing.chain().to_vec();
        chain[1].extension = "y".to_string();
        let tampered = Blessing::from_chain(chain).unwrap();
        assert_eq!(
            validate_chain(&tampered, &anchors_for(&root)),
            Err(PrincipalError::BrokenLink)
        );
    }

    #[test]
    fn truncated_chain_still_validates() {
        let mut rng = rng();
        let root = Principal::new_root("a", &mut rng).unwrap();
        let cred = root
            .issue(
                SigningKeyPair::generate(&mut rng).public(),
                &["u", "bob"],
                &mut rng,
            )
            .unwrap();
        let blessing = cred.blessing();
        assert_eq!(blessing.chain().len(), 3);
        let anchors = anchors_for(&root);
        for depth in 1..=3 {
            let truncated = blessing.truncated(depth).unwrap();
            let name = validate_chain(&truncated, &anchors).unwrap();
            assert_eq!(name.depth(), depth);
        }
    }

    #[test]
    fn sign_verify_contexts_and_keys() {
        let mut rng = rng();
        let kp = SigningKeyPair::generate(&mut rng);
        let sig = sign(&kp, context::BROADCAST, b"message");
        assert!(verify(kp.public(), context::BROADCAST, b"message", &sig));
        assert!(!verify(
            kp.public(),
            context::HANDSHAKE_SERVER,
            b"message",
            &sig
        ));
        assert!(!verify(kp.public(), context::BROADCAST, b"other", &sig));
        let other = SigningKeyPair::generate(&mut rng);
        assert!(!verify(other.public(), context::BROADCAST, b"message", &sig));
    }

    #[test]
    fn invalid_extension_rejected() {
        let mut rng = rng();
        let root = Principal::new_root("a", &mut rng).unwrap();
        let keys = SigningKeyPair::generate(&mut rng);
        assert!(root.bless(keys.public(), "bad/name").is_err());
        assert!(root.bless(keys.public(), "").is_err());
        assert!(Principal::new_root("has/slash", &mut rng).is_err());
    }

    #[test]
    fn credential_requires_matching_keyring_name() {
        let mut rng = rng();
        let root = Principal::new_root("a", &mut rng).unwrap();
        let ibe = root.ibe_root().unwrap();
        let keys = SigningKeyPair::generate(&mut rng);
        let blessing = root.bless(keys.public(), "x").unwrap();
        let wrong_ring = keyring_extract(
            &ibe.keys.secret,
            &HierName::parse("a/other").unwrap(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(
            Credential::new(blessing, Some(wrong_ring)).unwrap_err(),
            PrincipalError::CredentialMismatch
        );
    }
}
