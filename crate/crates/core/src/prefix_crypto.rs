//! Prefix-constrained encryption over hierarchical names.
//!
//! The key ring for `s1/s2/.../sn` holds one identity key per prefix
//! `(s1), (s1/s2), ..., (s1/.../sn)`; encrypting to a prefix is plain IBE
//! encryption to that prefix's canonical string. A ciphertext addressed to a
//! multi-prefix policy carries one independent IBE branch per prefix, all of
//! the same payload, so its size grows linearly with the policy.
//!
//! Matching is whole-component: `Alice/Devices` authorizes
//! `Alice/Devices/TV` but not `Alice/Devices2`.

use rand::{CryptoRng, RngCore};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::pairing_ibe::{
    ibe_decrypt, ibe_encrypt, ibe_extract, IbeCiphertext, IbeError, IbeIdentityKey,
    MasterPublicKey, MasterSecretKey,
};

/// Most components a name may carry.
pub const MAX_COMPONENTS: usize = 16;
/// Longest single component in bytes.
pub const MAX_COMPONENT_LEN: usize = 64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PrefixError {
    #[error("invalid name: {0}")]
    InvalidName(&'static str),
    #[error("policy must contain at least one prefix")]
    EmptyPolicy,
    #[error("name does not satisfy the ciphertext policy")]
    NotAuthorized,
    #[error("key ring does not match this ciphertext")]
    KeyMismatch,
    #[error(transparent)]
    Ibe(#[from] IbeError),
}

/// A hierarchical name: non-empty `/`-separated UTF-8 components.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HierName {
    components: Vec<String>,
}

impl HierName {
    pub fn new<I, S>(components: I) -> Result<Self, PrefixError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let components: Vec<String> = components.into_iter().map(Into::into).collect();
        if components.is_empty() {
            return Err(PrefixError::InvalidName("no components"));
        }
        if components.len() > MAX_COMPONENTS {
            return Err(PrefixError::InvalidName("too many components"));
        }
        for c in &components {
            if c.is_empty() {
                return Err(PrefixError::InvalidName("empty component"));
            }
            if c.len() > MAX_COMPONENT_LEN {
                return Err(PrefixError::InvalidName("component too long"));
            }
            if c.contains('/') {
                return Err(PrefixError::InvalidName("component contains '/'"));
            }
        }
        Ok(HierName { components })
    }

    pub fn parse(s: &str) -> Result<Self, PrefixError> {
        HierName::new(s.split('/'))
    }

    pub fn components(&self) -> &[String] {
        &self.components
    }

    pub fn depth(&self) -> usize {
        self.components.len()
    }

    /// Canonical string form: components joined by '/'.
    pub fn canonical(&self) -> String {
        self.components.join("/")
    }

    /// Canonical form of the leading `depth` components.
    pub fn prefix_canonical(&self, depth: usize) -> String {
        self.components[..depth].join("/")
    }

    /// Whether `self` is a whole-component prefix of `name`.
    pub fn is_prefix_of(&self, name: &HierName) -> bool {
        self.components.len() <= name.components.len()
            && self
                .components
                .iter()
                .zip(name.components.iter())
                .all(|(a, b)| a == b)
    }

    /// The name extended by one component.
    pub fn child(&self, component: &str) -> Result<Self, PrefixError> {
        let mut components = self.components.clone();
        components.push(component.to_string());
        HierName::new(components)
    }
}

impl fmt::Display for HierName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

impl FromStr for HierName {
    type Err = PrefixError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HierName::parse(s)
    }
}

/// A prefix-constrained authorization policy: a set of name prefixes, any of
/// which grants access. Normalized so no prefix subsumes another and order
/// is lexicographic, which makes encodings and branch selection
/// deterministic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixPolicy {
    prefixes: Vec<HierName>,
}

impl PrefixPolicy {
    pub fn new<I>(prefixes: I) -> Result<Self, PrefixError>
    where
        I: IntoIterator<Item = HierName>,
    {
        let mut prefixes: Vec<HierName> = prefixes.into_iter().collect();
        if prefixes.is_empty() {
            return Err(PrefixError::EmptyPolicy);
        }
        prefixes.sort_by_key(|p| p.canonical());
        prefixes.dedup();
        // Drop any prefix already covered by a shorter one in the set.
        let mut kept: Vec<HierName> = Vec::with_capacity(prefixes.len());
        for p in prefixes {
            if !kept.iter().any(|k| k.is_prefix_of(&p)) {
                kept.push(p);
            }
        }
        Ok(PrefixPolicy { prefixes: kept })
    }

    pub fn single(prefix: HierName) -> Self {
        PrefixPolicy {
            prefixes: vec![prefix],
        }
    }

    /// Parse a comma-separated prefix list.
    pub fn parse_list(s: &str) -> Result<Self, PrefixError> {
        PrefixPolicy::new(
            s.split(',')
                .map(|p| HierName::parse(p.trim()))
                .collect::<Result<Vec<_>, _>>()?,
        )
    }

    pub fn prefixes(&self) -> &[HierName] {
        &self.prefixes
    }
}

/// Whether `name` satisfies `policy`: some policy prefix is a
/// whole-component leading subsequence of the name.
pub fn satisfies(name: &HierName, policy: &PrefixPolicy) -> bool {
    policy.prefixes.iter().any(|p| p.is_prefix_of(name))
}

/// The `n` identity keys held by the owner of an `n`-component name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixKeyRing {
    name: HierName,
    keys: Vec<IbeIdentityKey>,
}

impl PrefixKeyRing {
    /// Reassemble a ring from parts, enforcing the key-per-prefix layout.
    pub fn from_parts(name: HierName, keys: Vec<IbeIdentityKey>) -> Result<Self, PrefixError> {
        if keys.len() != name.depth() {
            return Err(PrefixError::KeyMismatch);
        }
        for (i, key) in keys.iter().enumerate() {
            if key.identity != name.prefix_canonical(i + 1).as_bytes() {
                return Err(PrefixError::KeyMismatch);
            }
        }
        Ok(PrefixKeyRing { name, keys })
    }

    pub fn name(&self) -> &HierName {
        &self.name
    }

    pub fn keys(&self) -> &[IbeIdentityKey] {
        &self.keys
    }

    /// The key whose identity is the given whole-component prefix, if the
    /// ring's name extends it.
    pub fn key_for_prefix(&self, prefix: &HierName) -> Option<&IbeIdentityKey> {
        if !prefix.is_prefix_of(&self.name) {
            return None;
        }
        Some(&self.keys[prefix.depth() - 1])
    }
}

/// Extract the full key ring for `name`: one IBE key per leading prefix.
pub fn keyring_extract(
    msk: &MasterSecretKey,
    name: &HierName,
    rng: &mut (impl RngCore + CryptoRng),
) -> Result<PrefixKeyRing, PrefixError> {
    let keys = (1..=name.depth())
        .map(|d| ibe_extract(msk, name.prefix_canonical(d).as_bytes(), rng))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PrefixKeyRing {
        name: name.clone(),
        keys,
    })
}

/// Encryption of one payload under a prefix policy: the policy in the clear
/// (this scheme is not policy-hiding) and one IBE branch per prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixCiphertext {
    policy: PrefixPolicy,
    branches: Vec<(HierName, IbeCiphertext)>,
}

impl PrefixCiphertext {
    pub fn from_parts(
        policy: PrefixPolicy,
        branches: Vec<(HierName, IbeCiphertext)>,
    ) -> Result<Self, PrefixError> {
        if branches.len() != policy.prefixes.len()
            || branches
                .iter()
                .zip(policy.prefixes.iter())
                .any(|((name, _), prefix)| name != prefix)
        {
            return Err(PrefixError::KeyMismatch);
        }
        Ok(PrefixCiphertext { policy, branches })
    }

    pub fn policy(&self) -> &PrefixPolicy {
        &self.policy
    }

    pub fn branches(&self) -> &[(HierName, IbeCiphertext)] {
        &self.branches
    }
}

/// Encrypt `payload` to every prefix of `policy`.
pub fn pe_enc(
    mpk: &MasterPublicKey,
    policy: &PrefixPolicy,
    payload: &[u8],
    rng: &mut (impl RngCore + CryptoRng),
) -> Result<PrefixCiphertext, PrefixError> {
    let branches = policy
        .prefixes
        .iter()
        .map(|prefix| {
            ibe_encrypt(mpk, prefix.canonical().as_bytes(), payload, rng)
                .map(|ct| (prefix.clone(), ct))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PrefixCiphertext {
        policy: policy.clone(),
        branches,
    })
}

/// Decrypt with the first branch (in policy order) whose prefix the ring's
/// name extends. Returns `NotAuthorized` without touching any branch when
/// the name does not satisfy the (public) policy.
pub fn pe_dec(
    mpk: &MasterPublicKey,
    ring: &PrefixKeyRing,
    ct: &PrefixCiphertext,
) -> Result<Vec<u8>, PrefixError> {
    if !satisfies(&ring.name, &ct.policy) {
        return Err(PrefixError::NotAuthorized);
    }
    let (prefix, branch) = ct
        .branches
        .iter()
        .find(|(prefix, _)| prefix.is_prefix_of(&ring.name))
        .expect("satisfies() guarantees a matching branch");
    let key = ring
        .key_for_prefix(prefix)
        .expect("matching branch implies a ring key");
    Ok(ibe_decrypt(mpk, key, branch)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pairing_ibe::{ibe_setup, GroupParams};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn rng() -> StdRng {
        StdRng::seed_from_u64(7)
    }

    fn name(s: &str) -> HierName {
        HierName::parse(s).unwrap()
    }

    #[test]
    fn name_validation() {
        assert!(HierName::parse("a/b/c").is_ok());
        assert!(HierName::parse("").is_err());
        assert!(HierName::parse("a//b").is_err());
        assert!(HierName::new(Vec::<String>::new()).is_err());
        assert!(HierName::new(vec!["a".repeat(65)]).is_err());
        assert!(HierName::new(vec!["x/y"]).is_err());
        let deep: Vec<String> = (0..17).map(|i| i.to_string()).collect();
        assert!(HierName::new(deep).is_err());
    }

    #[test]
    fn canonical_roundtrip() {
        let n = name("Alice/Devices/TV");
        assert_eq!(HierName::parse(&n.canonical()).unwrap(), n);
    }

    #[test]
    fn component_boundary_matching() {
        let policy = PrefixPolicy::single(name("Alice/Devices"));
        assert!(satisfies(&name("Alice/Devices/TV"), &policy));
        assert!(satisfies(&name("Alice/Devices"), &policy));
        assert!(!satisfies(&name("Alice/Dev"), &policy));
        assert!(!satisfies(&name("Alice/Devices2"), &policy));
        assert!(!satisfies(&name("Alice"), &policy));
    }

    #[test]
    fn technician_example() {
        let policy = PrefixPolicy::single(name("HomeSecurityCorp/Technician"));
        assert!(satisfies(&name("HomeSecurityCorp/Technician/Bob"), &policy));
    }

    #[test]
    fn policy_normalization_drops_subsumed_prefixes() {
        let p = PrefixPolicy::new(vec![name("a/b"), name("a"), name("c/d"), name("c/d")]).unwrap();
        assert_eq!(p.prefixes(), &[name("a"), name("c/d")]);
    }

    #[test]
    fn keyring_layout() {
        let params = GroupParams::bls12_381();
        let mut rng = rng();
        let kp = ibe_setup(&params, &mut rng);
        let ring = keyring_extract(&kp.secret, &name("a/b/c"), &mut rng).unwrap();
        assert_eq!(ring.keys().len(), 3);
        assert_eq!(ring.keys()[0].identity, b"a");
        assert_eq!(ring.keys()[1].identity, b"a/b");
        assert_eq!(ring.keys()[2].identity, b"a/b/c");

        let single = keyring_extract(&kp.secret, &name("a"), &mut rng).unwrap();
        assert_eq!(single.keys().len(), 1);
    }

    #[test]
    fn every_ring_key_decrypts_its_own_identity() {
        let params = GroupParams::bls12_381();
        let mut rng = rng();
        let kp = ibe_setup(&params, &mut rng);
        let ring = keyring_extract(&kp.secret, &name("a/b/c"), &mut rng).unwrap();
        for key in ring.keys() {
            let ct =
                crate::pairing_ibe::ibe_encrypt(&kp.public, &key.identity, b"p", &mut rng).unwrap();
            assert_eq!(ibe_decrypt(&kp.public, key, &ct).unwrap(), b"p");
        }
    }

    #[test]
    fn branch_count_matches_policy() {
        let params = GroupParams::bls12_381();
        let mut rng = rng();
        let kp = ibe_setup(&params, &mut rng);
        let single = pe_enc(
            &kp.public,
            &PrefixPolicy::single(name("a")),
            b"m",
            &mut rng,
        )
        .unwrap();
        assert_eq!(single.branches().len(), 1);

        let policy = PrefixPolicy::new(vec![name("a"), name("b/x"), name("c")]).unwrap();
        let triple = pe_enc(&kp.public, &policy, b"m", &mut rng).unwrap();
        assert_eq!(triple.branches().len(), 3);

        for prefix in ["a/tail", "b/x", "c/deep/er"] {
            let ring = keyring_extract(&kp.secret, &name(prefix), &mut rng).unwrap();
            assert_eq!(pe_dec(&kp.public, &ring, &triple).unwrap(), b"m");
        }
    }

    #[test]
    fn family_example_and_rejection() {
        let params = GroupParams::bls12_381();
        let mut rng = rng();
        let kp = ibe_setup(&params, &mut rng);
        let policy = PrefixPolicy::single(name("Alice/Family"));
        let ct = pe_enc(&kp.public, &policy, b"secret", &mut rng).unwrap();

        let bob = keyring_extract(&kp.secret, &name("Alice/Family/Bob"), &mut rng).unwrap();
        assert_eq!(pe_dec(&kp.public, &bob, &ct).unwrap(), b"secret");

        let eve = keyring_extract(&kp.secret, &name("Eve/X"), &mut rng).unwrap();
        assert_eq!(
            pe_dec(&kp.public, &eve, &ct),
            Err(PrefixError::NotAuthorized)
        );
    }

    #[test]
    fn corrupt_branch_is_decryption_failure_not_authorization_failure() {
        let params = GroupParams::bls12_381();
        let mut rng = rng();
        let kp = ibe_setup(&params, &mut rng);
        let policy = PrefixPolicy::single(name("a"));
        let mut ct = pe_enc(&kp.public, &policy, b"m", &mut rng).unwrap();
        ct.branches[0].1.sym_ct[0] ^= 1;
        let ring = keyring_extract(&kp.secret, &name("a/b"), &mut rng).unwrap();
        assert_eq!(
            pe_dec(&kp.public, &ring, &ct),
            Err(PrefixError::Ibe(IbeError::DecryptionFailed))
        );
    }
}
