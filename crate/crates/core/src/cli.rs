//! Command implementations behind the `privdisc` binary: identity-provider
//! key issuance, advertising, discovery, a loopback connection demo, and
//! benchmarks. Everything here is a plain function over a home directory so
//! the whole surface is testable without spawning processes.
//!
//! Exit codes are a stable contract: 0 success, 2 malformed input, 3 not
//! authorized, 4 expired, 5 cryptographic failure.

use std::collections::VecDeque;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::rngs::OsRng;
use sha2::Digest;
use thiserror::Error;

use crate::bench;
use crate::discovery::{
    client_connect, process_broadcast, server_accept, Advertiser, DiscoveryError,
    DEFAULT_TTL_SECONDS,
};
use crate::mutual_auth::HandshakeError;
use crate::pairing_ibe::{IbeError, MasterPublicKey, MasterSecretKey};
use crate::prefix_crypto::{HierName, PrefixError, PrefixKeyRing, PrefixPolicy};
use crate::principals::{
    verifying_key_bytes, verifying_key_from_bytes, Blessing, Credential, Principal,
    PrincipalError, SigningKeyPair, TrustedRoots,
};
use crate::wire::{self, WireError, WireObject};

pub const EXIT_OK: i32 = 0;
pub const EXIT_MALFORMED: i32 = 2;
pub const EXIT_NOT_AUTHORIZED: i32 = 3;
pub const EXIT_EXPIRED: i32 = 4;
pub const EXIT_CRYPTO: i32 = 5;

/// Environment variable naming the key directory.
pub const HOME_ENV: &str = "PRIVDISC_HOME";

#[derive(Debug, Error, PartialEq, Eq)]
#[error("{message}")]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::new(EXIT_MALFORMED, format!("io error: {e}"))
    }
}

impl From<WireError> for CliError {
    fn from(e: WireError) -> Self {
        CliError::new(EXIT_MALFORMED, format!("wire error: {e}"))
    }
}

impl From<IbeError> for CliError {
    fn from(e: IbeError) -> Self {
        let code = match e {
            IbeError::DecryptionFailed | IbeError::DegenerateIdentityKey => EXIT_CRYPTO,
            _ => EXIT_MALFORMED,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<PrefixError> for CliError {
    fn from(e: PrefixError) -> Self {
        let code = match e {
            PrefixError::NotAuthorized => EXIT_NOT_AUTHORIZED,
            PrefixError::Ibe(inner) => return CliError::from(inner),
            _ => EXIT_MALFORMED,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<PrincipalError> for CliError {
    fn from(e: PrincipalError) -> Self {
        let code = match e {
            PrincipalError::BrokenLink | PrincipalError::UntrustedRoot => EXIT_CRYPTO,
            _ => EXIT_MALFORMED,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<DiscoveryError> for CliError {
    fn from(e: DiscoveryError) -> Self {
        let code = match e {
            DiscoveryError::Expired => EXIT_EXPIRED,
            DiscoveryError::NotForUs => EXIT_NOT_AUTHORIZED,
            DiscoveryError::Malformed => EXIT_MALFORMED,
            _ => EXIT_CRYPTO,
        };
        let message = match e {
            DiscoveryError::NotForUs => "not authorized".to_string(),
            other => other.to_string(),
        };
        CliError::new(code, message)
    }
}

impl From<HandshakeError> for CliError {
    fn from(e: HandshakeError) -> Self {
        let code = match e {
            HandshakeError::NotAuthorized | HandshakeError::PeerRejected => EXIT_NOT_AUTHORIZED,
            HandshakeError::Malformed => EXIT_MALFORMED,
            _ => EXIT_CRYPTO,
        };
        CliError::new(code, e.to_string())
    }
}

/// What a command produced: a text report plus optional raw bytes destined
/// for stdout when the output target is `-`.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct CmdOutput {
    pub text: String,
    pub data: Option<Vec<u8>>,
}

impl CmdOutput {
    fn text(text: String) -> Self {
        CmdOutput { text, data: None }
    }
}

fn root_dir(home: &Path) -> PathBuf {
    home.join("root")
}

fn principal_dir(home: &Path, name: &HierName) -> PathBuf {
    home.join("principals").join(name.canonical().replace('/', "__"))
}

fn write_object<T: WireObject>(path: &Path, obj: &T) -> Result<(), CliError> {
    fs::write(path, wire::encode(obj)?)?;
    Ok(())
}

fn read_object<T: WireObject>(path: &Path) -> Result<T, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::new(EXIT_MALFORMED, format!("{}: {e}", path.display())))?;
    Ok(wire::decode(&bytes)?)
}

fn create_private_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        fs::set_permissions(path, fs::Permissions::from_mode(0o700))?;
    }
    Ok(())
}

/// `idp init`: create the identity provider, writing master keys, the root
/// blessing, the root signing key, and the trust-anchor file.
pub fn cmd_idp_init(home: &Path, name: &str) -> Result<CmdOutput, CliError> {
    let dir = root_dir(home);
    if dir.exists() {
        return Err(CliError::new(
            EXIT_MALFORMED,
            format!("{} already exists", dir.display()),
        ));
    }
    let root = Principal::new_root(name, &mut OsRng)?;
    create_private_dir(&dir)?;

    let ibe = root.ibe_root().expect("new_root issues IBE material");
    write_object(&dir.join("mpk.pds"), &ibe.keys.public)?;
    write_object(&dir.join("msk.pds"), &ibe.keys.secret)?;
    write_object(&dir.join("signing.pds"), root.keypair())?;
    write_object(&dir.join("blessing.pds"), root.credential().blessing())?;
    let anchors = crate::principals::anchors_for(&root);
    write_object(&dir.join("anchors.pds"), &anchors)?;
    if let Some(ring) = root.credential().keyring() {
        write_object(&dir.join("keyring.pds"), ring)?;
    }

    Ok(CmdOutput::text(format!(
        "initialized identity provider {name} in {}\n",
        dir.display()
    )))
}

fn load_root(home: &Path) -> Result<Principal, CliError> {
    let dir = root_dir(home);
    let msk: MasterSecretKey = read_object(&dir.join("msk.pds"))?;
    let mpk: MasterPublicKey = read_object(&dir.join("mpk.pds"))?;
    let keypair: SigningKeyPair = read_object(&dir.join("signing.pds"))?;
    let blessing: Blessing = read_object(&dir.join("blessing.pds"))?;
    let keyring: PrefixKeyRing = read_object(&dir.join("keyring.pds"))?;
    let name = blessing.name();
    Ok(Principal::from_parts_with_ibe(
        keypair,
        Credential::new(blessing, Some(keyring))?,
        PrefixPolicy::single(name),
        mpk,
        msk,
    ))
}

/// `idp issue`: issue a blessing plus key ring for a full hierarchical name
/// whose first component is the root's own name.
pub fn cmd_idp_issue(home: &Path, name: &str, pubkey_path: &Path) -> Result<CmdOutput, CliError> {
    let name = HierName::parse(name)?;
    let root = load_root(home)?;
    let root_component = root.name().canonical();
    if name.components()[0] != root_component {
        return Err(CliError::new(
            EXIT_MALFORMED,
            format!("name must start with the root component {root_component:?}"),
        ));
    }
    if name.depth() < 2 {
        return Err(CliError::new(
            EXIT_MALFORMED,
            "name must extend the root by at least one component",
        ));
    }
    let pub_bytes = fs::read(pubkey_path)?;
    let subject = verifying_key_from_bytes(&pub_bytes)?;
    let path: Vec<&str> = name.components()[1..]
        .iter()
        .map(|s| s.as_str())
        .collect();
    let credential = root.issue(&subject, &path, &mut OsRng)?;

    let dir = principal_dir(home, &name);
    create_private_dir(&dir)?;
    write_object(&dir.join("blessing.pds"), credential.blessing())?;
    let ring = credential.keyring().expect("issue extracts a ring");
    write_object(&dir.join("keyring.pds"), ring)?;

    Ok(CmdOutput::text(format!(
        "issued {}: blessing with {} certificates, key ring with {} keys\n",
        name.canonical(),
        credential.blessing().chain().len(),
        ring.keys().len()
    )))
}

/// `keygen`: generate a signing key pair, writing the secret frame and the
/// raw 33-byte public key alongside it.
pub fn cmd_keygen(out: &Path) -> Result<CmdOutput, CliError> {
    if out.exists() {
        return Err(CliError::new(
            EXIT_MALFORMED,
            format!("{} already exists", out.display()),
        ));
    }
    let keypair = SigningKeyPair::generate(&mut OsRng);
    write_object(out, &keypair)?;
    let mut pub_name = out.file_name().unwrap_or_default().to_os_string();
    pub_name.push(".pub");
    let pub_path = out.with_file_name(pub_name);
    fs::write(&pub_path, verifying_key_bytes(keypair.public()))?;
    Ok(CmdOutput::text(format!(
        "wrote {} and {}\n",
        out.display(),
        pub_path.display()
    )))
}

/// Load a principal from its issued material plus a signing-key file, and
/// check the key actually matches the blessing.
pub fn load_principal(
    home: &Path,
    name: &str,
    key_path: &Path,
    policy: PrefixPolicy,
) -> Result<Principal, CliError> {
    let name = HierName::parse(name)?;
    let dir = principal_dir(home, &name);
    let blessing: Blessing = read_object(&dir.join("blessing.pds"))?;
    let keyring: PrefixKeyRing = read_object(&dir.join("keyring.pds"))?;
    let keypair: SigningKeyPair = read_object(key_path)?;
    if verifying_key_bytes(blessing.public_key()) != verifying_key_bytes(keypair.public()) {
        return Err(CliError::new(
            EXIT_MALFORMED,
            "signing key does not match the blessing",
        ));
    }
    Ok(Principal::from_parts(
        keypair,
        Credential::new(blessing, Some(keyring))?,
        policy,
    ))
}

fn load_common(home: &Path) -> Result<(MasterPublicKey, TrustedRoots), CliError> {
    let dir = root_dir(home);
    Ok((
        read_object(&dir.join("mpk.pds"))?,
        read_object(&dir.join("anchors.pds"))?,
    ))
}

/// `advertise`: build a signed, prefix-encrypted broadcast and report its
/// size against the mDNS budget.
#[allow(clippy::too_many_arguments)]
pub fn cmd_advertise(
    home: &Path,
    as_name: &str,
    key_path: &Path,
    policy: &str,
    ttl_seconds: u64,
    txt: bool,
    now: u64,
) -> Result<CmdOutput, CliError> {
    let policy = PrefixPolicy::parse_list(policy)?;
    let principal = load_principal(home, as_name, key_path, policy.clone())?;
    let (mpk, _) = load_common(home)?;

    let mut advertiser = Advertiser::new();
    let (broadcast, _cache) = advertiser.make_broadcast(
        principal.credential().blessing(),
        principal.keypair(),
        &mpk,
        &policy,
        ttl_seconds,
        now,
        &mut OsRng,
    )?;
    let bytes = wire::encode(&broadcast)?;

    let mut text = format!(
        "advertisement: {} bytes, budget {} -> {}\n",
        bytes.len(),
        wire::MDNS_MAX_ADVERT,
        if bytes.len() <= wire::MDNS_MAX_ADVERT {
            "PASS"
        } else {
            "FAIL"
        },
    );
    if txt {
        let record = wire::to_mdns_txt(&broadcast)?;
        text.push_str(&format!("service label: {}\n", record.service_label));
        for (k, v) in &record.entries {
            text.push_str(&format!("txt {k}={v}\n"));
        }
    }
    Ok(CmdOutput {
        text,
        data: Some(bytes),
    })
}

/// `discover`: process received broadcast bytes and print the server name.
pub fn cmd_discover(
    home: &Path,
    as_name: &str,
    key_path: &Path,
    client_policy: Option<&str>,
    bytes: &[u8],
    now: u64,
) -> Result<CmdOutput, CliError> {
    let policy = match client_policy {
        Some(p) => PrefixPolicy::parse_list(p)?,
        // By default accept any service from the local trust domain.
        None => {
            let (_, anchors) = load_common(home)?;
            let roots: Vec<HierName> = anchors
                .anchors()
                .iter()
                .map(|(n, _)| HierName::parse(n))
                .collect::<Result<_, _>>()?;
            PrefixPolicy::new(roots)?
        }
    };
    let principal = load_principal(home, as_name, key_path, policy)?;
    let (mpk, anchors) = load_common(home)?;
    let svc = process_broadcast(
        principal.credential(),
        principal.policy(),
        &mpk,
        &anchors,
        bytes,
        now,
    )?;
    Ok(CmdOutput::text(format!(
        "server: {}\nbid: {}\nexpires: {}\n",
        svc.server_name.canonical(),
        hex::encode(svc.bid.0),
        svc.expiry
    )))
}

/// `connect`: run the full 0-RTT exchange between two local principals over
/// an in-process byte pipe and print both session-key digests.
#[allow(clippy::too_many_arguments)]
pub fn cmd_connect(
    home: &Path,
    client_name: &str,
    client_key: &Path,
    server_name: &str,
    server_key: &Path,
    server_policy: &str,
    early_data: Option<&[u8]>,
    now: u64,
) -> Result<CmdOutput, CliError> {
    let policy = PrefixPolicy::parse_list(server_policy)?;
    let server = load_principal(home, server_name, server_key, policy.clone())?;
    let client_accepts = PrefixPolicy::single(HierName::parse(server_name)?);
    let client = load_principal(home, client_name, client_key, client_accepts)?;
    let (mpk, anchors) = load_common(home)?;

    // Loopback pipe: two in-process byte queues carrying encoded frames.
    let mut to_server: VecDeque<Vec<u8>> = VecDeque::new();
    let mut to_client: VecDeque<Vec<u8>> = VecDeque::new();

    let mut advertiser = Advertiser::new();
    let (broadcast, cache) = advertiser.make_broadcast(
        server.credential().blessing(),
        server.keypair(),
        &mpk,
        &policy,
        DEFAULT_TTL_SECONDS,
        now,
        &mut OsRng,
    )?;
    to_client.push_back(wire::encode(&broadcast)?);

    let svc = process_broadcast(
        client.credential(),
        client.policy(),
        &mpk,
        &anchors,
        &to_client.pop_front().expect("broadcast queued"),
        now,
    )?;
    let (mut session, request) =
        client_connect(client.credential(), client.keypair(), &svc, early_data, now, &mut OsRng)?;
    to_server.push_back(wire::encode(&request)?);

    let request = wire::decode(&to_server.pop_front().expect("request queued"))?;
    let accepted = server_accept(
        server.credential().blessing(),
        server.policy(),
        &anchors,
        advertiser.state().expect("fresh broadcast"),
        &cache,
        &request,
        None,
        now,
        &mut OsRng,
    )?;
    to_client.push_back(wire::encode(&accepted.response)?);

    let response = wire::decode(&to_client.pop_front().expect("response queued"))?;
    let (client_key_out, _) = session.client_complete(&response)?;

    let client_digest = hex::encode(sha2::Sha256::digest(client_key_out));
    let server_digest = hex::encode(sha2::Sha256::digest(accepted.session_key));
    let mut text = format!(
        "client atk digest: {}\nserver atk digest: {}\nmatch: {}\n",
        &client_digest[..16],
        &server_digest[..16],
        client_digest == server_digest
    );
    if let Some(data) = &accepted.early_data {
        text.push_str(&format!("early data delivered: {} bytes\n", data.len()));
    }
    if client_digest != server_digest {
        return Err(CliError::new(EXIT_CRYPTO, "session keys diverged"));
    }
    Ok(CmdOutput::text(text))
}

/// `bench`: print the requested benchmark table as TSV.
pub fn cmd_bench(which: &str, iterations: usize) -> Result<CmdOutput, CliError> {
    let rows = match which {
        "ibe" => bench::ibe_micro(iterations),
        "handshake" => bench::handshake_bench(iterations),
        other => {
            return Err(CliError::new(
                EXIT_MALFORMED,
                format!("unknown benchmark {other:?} (expected ibe or handshake)"),
            ))
        }
    };
    Ok(CmdOutput::text(bench::render_tsv(&rows)))
}
