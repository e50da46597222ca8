//! C ABI over the private discovery toolkit.
//!
//! Handles are opaque pointers owned by Rust; every constructor has a
//! matching `_free`, byte outputs use caller-provided buffers, and all
//! functions return a [`PdsStatus`] code. Passing a null pointer yields
//! `PDS_STATUS_NULL_ARGUMENT` instead of undefined behavior.

use std::ffi::CStr;
use std::os::raw::c_char;
use std::ptr;

use rand::rngs::OsRng;

use privdisc::discovery::{client_connect, process_broadcast, server_accept, Advertiser, ReplayCache};
use privdisc::pairing_ibe::MasterPublicKey;
use privdisc::prefix_crypto::{HierName, PrefixPolicy};
use privdisc::principals::{anchors_for, Principal, SigningKeyPair, TrustedRoots};
use privdisc::wire;

/// Result codes. Mirrors the CLI exit-code contract, with FFI-specific
/// additions for argument and buffer problems.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdsStatus {
    Ok = 0,
    Malformed = 2,
    NotAuthorized = 3,
    Expired = 4,
    CryptoFailure = 5,
    NullArgument = 6,
    /// The caller's buffer is too small; the required size is in `*written`.
    BufferTooSmall = 7,
}

/// An identity provider: IBE root plus root signing material.
pub struct PdsRoot {
    principal: Principal,
}

/// An issued principal bundled with the deployment's master public key and
/// trust anchors.
pub struct PdsPrincipal {
    principal: Principal,
    mpk: MasterPublicKey,
    anchors: TrustedRoots,
}

/// Server-side broadcast state: rotating semi-static share plus the replay
/// cache for the current broadcast.
pub struct PdsAdvertiser {
    advertiser: Advertiser,
    cache: Option<ReplayCache>,
}

fn c_str<'a>(ptr: *const c_char) -> Result<&'a str, PdsStatus> {
    if ptr.is_null() {
        return Err(PdsStatus::NullArgument);
    }
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| PdsStatus::Malformed)
}

fn write_out(buf: *mut u8, cap: usize, written: *mut usize, bytes: &[u8]) -> PdsStatus {
    if written.is_null() {
        return PdsStatus::NullArgument;
    }
    unsafe { *written = bytes.len() };
    if buf.is_null() || cap < bytes.len() {
        return PdsStatus::BufferTooSmall;
    }
    unsafe { ptr::copy_nonoverlapping(bytes.as_ptr(), buf, bytes.len()) };
    PdsStatus::Ok
}

/// Create an identity provider with the given root name component.
///
/// # Safety
/// `name` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pds_root_new(name: *const c_char, out: *mut *mut PdsRoot) -> PdsStatus {
    if out.is_null() {
        return PdsStatus::NullArgument;
    }
    let name = match c_str(name) {
        Ok(s) => s,
        Err(status) => return status,
    };
    match Principal::new_root(name, &mut OsRng) {
        Ok(principal) => {
            unsafe { *out = Box::into_raw(Box::new(PdsRoot { principal })) };
            PdsStatus::Ok
        }
        Err(_) => PdsStatus::Malformed,
    }
}

/// # Safety
/// `root` must be a pointer previously returned by [`pds_root_new`], not
/// yet freed.
#[no_mangle]
pub unsafe extern "C" fn pds_root_free(root: *mut PdsRoot) {
    if !root.is_null() {
        drop(unsafe { Box::from_raw(root) });
    }
}

/// Issue a principal for a full hierarchical name under this root. A fresh
/// signing key pair is generated and kept inside the handle.
///
/// # Safety
/// `root` must be a live handle; `name` a valid NUL-terminated string;
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pds_root_issue(
    root: *const PdsRoot,
    name: *const c_char,
    out: *mut *mut PdsPrincipal,
) -> PdsStatus {
    if root.is_null() || out.is_null() {
        return PdsStatus::NullArgument;
    }
    let root = unsafe { &*root };
    let name = match c_str(name) {
        Ok(s) => s,
        Err(status) => return status,
    };
    let Ok(parsed) = HierName::parse(name) else {
        return PdsStatus::Malformed;
    };
    let root_name = root.principal.name().canonical();
    if parsed.components()[0] != root_name || parsed.depth() < 2 {
        return PdsStatus::Malformed;
    }
    let keypair = SigningKeyPair::generate(&mut OsRng);
    let path: Vec<&str> = parsed.components()[1..].iter().map(|s| s.as_str()).collect();
    let Ok(credential) = root.principal.issue(keypair.public(), &path, &mut OsRng) else {
        return PdsStatus::CryptoFailure;
    };
    let policy = PrefixPolicy::single(HierName::parse(&root_name).expect("root name is valid"));
    let principal = Principal::from_parts(keypair, credential, policy);
    let Some(mpk) = root.principal.master_public() else {
        return PdsStatus::CryptoFailure;
    };
    unsafe {
        *out = Box::into_raw(Box::new(PdsPrincipal {
            principal,
            mpk: mpk.clone(),
            anchors: anchors_for(&root.principal),
        }))
    };
    PdsStatus::Ok
}

/// # Safety
/// `principal` must be a pointer previously returned by [`pds_root_issue`],
/// not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pds_principal_free(principal: *mut PdsPrincipal) {
    if !principal.is_null() {
        drop(unsafe { Box::from_raw(principal) });
    }
}

/// Copy the principal's canonical name (no NUL terminator) into `buf`.
///
/// # Safety
/// `principal` must be a live handle; `buf`/`written` as documented.
#[no_mangle]
pub unsafe extern "C" fn pds_principal_name(
    principal: *const PdsPrincipal,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> PdsStatus {
    if principal.is_null() {
        return PdsStatus::NullArgument;
    }
    let principal = unsafe { &*principal };
    write_out(buf, cap, written, principal.principal.name().canonical().as_bytes())
}

/// Create server-side broadcast state.
#[no_mangle]
pub extern "C" fn pds_advertiser_new() -> *mut PdsAdvertiser {
    Box::into_raw(Box::new(PdsAdvertiser {
        advertiser: Advertiser::new(),
        cache: None,
    }))
}

/// # Safety
/// `advertiser` must be a pointer previously returned by
/// [`pds_advertiser_new`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pds_advertiser_free(advertiser: *mut PdsAdvertiser) {
    if !advertiser.is_null() {
        drop(unsafe { Box::from_raw(advertiser) });
    }
}

/// Build a fresh signed, prefix-encrypted advertisement for `server` under
/// `policy` (comma-separated prefixes), rotating the semi-static state.
/// The encoded broadcast lands in `buf`.
///
/// # Safety
/// All handles must be live; `policy` a valid NUL-terminated string;
/// `buf`/`written` as documented.
#[no_mangle]
pub unsafe extern "C" fn pds_advertise(
    advertiser: *mut PdsAdvertiser,
    server: *const PdsPrincipal,
    policy: *const c_char,
    ttl_seconds: u64,
    now_unix: u64,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> PdsStatus {
    if advertiser.is_null() || server.is_null() {
        return PdsStatus::NullArgument;
    }
    let advertiser = unsafe { &mut *advertiser };
    let server = unsafe { &*server };
    let policy = match c_str(policy).and_then(|s| {
        PrefixPolicy::parse_list(s).map_err(|_| PdsStatus::Malformed)
    }) {
        Ok(p) => p,
        Err(status) => return status,
    };
    let result = advertiser.advertiser.make_broadcast(
        server.principal.credential().blessing(),
        server.principal.keypair(),
        &server.mpk,
        &policy,
        ttl_seconds,
        now_unix,
        &mut OsRng,
    );
    let (broadcast, cache) = match result {
        Ok(pair) => pair,
        Err(_) => return PdsStatus::CryptoFailure,
    };
    advertiser.cache = Some(cache);
    let Ok(bytes) = wire::encode(&broadcast) else {
        return PdsStatus::Malformed;
    };
    write_out(buf, cap, written, &bytes)
}

/// Process a received advertisement as `client`; on success the advertising
/// server's canonical name lands in `buf`.
///
/// # Safety
/// `client` must be a live handle; `bytes` must point to `len` readable
/// bytes; `buf`/`written` as documented.
#[no_mangle]
pub unsafe extern "C" fn pds_discover(
    client: *const PdsPrincipal,
    bytes: *const u8,
    len: usize,
    now_unix: u64,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> PdsStatus {
    if client.is_null() || bytes.is_null() {
        return PdsStatus::NullArgument;
    }
    let client = unsafe { &*client };
    let bytes = unsafe { std::slice::from_raw_parts(bytes, len) };
    match process_broadcast(
        client.principal.credential(),
        client.principal.policy(),
        &client.mpk,
        &client.anchors,
        bytes,
        now_unix,
    ) {
        Ok(svc) => write_out(buf, cap, written, svc.server_name.canonical().as_bytes()),
        Err(e) => discovery_status(e),
    }
}

/// One full 0-RTT exchange in process: `client` discovers from the encoded
/// broadcast and connects with optional early data; `server` accepts. On
/// success the shared 32-byte session key is written to `key_out`.
///
/// # Safety
/// All handles must be live and `advertiser` must hold the state for the
/// given broadcast; byte arguments must point to readable memory of the
/// stated lengths; `key_out` must have room for 32 bytes.
#[no_mangle]
pub unsafe extern "C" fn pds_connect_loopback(
    client: *const PdsPrincipal,
    server: *const PdsPrincipal,
    advertiser: *const PdsAdvertiser,
    broadcast_bytes: *const u8,
    broadcast_len: usize,
    early_data: *const u8,
    early_data_len: usize,
    now_unix: u64,
    key_out: *mut u8,
) -> PdsStatus {
    if client.is_null() || server.is_null() || advertiser.is_null() || broadcast_bytes.is_null() {
        return PdsStatus::NullArgument;
    }
    if key_out.is_null() {
        return PdsStatus::NullArgument;
    }
    let client = unsafe { &*client };
    let server = unsafe { &*server };
    let advertiser = unsafe { &*advertiser };
    let broadcast = unsafe { std::slice::from_raw_parts(broadcast_bytes, broadcast_len) };
    let early = if early_data.is_null() {
        None
    } else {
        Some(unsafe { std::slice::from_raw_parts(early_data, early_data_len) })
    };

    let svc = match process_broadcast(
        client.principal.credential(),
        client.principal.policy(),
        &client.mpk,
        &client.anchors,
        broadcast,
        now_unix,
    ) {
        Ok(svc) => svc,
        Err(e) => return discovery_status(e),
    };
    let Ok((mut session, request)) = client_connect(
        client.principal.credential(),
        client.principal.keypair(),
        &svc,
        early,
        now_unix,
        &mut OsRng,
    ) else {
        return PdsStatus::CryptoFailure;
    };
    let (Some(sstate), Some(cache)) = (advertiser.advertiser.state(), advertiser.cache.as_ref())
    else {
        return PdsStatus::Expired;
    };
    let accepted = match server_accept(
        server.principal.credential().blessing(),
        server.principal.policy(),
        &server.anchors,
        sstate,
        cache,
        &request,
        None,
        now_unix,
        &mut OsRng,
    ) {
        Ok(a) => a,
        Err(e) => return discovery_status(e),
    };
    let Ok((key, _)) = session.client_complete(&accepted.response) else {
        return PdsStatus::CryptoFailure;
    };
    if key != accepted.session_key {
        return PdsStatus::CryptoFailure;
    }
    unsafe { ptr::copy_nonoverlapping(key.as_ptr(), key_out, 32) };
    PdsStatus::Ok
}

fn discovery_status(e: privdisc::discovery::DiscoveryError) -> PdsStatus {
    use privdisc::discovery::DiscoveryError as E;
    match e {
        E::Expired => PdsStatus::Expired,
        E::NotForUs => PdsStatus::NotAuthorized,
        E::Malformed => PdsStatus::Malformed,
        _ => PdsStatus::CryptoFailure,
    }
}

/// A static description of a status code.
#[no_mangle]
pub extern "C" fn pds_status_message(status: PdsStatus) -> *const c_char {
    let msg: &'static [u8] = match status {
        PdsStatus::Ok => b"ok\0",
        PdsStatus::Malformed => b"malformed input\0",
        PdsStatus::NotAuthorized => b"not authorized\0",
        PdsStatus::Expired => b"expired\0",
        PdsStatus::CryptoFailure => b"cryptographic failure\0",
        PdsStatus::NullArgument => b"null argument\0",
        PdsStatus::BufferTooSmall => b"buffer too small\0",
    };
    msg.as_ptr() as *const c_char
}
