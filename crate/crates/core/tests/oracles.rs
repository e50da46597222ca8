//! Independent straight-line oracles for the derived values: everything
//! here recomputes the implementation's outputs from the raw formulas using
//! only the underlying curve, hash, and big-integer libraries, never the
//! implementation's own helper paths.

use blstrs::{pairing, G1Projective, G2Projective, Gt, Scalar};
use ff::{Field, PrimeField};
use group::{Curve, Group};
use hmac::{Hmac, Mac};
use num_bigint::BigUint;
use rand::rngs::StdRng;
use rand::SeedableRng;
use sha2::{Digest, Sha256};

use privdisc::discovery::key_schedule_0rtt;
use privdisc::mutual_auth::kdf_sigma;
use privdisc::pairing_ibe::{
    hash_to_scalar, ibe_decrypt, ibe_encrypt_seeded, ibe_extract, ibe_setup, GroupParams,
};
use privdisc::prefix_crypto::{
    keyring_extract, pe_dec, pe_enc, satisfies, HierName, PrefixPolicy,
};

/// Oracle reduction: interpret 64 hash bytes as a big-endian integer and
/// reduce modulo the group order, entirely in num-bigint.
fn oracle_reduce_mod_p(wide: &[u8; 64]) -> Scalar {
    let modulus = BigUint::parse_bytes(
        Scalar::MODULUS.trim_start_matches("0x").as_bytes(),
        16,
    )
    .unwrap();
    let reduced = BigUint::from_bytes_be(wide) % modulus;
    let mut bytes = [0u8; 32];
    let digits = reduced.to_bytes_be();
    bytes[32 - digits.len()..].copy_from_slice(&digits);
    Scalar::from_bytes_be(&bytes).unwrap()
}

/// The tagged 512-bit expansion, recomputed from its definition: two SHA-256
/// blocks over (domain, counter, length-framed parts).
fn oracle_expand(domain: u8, parts: &[&[u8]]) -> [u8; 64] {
    let mut wide = [0u8; 64];
    for counter in 0u8..2 {
        let mut h = Sha256::new();
        h.update([domain, counter]);
        for p in parts {
            h.update((p.len() as u32).to_be_bytes());
            h.update(p);
        }
        wide[(counter as usize) * 32..][..32].copy_from_slice(&h.finalize());
    }
    wide
}

fn oracle_hash32(domain: u8, parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update([domain]);
    for p in parts {
        h.update((p.len() as u32).to_be_bytes());
        h.update(p);
    }
    h.finalize().into()
}

#[test]
fn hash_to_scalar_matches_reduce_sha256_mod_p_oracle() {
    for input in [
        &b""[..],
        &b"\x00"[..],
        &b"alice/devices/tv"[..],
        &[0xffu8; 200][..],
    ] {
        let expected = oracle_reduce_mod_p(&oracle_expand(0x01, &[input]));
        assert_eq!(hash_to_scalar(input), expected, "input {input:02x?}");
    }
}

#[test]
fn fixed_seed_encryption_matches_straight_line_oracle() {
    let mut rng = StdRng::seed_from_u64(0x0eac1e);
    let params = GroupParams::bls12_381();
    let kp = ibe_setup(&params, &mut rng);
    let identity = b"oracle/test/identity";
    let plaintext = b"the quick brown fox";
    let seed = [0xa5u8; 32];

    let ct = ibe_encrypt_seeded(&kp.public, identity, plaintext, &seed).unwrap();

    // Straight-line recomputation of every component from the formulas:
    // s = H(seed, m); C1 = (X * g1^{H(id)})^s; C2 = Y^s; mask = H(v^s);
    // k = H(seed); sym = AEAD_k(m).
    let s = oracle_reduce_mod_p(&oracle_expand(0x02, &[&seed, plaintext]));
    let id_scalar = oracle_reduce_mod_p(&oracle_expand(0x01, &[identity]));

    let c1 = ((G1Projective::from(kp.public.x_pub) + G1Projective::generator() * id_scalar) * s)
        .to_affine();
    let c2 = (G1Projective::from(kp.public.y_pub) * s).to_affine();
    assert_eq!(ct.c1, c1);
    assert_eq!(ct.c2, c2);

    let vs = Gt::generator() * s;
    let mut vs_bytes = Vec::new();
    use blstrs::Compress;
    vs.write_compressed(&mut vs_bytes).unwrap();
    let mask = oracle_hash32(0x03, &[&vs_bytes]);
    for (i, b) in ct.seed_ct.iter().enumerate() {
        assert_eq!(*b, seed[i] ^ mask[i]);
    }

    let sym_key = oracle_hash32(0x04, &[&seed]);
    let sym = {
        use chacha20poly1305::aead::{Aead, KeyInit};
        chacha20poly1305::ChaCha20Poly1305::new((&sym_key).into())
            .encrypt(&[0u8; 12].into(), plaintext.as_ref())
            .unwrap()
    };
    assert_eq!(ct.sym_ct, sym);
}

#[test]
fn extraction_satisfies_pairing_algebra() {
    // e(C1 * C2^r, K) must equal v^s with s recomputed by the independent
    // big-integer oracle from the instrumented (seeded) encryption.
    let mut rng = StdRng::seed_from_u64(0x0a15e);
    let params = GroupParams::bls12_381();
    let kp = ibe_setup(&params, &mut rng);
    let identity = b"pairing/check";
    let seed = [0x11u8; 32];
    let plaintext = b"m";

    let ct = ibe_encrypt_seeded(&kp.public, identity, plaintext, &seed).unwrap();
    let key = ibe_extract(&kp.secret, identity, &mut rng).unwrap();

    let s = oracle_reduce_mod_p(&oracle_expand(0x02, &[&seed[..], plaintext]));
    let combined = (G1Projective::from(ct.c1) + G1Projective::from(ct.c2) * key.r).to_affine();
    assert_eq!(pairing(&combined, &key.k), Gt::generator() * s);

    // and the key itself satisfies K = g2^{1/(x + H(id) + r*y)}
    let denom = kp.secret.x + oracle_reduce_mod_p(&oracle_expand(0x01, &[identity])) + key.r * kp.secret.y;
    let expected_k = (G2Projective::generator() * denom.invert().unwrap()).to_affine();
    assert_eq!(key.k, expected_k);
}

#[test]
fn sigma_kdf_matches_oracle_recomputation() {
    let mut rng = StdRng::seed_from_u64(0x51d);
    let params = GroupParams::bls12_381();
    let _ = params;
    let x = privdisc::pairing_ibe::random_scalar(&mut rng);
    let y = privdisc::pairing_ibe::random_scalar(&mut rng);
    let gx = (G1Projective::generator() * x).to_affine();
    let gy = (G1Projective::generator() * y).to_affine();
    let gxy = (G1Projective::from(gy) * x).to_affine();

    let keys = kdf_sigma(&gx, &gy, &gxy);
    let parts: [&[u8]; 3] = [
        &gx.to_compressed(),
        &gy.to_compressed(),
        &gxy.to_compressed(),
    ];
    assert_eq!(keys.htk, oracle_hash32(0x05, &parts));
    assert_eq!(keys.atk, oracle_hash32(0x06, &parts));
}

#[test]
fn discovery_schedule_matches_oracle_recomputation() {
    let mut rng = StdRng::seed_from_u64(0x0d15c);
    let s = privdisc::pairing_ibe::random_scalar(&mut rng);
    let x = privdisc::pairing_ibe::random_scalar(&mut rng);
    let gs = (G1Projective::generator() * s).to_affine();
    let gx = (G1Projective::generator() * x).to_affine();
    let gsx = (G1Projective::from(gx) * s).to_affine();

    let keys = key_schedule_0rtt(&gs, &gx, &gsx);

    // k = H1(enc gs, enc gx, enc gsx); blocks_i = HMAC(k, [i])
    let parts: [&[u8]; 3] = [
        &gs.to_compressed(),
        &gx.to_compressed(),
        &gsx.to_compressed(),
    ];
    let k = oracle_hash32(0x07, &parts);
    let block = |i: u8| -> [u8; 32] {
        let mut mac = Hmac::<Sha256>::new_from_slice(&k).unwrap();
        mac.update(&[i]);
        mac.finalize().into_bytes().into()
    };
    assert_eq!(keys.htk, block(0));
    assert_eq!(keys.htk_resp, block(1));
    assert_eq!(keys.exk, block(2));
    assert_eq!(keys.eadk, block(3));

    // atk = HMAC(exk, H2(enc gx, enc gy, enc gxy))
    let y = privdisc::pairing_ibe::random_scalar(&mut rng);
    let gy = (G1Projective::generator() * y).to_affine();
    let gxy = (G1Projective::from(gy) * x).to_affine();
    let atk = privdisc::discovery::derive_session_key(&keys.exk, &gx, &gy, &gxy);
    let h2_parts: [&[u8]; 3] = [
        &gx.to_compressed(),
        &gy.to_compressed(),
        &gxy.to_compressed(),
    ];
    let h2 = oracle_hash32(0x08, &h2_parts);
    let mut mac = Hmac::<Sha256>::new_from_slice(&keys.exk).unwrap();
    mac.update(&h2);
    let expected: [u8; 32] = mac.finalize().into_bytes().into();
    assert_eq!(atk, expected);
}

/// Brute-force matching oracle: component-by-component comparison.
fn oracle_satisfies(name: &[String], policy: &[Vec<String>]) -> bool {
    policy.iter().any(|prefix| {
        prefix.len() <= name.len() && prefix.iter().zip(name.iter()).all(|(a, b)| a == b)
    })
}

#[test]
fn branch_selection_matches_try_all_branches_oracle() {
    let mut rng = StdRng::seed_from_u64(0xb4a);
    let params = GroupParams::bls12_381();
    let kp = ibe_setup(&params, &mut rng);

    // ring satisfying two of three prefixes; decryption must pick the first
    // matching branch in policy order, and agree with trying all branches
    let policy = PrefixPolicy::new(vec![
        HierName::parse("a/b").unwrap(),
        HierName::parse("a/b/c").unwrap(), // subsumed, dropped by normalization
        HierName::parse("z").unwrap(),
    ])
    .unwrap();
    let ct = pe_enc(&kp.public, &policy, b"payload", &mut rng).unwrap();

    let ring = keyring_extract(&kp.secret, &HierName::parse("a/b/c/d").unwrap(), &mut rng).unwrap();
    let via_impl = pe_dec(&kp.public, &ring, &ct).unwrap();

    // oracle: try every branch with every ring key
    let mut via_oracle = None;
    for (prefix, branch) in ct.branches() {
        for key in ring.keys() {
            if key.identity == prefix.canonical().as_bytes() {
                if let Ok(m) = ibe_decrypt(&kp.public, key, branch) {
                    via_oracle.get_or_insert(m);
                }
            }
        }
    }
    assert_eq!(Some(via_impl), via_oracle);
}

#[test]
fn satisfies_agrees_with_bruteforce_on_edge_shapes() {
    let cases = [
        (vec!["Alice", "Dev"], vec![vec!["Alice", "Devices"]], false),
        (vec!["Alice", "Devices2"], vec![vec!["Alice", "Devices"]], false),
        (vec!["Alice", "Devices", "TV"], vec![vec!["Alice", "Devices"]], true),
        (vec!["Alice", "Devices"], vec![vec!["Alice", "Devices"]], true),
        (vec!["Alice"], vec![vec!["Alice", "Devices"]], false),
    ];
    for (name_parts, policy_parts, expected) in cases {
        let name_strings: Vec<String> = name_parts.iter().map(|s| s.to_string()).collect();
        let policy_strings: Vec<Vec<String>> = policy_parts
            .iter()
            .map(|p| p.iter().map(|s| s.to_string()).collect())
            .collect();
        assert_eq!(oracle_satisfies(&name_strings, &policy_strings), expected);

        let name = HierName::new(name_strings).unwrap();
        let policy = PrefixPolicy::new(
            policy_strings
                .into_iter()
                .map(|p| HierName::new(p).unwrap())
                .collect::<Vec<_>>(),
        )
        .unwrap();
        assert_eq!(satisfies(&name, &policy), expected);
    }
}
