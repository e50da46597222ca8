//! Benchmark measurement used by the `bench` CLI command: medians for the
//! encryption primitives and for end-to-end handshakes, with client and
//! server in the same process so no network latency pollutes the numbers.

use std::time::{Duration, Instant};

use blstrs::{pairing, G1Projective, G2Projective};
use group::{Curve, Group};
use rand::rngs::StdRng;
use rand::SeedableRng;

use crate::mutual_auth::{
    CachedServerIdentity, ClientSession, HandshakeConfig, HandshakeMode, ServerSession,
};
use crate::pairing_ibe::{
    ibe_decrypt, ibe_encrypt, ibe_extract, ibe_setup, random_scalar, GroupParams,
};
use crate::prefix_crypto::{HierName, PrefixPolicy};
use crate::principals::{anchors_for, Principal, SigningKeyPair};

/// One table row: a label and a measured value.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub label: &'static str,
    pub value: f64,
    pub unit: &'static str,
}

fn median(mut samples: Vec<Duration>) -> f64 {
    samples.sort();
    let mid = samples.len() / 2;
    let m = if samples.len() % 2 == 1 {
        samples[mid]
    } else {
        (samples[mid - 1] + samples[mid]) / 2
    };
    m.as_secs_f64() * 1e6
}

fn time_each<T>(n: usize, mut op: impl FnMut(usize) -> T) -> Vec<Duration> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = Instant::now();
        let result = op(i);
        out.push(t.elapsed());
        std::hint::black_box(result);
    }
    out
}

/// Micro-benchmarks for the encryption layer: one pairing evaluation, then
/// encrypt / decrypt / extract for a fixed identity. Values are medians in
/// microseconds over `iterations` runs.
pub fn ibe_micro(iterations: usize) -> Vec<BenchRow> {
    let mut rng = StdRng::seed_from_u64(0xbe7c);
    let params = GroupParams::bls12_381();
    let keypair = ibe_setup(&params, &mut rng);
    let identity = b"bench/svc/printer";
    let message = [0x42u8; 64];

    let g1_points: Vec<_> = (0..iterations)
        .map(|_| (G1Projective::generator() * random_scalar(&mut rng)).to_affine())
        .collect();
    let g2_points: Vec<_> = (0..iterations)
        .map(|_| (G2Projective::generator() * random_scalar(&mut rng)).to_affine())
        .collect();
    let pairing_times = time_each(iterations, |i| pairing(&g1_points[i], &g2_points[i]));

    let encrypt_times = time_each(iterations, |_| {
        ibe_encrypt(&keypair.public, identity, &message, &mut rng).expect("encrypt")
    });

    let ciphertexts: Vec<_> = (0..iterations)
        .map(|_| ibe_encrypt(&keypair.public, identity, &message, &mut rng).expect("encrypt"))
        .collect();
    let key = ibe_extract(&keypair.secret, identity, &mut rng).expect("extract");
    let decrypt_times = time_each(iterations, |i| {
        ibe_decrypt(&keypair.public, &key, &ciphertexts[i]).expect("decrypt")
    });

    let extract_times = time_each(iterations, |_| {
        ibe_extract(&keypair.secret, identity, &mut rng).expect("extract")
    });

    vec![
        BenchRow {
            label: "Pairing",
            value: median(pairing_times),
            unit: "us",
        },
        BenchRow {
            label: "Encrypt",
            value: median(encrypt_times),
            unit: "us",
        },
        BenchRow {
            label: "Decrypt",
            value: median(decrypt_times),
            unit: "us",
        },
        BenchRow {
            label: "Extract",
            value: median(extract_times),
            unit: "us",
        },
    ]
}

struct HandshakeFixture {
    config: HandshakeConfig,
    client: Principal,
    server: Principal,
    cached: CachedServerIdentity,
}

fn handshake_fixture(mode: HandshakeMode, rng: &mut StdRng) -> HandshakeFixture {
    let root = Principal::new_root("bench", rng).expect("root");
    let mpk = root.master_public().expect("master key").clone();
    let anchors = anchors_for(&root);

    // Prefix policies of length three on both sides, as in the reference
    // measurement setup.
    let client_keys = SigningKeyPair::generate(rng);
    let client_cred = root
        .issue(client_keys.public(), &["u", "alice", "phone"], rng)
        .expect("issue client");
    let mut client = Principal::from_parts(
        client_keys,
        client_cred,
        PrefixPolicy::single(HierName::parse("bench/s/printer").unwrap()),
    );
    client.set_policy(PrefixPolicy::single(
        HierName::parse("bench/s/printer").unwrap(),
    ));

    let server_keys = SigningKeyPair::generate(rng);
    let server_cred = root
        .issue(server_keys.public(), &["s", "printer", "p1"], rng)
        .expect("issue server");
    let mut server = Principal::from_parts(
        server_keys,
        server_cred,
        PrefixPolicy::single(HierName::parse("bench/u/alice").unwrap()),
    );
    server.set_policy(PrefixPolicy::single(
        HierName::parse("bench/u/alice").unwrap(),
    ));

    let cached = CachedServerIdentity::prepare(
        &mpk,
        server.policy(),
        server.credential().blessing(),
        rng,
    )
    .expect("cache");

    HandshakeFixture {
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

fn run_handshake(fx: &HandshakeFixture, rng: &mut StdRng) {
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
    .expect("respond");
    let finish = client.client_process_response(&response).expect("finish");
    server.server_process_finish(&finish).expect("complete");
    assert_eq!(client.session_key(), server.session_key());
}

/// End-to-end connection setup medians: the plain SIGMA-I flow, the private
/// flow with the encrypted server identity precomputed and cached, and the
/// slowdown ratio between them.
pub fn handshake_bench(iterations: usize) -> Vec<BenchRow> {
    let mut rng = StdRng::seed_from_u64(0xbe7d);

    let sigma = handshake_fixture(HandshakeMode::SigmaBaseline, &mut rng);
    let sigma_times = time_each(iterations, |_| run_handshake(&sigma, &mut rng));

    let private = handshake_fixture(HandshakeMode::Cached, &mut rng);
    let private_times = time_each(iterations, |_| run_handshake(&private, &mut rng));

    let sigma_median = median(sigma_times);
    let private_median = median(private_times);

    vec![
        BenchRow {
            label: "SIGMA-I",
            value: sigma_median,
            unit: "us",
        },
        BenchRow {
            label: "Private Mutual Auth.",
            value: private_median,
            unit: "us",
        },
        BenchRow {
            label: "Slowdown",
            value: private_median / sigma_median,
            unit: "ratio",
        },
    ]
}

/// Render rows as TSV with a header line.
pub fn render_tsv(rows: &[BenchRow]) -> String {
    let mut out = String::from("operation\tvalue\tunit\n");
    for row in rows {
        out.push_str(&format!("{}\t{:.1}\t{}\n", row.label, row.value, row.unit));
    }
    out
}
