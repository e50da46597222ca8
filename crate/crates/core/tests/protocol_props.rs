//! Protocol-level property batteries that back the per-module invariants:
//! large honest-run sweeps, server-identity privacy against non-satisfying
//! key rings, key-schedule separation, and replay-cache soundness at
//! capacity.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use privdisc::discovery::{
    client_connect, derive_session_key, key_schedule_0rtt, process_broadcast, server_accept,
    Advertiser, DiscoveryError, ReplayCache,
};
use privdisc::mutual_auth::CachedServerIdentity;
use privdisc::pairing_ibe::random_scalar;
use privdisc::prefix_crypto::{keyring_extract, pe_dec, HierName, PrefixError, PrefixPolicy};
use privdisc::principals::{anchors_for, Principal, SigningKeyPair};
use privdisc::wire::{decode, encode};

#[test]
fn discovery_honest_completion_500_runs() {
    let mut rng = StdRng::seed_from_u64(0x9a09);
    let root = Principal::new_root("idp", &mut rng).unwrap();
    let mpk = root.master_public().unwrap().clone();
    let anchors = anchors_for(&root);

    for run in 0..500u32 {
        let client_keys = SigningKeyPair::generate(&mut rng);
        let client_cred = root
            .issue(client_keys.public(), &["u", &format!("c{run}")], &mut rng)
            .unwrap();
        let client = Principal::from_parts(
            client_keys,
            client_cred,
            PrefixPolicy::single(HierName::parse("idp/s").unwrap()),
        );
        let server_keys = SigningKeyPair::generate(&mut rng);
        let server_cred = root
            .issue(server_keys.public(), &["s", &format!("s{run}")], &mut rng)
            .unwrap();
        let mut server = Principal::from_parts(
            server_keys,
            server_cred,
            PrefixPolicy::single(HierName::parse("idp/u").unwrap()),
        );
        server.set_policy(PrefixPolicy::single(HierName::parse("idp/u").unwrap()));

        let now = 1_000 + run as u64;
        let mut advertiser = Advertiser::new();
        let (broadcast, cache) = advertiser
            .make_broadcast(
                server.credential().blessing(),
                server.keypair(),
                &mpk,
                server.policy(),
                600,
                now,
                &mut rng,
            )
            .unwrap();
        let bytes = encode(&broadcast).unwrap();

        let svc = process_broadcast(
            client.credential(),
            client.policy(),
            &mpk,
            &anchors,
            &bytes,
            now,
        )
        .unwrap();
        let with_early = run % 3 == 0;
        let early = with_early.then_some(&b"early"[..]);
        let (mut session, request) = client_connect(
            client.credential(),
            client.keypair(),
            &svc,
            early,
            now,
            &mut rng,
        )
        .unwrap();
        // exercise the wire path too
        let request = decode(&encode(&request).unwrap()).unwrap();
        let accepted = server_accept(
            server.credential().blessing(),
            server.policy(),
            &anchors,
            advertiser.state().unwrap(),
            &cache,
            &request,
            None,
            now,
            &mut rng,
        )
        .unwrap();
        let (atk, _) = session.client_complete(&accepted.response).unwrap();

        assert_eq!(atk, accepted.session_key, "run {run}");
        assert_eq!(session.server_name(), &svc.server_name, "run {run}");
        assert_eq!(
            accepted.client_name.canonical(),
            format!("idp/u/c{run}"),
            "run {run}"
        );
        if with_early {
            assert_eq!(accepted.early_data.as_deref(), Some(&b"early"[..]));
        }
    }
}

#[test]
fn cached_server_identity_unreadable_without_satisfying_ring() {
    let mut rng = StdRng::seed_from_u64(0x5e1f);
    let root = Principal::new_root("idp", &mut rng).unwrap();
    let mpk = root.master_public().unwrap().clone();
    let ibe = root.ibe_root().unwrap();

    let server_keys = SigningKeyPair::generate(&mut rng);
    let server_cred = root
        .issue(server_keys.public(), &["s", "vault"], &mut rng)
        .unwrap();
    let policy = PrefixPolicy::single(HierName::parse("idp/u/alice").unwrap());
    let server = Principal::from_parts(server_keys, server_cred, policy.clone());

    let cached =
        CachedServerIdentity::prepare(&mpk, &policy, server.credential().blessing(), &mut rng)
            .unwrap();
    let ct: privdisc::prefix_crypto::PrefixCiphertext = decode(cached.bytes()).unwrap();

    // 100 random key rings whose names do not satisfy the policy
    let components = ["idp", "u", "alice", "bob", "x"];
    let mut rejected = 0;
    while rejected < 100 {
        let depth = rng.gen_range(1..=4);
        let name = HierName::new(
            (0..depth)
                .map(|_| components[rng.gen_range(0..components.len())])
                .collect::<Vec<_>>(),
        )
        .unwrap();
        if privdisc::prefix_crypto::satisfies(&name, &policy) {
            continue;
        }
        let ring = keyring_extract(&ibe.keys.secret, &name, &mut rng).unwrap();
        assert_eq!(
            pe_dec(&mpk, &ring, &ct),
            Err(PrefixError::NotAuthorized),
            "ring {name} read the cached identity"
        );
        rejected += 1;
    }
}

#[test]
fn key_schedule_separation_100_schedules() {
    let mut rng = StdRng::seed_from_u64(0x5c4e);
    use group::{Curve, Group};
    for _ in 0..100 {
        let s = random_scalar(&mut rng);
        let x = random_scalar(&mut rng);
        let gs = (blstrs::G1Projective::generator() * s).to_affine();
        let gx = (blstrs::G1Projective::generator() * x).to_affine();
        let gsx = (blstrs::G1Projective::from(gx) * s).to_affine();
        let keys = key_schedule_0rtt(&gs, &gx, &gsx);
        let all = [keys.htk, keys.htk_resp, keys.exk, keys.eadk];
        for i in 0..4 {
            for j in (i + 1)..4 {
                assert_ne!(all[i], all[j]);
            }
        }

        // changing the server ephemeral changes atk but not eadk
        let y1 = random_scalar(&mut rng);
        let y2 = random_scalar(&mut rng);
        let gy1 = (blstrs::G1Projective::generator() * y1).to_affine();
        let gy2 = (blstrs::G1Projective::generator() * y2).to_affine();
        let gxy1 = (blstrs::G1Projective::from(gy1) * x).to_affine();
        let gxy2 = (blstrs::G1Projective::from(gy2) * x).to_affine();
        let atk1 = derive_session_key(&keys.exk, &gx, &gy1, &gxy1);
        let atk2 = derive_session_key(&keys.exk, &gx, &gy2, &gxy2);
        assert_ne!(atk1, atk2);
        let keys_again = key_schedule_0rtt(&gs, &gx, &gsx);
        assert_eq!(keys.eadk, keys_again.eadk);
    }
}

#[test]
fn replay_cache_accepts_distinct_up_to_capacity_then_fails_closed() {
    let mut rng = StdRng::seed_from_u64(0xca9);
    let root = Principal::new_root("idp", &mut rng).unwrap();
    let mpk = root.master_public().unwrap().clone();
    let anchors = anchors_for(&root);
    let client_keys = SigningKeyPair::generate(&mut rng);
    let client_cred = root
        .issue(client_keys.public(), &["u", "a"], &mut rng)
        .unwrap();
    let client = Principal::from_parts(
        client_keys,
        client_cred,
        PrefixPolicy::single(HierName::parse("idp/s").unwrap()),
    );
    let server_keys = SigningKeyPair::generate(&mut rng);
    let server_cred = root
        .issue(server_keys.public(), &["s", "x"], &mut rng)
        .unwrap();
    let mut server = Principal::from_parts(
        server_keys,
        server_cred,
        PrefixPolicy::single(HierName::parse("idp/u").unwrap()),
    );
    server.set_policy(PrefixPolicy::single(HierName::parse("idp/u").unwrap()));

    let capacity = 6;
    let mut advertiser = Advertiser::new();
    let (broadcast, default_cache) = advertiser
        .make_broadcast(
            server.credential().blessing(),
            server.keypair(),
            &mpk,
            server.policy(),
            3600,
            0,
            &mut rng,
        )
        .unwrap();
    drop(default_cache);
    let cache = ReplayCache::with_capacity(broadcast.bid, capacity);
    let bytes = encode(&broadcast).unwrap();
    let svc = process_broadcast(
        client.credential(),
        client.policy(),
        &mpk,
        &anchors,
        &bytes,
        0,
    )
    .unwrap();

    let mut requests = Vec::new();
    for i in 0..capacity {
        let (_, request) = client_connect(
            client.credential(),
            client.keypair(),
            &svc,
            None,
            0,
            &mut rng,
        )
        .unwrap();
        let accepted = server_accept(
            server.credential().blessing(),
            server.policy(),
            &anchors,
            advertiser.state().unwrap(),
            &cache,
            &request,
            None,
            0,
            &mut rng,
        );
        assert!(accepted.is_ok(), "distinct request {i} rejected");
        requests.push(request);
    }

    // every repeat is a replay, not a silent admit
    for request in &requests {
        assert_eq!(
            server_accept(
                server.credential().blessing(),
                server.policy(),
                &anchors,
                advertiser.state().unwrap(),
                &cache,
                request,
                None,
                0,
                &mut rng,
            )
            .unwrap_err(),
            DiscoveryError::Replay
        );
    }

    // at capacity, a fresh session is refused outright
    let (_, fresh) = client_connect(
        client.credential(),
        client.keypair(),
        &svc,
        None,
        0,
        &mut rng,
    )
    .unwrap();
    assert_eq!(
        server_accept(
            server.credential().blessing(),
            server.policy(),
            &anchors,
            advertiser.state().unwrap(),
            &cache,
            &fresh,
            None,
            0,
            &mut rng,
        )
        .unwrap_err(),
        DiscoveryError::CacheFull
    );
    assert_eq!(cache.len(), capacity);
}
