use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use lluad_core::dns::{encode_query, parse_response, Rcode, RecordKey, RecordType};
use lluad_core::maintenance::{MaintenanceConfig, MemoryAuthority};
use lluad_core::mixnet::Scalar;
use lluad_core::protocol::{ClientRegistry, ClientSession, HubConfig, RegisteredClient, ServerHub, SessionConfig};
use lluad_daemon::client::{query_udp, start_client, ClientHandle, ClientOptions, Fallback};
use lluad_daemon::server::{start_server, ServerHandle, ServerOptions};
use lluad_daemon::tls;
use tokio_rustls::rustls::pki_types::ServerName;

const LOCAL: ([u8; 4], u16) = ([127, 0, 0, 1], 0);

fn authority(n: usize) -> MemoryAuthority {
    let mut auth = MemoryAuthority::new();
    for i in 0..n {
        auth.set_a(&format!("site{i}.test"), &[[10, 1, (i / 200) as u8, (i % 200) as u8]], 3600);
    }
    auth
}

fn key(i: usize) -> RecordKey {
    RecordKey::new(format!("site{i}.test").parse().unwrap(), RecordType::A)
}

fn simulated(n: usize) -> Fallback {
    Fallback::Simulated { authority: Arc::new(Mutex::new(Box::new(authority(n)))), latency: Duration::ZERO }
}

struct Net {
    secrets: Vec<Scalar>,
    registry: ClientRegistry,
}

fn net(clients: usize, shufflers: usize) -> Net {
    let secrets: Vec<Scalar> = (0..clients).map(|_| Scalar::random(&mut rand::rng())).collect();
    let registry = ClientRegistry::new(
        secrets
            .iter()
            .enumerate()
            .map(|(i, s)| RegisteredClient { id: i as u32, key: s.public(), shuffler: i < shufflers })
            .collect(),
    )
    .unwrap();
    Net { secrets, registry }
}

fn hub(n: &Net, n_popular: usize) -> ServerHub {
    let config = HubConfig {
        maintenance: MaintenanceConfig { n_popular, ..MaintenanceConfig::default() },
        n_shuffle: 3,
        ..HubConfig::default()
    };
    ServerHub::new(config, n.registry.clone(), Scalar::random(&mut rand::rng()), Box::new(authority(200))).unwrap()
}

fn options(server: SocketAddr) -> ClientOptions {
    ClientOptions {
        server,
        tls: None,
        dns_listen: LOCAL.into(),
        max_list_records: None,
        reconnect_delay: Duration::from_millis(100),
    }
}

async fn client(n: &Net, i: usize, fallback: Fallback, options: ClientOptions) -> ClientHandle {
    let session = ClientSession::new(
        i as u32,
        n.secrets[i],
        SessionConfig { voting_rate: 1.0, seed: i as u64, ..SessionConfig::default() },
    );
    start_client(session, fallback, 60, options).await.unwrap()
}

async fn wait_for(what: &str, mut done: impl FnMut() -> bool) {
    for _ in 0..500 {
        if done() {
            return;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    panic!("timed out waiting for {what}");
}

async fn lookup(c: &ClientHandle, i: usize) -> lluad_core::dns::DnsResponse {
    let bytes = query_udp(c.dns_addr(), &encode_query(i as u16, &key(i)), Duration::from_secs(5)).await.unwrap();
    parse_response(&bytes).unwrap()
}

async fn server_generation(s: &ServerHandle) -> u64 {
    s.inspect(|h| h.maintenance().list().generation()).await.unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn twenty_clients_vote_over_tcp_and_answer_locally() {
    let n = net(20, 12);
    let server = start_server(hub(&n, 50), ServerOptions::plain(LOCAL.into())).await.unwrap();
    let mut clients = Vec::new();
    for i in 0..20 {
        clients.push(client(&n, i, simulated(200), options(server.local_addr())).await);
    }
    wait_for("sync", || clients.iter().all(|c| c.status().synced)).await;

    for (i, c) in clients.iter().enumerate() {
        for k in 0..4 {
            let r = lookup(c, i * 3 + k).await;
            assert_eq!(r.rcode, Rcode::NoError);
            assert_eq!(r.answers.len(), 1);
        }
        assert_eq!(c.resolver().stats.snapshot().fallback_queries, 4);
    }
    // Votes reach the session task asynchronously.
    tokio::time::sleep(Duration::from_millis(200)).await;
    server.act(|hub, now| hub.force_round(now));
    let history = loop {
        let h = server.inspect(|h| (h.history().to_vec(), h.round_in_progress())).await.unwrap();
        if !h.1 && !h.0.is_empty() {
            break h.0;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    };
    assert_eq!(history[0].submitters, 20);
    assert_eq!(history[0].tallied_votes, 80);
    assert_eq!(history[0].discrepancies, 0);

    let generation = server_generation(&server).await;
    assert!(server.inspect(|h| h.maintenance().list().len()).await.unwrap() == 50);
    wait_for("list propagation", || clients.iter().all(|c| c.status().generation == generation)).await;
    for c in &clients {
        let s = c.status();
        assert_eq!(s.list_records, 50);
        assert_eq!(s.stats.rounds, 1);
        assert!(s.last_error.is_none(), "{:?}", s.last_error);
    }

    // Every voted name is now on the list: no further fallback egress.
    let c = &clients[0];
    let before = c.resolver().stats.snapshot();
    for i in 0..20 {
        let r = lookup(c, i * 3).await;
        assert_eq!(r.rcode, Rcode::NoError);
    }
    let after = c.resolver().stats.snapshot();
    assert_eq!(after.fallback_queries, before.fallback_queries);
    assert_eq!(after.local_hits - before.local_hits, 20);
    for c in clients {
        c.shutdown().await;
    }
    assert!(server.shutdown().is_some());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn tls_link_syncs() {
    let dir = tempfile::tempdir().unwrap();
    let cert = rcgen::generate_simple_self_signed(vec!["localhost".to_string()]).unwrap();
    let (cert_path, key_path) = (dir.path().join("cert.pem"), dir.path().join("key.pem"));
    std::fs::write(&cert_path, cert.cert.pem()).unwrap();
    std::fs::write(&key_path, cert.signing_key.serialize_pem()).unwrap();

    let n = net(3, 3);
    let opts = ServerOptions {
        tls: Some(tls::acceptor(&cert_path, &key_path).unwrap()),
        ..ServerOptions::plain(LOCAL.into())
    };
    let server = start_server(hub(&n, 10), opts).await.unwrap();
    let connector = tls::connector(&cert_path).unwrap();
    let mut clients = Vec::new();
    for i in 0..3 {
        let o = ClientOptions {
            tls: Some((connector.clone(), ServerName::try_from("localhost").unwrap())),
            ..options(server.local_addr())
        };
        clients.push(client(&n, i, simulated(20), o).await);
    }
    wait_for("TLS sync", || clients.iter().all(|c| c.status().synced)).await;
    assert_eq!(server.inspect(|h| h.session_count()).await.unwrap(), 3);

    // A client that does not trust the certificate never connects.
    let other = tempfile::tempdir().unwrap();
    let stranger = rcgen::generate_simple_self_signed(vec!["localhost".to_string()]).unwrap();
    let stranger_path = other.path().join("ca.pem");
    std::fs::write(&stranger_path, stranger.cert.pem()).unwrap();
    let o = ClientOptions {
        tls: Some((tls::connector(&stranger_path).unwrap(), ServerName::try_from("localhost").unwrap())),
        ..options(server.local_addr())
    };
    let untrusting = client(&n, 0, simulated(20), o).await;
    wait_for("handshake failure", || untrusting.status().last_error.is_some()).await;
    assert!(!untrusting.status().synced);
}

#[tokio::test]
async fn fallback_failure_yields_servfail() {
    let n = net(1, 0);
    // Bound but silent: every fallback lookup times out.
    let silent = std::net::UdpSocket::bind(SocketAddr::from(LOCAL)).unwrap();
    let fallback = Fallback::Udp {
        mode: lluad_core::resolver::FallbackMode::Plain,
        upstream: silent.local_addr().unwrap(),
        latency: Duration::ZERO,
        timeout: Duration::from_millis(100),
    };
    // No server is listening; DNS is still served.
    let unused = std::net::TcpListener::bind(SocketAddr::from(LOCAL)).unwrap().local_addr().unwrap();
    let c = client(&n, 0, fallback, options(unused)).await;
    let r = lookup(&c, 5).await;
    assert_eq!(r.rcode, Rcode::ServFail);
    assert_eq!(r.id, 5);
    assert_eq!(r.question, Some(key(5)));
    let s = c.resolver().stats.snapshot();
    assert_eq!((s.queries, s.fallback_queries, s.fallback_failures), (1, 1, 1));
}

#[tokio::test]
async fn unknown_name_is_nxdomain_from_the_simulated_fallback() {
    let n = net(1, 0);
    let unused = std::net::TcpListener::bind(SocketAddr::from(LOCAL)).unwrap().local_addr().unwrap();
    let c = client(&n, 0, simulated(3), options(unused)).await;
    assert_eq!(lookup(&c, 2).await.rcode, Rcode::NoError);
    assert_eq!(lookup(&c, 9).await.rcode, Rcode::NxDomain);
    assert_eq!(c.resolver().stats.snapshot().fallback_failures, 0);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn daemons_start_from_config_files() {
    use lluad_daemon::config::{ClientConfig, KeyValues, ServerConfig};
    use lluad_daemon::keys::save_secret;

    let dir = tempfile::tempdir().unwrap();
    let n = net(2, 2);
    let registry = dir.path().join("registry.txt");
    std::fs::write(&registry, n.registry.to_text()).unwrap();
    let server_key = dir.path().join("server.key");
    save_secret(&server_key, &Scalar::random(&mut rand::rng())).unwrap();
    let text = format!(
        "listen = 127.0.0.1:0\nregistry = {}\nserver_key = {}\nupstream = 127.0.0.1:9\nn_popular = 10\n",
        registry.display(),
        server_key.display()
    );
    let server =
        lluad_daemon::run_server(&ServerConfig::from_kv(&KeyValues::parse(&text).unwrap()).unwrap()).await.unwrap();

    let mut clients = Vec::new();
    for (i, secret) in n.secrets.iter().enumerate() {
        let path = dir.path().join(format!("client{i}.key"));
        save_secret(&path, secret).unwrap();
        let text = format!(
            "server = {}\nclient_id = {i}\nclient_key = {}\nlisten = 127.0.0.1:0\nfallback = simulated\nfallback_latency_ms = 0\nsim_universe_size = 50\n",
            server.local_addr(),
            path.display()
        );
        let config = ClientConfig::from_kv(&KeyValues::parse(&text).unwrap()).unwrap();
        clients.push(lluad_daemon::run_client(&config).await.unwrap());
    }
    wait_for("sync", || clients.iter().all(|c| c.status().synced)).await;
    assert_eq!(server.inspect(|h| h.session_count()).await.unwrap(), 2);
}
