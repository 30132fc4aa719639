use std::collections::{HashMap, HashSet};
use std::time::{Duration, Instant};

use bytes::Bytes;
use smartfridge_broker::{spawn, BrokerConfig, Client, ClientError};
use smartfridge_wire::{encode_frame, ConnAckCode, Frame, TopicFilter, TopicName};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;

fn no_keepalive() -> BrokerConfig {
    BrokerConfig {
        keepalive: None,
        ..BrokerConfig::default()
    }
}

async fn recv_timeout(c: &mut Client) -> Option<smartfridge_broker::Message> {
    tokio::time::timeout(Duration::from_millis(200), c.recv()).await.ok().flatten()
}

#[tokio::test]
async fn two_clients_exchange_one_copy() {
    let broker = spawn("127.0.0.1:0", no_keepalive()).await.unwrap();
    let addr = broker.local_addr();
    let mut sub = Client::connect(addr, "sub").await.unwrap();
    sub.subscribe("fridge/#").await.unwrap();
    sub.subscribe("fridge/+/env").await.unwrap();
    let mut publisher = Client::connect(addr, "pub").await.unwrap();
    let topic = TopicName::new("fridge/d1/env").unwrap();
    publisher.publish(&topic, "hello").await.unwrap();
    publisher.ping().await.unwrap();
    sub.ping().await.unwrap();
    let m = recv_timeout(&mut sub).await.unwrap();
    assert_eq!(m.topic, topic);
    assert_eq!(m.body, Bytes::from_static(b"hello"));
    assert!(recv_timeout(&mut sub).await.is_none());
    broker.shutdown().await;
}

#[tokio::test]
async fn duplicate_client_id_is_refused() {
    let broker = spawn("127.0.0.1:0", no_keepalive()).await.unwrap();
    let addr = broker.local_addr();
    let _first = Client::connect(addr, "dev1").await.unwrap();
    match Client::connect(addr, "dev1").await {
        Err(ClientError::Refused(ConnAckCode::IdentifierInUse)) => {}
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("duplicate accepted"),
    }
    broker.shutdown().await;
}

#[tokio::test]
async fn id_is_reusable_after_disconnect() {
    let broker = spawn("127.0.0.1:0", no_keepalive()).await.unwrap();
    let addr = broker.local_addr();
    let first = Client::connect(addr, "dev1").await.unwrap();
    first.disconnect().await.unwrap();
    let deadline = Instant::now() + Duration::from_secs(2);
    while broker.broker().is_connected("dev1") {
        assert!(Instant::now() < deadline);
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    Client::connect(addr, "dev1").await.unwrap();
    broker.shutdown().await;
}

async fn raw_connect(addr: std::net::SocketAddr, id: &str) -> TcpStream {
    let mut s = TcpStream::connect(addr).await.unwrap();
    let f = encode_frame(&Frame::Connect { client_id: id.into() }).unwrap();
    s.write_all(&f).await.unwrap();
    let mut ack = [0u8; 6];
    s.read_exact(&mut ack).await.unwrap();
    assert_eq!(ack, [0, 0, 0, 2, 2, 0]);
    s
}

#[tokio::test]
async fn malformed_and_abrupt_clients_do_not_disturb_others() {
    let broker = spawn("127.0.0.1:0", no_keepalive()).await.unwrap();
    let addr = broker.local_addr();
    let mut sub = Client::connect(addr, "sub").await.unwrap();
    sub.subscribe("t/#").await.unwrap();

    let mut bad_kind = raw_connect(addr, "bad-kind").await;
    bad_kind.write_all(&[0, 0, 0, 1, 0x7f]).await.unwrap();
    let mut bad_utf8 = raw_connect(addr, "bad-utf8").await;
    bad_utf8.write_all(&[0, 0, 0, 4, 5, 0, 1, 0xff]).await.unwrap();
    let mut truncated = raw_connect(addr, "truncated").await;
    truncated.write_all(&[0, 0, 0, 9, 5, 0]).await.unwrap();
    drop(truncated);
    let mut silent = TcpStream::connect(addr).await.unwrap();
    silent.write_all(&[0, 0, 0, 0]).await.unwrap();

    let mut n = [0u8; 1];
    assert_eq!(bad_kind.read(&mut n).await.unwrap(), 0, "bad kind closes");
    assert_eq!(bad_utf8.read(&mut n).await.unwrap(), 0, "bad utf8 closes");
    assert_eq!(silent.read(&mut n).await.unwrap(), 0, "zero length closes");

    let mut publisher = Client::connect(addr, "pub").await.unwrap();
    let topic = TopicName::new("t/1").unwrap();
    publisher.publish(&topic, "ok").await.unwrap();
    publisher.ping().await.unwrap();
    sub.ping().await.unwrap();
    assert_eq!(recv_timeout(&mut sub).await.unwrap().body, Bytes::from_static(b"ok"));
    broker.shutdown().await;
}

#[tokio::test]
async fn frame_before_connect_closes() {
    let broker = spawn("127.0.0.1:0", no_keepalive()).await.unwrap();
    let mut s = TcpStream::connect(broker.local_addr()).await.unwrap();
    s.write_all(&encode_frame(&Frame::PingReq).unwrap()).await.unwrap();
    let mut buf = [0u8; 8];
    assert_eq!(s.read(&mut buf).await.unwrap(), 0);
    broker.shutdown().await;
}

#[tokio::test]
async fn idle_session_closed_after_keepalive() {
    let broker = spawn(
        "127.0.0.1:0",
        BrokerConfig {
            keepalive: Some(Duration::from_millis(150)),
            ..BrokerConfig::default()
        },
    )
    .await
    .unwrap();
    let addr = broker.local_addr();
    let mut idle = raw_connect(addr, "idle").await;
    let mut alive = Client::connect(addr, "alive").await.unwrap();
    alive.keep_alive(Duration::from_millis(40));
    let mut buf = [0u8; 1];
    let n = tokio::time::timeout(Duration::from_secs(2), idle.read(&mut buf))
        .await
        .unwrap()
        .unwrap();
    assert_eq!(n, 0);
    assert!(!broker.broker().is_connected("idle"));
    tokio::time::sleep(Duration::from_millis(300)).await;
    assert!(broker.broker().is_connected("alive"));
    alive.ping().await.unwrap();
    broker.shutdown().await;
}

#[tokio::test]
async fn fan_out_harness_ten_subscribers() {
    const PUBLISHERS: usize = 4;
    const MESSAGES: usize = 1000;
    let start = Instant::now();
    let broker = spawn("127.0.0.1:0", no_keepalive()).await.unwrap();
    let addr = broker.local_addr();

    let topics: Vec<String> = (0..8)
        .map(|i| format!("fridge/d{}/{}", i % 4, if i < 4 { "env" } else { "detections" }))
        .collect();
    let filter_sets: Vec<Vec<&str>> = vec![
        vec!["fridge/#"],
        vec!["fridge/+/env"],
        vec!["fridge/+/detections"],
        vec!["fridge/d0/#"],
        vec!["fridge/d1/env", "fridge/+/env"],
        vec!["fridge/#", "fridge/d2/#", "fridge/+/detections"],
        vec!["fridge/d3/detections"],
        vec!["nothing/here"],
        vec!["+/+/env", "fridge/d1/+"],
        vec!["#"],
    ];

    let mut subs = Vec::new();
    for (i, filters) in filter_sets.iter().enumerate() {
        let mut c = Client::connect(addr, &format!("sub{i}")).await.unwrap();
        for f in filters {
            c.subscribe(f).await.unwrap();
        }
        subs.push(c);
    }

    let mut tasks = Vec::new();
    for p in 0..PUBLISHERS {
        let topics = topics.clone();
        tasks.push(tokio::spawn(async move {
            let mut c = Client::connect(addr, &format!("pub{p}")).await.unwrap();
            let mut sent = Vec::new();
            for seq in (p..MESSAGES).step_by(PUBLISHERS) {
                let topic = TopicName::new(topics[(seq * 7 + p) % topics.len()].clone()).unwrap();
                c.publish(&topic, format!("{p}:{seq}")).await.unwrap();
                sent.push((topic, p, seq));
            }
            c.ping().await.unwrap();
            sent
        }));
    }
    let mut sent = Vec::new();
    for t in tasks {
        sent.extend(t.await.unwrap());
    }
    assert_eq!(sent.len(), MESSAGES);

    for (i, sub) in subs.iter_mut().enumerate() {
        sub.ping().await.unwrap();
        let filters: Vec<TopicFilter> = filter_sets[i]
            .iter()
            .map(|f| TopicFilter::new(*f).unwrap())
            .collect();
        let expected: HashSet<(String, usize, usize)> = sent
            .iter()
            .filter(|(t, _, _)| filters.iter().any(|f| f.matches(t)))
            .map(|(t, p, s)| (t.as_str().to_owned(), *p, *s))
            .collect();
        let mut got = Vec::new();
        while let Some(m) = sub.try_recv() {
            let body = std::str::from_utf8(&m.body).unwrap();
            let (p, s) = body.split_once(':').unwrap();
            got.push((m.topic.as_str().to_owned(), p.parse::<usize>().unwrap(), s.parse::<usize>().unwrap()));
        }
        let unique: HashSet<_> = got.iter().cloned().collect();
        assert_eq!(unique.len(), got.len(), "sub{i} got duplicates");
        assert_eq!(unique, expected, "sub{i} delivery set");
        let mut last: HashMap<(String, usize), usize> = HashMap::new();
        for (t, p, s) in got {
            if let Some(prev) = last.insert((t, p), s) {
                assert!(prev < s, "sub{i} out of order");
            }
        }
    }
    broker.shutdown().await;
    assert!(start.elapsed() < Duration::from_secs(5));
}
