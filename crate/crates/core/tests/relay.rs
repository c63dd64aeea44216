mod common;

use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio_tungstenite::connect_async;
use tokio_tungstenite::tungstenite::Message;

use common::{collect, is_subsequence, topic, wait_for_subscribers, wait_until};
use midiwire::client::{ClientError, Connection};
use midiwire::midi14::{Channel, Value14};
use midiwire::relay::{serve, Hello, Mode, RelayConfig};
use midiwire::wire::{build_message, encode_wire, WireMessage};

fn msg(topic: &str, value: u16) -> WireMessage {
    build_message(38, 6, Value14::new(value).unwrap(), Channel::default(), topic).unwrap()
}

fn values(msgs: &[WireMessage]) -> Vec<u16> {
    msgs.iter().map(|m| m.value().get()).collect()
}

async fn relay(config: RelayConfig) -> midiwire::relay::RelayHandle {
    serve("127.0.0.1:0", config).await.unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn one_publisher_one_subscriber_in_order() {
    let relay = relay(RelayConfig::default()).await;
    let mut sub = Connection::subscriber(&relay.url(), &[topic("a")], None, None)
        .await
        .unwrap();
    wait_for_subscribers(&relay, "a", 1).await;
    let mut publisher = Connection::publisher(&relay.url(), None).await.unwrap();
    for v in 0..100 {
        publisher.publish(&msg("a", v)).await.unwrap();
    }
    publisher.close().await.unwrap();
    let got = collect(&mut sub, 100, Duration::from_secs(5)).await;
    assert_eq!(values(&got), (0..100).collect::<Vec<_>>());
    let ok = wait_until(Duration::from_secs(2), || relay.stats().routed == 100).await;
    assert!(ok, "{:?}", relay.stats());
    let stats = relay.stats();
    assert_eq!(stats.published, 100);
    assert_eq!(stats.dropped, 0);
    relay.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn three_subscribers_see_identical_sequences() {
    let relay = relay(RelayConfig::default()).await;
    let mut subs = Vec::new();
    for _ in 0..3 {
        subs.push(
            Connection::subscriber(&relay.url(), &[topic("a")], None, None)
                .await
                .unwrap(),
        );
    }
    wait_for_subscribers(&relay, "a", 3).await;
    let sent: Vec<WireMessage> = (0..50).map(|v| msg("a", v * 300)).collect();
    let mut publisher = Connection::publisher(&relay.url(), None).await.unwrap();
    for m in &sent {
        publisher.publish(m).await.unwrap();
    }
    for sub in &mut subs {
        assert_eq!(collect(sub, 50, Duration::from_secs(5)).await, sent);
    }
    relay.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn topics_are_isolated() {
    let relay = relay(RelayConfig::default()).await;
    let mut on_b = Connection::subscriber(&relay.url(), &[topic("b")], None, None)
        .await
        .unwrap();
    let mut on_a = Connection::subscriber(&relay.url(), &[topic("a")], None, None)
        .await
        .unwrap();
    wait_for_subscribers(&relay, "b", 1).await;
    let mut publisher = Connection::publisher(&relay.url(), None).await.unwrap();
    publisher.publish(&msg("a", 1)).await.unwrap();
    publisher.publish(&msg("b", 2)).await.unwrap();
    assert_eq!(values(&collect(&mut on_a, 1, Duration::from_secs(5)).await), vec![1]);
    let got = collect(&mut on_b, 2, Duration::from_millis(300)).await;
    assert_eq!(values(&got), vec![2]);
    relay.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn publish_without_subscribers_is_harmless() {
    let relay = relay(RelayConfig::default()).await;
    let mut publisher = Connection::publisher(&relay.url(), None).await.unwrap();
    publisher.publish(&msg("empty", 5)).await.unwrap();
    publisher.close().await.unwrap();
    assert!(wait_until(Duration::from_secs(2), || relay.stats().unrouted == 1).await);
    relay.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn invalid_frames_are_skipped_and_connection_survives() {
    let relay = relay(RelayConfig::default()).await;
    let mut sub = Connection::subscriber(&relay.url(), &[topic("a")], None, None)
        .await
        .unwrap();
    wait_for_subscribers(&relay, "a", 1).await;
    let mut publisher = Connection::publisher(&relay.url(), None).await.unwrap();
    publisher.send_text("not json".into()).await.unwrap();
    publisher
        .send_text(r#"{"event":"a","data":{"msbx":38,"msby":6,"lsbx":200,"lsby":0,"channel":1}}"#.into())
        .await
        .unwrap();
    publisher.send_text(r#"{"op":"bogus"}"#.into()).await.unwrap();
    // Unknown keys are tolerated; the forwarded frame is the canonical encoding.
    publisher
        .send_text(r#"{"v":1,"event":"a","data":{"channel":1,"lsby":44,"lsbx":2,"msby":6,"msbx":38,"x":0}}"#.into())
        .await
        .unwrap();
    let got = collect(&mut sub, 1, Duration::from_secs(5)).await;
    assert_eq!(got, vec![msg("a", 300)]);
    assert!(wait_until(Duration::from_secs(2), || relay.stats().invalid == 3).await);
    relay.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn coalescing_subscriber_ends_on_latest_value() {
    let relay = relay(RelayConfig::default()).await;
    let (mut raw, _) = connect_async(relay.url()).await.unwrap();
    let mut hello = Hello::new(Mode::Sub, &[topic("a")]);
    hello.coalesce = Some(true);
    raw.send(Message::text(midiwire::relay::Control::Hello(hello).to_text()))
        .await
        .unwrap();
    // Welcome, then stop reading while the publisher floods.
    let welcome = raw.next().await.unwrap().unwrap();
    assert!(welcome.to_text().unwrap().contains("\"coalesce\":true"));
    wait_for_subscribers(&relay, "a", 1).await;

    let mut publisher = Connection::publisher(&relay.url(), None).await.unwrap();
    for v in 1..=100 {
        publisher.publish(&msg("a", v)).await.unwrap();
    }
    publisher.close().await.unwrap();
    let drained = wait_until(Duration::from_secs(5), || {
        let s = relay.stats();
        s.routed + s.dropped + s.coalesced == 100
    })
    .await;
    assert!(drained, "{:?}", relay.stats());

    let mut got = Vec::new();
    while got.last() != Some(&100) {
        let frame = tokio::time::timeout(Duration::from_secs(5), raw.next())
            .await
            .expect("final value never arrived")
            .unwrap()
            .unwrap();
        if let Message::Text(text) = frame {
            got.push(midiwire::wire::decode_wire(&text).unwrap().value().get());
        }
    }
    let sent: Vec<u16> = (1..=100).collect();
    assert!(is_subsequence(&got, &sent));
    let stats = relay.stats();
    assert_eq!(stats.routed as usize, got.len());
    assert_eq!(stats.routed + stats.coalesced + stats.dropped, 100);
    relay.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn slow_subscriber_overflow_is_conserved() {
    let relay = relay(RelayConfig {
        queue_capacity: 4,
        ..RelayConfig::default()
    })
    .await;
    let (mut raw, _) = connect_async(relay.url()).await.unwrap();
    raw.send(Message::text(
        midiwire::relay::Control::Hello(Hello::new(Mode::Sub, &[topic("a")])).to_text(),
    ))
    .await
    .unwrap();
    raw.next().await.unwrap().unwrap();
    wait_for_subscribers(&relay, "a", 1).await;

    const SENT: u64 = 20_000;
    let mut publisher = Connection::publisher(&relay.url(), None).await.unwrap();
    for v in 0..SENT {
        publisher.publish(&msg("a", (v % 16384) as u16)).await.unwrap();
    }
    publisher.close().await.unwrap();

    // Drain the subscriber until its queue is empty and all routed frames arrived.
    let mut received = 0u64;
    loop {
        let s = relay.stats();
        if s.routed + s.dropped == SENT && received == s.routed {
            break;
        }
        match tokio::time::timeout(Duration::from_secs(5), raw.next()).await {
            Ok(Some(Ok(Message::Text(_)))) => received += 1,
            Ok(Some(Ok(_))) => {}
            other => panic!("subscriber stalled: {other:?}, stats {s:?}"),
        }
    }
    let stats = relay.stats();
    assert!(stats.dropped > 0, "{stats:?}");
    assert_eq!(stats.routed + stats.dropped, SENT);
    relay.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn malformed_hello_is_rejected_with_reason() {
    let relay = relay(RelayConfig::default()).await;
    for first in [r#"{"op":"hello","mode":"listen"}"#, "hi", r#"{"op":"ping"}"#] {
        let (mut raw, _) = connect_async(relay.url()).await.unwrap();
        raw.send(Message::text(first)).await.unwrap();
        match raw.next().await {
            Some(Ok(Message::Close(Some(frame)))) => assert!(!frame.reason.is_empty()),
            other => panic!("{first}: expected close, got {other:?}"),
        }
    }
    let bad_topic = Hello::new(Mode::Sub, &[]);
    let mut hello = bad_topic.clone();
    hello.topics = vec!["has space".into()];
    let err = Connection::open(&relay.url(), hello).await.unwrap_err();
    assert!(matches!(err, ClientError::Rejected(reason) if reason.contains("topic")));
    assert_eq!(relay.stats().connections_total, 0);
    relay.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn token_is_checked_when_configured() {
    let relay = relay(RelayConfig {
        token: Some("s3cret".into()),
        ..RelayConfig::default()
    })
    .await;
    let err = Connection::publisher(&relay.url(), None).await.unwrap_err();
    assert!(matches!(err, ClientError::Rejected(reason) if reason.contains("token")));
    let err = Connection::publisher(&relay.url(), Some("nope".into()))
        .await
        .unwrap_err();
    assert!(matches!(err, ClientError::Rejected(_)));
    Connection::publisher(&relay.url(), Some("s3cret".into()))
        .await
        .unwrap();
    relay.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn unresponsive_connection_is_closed_by_heartbeat() {
    let relay = relay(RelayConfig {
        heartbeat: Duration::from_millis(100),
        ..RelayConfig::default()
    })
    .await;
    // Reads keep the live subscriber answering protocol pings.
    let mut live = Connection::subscriber(&relay.url(), &[topic("live")], None, None)
        .await
        .unwrap();
    let reader = tokio::spawn(async move { collect(&mut live, 1, Duration::from_secs(2)).await });

    let (mut silent, _) = connect_async(relay.url()).await.unwrap();
    silent
        .send(Message::text(
            midiwire::relay::Control::Hello(Hello::new(Mode::Sub, &[topic("silent")])).to_text(),
        ))
        .await
        .unwrap();
    silent.next().await.unwrap().unwrap();
    wait_for_subscribers(&relay, "silent", 1).await;

    let closed = wait_until(Duration::from_secs(3), || {
        relay.stats().subscribers("silent") == 0
    })
    .await;
    assert!(closed, "silent connection kept: {:?}", relay.stats());
    assert_eq!(relay.stats().subscribers("live"), 1);

    let mut publisher = Connection::publisher(&relay.url(), None).await.unwrap();
    publisher.publish(&msg("live", 9)).await.unwrap();
    assert_eq!(values(&reader.await.unwrap()), vec![9]);
    relay.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn text_level_ping_gets_pong() {
    let relay = relay(RelayConfig::default()).await;
    let (mut raw, _) = connect_async(relay.url()).await.unwrap();
    raw.send(Message::text(
        midiwire::relay::Control::Hello(Hello::new(Mode::Both, &[])).to_text(),
    ))
    .await
    .unwrap();
    raw.next().await.unwrap().unwrap();
    raw.send(Message::text(r#"{"op":"ping"}"#)).await.unwrap();
    let reply = raw.next().await.unwrap().unwrap();
    assert_eq!(reply.to_text().unwrap(), r#"{"op":"pong"}"#);

    // A "both" client with no topics sits on the default topic and hears itself.
    raw.send(Message::text(encode_wire(&msg("midiTransport-1", 7))))
        .await
        .unwrap();
    let echo = raw.next().await.unwrap().unwrap();
    assert_eq!(echo.to_text().unwrap(), encode_wire(&msg("midiTransport-1", 7)));
    relay.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn stats_endpoint_serves_json() {
    let relay = relay(RelayConfig {
        stats_addr: Some("127.0.0.1:0".parse().unwrap()),
        ..RelayConfig::default()
    })
    .await;
    let _sub = Connection::subscriber(&relay.url(), &[topic("a")], None, None)
        .await
        .unwrap();
    wait_for_subscribers(&relay, "a", 1).await;

    let mut tcp = tokio::net::TcpStream::connect(relay.stats_addr().unwrap())
        .await
        .unwrap();
    tcp.write_all(b"GET /stats HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n")
        .await
        .unwrap();
    let mut response = String::new();
    tcp.read_to_string(&mut response).await.unwrap();
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    let body = response.split("\r\n\r\n").nth(1).unwrap();
    let json: serde_json::Value = serde_json::from_str(body).unwrap();
    assert_eq!(json["connections"], 1);
    assert_eq!(json["topics"]["a"], 1);
    assert_eq!(json["routed"], 0);
    relay.shutdown().await;
}

#[tokio::test]
async fn port_in_use_fails_startup() {
    let first = relay(RelayConfig::default()).await;
    let err = serve(first.local_addr(), RelayConfig::default()).await;
    assert!(matches!(err, Err(midiwire::relay::RelayError::Bind { .. })));
    first.shutdown().await;
}
