use std::io::{BufRead, BufReader};
use std::process::{Child, Command, Output, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use midiwire::relay::{serve, RelayConfig, RelayHandle};
use tokio::runtime::Runtime;

const BIN: &str = env!("CARGO_BIN_EXE_midiwire");

fn midiwire(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("MIDIWIRE_RELAY")
        .env_remove("MIDIWIRE_TOKEN")
        .output()
        .unwrap()
}

fn start_relay() -> (Runtime, RelayHandle) {
    let rt = Runtime::new().unwrap();
    let relay = rt.block_on(serve("127.0.0.1:0", RelayConfig::default())).unwrap();
    (rt, relay)
}

fn wait_for_subscribers(relay: &RelayHandle, n: usize) {
    let deadline = Instant::now() + Duration::from_secs(5);
    while relay.stats().subscribers("midiTransport-1") < n {
        assert!(Instant::now() < deadline, "subscriber never arrived");
        thread::sleep(Duration::from_millis(10));
    }
}

/// Streams a child's stdout lines over a channel.
fn stdout_lines(child: &mut Child) -> mpsc::Receiver<String> {
    let out = child.stdout.take().unwrap();
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for line in BufReader::new(out).lines().map_while(Result::ok) {
            if tx.send(line).is_err() {
                break;
            }
        }
    });
    rx
}

fn take_lines(rx: &mpsc::Receiver<String>, n: usize) -> Vec<String> {
    (0..n)
        .map(|i| {
            rx.recv_timeout(Duration::from_secs(5))
                .unwrap_or_else(|_| panic!("only {i} of {n} lines arrived"))
        })
        .collect()
}

fn terminate(mut child: Child) -> Output {
    let status = Command::new("kill")
        .args(["-TERM", &child.id().to_string()])
        .status()
        .unwrap();
    assert!(status.success());
    let deadline = Instant::now() + Duration::from_secs(5);
    while child.try_wait().unwrap().is_none() {
        assert!(Instant::now() < deadline, "process ignored SIGTERM");
        thread::sleep(Duration::from_millis(10));
    }
    child.wait_with_output().unwrap()
}

fn spawn(args: &[&str]) -> Child {
    Command::new(BIN)
        .args(args)
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn out_of_range_value_is_usage_error() {
    // Port 1 is never listening, so exit 2 shows the check ran before connecting.
    let out = midiwire(&["send", "--value", "20000", "--relay", "ws://127.0.0.1:1"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("out of range"), "{}", stderr(&out));
}

#[test]
fn other_usage_errors_exit_2() {
    for args in [
        &["send"][..],
        &["send", "--value", "1", "--sweep", "0:1:1"],
        &["send", "--sweep", "0:10:0"],
        &["send", "--value", "1", "--channel", "17"],
        &["send", "--value", "1", "--x", "128"],
        &["send", "--value", "1", "--topic", "bad topic"],
        &["relay", "--queue-cap", "0"],
        &["bridge", "--sink", "midi:x"],
        &[],
    ] {
        let out = midiwire(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn unreachable_relay_is_runtime_error() {
    let out = midiwire(&["send", "--value", "300", "--relay", "ws://127.0.0.1:1"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("midiwire: "), "{err}");
}

#[test]
fn relay_reports_port_in_use() {
    let (_rt, relay) = start_relay();
    let addr = relay.local_addr().to_string();
    let out = midiwire(&["relay", "--bind", &addr]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr(&out).lines().count(), 1, "{}", stderr(&out));
}

#[test]
fn verbose_send_prints_the_frame() {
    let (_rt, relay) = start_relay();
    let out = midiwire(&["send", "--value", "300", "--x", "38", "--y", "6", "--channel", "1", "--verbose", "--relay", &relay.url()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        "{\"event\":\"midiTransport-1\",\"data\":{\"msbx\":38,\"msby\":6,\"lsbx\":2,\"lsby\":44,\"channel\":1}}\n"
    );
}

#[test]
fn relay_address_from_environment() {
    let (_rt, relay) = start_relay();
    let out = Command::new(BIN)
        .args(["send", "--value", "1"])
        .env("MIDIWIRE_RELAY", relay.url())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let deadline = Instant::now() + Duration::from_secs(5);
    while relay.stats().published < 1 {
        assert!(Instant::now() < deadline);
        thread::sleep(Duration::from_millis(10));
    }
}

#[test]
fn sweep_reaches_monitor_in_order() {
    let (_rt, relay) = start_relay();
    let url = relay.url();
    let mut monitor = spawn(&["monitor", "--relay", &url]);
    let lines = stdout_lines(&mut monitor);
    wait_for_subscribers(&relay, 1);

    let out = midiwire(&["send", "--sweep", "0:16383:128:1", "--relay", &url]);
    assert!(out.status.success(), "{}", stderr(&out));

    let got: Vec<u16> = take_lines(&lines, 129)
        .iter()
        .map(|l| {
            let v = l.split(' ').find_map(|f| f.strip_prefix("value=")).unwrap();
            v.parse().unwrap()
        })
        .collect();
    let mut want: Vec<u16> = (0..16383).step_by(128).collect();
    want.push(16383);
    assert_eq!(got, want);

    let out = terminate(monitor);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("printed 129 skipped 0"), "{}", stderr(&out));
}

#[test]
fn monitor_without_traffic_exits_cleanly() {
    let (_rt, relay) = start_relay();
    let monitor = spawn(&["monitor", "--relay", &relay.url()]);
    wait_for_subscribers(&relay, 1);
    let out = terminate(monitor);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(out.stdout.is_empty());
}

#[test]
fn bridge_emits_hex_and_cv() {
    let (_rt, relay) = start_relay();
    let url = relay.url();
    let mut bridge = spawn(&["bridge", "--relay", &url, "--cv-out", "-"]);
    let lines = stdout_lines(&mut bridge);
    wait_for_subscribers(&relay, 1);

    let out = midiwire(&["send", "--value", "300", "--relay", &url]);
    assert!(out.status.success(), "{}", stderr(&out));
    let got = take_lines(&lines, 2);
    let (hex, cv): (Vec<_>, Vec<_>) = got.iter().partition(|l| l.starts_with("B0 "));
    assert_eq!(hex, ["B0 63 26 B0 62 06 B0 06 02 B0 26 2C"]);
    let (_, record) = cv[0].split_once(' ').unwrap();
    assert_eq!(record, "midiTransport-1/1/38.6 0.000302");

    let out = terminate(bridge);
    assert!(out.status.success(), "{}", stderr(&out));
}
