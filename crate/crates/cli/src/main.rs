use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use tokio_util::sync::CancellationToken;
use tracing_subscriber::EnvFilter;

use midiwire::bridge::{run_bridge, Bridge, BridgeClient, CurveSpec, CvTarget, RouteDefaults, RouteTable, SinkSpec};
use midiwire::client::{send_values, SendTarget, Sweep};
use midiwire::midi14::{Channel, Value14};
use midiwire::monitor::{run_monitor, Monitor};
use midiwire::relay::{serve, RelayConfig, DEFAULT_QUEUE_CAPACITY};
use midiwire::wire::Topic;

const RELAY_ENV: &str = "MIDIWIRE_RELAY";
const TOKEN_ENV: &str = "MIDIWIRE_TOKEN";
const DEFAULT_RELAY: &str = "ws://127.0.0.1:8080";

/// 14-bit MIDI control values over WebSockets.
#[derive(Debug, Parser)]
#[command(name = "midiwire", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the fan-out relay.
    Relay(RelayArgs),
    /// Subscribe and turn messages into NRPN bytes and CV records.
    Bridge(BridgeArgs),
    /// Publish one value or a sweep of values.
    Send(SendArgs),
    /// Subscribe and print one line per message.
    Monitor(MonitorArgs),
}

#[derive(Debug, Args)]
struct RelayArgs {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
    /// Coalesce pending updates for subscribers that do not choose.
    #[arg(long)]
    coalesce: bool,
    /// Per-subscriber outbound queue capacity.
    #[arg(long, default_value_t = DEFAULT_QUEUE_CAPACITY, value_parser = positive_usize)]
    queue_cap: usize,
    /// Shared secret clients must present in their hello.
    #[arg(long, env = TOKEN_ENV)]
    token: Option<String>,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    heartbeat_secs: u64,
    /// Serve GET /stats as JSON on this port (same host as --bind).
    #[arg(long)]
    stats_port: Option<u16>,
}

#[derive(Debug, Args)]
struct ClientArgs {
    /// Relay URL.
    #[arg(long, env = RELAY_ENV, default_value = DEFAULT_RELAY)]
    relay: String,
    #[arg(long, env = TOKEN_ENV)]
    token: Option<String>,
}

#[derive(Debug, Args)]
struct BridgeArgs {
    #[command(flatten)]
    client: ClientArgs,
    /// Topic to subscribe to; repeatable.
    #[arg(long = "topic")]
    topics: Vec<Topic>,
    /// JSON route configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Default NRPN sink: hex, file:PATH or port:NAME.
    #[arg(long, default_value = "hex")]
    sink: SinkSpec,
    /// Exponent of the default CV curve.
    #[arg(long, default_value_t = 2.0)]
    curve_exp: f64,
    /// Write CV records to this file, or "-" for stdout.
    #[arg(long)]
    cv_out: Option<String>,
}

#[derive(Debug, Args)]
#[group(id = "what", required = true, multiple = false, args = ["value", "sweep"])]
struct SendArgs {
    #[command(flatten)]
    client: ClientArgs,
    #[arg(long, default_value_t = Topic::default())]
    topic: Topic,
    /// A single 14-bit value, 0..=16383.
    #[arg(long, value_parser = parse_value)]
    value: Option<Value14>,
    /// start:end:step[:interval-ms]
    #[arg(long)]
    sweep: Option<Sweep>,
    /// First parameter number (NRPN MSB).
    #[arg(long, default_value_t = 38, value_parser = clap::value_parser!(u8).range(0..=127))]
    x: u8,
    /// Second parameter number (NRPN LSB).
    #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u8).range(0..=127))]
    y: u8,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=16))]
    channel: u8,
    /// Print each encoded frame.
    #[arg(long)]
    verbose: bool,
}

#[derive(Debug, Args)]
struct MonitorArgs {
    #[command(flatten)]
    client: ClientArgs,
    /// Topic to subscribe to; repeatable.
    #[arg(long = "topic")]
    topics: Vec<Topic>,
}

fn parse_value(s: &str) -> Result<Value14, String> {
    let n: i64 = s.parse().map_err(|_| format!("{s:?} is not an integer"))?;
    Value14::try_from(n).map_err(|e| e.to_string())
}

fn positive_usize(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(_) => Err(format!("{s:?} is not a positive integer")),
    }
}

fn or_default_topic(mut topics: Vec<Topic>) -> Vec<Topic> {
    if topics.is_empty() {
        topics.push(Topic::default());
    }
    topics
}

fn client_runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .context("cannot start runtime")
}

/// Cancels the returned token on ctrl-c or SIGTERM.
fn cancel_on_interrupt() -> CancellationToken {
    let token = CancellationToken::new();
    let trigger = token.clone();
    tokio::spawn(async move {
        #[cfg(unix)]
        {
            use tokio::signal::unix::{signal, SignalKind};
            let mut term = signal(SignalKind::terminate()).expect("install SIGTERM handler");
            tokio::select! {
                _ = tokio::signal::ctrl_c() => {}
                _ = term.recv() => {}
            }
        }
        #[cfg(not(unix))]
        let _ = tokio::signal::ctrl_c().await;
        trigger.cancel();
    });
    token
}

fn relay(args: RelayArgs) -> Result<()> {
    let bind: SocketAddr = args
        .bind
        .parse()
        .with_context(|| format!("invalid --bind address {:?}", args.bind))?;
    let config = RelayConfig {
        queue_capacity: args.queue_cap,
        coalesce: args.coalesce,
        token: args.token,
        heartbeat: Duration::from_secs(args.heartbeat_secs),
        stats_addr: args.stats_port.map(|p| SocketAddr::new(bind.ip(), p)),
        ..RelayConfig::default()
    };
    let rt = tokio::runtime::Runtime::new().context("cannot start runtime")?;
    rt.block_on(async {
        let handle = serve(bind, config).await?;
        eprintln!("relay listening on {}", handle.url());
        if let Some(addr) = handle.stats_addr() {
            eprintln!("stats on http://{addr}/stats");
        }
        let shutdown = cancel_on_interrupt();
        #[cfg(unix)]
        {
            use tokio::signal::unix::{signal, SignalKind};
            let mut usr1 = signal(SignalKind::user_defined1()).context("cannot install SIGUSR1 handler")?;
            loop {
                tokio::select! {
                    _ = shutdown.cancelled() => break,
                    _ = handle.stopped() => break,
                    _ = usr1.recv() => eprint!("{}", handle.stats().to_text()),
                }
            }
        }
        #[cfg(not(unix))]
        tokio::select! {
            _ = shutdown.cancelled() => {}
            _ = handle.stopped() => {}
        }
        handle.shutdown().await;
        Ok(())
    })
}

fn bridge(args: BridgeArgs) -> Result<()> {
    let defaults = RouteDefaults {
        sink: args.sink,
        curve: CurveSpec::with_exponent(args.curve_exp).context("invalid --curve-exp")?,
        cv_out: args.cv_out.as_deref().map(CvTarget::parse),
    };
    let table = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            RouteTable::from_json(&text, &defaults)
                .with_context(|| format!("invalid route config {}", path.display()))?
        }
        None => RouteTable::for_topics(&or_default_topic(args.topics.clone()), &defaults),
    };
    let mut topics = args.topics;
    for t in table.topics() {
        if !topics.contains(&t) {
            topics.push(t);
        }
    }
    let mut bridge = Bridge::open(&table)?;
    let mut client = BridgeClient::new(args.client.relay, or_default_topic(topics));
    client.token = args.client.token;
    let stats = client_runtime()?.block_on(async {
        let shutdown = cancel_on_interrupt();
        run_bridge(&client, &mut bridge, shutdown).await
    })?;
    eprintln!(
        "bridge: received {} nrpn {} cv {} invalid {} unmatched {} dropped {}",
        stats.received, stats.nrpn_groups, stats.cv_records, stats.invalid, stats.unmatched, stats.dropped
    );
    Ok(())
}

fn send(args: SendArgs) -> Result<()> {
    let target = SendTarget {
        topic: args.topic,
        x: args.x,
        y: args.y,
        channel: Channel::new(args.channel)?,
    };
    let (values, interval) = match (args.value, args.sweep) {
        (Some(v), _) => (vec![v], Duration::ZERO),
        (None, Some(sweep)) => (sweep.values(), sweep.interval),
        (None, None) => unreachable!("clap requires --value or --sweep"),
    };
    let verbose = args.verbose;
    let sent = client_runtime()?.block_on(send_values(
        &args.client.relay,
        args.client.token,
        &target,
        &values,
        interval,
        |frame| {
            if verbose {
                println!("{frame}");
            }
        },
    ))?;
    if verbose {
        eprintln!("sent {sent} message(s)");
    }
    Ok(())
}

fn monitor(args: MonitorArgs) -> Result<()> {
    let topics = or_default_topic(args.topics);
    let mut monitor = Monitor::default();
    let stats = client_runtime()?.block_on(async {
        let shutdown = cancel_on_interrupt();
        let mut out = io::stdout();
        run_monitor(&args.client.relay, &topics, args.client.token, &mut monitor, &mut out, shutdown).await
    })?;
    eprintln!("monitor: printed {} skipped {}", stats.printed, stats.skipped);
    Ok(())
}

/// Joins the error chain, skipping causes the outer messages already quote.
fn one_line(e: &anyhow::Error) -> String {
    let mut line = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if line.contains(&text) {
            continue;
        }
        if !line.is_empty() {
            line.push_str(": ");
        }
        line.push_str(&text);
    }
    line.replace('\n', " ")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(io::stderr)
        .init();
    let result = match cli.command {
        Command::Relay(args) => relay(args),
        Command::Bridge(args) => bridge(args),
        Command::Send(args) => send(args),
        Command::Monitor(args) => monitor(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("midiwire: {}", one_line(&e));
            ExitCode::FAILURE
        }
    }
}
