//! Two-terminal execution: the same protocol iterations as the in-process
//! runner, but with the transmitter (Alice) and receiver (Bob) on opposite
//! ends of a framed byte channel. Both terminals derive their private
//! randomness from the shared master seed's per-consumer substreams, so a
//! networked run reproduces the in-process run record for record.

pub mod frame;

use std::net::{TcpListener, TcpStream};
use std::sync::mpsc;
use std::time::Duration;

use crate::attack;
use crate::bb84::{self, SharedSelection};
use crate::bits::BitString;
use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::randomness::{StreamFactory, StreamLabel};
use crate::report::IterationRecord;
use crate::runner;

pub use frame::{MsgType, WireMessage, MAX_PAYLOAD, PROTOCOL_VERSION};

/// Seconds a blocked read waits before the session aborts.
pub const READ_TIMEOUT_S: u64 = 30;
/// Client connection retry policy.
pub const CONNECT_ATTEMPTS: u32 = 3;
pub const CONNECT_RETRY_DELAY_S: u64 = 1;

pub trait FrameChannel {
    fn send(&mut self, msg: &WireMessage) -> Result<()>;
    fn recv(&mut self) -> Result<WireMessage>;
}

pub struct TcpChannel {
    stream: TcpStream,
}

impl TcpChannel {
    pub fn new(stream: TcpStream) -> Result<Self> {
        stream.set_read_timeout(Some(Duration::from_secs(READ_TIMEOUT_S)))?;
        stream.set_nodelay(true)?;
        Ok(TcpChannel { stream })
    }
}

impl FrameChannel for TcpChannel {
    fn send(&mut self, msg: &WireMessage) -> Result<()> {
        msg.write_to(&mut self.stream)
    }

    fn recv(&mut self) -> Result<WireMessage> {
        WireMessage::read_from(&mut self.stream)
    }
}

/// In-memory channel carrying the exact encoded frame bytes, so loopback and
/// TCP sessions exchange byte-identical traffic.
pub struct LoopbackChannel {
    tx: mpsc::Sender<Vec<u8>>,
    rx: mpsc::Receiver<Vec<u8>>,
}

pub fn loopback_pair() -> (LoopbackChannel, LoopbackChannel) {
    let (tx_a, rx_b) = mpsc::channel();
    let (tx_b, rx_a) = mpsc::channel();
    (
        LoopbackChannel { tx: tx_a, rx: rx_a },
        LoopbackChannel { tx: tx_b, rx: rx_b },
    )
}

impl FrameChannel for LoopbackChannel {
    fn send(&mut self, msg: &WireMessage) -> Result<()> {
        self.tx
            .send(msg.encode())
            .map_err(|_| Error::Protocol("peer hung up".into()))
    }

    fn recv(&mut self) -> Result<WireMessage> {
        let bytes = self
            .rx
            .recv_timeout(Duration::from_secs(READ_TIMEOUT_S))
            .map_err(|_| Error::Protocol("peer hung up or timed out".into()))?;
        WireMessage::read_from(&mut bytes.as_slice())
    }
}

/// Wrapper that records every frame it sends and receives, in wire encoding.
pub struct RecordingChannel<C> {
    pub inner: C,
    pub sent: Vec<Vec<u8>>,
    pub received: Vec<Vec<u8>>,
}

impl<C> RecordingChannel<C> {
    pub fn new(inner: C) -> Self {
        RecordingChannel {
            inner,
            sent: Vec::new(),
            received: Vec::new(),
        }
    }
}

impl<C: FrameChannel> FrameChannel for RecordingChannel<C> {
    fn send(&mut self, msg: &WireMessage) -> Result<()> {
        self.sent.push(msg.encode());
        self.inner.send(msg)
    }

    fn recv(&mut self) -> Result<WireMessage> {
        let msg = self.inner.recv()?;
        self.received.push(msg.encode());
        Ok(msg)
    }
}

/// Receives the next frame, surfacing a peer-reported ERROR as an error.
fn recv_checked<C: FrameChannel>(ch: &mut C) -> Result<WireMessage> {
    let msg = ch.recv()?;
    if msg.msg_type == MsgType::Error {
        return Err(Error::Protocol(format!(
            "peer reported: {}",
            msg.error_text()
        )));
    }
    Ok(msg)
}

/// Runs the session as the listening terminal. Accepts exactly one client;
/// later connection attempts are refused because the listener is dropped.
pub fn serve(config: &SimConfig) -> Result<Vec<IterationRecord>> {
    config.validate()?;
    let listener = TcpListener::bind((config.ip.as_str(), config.port))?;
    log::info!("listening on {}", listener.local_addr()?);
    let (stream, peer) = listener.accept()?;
    drop(listener);
    log::info!("accepted {peer}");
    let mut ch = TcpChannel::new(stream)?;
    run_server_session(&mut ch, config)
}

/// Runs the session as the connecting terminal, retrying the connection a
/// few times so the two commands can be launched in either order.
pub fn connect(ip: &str, port: u16) -> Result<(SimConfig, Vec<IterationRecord>)> {
    let mut last_err = None;
    for attempt in 0..CONNECT_ATTEMPTS {
        if attempt > 0 {
            std::thread::sleep(Duration::from_secs(CONNECT_RETRY_DELAY_S));
        }
        match TcpStream::connect((ip, port)) {
            Ok(stream) => {
                let mut ch = TcpChannel::new(stream)?;
                return run_client_session(&mut ch);
            }
            Err(e) => {
                log::warn!("connect attempt {} failed: {e}", attempt + 1);
                last_err = Some(e);
            }
        }
    }
    Err(last_err.expect("at least one attempt").into())
}

/// Server side: version handshake, config push, then the iteration loop in
/// the server's protocol role. The server makes the attack decisions.
pub fn run_server_session<C: FrameChannel>(
    ch: &mut C,
    config: &SimConfig,
) -> Result<Vec<IterationRecord>> {
    let hello = recv_checked(ch)?;
    let version = hello.decode_hello()?;
    if version != PROTOCOL_VERSION {
        let text = format!(
            "protocol version mismatch: peer speaks {version}, this terminal speaks {PROTOCOL_VERSION}"
        );
        ch.send(&WireMessage::error(&text))?;
        return Err(Error::Protocol(text));
    }
    ch.send(&WireMessage::hello())?;
    ch.send(&WireMessage::config(config)?)?;
    let records = run_session_loop(ch, config, config.server_is_alice, true)?;
    ch.send(&WireMessage::end())?;
    recv_checked(ch)?.decode_end()?;
    Ok(records)
}

/// Client side: handshake, receive the session config, then the iteration
/// loop in the client's protocol role.
pub fn run_client_session<C: FrameChannel>(
    ch: &mut C,
) -> Result<(SimConfig, Vec<IterationRecord>)> {
    ch.send(&WireMessage::hello())?;
    let version = recv_checked(ch)?.decode_hello()?;
    if version != PROTOCOL_VERSION {
        return Err(Error::Protocol(format!(
            "protocol version mismatch: peer speaks {version}, this terminal speaks {PROTOCOL_VERSION}"
        )));
    }
    let config = recv_checked(ch)?.decode_config()?;
    config.validate()?;
    let records = run_session_loop(ch, &config, !config.server_is_alice, false)?;
    recv_checked(ch)?.decode_end()?;
    ch.send(&WireMessage::end())?;
    Ok((config, records))
}

fn run_session_loop<C: FrameChannel>(
    ch: &mut C,
    config: &SimConfig,
    is_alice: bool,
    decides: bool,
) -> Result<Vec<IterationRecord>> {
    let factory = runner::make_factory(config);
    let schedule = runner::attack_schedule_for(config, &factory)?;
    let mut records = Vec::with_capacity(config.iterations as usize);
    for iteration in 0..config.iterations {
        let attacked = schedule.is_attacked(iteration);
        let record = if is_alice {
            alice_iteration(ch, config, &factory, iteration, attacked, decides)
        } else {
            bob_iteration(ch, config, &factory, iteration, attacked, decides)
        };
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                // Best effort: tell the peer why before aborting.
                let _ = ch.send(&WireMessage::error(&e.to_string()));
                return Err(e);
            }
        };
        ch.send(&WireMessage::iter_done(iteration as u32))?;
        let done = recv_checked(ch)?.decode_iter_done()?;
        if done as u64 != iteration {
            return Err(Error::Protocol(format!(
                "peer finished iteration {done}, expected {iteration}"
            )));
        }
        records.push(record);
    }
    Ok(records)
}

/// Positions within the sifted key that both terminals disclose; derived
/// identically on each side from the shared selection substream.
fn derive_shared_positions(
    config: &SimConfig,
    factory: &StreamFactory,
    iteration: u64,
    sifted_len: usize,
) -> Result<Vec<usize>> {
    let mut selection_rng = factory.stream(StreamLabel::SharedSelection, iteration);
    let rng =
        matches!(config.shared_selection, SharedSelection::Random).then_some(&mut selection_rng);
    bb84::shared_positions(sifted_len, config.sharing_rate, config.shared_selection, rng)
}

fn alice_iteration<C: FrameChannel>(
    ch: &mut C,
    config: &SimConfig,
    factory: &StreamFactory,
    iteration: u64,
    attacked: bool,
    decides: bool,
) -> Result<IterationRecord> {
    let n = config.photons as usize;
    let alice_data = factory
        .stream(StreamLabel::AliceData, iteration)
        .next_bits(n)?;
    let alice_bases = factory
        .stream(StreamLabel::AliceBases, iteration)
        .next_bits(n)?;
    let mut photons = bb84::prepare(&alice_data, &alice_bases)?;
    if attacked {
        bb84::eve_intercept(
            &mut photons,
            config.epsilon,
            &mut factory.stream(StreamLabel::EveBases, iteration),
            &mut factory.stream(StreamLabel::EveCoins, iteration),
        )?;
    }
    bb84::depolarize(
        &mut photons,
        config.p_depol,
        &mut factory.stream(StreamLabel::DepolarizationCoins, iteration),
    )?;
    ch.send(&WireMessage::photons(&photons)?)?;

    let bob_bases = recv_checked(ch)?.decode_bits(MsgType::BobBases)?;
    if bob_bases.len() != n {
        return Err(Error::Protocol(format!(
            "peer announced {} bases for {n} photons",
            bob_bases.len()
        )));
    }
    ch.send(&WireMessage::bits(MsgType::AliceBases, &alice_bases)?)?;

    let kept: Vec<usize> = (0..n)
        .filter(|&i| alice_bases.get(i) == bob_bases.get(i))
        .collect();
    let alice_sifted: BitString = kept.iter().map(|&i| alice_data.get(i).unwrap()).collect();
    let sifted_len = alice_sifted.len();

    let (shared_len, qber_est, decided, qber_remaining) = if sifted_len == 0 {
        exchange_empty(ch, decides)?
    } else {
        let positions = derive_shared_positions(config, factory, iteration, sifted_len)?;
        let shared: BitString = positions
            .iter()
            .map(|&p| alice_sifted.get(p).unwrap())
            .collect();
        ch.send(&WireMessage::bits(MsgType::SharedBits, &shared)?)?;
        let (mismatches, reported_count) = recv_checked(ch)?.decode_qber_report()?;
        if reported_count as usize != positions.len() {
            return Err(Error::Protocol(format!(
                "peer compared {reported_count} shared bits, expected {}",
                positions.len()
            )));
        }
        let qber = mismatches as f64 / reported_count as f64;
        let decided = exchange_decision(ch, decides, Some(attack::decide(qber, config.threshold)))?;
        let qber_remaining = if config.research {
            let usable_bob = recv_checked(ch)?.decode_bits(MsgType::UsableKey)?;
            let mut is_shared = vec![false; sifted_len];
            for &p in &positions {
                is_shared[p] = true;
            }
            let usable_alice: BitString = (0..sifted_len)
                .filter(|&i| !is_shared[i])
                .map(|i| alice_sifted.get(i).unwrap())
                .collect();
            if usable_alice.len() != usable_bob.len() {
                return Err(Error::Protocol(format!(
                    "peer kept {} usable bits, expected {}",
                    usable_bob.len(),
                    usable_alice.len()
                )));
            }
            (!usable_alice.is_empty())
                .then(|| usable_alice.mismatches(&usable_bob).map(|m| m as f64 / usable_alice.len() as f64))
                .transpose()?
        } else {
            None
        };
        (
            positions.len() as u64,
            Some(qber),
            decided,
            qber_remaining,
        )
    };

    finish_record(
        config, factory, iteration, attacked, sifted_len as u64, shared_len, qber_est, decided,
        qber_remaining,
    )
}

fn bob_iteration<C: FrameChannel>(
    ch: &mut C,
    config: &SimConfig,
    factory: &StreamFactory,
    iteration: u64,
    attacked: bool,
    decides: bool,
) -> Result<IterationRecord> {
    let n = config.photons as usize;
    let photons = recv_checked(ch)?.decode_photons()?;
    if photons.len() != n {
        return Err(Error::Protocol(format!(
            "peer sent {} photons, session config says {n}",
            photons.len()
        )));
    }
    let bob_bases = factory
        .stream(StreamLabel::BobBases, iteration)
        .next_bits(n)?;
    let bob_data = bb84::measure(
        &photons,
        &bob_bases,
        &mut factory.stream(StreamLabel::MeasurementCoins, iteration),
    )?;
    ch.send(&WireMessage::bits(MsgType::BobBases, &bob_bases)?)?;
    let alice_bases = recv_checked(ch)?.decode_bits(MsgType::AliceBases)?;
    if alice_bases.len() != n {
        return Err(Error::Protocol(format!(
            "peer announced {} bases for {n} photons",
            alice_bases.len()
        )));
    }

    let kept: Vec<usize> = (0..n)
        .filter(|&i| alice_bases.get(i) == bob_bases.get(i))
        .collect();
    let bob_sifted: BitString = kept.iter().map(|&i| bob_data.get(i).unwrap()).collect();
    let sifted_len = bob_sifted.len();

    let (shared_len, qber_est, decided, qber_remaining) = if sifted_len == 0 {
        exchange_empty(ch, decides)?
    } else {
        let positions = derive_shared_positions(config, factory, iteration, sifted_len)?;
        let alice_shared = recv_checked(ch)?.decode_bits(MsgType::SharedBits)?;
        if alice_shared.len() != positions.len() {
            return Err(Error::Protocol(format!(
                "peer disclosed {} shared bits, expected {}",
                alice_shared.len(),
                positions.len()
            )));
        }
        let mut mismatches = 0u32;
        for (k, &p) in positions.iter().enumerate() {
            if alice_shared.get(k) != bob_sifted.get(p) {
                mismatches += 1;
            }
        }
        ch.send(&WireMessage::qber_report(mismatches, positions.len() as u32))?;
        let qber = mismatches as f64 / positions.len() as f64;
        let decided = exchange_decision(ch, decides, Some(attack::decide(qber, config.threshold)))?;
        if config.research {
            let mut is_shared = vec![false; sifted_len];
            for &p in &positions {
                is_shared[p] = true;
            }
            let usable_bob: BitString = (0..sifted_len)
                .filter(|&i| !is_shared[i])
                .map(|i| bob_sifted.get(i).unwrap())
                .collect();
            ch.send(&WireMessage::bits(MsgType::UsableKey, &usable_bob)?)?;
        }
        // Only the transmitter holds both usable keys, so the residual QBER
        // is reported on that side.
        (positions.len() as u64, Some(qber), decided, None)
    };

    finish_record(
        config, factory, iteration, attacked, sifted_len as u64, shared_len, qber_est, decided,
        qber_remaining,
    )
}

/// Degenerate empty-sifted-key iteration: both sides detect it from the
/// announced bases, so only a NO_DECISION frame is exchanged.
fn exchange_empty<C: FrameChannel>(
    ch: &mut C,
    decides: bool,
) -> Result<(u64, Option<f64>, Option<bool>, Option<f64>)> {
    let decided = exchange_decision(ch, decides, None)?;
    debug_assert!(decided.is_none());
    Ok((0, None, None, None))
}

/// The deciding terminal announces the verdict; the other adopts it.
fn exchange_decision<C: FrameChannel>(
    ch: &mut C,
    decides: bool,
    local: Option<bool>,
) -> Result<Option<bool>> {
    if decides {
        ch.send(&WireMessage::decision(local))?;
        Ok(local)
    } else {
        recv_checked(ch)?.decode_decision()
    }
}

#[allow(clippy::too_many_arguments)]
fn finish_record(
    config: &SimConfig,
    factory: &StreamFactory,
    iteration: u64,
    attacked: bool,
    sifted_len: u64,
    shared_len: u64,
    qber_est: Option<f64>,
    decided_attacked: Option<bool>,
    qber_remaining: Option<f64>,
) -> Result<IterationRecord> {
    let timing = runner::acquisition_fields(config, factory, iteration, sifted_len)?;
    Ok(IterationRecord {
        iteration,
        truly_attacked: attacked,
        decided_attacked,
        sifted_len,
        shared_len,
        qber_est,
        qber_remaining,
        t_source_s: timing.map(|t| t.0),
        t_dead_s: timing.map(|t| t.1),
        t_quantum_s: timing.map(|t| t.2),
        sifted_rate_bps: timing.map(|t| t.3),
    })
}

impl WireMessage {
    fn decode_end(&self) -> Result<()> {
        if self.msg_type != MsgType::End {
            return Err(Error::Protocol(format!(
                "expected END frame, got {}",
                self.msg_type.name()
            )));
        }
        Ok(())
    }
}
