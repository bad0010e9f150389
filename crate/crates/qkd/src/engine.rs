//! Full-run orchestration: connects two endpoints, runs the configured
//! number of sessions, feeds every session's sifted bits through block
//! verification, closes epochs into final key, and reacts to alarms.
//!
//! On top of the per-session choreography in [`crate::protocol`], a run adds
//! these exchanges (session id of a post-processing frame is the number of
//! completed sessions):
//!
//! ```text
//! both           HELLO            role, session count, config fingerprint
//! per block:
//! Alice -> Bob   SYNDROME         block index, code rate, parity bits
//! Alice -> Bob   VERIFY_TAG       hash seed and tag over the block
//! Bob -> Alice   BLOCK_DISCARD    verdict: kept (with flip count) or why not
//! per closed epoch:
//! Alice -> Bob   PA_SEED          compression seed, agreed key length
//! Alice -> Bob   FINAL_DIGEST     tag over the compressed key
//! Bob -> Alice   FINAL_DIGEST     empty digest as confirmation
//! anytime:       ALARM            discard run (Bob), error rate over the
//!                                 abort threshold (Alice), digest mismatch
//!                                 (Bob); the run ends with no key from the
//!                                 affected epoch
//! ```
//!
//! Both endpoints advance one shared ledger from the verdict stream alone,
//! so rate selection, leak accounting and epoch boundaries never need their
//! own negotiation. A final short epoch is flushed once both sides see the
//! last session's backlog drop below one block.
//!
//! The two endpoints share the master seed: the optical channel they "share"
//! exists only as common randomness, and the HELLO fingerprint covers the
//! seed so a mismatched pair refuses to run rather than produce garbage.

use crate::bits::Bits;
use crate::metrics::{
    extrapolate_rate, series_from_block_counts, stability_stats, QberSeries, SessionReport,
    DEFAULT_WINDOW_BYTES,
};
use crate::net::{
    read_capture, AlarmKind, CaptureChannel, CaptureLog, MemChannel, Message, MsgType, NetError,
    PublicChannel,
};
use crate::optics::LinkParams;
use crate::postproc::hash::verify_tag;
use crate::postproc::ldpc::{LdpcCode, BLOCK_BITS};
use crate::postproc::{
    AliceBlocks, BlockOffer, BlockVerdict, BobBlocks, EpochSummary, KeyYield, LedgerEvent,
    PrivacyAmpParams,
};
use crate::protocol::{
    abort, alice_session, bob_session, recv_expect, send_msg, ProtocolError, SessionConfig,
};
use crate::rng::{derive_seed, StreamKind};
use crate::types::{RngSeed, Role};
use std::collections::BTreeMap;
use std::time::Duration;

/// Everything a run needs agreed between the endpoints, plus local
/// operational knobs (`timeout`) that stay out of the fingerprint.
#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub link: LinkParams,
    pub trains_per_session: u32,
    pub pulses_per_train: u32,
    pub sessions: u32,
    pub master_seed: RngSeed,
    pub inject_error_rate: f64,
    pub pa: PrivacyAmpParams,
    pub duty_cycle: f64,
    pub window_bytes: usize,
    pub timeout: Option<Duration>,
}

impl EngineConfig {
    pub fn new(link: LinkParams, master_seed: RngSeed, sessions: u32) -> EngineConfig {
        EngineConfig {
            link,
            trains_per_session: 1000,
            pulses_per_train: 2400,
            sessions,
            master_seed,
            inject_error_rate: 0.0,
            pa: PrivacyAmpParams::default(),
            duty_cycle: 0.5,
            window_bytes: DEFAULT_WINDOW_BYTES,
            timeout: Some(Duration::from_secs(30)),
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.sessions == 0 {
            return Err(ProtocolError::Violation("a run needs at least one session".into()));
        }
        if self.window_bytes == 0 || (self.window_bytes * 8) % BLOCK_BITS != 0 {
            return Err(ProtocolError::Violation(format!(
                "window of {} bytes does not hold whole {}-bit blocks",
                self.window_bytes, BLOCK_BITS
            )));
        }
        if !(self.duty_cycle > 0.0 && self.duty_cycle <= 1.0) {
            return Err(ProtocolError::Violation(format!(
                "duty cycle {} outside (0,1]",
                self.duty_cycle
            )));
        }
        self.pa
            .validate()
            .map_err(|e| ProtocolError::Violation(e.to_string()))?;
        self.session_config(0).validate()
    }

    fn session_config(&self, k: u32) -> SessionConfig {
        SessionConfig {
            trains_per_session: self.trains_per_session,
            pulses_per_train: self.pulses_per_train,
            link: self.link.clone(),
            session_seed: derive_seed(self.master_seed, StreamKind::SessionSeed, k as u64),
            inject_error_rate: self.inject_error_rate,
        }
    }
}

/// Digest of every agreement-relevant config field. Endpoints exchange it in
/// HELLO and refuse to run on a mismatch, because differing parameters make
/// the two simulations describe different channels.
pub fn config_fingerprint(cfg: &EngineConfig) -> u64 {
    let mut h = 0u64;
    let mut put = |v: u64| h = mix(h, v);
    put(cfg.link.mean_photon_number.to_bits());
    put(cfg.link.channel_loss_db.to_bits());
    put(cfg.link.detector_efficiency.to_bits());
    put(cfg.link.dark_count_prob.to_bits());
    put(cfg.link.visibility.to_bits());
    put(cfg.link.dead_time_slots as u64);
    put(cfg.link.pulse_rate_hz.to_bits());
    put(cfg.trains_per_session as u64);
    put(cfg.pulses_per_train as u64);
    put(cfg.sessions as u64);
    put(cfg.master_seed.0);
    put(cfg.inject_error_rate.to_bits());
    put(cfg.pa.eps_pa.to_bits());
    put(cfg.pa.qber_abort_threshold.to_bits());
    put(cfg.pa.ec_efficiency_f.to_bits());
    put(cfg.duty_cycle.to_bits());
    put(cfg.window_bytes as u64);
    h
}

fn mix(h: u64, v: u64) -> u64 {
    let mut z = (h ^ v).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// What one endpoint walks away with.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub role: Role,
    pub final_key: Bits,
    /// Closed, confirmed epochs; an alarmed epoch never appears here.
    pub epochs: Vec<EpochSummary>,
    pub series: QberSeries,
    pub report: SessionReport,
    pub sifted_bits: u64,
    pub verified_bits: u64,
    pub secret_bits: u64,
    pub slots_simulated: u64,
    pub sessions_completed: u32,
    pub alarm: Option<(AlarmKind, Option<f64>)>,
}

impl RunArtifacts {
    /// Disclosed bits charged against the key across confirmed epochs.
    pub fn leak_totals(&self) -> (u64, u64) {
        self.epochs
            .iter()
            .fold((0, 0), |(ec, v), e| (ec + e.leak_ec, v + e.leak_verify))
    }
}

#[derive(Default)]
struct RunState {
    final_key: Bits,
    epochs: Vec<EpochSummary>,
    block_flips: Vec<(usize, u64)>,
    sifted_bits: u64,
    sessions_completed: u32,
    alarm: Option<(AlarmKind, Option<f64>)>,
    offers_handled: u64,
}

#[derive(PartialEq)]
enum Flow {
    Continue,
    Alarm,
}

impl RunState {
    fn into_artifacts(self, cfg: &EngineConfig, role: Role) -> RunArtifacts {
        let series = series_from_block_counts(&self.block_flips, cfg.window_bytes)
            .expect("whole blocks always tile the window");
        let verified_bits = self.block_flips.len() as u64 * BLOCK_BITS as u64;
        let secret_bits = self.final_key.len() as u64;
        let slots = self.sessions_completed as u64
            * cfg.trains_per_session as u64
            * cfg.pulses_per_train as u64;
        let (mean_qber, qber_stddev) = if series.points.is_empty() {
            let mean = if verified_bits > 0 {
                self.block_flips.iter().map(|&(_, f)| f).sum::<u64>() as f64 / verified_bits as f64
            } else {
                0.0
            };
            (mean, 0.0)
        } else {
            stability_stats(&series, 0..series.points.len()).expect("nonempty region")
        };
        let rate = |bits: u64| {
            if slots == 0 {
                0.0
            } else {
                extrapolate_rate(bits, slots, cfg.link.pulse_rate_hz, cfg.duty_cycle)
                    .expect("validated config")
            }
        };
        let report = SessionReport {
            sifted_bits: self.sifted_bits,
            verified_bits,
            secret_bits,
            mean_qber,
            qber_stddev,
            alarm_flag: self.alarm.is_some(),
            extrapolated_sifted_rate_bps: rate(self.sifted_bits),
            extrapolated_secret_rate_bps: rate(secret_bits),
        };
        RunArtifacts {
            role,
            final_key: self.final_key,
            epochs: self.epochs,
            series,
            report,
            sifted_bits: self.sifted_bits,
            verified_bits,
            secret_bits,
            slots_simulated: slots,
            sessions_completed: self.sessions_completed,
            alarm: self.alarm,
        }
    }
}

fn exchange_hello(
    cfg: &EngineConfig,
    role: Role,
    chan: &mut dyn PublicChannel,
) -> Result<(), ProtocolError> {
    let fp = config_fingerprint(cfg);
    send_msg(
        chan,
        0,
        &Message::Hello { role, sessions_total: cfg.sessions, fingerprint: fp },
    )?;
    match recv_expect(chan, 0, &[MsgType::Hello], "hello")? {
        Message::Hello { role: peer, sessions_total, fingerprint } => {
            if peer == role {
                abort(chan, 0, format!("both endpoints claim the {:?} role", role));
                return Err(ProtocolError::Violation("peer claims the same role".into()));
            }
            if sessions_total != cfg.sessions || fingerprint != fp {
                abort(chan, 0, "configuration fingerprint mismatch".into());
                return Err(ProtocolError::Violation(format!(
                    "configuration fingerprint mismatch (peer {:016x}/{} sessions, local {:016x}/{})",
                    fingerprint, sessions_total, fp, cfg.sessions
                )));
            }
            Ok(())
        }
        _ => unreachable!(),
    }
}

pub fn run_alice(
    cfg: &EngineConfig,
    chan: &mut dyn PublicChannel,
) -> Result<RunArtifacts, ProtocolError> {
    cfg.validate()?;
    chan.set_timeout(cfg.timeout);
    exchange_hello(cfg, Role::Alice, chan)?;
    let mut blocks = AliceBlocks::new(cfg.pa, cfg.master_seed);
    let mut state = RunState::default();

    for k in 0..cfg.sessions {
        let scfg = cfg.session_config(k);
        let sifted = alice_session(&scfg, k as u64, chan)?;
        state.sifted_bits += sifted.bits.len() as u64;
        state.sessions_completed += 1;
        blocks.push_sifted(&sifted.bits);
        if alice_block_phase(chan, (k + 1) as u64, &mut blocks, &mut state)? == Flow::Alarm {
            return Ok(state.into_artifacts(cfg, Role::Alice));
        }
    }
    if blocks.ledger().verified_blocks() > 0 {
        let sid = cfg.sessions as u64;
        let summary = blocks.flush().expect("verified blocks pending");
        if alice_close_epoch(chan, sid, &mut blocks, summary, &mut state)? == Flow::Alarm {
            return Ok(state.into_artifacts(cfg, Role::Alice));
        }
    }
    Ok(state.into_artifacts(cfg, Role::Alice))
}

fn alice_block_phase(
    chan: &mut dyn PublicChannel,
    sid: u64,
    blocks: &mut AliceBlocks,
    state: &mut RunState,
) -> Result<Flow, ProtocolError> {
    while let Some(offer) = blocks.next_offer() {
        send_msg(
            chan,
            sid,
            &Message::Syndrome {
                index: offer.index,
                rate: offer.rate,
                syndrome: offer.syndrome.clone(),
            },
        )?;
        send_msg(
            chan,
            sid,
            &Message::VerifyTag { index: offer.index, hash_seed: offer.hash_seed, tag: offer.tag },
        )?;
        let (index, verdict) =
            match recv_expect(chan, sid, &[MsgType::BlockDiscard], "block disposition")? {
                Message::BlockDisposition { index, verdict } => (index, verdict),
                _ => unreachable!(),
            };
        if index != offer.index {
            abort(chan, sid, format!("disposition for block {} while {} pends", index, offer.index));
            return Err(ProtocolError::Violation(format!(
                "disposition for block {} does not match outstanding {}",
                index, offer.index
            )));
        }
        if let BlockVerdict::Verified { flips } = verdict {
            state.block_flips.push((BLOCK_BITS, flips as u64));
        }
        state.offers_handled += 1;
        match blocks.apply_verdict(index, verdict) {
            LedgerEvent::Continue => {}
            LedgerEvent::EpochReady(summary) => {
                if alice_close_epoch(chan, sid, blocks, summary, state)? == Flow::Alarm {
                    return Ok(Flow::Alarm);
                }
            }
            LedgerEvent::DiscardRunAlarm { .. } => {
                // the receiver follows its verdict with the alarm that
                // carries its syndrome-based estimate
                let (kind, qber) =
                    match recv_expect(chan, sid, &[MsgType::Alarm], "discard-run alarm")? {
                        Message::Alarm { kind, qber } => (kind, qber),
                        _ => unreachable!(),
                    };
                if kind != AlarmKind::DiscardRun {
                    abort(chan, sid, format!("unexpected alarm kind {:?}", kind));
                    return Err(ProtocolError::Violation(format!(
                        "expected a discard-run alarm, got {:?}",
                        kind
                    )));
                }
                blocks.discard_epoch_material();
                state.alarm = Some((kind, qber));
                return Ok(Flow::Alarm);
            }
        }
    }
    Ok(Flow::Continue)
}

fn alice_close_epoch(
    chan: &mut dyn PublicChannel,
    sid: u64,
    blocks: &mut AliceBlocks,
    summary: EpochSummary,
    state: &mut RunState,
) -> Result<Flow, ProtocolError> {
    match summary.key_yield {
        KeyYield::Length(l) => {
            let pa_seed = blocks.draw_pa_seed(summary.epoch_index);
            send_msg(
                chan,
                sid,
                &Message::PaSeed {
                    epoch_index: summary.epoch_index,
                    key_len: l as u32,
                    seed: pa_seed,
                },
            )?;
            let key = blocks.take_epoch_key(pa_seed, l);
            let digest_seed = blocks.draw_digest_seed(summary.epoch_index);
            let digest = verify_tag(&key, digest_seed);
            send_msg(
                chan,
                sid,
                &Message::FinalDigest {
                    epoch_index: summary.epoch_index,
                    digest_seed,
                    digest: Some(digest),
                },
            )?;
            let legal = [MsgType::FinalDigest, MsgType::Alarm];
            match recv_expect(chan, sid, &legal, "digest confirmation")? {
                Message::FinalDigest { epoch_index, digest: None, .. }
                    if epoch_index == summary.epoch_index =>
                {
                    state.final_key.extend_from(&key);
                    state.epochs.push(summary);
                    Ok(Flow::Continue)
                }
                Message::FinalDigest { epoch_index, .. } => {
                    abort(chan, sid, format!("bad confirmation for epoch {}", epoch_index));
                    Err(ProtocolError::Violation(format!(
                        "confirmation for epoch {} while closing {}",
                        epoch_index, summary.epoch_index
                    )))
                }
                Message::Alarm { kind: AlarmKind::DigestMismatch, qber } => {
                    state.alarm = Some((AlarmKind::DigestMismatch, qber));
                    Ok(Flow::Alarm)
                }
                Message::Alarm { kind, .. } => {
                    abort(chan, sid, format!("unexpected alarm kind {:?}", kind));
                    Err(ProtocolError::Violation(format!(
                        "alarm {:?} while awaiting digest confirmation",
                        kind
                    )))
                }
                _ => unreachable!(),
            }
        }
        KeyYield::Alarm { qber } => {
            send_msg(chan, sid, &Message::Alarm { kind: AlarmKind::EpochQber, qber: Some(qber) })?;
            blocks.discard_epoch_material();
            state.alarm = Some((AlarmKind::EpochQber, Some(qber)));
            Ok(Flow::Alarm)
        }
    }
}

pub fn run_bob(
    cfg: &EngineConfig,
    chan: &mut dyn PublicChannel,
) -> Result<RunArtifacts, ProtocolError> {
    cfg.validate()?;
    chan.set_timeout(cfg.timeout);
    exchange_hello(cfg, Role::Bob, chan)?;
    let mut blocks = BobBlocks::new(cfg.pa);
    let mut state = RunState::default();

    for k in 0..cfg.sessions {
        let scfg = cfg.session_config(k);
        let sifted = bob_session(&scfg, k as u64, chan)?;
        state.sifted_bits += sifted.bits.len() as u64;
        state.sessions_completed += 1;
        blocks.push_sifted(&sifted.bits);
        if bob_block_phase(chan, (k + 1) as u64, &mut blocks, &mut state)? == Flow::Alarm {
            return Ok(state.into_artifacts(cfg, Role::Bob));
        }
    }
    if blocks.ledger().verified_blocks() > 0 {
        let sid = cfg.sessions as u64;
        let summary = blocks.flush().expect("verified blocks pending");
        if bob_close_epoch(chan, sid, &mut blocks, summary, &mut state)? == Flow::Alarm {
            return Ok(state.into_artifacts(cfg, Role::Bob));
        }
    }
    Ok(state.into_artifacts(cfg, Role::Bob))
}

fn bob_block_phase(
    chan: &mut dyn PublicChannel,
    sid: u64,
    blocks: &mut BobBlocks,
    state: &mut RunState,
) -> Result<Flow, ProtocolError> {
    while blocks.sifted_backlog() >= BLOCK_BITS {
        let (index, rate, syndrome) =
            match recv_expect(chan, sid, &[MsgType::Syndrome], "block offer")? {
                Message::Syndrome { index, rate, syndrome } => (index, rate, syndrome),
                _ => unreachable!(),
            };
        if index != state.offers_handled {
            abort(chan, sid, format!("offer {} out of order", index));
            return Err(ProtocolError::Violation(format!(
                "offer {} while {} blocks were handled",
                index, state.offers_handled
            )));
        }
        let (hash_seed, tag) =
            match recv_expect(chan, sid, &[MsgType::VerifyTag], "block tag")? {
                Message::VerifyTag { index: ti, hash_seed, tag } => {
                    if ti != index {
                        abort(chan, sid, format!("tag for block {} after offer {}", ti, index));
                        return Err(ProtocolError::Violation(format!(
                            "tag for block {} does not match offer {}",
                            ti, index
                        )));
                    }
                    (hash_seed, tag)
                }
                _ => unreachable!(),
            };
        let offer = BlockOffer { index, rate, syndrome, hash_seed, tag };
        let (verdict, event) = blocks.judge_offer(&offer);
        if let BlockVerdict::Verified { flips } = verdict {
            state.block_flips.push((BLOCK_BITS, flips as u64));
        }
        state.offers_handled += 1;
        send_msg(chan, sid, &Message::BlockDisposition { index, verdict })?;
        match event {
            LedgerEvent::Continue => {}
            LedgerEvent::EpochReady(summary) => {
                if bob_close_epoch(chan, sid, blocks, summary, state)? == Flow::Alarm {
                    return Ok(Flow::Alarm);
                }
            }
            LedgerEvent::DiscardRunAlarm { estimate } => {
                send_msg(chan, sid, &Message::Alarm { kind: AlarmKind::DiscardRun, qber: estimate })?;
                blocks.discard_epoch_material();
                // round-trip the estimate the way the peer will read it
                state.alarm = Some((AlarmKind::DiscardRun, estimate.map(round_micro)));
                return Ok(Flow::Alarm);
            }
        }
    }
    Ok(Flow::Continue)
}

/// The wire carries error rates in whole millionths.
fn round_micro(q: f64) -> f64 {
    (q * 1e6).round() / 1e6
}

fn bob_close_epoch(
    chan: &mut dyn PublicChannel,
    sid: u64,
    blocks: &mut BobBlocks,
    summary: EpochSummary,
    state: &mut RunState,
) -> Result<Flow, ProtocolError> {
    match summary.key_yield {
        KeyYield::Length(l) => {
            let legal = [MsgType::PaSeed, MsgType::Alarm];
            let (epoch_index, key_len, seed) = match recv_expect(chan, sid, &legal, "compression seed")? {
                Message::PaSeed { epoch_index, key_len, seed } => (epoch_index, key_len, seed),
                Message::Alarm { kind: AlarmKind::EpochQber, qber } => {
                    blocks.discard_epoch_material();
                    state.alarm = Some((AlarmKind::EpochQber, qber));
                    return Ok(Flow::Alarm);
                }
                Message::Alarm { kind, .. } => {
                    abort(chan, sid, format!("unexpected alarm kind {:?}", kind));
                    return Err(ProtocolError::Violation(format!(
                        "alarm {:?} while awaiting the compression seed",
                        kind
                    )));
                }
                _ => unreachable!(),
            };
            if epoch_index != summary.epoch_index || key_len as usize != l {
                abort(chan, sid, "epoch accounting disagreement".into());
                return Err(ProtocolError::Violation(format!(
                    "peer closes epoch {} at {} bits, ledger says epoch {} at {}",
                    epoch_index, key_len, summary.epoch_index, l
                )));
            }
            let key = blocks.take_epoch_key(seed, l);
            let (digest_seed, digest) =
                match recv_expect(chan, sid, &[MsgType::FinalDigest], "final digest")? {
                    Message::FinalDigest { epoch_index: e, digest_seed, digest: Some(d) }
                        if e == summary.epoch_index =>
                    {
                        (digest_seed, d)
                    }
                    Message::FinalDigest { epoch_index: e, digest, .. } => {
                        abort(chan, sid, format!("bad digest frame for epoch {}", e));
                        return Err(ProtocolError::Violation(format!(
                            "digest frame for epoch {} (filled: {}) while closing {}",
                            e,
                            digest.is_some(),
                            summary.epoch_index
                        )));
                    }
                    _ => unreachable!(),
                };
            if verify_tag(&key, digest_seed) == digest {
                send_msg(
                    chan,
                    sid,
                    &Message::FinalDigest {
                        epoch_index: summary.epoch_index,
                        digest_seed,
                        digest: None,
                    },
                )?;
                state.final_key.extend_from(&key);
                state.epochs.push(summary);
                Ok(Flow::Continue)
            } else {
                send_msg(chan, sid, &Message::Alarm { kind: AlarmKind::DigestMismatch, qber: None })?;
                state.alarm = Some((AlarmKind::DigestMismatch, None));
                Ok(Flow::Alarm)
            }
        }
        KeyYield::Alarm { .. } => {
            // the transmitter's ledger reaches the same verdict and says so
            match recv_expect(chan, sid, &[MsgType::Alarm], "error-rate alarm")? {
                Message::Alarm { kind: AlarmKind::EpochQber, qber } => {
                    blocks.discard_epoch_material();
                    state.alarm = Some((AlarmKind::EpochQber, qber));
                    Ok(Flow::Alarm)
                }
                Message::Alarm { kind, .. } => {
                    abort(chan, sid, format!("unexpected alarm kind {:?}", kind));
                    Err(ProtocolError::Violation(format!(
                        "alarm {:?} where only an error-rate alarm fits",
                        kind
                    )))
                }
                _ => unreachable!(),
            }
        }
    }
}

/// Both endpoints in one process over an in-memory channel; optionally
/// records Alice's wire traffic for auditing.
pub struct LoopbackRun {
    pub alice: RunArtifacts,
    pub bob: RunArtifacts,
    pub capture: Option<Vec<u8>>,
}

pub fn run_loopback(cfg: &EngineConfig, capture: bool) -> Result<LoopbackRun, ProtocolError> {
    let (ca, mut cb) = MemChannel::pair();
    let log = capture.then(CaptureLog::default);
    let mut alice_chan: Box<dyn PublicChannel + Send> = match &log {
        Some(l) => Box::new(CaptureChannel::new(ca, l.clone())),
        None => Box::new(ca),
    };
    std::thread::scope(|s| {
        let alice = s.spawn(move || run_alice(cfg, alice_chan.as_mut()));
        let bob = s.spawn(move || run_bob(cfg, &mut cb));
        let alice = alice.join().expect("alice thread panicked")?;
        let bob = bob.join().expect("bob thread panicked")?;
        Ok(LoopbackRun { alice, bob, capture: log.map(|l| l.bytes()) })
    })
}

/// What a recorded public-channel transcript discloses about the key, frame
/// by frame. Block disclosures are grouped into epochs by verified order;
/// an epoch counts as key-bearing only once a filled FINAL_DIGEST for it
/// appears.
#[derive(Debug, Clone, Default)]
pub struct CaptureAudit {
    pub frames: usize,
    pub offers: usize,
    /// Disclosed bits (parity + tag) of verified blocks, per epoch index.
    pub verified_bits_by_epoch: BTreeMap<u64, u64>,
    /// Epochs whose compressed key was digest-confirmed on the wire.
    pub keyed_epochs: Vec<u64>,
    /// Syndrome and tag bits spent on blocks that were discarded; they cost
    /// throughput but describe no kept material.
    pub discarded_disclosed_bits: u64,
    /// Total disclosure attributable to distilled key: verified blocks of
    /// keyed epochs plus one digest tag each.
    pub key_derived_disclosed_bits: u64,
    pub alarms: Vec<(AlarmKind, Option<f64>)>,
    pub aborts: usize,
}

pub fn audit_capture(bytes: &[u8]) -> Result<CaptureAudit, NetError> {
    let records = read_capture(bytes)?;
    let mut audit = CaptureAudit { frames: records.len(), ..CaptureAudit::default() };
    let mut disclosed_by_index: BTreeMap<u64, u64> = BTreeMap::new();
    let mut verified_seen = 0u64;
    for (_, frame) in &records {
        match Message::from_frame(frame)? {
            Message::Syndrome { index, rate, .. } => {
                audit.offers += 1;
                *disclosed_by_index.entry(index).or_insert(0) +=
                    LdpcCode::standard(rate).m() as u64;
            }
            Message::VerifyTag { index, .. } => {
                *disclosed_by_index.entry(index).or_insert(0) += 64;
            }
            Message::BlockDisposition { index, verdict } => {
                let bits = disclosed_by_index.remove(&index).unwrap_or(0);
                match verdict {
                    BlockVerdict::Verified { .. } => {
                        let epoch = verified_seen / crate::postproc::EPOCH_BLOCKS as u64;
                        verified_seen += 1;
                        *audit.verified_bits_by_epoch.entry(epoch).or_insert(0) += bits;
                    }
                    BlockVerdict::Discard { .. } => audit.discarded_disclosed_bits += bits,
                }
            }
            Message::FinalDigest { epoch_index, digest: Some(_), .. } => {
                audit.keyed_epochs.push(epoch_index);
            }
            Message::Alarm { kind, qber } => audit.alarms.push((kind, qber)),
            Message::Abort { .. } => audit.aborts += 1,
            _ => {}
        }
    }
    for &epoch in &audit.keyed_epochs {
        audit.key_derived_disclosed_bits +=
            audit.verified_bits_by_epoch.get(&epoch).copied().unwrap_or(0) + 64;
    }
    Ok(audit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Frame;
    use crate::postproc::EPOCH_BLOCKS;

    fn ideal_link() -> LinkParams {
        LinkParams {
            mean_photon_number: 20.0,
            channel_loss_db: 0.0,
            detector_efficiency: 1.0,
            dark_count_prob: 0.0,
            visibility: 1.0,
            dead_time_slots: 0,
            pulse_rate_hz: 1e7,
        }
    }

    fn small_cfg(sessions: u32, trains: u32, seed: u64) -> EngineConfig {
        let mut cfg = EngineConfig::new(ideal_link(), RngSeed(seed), sessions);
        cfg.trains_per_session = trains;
        cfg.pulses_per_train = 2400;
        cfg
    }

    #[test]
    fn fingerprint_tracks_every_shared_field() {
        let base = small_cfg(4, 10, 99);
        let fp = config_fingerprint(&base);
        let mut variants: Vec<EngineConfig> = Vec::new();
        macro_rules! tweak {
            ($($f:ident : $v:expr),*) => {{
                let mut c = base.clone();
                $(c.$f = $v;)*
                variants.push(c);
            }};
        }
        tweak!(trains_per_session: 11);
        tweak!(pulses_per_train: 2401);
        tweak!(sessions: 5);
        tweak!(master_seed: RngSeed(100));
        tweak!(inject_error_rate: 0.01);
        tweak!(duty_cycle: 0.25);
        tweak!(window_bytes: 4096);
        let mut c = base.clone();
        c.link.visibility = 0.99;
        variants.push(c);
        let mut c = base.clone();
        c.pa.eps_pa = 1e-8;
        variants.push(c);
        for v in variants {
            assert_ne!(config_fingerprint(&v), fp, "field change must move the fingerprint");
        }
        // operational knob, not an agreement field
        let mut c = base.clone();
        c.timeout = None;
        assert_eq!(config_fingerprint(&c), fp);
    }

    #[test]
    fn loopback_flush_epoch_produces_matching_key() {
        // ideal link, 10 sessions x 2 trains: ~24000 sifted bits, 5 blocks,
        // all in the flushed epoch
        let cfg = small_cfg(10, 2, 7);
        let run = run_loopback(&cfg, false).unwrap();
        assert!(run.alice.alarm.is_none() && run.bob.alarm.is_none());
        assert_eq!(run.alice.final_key, run.bob.final_key);
        assert!(!run.alice.final_key.is_empty(), "flush must close the short epoch");
        assert_eq!(run.alice.epochs.len(), 1);
        assert_eq!(run.alice.epochs, run.bob.epochs);
        assert_eq!(run.alice.series, run.bob.series);
        let e = &run.alice.epochs[0];
        assert_eq!(e.qber, 0.0, "no error source on an ideal link");
        assert_eq!(
            run.alice.final_key.len(),
            e.key_yield.length().unwrap(),
            "key is exactly the epoch yield"
        );
        run.alice.report.check_invariants().unwrap();
        run.bob.report.check_invariants().unwrap();
        assert_eq!(run.alice.report, run.bob.report);
        assert!(run.alice.verified_bits <= run.alice.sifted_bits);
    }

    #[test]
    fn loopback_runs_are_deterministic() {
        let cfg = small_cfg(6, 2, 13);
        let one = run_loopback(&cfg, false).unwrap();
        let two = run_loopback(&cfg, false).unwrap();
        assert_eq!(one.alice.final_key, two.alice.final_key);
        assert_eq!(one.alice.epochs, two.alice.epochs);
        assert_eq!(one.bob.series, two.bob.series);
        assert_eq!(one.alice.report, two.alice.report);
    }

    #[test]
    fn heavy_injection_raises_discard_run_alarm_on_both_ends() {
        // 12% flips swamp every code; sixteen straight discards then alarm
        let mut cfg = small_cfg(1, 60, 17);
        cfg.inject_error_rate = 0.12;
        let run = run_loopback(&cfg, false).unwrap();
        let (ak, aq) = run.alice.alarm.expect("alice must alarm");
        let (bk, bq) = run.bob.alarm.expect("bob must alarm");
        assert_eq!(ak, AlarmKind::DiscardRun);
        assert_eq!(bk, AlarmKind::DiscardRun);
        assert_eq!(aq, bq, "estimate crosses the wire unchanged");
        let est = aq.expect("receiver computed an estimate");
        assert!((est - 0.12).abs() < 0.04, "syndrome estimate {} far from planted 0.12", est);
        assert!(run.alice.final_key.is_empty() && run.bob.final_key.is_empty());
        assert!(run.alice.epochs.is_empty());
        assert!(run.alice.report.alarm_flag);
    }

    #[test]
    fn tampered_digest_raises_mismatch_alarm() {
        struct TamperDigest<C: PublicChannel>(C);
        impl<C: PublicChannel> PublicChannel for TamperDigest<C> {
            fn send(&mut self, frame: &Frame) -> Result<(), NetError> {
                if let Ok(Message::FinalDigest { digest: Some(_), .. }) = Message::from_frame(frame)
                {
                    let mut f = frame.clone();
                    let last = f.payload.len() - 1;
                    f.payload[last] ^= 0x40;
                    return self.0.send(&f);
                }
                self.0.send(frame)
            }
            fn recv(&mut self) -> Result<Frame, NetError> {
                self.0.recv()
            }
            fn set_timeout(&mut self, t: Option<Duration>) {
                self.0.set_timeout(t)
            }
        }

        let cfg = small_cfg(4, 2, 19);
        let (ca, mut cb) = MemChannel::pair();
        let run = std::thread::scope(|s| {
            let alice = s.spawn(|| {
                let mut chan = TamperDigest(ca);
                run_alice(&cfg, &mut chan)
            });
            let bob = s.spawn(|| run_bob(&cfg, &mut cb));
            (alice.join().unwrap().unwrap(), bob.join().unwrap().unwrap())
        });
        assert_eq!(run.0.alarm, Some((AlarmKind::DigestMismatch, None)));
        assert_eq!(run.1.alarm, Some((AlarmKind::DigestMismatch, None)));
        assert!(run.0.final_key.is_empty() && run.1.final_key.is_empty());
    }

    #[test]
    fn fingerprint_mismatch_refuses_to_run() {
        let cfg_a = small_cfg(2, 2, 23);
        let mut cfg_b = cfg_a.clone();
        cfg_b.master_seed = RngSeed(24);
        let (mut ca, mut cb) = MemChannel::pair();
        let (a, b) = std::thread::scope(|s| {
            let alice = s.spawn(|| run_alice(&cfg_a, &mut ca));
            let bob = s.spawn(|| run_bob(&cfg_b, &mut cb));
            (alice.join().unwrap(), bob.join().unwrap())
        });
        for r in [a, b] {
            match r {
                Err(ProtocolError::Violation(msg)) => {
                    assert!(msg.contains("fingerprint"), "unhelpful diagnostic: {}", msg)
                }
                Err(ProtocolError::PeerAbort(_)) => {}
                other => panic!("run must refuse, got {:?}", other),
            }
        }
    }

    #[test]
    fn alice_raises_epoch_qber_alarm_when_flip_counts_explode() {
        // scripted receiver confirms every block but reports absurd flip
        // counts, pushing the closing error rate over the abort threshold
        let cfg = small_cfg(1, 60, 29);
        let (mut ca, mut cb) = MemChannel::pair();
        std::thread::scope(|s| {
            let alice = s.spawn(|| run_alice(&cfg, &mut ca));
            let cfg = cfg.clone();
            let script = s.spawn(move || {
                let fp = config_fingerprint(&cfg);
                let hello =
                    Message::Hello { role: Role::Bob, sessions_total: cfg.sessions, fingerprint: fp };
                cb.send(&hello.to_frame(0).unwrap()).unwrap();
                let got = cb.recv().unwrap();
                assert_eq!(got.msg_type, MsgType::Hello);
                let scfg = cfg.session_config(0);
                crate::protocol::bob_session(&scfg, 0, &mut cb).unwrap();
                for i in 0..EPOCH_BLOCKS as u64 {
                    assert_eq!(cb.recv().unwrap().msg_type, MsgType::Syndrome);
                    assert_eq!(cb.recv().unwrap().msg_type, MsgType::VerifyTag);
                    let verdict = BlockVerdict::Verified { flips: 2048 };
                    cb.send(
                        &(Message::BlockDisposition { index: i, verdict }).to_frame(1).unwrap(),
                    )
                    .unwrap();
                }
                match Message::from_frame(&cb.recv().unwrap()).unwrap() {
                    Message::Alarm { kind, qber } => {
                        assert_eq!(kind, AlarmKind::EpochQber);
                        assert!((qber.unwrap() - 0.5).abs() < 1e-6);
                    }
                    other => panic!("expected the error-rate alarm, got {:?}", other),
                }
            });
            let artifacts = alice.join().unwrap().unwrap();
            script.join().unwrap();
            assert_eq!(artifacts.alarm.map(|(k, _)| k), Some(AlarmKind::EpochQber));
            assert!(artifacts.final_key.is_empty());
        });
    }

    #[test]
    fn capture_audit_matches_ledger_accounting() {
        let cfg = small_cfg(10, 2, 31);
        let run = run_loopback(&cfg, true).unwrap();
        let audit = audit_capture(&run.capture.unwrap()).unwrap();
        assert_eq!(audit.aborts, 0);
        assert!(audit.alarms.is_empty());
        let (leak_ec, leak_verify) = run.alice.leak_totals();
        assert_eq!(
            audit.key_derived_disclosed_bits,
            leak_ec + leak_verify,
            "wire disclosure must equal the ledger charge"
        );
        assert_eq!(audit.keyed_epochs.len(), run.alice.epochs.len());
        assert_eq!(audit.offers, run.alice.verified_bits as usize / BLOCK_BITS);
        assert!(audit.discarded_disclosed_bits == 0, "ideal link discards nothing");
    }
}
