//! Per-party session state machine.
//!
//! ```text
//! Alice                              Bob
//!   HELLO  ─────────────────────────▶
//!          ◀───────────────────────── HELLO
//!   SESSION_PARAMS ─────────────────▶
//!                      (quantum phase: Bob simulates or replays tags,
//!                       recovers the clock and gates)
//!          ◀───────────────────────── DETECTION_REPORT
//!   MATCH_MASK ─────────────────────▶
//!          ◀───────────────────────── SAMPLE_INDICES, SAMPLE_BITS
//!   QBER_RESULT ────────────────────▶
//!          ◀───────────────────────── DONE     (or ABORT from Alice)
//!   DONE ───────────────────────────▶
//! ```
//!
//! Either side may send ABORT at any point; the receiver stops and records
//! the peer's reason.

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::sifting::{
    alice_match, bits_at, bob_detection_report, bob_sift, count_errors, sample_positions, validate_report, SiftError,
    SiftedKey,
};
use super::transport::{Transport, TransportError};
use super::wire::{AbortNotice, AbortReason, Hello, Message, QberReport, Role, SessionParams, SessionPhase};
use crate::analysis::gate_acceptance;
use crate::channel::loss_breakdown;
use crate::receiver::TimeTag;
use crate::report::{BobDiagnostics, LossAccounting, Outcome, SessionReport};
use crate::rng::{stream_rng, streams};
use crate::scenario::Scenario;
use crate::simulate::{bob_process, coarse_epoch_ps, simulate_quantum_phase, BobView, SimError};
use crate::source::PulseTrain;
use crate::sync::ClockModel;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session failed during {phase:?}: {source}")]
    Transport { phase: SessionPhase, source: TransportError },
    #[error("quantum phase failed: {0}")]
    Simulation(#[from] SimError),
    #[error("invalid scenario: {0}")]
    Scenario(String),
}

/// Where Bob's tags come from.
#[derive(Clone, Debug, Default)]
pub enum QuantumInput {
    /// Bob runs the physics himself from the shared scenario and seed.
    #[default]
    CoSimulate,
    /// Tags captured earlier, e.g. from a dump written by `run`.
    Replay(Vec<TimeTag>),
}

#[derive(Clone, Debug)]
pub struct SessionResult {
    pub report: SessionReport,
    /// Sifted key before any disclosure.
    pub key: SiftedKey,
    /// Bob's tag stream (empty for Alice).
    pub tags: Vec<TimeTag>,
    pub clock: Option<ClockModel>,
}

enum Stop {
    Abort { reason: AbortReason, raised_by: Role, detail: String },
    Fail(SessionError),
}

struct Party<'a, T: Transport> {
    role: Role,
    transport: &'a mut T,
    scenario: &'a Scenario,
    phase: SessionPhase,
    report: SessionReport,
    key: SiftedKey,
    tags: Vec<TimeTag>,
    clock: Option<ClockModel>,
}

fn peer(role: Role) -> Role {
    match role {
        Role::Alice => Role::Bob,
        Role::Bob => Role::Alice,
    }
}

pub fn key_digest(key: &SiftedKey) -> String {
    let mut h = Sha256::new();
    for chunk in key.bits.chunks(8) {
        h.update([chunk.iter().enumerate().fold(0u8, |b, (i, &x)| b | (x as u8) << i)]);
    }
    h.update((key.bits.len() as u64).to_le_bytes());
    hex::encode(h.finalize())
}

pub fn loss_accounting(scenario: &Scenario) -> LossAccounting {
    let link = loss_breakdown(&scenario.channel, scenario.source.wavelength_nm).unwrap_or_default();
    let gate = gate_acceptance(scenario);
    LossAccounting {
        link,
        receiver_db: scenario.receiver.efficiency_db,
        gate_acceptance: gate,
        total_db: link.total_db + scenario.receiver.efficiency_db - 10.0 * gate.log10(),
    }
}

impl<'a, T: Transport> Party<'a, T> {
    fn new(role: Role, transport: &'a mut T, scenario: &'a Scenario) -> Self {
        let report = SessionReport {
            role,
            scenario: scenario.metadata.name.clone(),
            scenario_hash: scenario.hash_hex(),
            session_id: scenario.protocol.session_id,
            n_pulses: scenario.n_pulses(),
            duration_s: scenario.n_pulses() as f64 / scenario.source.rep_rate_hz,
            outcome: Outcome::Completed,
            reported_pulses: 0,
            sifted_bits: 0,
            disclosed_bits: 0,
            remaining_key_bits: 0,
            sifted_key_rate_bps: 0.0,
            sifted_key_sha256: None,
            qber: None,
            loss: loss_accounting(scenario),
            bob: (role == Role::Bob).then(|| BobDiagnostics {
                clock: None,
                coarse_epoch_ps: coarse_epoch_ps(scenario),
                gate: None,
                physics: None,
            }),
        };
        Self { role, transport, scenario, phase: SessionPhase::Handshake, report, key: SiftedKey::default(), tags: vec![], clock: None }
    }

    fn fail(&self, source: TransportError) -> Stop {
        Stop::Fail(SessionError::Transport { phase: self.phase, source })
    }

    fn send(&mut self, msg: &Message) -> Result<(), Stop> {
        self.transport.send(msg).map_err(|e| self.fail(e))
    }

    /// Raises an abort: notifies the peer (best effort) and stops.
    fn abort(&mut self, reason: AbortReason, detail: impl Into<String>) -> Stop {
        let detail = detail.into();
        let _ = self.transport.send(&Message::Abort(AbortNotice { reason, phase: self.phase, detail: detail.clone() }));
        Stop::Abort { reason, raised_by: self.role, detail }
    }

    fn recv(&mut self) -> Result<Message, Stop> {
        match self.transport.recv() {
            Ok(Message::Abort(n)) => {
                Err(Stop::Abort { reason: n.reason, raised_by: peer(self.role), detail: n.detail })
            }
            Ok(m) => Ok(m),
            Err(TransportError::Frame(e)) => Err(self.abort(AbortReason::ProtocolViolation, e.to_string())),
            Err(e) => Err(self.fail(e)),
        }
    }

    fn unexpected(&mut self, got: &Message, wanted: &str) -> Stop {
        let detail = format!("expected {wanted}, got {:?}", got.message_type());
        self.abort(AbortReason::ProtocolViolation, detail)
    }

    fn violation(&mut self, e: SiftError) -> Stop {
        self.abort(AbortReason::ProtocolViolation, e.to_string())
    }

    fn handshake(&mut self) -> Result<(), Stop> {
        let mine = Hello { role: self.role, session_id: self.scenario.protocol.session_id, scenario_hash: self.scenario.hash() };
        self.send(&Message::Hello(mine.clone()))?;
        let theirs = match self.recv()? {
            Message::Hello(h) => h,
            other => return Err(self.unexpected(&other, "HELLO")),
        };
        if theirs.role != peer(self.role) {
            return Err(self.abort(AbortReason::ProtocolViolation, format!("peer claims role {:?}", theirs.role)));
        }
        if theirs.session_id != mine.session_id {
            let d = format!("session_id {} != {}", theirs.session_id, mine.session_id);
            return Err(self.abort(AbortReason::ParameterMismatch, d));
        }
        if theirs.scenario_hash != mine.scenario_hash {
            let d = format!("scenario hash {} != {}", hex::encode(theirs.scenario_hash), hex::encode(mine.scenario_hash));
            return Err(self.abort(AbortReason::ParameterMismatch, d));
        }
        Ok(())
    }

    fn record_key(&mut self, key: SiftedKey) {
        self.report.sifted_bits = key.len() as u64;
        self.report.sifted_key_rate_bps = key.len() as f64 / self.report.duration_s;
        self.report.sifted_key_sha256 = Some(key_digest(&key));
        self.key = key;
    }

    fn record_qber(&mut self, q: QberReport, positions: &[u64]) {
        self.report.qber = Some(q);
        self.report.disclosed_bits = positions.len() as u64;
        let mut remaining = self.key.clone();
        remaining.remove_positions(positions);
        self.report.remaining_key_bits = remaining.len() as u64;
    }

    fn run_alice(&mut self) -> Result<(), Stop> {
        self.handshake()?;
        self.phase = SessionPhase::Params;
        let params = self.scenario.session_params();
        self.send(&Message::SessionParams(params))?;

        self.phase = SessionPhase::QuantumPhase;
        let train = PulseTrain::new(self.scenario.source.clone(), self.scenario.n_pulses())
            .map_err(|e| Stop::Fail(SessionError::Simulation(e.into())))?;

        self.phase = SessionPhase::DetectionReport;
        let report = match self.recv()? {
            Message::DetectionReport(r) => r,
            other => return Err(self.unexpected(&other, "DETECTION_REPORT")),
        };
        self.report.reported_pulses = report.entries.len() as u64;
        let (mask, key) = alice_match(&train, &report).map_err(|e| self.violation(e))?;
        self.record_key(key);

        self.phase = SessionPhase::MatchMask;
        self.send(&Message::MatchMask(mask))?;

        self.phase = SessionPhase::QberExchange;
        let positions = match self.recv()? {
            Message::SampleIndices(p) => p,
            other => return Err(self.unexpected(&other, "SAMPLE_INDICES")),
        };
        let bits = match self.recv()? {
            Message::SampleBits(b) => b,
            other => return Err(self.unexpected(&other, "SAMPLE_BITS")),
        };
        let threshold = self.scenario.protocol.qber_abort_threshold;
        let q = count_errors(&self.key, &positions, &bits, threshold).map_err(|e| self.violation(e))?;
        self.record_qber(q, &positions);
        self.send(&Message::QberResult(q))?;

        self.phase = SessionPhase::Finish;
        if q.abort {
            let detail = format!("qber {:.4} > threshold {:.4}", q.qber, q.threshold);
            return Err(self.abort(AbortReason::QberAboveThreshold, detail));
        }
        match self.recv()? {
            Message::Done { sifted_len } if sifted_len == self.report.sifted_bits => {}
            Message::Done { sifted_len } => {
                let d = format!("peer sifted {sifted_len} bits, local {}", self.report.sifted_bits);
                return Err(self.abort(AbortReason::ProtocolViolation, d));
            }
            other => return Err(self.unexpected(&other, "DONE")),
        }
        self.send(&Message::Done { sifted_len: self.report.sifted_bits })
    }

    fn quantum_phase(&mut self, input: QuantumInput) -> Result<BobView, Stop> {
        let tags = match input {
            QuantumInput::CoSimulate => {
                let record = simulate_quantum_phase(self.scenario).map_err(|e| Stop::Fail(e.into()))?;
                self.diag().physics = Some(record.stats);
                record.tags()
            }
            QuantumInput::Replay(tags) => tags,
        };
        let view = bob_process(&tags, self.scenario);
        self.tags = tags;
        let view = view.map_err(|e| self.abort(AbortReason::SyncFailure, e.to_string()))?;
        self.clock = Some(view.clock);
        let diag = self.diag();
        diag.clock = Some(view.clock);
        diag.gate = Some(view.stats);
        Ok(view)
    }

    fn diag(&mut self) -> &mut BobDiagnostics {
        self.report.bob.as_mut().expect("bob diagnostics")
    }

    fn run_bob(&mut self, input: QuantumInput) -> Result<(), Stop> {
        self.handshake()?;
        self.phase = SessionPhase::Params;
        let params = match self.recv()? {
            Message::SessionParams(p) => p,
            other => return Err(self.unexpected(&other, "SESSION_PARAMS")),
        };
        let mine: SessionParams = self.scenario.session_params();
        if params != mine {
            return Err(self.abort(AbortReason::ParameterMismatch, format!("params {params:?} != {mine:?}")));
        }

        self.phase = SessionPhase::QuantumPhase;
        let view = self.quantum_phase(input)?;

        self.phase = SessionPhase::DetectionReport;
        let (report, detectors) = bob_detection_report(&view.clicks);
        drop(view);
        self.report.reported_pulses = report.entries.len() as u64;
        validate_report(&report, self.scenario.n_pulses()).expect("Bob's own report is well formed");
        self.send(&Message::DetectionReport(report.clone()))?;

        self.phase = SessionPhase::MatchMask;
        let mask = match self.recv()? {
            Message::MatchMask(m) => m,
            other => return Err(self.unexpected(&other, "MATCH_MASK")),
        };
        let key = bob_sift(&report, &detectors, &mask).map_err(|e| self.violation(e))?;
        self.record_key(key);

        self.phase = SessionPhase::QberExchange;
        if self.key.is_empty() {
            return Err(self.abort(AbortReason::Inconclusive, "sifted key is empty"));
        }
        let mut rng = stream_rng(self.scenario.protocol.rng_seed, streams::QBER_SAMPLE, 0);
        let positions = sample_positions(self.key.len(), self.scenario.protocol.sample_fraction, &mut rng);
        let bits = bits_at(&self.key, &positions);
        self.send(&Message::SampleIndices(positions.clone()))?;
        self.send(&Message::SampleBits(bits))?;
        let q = match self.recv()? {
            Message::QberResult(q) => q,
            other => return Err(self.unexpected(&other, "QBER_RESULT")),
        };
        let threshold = self.scenario.protocol.qber_abort_threshold;
        if q.disclosed_count != positions.len() as u64 || q.threshold != threshold || q.abort != (q.qber > threshold) {
            return Err(self.abort(AbortReason::ProtocolViolation, format!("inconsistent QBER_RESULT {q:?}")));
        }
        self.record_qber(q, &positions);

        self.phase = SessionPhase::Finish;
        if q.abort {
            // Alice raises the abort; wait for it.
            let other = self.recv()?;
            return Err(self.unexpected(&other, "ABORT"));
        }
        self.send(&Message::Done { sifted_len: self.report.sifted_bits })?;
        match self.recv()? {
            Message::Done { .. } => Ok(()),
            other => Err(self.unexpected(&other, "DONE")),
        }
    }

    fn finish(mut self, result: Result<(), Stop>) -> Result<SessionResult, SessionError> {
        match result {
            Ok(()) => {}
            Err(Stop::Fail(e)) => return Err(e),
            Err(Stop::Abort { reason, raised_by, detail }) => {
                self.report.outcome = Outcome::Aborted { reason, phase: self.phase, raised_by, detail };
            }
        }
        Ok(SessionResult { report: self.report, key: self.key, tags: self.tags, clock: self.clock })
    }
}

pub fn run_session<T: Transport>(
    role: Role,
    transport: &mut T,
    scenario: &Scenario,
    input: QuantumInput,
) -> Result<SessionResult, SessionError> {
    scenario.validate().map_err(|e| SessionError::Scenario(e.to_string()))?;
    let mut party = Party::new(role, transport, scenario);
    let result = match role {
        Role::Alice => party.run_alice(),
        Role::Bob => party.run_bob(input),
    };
    party.finish(result)
}

/// Both parties in one process over the in-memory pipe.
pub fn run_in_process(
    alice_scenario: &Scenario,
    bob_scenario: &Scenario,
    input: QuantumInput,
) -> (Result<SessionResult, SessionError>, Result<SessionResult, SessionError>) {
    let (mut a, mut b) = super::transport::memory_pair();
    std::thread::scope(|s| {
        let alice = s.spawn(move || run_session(Role::Alice, &mut a, alice_scenario, QuantumInput::CoSimulate));
        let bob = run_session(Role::Bob, &mut b, bob_scenario, input);
        drop(b);
        (alice.join().expect("alice thread"), bob)
    })
}
