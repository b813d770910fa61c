//! End-to-end quantum phase: source → channel → receiver, then Bob's
//! clock recovery and gating.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{Channel, ChannelError, PhotonArrival};
use crate::receiver::{
    apply_dead_time, classify_clicks, sort_events, DetectionEvent, PulseClick, Receiver, ReceiverError, TimeTag,
};
use crate::rng::{stream_rng, streams};
use crate::scenario::Scenario;
use crate::source::{PulseTrain, SourceError};
use crate::sync::{assign_and_gate, recover_clock_with, Assignment, ClockModel, SyncError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Receiver(#[from] ReceiverError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhysicsStats {
    pub nonvacuum_pulses: u64,
    pub photons_emitted: u64,
    pub photons_arrived: u64,
    pub signal_tags: u64,
    pub background_tags: u64,
    pub dead_time_dropped: u64,
}

/// Bob's tag stream with the ground-truth origin of every tag.
#[derive(Clone, Debug)]
pub struct QuantumRecord {
    pub events: Vec<DetectionEvent>,
    pub n_pulses: u64,
    pub stats: PhysicsStats,
}

impl QuantumRecord {
    pub fn tags(&self) -> Vec<TimeTag> {
        self.events.iter().map(|e| e.tag).collect()
    }
}

#[derive(Default)]
struct ShardOutput {
    events: Vec<DetectionEvent>,
    nonvacuum: u64,
    photons: u64,
    arrived: u64,
}

fn run_shard(train: &PulseTrain, channel: &Channel, receiver: &Receiver, scenario: &Scenario, shard: u64) -> ShardOutput {
    let pulses: Vec<_> = train.shard_emissions(shard).collect();
    let photons = pulses.iter().map(|p| p.photon_count as u64).sum();
    let mut arrivals: Vec<PhotonArrival> = Vec::new();
    let mut ch_rng = stream_rng(scenario.channel.rng_seed, streams::CHANNEL, shard);
    channel.transmit_into(&pulses, &scenario.sync.true_clock, &mut ch_rng, &mut arrivals);
    let mut rx_rng = stream_rng(scenario.receiver.rng_seed, streams::RECEIVER_SIGNAL, shard);
    let mut events = Vec::new();
    receiver.detect_signal_into(&arrivals, &mut rx_rng, &mut events);
    ShardOutput { events, nonvacuum: pulses.len() as u64, photons, arrived: arrivals.len() as u64 }
}

/// Tagger-time window covering the whole session.
pub fn session_window_ps(scenario: &Scenario) -> (i64, i64) {
    let clock = &scenario.sync.true_clock;
    let delay = scenario.channel.propagation_delay_ps as f64;
    let end_alice = scenario.n_pulses() as f64 * scenario.source.period_ps() + delay;
    (clock.bob_time_ps(delay).min(0), clock.bob_time_ps(end_alice))
}

pub fn simulate_quantum_phase(scenario: &Scenario) -> Result<QuantumRecord, SimError> {
    let n_pulses = scenario.n_pulses();
    let train = PulseTrain::new(scenario.source.clone(), n_pulses)?;
    let channel = Channel::new(scenario.channel.clone(), scenario.source.wavelength_nm)?;
    let receiver = Receiver::new(scenario.receiver.clone())?;

    let shards: Vec<ShardOutput> = (0..train.shard_count())
        .into_par_iter()
        .map(|s| run_shard(&train, &channel, &receiver, scenario, s))
        .collect();

    let mut stats = PhysicsStats::default();
    let mut events = Vec::with_capacity(shards.iter().map(|s| s.events.len()).sum());
    for s in shards {
        stats.nonvacuum_pulses += s.nonvacuum;
        stats.photons_emitted += s.photons;
        stats.photons_arrived += s.arrived;
        events.extend(s.events);
    }
    let (start, end) = session_window_ps(scenario);
    let mut bg_rng = stream_rng(scenario.receiver.rng_seed, streams::RECEIVER_BACKGROUND, 0);
    receiver.background_into(start, end, &mut bg_rng, &mut events);
    sort_events(&mut events);
    let before = events.len();
    apply_dead_time(&mut events, scenario.receiver.dead_time_ps());
    stats.dead_time_dropped = (before - events.len()) as u64;
    stats.signal_tags = events.iter().filter(|e| e.origin.is_some()).count() as u64;
    stats.background_tags = events.len() as u64 - stats.signal_tags;
    Ok(QuantumRecord { events, n_pulses, stats })
}

/// Tagger time of pulse 0's arrival, exactly.
pub fn true_epoch_ps(scenario: &Scenario) -> f64 {
    let c = &scenario.sync.true_clock;
    scenario.channel.propagation_delay_ps as f64 * (1.0 + c.drift_ppm * 1e-6) + c.offset_ps
}

/// The beacon's coarse epoch: the true epoch plus a uniform error.
pub fn coarse_epoch_ps(scenario: &Scenario) -> f64 {
    let e = scenario.sync.beacon_epoch_error_ps;
    let mut rng = stream_rng(scenario.sync.rng_seed, streams::SYNC_BEACON, 0);
    let err = if e > 0.0 { rng.random_range(-e..=e) } else { 0.0 };
    true_epoch_ps(scenario) + err
}

pub fn ground_truth_clock(scenario: &Scenario) -> ClockModel {
    ClockModel::exact(scenario.source.period_ps(), true_epoch_ps(scenario), scenario.sync.true_clock.drift_ppm)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateStats {
    pub tags: u64,
    pub accepted: u64,
    pub rejected: u64,
    /// Accepted by the gate but mapped outside the session's pulse range.
    pub out_of_range: u64,
    pub clicked_pulses: u64,
    pub multi_click_pulses: u64,
}

/// Bob's view after sync: the recovered clock and his per-pulse clicks.
#[derive(Clone, Debug)]
pub struct BobView {
    pub clock: ClockModel,
    pub assignments: Vec<Assignment>,
    pub clicks: Vec<PulseClick>,
    pub stats: GateStats,
}

pub fn bob_process(tags: &[TimeTag], scenario: &Scenario) -> Result<BobView, SyncError> {
    let period = scenario.source.period_ps();
    let clock = recover_clock_with(tags, period, &scenario.sync.recovery_options())?.anchor(coarse_epoch_ps(scenario));
    let gated = assign_and_gate(tags, &clock, &scenario.sync.gate());
    let n = scenario.n_pulses();
    let accepted = gated.assignments.len() as u64;
    let assignments: Vec<Assignment> = gated.assignments.into_iter().filter(|a| a.pulse_index < n).collect();
    let mut rng = stream_rng(scenario.receiver.rng_seed, streams::CLICK_POLICY, 0);
    let clicks = classify_clicks(&assignments, scenario.receiver.double_click_policy, &mut rng);
    let stats = GateStats {
        tags: tags.len() as u64,
        accepted,
        rejected: gated.rejected as u64,
        out_of_range: accepted - assignments.len() as u64,
        clicked_pulses: clicks.len() as u64,
        multi_click_pulses: clicks.iter().filter(|c| c.detectors_fired > 1).count() as u64,
    };
    Ok(BobView { clock, assignments, clicks, stats })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentAccuracy {
    pub signal_accepted: u64,
    pub correct: u64,
}

impl AssignmentAccuracy {
    pub fn fraction(&self) -> f64 {
        if self.signal_accepted == 0 {
            0.0
        } else {
            self.correct as f64 / self.signal_accepted as f64
        }
    }
}

/// Compares the pulse index the recovered clock gives each accepted signal
/// tag with the pulse that actually produced it.
pub fn assignment_accuracy(events: &[DetectionEvent], clock: &ClockModel, scenario: &Scenario) -> AssignmentAccuracy {
    let gate = scenario.sync.gate();
    let mut acc = AssignmentAccuracy::default();
    for e in events {
        let Some(origin) = e.origin else { continue };
        if let Some(idx) = crate::sync::gate_tag(clock, &gate, &e.tag) {
            acc.signal_accepted += 1;
            acc.correct += (idx == origin) as u64;
        }
    }
    acc
}
