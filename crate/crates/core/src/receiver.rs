//! Passive four-detector BB84 analyzer with silicon APDs and a time tagger.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{db_to_transmittance, PhotonArrival};
use crate::source::{Basis, Polarization, FWHM_PER_SIGMA};
use crate::sync::Assignment;

/// APDs are labeled by the state they detect.
pub type Detector = Polarization;

#[derive(Debug, Error, PartialEq)]
pub enum ReceiverError {
    #[error("invalid receiver config: {0}")]
    Config(String),
    #[error("arrivals must be sorted by time (violated at position {position})")]
    UnsortedArrivals { position: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoubleClickPolicy {
    #[default]
    RandomBit,
    Discard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverConfig {
    /// Lumped spectral filter, fiber coupling and APD efficiency, as a loss.
    pub efficiency_db: f64,
    pub misalignment_deg: f64,
    /// Background light and dark counts together.
    pub background_rate_cps_per_apd: f64,
    pub jitter_fwhm_ps: f64,
    pub dead_time_ns: f64,
    pub tag_resolution_ps: i64,
    #[serde(default)]
    pub double_click_policy: DoubleClickPolicy,
    pub rng_seed: u64,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self {
            efficiency_db: 0.0,
            misalignment_deg: 0.0,
            background_rate_cps_per_apd: 0.0,
            jitter_fwhm_ps: 350.0,
            dead_time_ns: 50.0,
            tag_resolution_ps: 1,
            double_click_policy: DoubleClickPolicy::RandomBit,
            rng_seed: 3,
        }
    }
}

impl ReceiverConfig {
    pub fn validate(&self) -> Result<(), ReceiverError> {
        let bad = |m: &str| Err(ReceiverError::Config(m.to_string()));
        if !(self.efficiency_db >= 0.0) {
            return bad("efficiency_db must be >= 0");
        }
        if !(self.background_rate_cps_per_apd >= 0.0 && self.background_rate_cps_per_apd.is_finite()) {
            return bad("background_rate_cps_per_apd must be >= 0");
        }
        if self.tag_resolution_ps < 1 {
            return bad("tag_resolution_ps must be >= 1");
        }
        if !(self.jitter_fwhm_ps >= 0.0) || !(self.dead_time_ns >= 0.0) {
            return bad("jitter and dead time must be >= 0");
        }
        if !self.misalignment_deg.is_finite() {
            return bad("misalignment_deg must be finite");
        }
        Ok(())
    }

    pub fn jitter_sigma_ps(&self) -> f64 {
        self.jitter_fwhm_ps / FWHM_PER_SIGMA
    }

    pub fn dead_time_ps(&self) -> i64 {
        (self.dead_time_ns * 1e3).round() as i64
    }

    pub fn efficiency(&self) -> f64 {
        db_to_transmittance(self.efficiency_db)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeTag {
    pub detector: Detector,
    pub time_ps: i64,
}

/// A tag plus the pulse that caused it (`None` for background).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DetectionEvent {
    pub tag: TimeTag,
    pub origin: Option<u64>,
}

impl DetectionEvent {
    fn sort_key(&self) -> (i64, usize, u64) {
        (self.tag.time_ps, self.tag.detector.index(), self.origin.unwrap_or(u64::MAX))
    }
}

/// Projects a photon polarized at `angle_deg` onto the analyzer of `basis`
/// rotated by `misalignment_deg`; Malus' law picks the output port.
pub fn project<R: Rng + ?Sized>(angle_deg: f64, basis: Basis, misalignment_deg: f64, rng: &mut R) -> Detector {
    let (first, second, axis) = match basis {
        Basis::Rectilinear => (Polarization::H, Polarization::V, 0.0),
        Basis::Diagonal => (Polarization::D, Polarization::A, 45.0),
    };
    let delta = (angle_deg - axis - misalignment_deg).to_radians();
    let p_first = delta.cos().powi(2);
    if rng.random::<f64>() < p_first {
        first
    } else {
        second
    }
}

fn quantize(t: f64, resolution: i64) -> i64 {
    if resolution == 1 {
        t.round() as i64
    } else {
        (t / resolution as f64).round() as i64 * resolution
    }
}

#[derive(Clone, Debug)]
pub struct Receiver {
    config: ReceiverConfig,
    efficiency: f64,
    jitter_sigma: f64,
}

impl Receiver {
    pub fn new(config: ReceiverConfig) -> Result<Self, ReceiverError> {
        config.validate()?;
        Ok(Self { efficiency: config.efficiency(), jitter_sigma: config.jitter_sigma_ps(), config })
    }

    pub fn config(&self) -> &ReceiverConfig {
        &self.config
    }

    /// Efficiency, passive basis split, projection, jitter and quantization.
    /// Dead time is not applied here.
    pub fn detect_signal_into<R: Rng + ?Sized>(&self, arrivals: &[PhotonArrival], rng: &mut R, out: &mut Vec<DetectionEvent>) {
        for a in arrivals {
            if rng.random::<f64>() >= self.efficiency {
                continue;
            }
            let basis = Basis::from_bit(rng.random::<bool>());
            let detector = project(a.polarization_angle_deg, basis, self.config.misalignment_deg, rng);
            let mut t = a.arrival_time_ps as f64;
            if self.jitter_sigma > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                t += z * self.jitter_sigma;
            }
            out.push(DetectionEvent {
                tag: TimeTag { detector, time_ps: quantize(t, self.config.tag_resolution_ps) },
                origin: Some(a.pulse_index),
            });
        }
    }

    /// Independent Poisson background on each APD over `[start_ps, end_ps)`.
    pub fn background_into<R: Rng + ?Sized>(&self, start_ps: i64, end_ps: i64, rng: &mut R, out: &mut Vec<DetectionEvent>) {
        let rate_per_ps = self.config.background_rate_cps_per_apd * 1e-12;
        if rate_per_ps <= 0.0 || end_ps <= start_ps {
            return;
        }
        let gap = Exp::new(rate_per_ps).expect("positive rate");
        for detector in Polarization::ALL {
            let mut t = start_ps as f64;
            loop {
                t += gap.sample(rng);
                if t >= end_ps as f64 {
                    break;
                }
                out.push(DetectionEvent {
                    tag: TimeTag { detector, time_ps: quantize(t, self.config.tag_resolution_ps) },
                    origin: None,
                });
            }
        }
    }
}

pub fn sort_events(events: &mut [DetectionEvent]) {
    events.sort_unstable_by_key(DetectionEvent::sort_key);
}

/// Non-paralyzable dead time per detector. `events` must be time-sorted.
pub fn apply_dead_time(events: &mut Vec<DetectionEvent>, dead_time_ps: i64) {
    if dead_time_ps <= 0 {
        return;
    }
    let mut last = [i64::MIN; 4];
    events.retain(|e| {
        let d = e.tag.detector.index();
        if last[d] != i64::MIN && e.tag.time_ps - last[d] < dead_time_ps {
            false
        } else {
            last[d] = e.tag.time_ps;
            true
        }
    });
}

fn check_sorted(arrivals: &[PhotonArrival]) -> Result<(), ReceiverError> {
    match arrivals.windows(2).position(|w| w[1].arrival_time_ps < w[0].arrival_time_ps) {
        Some(i) => Err(ReceiverError::UnsortedArrivals { position: i + 1 }),
        None => Ok(()),
    }
}

/// Full detection pass keeping ground-truth origins.
pub fn detect_events<R: Rng + ?Sized>(
    arrivals: &[PhotonArrival],
    config: &ReceiverConfig,
    session_duration_s: f64,
    rng: &mut R,
) -> Result<Vec<DetectionEvent>, ReceiverError> {
    check_sorted(arrivals)?;
    let receiver = Receiver::new(config.clone())?;
    let mut events = Vec::new();
    receiver.detect_signal_into(arrivals, rng, &mut events);
    receiver.background_into(0, (session_duration_s * 1e12).round() as i64, rng, &mut events);
    sort_events(&mut events);
    apply_dead_time(&mut events, config.dead_time_ps());
    Ok(events)
}

pub fn detect<R: Rng + ?Sized>(
    arrivals: &[PhotonArrival],
    config: &ReceiverConfig,
    session_duration_s: f64,
    rng: &mut R,
) -> Result<Vec<TimeTag>, ReceiverError> {
    Ok(detect_events(arrivals, config, session_duration_s, rng)?.into_iter().map(|e| e.tag).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClickOutcome {
    NoClick,
    Single(Detector),
    Multi,
}

/// Resolves the detectors that fired in one pulse slot.
pub fn classify_pulse<R: Rng + ?Sized>(detectors: &[Detector], policy: DoubleClickPolicy, rng: &mut R) -> ClickOutcome {
    let mut fired: Vec<Detector> = detectors.to_vec();
    fired.sort_unstable();
    fired.dedup();
    match (fired.len(), policy) {
        (0, _) => ClickOutcome::NoClick,
        (1, _) => ClickOutcome::Single(fired[0]),
        (_, DoubleClickPolicy::Discard) => ClickOutcome::Multi,
        (n, DoubleClickPolicy::RandomBit) => ClickOutcome::Single(fired[rng.random_range(0..n)]),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PulseClick {
    pub pulse_index: u64,
    pub outcome: ClickOutcome,
    /// Distinct detectors that fired in the slot.
    pub detectors_fired: u8,
}

/// Groups gated assignments by pulse and applies the double-click policy.
/// Pulses without tags are omitted; their outcome is `NoClick`.
pub fn classify_clicks<R: Rng + ?Sized>(assignments: &[Assignment], policy: DoubleClickPolicy, rng: &mut R) -> Vec<PulseClick> {
    let mut sorted: Vec<Assignment> = assignments.to_vec();
    sorted.sort_by_key(|a| (a.pulse_index, a.detector));
    let mut out = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let idx = sorted[i].pulse_index;
        let mut j = i;
        while j < sorted.len() && sorted[j].pulse_index == idx {
            j += 1;
        }
        let dets: Vec<Detector> = sorted[i..j].iter().map(|a| a.detector).collect();
        let outcome = classify_pulse(&dets, policy, rng);
        let mut distinct = dets.clone();
        distinct.dedup();
        out.push(PulseClick { pulse_index: idx, outcome, detectors_fired: distinct.len() as u8 });
        i = j;
    }
    out
}
