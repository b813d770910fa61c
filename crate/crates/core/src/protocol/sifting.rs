//! Basis reconciliation and QBER estimation.
//!
//! Bit convention: H→0, V→1, D→0, A→1.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::wire::{DetectionReport, MatchMask, QberReport, SampleFraction};
use crate::receiver::{ClickOutcome, Detector, PulseClick};
use crate::source::PulseTrain;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SiftError {
    #[error("reported pulse index {index} outside the session's {n_pulses} pulses")]
    IndexOutOfRange { index: u64, n_pulses: u64 },
    #[error("report indices not strictly increasing at position {position}")]
    UnsortedReport { position: usize },
    #[error("mask length {mask} differs from report length {report}")]
    LengthMismatch { mask: usize, report: usize },
    #[error("sample position {position} outside key of length {len}")]
    SampleOutOfRange { position: u64, len: usize },
    #[error("sample positions not strictly increasing")]
    UnsortedSample,
    #[error("sifted key is empty; nothing to estimate")]
    EmptyKey,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiftedKey {
    pub bits: Vec<bool>,
    pub pulse_indices: Vec<u64>,
}

impl SiftedKey {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Drops the positions in `sorted_positions`.
    pub fn remove_positions(&mut self, sorted_positions: &[u64]) {
        let mut drop = sorted_positions.iter().copied().peekable();
        let mask: Vec<bool> = (0..self.bits.len() as u64).map(|i| drop.next_if_eq(&i).is_none()).collect();
        let mut m = mask.iter();
        self.bits.retain(|_| *m.next().unwrap());
        let mut m = mask.iter();
        self.pulse_indices.retain(|_| *m.next().unwrap());
    }
}

pub fn detector_bit(d: Detector) -> bool {
    d.bit() == 1
}

/// Bob's side of the report: pulses with a single resolved click, sorted by
/// index, plus the detector behind each entry (kept private to Bob).
pub fn bob_detection_report(clicks: &[PulseClick]) -> (DetectionReport, Vec<Detector>) {
    let mut singles: Vec<(u64, Detector)> = clicks
        .iter()
        .filter_map(|c| match c.outcome {
            ClickOutcome::Single(d) => Some((c.pulse_index, d)),
            _ => None,
        })
        .collect();
    singles.sort_by_key(|&(i, _)| i);
    singles.dedup_by_key(|&mut (i, _)| i);
    let report = DetectionReport { entries: singles.iter().map(|&(i, d)| (i, d.basis())).collect() };
    (report, singles.into_iter().map(|(_, d)| d).collect())
}

pub fn validate_report(report: &DetectionReport, n_pulses: u64) -> Result<(), SiftError> {
    for (pos, &(index, _)) in report.entries.iter().enumerate() {
        if index >= n_pulses {
            return Err(SiftError::IndexOutOfRange { index, n_pulses });
        }
        if pos > 0 && report.entries[pos - 1].0 >= index {
            return Err(SiftError::UnsortedReport { position: pos });
        }
    }
    Ok(())
}

pub fn alice_match(train: &PulseTrain, report: &DetectionReport) -> Result<(MatchMask, SiftedKey), SiftError> {
    validate_report(report, train.len())?;
    let mut keep = Vec::with_capacity(report.entries.len());
    let mut key = SiftedKey::default();
    for &(index, basis) in &report.entries {
        let state = train.state(index);
        let matched = state.basis() == basis;
        keep.push(matched);
        if matched {
            key.bits.push(state.bit() == 1);
            key.pulse_indices.push(index);
        }
    }
    Ok((MatchMask { keep }, key))
}

pub fn bob_sift(report: &DetectionReport, detectors: &[Detector], mask: &MatchMask) -> Result<SiftedKey, SiftError> {
    if mask.keep.len() != report.entries.len() || detectors.len() != report.entries.len() {
        return Err(SiftError::LengthMismatch { mask: mask.keep.len(), report: report.entries.len() });
    }
    let mut key = SiftedKey::default();
    for ((&(index, _), &d), &k) in report.entries.iter().zip(detectors).zip(&mask.keep) {
        if k {
            key.bits.push(detector_bit(d));
            key.pulse_indices.push(index);
        }
    }
    Ok(key)
}

/// Positions Bob discloses, sorted ascending.
pub fn sample_positions<R: Rng + ?Sized>(len: usize, fraction: SampleFraction, rng: &mut R) -> Vec<u64> {
    match fraction {
        SampleFraction::All => (0..len as u64).collect(),
        SampleFraction::Fraction(f) => {
            let k = ((f * len as f64).ceil() as usize).min(len);
            let mut v: Vec<u64> = index::sample(rng, len, k).into_iter().map(|i| i as u64).collect();
            v.sort_unstable();
            v
        }
    }
}

pub fn validate_sample(positions: &[u64], len: usize) -> Result<(), SiftError> {
    if positions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SiftError::UnsortedSample);
    }
    match positions.last() {
        Some(&p) if p as usize >= len => Err(SiftError::SampleOutOfRange { position: p, len }),
        _ => Ok(()),
    }
}

pub fn bits_at(key: &SiftedKey, positions: &[u64]) -> Vec<bool> {
    positions.iter().map(|&p| key.bits[p as usize]).collect()
}

/// Alice's count of mismatches between her key and Bob's disclosed bits.
pub fn count_errors(alice: &SiftedKey, positions: &[u64], bob_bits: &[bool], threshold: f64) -> Result<QberReport, SiftError> {
    validate_sample(positions, alice.len())?;
    if positions.len() != bob_bits.len() {
        return Err(SiftError::LengthMismatch { mask: bob_bits.len(), report: positions.len() });
    }
    if positions.is_empty() {
        return Err(SiftError::EmptyKey);
    }
    let errors = positions.iter().zip(bob_bits).filter(|(&p, &b)| alice.bits[p as usize] != b).count();
    Ok(QberReport::new(positions.len() as u64, errors as u64, threshold))
}

/// Both sides of the estimate at once, for in-memory use. Disclosed
/// positions are removed from both keys; benchmark mode empties them.
pub fn estimate_qber<R: Rng + ?Sized>(
    alice: &mut SiftedKey,
    bob: &mut SiftedKey,
    fraction: SampleFraction,
    threshold: f64,
    rng: &mut R,
) -> Result<QberReport, SiftError> {
    if alice.len() != bob.len() {
        return Err(SiftError::LengthMismatch { mask: bob.len(), report: alice.len() });
    }
    if alice.is_empty() {
        return Err(SiftError::EmptyKey);
    }
    let positions = sample_positions(bob.len(), fraction, rng);
    let report = count_errors(alice, &positions, &bits_at(bob, &positions), threshold)?;
    alice.remove_positions(&positions);
    bob.remove_positions(&positions);
    Ok(report)
}
