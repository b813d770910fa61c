//! Weak-coherent-pulse source with four polarization states.
//!
//! The pulse train is addressable by index: basis, bit and the intra-pulse
//! emission offset of pulse `i` are pure functions of `(rng_seed, i)`.
//! Photon numbers are drawn sequentially per shard, skipping vacuum pulses
//! geometrically, so a 10⁹-pulse session only materializes the ~10% of
//! pulses that actually carry photons.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, streams};

/// Pulses per sampling shard. Fixed so that results never depend on how
/// shards are scheduled.
pub const SHARD_PULSES: u64 = 1 << 23;

/// FWHM of a Gaussian divided by its standard deviation, 2·sqrt(2·ln 2).
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

#[derive(Debug, Error, PartialEq)]
pub enum SourceError {
    #[error("pulse train must contain at least one pulse")]
    EmptyTrain,
    #[error("invalid source config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    Rectilinear,
    Diagonal,
}

impl Basis {
    pub fn from_bit(b: bool) -> Self {
        if b {
            Basis::Diagonal
        } else {
            Basis::Rectilinear
        }
    }

    pub fn as_bit(self) -> bool {
        matches!(self, Basis::Diagonal)
    }
}

/// One of the four BB84 states; doubles as the label of the APD that
/// detects it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarization {
    H,
    V,
    D,
    A,
}

impl Polarization {
    pub const ALL: [Polarization; 4] = [Polarization::H, Polarization::V, Polarization::D, Polarization::A];

    pub fn new(basis: Basis, bit: u8) -> Self {
        match (basis, bit & 1) {
            (Basis::Rectilinear, 0) => Polarization::H,
            (Basis::Rectilinear, _) => Polarization::V,
            (Basis::Diagonal, 0) => Polarization::D,
            (Basis::Diagonal, _) => Polarization::A,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }

    pub fn basis(self) -> Basis {
        match self {
            Polarization::H | Polarization::V => Basis::Rectilinear,
            Polarization::D | Polarization::A => Basis::Diagonal,
        }
    }

    /// Key bit carried by this state: H→0, V→1, D→0, A→1.
    pub fn bit(self) -> u8 {
        match self {
            Polarization::H | Polarization::D => 0,
            Polarization::V | Polarization::A => 1,
        }
    }

    pub fn angle_deg(self) -> f64 {
        polarization_angle(self.basis(), self.bit())
    }
}

/// Linear polarization angle of the encoded state in degrees.
pub fn polarization_angle(basis: Basis, bit: u8) -> f64 {
    match (basis, bit & 1) {
        (Basis::Rectilinear, 0) => 0.0,
        (Basis::Rectilinear, _) => 90.0,
        (Basis::Diagonal, 0) => 45.0,
        (Basis::Diagonal, _) => -45.0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub rep_rate_hz: f64,
    pub pulse_fwhm_ps: f64,
    pub wavelength_nm: f64,
    /// Mean photon number for H, V, D, A.
    pub mu_per_state: [f64; 4],
    pub rng_seed: u64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            rep_rate_hz: 100e6,
            pulse_fwhm_ps: 200.0,
            wavelength_nm: 852.0,
            mu_per_state: [0.1; 4],
            rng_seed: 1,
        }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<(), SourceError> {
        if !(self.rep_rate_hz > 0.0 && self.rep_rate_hz.is_finite()) {
            return Err(SourceError::Config("rep_rate_hz must be > 0".into()));
        }
        if !(self.wavelength_nm > 0.0) {
            return Err(SourceError::Config("wavelength_nm must be > 0".into()));
        }
        if self.mu_per_state.iter().any(|m| !(*m >= 0.0 && m.is_finite())) {
            return Err(SourceError::Config("mu_per_state entries must be >= 0".into()));
        }
        if !(self.pulse_fwhm_ps >= 0.0 && self.pulse_fwhm_ps < self.period_ps()) {
            return Err(SourceError::Config("pulse_fwhm_ps must lie in [0, period)".into()));
        }
        Ok(())
    }

    pub fn period_ps(&self) -> f64 {
        1e12 / self.rep_rate_hz
    }

    pub fn mu(&self, state: Polarization) -> f64 {
        self.mu_per_state[state.index()]
    }

    pub fn pulse_sigma_ps(&self) -> f64 {
        self.pulse_fwhm_ps / FWHM_PER_SIGMA
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PulseRecord {
    pub index: u64,
    pub basis: Basis,
    pub bit: u8,
    pub photon_count: u32,
    pub emit_time_ps: i64,
}

impl PulseRecord {
    pub fn state(&self) -> Polarization {
        Polarization::new(self.basis, self.bit)
    }
}

/// Draws a photon number from Poisson(`mu`) by sequential inversion.
pub fn sample_photon_count<R: Rng + ?Sized>(mu: f64, rng: &mut R) -> u32 {
    if mu <= 0.0 {
        return 0;
    }
    let u: f64 = rng.random();
    let mut k = 0u32;
    let mut p = (-mu).exp();
    let mut cdf = p;
    while u >= cdf && p > 0.0 {
        k += 1;
        p *= mu / k as f64;
        cdf += p;
    }
    k
}

/// Poisson(`mu`) conditioned on at least one photon.
fn sample_nonvacuum_count<R: Rng + ?Sized>(mu: f64, rng: &mut R) -> u32 {
    let norm = -(-mu).exp_m1();
    let u: f64 = rng.random::<f64>() * norm;
    let mut k = 1u32;
    let mut p = mu * (-mu).exp();
    let mut cdf = p;
    while u >= cdf && p > 0.0 {
        k += 1;
        p *= mu / k as f64;
        cdf += p;
    }
    k
}

/// Lazily evaluated pulse train of `n_pulses` pulses.
#[derive(Clone, Debug)]
pub struct PulseTrain {
    config: SourceConfig,
    n_pulses: u64,
    period_ps: f64,
    sigma_ps: f64,
    half_window_ps: f64,
}

impl PulseTrain {
    pub fn new(config: SourceConfig, n_pulses: u64) -> Result<Self, SourceError> {
        config.validate()?;
        if n_pulses == 0 {
            return Err(SourceError::EmptyTrain);
        }
        let period_ps = config.period_ps();
        Ok(Self {
            sigma_ps: config.pulse_sigma_ps(),
            half_window_ps: period_ps / 2.0,
            period_ps,
            config,
            n_pulses,
        })
    }

    pub fn config(&self) -> &SourceConfig {
        &self.config
    }

    pub fn len(&self) -> u64 {
        self.n_pulses
    }

    pub fn is_empty(&self) -> bool {
        self.n_pulses == 0
    }

    pub fn period_ps(&self) -> f64 {
        self.period_ps
    }

    pub fn shard_count(&self) -> u64 {
        self.n_pulses.div_ceil(SHARD_PULSES)
    }

    pub fn state(&self, index: u64) -> Polarization {
        let h = rng::index_hash(self.config.rng_seed, streams::ENCODING, index);
        let basis = Basis::from_bit(h & 1 == 1);
        Polarization::new(basis, ((h >> 1) & 1) as u8)
    }

    /// Grid time plus the truncated Gaussian intra-pulse offset.
    pub fn emit_time_ps(&self, index: u64) -> i64 {
        let grid = index as f64 * self.period_ps;
        if self.sigma_ps == 0.0 {
            return grid.round() as i64;
        }
        let z = rng::index_normal(self.config.rng_seed, streams::EMISSION_OFFSET, index);
        let offset = (z * self.sigma_ps).clamp(-self.half_window_ps, self.half_window_ps);
        (grid + offset).round() as i64
    }

    pub fn record(&self, index: u64, photon_count: u32) -> PulseRecord {
        let state = self.state(index);
        PulseRecord {
            index,
            basis: state.basis(),
            bit: state.bit(),
            photon_count,
            emit_time_ps: self.emit_time_ps(index),
        }
    }

    /// Pulse index range covered by `shard`.
    pub fn shard_range(&self, shard: u64) -> std::ops::Range<u64> {
        let start = (shard * SHARD_PULSES).min(self.n_pulses);
        let end = ((shard + 1) * SHARD_PULSES).min(self.n_pulses);
        start..end
    }

    /// Non-vacuum pulses of one shard, in index order.
    pub fn shard_emissions(&self, shard: u64) -> Emissions<'_> {
        let range = self.shard_range(shard);
        let mu_max = self.config.mu_per_state.iter().cloned().fold(0.0, f64::max);
        let p_max = -(-mu_max).exp_m1();
        Emissions {
            train: self,
            rng: rng::stream_rng(self.config.rng_seed, streams::PHOTON_COUNT, shard),
            next: range.start,
            end: range.end,
            p_max,
            log_miss: -mu_max, // ln(1 - p_max)
        }
    }
}

/// Iterator over pulses with at least one photon.
pub struct Emissions<'a> {
    train: &'a PulseTrain,
    rng: rand_chacha::ChaCha8Rng,
    next: u64,
    end: u64,
    p_max: f64,
    log_miss: f64,
}

impl Iterator for Emissions<'_> {
    type Item = PulseRecord;

    fn next(&mut self) -> Option<PulseRecord> {
        if self.p_max <= 0.0 {
            return None;
        }
        loop {
            // Geometric skip over pulses that are vacuum even at the largest mu,
            // then thin down to the per-state emission probability.
            let u = 1.0 - self.rng.random::<f64>();
            let skip = if self.p_max >= 1.0 {
                0.0
            } else {
                (u.ln() / self.log_miss).floor()
            };
            if skip >= (self.end - self.next) as f64 {
                self.next = self.end;
                return None;
            }
            let index = self.next + skip as u64;
            self.next = index + 1;
            let state = self.train.state(index);
            let mu = self.train.config.mu(state);
            let p_state = -(-mu).exp_m1();
            if p_state < self.p_max && self.rng.random::<f64>() * self.p_max >= p_state {
                continue;
            }
            let count = sample_nonvacuum_count(mu, &mut self.rng);
            return Some(self.train.record(index, count));
        }
    }
}

/// Materializes the full train, vacuum pulses included.
pub fn build_pulse_train(config: &SourceConfig, n_pulses: u64) -> Result<Vec<PulseRecord>, SourceError> {
    let train = PulseTrain::new(config.clone(), n_pulses)?;
    let mut out = Vec::with_capacity(n_pulses as usize);
    for shard in 0..train.shard_count() {
        let mut next = train.shard_range(shard).start;
        for rec in train.shard_emissions(shard) {
            out.extend((next..rec.index).map(|i| train.record(i, 0)));
            next = rec.index + 1;
            out.push(rec);
        }
        out.extend((next..train.shard_range(shard).end).map(|i| train.record(i, 0)));
    }
    Ok(out)
}
