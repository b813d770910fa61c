//! Free-space channel: link budget and Monte-Carlo photon transmission.
//!
//! Loss model:
//! - geometric capture of a Gaussian beam by a circular aperture,
//! - Kim visibility model for atmospheric extinction,
//! - a lumped optical-train residual (`extra_loss_db`),
//! - in retro-reflector mode both legs are counted and the beam-splitter
//!   penalty is added.
//!
//! Slow fading is a block-constant log-normal factor on the transmittance.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, streams};
use crate::source::PulseRecord;
use crate::sync::TrueClock;

/// 10/ln(10): converts a natural-log extinction to dB.
const DB_PER_NEPER_POWER: f64 = 4.342_944_819_032_518;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("invalid channel config: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    /// One-way distance; in retro mode this is the distance to the reflector.
    pub distance_m: f64,
    pub tx_beam_diameter_e2_cm: f64,
    pub rx_aperture_diameter_e2_cm: f64,
    pub visibility_km: f64,
    pub extra_loss_db: f64,
    pub retro_mode: bool,
    pub splitter_penalty_db: f64,
    /// Probability that the reflector flips the polarization state.
    #[serde(default)]
    pub retro_flip_probability: f64,
    pub fading_sigma: f64,
    pub fading_block_ms: f64,
    pub propagation_delay_ps: i64,
    pub rng_seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            distance_m: 780.0,
            tx_beam_diameter_e2_cm: 3.48,
            rx_aperture_diameter_e2_cm: 4.20,
            visibility_km: 10.0,
            extra_loss_db: 0.0,
            retro_mode: false,
            splitter_penalty_db: 6.0,
            retro_flip_probability: 0.0,
            fading_sigma: 0.0,
            fading_block_ms: 10.0,
            propagation_delay_ps: 0,
            rng_seed: 2,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |m: &str| Err(ChannelError::Config(m.to_string()));
        if !(self.tx_beam_diameter_e2_cm > 0.0) || !(self.rx_aperture_diameter_e2_cm > 0.0) {
            return bad("beam and aperture diameters must be > 0");
        }
        if !(self.visibility_km > 0.0) {
            return bad("visibility_km must be > 0");
        }
        if !(self.distance_m >= 0.0 && self.distance_m.is_finite()) {
            return bad("distance_m must be >= 0");
        }
        if !(self.splitter_penalty_db >= 0.0) {
            return bad("splitter_penalty_db must be >= 0");
        }
        if !(self.fading_sigma >= 0.0) {
            return bad("fading_sigma must be >= 0");
        }
        if !(self.fading_block_ms > 0.0) {
            return bad("fading_block_ms must be > 0");
        }
        if !(0.0..=1.0).contains(&self.retro_flip_probability) {
            return bad("retro_flip_probability must lie in [0, 1]");
        }
        if !self.extra_loss_db.is_finite() {
            return bad("extra_loss_db must be finite");
        }
        Ok(())
    }
}

/// Gaussian beam 1/e² radius after propagating `distance_m` from a waist of
/// radius `waist_m`.
pub fn beam_radius_m(waist_m: f64, wavelength_nm: f64, distance_m: f64) -> f64 {
    let rayleigh = std::f64::consts::PI * waist_m * waist_m / (wavelength_nm * 1e-9);
    waist_m * (1.0 + (distance_m / rayleigh).powi(2)).sqrt()
}

/// Loss from clipping the propagated Gaussian beam by the receive aperture.
pub fn geometric_loss_db(config: &ChannelConfig, wavelength_nm: f64) -> Result<f64, ChannelError> {
    if !(config.tx_beam_diameter_e2_cm > 0.0) || !(config.rx_aperture_diameter_e2_cm > 0.0) {
        return Err(ChannelError::Config("beam and aperture diameters must be > 0".into()));
    }
    if !(wavelength_nm > 0.0) {
        return Err(ChannelError::Config("wavelength must be > 0".into()));
    }
    let w0 = config.tx_beam_diameter_e2_cm / 200.0;
    let a = config.rx_aperture_diameter_e2_cm / 200.0;
    let w = beam_radius_m(w0, wavelength_nm, config.distance_m);
    let captured = -(-2.0 * a * a / (w * w)).exp_m1();
    Ok(-10.0 * captured.log10())
}

/// Kim size-distribution exponent as a function of visibility.
pub fn kim_exponent(visibility_km: f64) -> f64 {
    match visibility_km {
        v if v > 50.0 => 1.6,
        v if v > 6.0 => 1.3,
        v if v > 1.0 => 0.16 * v + 0.34,
        v if v > 0.5 => v - 0.5,
        _ => 0.0,
    }
}

/// Extinction coefficient in 1/km.
pub fn extinction_per_km(visibility_km: f64, wavelength_nm: f64) -> f64 {
    3.91 / visibility_km * (wavelength_nm / 550.0).powf(-kim_exponent(visibility_km))
}

pub fn atmospheric_loss_db(visibility_km: f64, wavelength_nm: f64, distance_m: f64) -> Result<f64, ChannelError> {
    if !(visibility_km > 0.0) {
        return Err(ChannelError::Config("visibility_km must be > 0".into()));
    }
    Ok(DB_PER_NEPER_POWER * extinction_per_km(visibility_km, wavelength_nm) * distance_m / 1000.0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Path totals: both legs are included in retro mode.
    pub geometric_db: f64,
    pub atmospheric_db: f64,
    pub extra_db: f64,
    pub splitter_db: f64,
    pub total_db: f64,
}

pub fn loss_breakdown(config: &ChannelConfig, wavelength_nm: f64) -> Result<LossBreakdown, ChannelError> {
    config.validate()?;
    let legs = if config.retro_mode { 2.0 } else { 1.0 };
    let geometric_db = legs * geometric_loss_db(config, wavelength_nm)?;
    let atmospheric_db = legs * atmospheric_loss_db(config.visibility_km, wavelength_nm, config.distance_m)?;
    let splitter_db = if config.retro_mode { config.splitter_penalty_db } else { 0.0 };
    let extra_db = config.extra_loss_db;
    Ok(LossBreakdown {
        geometric_db,
        atmospheric_db,
        extra_db,
        splitter_db,
        total_db: geometric_db + atmospheric_db + extra_db + splitter_db,
    })
}

pub fn total_link_loss_db(config: &ChannelConfig, wavelength_nm: f64) -> Result<f64, ChannelError> {
    loss_breakdown(config, wavelength_nm).map(|b| b.total_db)
}

pub fn db_to_transmittance(db: f64) -> f64 {
    10f64.powf(-db / 10.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhotonArrival {
    pub pulse_index: u64,
    pub polarization_angle_deg: f64,
    /// Bob's raw clock, before tagger quantization.
    pub arrival_time_ps: i64,
}

/// A configured channel with its loss budget resolved.
#[derive(Clone, Debug)]
pub struct Channel {
    config: ChannelConfig,
    transmittance: f64,
    block_ps: f64,
    lognormal_s: f64,
}

impl Channel {
    pub fn new(config: ChannelConfig, wavelength_nm: f64) -> Result<Self, ChannelError> {
        let loss = total_link_loss_db(&config, wavelength_nm)?;
        let sigma = config.fading_sigma;
        Ok(Self {
            transmittance: db_to_transmittance(loss),
            block_ps: config.fading_block_ms * 1e9,
            lognormal_s: (1.0 + sigma * sigma).ln().sqrt(),
            config,
        })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    pub fn transmittance(&self) -> f64 {
        self.transmittance
    }

    pub fn fading_block(&self, emit_time_ps: i64) -> u64 {
        (emit_time_ps.max(0) as f64 / self.block_ps) as u64
    }

    /// Log-normal factor with unit mean for one fading block.
    pub fn fading_factor(&self, block: u64) -> f64 {
        if self.lognormal_s == 0.0 {
            return 1.0;
        }
        let s = self.lognormal_s;
        let z = rng::index_normal(self.config.rng_seed, streams::FADING, block);
        (s * z - 0.5 * s * s).exp()
    }

    pub fn survival_probability(&self, emit_time_ps: i64) -> f64 {
        (self.transmittance * self.fading_factor(self.fading_block(emit_time_ps))).min(1.0)
    }

    /// Propagates pulses, appending one arrival per surviving photon.
    /// Output order follows input order; callers sort if needed.
    pub fn transmit_into<'p, R, I>(&self, pulses: I, clock: &TrueClock, rng: &mut R, out: &mut Vec<PhotonArrival>)
    where
        R: Rng + ?Sized,
        I: IntoIterator<Item = &'p PulseRecord>,
    {
        let mut cached_block = u64::MAX;
        let mut p_survive = 0.0;
        let flip = if self.config.retro_mode { self.config.retro_flip_probability } else { 0.0 };
        for pulse in pulses {
            if pulse.photon_count == 0 {
                continue;
            }
            let block = self.fading_block(pulse.emit_time_ps);
            if block != cached_block {
                cached_block = block;
                p_survive = (self.transmittance * self.fading_factor(block)).min(1.0);
            }
            for _ in 0..pulse.photon_count {
                if rng.random::<f64>() >= p_survive {
                    continue;
                }
                let mut angle = pulse.state().angle_deg();
                if flip > 0.0 && rng.random::<f64>() < flip {
                    angle += 90.0;
                }
                let alice_time = (pulse.emit_time_ps + self.config.propagation_delay_ps) as f64;
                out.push(PhotonArrival {
                    pulse_index: pulse.index,
                    polarization_angle_deg: angle,
                    arrival_time_ps: clock.bob_time_ps(alice_time),
                });
            }
        }
    }
}

pub fn sort_arrivals(arrivals: &mut [PhotonArrival]) {
    arrivals.sort_by_key(|a| (a.arrival_time_ps, a.pulse_index));
}

/// Applies the channel to a materialized pulse train; output sorted by arrival time.
pub fn transmit<R: Rng + ?Sized>(
    pulses: &[PulseRecord],
    config: &ChannelConfig,
    wavelength_nm: f64,
    clock: &TrueClock,
    rng: &mut R,
) -> Result<Vec<PhotonArrival>, ChannelError> {
    let channel = Channel::new(config.clone(), wavelength_nm)?;
    let mut out = Vec::new();
    channel.transmit_into(pulses, clock, rng, &mut out);
    sort_arrivals(&mut out);
    Ok(out)
}
