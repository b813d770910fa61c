//! Scenario files: one complete experiment description in JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::channel::ChannelConfig;
use crate::protocol::wire::{SampleFraction, SessionParams};
use crate::receiver::ReceiverConfig;
use crate::rng::{derive_seed, streams};
use crate::source::SourceConfig;
use crate::sync::{GateConfig, RecoveryOptions, TrueClock};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed scenario at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown scenario `{0}` (not a file and not a bundled name)")]
    Unknown(String),
}

/// Figures reported for the measurement a scenario reproduces. Carried as
/// provenance; the simulator never reads them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reported {
    pub link_loss_db: Option<f64>,
    pub noise_per_apd_cps: Option<f64>,
    pub qber_percent: Option<f64>,
    pub raw_key_rate_kbps: Option<f64>,
}

/// Informational conditions; physically inert apart from what the channel
/// section repeats (visibility).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub name: String,
    #[serde(default)]
    pub date: String,
    #[serde(default)]
    pub temperature: String,
    #[serde(default)]
    pub weather: String,
    #[serde(default)]
    pub visibility: String,
    #[serde(default)]
    pub rain: String,
    #[serde(default)]
    pub wind: String,
    #[serde(default)]
    pub reported: Reported,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncSection {
    pub gate_width_ps: f64,
    #[serde(default = "default_block_count")]
    pub block_count: usize,
    pub true_clock: TrueClock,
    /// When set, the beacon supplies the clock rate and only phase is tracked.
    #[serde(default)]
    pub beacon_assisted: bool,
    /// Half-width of the uniform error on the beacon's coarse epoch.
    #[serde(default = "default_epoch_error")]
    pub beacon_epoch_error_ps: f64,
    pub rng_seed: u64,
}

fn default_block_count() -> usize {
    20
}

fn default_epoch_error() -> f64 {
    2000.0
}

impl SyncSection {
    pub fn gate(&self) -> GateConfig {
        GateConfig { gate_width_ps: self.gate_width_ps }
    }

    pub fn recovery_options(&self) -> RecoveryOptions {
        RecoveryOptions {
            block_count: self.block_count,
            known_drift_ppm: self.beacon_assisted.then_some(self.true_clock.drift_ppm),
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    pub session_id: u64,
    #[serde(default = "default_threshold")]
    pub qber_abort_threshold: f64,
    #[serde(default = "default_sample", with = "sample_fraction_serde")]
    pub sample_fraction: SampleFraction,
    pub rng_seed: u64,
}

fn default_threshold() -> f64 {
    0.10
}

fn default_sample() -> SampleFraction {
    SampleFraction::All
}

/// `"all"` or a number in (0, 1].
mod sample_fraction_serde {
    use super::SampleFraction;
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &SampleFraction, s: S) -> Result<S::Ok, S::Error> {
        match v {
            SampleFraction::All => s.serialize_str("all"),
            SampleFraction::Fraction(f) => s.serialize_f64(*f),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SampleFraction, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Word(String),
            Num(f64),
        }
        match Raw::deserialize(d)? {
            Raw::Word(w) if w == "all" => Ok(SampleFraction::All),
            Raw::Word(w) => Err(de::Error::custom(format!("expected \"all\" or a number, got \"{w}\""))),
            Raw::Num(f) => Ok(SampleFraction::Fraction(f)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub metadata: Metadata,
    pub source: SourceConfig,
    pub channel: ChannelConfig,
    pub receiver: ReceiverConfig,
    pub sync: SyncSection,
    pub protocol: ProtocolSection,
    pub duration_s: f64,
}

pub const BUNDLED: &[(&str, &str)] = &[
    ("table2_beam_expanders", include_str!("../scenarios/table2_beam_expanders.json")),
    ("table2_collimators", include_str!("../scenarios/table2_collimators.json")),
    ("table1_run1", include_str!("../scenarios/table1_run1.json")),
    ("table1_run2", include_str!("../scenarios/table1_run2.json")),
];

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn bundled(name: &str) -> Option<Self> {
        BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Self::from_json(text).expect("bundled scenarios are valid"))
    }

    pub fn bundled_names() -> impl Iterator<Item = &'static str> {
        BUNDLED.iter().map(|(n, _)| *n)
    }

    /// Loads from a file path, falling back to a bundled scenario name.
    pub fn load(spec: &str) -> Result<Self, ScenarioError> {
        let path = Path::new(spec);
        if path.exists() {
            let text = std::fs::read_to_string(path)
                .map_err(|source| ScenarioError::Io { path: spec.to_string(), source })?;
            return Self::from_json(&text);
        }
        Self::bundled(spec).ok_or_else(|| ScenarioError::Unknown(spec.to_string()))
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let inv = |e: &dyn std::fmt::Display| ScenarioError::Invalid(e.to_string());
        self.source.validate().map_err(|e| inv(&e))?;
        self.channel.validate().map_err(|e| inv(&e))?;
        self.receiver.validate().map_err(|e| inv(&e))?;
        self.sync.gate().validate(self.source.period_ps()).map_err(|e| inv(&e))?;
        self.sync.true_clock.validate().map_err(|e| inv(&e))?;
        if self.sync.block_count < 2 {
            return Err(ScenarioError::Invalid("sync.block_count must be >= 2".into()));
        }
        if !(self.sync.beacon_epoch_error_ps >= 0.0 && self.sync.beacon_epoch_error_ps < self.source.period_ps() / 2.0) {
            return Err(ScenarioError::Invalid("sync.beacon_epoch_error_ps must lie in [0, period/2)".into()));
        }
        let t = self.protocol.qber_abort_threshold;
        if !(t > 0.0 && t < 0.5) {
            return Err(ScenarioError::Invalid("protocol.qber_abort_threshold must lie in (0, 0.5)".into()));
        }
        if let SampleFraction::Fraction(f) = self.protocol.sample_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(ScenarioError::Invalid("protocol.sample_fraction must lie in (0, 1]".into()));
            }
        }
        if !(self.duration_s > 0.0) || self.n_pulses() == 0 {
            return Err(ScenarioError::Invalid("duration_s must be > 0 and cover at least one pulse".into()));
        }
        Ok(())
    }

    pub fn n_pulses(&self) -> u64 {
        (self.duration_s * self.source.rep_rate_hz).round() as u64
    }

    /// Replaces every component seed with one derived from `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        let s = |lane| derive_seed(seed, streams::SCENARIO, lane);
        self.source.rng_seed = s(0);
        self.channel.rng_seed = s(1);
        self.receiver.rng_seed = s(2);
        self.sync.rng_seed = s(3);
        self.protocol.rng_seed = s(4);
        self
    }

    pub fn with_duration(mut self, duration_s: f64) -> Self {
        self.duration_s = duration_s;
        self
    }

    pub fn session_params(&self) -> SessionParams {
        SessionParams {
            session_id: self.protocol.session_id,
            n_pulses: self.n_pulses(),
            qber_abort_threshold: self.protocol.qber_abort_threshold,
            sample_fraction: self.protocol.sample_fraction,
            rng_seed: self.protocol.rng_seed,
        }
    }

    /// SHA-256 over the canonical JSON encoding.
    pub fn hash(&self) -> [u8; 32] {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        Sha256::digest(&bytes).into()
    }

    pub fn hash_hex(&self) -> String {
        hex::encode(self.hash())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}
