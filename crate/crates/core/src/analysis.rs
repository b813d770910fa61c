//! Closed-form link budget and performance prediction.
//!
//! Small-μ BB84 with weak coherent pulses:
//!
//! ```text
//! η        = 10^(-(link + receiver)/10) · gate_acceptance
//! p_sig    = mean over states of 1 - exp(-μ_s·η)
//! p_bg     = 4 · background_rate · gate_width
//! e_sig    = e_pol + flip·(1 - 2·e_pol),   e_pol = sin²(misalignment)
//! qber     = (p_bg/2 + e_sig·p_sig) / (p_sig + p_bg)
//! sifted   = rep_rate · (p_sig + p_bg) / 2
//! ```
//!
//! The gate acceptance is the fraction of a Gaussian with the combined
//! pulse-width and jitter spread falling inside the gate. Multi-photon
//! double clicks, dead time and fading nonlinearity are ignored; the
//! Monte-Carlo handles them exactly and they stay below 1% here.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{loss_breakdown, LossBreakdown};
use crate::report::SessionReport;
use crate::scenario::Scenario;
use crate::source::FWHM_PER_SIGMA;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("scenario hash mismatch: prediction for {predicted}, report for {reported}")]
    HashMismatch { predicted: String, reported: String },
    #[error("report carries no QBER measurement (outcome: {0})")]
    NoMeasurement(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedMetrics {
    pub scenario: String,
    pub scenario_hash: String,
    pub n_pulses: u64,
    pub duration_s: f64,
    pub loss: LossBreakdown,
    pub receiver_loss_db: f64,
    pub gate_acceptance: f64,
    /// Link, receiver and gate losses together.
    pub total_loss_db: f64,
    pub p_signal_click_per_pulse: f64,
    pub p_background_per_pulse: f64,
    /// Probability that the detector a click would land on is live,
    /// non-paralyzable dead time at the mean per-APD raw count rate.
    pub dead_time_live_fraction: f64,
    pub signal_error_probability: f64,
    pub qber_background_part: f64,
    pub qber_misalignment_part: f64,
    pub qber_total: f64,
    pub sifted_rate_bps: f64,
    pub expected_sifted_bits: f64,
    /// One-sigma statistical spread of a session of `duration_s`, counting
    /// both shot noise and block fading.
    pub sifted_rate_sigma_bps: f64,
    pub qber_sigma: f64,
}

/// Fraction of a zero-mean Gaussian with std `sigma` inside `±half_width`.
pub fn gaussian_window_fraction(half_width: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 1.0;
    }
    libm::erf(half_width / (sigma * std::f64::consts::SQRT_2))
}

pub fn gate_acceptance(scenario: &Scenario) -> f64 {
    let sigma = (scenario.source.pulse_fwhm_ps / FWHM_PER_SIGMA).hypot(scenario.receiver.jitter_sigma_ps());
    gaussian_window_fraction(scenario.sync.gate_width_ps / 2.0, sigma)
}

struct Core {
    p_sig: f64,
    p_bg: f64,
    e_sig: f64,
}

impl Core {
    fn qber_at(&self, fade: f64) -> f64 {
        let s = self.p_sig * fade;
        let denom = s + self.p_bg;
        if denom == 0.0 {
            0.0
        } else {
            (0.5 * self.p_bg + self.e_sig * s) / denom
        }
    }
}

pub fn predict(scenario: &Scenario) -> Result<PredictedMetrics, AnalysisError> {
    scenario.validate().map_err(|e| AnalysisError::Config(e.to_string()))?;
    let loss = loss_breakdown(&scenario.channel, scenario.source.wavelength_nm)
        .map_err(|e| AnalysisError::Config(e.to_string()))?;
    let acceptance = gate_acceptance(scenario);
    let receiver_loss_db = scenario.receiver.efficiency_db;
    let eta_pre_gate = 10f64.powf(-(loss.total_db + receiver_loss_db) / 10.0);
    let eta = eta_pre_gate * acceptance;

    let mu = &scenario.source.mu_per_state;
    let p_sig = mu.iter().map(|m| -(-m * eta).exp_m1()).sum::<f64>() / 4.0;
    let gate_s = scenario.sync.gate_width_ps * 1e-12;
    let p_bg = 4.0 * scenario.receiver.background_rate_cps_per_apd * gate_s;
    let e_pol = scenario.receiver.misalignment_deg.to_radians().sin().powi(2);
    let flip = if scenario.channel.retro_mode { scenario.channel.retro_flip_probability } else { 0.0 };
    let e_sig = e_pol + flip * (1.0 - 2.0 * e_pol);
    let core = Core { p_sig, p_bg, e_sig };

    let mean_mu = mu.iter().sum::<f64>() / 4.0;
    let rep = scenario.source.rep_rate_hz;
    let apd_rate = (rep * mean_mu * eta_pre_gate + 4.0 * scenario.receiver.background_rate_cps_per_apd) / 4.0;
    let live = 1.0 / (1.0 + apd_rate * scenario.receiver.dead_time_ns * 1e-9);
    let p_raw = p_sig + p_bg;
    let p_click = p_raw * live;
    let (qber_bg, qber_sig) = if p_raw > 0.0 { (0.5 * p_bg / p_raw, e_sig * p_sig / p_raw) } else { (0.0, 0.0) };
    let sifted_rate = rep * p_click * 0.5;

    // Statistical spread: binomial sifting count plus block-constant fading
    // acting on the signal part only.
    let n = scenario.n_pulses() as f64;
    let duration = n / rep;
    let p_sift = 0.5 * p_click;
    let n_sifted = n * p_sift;
    let fading_blocks = (duration * 1e3 / scenario.channel.fading_block_ms).ceil().max(1.0);
    let fade_sd = scenario.channel.fading_sigma / fading_blocks.sqrt();
    let count_var = n * p_sift * (1.0 - p_sift) + (n * 0.5 * p_sig * live * fade_sd).powi(2);
    let qber = core.qber_at(1.0);
    let dq_dfade = if p_raw > 0.0 { p_sig * p_bg * (e_sig - 0.5) / (p_raw * p_raw) } else { 0.0 };
    let qber_var = if n_sifted > 0.0 { qber * (1.0 - qber) / n_sifted } else { 0.0 } + (dq_dfade * fade_sd).powi(2);

    Ok(PredictedMetrics {
        scenario: scenario.metadata.name.clone(),
        scenario_hash: scenario.hash_hex(),
        n_pulses: scenario.n_pulses(),
        duration_s: duration,
        total_loss_db: loss.total_db + receiver_loss_db - 10.0 * acceptance.log10(),
        loss,
        receiver_loss_db,
        gate_acceptance: acceptance,
        p_signal_click_per_pulse: p_sig,
        p_background_per_pulse: p_bg,
        dead_time_live_fraction: live,
        signal_error_probability: e_sig,
        qber_background_part: qber_bg,
        qber_misalignment_part: qber_sig,
        qber_total: qber,
        sifted_rate_bps: sifted_rate,
        expected_sifted_bits: n_sifted,
        sifted_rate_sigma_bps: count_var.sqrt() / duration,
        qber_sigma: qber_var.sqrt(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative tolerance on the sifted rate.
    pub rate_rel: f64,
    /// Absolute tolerance on QBER, as a fraction (0.004 = 0.4 points).
    pub qber_abs: f64,
    /// Statistical floor in sigmas; the effective tolerance is the larger one.
    pub sigma_floor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { rate_rel: 0.15, qber_abs: 0.004, sigma_floor: 3.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricDeviation {
    pub metric: String,
    pub predicted: f64,
    pub measured: f64,
    /// Relative for rates, absolute for QBER.
    pub deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub scenario_hash: String,
    pub tolerances: Tolerances,
    pub metrics: Vec<MetricDeviation>,
    pub pass: bool,
}

impl DeviationReport {
    pub fn failing(&self) -> impl Iterator<Item = &MetricDeviation> {
        self.metrics.iter().filter(|m| !m.pass)
    }
}

pub fn compare(predicted: &PredictedMetrics, report: &SessionReport, tol: &Tolerances) -> Result<DeviationReport, AnalysisError> {
    if predicted.scenario_hash != report.scenario_hash {
        return Err(AnalysisError::HashMismatch {
            predicted: predicted.scenario_hash.clone(),
            reported: report.scenario_hash.clone(),
        });
    }
    let qber = report.qber.as_ref().ok_or_else(|| AnalysisError::NoMeasurement(report.outcome.label()))?;
    Ok(compare_values(predicted, report.sifted_key_rate_bps, qber.qber, tol))
}

/// Compares a measured (rate, qber) pair; used directly by sweeps that do
/// not go through a full session report.
pub fn compare_values(predicted: &PredictedMetrics, rate_bps: f64, qber: f64, tol: &Tolerances) -> DeviationReport {
    let rate_dev = if predicted.sifted_rate_bps > 0.0 {
        (rate_bps - predicted.sifted_rate_bps) / predicted.sifted_rate_bps
    } else {
        rate_bps
    };
    let rate_stat = if predicted.sifted_rate_bps > 0.0 {
        tol.sigma_floor * predicted.sifted_rate_sigma_bps / predicted.sifted_rate_bps
    } else {
        0.0
    };
    let rate_tol = tol.rate_rel.max(rate_stat);
    let qber_tol = tol.qber_abs.max(tol.sigma_floor * predicted.qber_sigma);
    let qber_dev = qber - predicted.qber_total;
    let metrics = vec![
        MetricDeviation {
            metric: "sifted_key_rate_bps".into(),
            predicted: predicted.sifted_rate_bps,
            measured: rate_bps,
            deviation: rate_dev,
            tolerance: rate_tol,
            pass: rate_dev.abs() <= rate_tol,
        },
        MetricDeviation {
            metric: "qber".into(),
            predicted: predicted.qber_total,
            measured: qber,
            deviation: qber_dev,
            tolerance: qber_tol,
            pass: qber_dev.abs() <= qber_tol,
        },
    ];
    DeviationReport {
        scenario_hash: predicted.scenario_hash.clone(),
        tolerances: *tol,
        pass: metrics.iter().all(|m| m.pass),
        metrics,
    }
}
