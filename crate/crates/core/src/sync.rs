//! Pulse-grid recovery from Bob's time tags.
//!
//! Recovery runs in two stages:
//!
//! 1. Frequency acquisition. On a short prefix of the stream, the Rayleigh
//!    statistic `|Σ exp(2πi·f·t)|` is scanned over a uniform grid of trial
//!    repetition frequencies covering ±`max_drift_ppm`. The grid step keeps
//!    the accumulated phase error over the prefix below 1/8 cycle.
//! 2. Block-phase tracking. The span under consideration grows by 4× per
//!    step; it is cut into `block_count` time blocks, each block's phase is
//!    the circular mean of folded residuals refined by a trimmed linear mean,
//!    and a weighted line through the block phases corrects offset and
//!    period.
//!
//! Folding only fixes the offset modulo one period. The whole-period part
//! comes from the coarse epoch carried by the sync beacon, see
//! [`ClockModel::anchor`].

use std::f64::consts::TAU;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::receiver::{Detector, TimeTag};

/// Minimum number of tags accepted by [`recover_clock`].
pub const MIN_TAGS: usize = 1000;
const ACQUISITION_TAGS: usize = 4000;
const MAX_CANDIDATES: f64 = 250_000.0;
const SIGNIFICANCE_BINS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum SyncError {
    #[error("clock recovery needs at least {MIN_TAGS} tags, got {found}")]
    InsufficientTags { found: usize },
    #[error("sync failure: no significant peak in folded histogram (peak {peak}, median {median})")]
    NoSignificantPeak { peak: u64, median: u64 },
    #[error("sync failure: recovered drift {drift_ppm:.3} ppm outside ±{limit} ppm")]
    DriftOutOfRange { drift_ppm: f64, limit: f64 },
    #[error("invalid sync parameter: {0}")]
    Config(String),
}

/// Ground-truth relation between Alice's time and Bob's tagger clock.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrueClock {
    pub offset_ps: f64,
    pub drift_ppm: f64,
}

impl TrueClock {
    pub const MAX_DRIFT_PPM: f64 = 100.0;

    pub fn validate(&self) -> Result<(), SyncError> {
        if !(self.drift_ppm.abs() <= Self::MAX_DRIFT_PPM) || !self.offset_ps.is_finite() {
            return Err(SyncError::Config(format!("|drift_ppm| must be <= {}", Self::MAX_DRIFT_PPM)));
        }
        Ok(())
    }

    pub fn bob_time_ps(&self, alice_time_ps: f64) -> i64 {
        (alice_time_ps * (1.0 + self.drift_ppm * 1e-6) + self.offset_ps).round() as i64
    }
}

/// Recovered mapping from tagger time to pulse index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClockModel {
    /// Tagger time at which pulse 0 is expected.
    pub offset_ps: f64,
    pub drift_ppm: f64,
    /// Weighted RMS of block phases about the fitted line.
    pub residual_rms_ps: f64,
    pub nominal_period_ps: f64,
}

impl ClockModel {
    pub fn exact(nominal_period_ps: f64, offset_ps: f64, drift_ppm: f64) -> Self {
        Self { offset_ps, drift_ppm, residual_rms_ps: 0.0, nominal_period_ps }
    }

    pub fn period_ps(&self) -> f64 {
        self.nominal_period_ps * (1.0 + self.drift_ppm * 1e-6)
    }

    pub fn expected_time_ps(&self, index: i64) -> f64 {
        self.offset_ps + index as f64 * self.period_ps()
    }

    /// Nearest pulse index and the residual to it; exact ties go to the
    /// lower index.
    pub fn position(&self, t_ps: f64) -> (i64, f64) {
        let period = self.period_ps();
        let x = (t_ps - self.offset_ps) / period;
        let n = (x - 0.5).ceil();
        (n as i64, t_ps - self.offset_ps - n * period)
    }

    /// Shifts the offset by whole periods so that it lies nearest to the
    /// coarse epoch supplied by the sync beacon.
    pub fn anchor(mut self, coarse_epoch_ps: f64) -> Self {
        let period = self.period_ps();
        let k = ((coarse_epoch_ps - self.offset_ps) / period).round();
        self.offset_ps += k * period;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateConfig {
    /// Full width of the acceptance window centered on the pulse.
    pub gate_width_ps: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self { gate_width_ps: 500.0 }
    }
}

impl GateConfig {
    pub fn validate(&self, period_ps: f64) -> Result<(), SyncError> {
        if !(self.gate_width_ps > 0.0 && self.gate_width_ps < period_ps) {
            return Err(SyncError::Config("gate_width_ps must lie in (0, period)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldedHistogram {
    pub period_ps: f64,
    pub counts: Vec<u64>,
}

impl FoldedHistogram {
    pub fn bin_width_ps(&self) -> f64 {
        self.period_ps / self.counts.len() as f64
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn peak_bin(&self) -> Option<usize> {
        let max = *self.counts.iter().max()?;
        self.counts.iter().position(|&c| c == max)
    }

    pub fn median(&self) -> u64 {
        let mut c = self.counts.clone();
        c.sort_unstable();
        c[c.len() / 2]
    }

    /// Writes `bin_start_ps,count` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["bin_start_ps", "count"])?;
        let width = self.bin_width_ps();
        for (i, c) in self.counts.iter().enumerate() {
            wr.write_record([format!("{}", i as f64 * width), c.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn bin_of(phase: f64, period: f64, n_bins: usize) -> usize {
    ((phase / period * n_bins as f64) as usize).min(n_bins - 1)
}

/// Histogram of `time mod period`.
pub fn fold_histogram(tags: &[TimeTag], period_ps: f64, n_bins: usize) -> Result<FoldedHistogram, SyncError> {
    if n_bins < 2 {
        return Err(SyncError::Config("n_bins must be >= 2".into()));
    }
    if !(period_ps > 0.0) {
        return Err(SyncError::Config("period must be > 0".into()));
    }
    let mut counts = vec![0u64; n_bins];
    for t in tags {
        counts[bin_of((t.time_ps as f64).rem_euclid(period_ps), period_ps, n_bins)] += 1;
    }
    Ok(FoldedHistogram { period_ps, counts })
}

/// Histogram of residuals to the recovered grid, bin 0 starting at −period/2.
pub fn fold_residuals(tags: &[TimeTag], clock: &ClockModel, n_bins: usize) -> FoldedHistogram {
    let period = clock.period_ps();
    let mut counts = vec![0u64; n_bins.max(2)];
    let n = counts.len();
    for t in tags {
        let (_, r) = clock.position(t.time_ps as f64);
        counts[bin_of((r + period / 2.0).clamp(0.0, period), period, n)] += 1;
    }
    FoldedHistogram { period_ps: period, counts }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecoveryOptions {
    pub block_count: usize,
    /// Drift supplied by the sync beacon; skips frequency acquisition.
    pub known_drift_ppm: Option<f64>,
    pub max_drift_ppm: f64,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self { block_count: 20, known_drift_ppm: None, max_drift_ppm: TrueClock::MAX_DRIFT_PPM }
    }
}

pub fn recover_clock(tags: &[TimeTag], nominal_period_ps: f64, block_count: usize) -> Result<ClockModel, SyncError> {
    recover_clock_with(tags, nominal_period_ps, &RecoveryOptions { block_count, ..Default::default() })
}

pub fn recover_clock_with(tags: &[TimeTag], nominal_period_ps: f64, opts: &RecoveryOptions) -> Result<ClockModel, SyncError> {
    if !(nominal_period_ps > 0.0) {
        return Err(SyncError::Config("period must be > 0".into()));
    }
    if opts.block_count < 2 {
        return Err(SyncError::Config("block_count must be >= 2".into()));
    }
    if tags.len() < MIN_TAGS {
        return Err(SyncError::InsufficientTags { found: tags.len() });
    }
    let mut times: Vec<f64> = tags.iter().map(|t| t.time_ps as f64).collect();
    if times.windows(2).any(|w| w[1] < w[0]) {
        times.sort_by(f64::total_cmp);
    }

    let mut model = acquire(&times, nominal_period_ps, opts);
    let t0 = times[0];
    let total_span = times[times.len() - 1] - t0;
    let fixed_slope = opts.known_drift_ppm.is_some();

    let acq_len = ACQUISITION_TAGS.min(times.len());
    let mut span = (times[acq_len - 1] - t0).max(nominal_period_ps);
    loop {
        span = (span * 4.0).min(total_span);
        let end = times.partition_point(|&t| t <= t0 + span);
        let (updated, _) = track(&times[..end], model, opts.block_count, fixed_slope);
        model = updated;
        if span >= total_span {
            break;
        }
    }
    // Settle at the full span; the second fit reports the residual.
    let (updated, _) = track(&times, model, opts.block_count, fixed_slope);
    let (mut model, rms) = track(&times, updated, opts.block_count, fixed_slope);
    model.residual_rms_ps = rms;

    if !(model.drift_ppm.abs() <= opts.max_drift_ppm) {
        return Err(SyncError::DriftOutOfRange { drift_ppm: model.drift_ppm, limit: opts.max_drift_ppm });
    }
    let hist = fold_residuals(tags, &model, SIGNIFICANCE_BINS);
    let peak = hist.counts.iter().copied().max().unwrap_or(0);
    let median = hist.median();
    if peak == 0 || peak < 3 * median {
        return Err(SyncError::NoSignificantPeak { peak, median });
    }

    // Report pulse 0 nearest to the tagger origin.
    let period = model.period_ps();
    model.offset_ps -= (model.offset_ps / period).round() * period;
    Ok(model)
}

/// Scans trial frequencies on the stream prefix and returns a model whose
/// offset is a pulse time near the first tag.
fn acquire(times: &[f64], nominal_period_ps: f64, opts: &RecoveryOptions) -> ClockModel {
    let t0 = times[0];
    let mut n = ACQUISITION_TAGS.min(times.len());
    let f_nominal = 1.0 / nominal_period_ps;

    let (f_best, phase) = if let Some(drift) = opts.known_drift_ppm {
        let f = f_nominal / (1.0 + drift * 1e-6);
        let (s, c) = times[..n].iter().fold((0.0, 0.0), |(s, c), &t| {
            let th = TAU * ((t - t0) * f).fract();
            (s + th.sin(), c + th.cos())
        });
        (f, s.atan2(c))
    } else {
        let f_lo = f_nominal / (1.0 + opts.max_drift_ppm * 1e-6);
        let f_hi = f_nominal / (1.0 - opts.max_drift_ppm * 1e-6);
        // Shrink the prefix if the grid would get too fine.
        let mut span;
        loop {
            span = (times[n - 1] - t0).max(nominal_period_ps);
            if (f_hi - f_lo) * 8.0 * span <= MAX_CANDIDATES || n <= 200 {
                break;
            }
            n /= 2;
        }
        let df = 1.0 / (8.0 * span);
        let k = ((f_hi - f_lo) / df).ceil() as usize + 1;
        let mut re = vec![0.0f64; k];
        let mut im = vec![0.0f64; k];
        for &t in &times[..n] {
            let tau = t - t0;
            let th0 = TAU * (tau * f_lo).fract();
            let dth = TAU * (tau * df).fract();
            let (mut zr, mut zi) = (th0.cos(), th0.sin());
            let (wr, wi) = (dth.cos(), dth.sin());
            for j in 0..k {
                re[j] += zr;
                im[j] += zi;
                let nr = zr * wr - zi * wi;
                zi = zr * wi + zi * wr;
                zr = nr;
            }
        }
        let best = (0..k)
            .max_by(|&a, &b| (re[a] * re[a] + im[a] * im[a]).total_cmp(&(re[b] * re[b] + im[b] * im[b])))
            .unwrap_or(0);
        (f_lo + best as f64 * df, im[best].atan2(re[best]))
    };

    let period = 1.0 / f_best;
    let offset = t0 + phase.rem_euclid(TAU) / TAU * period;
    ClockModel {
        offset_ps: offset,
        drift_ppm: (period / nominal_period_ps - 1.0) * 1e6,
        residual_rms_ps: 0.0,
        nominal_period_ps,
    }
}

/// One block-phase fit over `times`; returns the corrected model and the
/// weighted RMS of block phases about the fitted line.
fn track(times: &[f64], model: ClockModel, block_count: usize, fixed_slope: bool) -> (ClockModel, f64) {
    let period = model.period_ps();
    let window = period / 8.0;
    let t0 = times[0];
    let span = (times[times.len() - 1] - t0).max(1.0);
    let block_len = span / block_count as f64;
    let wrap = |x: f64| x - (x / period).round() * period;

    // (mid time, phase, weight)
    let mut points: Vec<(f64, f64, f64)> = Vec::with_capacity(block_count);
    let mut start = 0;
    for b in 0..block_count {
        let block_end = if b + 1 == block_count { f64::INFINITY } else { t0 + (b + 1) as f64 * block_len };
        let end = start + times[start..].partition_point(|&t| t < block_end);
        let block = &times[start..end];
        start = end;
        if block.len() < 3 {
            continue;
        }
        let (s, c) = block.iter().fold((0.0, 0.0), |(s, c), &t| {
            let th = TAU * model.position(t).1 / period;
            (s + th.sin(), c + th.cos())
        });
        let centre = s.atan2(c) / TAU * period;
        let (mut sum_r, mut sum_t, mut w) = (0.0, 0.0, 0.0);
        for &t in block {
            let d = wrap(model.position(t).1 - centre);
            if d.abs() <= window {
                sum_r += d;
                sum_t += t;
                w += 1.0;
            }
        }
        if w >= 3.0 {
            points.push((sum_t / w - t0, centre + sum_r / w, w));
        }
    }
    if points.len() < 2 {
        return (model, f64::INFINITY);
    }

    let sw: f64 = points.iter().map(|p| p.2).sum();
    let mx = points.iter().map(|p| p.0 * p.2).sum::<f64>() / sw;
    let my = points.iter().map(|p| p.1 * p.2).sum::<f64>() / sw;
    let slope = if fixed_slope {
        0.0
    } else {
        let sxx: f64 = points.iter().map(|p| p.2 * (p.0 - mx).powi(2)).sum();
        let sxy: f64 = points.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
        if sxx > 0.0 {
            sxy / sxx
        } else {
            0.0
        }
    };
    let intercept = my - slope * mx;
    let rms = (points.iter().map(|p| p.2 * (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / sw).sqrt();

    // residual(t) = a + b·(t − t0)  ⇒  rescale period by 1/(1 − b).
    let new_period = period / (1.0 - slope);
    let new_offset = t0 + (model.offset_ps - t0 + intercept) / (1.0 - slope);
    let updated = ClockModel {
        offset_ps: new_offset,
        drift_ppm: (new_period / model.nominal_period_ps - 1.0) * 1e6,
        residual_rms_ps: model.residual_rms_ps,
        nominal_period_ps: model.nominal_period_ps,
    };
    (updated, rms)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    pub pulse_index: u64,
    pub detector: Detector,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GateResult {
    pub assignments: Vec<Assignment>,
    pub rejected: usize,
}

/// Pulse index of `tag` if it falls inside the gate.
pub fn gate_tag(clock: &ClockModel, gate: &GateConfig, tag: &TimeTag) -> Option<u64> {
    let (n, r) = clock.position(tag.time_ps as f64);
    (n >= 0 && r.abs() <= gate.gate_width_ps / 2.0).then_some(n as u64)
}

/// Maps tags to pulse slots and drops those outside the acceptance window.
pub fn assign_and_gate(tags: &[TimeTag], clock: &ClockModel, gate: &GateConfig) -> GateResult {
    let mut out = GateResult::default();
    for tag in tags {
        match gate_tag(clock, gate, tag) {
            Some(pulse_index) => out.assignments.push(Assignment { pulse_index, detector: tag.detector }),
            None => out.rejected += 1,
        }
    }
    out
}
