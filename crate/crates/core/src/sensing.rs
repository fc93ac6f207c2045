//! Gas-sensor mask detection.
//!
//! A worn mask traps exhaled breath, so eCO2 and TVOC both rise. The
//! detector averages the last `window` samples and compares each mean to
//! its threshold (strictly greater than).

use std::collections::VecDeque;
use std::io::Read;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::{Keyed, Tag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GasSample {
    pub t: u64,
    /// ppm
    pub eco2: f64,
    /// ppb
    pub tvoc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    #[default]
    And,
    Or,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub window: usize,
    pub eco2_threshold: f64,
    pub tvoc_threshold: f64,
    pub combine: Combine,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig { window: 10, eco2_threshold: 500.0, tvoc_threshold: 50.0, combine: Combine::And }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.window == 0 {
            return Err("window must be at least 1".into());
        }
        if !(self.eco2_threshold > 0.0 && self.tvoc_threshold > 0.0) {
            return Err("thresholds must be positive".into());
        }
        Ok(())
    }

    /// The decision rule applied to window means.
    pub fn decide(&self, eco2_mean: f64, tvoc_mean: f64) -> bool {
        let (a, b) = (eco2_mean > self.eco2_threshold, tvoc_mean > self.tvoc_threshold);
        match self.combine {
            Combine::And => a && b,
            Combine::Or => a || b,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Detector {
    config: DetectorConfig,
    buf: VecDeque<GasSample>,
    dropped: u64,
}

impl Detector {
    pub fn new(config: DetectorConfig) -> Self {
        let cap = config.window;
        Detector { config, buf: VecDeque::with_capacity(cap), dropped: 0 }
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    /// Samples rejected as non-finite or negative.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// Means over the current window, once it is full.
    pub fn window_means(&self) -> Option<(f64, f64)> {
        if self.buf.len() < self.config.window {
            return None;
        }
        let n = self.buf.len() as f64;
        let e = self.buf.iter().map(|s| s.eco2).sum::<f64>() / n;
        let t = self.buf.iter().map(|s| s.tvoc).sum::<f64>() / n;
        Some((e, t))
    }

    /// Adds a sample and, once the window is full, returns the mask bit.
    pub fn push_and_detect(&mut self, sample: GasSample) -> Option<bool> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(sample.eco2) || !ok(sample.tvoc) {
            self.dropped += 1;
            log::warn!("sample t={} dropped: eco2={} tvoc={}", sample.t, sample.eco2, sample.tvoc);
            return None;
        }
        if self.buf.len() == self.config.window {
            self.buf.pop_front();
        }
        self.buf.push_back(sample);
        self.window_means().map(|(e, t)| self.config.decide(e, t))
    }
}

/// Runs a fresh detector over a stream; one entry per sample.
pub fn detect_all(config: &DetectorConfig, samples: &[GasSample]) -> Vec<Option<bool>> {
    let mut d = Detector::new(config.clone());
    samples.iter().map(|&s| d.push_and_detect(s)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamParams {
    pub ambient_eco2: f64,
    pub ambient_tvoc: f64,
    pub worn_eco2: f64,
    pub worn_tvoc: f64,
    pub eco2_sd: f64,
    pub tvoc_sd: f64,
}

impl Default for StreamParams {
    fn default() -> Self {
        StreamParams {
            ambient_eco2: 400.0,
            ambient_tvoc: 5.0,
            worn_eco2: 650.0,
            worn_tvoc: 70.0,
            eco2_sd: 15.0,
            tvoc_sd: 5.0,
        }
    }
}

/// `(worn, samples)` segments, played in order.
pub type Schedule = [(bool, usize)];

/// Synthetic sensor readings for a wear schedule. Readings are clamped at
/// zero, as the sensor cannot report negative concentrations.
pub fn synth_stream(schedule: &Schedule, params: &StreamParams, seed: u64) -> Vec<GasSample> {
    let mut rng = Keyed::new(seed).stream(Tag::Sensor, &[]);
    let e_noise = Normal::new(0.0, params.eco2_sd).expect("eco2_sd must be finite and non-negative");
    let t_noise = Normal::new(0.0, params.tvoc_sd).expect("tvoc_sd must be finite and non-negative");
    let mut out = Vec::with_capacity(schedule.iter().map(|s| s.1).sum());
    for &(worn, len) in schedule {
        let (e, t) = if worn {
            (params.worn_eco2, params.worn_tvoc)
        } else {
            (params.ambient_eco2, params.ambient_tvoc)
        };
        for _ in 0..len {
            let idx = out.len() as u64;
            out.push(GasSample {
                t: idx,
                eco2: (e + e_noise.sample(&mut rng)).max(0.0),
                tvoc: (t + t_noise.sample(&mut rng)).max(0.0),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayWarning {
    pub line: u64,
    pub message: String,
}

/// Reads a replay CSV with header `t,eco2_ppm,tvoc_ppb`. Malformed rows are
/// skipped and reported by line number.
pub fn read_replay<R: Read>(r: R) -> Result<(Vec<GasSample>, Vec<ReplayWarning>), csv::Error> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(r);
    let mut samples = Vec::new();
    let mut warnings = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let parsed = (|| {
            if rec.len() != 3 {
                return Err(format!("expected 3 fields, found {}", rec.len()));
            }
            let t: u64 = rec[0].parse().map_err(|e| format!("t: {e}"))?;
            let eco2: f64 = rec[1].parse().map_err(|e| format!("eco2_ppm: {e}"))?;
            let tvoc: f64 = rec[2].parse().map_err(|e| format!("tvoc_ppb: {e}"))?;
            if !(eco2.is_finite() && tvoc.is_finite() && eco2 >= 0.0 && tvoc >= 0.0) {
                return Err("readings must be finite and non-negative".to_string());
            }
            Ok(GasSample { t, eco2, tvoc })
        })();
        match parsed {
            Ok(s) => samples.push(s),
            Err(message) => {
                log::warn!("replay line {line}: {message}");
                warnings.push(ReplayWarning { line, message });
            }
        }
    }
    Ok((samples, warnings))
}

pub fn write_replay<W: std::io::Write>(w: W, samples: &[GasSample]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "eco2_ppm", "tvoc_ppb"])?;
    for s in samples {
        out.write_record(&[s.t.to_string(), s.eco2.to_string(), s.tvoc.to_string()])?;
    }
    out.flush()?;
    Ok(())
}
