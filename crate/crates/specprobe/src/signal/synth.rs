//! Synthetic band-structured EEG-like data.
//!
//! Each trial is 1/f-shaped background noise plus, per class rule, one
//! band-limited oscillation at a randomly chosen DFT-bin frequency inside the
//! rule's band. Placing tones exactly on analysis bins keeps per-trial band
//! power an exact function of the rule amplitude, which is what makes the
//! downstream perturbation claims testable against ground truth.
//!
//! Generation is a pure function of `(config, seed)`: trial `t` draws all of
//! its randomness from the substream `(seed, domain::SYNTH, t)` in a fixed
//! order (noise phases channel-major over bins, then per rule the tone bin
//! followed by its phases).

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::par;
use crate::rng::{self, domain};

use super::{Dataset, SignalError, Trial};

/// 1/f background noise: per-bin tone amplitude `level * (1 Hz / f)^slope`
/// with an independent uniform phase per channel and bin. `level = 0`
/// disables the background entirely.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NoiseConfig {
    pub level: f64,
    pub slope: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            level: 0.1,
            slope: 1.0,
        }
    }
}

/// One band-limited oscillation contributed to every trial of a class.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BandRule {
    /// Frequency band in Hz; the tone lands on a DFT bin inside it.
    pub band: (f64, f64),
    /// Channel subset the tone is written to; `None` means all channels.
    pub channels: Option<Vec<usize>>,
    /// Tone amplitude (multiplier of the unit base amplitude).
    pub amplitude: f64,
    /// Shared phase across the channel subset when true, independent otherwise.
    pub phase_locked: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SynthConfig {
    pub n_trials_per_class: usize,
    pub channels: usize,
    pub duration_s: f64,
    pub sample_rate: f64,
    pub noise: NoiseConfig,
    /// Outer index is the class label.
    pub class_rules: Vec<Vec<BandRule>>,
}

impl SynthConfig {
    /// Trial length in samples (duration rounded to the nearest sample).
    pub fn time_samples(&self) -> usize {
        (self.duration_s * self.sample_rate).round() as usize
    }

    pub fn n_classes(&self) -> usize {
        self.class_rules.len()
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if self.n_trials_per_class == 0 || self.class_rules.is_empty() || self.channels == 0 {
            return Err(SignalError::EmptySynthConfig);
        }
        if !(self.sample_rate > 0.0) {
            return Err(SignalError::BadSampleRate(self.sample_rate));
        }
        let time = self.time_samples();
        if time < 2 {
            return Err(SignalError::EmptyTrial);
        }
        let nyquist = self.sample_rate / 2.0;
        for rules in &self.class_rules {
            for rule in rules {
                let (lo, hi) = rule.band;
                if !(lo > 0.0 && lo < hi && hi < nyquist) {
                    return Err(SignalError::InvalidBand { lo, hi, nyquist });
                }
                if !(rule.amplitude > 0.0) {
                    return Err(SignalError::BadMultiplier(rule.amplitude));
                }
                if band_bins(lo, hi, time, self.sample_rate).is_empty() {
                    return Err(SignalError::EmptyBand {
                        lo,
                        hi,
                        time,
                        sample_rate: self.sample_rate,
                    });
                }
                if let Some(subset) = &rule.channels {
                    for &c in subset {
                        if c >= self.channels {
                            return Err(SignalError::BadChannelIndex {
                                channel: c,
                                channels: self.channels,
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// DFT bins `1..=time/2` whose frequency lies in `[lo, hi]` Hz.
pub fn band_bins(lo: f64, hi: f64, time: usize, sample_rate: f64) -> Vec<usize> {
    let bin_hz = sample_rate / time as f64;
    (1..=time / 2)
        .filter(|&k| {
            let f = k as f64 * bin_hz;
            f >= lo && f <= hi
        })
        .collect()
}

/// Generate a dataset deterministically from `(cfg, seed)`.
///
/// Trials are ordered class-major: all of class 0, then class 1, and so on.
pub fn generate_synthetic_dataset(cfg: &SynthConfig, seed: u64) -> Result<Dataset, SignalError> {
    cfg.validate()?;
    let time = cfg.time_samples();
    let n_total = cfg.n_trials_per_class * cfg.n_classes();

    let trials: Vec<Trial> = par::map_indexed(n_total, |ordinal| {
        let class = ordinal / cfg.n_trials_per_class;
        generate_trial(cfg, seed, ordinal as u64, class, time)
    });

    let mut metadata = BTreeMap::new();
    metadata.insert("generator".to_string(), "band-synth-v1".to_string());
    metadata.insert("seed".to_string(), seed.to_string());
    metadata.insert(
        "generator_config".to_string(),
        serde_json::to_string(cfg).expect("config serializes"),
    );
    Dataset::new(trials, cfg.n_classes(), metadata)
}

fn generate_trial(cfg: &SynthConfig, seed: u64, ordinal: u64, class: usize, time: usize) -> Trial {
    let mut rng = rng::substream(seed, domain::SYNTH, ordinal);
    let mut buf = Array2::<f64>::zeros((cfg.channels, time));
    let bin_hz = cfg.sample_rate / time as f64;

    if cfg.noise.level > 0.0 {
        for c in 0..cfg.channels {
            for k in 1..=time / 2 {
                let phase = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                let freq_hz = k as f64 * bin_hz;
                let amp = cfg.noise.level * freq_hz.powf(-cfg.noise.slope);
                add_tone(buf.row_mut(c).into_slice().unwrap(), k, time, amp, phase);
            }
        }
    }

    for rule in &cfg.class_rules[class] {
        let bins = band_bins(rule.band.0, rule.band.1, time, cfg.sample_rate);
        let k = bins[rng.random_range(0..bins.len())];
        let all_channels: Vec<usize> = (0..cfg.channels).collect();
        let subset = rule.channels.as_deref().unwrap_or(&all_channels);
        let locked_phase = if rule.phase_locked {
            Some(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
        } else {
            None
        };
        for &c in subset {
            let phase = locked_phase.unwrap_or_else(|| {
                rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)
            });
            add_tone(
                buf.row_mut(c).into_slice().unwrap(),
                k,
                time,
                rule.amplitude,
                phase,
            );
        }
    }

    let data = buf.mapv(|v| v as f32);
    Trial::new(data, cfg.sample_rate, class).expect("synthesized trial is valid")
}

/// Accumulate `amp * cos(2*pi*k*t/T + phase)` via complex rotation; the
/// drift over desk-scale lengths is far below `f32` resolution.
fn add_tone(row: &mut [f64], k: usize, time: usize, amp: f64, phase: f64) {
    let omega = 2.0 * std::f64::consts::PI * k as f64 / time as f64;
    let (rot_s, rot_c) = omega.sin_cos();
    let (mut s, mut c) = phase.sin_cos();
    for v in row.iter_mut() {
        *v += amp * c;
        let (nc, ns) = (c * rot_c - s * rot_s, s * rot_c + c * rot_s);
        c = nc;
        s = ns;
    }
}
