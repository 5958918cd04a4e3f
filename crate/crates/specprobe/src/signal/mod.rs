//! Trials, datasets, preprocessing and cropping.
//!
//! A [`Trial`] is a labeled `channels x time` matrix sampled at a fixed rate;
//! a [`Dataset`] is an ordered collection of trials with a shared geometry.
//! Samples are stored as `f32` (the on-disk format, see [`io`]); all analysis
//! downstream widens to `f64`.

mod synth;

pub mod io;

pub use synth::{generate_synthetic_dataset, BandRule, NoiseConfig, SynthConfig};

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("trial must have at least one channel and one sample")]
    EmptyTrial,
    #[error("sample rate must be positive, got {0}")]
    BadSampleRate(f64),
    #[error("trial contains non-finite samples")]
    NonFiniteSamples,
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("trial {index} has shape {found:?}, expected {expected:?}")]
    InconsistentTrialShape {
        index: usize,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("trial {index} has sample rate {found}, expected {expected}")]
    InconsistentSampleRate {
        index: usize,
        expected: f64,
        found: f64,
    },
    #[error("dataset must contain at least one trial")]
    EmptyDataset,
    #[error("crop window {window} exceeds trial length {time}")]
    WindowExceedsLength { window: usize, time: usize },
    #[error("crop window and stride must be at least 1")]
    BadCropGeometry,
    #[error("band [{lo}, {hi}] Hz invalid: bounds must satisfy 0 < lo < hi < {nyquist} (Nyquist)")]
    InvalidBand { lo: f64, hi: f64, nyquist: f64 },
    #[error("band [{lo}, {hi}] Hz contains no DFT bin at {time} samples / {sample_rate} Hz")]
    EmptyBand {
        lo: f64,
        hi: f64,
        time: usize,
        sample_rate: f64,
    },
    #[error("band amplitude multiplier must be positive, got {0}")]
    BadMultiplier(f64),
    #[error("rule references channel {channel}, dataset has {channels}")]
    BadChannelIndex { channel: usize, channels: usize },
    #[error("synthesis needs at least one trial per class and one class")]
    EmptySynthConfig,
}

/// One labeled multichannel segment: `channels x time` samples at `sample_rate` Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    data: Array2<f32>,
    sample_rate: f64,
    label: usize,
}

impl Trial {
    pub fn new(data: Array2<f32>, sample_rate: f64, label: usize) -> Result<Self, SignalError> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(SignalError::EmptyTrial);
        }
        if !(sample_rate > 0.0) {
            return Err(SignalError::BadSampleRate(sample_rate));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SignalError::NonFiniteSamples);
        }
        Ok(Trial {
            data,
            sample_rate,
            label,
        })
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn time(&self) -> usize {
        self.data.ncols()
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn label(&self) -> usize {
        self.label
    }

    /// Samples widened to `f64`, for numeric pipelines.
    pub fn data_f64(&self) -> Array2<f64> {
        self.data.mapv(f64::from)
    }
}

/// Ordered trials with shared geometry plus free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    trials: Vec<Trial>,
    n_classes: usize,
    metadata: BTreeMap<String, String>,
}

impl Dataset {
    pub fn new(
        trials: Vec<Trial>,
        n_classes: usize,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self, SignalError> {
        if trials.is_empty() {
            return Err(SignalError::EmptyDataset);
        }
        let expected = (trials[0].channels(), trials[0].time());
        let rate = trials[0].sample_rate();
        for (index, t) in trials.iter().enumerate() {
            let found = (t.channels(), t.time());
            if found != expected {
                return Err(SignalError::InconsistentTrialShape {
                    index,
                    expected,
                    found,
                });
            }
            if t.sample_rate() != rate {
                return Err(SignalError::InconsistentSampleRate {
                    index,
                    expected: rate,
                    found: t.sample_rate(),
                });
            }
            if t.label() >= n_classes {
                return Err(SignalError::LabelOutOfRange {
                    label: t.label(),
                    n_classes,
                });
            }
        }
        Ok(Dataset {
            trials,
            n_classes,
            metadata,
        })
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn channels(&self) -> usize {
        self.trials[0].channels()
    }

    pub fn time(&self) -> usize {
        self.trials[0].time()
    }

    pub fn sample_rate(&self) -> f64 {
        self.trials[0].sample_rate()
    }

    /// Apply [`common_average_reference`] to every trial.
    pub fn common_average_referenced(&self) -> Dataset {
        let trials = self
            .trials
            .iter()
            .map(|t| common_average_reference(t).trial)
            .collect();
        Dataset {
            trials,
            n_classes: self.n_classes,
            metadata: self.metadata.clone(),
        }
    }
}

/// Output of [`common_average_reference`]. `single_channel` warns that the
/// input had one channel, in which case the output is identically zero.
#[derive(Debug, Clone)]
pub struct CarResult {
    pub trial: Trial,
    pub single_channel: bool,
}

/// Subtract the across-channel mean from every time point.
///
/// The mean over channels of the output is zero at every time point (up to
/// `f32` rounding).
pub fn common_average_reference(trial: &Trial) -> CarResult {
    let channels = trial.channels();
    let mut out = trial.data.mapv(f64::from);
    let means = out.mean_axis(Axis(0)).expect("at least one channel");
    for mut row in out.rows_mut() {
        row -= &means;
    }
    let data = out.mapv(|v| v as f32);
    CarResult {
        trial: Trial {
            data,
            sample_rate: trial.sample_rate,
            label: trial.label,
        },
        single_channel: channels == 1,
    }
}

/// Contiguous sliding crops of `window` samples starting at offsets
/// `0, stride, 2*stride, ...`; `stride = 1` gives maximum overlap.
pub fn crop_sliding(
    trial: &Trial,
    window: usize,
    stride: usize,
) -> Result<Vec<Array2<f32>>, SignalError> {
    if window == 0 || stride == 0 {
        return Err(SignalError::BadCropGeometry);
    }
    if window > trial.time() {
        return Err(SignalError::WindowExceedsLength {
            window,
            time: trial.time(),
        });
    }
    let count = (trial.time() - window) / stride + 1;
    let crops = (0..count)
        .map(|i| {
            let start = i * stride;
            trial
                .data
                .slice(ndarray::s![.., start..start + window])
                .to_owned()
        })
        .collect();
    Ok(crops)
}
