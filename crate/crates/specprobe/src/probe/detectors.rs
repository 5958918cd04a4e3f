//! Analytic reference detectors for validating the perturbation pipeline.
//!
//! These are hand-built activation sources with known spectral behavior, not
//! trained networks: the quadrature detector responds to band amplitude but
//! is invariant to phase, while the matched cosine filter is maximally phase
//! sensitive. Running the correlation pipelines against them checks the
//! pipeline's directionality without involving training.

use ndarray::{Array2, ArrayView2};

use crate::net::{ActivationMap, NetError};

use super::ActivationProbe;

fn hann(i: usize, len: usize) -> f64 {
    let x = std::f64::consts::PI * i as f64 / (len - 1) as f64;
    x.sin() * x.sin()
}

fn correlate(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    let out_len = signal.len() - kernel.len() + 1;
    (0..out_len)
        .map(|j| {
            kernel
                .iter()
                .zip(&signal[j..j + kernel.len()])
                .map(|(k, s)| k * s)
                .sum()
        })
        .collect()
}

/// Hann-windowed quadrature pair at one frequency; unit activations are the
/// channel-averaged sum of squared cosine and sine responses, so they track
/// band amplitude but not phase.
#[derive(Debug, Clone)]
pub struct QuadratureBandPowerDetector {
    cos_kernel: Vec<f64>,
    sin_kernel: Vec<f64>,
    channels: usize,
    window: usize,
}

impl QuadratureBandPowerDetector {
    pub fn new(
        freq_hz: f64,
        sample_rate: f64,
        kernel_len: usize,
        channels: usize,
        window: usize,
    ) -> Self {
        let omega = 2.0 * std::f64::consts::PI * freq_hz / sample_rate;
        let cos_kernel = (0..kernel_len)
            .map(|i| hann(i, kernel_len) * (omega * i as f64).cos())
            .collect();
        let sin_kernel = (0..kernel_len)
            .map(|i| hann(i, kernel_len) * (omega * i as f64).sin())
            .collect();
        QuadratureBandPowerDetector {
            cos_kernel,
            sin_kernel,
            channels,
            window,
        }
    }
}

impl ActivationProbe for QuadratureBandPowerDetector {
    fn input_geometry(&self) -> (usize, usize) {
        (self.channels, self.window)
    }

    fn available_layers(&self) -> Vec<usize> {
        vec![1]
    }

    fn activations(
        &self,
        crop: &ArrayView2<f64>,
        _layers: &[usize],
    ) -> Result<Vec<ActivationMap>, NetError> {
        let expected = self.input_geometry();
        let found = (crop.nrows(), crop.ncols());
        if expected != found {
            return Err(NetError::ShapeMismatch { expected, found });
        }
        let units = self.window - self.cos_kernel.len() + 1;
        let mut values = Array2::zeros((1, units));
        for c in 0..self.channels {
            let row = crop.row(c);
            let signal = row.as_slice().expect("contiguous");
            let qc = correlate(signal, &self.cos_kernel);
            let qs = correlate(signal, &self.sin_kernel);
            for (j, v) in values.row_mut(0).iter_mut().enumerate() {
                *v += (qc[j] * qc[j] + qs[j] * qs[j]) / self.channels as f64;
            }
        }
        Ok(vec![ActivationMap {
            layer: 1,
            trial: 0,
            values,
        }])
    }
}

/// A single linear cosine-template filter with no pooling; its unit
/// activations shift with the input phase, so a phase perturbation at the
/// template frequency decorrelates them.
#[derive(Debug, Clone)]
pub struct MatchedCosineDetector {
    kernel: Vec<f64>,
    channels: usize,
    window: usize,
}

impl MatchedCosineDetector {
    pub fn new(
        freq_hz: f64,
        sample_rate: f64,
        kernel_len: usize,
        channels: usize,
        window: usize,
    ) -> Self {
        let omega = 2.0 * std::f64::consts::PI * freq_hz / sample_rate;
        let kernel = (0..kernel_len).map(|i| (omega * i as f64).cos()).collect();
        MatchedCosineDetector {
            kernel,
            channels,
            window,
        }
    }
}

impl ActivationProbe for MatchedCosineDetector {
    fn input_geometry(&self) -> (usize, usize) {
        (self.channels, self.window)
    }

    fn available_layers(&self) -> Vec<usize> {
        vec![1]
    }

    fn activations(
        &self,
        crop: &ArrayView2<f64>,
        _layers: &[usize],
    ) -> Result<Vec<ActivationMap>, NetError> {
        let expected = self.input_geometry();
        let found = (crop.nrows(), crop.ncols());
        if expected != found {
            return Err(NetError::ShapeMismatch { expected, found });
        }
        let units = self.window - self.kernel.len() + 1;
        let mut values = Array2::zeros((1, units));
        for c in 0..self.channels {
            let row = crop.row(c);
            let q = correlate(row.as_slice().expect("contiguous"), &self.kernel);
            for (j, v) in values.row_mut(0).iter_mut().enumerate() {
                *v += q[j] / self.channels as f64;
            }
        }
        Ok(vec![ActivationMap {
            layer: 1,
            trial: 0,
            values,
        }])
    }
}
