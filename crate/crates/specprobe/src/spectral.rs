//! Real DFT analysis/synthesis and spectral perturbation of trials.
//!
//! Convention: the forward transform is unnormalized and the inverse carries
//! the 1/T factor. On top of that, [`Spectrum`] stores *tone* amplitudes: a
//! unit cosine at bin `k` has amplitude 1.0 there, and a constant signal `c`
//! has amplitude `|c|` at bin 0. Phases live in `(-pi, pi]`; bins 0 and
//! Nyquist are real-valued by construction, so their phase is 0 or pi and
//! phase shifts do not apply to them.
//!
//! The synthesis identity is
//!
//! ```text
//! x[t] = A[0]*cos(th[0]) + sum_k A[k]*cos(2*pi*k*t/T + th[k]) + A[ny]*cos(pi*t + th[ny])
//! ```
//!
//! with the Nyquist term present only for even T, and Parseval's identity
//! reads `sum x^2 = T*(A0^2 + 0.5*sum_mid Ak^2 + Any^2)`.

use std::cell::RefCell;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::signal::Trial;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("input contains non-finite samples")]
    NonFiniteInput,
    #[error("need at least 2 samples, got {0}")]
    TimeTooShort(usize),
    #[error("{context}: expected {expected:?}, got {found:?}")]
    DimensionMismatch {
        context: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("inconsistent spectrum: {0}")]
    InconsistentSpectrum(String),
    #[error("perturbation factors must be positive and finite")]
    BadFactors,
    #[error("perturbation shifts must be finite")]
    BadShifts,
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan_forward(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

fn plan_inverse(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(len))
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_phase(x: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = x - two_pi * (x / two_pi).round();
    if w <= -std::f64::consts::PI {
        w += two_pi;
    }
    w
}

/// Per-channel amplitude and phase arrays of a real signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// `channels x bins` tone amplitudes, all non-negative.
    amplitudes: Array2<f64>,
    /// `channels x bins` phases in `(-pi, pi]`.
    phases: Array2<f64>,
    /// Original signal length T.
    length: usize,
    sample_rate: f64,
}

impl Spectrum {
    pub fn amplitudes(&self) -> &Array2<f64> {
        &self.amplitudes
    }

    pub fn phases(&self) -> &Array2<f64> {
        &self.phases
    }

    pub fn channels(&self) -> usize {
        self.amplitudes.nrows()
    }

    /// Number of bins, `floor(T/2) + 1`.
    pub fn bins(&self) -> usize {
        self.amplitudes.ncols()
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// Frequency of a bin in Hz.
    pub fn frequency_hz(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate / self.length as f64
    }

    /// True when the last bin is the Nyquist bin (even T).
    pub fn has_nyquist(&self) -> bool {
        self.length % 2 == 0
    }

    /// Spectrum with amplitudes scaled elementwise by `pert` (phases kept).
    pub fn with_amplitude_factors(
        &self,
        pert: &AmplitudePerturbation,
    ) -> Result<Spectrum, SpectralError> {
        let expected = (self.bins(), self.channels());
        let found = (pert.factors.nrows(), pert.factors.ncols());
        if expected != found {
            return Err(SpectralError::DimensionMismatch {
                context: "amplitude factors (bins x channels)",
                expected,
                found,
            });
        }
        let mut out = self.clone();
        for c in 0..self.channels() {
            for k in 0..self.bins() {
                out.amplitudes[[c, k]] *= pert.factors[[k, c]];
            }
        }
        Ok(out)
    }

    /// Spectrum with every channel's phase at bin `k` advanced by `shifts[k]`
    /// (wrapped). Bins 0 and Nyquist are skipped: they are real-valued and
    /// carry no phase to shift.
    pub fn with_phase_shifts(&self, pert: &PhasePerturbation) -> Result<Spectrum, SpectralError> {
        if pert.shifts.len() != self.bins() {
            return Err(SpectralError::DimensionMismatch {
                context: "phase shifts (bins)",
                expected: (self.bins(), 1),
                found: (pert.shifts.len(), 1),
            });
        }
        let mut out = self.clone();
        let mid_end = if self.has_nyquist() {
            self.bins() - 1
        } else {
            self.bins()
        };
        for c in 0..self.channels() {
            for k in 1..mid_end {
                out.phases[[c, k]] = wrap_phase(self.phases[[c, k]] + pert.shifts[k]);
            }
        }
        Ok(out)
    }
}

/// Multiplicative per-bin, per-channel amplitude factors.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudePerturbation {
    /// `bins x channels`, all positive and finite.
    factors: Array2<f64>,
}

impl AmplitudePerturbation {
    pub fn new(factors: Array2<f64>) -> Result<Self, SpectralError> {
        if factors.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(SpectralError::BadFactors);
        }
        Ok(AmplitudePerturbation { factors })
    }

    /// Identity perturbation (all factors 1).
    pub fn identity(bins: usize, channels: usize) -> Self {
        AmplitudePerturbation {
            factors: Array2::ones((bins, channels)),
        }
    }

    /// Sample factors from N(1, sigma^2), independently per bin and channel.
    /// Negative tail draws are clamped to a small positive floor so that
    /// amplitudes stay non-negative.
    pub fn sample(bins: usize, channels: usize, sigma: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(1.0, sigma).expect("sigma validated by caller");
        let factors = Array2::from_shape_fn((bins, channels), |_| {
            normal.sample(rng).max(1e-6)
        });
        AmplitudePerturbation { factors }
    }

    pub fn factors(&self) -> &Array2<f64> {
        &self.factors
    }
}

/// One phase shift per bin, shared by all channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePerturbation {
    /// Radians, wrapped into `(-pi, pi]`.
    shifts: Vec<f64>,
}

impl PhasePerturbation {
    pub fn new(shifts: Vec<f64>) -> Result<Self, SpectralError> {
        if shifts.iter().any(|v| !v.is_finite()) {
            return Err(SpectralError::BadShifts);
        }
        Ok(PhasePerturbation {
            shifts: shifts.into_iter().map(wrap_phase).collect(),
        })
    }

    pub fn identity(bins: usize) -> Self {
        PhasePerturbation {
            shifts: vec![0.0; bins],
        }
    }

    /// Sample shifts from N(0, sigma^2), wrapped into `(-pi, pi]`.
    pub fn sample(bins: usize, sigma: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, sigma).expect("sigma validated by caller");
        let shifts = (0..bins).map(|_| wrap_phase(normal.sample(rng))).collect();
        PhasePerturbation { shifts }
    }

    pub fn shifts(&self) -> &[f64] {
        &self.shifts
    }
}

/// Forward DFT of every channel of a trial.
pub fn dft_forward(trial: &Trial) -> Result<Spectrum, SpectralError> {
    forward_f64(&trial.data_f64(), trial.sample_rate())
}

/// Forward DFT of raw `channels x time` data.
pub fn forward_f64(data: &Array2<f64>, sample_rate: f64) -> Result<Spectrum, SpectralError> {
    let time = data.ncols();
    if time < 2 {
        return Err(SpectralError::TimeTooShort(time));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(SpectralError::NonFiniteInput);
    }
    let channels = data.nrows();
    let bins = time / 2 + 1;
    let fft = plan_forward(time);
    let mut amplitudes = Array2::zeros((channels, bins));
    let mut phases = Array2::zeros((channels, bins));
    let t = time as f64;
    let mut buf: Vec<Complex64> = Vec::with_capacity(time);
    for c in 0..channels {
        buf.clear();
        buf.extend(data.row(c).iter().map(|&v| Complex64::new(v, 0.0)));
        fft.process(&mut buf);
        // Bin 0 and (for even T) Nyquist are real: fold the sign into the phase.
        let x0 = buf[0].re;
        amplitudes[[c, 0]] = x0.abs() / t;
        phases[[c, 0]] = if x0 < 0.0 { std::f64::consts::PI } else { 0.0 };
        let mid_end = if time % 2 == 0 { bins - 1 } else { bins };
        for k in 1..mid_end {
            amplitudes[[c, k]] = 2.0 * buf[k].norm() / t;
            phases[[c, k]] = if buf[k].norm() == 0.0 {
                0.0
            } else {
                wrap_phase(buf[k].arg())
            };
        }
        if time % 2 == 0 {
            let xn = buf[bins - 1].re;
            amplitudes[[c, bins - 1]] = xn.abs() / t;
            phases[[c, bins - 1]] = if xn < 0.0 { std::f64::consts::PI } else { 0.0 };
        }
    }
    Ok(Spectrum {
        amplitudes,
        phases,
        length: time,
        sample_rate,
    })
}

/// Inverse DFT back to `channels x time` samples.
pub fn dft_inverse(spectrum: &Spectrum) -> Result<Array2<f64>, SpectralError> {
    let time = spectrum.length;
    let bins = spectrum.bins();
    if bins != time / 2 + 1 {
        return Err(SpectralError::InconsistentSpectrum(format!(
            "{} bins for length {}",
            bins, time
        )));
    }
    if spectrum
        .amplitudes
        .iter()
        .chain(spectrum.phases.iter())
        .any(|v| !v.is_finite())
    {
        return Err(SpectralError::InconsistentSpectrum(
            "non-finite amplitude or phase".into(),
        ));
    }
    let channels = spectrum.channels();
    let ifft = plan_inverse(time);
    let t = time as f64;
    let mut out = Array2::zeros((channels, time));
    let mut buf = vec![Complex64::new(0.0, 0.0); time];
    for c in 0..channels {
        buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        buf[0] = Complex64::from_polar(spectrum.amplitudes[[c, 0]] * t, spectrum.phases[[c, 0]]);
        let mid_end = if time % 2 == 0 { bins - 1 } else { bins };
        for k in 1..mid_end {
            let z = Complex64::from_polar(
                spectrum.amplitudes[[c, k]] * t / 2.0,
                spectrum.phases[[c, k]],
            );
            buf[k] = z;
            buf[time - k] = z.conj();
        }
        if time % 2 == 0 {
            buf[bins - 1] = Complex64::from_polar(
                spectrum.amplitudes[[c, bins - 1]] * t,
                spectrum.phases[[c, bins - 1]],
            );
        }
        ifft.process(&mut buf);
        for (dst, z) in out.row_mut(c).iter_mut().zip(buf.iter()) {
            *dst = z.re / t;
        }
    }
    Ok(out)
}

fn rebuild_trial(trial: &Trial, data: Array2<f64>) -> Trial {
    let quantized = data.mapv(|v| v as f32);
    Trial::new(quantized, trial.sample_rate(), trial.label())
        .expect("reconstructed trial is finite and matches input geometry")
}

/// Scale per-bin amplitudes by `pert` and reconstruct; phases, label and
/// sample rate are preserved.
pub fn apply_amplitude_perturbation(
    trial: &Trial,
    pert: &AmplitudePerturbation,
) -> Result<Trial, SpectralError> {
    let spectrum = dft_forward(trial)?.with_amplitude_factors(pert)?;
    Ok(rebuild_trial(trial, dft_inverse(&spectrum)?))
}

/// Shift every channel's phases by the shared per-bin shifts and
/// reconstruct; amplitudes, label and sample rate are preserved.
pub fn apply_phase_perturbation(
    trial: &Trial,
    pert: &PhasePerturbation,
) -> Result<Trial, SpectralError> {
    let spectrum = dft_forward(trial)?.with_phase_shifts(pert)?;
    Ok(rebuild_trial(trial, dft_inverse(&spectrum)?))
}
