//! Frequency-resolved perturbation correlations per analysis layer.
//!
//! The amplitude pipeline, per repetition: multiply every trial's per-bin,
//! per-channel amplitudes by factors drawn from N(1, sigma^2), reconstruct,
//! run the network on original and perturbed crops, take each filter's mean
//! activation difference over units, and correlate it with the factors across
//! trials per (bin, channel, filter). The absolute correlations, averaged
//! over filters, channels and repetitions, form the per-layer amplitude
//! correlation profile.
//!
//! The phase pipeline draws one shift per bin from N(0, sigma^2) (wrapped),
//! applies it to all channels equally, and replaces the mean difference with
//! the correlation between original and perturbed unit activations within a
//! filter; that statistic is then correlated across trials with the per-bin
//! shift statistic (|shift| by default, signed optionally).
//!
//! Degenerate (zero-variance) correlations enter the averages as 0 and are
//! counted separately, so dead filters stay visible without breaking totals.
//! Bins 0 and Nyquist never receive phase shifts (they are real-constrained),
//! so their phase cells stay empty.

pub mod detectors;
mod pearson;

pub use pearson::{pearson, Correlation, DEGENERACY_VARIANCE};

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{ActivationMap, NetError, Network};
use crate::par;
use crate::rng::{self, domain};
use crate::signal::Trial;
use crate::spectral::{
    dft_forward, dft_inverse, AmplitudePerturbation, PhasePerturbation, Spectrum, SpectralError,
};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("correlations over trials need at least 3 trials, got {0}")]
    TooFewTrials(usize),
    #[error("sequence lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("correlation needs at least 2 points, got {0}")]
    TooShort(usize),
    #[error("empty input")]
    EmptyInput,
    #[error("sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error("repetitions must be at least 1")]
    BadRepetitions,
    #[error("layer {0} not provided by this probe")]
    UnknownLayer(usize),
    #[error("trial {index}: geometry {found:?} incompatible with probe input {expected:?}")]
    Geometry {
        index: usize,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("tables are not index-compatible: {0}")]
    IncompatibleTables(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Anything that yields per-layer `filters x units` activation maps for a
/// crop. Implemented by [`Network`] (post-ELU analysis taps) and by the
/// analytic reference detectors in [`detectors`].
pub trait ActivationProbe: Sync {
    /// `(channels, window)` of accepted crops.
    fn input_geometry(&self) -> (usize, usize);
    /// Analysis layer ids this probe can tap, ascending.
    fn available_layers(&self) -> Vec<usize>;
    fn activations(
        &self,
        crop: &ArrayView2<f64>,
        layers: &[usize],
    ) -> Result<Vec<ActivationMap>, NetError>;
}

impl ActivationProbe for Network {
    fn input_geometry(&self) -> (usize, usize) {
        (self.spec().input_channels, self.spec().input_time)
    }

    fn available_layers(&self) -> Vec<usize> {
        (1..=self.spec().n_analysis_layers()).collect()
    }

    fn activations(
        &self,
        crop: &ArrayView2<f64>,
        layers: &[usize],
    ) -> Result<Vec<ActivationMap>, NetError> {
        Ok(self.forward(crop, layers)?.taps)
    }
}

/// Which crops of each trial feed the probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CropMode {
    /// One crop per trial at offset 0 (the whole trial at desk scale).
    #[default]
    First,
    /// All sliding crops; per-trial statistics are averaged over crops first.
    All,
}

/// Statistic correlated against the filter activation correlations in the
/// phase pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PhaseStat {
    /// |wrapped shift|: +s and -s degrade a phase-sensitive filter alike.
    #[default]
    Abs,
    /// The literal signed shift.
    Signed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationRunConfig {
    /// Analysis layers to tap; empty means every layer the probe offers.
    pub layers: Vec<usize>,
    pub repetitions: usize,
    pub amplitude_sigma: f64,
    pub phase_sigma: f64,
    pub phase_stat: PhaseStat,
    /// When set, only bins inside this band (Hz) are perturbed; amplitude
    /// factors outside are 1 and phase shifts 0.
    pub band_limit: Option<(f64, f64)>,
    pub crop_mode: CropMode,
    /// Stride for [`CropMode::All`].
    pub crop_stride: usize,
    /// Retain raw per-(bin, channel, filter) correlations and phase
    /// diagnostics (memory grows accordingly).
    pub keep_raw: bool,
    pub seed: u64,
}

impl Default for PerturbationRunConfig {
    fn default() -> Self {
        PerturbationRunConfig {
            layers: Vec::new(),
            repetitions: 5,
            amplitude_sigma: 0.02,
            phase_sigma: std::f64::consts::PI,
            phase_stat: PhaseStat::Abs,
            band_limit: None,
            crop_mode: CropMode::First,
            crop_stride: 1,
            keep_raw: false,
            seed: 0,
        }
    }
}

/// Accumulated absolute correlations for one (layer, bin) cell. Degenerate
/// raw correlations contribute 0 to the sum and are counted.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CorrelationEntry {
    pub sum_abs: f64,
    pub count: usize,
    pub degenerate: usize,
}

impl CorrelationEntry {
    pub fn mean_abs(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum_abs / self.count as f64
        }
    }

    pub fn computed(&self) -> bool {
        self.count > 0
    }

    pub fn add(&mut self, c: Correlation) {
        if c.degenerate {
            self.degenerate += 1;
        } else {
            self.sum_abs += c.r.abs();
        }
        self.count += 1;
    }

    fn merge(&mut self, other: &CorrelationEntry) {
        self.sum_abs += other.sum_abs;
        self.count += other.count;
        self.degenerate += other.degenerate;
    }
}

/// Mean absolute perturbation correlations indexed by (layer, bin).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    layers: Vec<usize>,
    bins: usize,
    /// Trial length the bins refer to.
    length: usize,
    sample_rate: f64,
    amp: Vec<Vec<CorrelationEntry>>,
    phase: Vec<Vec<CorrelationEntry>>,
}

impl CorrelationTable {
    pub fn new(layers: &[usize], bins: usize, length: usize, sample_rate: f64) -> Self {
        CorrelationTable {
            layers: layers.to_vec(),
            bins,
            length,
            sample_rate,
            amp: vec![vec![CorrelationEntry::default(); bins]; layers.len()],
            phase: vec![vec![CorrelationEntry::default(); bins]; layers.len()],
        }
    }

    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn frequency_hz(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate / self.length as f64
    }

    fn layer_pos(&self, layer: usize) -> Option<usize> {
        self.layers.iter().position(|&l| l == layer)
    }

    pub fn amp_entry(&self, layer: usize, bin: usize) -> Option<&CorrelationEntry> {
        self.layer_pos(layer).map(|p| &self.amp[p][bin])
    }

    pub fn phase_entry(&self, layer: usize, bin: usize) -> Option<&CorrelationEntry> {
        self.layer_pos(layer).map(|p| &self.phase[p][bin])
    }

    /// Mean absolute amplitude correlation at (layer, bin); 0 when absent.
    pub fn rho_amp(&self, layer: usize, bin: usize) -> f64 {
        self.amp_entry(layer, bin).map_or(0.0, |e| e.mean_abs())
    }

    pub fn rho_phase(&self, layer: usize, bin: usize) -> f64 {
        self.phase_entry(layer, bin).map_or(0.0, |e| e.mean_abs())
    }

    pub fn add_amp_raw(&mut self, layer: usize, bin: usize, c: Correlation) {
        let p = self.layer_pos(layer).expect("layer present");
        self.amp[p][bin].add(c);
    }

    pub fn add_phase_raw(&mut self, layer: usize, bin: usize, c: Correlation) {
        let p = self.layer_pos(layer).expect("layer present");
        self.phase[p][bin].add(c);
    }

    /// Mean of per-bin amplitude correlations over the computed bins.
    pub fn mean_rho_amp(&self, layer: usize) -> f64 {
        Self::mean_over(&self.amp[self.layer_pos(layer).expect("layer present")])
    }

    pub fn mean_rho_phase(&self, layer: usize) -> f64 {
        Self::mean_over(&self.phase[self.layer_pos(layer).expect("layer present")])
    }

    fn mean_over(entries: &[CorrelationEntry]) -> f64 {
        let computed: Vec<f64> = entries
            .iter()
            .filter(|e| e.computed())
            .map(|e| e.mean_abs())
            .collect();
        if computed.is_empty() {
            0.0
        } else {
            computed.iter().sum::<f64>() / computed.len() as f64
        }
    }

    fn band_bins(&self, lo: f64, hi: f64) -> impl Iterator<Item = usize> + '_ {
        (0..self.bins).filter(move |&b| {
            let f = self.frequency_hz(b);
            f >= lo && f <= hi
        })
    }

    pub fn band_mean_rho_amp(&self, layer: usize, lo: f64, hi: f64) -> f64 {
        let p = self.layer_pos(layer).expect("layer present");
        let entries: Vec<CorrelationEntry> =
            self.band_bins(lo, hi).map(|b| self.amp[p][b]).collect();
        Self::mean_over(&entries)
    }

    pub fn band_mean_rho_phase(&self, layer: usize, lo: f64, hi: f64) -> f64 {
        let p = self.layer_pos(layer).expect("layer present");
        let entries: Vec<CorrelationEntry> =
            self.band_bins(lo, hi).map(|b| self.phase[p][b]).collect();
        Self::mean_over(&entries)
    }

    /// Pool another table's raw counts into this one.
    pub fn merge(&mut self, other: &CorrelationTable) -> Result<(), ProbeError> {
        if self.layers != other.layers
            || self.bins != other.bins
            || self.length != other.length
            || self.sample_rate != other.sample_rate
        {
            return Err(ProbeError::IncompatibleTables(format!(
                "{:?}/{} vs {:?}/{}",
                self.layers, self.bins, other.layers, other.bins
            )));
        }
        for (mine, theirs) in self.amp.iter_mut().zip(&other.amp) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                a.merge(b);
            }
        }
        for (mine, theirs) in self.phase.iter_mut().zip(&other.phase) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                a.merge(b);
            }
        }
        Ok(())
    }

    /// RFC-4180 CSV (CRLF line endings) with one row per (layer, bin). Cells
    /// of a side that was never computed are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(
            "layer,bin_index,frequency_hz,rho_amp,rho_phase,n_degenerate_amp,n_degenerate_phase\r\n",
        );
        for (p, &layer) in self.layers.iter().enumerate() {
            for bin in 0..self.bins {
                let a = &self.amp[p][bin];
                let ph = &self.phase[p][bin];
                let rho_a = if a.computed() {
                    format!("{:.9}", a.mean_abs())
                } else {
                    String::new()
                };
                let rho_p = if ph.computed() {
                    format!("{:.9}", ph.mean_abs())
                } else {
                    String::new()
                };
                let deg_a = if a.computed() {
                    a.degenerate.to_string()
                } else {
                    String::new()
                };
                let deg_p = if ph.computed() {
                    ph.degenerate.to_string()
                } else {
                    String::new()
                };
                out.push_str(&format!(
                    "{layer},{bin},{:.6},{rho_a},{rho_p},{deg_a},{deg_p}\r\n",
                    self.frequency_hz(bin)
                ));
            }
        }
        out
    }
}

/// Pooled mean of absolute raw correlations across tables (for example from
/// several trained models); degenerate counts merge alongside.
pub fn aggregate_tables(tables: &[CorrelationTable]) -> Result<CorrelationTable, ProbeError> {
    let first = tables.first().ok_or(ProbeError::EmptyInput)?;
    let mut out = first.clone();
    for t in &tables[1..] {
        out.merge(t)?;
    }
    Ok(out)
}

/// One raw correlation before aggregation, kept when `keep_raw` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCorrelation {
    pub repetition: usize,
    pub layer: usize,
    pub bin: usize,
    /// `None` for phase correlations (shifts are shared across channels).
    pub channel: Option<usize>,
    pub filter: usize,
    pub correlation: Correlation,
}

#[derive(Debug)]
pub struct AmplitudeRun {
    pub table: CorrelationTable,
    pub raw: Option<Vec<RawCorrelation>>,
}

/// Per-repetition phase diagnostics: the sampled shifts and the inner
/// original-vs-perturbed activation correlations (degenerate entries as 0).
#[derive(Debug)]
pub struct PhaseInnerDiagnostics {
    /// Per repetition: `trials x bins` wrapped shifts.
    pub shifts: Vec<Array2<f64>>,
    /// Per repetition: layer -> `trials x filters` activation correlations.
    pub activation_correlations: Vec<BTreeMap<usize, Array2<f64>>>,
}

#[derive(Debug)]
pub struct PhaseRun {
    pub table: CorrelationTable,
    pub raw: Option<Vec<RawCorrelation>>,
    pub inner: Option<PhaseInnerDiagnostics>,
}

struct Prep {
    spectra: Vec<Spectrum>,
    layers: Vec<usize>,
    /// Filter count per layer, from a probe of the first crop.
    filters: BTreeMap<usize, usize>,
    channels: usize,
    window: usize,
    bins: usize,
    trial_time: usize,
    sample_rate: f64,
}

fn prepare<P: ActivationProbe>(
    probe: &P,
    trials: &[Trial],
    cfg: &PerturbationRunConfig,
    sigma: f64,
) -> Result<Prep, ProbeError> {
    if trials.len() < 3 {
        return Err(ProbeError::TooFewTrials(trials.len()));
    }
    if !(sigma > 0.0) {
        return Err(ProbeError::BadSigma(sigma));
    }
    if cfg.repetitions == 0 {
        return Err(ProbeError::BadRepetitions);
    }
    let (channels, window) = probe.input_geometry();
    for (index, t) in trials.iter().enumerate() {
        if t.channels() != channels || t.time() < window {
            return Err(ProbeError::Geometry {
                index,
                expected: (channels, window),
                found: (t.channels(), t.time()),
            });
        }
    }
    let available = probe.available_layers();
    let layers = if cfg.layers.is_empty() {
        available.clone()
    } else {
        for &l in &cfg.layers {
            if !available.contains(&l) {
                return Err(ProbeError::UnknownLayer(l));
            }
        }
        cfg.layers.clone()
    };
    let spectra: Vec<Spectrum> = {
        let results = par::map_slice(trials, dft_forward);
        results.into_iter().collect::<Result<_, _>>()?
    };
    let first_crops = trial_crops(&trials[0].data_f64(), cfg, window);
    let maps = probe.activations(&first_crops[0].view(), &layers)?;
    let filters: BTreeMap<usize, usize> = maps.iter().map(|m| (m.layer, m.values.nrows())).collect();
    Ok(Prep {
        spectra,
        layers,
        filters,
        channels,
        window,
        bins: trials[0].time() / 2 + 1,
        trial_time: trials[0].time(),
        sample_rate: trials[0].sample_rate(),
    })
}

fn trial_crops(data: &Array2<f64>, cfg: &PerturbationRunConfig, window: usize) -> Vec<Array2<f64>> {
    match cfg.crop_mode {
        CropMode::First => vec![data.slice(ndarray::s![.., 0..window]).to_owned()],
        CropMode::All => {
            let stride = cfg.crop_stride.max(1);
            let count = (data.ncols() - window) / stride + 1;
            (0..count)
                .map(|i| {
                    data.slice(ndarray::s![.., i * stride..i * stride + window])
                        .to_owned()
                })
                .collect()
        }
    }
}

/// Reconstructed samples are quantized through `f32`, matching the trial
/// storage precision of the unperturbed path.
fn reconstruct(spectrum: &Spectrum) -> Result<Array2<f64>, SpectralError> {
    Ok(dft_inverse(spectrum)?.mapv(|v| (v as f32) as f64))
}

struct Centered {
    values: Vec<f64>,
    norm: f64,
    degenerate: bool,
}

fn center(mut values: Vec<f64>) -> Centered {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter_mut().for_each(|v| *v -= mean);
    let sumsq: f64 = values.iter().map(|v| v * v).sum();
    Centered {
        norm: sumsq.sqrt(),
        degenerate: sumsq / n < DEGENERACY_VARIANCE,
        values,
    }
}

fn corr_centered(a: &Centered, b: &Centered) -> Correlation {
    if a.degenerate || b.degenerate {
        return Correlation {
            r: 0.0,
            degenerate: true,
        };
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Correlation {
        r: (dot / (a.norm * b.norm)).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

/// Mean activation over units per filter, averaged over a trial's crops.
fn mean_activations<P: ActivationProbe>(
    probe: &P,
    crops: &[Array2<f64>],
    layers: &[usize],
) -> Result<BTreeMap<usize, Vec<f64>>, ProbeError> {
    let mut acc: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for crop in crops {
        let maps = probe.activations(&crop.view(), layers)?;
        for m in maps {
            let units = m.values.ncols() as f64;
            let entry = acc
                .entry(m.layer)
                .or_insert_with(|| vec![0.0; m.values.nrows()]);
            for (f, row) in m.values.rows().into_iter().enumerate() {
                entry[f] += row.sum() / units;
            }
        }
    }
    let n = crops.len() as f64;
    for v in acc.values_mut() {
        v.iter_mut().for_each(|x| *x /= n);
    }
    Ok(acc)
}

fn band_limit_bins(prep: &Prep, band: Option<(f64, f64)>) -> Option<Vec<bool>> {
    band.map(|(lo, hi)| {
        (0..prep.bins)
            .map(|k| {
                let f = k as f64 * prep.sample_rate / prep.trial_time as f64;
                f >= lo && f <= hi
            })
            .collect()
    })
}

/// Amplitude perturbation correlations for every requested layer.
pub fn amplitude_perturbation_correlations<P: ActivationProbe>(
    probe: &P,
    trials: &[Trial],
    cfg: &PerturbationRunConfig,
) -> Result<AmplitudeRun, ProbeError> {
    let prep = prepare(probe, trials, cfg, cfg.amplitude_sigma)?;
    let n = trials.len();
    let in_band = band_limit_bins(&prep, cfg.band_limit);

    // Original per-(layer, filter, trial) mean activations.
    let orig: Vec<BTreeMap<usize, Vec<f64>>> = collect_results(par::map_indexed(n, |i| {
        let crops = trial_crops(&trials[i].data_f64(), cfg, prep.window);
        mean_activations(probe, &crops, &prep.layers)
    }))?;

    let mut table = CorrelationTable::new(&prep.layers, prep.bins, prep.trial_time, prep.sample_rate);
    let mut raws = cfg.keep_raw.then(Vec::new);

    for rep in 0..cfg.repetitions {
        // Factors and perturbed mean activations, per trial.
        let per_trial: Vec<(Array2<f64>, BTreeMap<usize, Vec<f64>>)> =
            collect_results(par::map_indexed(n, |i| {
                let mut rng =
                    rng::substream(cfg.seed, domain::AMP_PERTURB, (rep * n + i) as u64);
                let mut pert = AmplitudePerturbation::sample(
                    prep.bins,
                    prep.channels,
                    cfg.amplitude_sigma,
                    &mut rng,
                );
                if let Some(mask) = &in_band {
                    let mut factors = pert.factors().clone();
                    for (k, keep) in mask.iter().enumerate() {
                        if !keep {
                            factors.row_mut(k).fill(1.0);
                        }
                    }
                    pert = AmplitudePerturbation::new(factors).expect("factors stay positive");
                }
                let spectrum = prep.spectra[i].with_amplitude_factors(&pert)?;
                let data = reconstruct(&spectrum)?;
                let crops = trial_crops(&data, cfg, prep.window);
                let means = mean_activations(probe, &crops, &prep.layers)?;
                Ok::<_, ProbeError>((pert.factors().clone(), means))
            }))?;

        // Mean activation differences, centered per (layer, filter).
        let mut deltas: BTreeMap<usize, Vec<Centered>> = BTreeMap::new();
        for &layer in &prep.layers {
            let filters = prep.filters[&layer];
            let centered = (0..filters)
                .map(|f| {
                    center(
                        (0..n)
                            .map(|i| orig[i][&layer][f] - per_trial[i].1[&layer][f])
                            .collect(),
                    )
                })
                .collect();
            deltas.insert(layer, centered);
        }

        // Correlate factors with deltas, per (bin, channel, layer, filter).
        struct BinAccum {
            entries: Vec<Vec<CorrelationEntry>>,
            raws: Vec<RawCorrelation>,
        }
        let bin_results: Vec<BinAccum> = par::map_indexed(prep.bins, |bin| {
            let mut entries =
                vec![vec![CorrelationEntry::default(); prep.layers.len()]; prep.channels];
            let mut braws = Vec::new();
            for c in 0..prep.channels {
                let x = center((0..n).map(|i| per_trial[i].0[[bin, c]]).collect());
                for (lpos, &layer) in prep.layers.iter().enumerate() {
                    for (f, d) in deltas[&layer].iter().enumerate() {
                        let corr = corr_centered(&x, d);
                        entries[c][lpos].add(corr);
                        if cfg.keep_raw {
                            braws.push(RawCorrelation {
                                repetition: rep,
                                layer,
                                bin,
                                channel: Some(c),
                                filter: f,
                                correlation: corr,
                            });
                        }
                    }
                }
            }
            BinAccum {
                entries,
                raws: braws,
            }
        });
        for (bin, acc) in bin_results.into_iter().enumerate() {
            for per_layer in &acc.entries {
                for (lpos, e) in per_layer.iter().enumerate() {
                    let layer = prep.layers[lpos];
                    let p = table.layer_pos(layer).expect("own layer");
                    table.amp[p][bin].merge(e);
                }
            }
            if let Some(r) = raws.as_mut() {
                r.extend(acc.raws);
            }
        }
    }

    Ok(AmplitudeRun { table, raw: raws })
}

/// Phase perturbation correlations for every requested layer.
pub fn phase_perturbation_correlations<P: ActivationProbe>(
    probe: &P,
    trials: &[Trial],
    cfg: &PerturbationRunConfig,
) -> Result<PhaseRun, ProbeError> {
    let prep = prepare(probe, trials, cfg, cfg.phase_sigma)?;
    let n = trials.len();
    let in_band = band_limit_bins(&prep, cfg.band_limit);

    // Original full activation maps per trial and crop.
    let orig: Vec<Vec<BTreeMap<usize, Array2<f64>>>> = collect_results(par::map_indexed(n, |i| {
        let crops = trial_crops(&trials[i].data_f64(), cfg, prep.window);
        crops
            .iter()
            .map(|crop| {
                let maps = probe.activations(&crop.view(), &prep.layers)?;
                Ok(maps.into_iter().map(|m| (m.layer, m.values)).collect())
            })
            .collect::<Result<Vec<_>, ProbeError>>()
    }))?;

    let mut table = CorrelationTable::new(&prep.layers, prep.bins, prep.trial_time, prep.sample_rate);
    let mut raws = cfg.keep_raw.then(Vec::new);
    let mut inner_diag = cfg.keep_raw.then(|| PhaseInnerDiagnostics {
        shifts: Vec::new(),
        activation_correlations: Vec::new(),
    });

    // Shifts are not applied to bin 0 or Nyquist, so no outer statistic there.
    let applied_bins: Vec<usize> = {
        let last_mid = if prep.trial_time % 2 == 0 {
            prep.bins - 1
        } else {
            prep.bins
        };
        (1..last_mid).collect()
    };

    for rep in 0..cfg.repetitions {
        let per_trial: Vec<(Vec<f64>, BTreeMap<usize, Vec<Correlation>>)> =
            collect_results(par::map_indexed(n, |i| {
                let mut rng =
                    rng::substream(cfg.seed, domain::PHASE_PERTURB, (rep * n + i) as u64);
                let mut shifts =
                    PhasePerturbation::sample(prep.bins, cfg.phase_sigma, &mut rng)
                        .shifts()
                        .to_vec();
                if let Some(mask) = &in_band {
                    for (k, keep) in mask.iter().enumerate() {
                        if !keep {
                            shifts[k] = 0.0;
                        }
                    }
                }
                let pert = PhasePerturbation::new(shifts.clone()).expect("finite shifts");
                let spectrum = prep.spectra[i].with_phase_shifts(&pert)?;
                let data = reconstruct(&spectrum)?;
                let crops = trial_crops(&data, cfg, prep.window);
                // Correlation of original vs perturbed unit activations per
                // filter, averaged over crops; degenerate crops contribute 0.
                let mut rho: BTreeMap<usize, Vec<Correlation>> = BTreeMap::new();
                for (crop_idx, crop) in crops.iter().enumerate() {
                    let maps = probe.activations(&crop.view(), &prep.layers)?;
                    for m in maps {
                        let o = &orig[i][crop_idx][&m.layer];
                        let entry = rho.entry(m.layer).or_insert_with(|| {
                            vec![
                                Correlation {
                                    r: 0.0,
                                    degenerate: true
                                };
                                m.values.nrows()
                            ]
                        });
                        for f in 0..m.values.nrows() {
                            let c = pearson(
                                o.row(f).as_slice().expect("contiguous"),
                                m.values.row(f).as_slice().expect("contiguous"),
                            )?;
                            entry[f] = average_corr(entry[f], c, crop_idx);
                        }
                    }
                }
                Ok::<_, ProbeError>((shifts, rho))
            }))?;

        if let Some(diag) = inner_diag.as_mut() {
            let mut shifts = Array2::zeros((n, prep.bins));
            for (i, (s, _)) in per_trial.iter().enumerate() {
                shifts.row_mut(i).assign(&ndarray::ArrayView1::from(&s[..]));
            }
            diag.shifts.push(shifts);
            let mut per_layer = BTreeMap::new();
            for &layer in &prep.layers {
                let filters = prep.filters[&layer];
                let mut m = Array2::zeros((n, filters));
                for i in 0..n {
                    for f in 0..filters {
                        m[[i, f]] = per_trial[i].1[&layer][f].r;
                    }
                }
                per_layer.insert(layer, m);
            }
            diag.activation_correlations.push(per_layer);
        }

        // Centered inner correlations per (layer, filter); degenerate as 0.
        let mut rho_centered: BTreeMap<usize, Vec<Centered>> = BTreeMap::new();
        for &layer in &prep.layers {
            let filters = prep.filters[&layer];
            let centered = (0..filters)
                .map(|f| center((0..n).map(|i| per_trial[i].1[&layer][f].r).collect()))
                .collect();
            rho_centered.insert(layer, centered);
        }

        struct BinAccum {
            bin: usize,
            entries: Vec<CorrelationEntry>,
            raws: Vec<RawCorrelation>,
        }
        let bin_results: Vec<BinAccum> = par::map_slice(&applied_bins, |&bin| {
            let stat: Vec<f64> = (0..n)
                .map(|i| match cfg.phase_stat {
                    PhaseStat::Abs => per_trial[i].0[bin].abs(),
                    PhaseStat::Signed => per_trial[i].0[bin],
                })
                .collect();
            let x = center(stat);
            let mut entries = vec![CorrelationEntry::default(); prep.layers.len()];
            let mut braws = Vec::new();
            for (lpos, &layer) in prep.layers.iter().enumerate() {
                for (f, y) in rho_centered[&layer].iter().enumerate() {
                    let corr = corr_centered(&x, y);
                    entries[lpos].add(corr);
                    if cfg.keep_raw {
                        braws.push(RawCorrelation {
                            repetition: rep,
                            layer,
                            bin,
                            channel: None,
                            filter: f,
                            correlation: corr,
                        });
                    }
                }
            }
            BinAccum {
                bin,
                entries,
                raws: braws,
            }
        });
        for acc in bin_results {
            for (lpos, e) in acc.entries.iter().enumerate() {
                let layer = prep.layers[lpos];
                let p = table.layer_pos(layer).expect("own layer");
                table.phase[p][acc.bin].merge(e);
            }
            if let Some(r) = raws.as_mut() {
                r.extend(acc.raws);
            }
        }
    }

    Ok(PhaseRun {
        table,
        raw: raws,
        inner: inner_diag,
    })
}

/// Running average of inner correlations across crops. A degenerate value
/// counts as 0; the result is degenerate only if every crop was.
fn average_corr(acc: Correlation, next: Correlation, crop_idx: usize) -> Correlation {
    if crop_idx == 0 {
        return next;
    }
    let k = crop_idx as f64;
    Correlation {
        r: (acc.r * k + next.r) / (k + 1.0),
        degenerate: acc.degenerate && next.degenerate,
    }
}

fn collect_results<T>(results: Vec<Result<T, ProbeError>>) -> Result<Vec<T>, ProbeError> {
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build_network, NetworkSpec, StandardParams};
    use crate::signal::{generate_synthetic_dataset, BandRule, NoiseConfig, SynthConfig};

    fn small_dataset(seed: u64) -> Vec<Trial> {
        let cfg = SynthConfig {
            n_trials_per_class: 6,
            channels: 2,
            duration_s: 0.4,
            sample_rate: 250.0,
            noise: NoiseConfig {
                level: 0.1,
                slope: 1.0,
            },
            class_rules: vec![
                vec![BandRule {
                    band: (8.0, 12.0),
                    channels: None,
                    amplitude: 1.0,
                    phase_locked: false,
                }],
                vec![BandRule {
                    band: (8.0, 12.0),
                    channels: None,
                    amplitude: 2.0,
                    phase_locked: false,
                }],
            ],
        };
        generate_synthetic_dataset(&cfg, seed).unwrap().trials().to_vec()
    }

    fn small_net() -> Network {
        let spec = NetworkSpec::standard(
            2,
            100,
            2,
            &StandardParams {
                temporal_kernel: 5,
                filters: [3, 3, 4, 5, 6],
                pool_size: 2,
                pool_stride: 2,
            },
        );
        build_network(&spec, 21).unwrap()
    }

    #[test]
    fn dead_network_gives_zero_table_with_flags() {
        let mut net = small_net();
        for i in 0..net.n_tensors() {
            net.tensor_data_mut(i).fill(0.0);
        }
        let trials = small_dataset(3);
        let cfg = PerturbationRunConfig {
            repetitions: 2,
            seed: 9,
            ..Default::default()
        };
        let run = amplitude_perturbation_correlations(&net, &trials, &cfg).unwrap();
        for &layer in run.table.layers() {
            for bin in 0..run.table.bins() {
                let e = run.table.amp_entry(layer, bin).unwrap();
                assert_eq!(e.mean_abs(), 0.0);
                assert_eq!(e.degenerate, e.count);
                assert!(e.count > 0);
            }
        }
    }

    #[test]
    fn near_zero_phase_sigma_degenerates() {
        let net = small_net();
        let trials = small_dataset(4);
        let cfg = PerturbationRunConfig {
            repetitions: 1,
            phase_sigma: 1e-9,
            seed: 2,
            ..Default::default()
        };
        let run = phase_perturbation_correlations(&net, &trials, &cfg).unwrap();
        for &layer in run.table.layers() {
            for bin in 1..run.table.bins() - 1 {
                let e = run.table.phase_entry(layer, bin).unwrap();
                assert_eq!(e.mean_abs(), 0.0, "layer {layer} bin {bin}");
                assert_eq!(e.degenerate, e.count);
            }
        }
    }

    #[test]
    fn pipeline_is_deterministic() {
        let net = small_net();
        let trials = small_dataset(5);
        let cfg = PerturbationRunConfig {
            repetitions: 2,
            seed: 31,
            ..Default::default()
        };
        let a = amplitude_perturbation_correlations(&net, &trials, &cfg).unwrap();
        let b = amplitude_perturbation_correlations(&net, &trials, &cfg).unwrap();
        assert_eq!(a.table, b.table);
        let p1 = phase_perturbation_correlations(&net, &trials, &cfg).unwrap();
        let p2 = phase_perturbation_correlations(&net, &trials, &cfg).unwrap();
        assert_eq!(p1.table, p2.table);
        assert_eq!(a.table.to_csv(), b.table.to_csv());
    }

    #[test]
    fn too_few_trials_is_statistics_error() {
        let net = small_net();
        let trials = small_dataset(1)[..2].to_vec();
        let cfg = PerturbationRunConfig::default();
        assert!(matches!(
            amplitude_perturbation_correlations(&net, &trials, &cfg),
            Err(ProbeError::TooFewTrials(2))
        ));
    }

    #[test]
    fn aggregate_examples() {
        let mut t = CorrelationTable::new(&[1], 3, 4, 100.0);
        t.add_amp_raw(1, 0, Correlation { r: -0.5, degenerate: false });
        assert!((t.rho_amp(1, 0) - 0.5).abs() < 1e-15);

        let mut t2 = CorrelationTable::new(&[1], 3, 4, 100.0);
        t2.add_amp_raw(1, 1, Correlation { r: 0.3, degenerate: false });
        t2.add_amp_raw(1, 1, Correlation { r: -0.3, degenerate: false });
        assert!((t2.rho_amp(1, 1) - 0.3).abs() < 1e-15);

        let merged = aggregate_tables(&[t.clone(), t.clone(), t.clone()]).unwrap();
        assert!((merged.rho_amp(1, 0) - 0.5).abs() < 1e-15);
        assert!(aggregate_tables(&[]).is_err());
    }

    #[test]
    fn csv_layout() {
        let mut t = CorrelationTable::new(&[1, 2], 2, 4, 100.0);
        t.add_amp_raw(1, 0, Correlation { r: 0.25, degenerate: false });
        let csv = t.to_csv();
        let mut lines = csv.split("\r\n");
        assert_eq!(
            lines.next().unwrap(),
            "layer,bin_index,frequency_hz,rho_amp,rho_phase,n_degenerate_amp,n_degenerate_phase"
        );
        let first = lines.next().unwrap();
        assert!(first.starts_with("1,0,0.000000,0.250000000,,0,"));
    }
}
