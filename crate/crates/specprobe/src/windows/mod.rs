//! Most-activating input windows and their parametric summaries.
//!
//! For a (layer, filter) pair, each trial contributes its maximum unit
//! activation (earliest unit on ties); the top 10% of trials by that maximum
//! are kept, each selected unit is mapped back through the receptive-field
//! arithmetic, and the corresponding input slice is standardized per channel.
//! Sinusoid and linear fits then quantify how sinusoidal those windows are.

mod fit;
mod stats;

pub use fit::{fit_linear, fit_sinusoid, LinearFit, SineFit};
pub use stats::{
    histogram, median, quantile_sorted, wilcoxon_signed_rank, Histogram, WilcoxonResult,
    WILCOXON_EXACT_LIMIT,
};

use std::collections::BTreeMap;

use ndarray::Array2;
use thiserror::Error;

use crate::net::{receptive_field, NetError, Network, ReceptiveField, SpecError};
use crate::par;
use crate::signal::{Dataset, SignalError, Trial};

/// Fraction of trials whose highest unit activations are kept.
pub const TOP_FRACTION: f64 = 0.1;

#[derive(Debug, Error)]
pub enum WindowError {
    #[error("no trials provided")]
    NoTrials,
    #[error("window set is empty")]
    EmptyWindowSet,
    #[error("channel {channel} out of range ({channels} channels)")]
    ChannelOutOfRange { channel: usize, channels: usize },
    #[error("series of {0} samples is too short for a sinusoid fit (need 4)")]
    TooShortForSineFit(usize),
    #[error("series of {0} samples is too short for a linear fit (need 2)")]
    TooShortForLinearFit(usize),
    #[error("series of {0} samples is too short to standardize (need 2)")]
    TooShortForStandardize(usize),
    #[error("need at least 5 paired fit errors, got {0}")]
    TooFewPairs(usize),
    #[error("histogram edges must be strictly increasing, with at least 2 entries")]
    BadEdges,
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// How the top activations are selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Rank trials by their per-trial maximum unit activation (default).
    #[default]
    TrialMax,
    /// Walk all unit activations in descending order, keeping at most one
    /// per trial, until the quota is filled. Coincides with `TrialMax` when
    /// the quota equals 10% of trials.
    GreedyUnits,
}

/// One selected window: the standardized input slice behind a top unit.
#[derive(Debug, Clone)]
pub struct WindowEntry {
    pub trial: usize,
    pub unit: usize,
    pub rf: ReceptiveField,
    pub activation: f64,
    /// `channels x width` standard scores.
    pub data: Array2<f64>,
    /// Channels that were constant before standardization (now all zero).
    pub degenerate_channels: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct WindowSet {
    pub layer: usize,
    pub filter: usize,
    /// Sorted by activation, non-increasing.
    pub windows: Vec<WindowEntry>,
    pub width: usize,
}

/// Standardized series (mean 0, population std 1) with a degeneracy flag for
/// constant input (mapped to all zeros).
#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub values: Vec<f64>,
    pub degenerate: bool,
}

pub fn standardize(series: &[f64]) -> Result<Standardized, WindowError> {
    let n = series.len();
    if n < 2 {
        return Err(WindowError::TooShortForStandardize(n));
    }
    let nf = n as f64;
    let mean = series.iter().sum::<f64>() / nf;
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
    if var < 1e-24 {
        return Ok(Standardized {
            values: vec![0.0; n],
            degenerate: true,
        });
    }
    let std = var.sqrt();
    Ok(Standardized {
        values: series.iter().map(|v| (v - mean) / std).collect(),
        degenerate: false,
    })
}

/// Extract the most-activating input windows of `filter` at analysis layer
/// `layer` over all trials (first crop of each trial).
pub fn most_activating_windows(
    net: &Network,
    layer: usize,
    filter: usize,
    trials: &[Trial],
    mode: SelectionMode,
) -> Result<WindowSet, WindowError> {
    if trials.is_empty() {
        return Err(WindowError::NoTrials);
    }
    let spec = net.spec();
    let (filters, _units) = spec.analysis_layer_shape(layer)?;
    if filter >= filters {
        return Err(SpecError::FilterOutOfRange {
            layer,
            filter,
            filters,
        }
        .into());
    }
    let window = spec.input_time;

    // Per-trial unit activations of this filter.
    let rows: Vec<Vec<f64>> = {
        let results = par::map_slice(trials, |t| {
            let crop = t
                .data()
                .slice(ndarray::s![.., 0..window])
                .mapv(f64::from);
            net.forward(&crop.view(), &[layer])
                .map(|out| out.taps[0].values.row(filter).to_vec())
        });
        results
            .into_iter()
            .collect::<Result<Vec<_>, NetError>>()?
    };

    let quota = quota(trials.len());
    // (activation, trial, unit), one candidate per selected window.
    let selected: Vec<(f64, usize, usize)> = match mode {
        SelectionMode::TrialMax => {
            let mut per_trial: Vec<(f64, usize, usize)> = rows
                .iter()
                .enumerate()
                .map(|(i, row)| {
                    let (unit, act) = argmax_earliest(row);
                    (act, i, unit)
                })
                .collect();
            per_trial.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite").then(a.1.cmp(&b.1)));
            per_trial.truncate(quota);
            per_trial
        }
        SelectionMode::GreedyUnits => {
            let mut all: Vec<(f64, usize, usize)> = Vec::new();
            for (i, row) in rows.iter().enumerate() {
                for (u, &a) in row.iter().enumerate() {
                    all.push((a, i, u));
                }
            }
            all.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .expect("finite")
                    .then(a.1.cmp(&b.1))
                    .then(a.2.cmp(&b.2))
            });
            let mut used = vec![false; trials.len()];
            let mut picked = Vec::with_capacity(quota);
            for (a, i, u) in all {
                if !used[i] {
                    used[i] = true;
                    picked.push((a, i, u));
                    if picked.len() == quota {
                        break;
                    }
                }
            }
            picked
        }
    };

    let mut windows = Vec::with_capacity(selected.len());
    let mut width = 0;
    for (activation, trial_idx, unit) in selected {
        let rf = receptive_field(spec, layer, unit)?;
        width = rf.width();
        let raw = trials[trial_idx]
            .data()
            .slice(ndarray::s![.., rf.start..rf.end])
            .mapv(f64::from);
        let mut data = Array2::zeros(raw.dim());
        let mut degenerate_channels = Vec::with_capacity(raw.nrows());
        for (c, row) in raw.rows().into_iter().enumerate() {
            let s = standardize(row.as_slice().expect("contiguous"))?;
            degenerate_channels.push(s.degenerate);
            data.row_mut(c)
                .assign(&ndarray::ArrayView1::from(&s.values[..]));
        }
        windows.push(WindowEntry {
            trial: trial_idx,
            unit,
            rf,
            activation,
            data,
            degenerate_channels,
        });
    }

    Ok(WindowSet {
        layer,
        filter,
        windows,
        width,
    })
}

pub fn quota(n_trials: usize) -> usize {
    ((n_trials as f64 * TOP_FRACTION).ceil() as usize).max(1).min(n_trials)
}

fn argmax_earliest(row: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    (best, row[best])
}

/// Per-timepoint median and interquartile range across a window set, plus
/// the representative channel (largest max-abs median, unless overridden).
#[derive(Debug, Clone)]
pub struct WindowSummary {
    pub median: Array2<f64>,
    pub q25: Array2<f64>,
    pub q75: Array2<f64>,
    pub representative_channel: usize,
}

pub fn window_summary(
    ws: &WindowSet,
    channel_override: Option<usize>,
) -> Result<WindowSummary, WindowError> {
    if ws.windows.is_empty() {
        return Err(WindowError::EmptyWindowSet);
    }
    let (channels, width) = ws.windows[0].data.dim();
    if let Some(c) = channel_override {
        if c >= channels {
            return Err(WindowError::ChannelOutOfRange {
                channel: c,
                channels,
            });
        }
    }
    let mut med = Array2::zeros((channels, width));
    let mut q25 = Array2::zeros((channels, width));
    let mut q75 = Array2::zeros((channels, width));
    for c in 0..channels {
        for t in 0..width {
            let mut column: Vec<f64> = ws.windows.iter().map(|w| w.data[[c, t]]).collect();
            column.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            med[[c, t]] = quantile_sorted(&column, 0.5);
            q25[[c, t]] = quantile_sorted(&column, 0.25);
            q75[[c, t]] = quantile_sorted(&column, 0.75);
        }
    }
    let representative_channel = channel_override.unwrap_or_else(|| {
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for c in 0..channels {
            let v = med.row(c).iter().fold(0.0f64, |m, &x| m.max(x.abs()));
            if v > best_val {
                best_val = v;
                best = c;
            }
        }
        best
    });
    Ok(WindowSummary {
        median: med,
        q25,
        q75,
        representative_channel,
    })
}

/// Paired sinusoid-vs-linear MSE comparison with a two-sided Wilcoxon
/// signed-rank test on the differences.
#[derive(Debug, Clone)]
pub struct FitComparison {
    pub pairs: Vec<(f64, f64)>,
    pub mean_sine_mse: f64,
    pub mean_linear_mse: f64,
    /// W+ over the nonzero differences `sine - linear`.
    pub statistic: f64,
    pub p_value: f64,
    pub n_used: usize,
    /// All differences were zero.
    pub degenerate: bool,
}

pub fn compare_fit_errors(pairs: &[(f64, f64)]) -> Result<FitComparison, WindowError> {
    if pairs.len() < 5 {
        return Err(WindowError::TooFewPairs(pairs.len()));
    }
    let diffs: Vec<f64> = pairs.iter().map(|(s, l)| s - l).collect();
    let w = wilcoxon_signed_rank(&diffs);
    Ok(FitComparison {
        pairs: pairs.to_vec(),
        mean_sine_mse: pairs.iter().map(|p| p.0).sum::<f64>() / pairs.len() as f64,
        mean_linear_mse: pairs.iter().map(|p| p.1).sum::<f64>() / pairs.len() as f64,
        statistic: w.statistic,
        p_value: w.p_value,
        n_used: w.n_used,
        degenerate: w.degenerate,
    })
}

/// CSV of window provenance, RFC-4180 (CRLF).
pub fn windows_csv(sets: &[WindowSet]) -> String {
    let mut out = String::from("layer,filter,trial,rf_start,rf_end,activation\r\n");
    for ws in sets {
        for w in &ws.windows {
            out.push_str(&format!(
                "{},{},{},{},{},{:.9}\r\n",
                ws.layer, ws.filter, w.trial, w.rf.start, w.rf.end, w.activation
            ));
        }
    }
    out
}

/// Pack one layer's standardized windows into the dataset container (windows
/// as trials, the filter index as the label), in `windows_csv` row order.
pub fn windows_dataset(
    sets: &[WindowSet],
    n_filters: usize,
    sample_rate: f64,
) -> Result<Dataset, WindowError> {
    let mut trials = Vec::new();
    let mut layer = None;
    for ws in sets {
        layer = Some(ws.layer);
        for w in &ws.windows {
            let data = w.data.mapv(|v| v as f32);
            trials.push(Trial::new(data, sample_rate, ws.filter)?);
        }
    }
    if trials.is_empty() {
        return Err(WindowError::EmptyWindowSet);
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("kind".to_string(), "most_activating_windows".to_string());
    metadata.insert(
        "layer".to_string(),
        layer.expect("nonempty sets").to_string(),
    );
    Ok(Dataset::new(trials, n_filters, metadata)?)
}

/// One row of the fit export: fits of a filter's median window.
#[derive(Debug, Clone)]
pub struct FitRow {
    pub layer: usize,
    pub filter: usize,
    pub sine: SineFit,
    pub linear: LinearFit,
    pub sample_rate: f64,
}

/// CSV of per-filter median fits, RFC-4180 (CRLF).
pub fn fits_csv(rows: &[FitRow]) -> String {
    let mut out = String::from("layer,filter,o,a,freq_hz,theta,mse_sine,m,b,mse_linear\r\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.9},{:.9},{:.6},{:.9},{:.9e},{:.9},{:.9},{:.9e}\r\n",
            r.layer,
            r.filter,
            r.sine.offset,
            r.sine.amplitude,
            r.sine.frequency_hz(r.sample_rate),
            r.sine.phase,
            r.sine.mse,
            r.linear.slope,
            r.linear.intercept,
            r.linear.mse
        ));
    }
    out
}
