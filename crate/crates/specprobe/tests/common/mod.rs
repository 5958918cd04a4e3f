//! Independent oracles shared by the integration suites. Everything here is
//! deliberately written from the textbook definitions, separate from the
//! library's implementation paths.

#![allow(dead_code)]

use std::collections::BTreeMap;

use ndarray::Array2;
use specprobe::net::Network;
use specprobe::par;
use specprobe::signal::Trial;

/// Direct O(T^2) summation DFT of one channel, returning tone-normalized
/// amplitudes and phases (unit cosine at bin k has amplitude 1; constant c
/// has amplitude |c| at bin 0).
pub fn naive_spectrum(signal: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let t = signal.len();
    let bins = t / 2 + 1;
    let mut amps = vec![0.0; bins];
    let mut phases = vec![0.0; bins];
    for k in 0..bins {
        let mut re = 0.0;
        let mut im = 0.0;
        for (n, &x) in signal.iter().enumerate() {
            let arg = 2.0 * std::f64::consts::PI * k as f64 * n as f64 / t as f64;
            re += x * arg.cos();
            im -= x * arg.sin();
        }
        let real_bin = k == 0 || (t % 2 == 0 && k == bins - 1);
        if real_bin {
            amps[k] = re.abs() / t as f64;
            phases[k] = if re < 0.0 { std::f64::consts::PI } else { 0.0 };
        } else {
            amps[k] = 2.0 * (re * re + im * im).sqrt() / t as f64;
            phases[k] = im.atan2(re);
        }
    }
    (amps, phases)
}

/// Smallest circular difference between two angles.
pub fn circular_diff(a: f64, b: f64) -> f64 {
    let mut d = a - b;
    while d > std::f64::consts::PI {
        d -= 2.0 * std::f64::consts::PI;
    }
    while d < -std::f64::consts::PI {
        d += 2.0 * std::f64::consts::PI;
    }
    d
}

pub fn random_signal(len: usize, seed: u64) -> Vec<f64> {
    use rand::Rng;
    let mut rng = specprobe::rng::substream(seed, 0x4f5241434c45, 0);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn trial_from_f64(rows: &[Vec<f64>], sample_rate: f64) -> Trial {
    let channels = rows.len();
    let time = rows[0].len();
    let flat: Vec<f32> = rows.iter().flatten().map(|&v| v as f32).collect();
    Trial::new(
        Array2::from_shape_vec((channels, time), flat).unwrap(),
        sample_rate,
        0,
    )
    .unwrap()
}

/// Occlusion-based receptive fields for a monotone network (all weights
/// positive, zero biases, non-negative input): setting every channel of one
/// time sample to a huge value strictly raises exactly the units whose
/// geometric receptive field contains that sample, so the changed-sample set
/// per unit is the exact field.
///
/// Returns, per analysis layer, one `Vec<bool>` mask over input samples per
/// unit position.
pub fn occlusion_fields(
    net: &Network,
    input: &Array2<f64>,
    layers: &[usize],
) -> BTreeMap<usize, Vec<Vec<bool>>> {
    let window = input.ncols();
    let baseline = net.forward(&input.view(), layers).expect("valid input");

    // One forward per occluded sample; each yields the changed units.
    let per_sample: Vec<BTreeMap<usize, Vec<bool>>> = par::map_indexed(window, |s| {
        let mut occluded = input.clone();
        occluded.column_mut(s).fill(1e6);
        let out = net.forward(&occluded.view(), layers).expect("valid input");
        let mut changed = BTreeMap::new();
        for (tap, base) in out.taps.iter().zip(&baseline.taps) {
            let units = tap.values.ncols();
            let mut mask = vec![false; units];
            for j in 0..units {
                for f in 0..tap.values.nrows() {
                    let a = tap.values[[f, j]];
                    let b = base.values[[f, j]];
                    if (a - b).abs() > 1e-9 * b.abs().max(1.0) {
                        mask[j] = true;
                        break;
                    }
                }
            }
            changed.insert(tap.layer, mask);
        }
        changed
    });

    let mut fields: BTreeMap<usize, Vec<Vec<bool>>> = BTreeMap::new();
    for &layer in layers {
        let units = per_sample[0][&layer].len();
        let mut masks = vec![vec![false; window]; units];
        for (s, sample_masks) in per_sample.iter().enumerate() {
            for (j, &hit) in sample_masks[&layer].iter().enumerate() {
                if hit {
                    masks[j][s] = true;
                }
            }
        }
        fields.insert(layer, masks);
    }
    fields
}

/// Rewrite a network's weights to be strictly positive (|w| clamped away
/// from 0) with zero biases, making it monotone for the occlusion oracle.
pub fn make_monotone(net: &mut Network) {
    for i in 0..net.n_tensors() {
        let is_bias = i % 2 == 1;
        for v in net.tensor_data_mut(i) {
            *v = if is_bias {
                0.0
            } else {
                (v.abs().max(0.05) as f32) as f64
            };
        }
    }
}
