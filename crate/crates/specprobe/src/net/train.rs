//! Desk-scale training: mini-batch cross-entropy with Adam.
//!
//! Deterministic for a fixed `(network, dataset, config, seed)`: epoch
//! shuffles come from the `(seed, domain::SHUFFLE, epoch)` substream,
//! within-batch gradients are computed independently per crop (possibly in
//! parallel) and summed in crop order, and every updated weight is rounded
//! through `f32` so checkpoints stay lossless.

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::par;
use crate::rng::{self, domain};
use crate::signal::{crop_sliding, Dataset};

use super::network::{cross_entropy, Gradients, NetError, Network};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Adam decay for the first moment.
    pub beta1: f64,
    /// Adam decay for the second moment.
    pub beta2: f64,
    pub epsilon: f64,
    /// Stride of the sliding crops taken from each trial (1 = maximum overlap).
    pub crop_stride: usize,
    /// Fraction of each class's trials held out for validation (the last
    /// trials of the class, so the split is deterministic).
    pub valid_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            crop_stride: 1,
            valid_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub valid_loss: Option<f64>,
    pub valid_accuracy: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub network: Network,
    pub history: Vec<EpochMetrics>,
}

struct Example {
    crop: Array2<f64>,
    label: usize,
}

/// Train a copy of `net` on the dataset's crops.
pub fn train(
    net: &Network,
    dataset: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutput, NetError> {
    let spec = net.spec();
    if dataset.channels() != spec.input_channels || dataset.time() < spec.input_time {
        return Err(NetError::IncompatibleDataset {
            channels: dataset.channels(),
            time: dataset.time(),
            expected: (spec.input_channels, spec.input_time),
        });
    }
    if dataset.n_classes() != spec.n_classes {
        return Err(NetError::ClassMismatch {
            found: dataset.n_classes(),
            expected: spec.n_classes,
        });
    }

    let (train_set, valid_set) = split_examples(dataset, spec.input_time, cfg)?;

    let mut network = net.clone();
    if cfg.epochs == 0 {
        return Ok(TrainOutput {
            network,
            history: Vec::new(),
        });
    }

    let mut adam = AdamState::new(&network);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut rng = rng::substream(seed, domain::SHUFFLE, epoch as u64);
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let members = par::map_slice(batch, |&i| {
                let ex = &train_set[i];
                member_pass(&network, ex)
            });
            let mut grads = network.zero_gradients();
            for (loss, is_correct, g) in &members {
                loss_sum += loss;
                correct += usize::from(*is_correct);
                grads.add_assign(g);
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step(&mut network, &grads, cfg);
        }
        let train_loss = loss_sum / train_set.len() as f64;
        if !train_loss.is_finite() {
            return Err(NetError::Diverged { epoch });
        }
        let train_accuracy = correct as f64 / train_set.len() as f64;

        let (valid_loss, valid_accuracy) = if valid_set.is_empty() {
            (None, None)
        } else {
            let stats = par::map_slice(&valid_set, |ex| {
                let out = network
                    .forward(&ex.crop.view(), &[])
                    .expect("validation crops share training geometry");
                let loss = cross_entropy(&out.probabilities, ex.label);
                (loss, argmax(&out.probabilities) == ex.label)
            });
            let loss: f64 =
                stats.iter().map(|(l, _)| l).sum::<f64>() / valid_set.len() as f64;
            let acc = stats.iter().filter(|(_, c)| *c).count() as f64 / valid_set.len() as f64;
            (Some(loss), Some(acc))
        };

        history.push(EpochMetrics {
            epoch,
            train_loss,
            train_accuracy,
            valid_loss,
            valid_accuracy,
        });
    }

    Ok(TrainOutput { network, history })
}

fn split_examples(
    dataset: &Dataset,
    window: usize,
    cfg: &TrainConfig,
) -> Result<(Vec<Example>, Vec<Example>), NetError> {
    // Hold out the last `valid_fraction` trials of each class.
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.n_classes()];
    for (i, t) in dataset.trials().iter().enumerate() {
        per_class[t.label()].push(i);
    }
    let mut valid_trials = vec![false; dataset.trials().len()];
    for indices in &per_class {
        let held = (indices.len() as f64 * cfg.valid_fraction).floor() as usize;
        for &i in indices.iter().rev().take(held) {
            valid_trials[i] = true;
        }
    }
    let mut train_set = Vec::new();
    let mut valid_set = Vec::new();
    for (i, trial) in dataset.trials().iter().enumerate() {
        let crops = crop_sliding(trial, window, cfg.crop_stride.max(1)).map_err(|_| {
            NetError::IncompatibleDataset {
                channels: trial.channels(),
                time: trial.time(),
                expected: (trial.channels(), window),
            }
        })?;
        for crop in crops {
            let ex = Example {
                crop: crop.mapv(f64::from),
                label: trial.label(),
            };
            if valid_trials[i] {
                valid_set.push(ex);
            } else {
                train_set.push(ex);
            }
        }
    }
    Ok((train_set, valid_set))
}

fn member_pass(network: &Network, ex: &Example) -> (f64, bool, Gradients) {
    let (loss, probs, grads) = network
        .loss_and_gradients(&ex.crop.view(), ex.label)
        .expect("crops validated against the spec");
    (loss, argmax(&probs) == ex.label, grads)
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    fn new(net: &Network) -> Self {
        let m = (0..net.n_tensors())
            .map(|i| vec![0.0; net.tensor_data(i).len()])
            .collect::<Vec<_>>();
        let v = m.clone();
        AdamState { m, v, t: 0 }
    }

    fn step(&mut self, net: &mut Network, grads: &Gradients, cfg: &TrainConfig) {
        self.t += 1;
        let bias1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bias2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..net.n_tensors() {
            let g = net.gradient_tensor(grads, i).to_vec();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let w = net.tensor_data_mut(i);
            for j in 0..w.len() {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
                let mhat = m[j] / bias1;
                let vhat = v[j] / bias2;
                let updated = w[j] - cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
                // Keep weights exactly f32-representable (checkpoint precision).
                w[j] = (updated as f32) as f64;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::spec::{NetworkSpec, StandardParams};
    use crate::net::build_network;
    use crate::signal::{generate_synthetic_dataset, BandRule, NoiseConfig, SynthConfig};

    fn tiny_setup() -> (Network, Dataset) {
        let cfg = SynthConfig {
            n_trials_per_class: 10,
            channels: 2,
            duration_s: 0.4,
            sample_rate: 250.0,
            noise: NoiseConfig {
                level: 0.05,
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
        let ds = generate_synthetic_dataset(&cfg, 17).unwrap();
        let spec = NetworkSpec::standard(
            2,
            100,
            2,
            &StandardParams {
                temporal_kernel: 5,
                filters: [4, 4, 6, 8, 8],
                pool_size: 2,
                pool_stride: 2,
            },
        );
        (build_network(&spec, 3).unwrap(), ds)
    }

    #[test]
    fn zero_epochs_is_identity() {
        let (net, ds) = tiny_setup();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train(&net, &ds, &cfg, 5).unwrap();
        assert_eq!(out.network, net);
        assert!(out.history.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let (net, ds) = tiny_setup();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let a = train(&net, &ds, &cfg, 5).unwrap();
        let b = train(&net, &ds, &cfg, 5).unwrap();
        assert_eq!(a.network, b.network);
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x.train_loss, y.train_loss);
            assert_eq!(x.valid_loss, y.valid_loss);
        }
    }

    #[test]
    fn loss_decreases_on_separable_data() {
        let (net, ds) = tiny_setup();
        let cfg = TrainConfig {
            epochs: 8,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let out = train(&net, &ds, &cfg, 5).unwrap();
        let first = out.history.first().unwrap().train_loss;
        let last = out.history.last().unwrap().train_loss;
        assert!(last < first, "loss did not improve: {first} -> {last}");
    }

    #[test]
    fn incompatible_dataset_rejected() {
        let (net, ds) = tiny_setup();
        let spec = NetworkSpec::standard(
            4, // wrong channel count
            100,
            2,
            &StandardParams {
                temporal_kernel: 5,
                filters: [4, 4, 6, 8, 8],
                pool_size: 2,
                pool_stride: 2,
            },
        );
        let wrong = build_network(&spec, 1).unwrap();
        assert!(matches!(
            train(&wrong, &ds, &TrainConfig::default(), 1),
            Err(NetError::IncompatibleDataset { .. })
        ));
        drop(net);
    }
}
