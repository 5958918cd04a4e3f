//! Network parameters, forward pass with activation taps, and backprop.
//!
//! The forward pass is an interpreter over the spec's descriptor list. Before
//! the spatial convolution the data is `filters x channels x time`; after it,
//! `filters x time`. Analysis taps return the post-ELU activations of the
//! requested analysis layers.
//!
//! Weights are kept in `f64` for the numerics but are always exactly
//! representable in `f32`: initialization and every optimizer step round
//! through `f32`, so checkpoints (which store an `f32` blob) are lossless.

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use thiserror::Error;

use crate::rng::{self, domain};

use super::spec::{LayerDesc, NetworkSpec, Shape, SpecError};

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("crop shape mismatch: expected {expected:?}, got {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("crop contains non-finite values")]
    NonFiniteInput,
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },
    #[error("dataset geometry {channels}x{time} incompatible with spec input {expected:?}")]
    IncompatibleDataset {
        channels: usize,
        time: usize,
        expected: (usize, usize),
    },
    #[error("dataset has {found} classes, spec expects {expected}")]
    ClassMismatch { found: usize, expected: usize },
}

/// Exponential linear unit.
#[inline]
pub fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

#[inline]
fn elu_grad(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        x.exp()
    }
}

#[inline]
fn axpy(dst: &mut [f64], src: &[f64], a: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Parameters of one convolutional layer. `Conv` covers the temporal
/// convolutions after the spatial one and the classifier.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    /// `(filters, kernel)`: one kernel bank shared across channels.
    Temporal { w: Array2<f64>, b: Array1<f64> },
    /// `(filters_out, filters_in, channels)`.
    Spatial { w: Array3<f64>, b: Array1<f64> },
    /// `(filters_out, filters_in, kernel)`.
    Conv { w: Array3<f64>, b: Array1<f64> },
}

impl LayerParams {
    fn zeros_like(&self) -> LayerParams {
        match self {
            LayerParams::Temporal { w, b } => LayerParams::Temporal {
                w: Array2::zeros(w.dim()),
                b: Array1::zeros(b.len()),
            },
            LayerParams::Spatial { w, b } => LayerParams::Spatial {
                w: Array3::zeros(w.dim()),
                b: Array1::zeros(b.len()),
            },
            LayerParams::Conv { w, b } => LayerParams::Conv {
                w: Array3::zeros(w.dim()),
                b: Array1::zeros(b.len()),
            },
        }
    }

    fn weight_slice(&self) -> &[f64] {
        match self {
            LayerParams::Temporal { w, .. } => w.as_slice().unwrap(),
            LayerParams::Spatial { w, .. } => w.as_slice().unwrap(),
            LayerParams::Conv { w, .. } => w.as_slice().unwrap(),
        }
    }

    fn weight_slice_mut(&mut self) -> &mut [f64] {
        match self {
            LayerParams::Temporal { w, .. } => w.as_slice_mut().unwrap(),
            LayerParams::Spatial { w, .. } => w.as_slice_mut().unwrap(),
            LayerParams::Conv { w, .. } => w.as_slice_mut().unwrap(),
        }
    }

    fn bias_slice(&self) -> &[f64] {
        match self {
            LayerParams::Temporal { b, .. }
            | LayerParams::Spatial { b, .. }
            | LayerParams::Conv { b, .. } => b.as_slice().unwrap(),
        }
    }

    fn bias_slice_mut(&mut self) -> &mut [f64] {
        match self {
            LayerParams::Temporal { b, .. }
            | LayerParams::Spatial { b, .. }
            | LayerParams::Conv { b, .. } => b.as_slice_mut().unwrap(),
        }
    }

    fn weight_shape(&self) -> Vec<usize> {
        match self {
            LayerParams::Temporal { w, .. } => w.shape().to_vec(),
            LayerParams::Spatial { w, .. } => w.shape().to_vec(),
            LayerParams::Conv { w, .. } => w.shape().to_vec(),
        }
    }
}

/// Per-parameter gradients, mirroring the network's layer layout.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub(crate) layers: Vec<LayerParams>,
}

impl Gradients {
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight_slice_mut().iter_mut().zip(b.weight_slice()) {
                *x += y;
            }
            for (x, y) in a.bias_slice_mut().iter_mut().zip(b.bias_slice()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, a: f64) {
        for layer in &mut self.layers {
            layer.weight_slice_mut().iter_mut().for_each(|x| *x *= a);
            layer.bias_slice_mut().iter_mut().for_each(|x| *x *= a);
        }
    }
}

/// Post-ELU activations of one analysis layer for one crop.
#[derive(Debug, Clone)]
pub struct ActivationMap {
    /// Analysis layer id, 1-based.
    pub layer: usize,
    /// Crop/trial index, filled in by batch pipelines.
    pub trial: usize,
    /// `filters x units`.
    pub values: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Softmax class probabilities.
    pub probabilities: Vec<f64>,
    pub taps: Vec<ActivationMap>,
}

#[derive(Debug, Clone)]
enum Feat {
    Planes(Array3<f64>),
    Maps(Array2<f64>),
}

/// Forward intermediates kept for backprop: the output of every descriptor.
pub struct Trace {
    input: Array2<f64>,
    feats: Vec<Feat>,
    /// Classifier logits `(n_classes, out_time)`.
    pub logits: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    params: Vec<LayerParams>,
    shapes: Vec<Shape>,
}

/// Build a network with uniform `+-sqrt(6/fan_in)` weights and zero biases,
/// deterministically from `init_seed`. Tensor `i` draws from the substream
/// `(init_seed, domain::INIT, i)`.
pub fn build_network(spec: &NetworkSpec, init_seed: u64) -> Result<Network, NetError> {
    let shapes = spec.infer_shapes()?;
    let mut params = Vec::new();
    let mut tensor_ordinal = 0u64;
    let mut cur: Option<Shape> = None;
    for (index, layer) in spec.layers.iter().enumerate() {
        let out_shape = shapes[index];
        match layer {
            LayerDesc::TemporalConv { kernel, filters } => {
                if index == 0 {
                    let fan_in = *kernel;
                    let w = init_tensor_2d(
                        (*filters, *kernel),
                        fan_in,
                        init_seed,
                        &mut tensor_ordinal,
                    );
                    params.push(LayerParams::Temporal {
                        w,
                        b: Array1::zeros(*filters),
                    });
                } else {
                    let in_filters = cur.expect("not first layer").filters();
                    let fan_in = in_filters * *kernel;
                    let w = init_tensor_3d(
                        (*filters, in_filters, *kernel),
                        fan_in,
                        init_seed,
                        &mut tensor_ordinal,
                    );
                    params.push(LayerParams::Conv {
                        w,
                        b: Array1::zeros(*filters),
                    });
                }
            }
            LayerDesc::SpatialConv { filters } => {
                let in_filters = cur.expect("not first layer").filters();
                let channels = spec.input_channels;
                let fan_in = in_filters * channels;
                let w = init_tensor_3d(
                    (*filters, in_filters, channels),
                    fan_in,
                    init_seed,
                    &mut tensor_ordinal,
                );
                params.push(LayerParams::Spatial {
                    w,
                    b: Array1::zeros(*filters),
                });
            }
            LayerDesc::Classifier => {
                let before = cur.expect("classifier not first");
                let (in_filters, kernel) = (before.filters(), before.time());
                let fan_in = in_filters * kernel;
                let w = init_tensor_3d(
                    (spec.n_classes, in_filters, kernel),
                    fan_in,
                    init_seed,
                    &mut tensor_ordinal,
                );
                params.push(LayerParams::Conv {
                    w,
                    b: Array1::zeros(spec.n_classes),
                });
            }
            LayerDesc::Elu | LayerDesc::MaxPool { .. } => {}
        }
        cur = Some(out_shape);
    }
    Ok(Network {
        spec: spec.clone(),
        params,
        shapes,
    })
}

fn init_values(n: usize, fan_in: usize, seed: u64, ordinal: &mut u64) -> Vec<f64> {
    let mut rng = rng::substream(seed, domain::INIT, *ordinal);
    *ordinal += 1;
    let bound = (6.0 / fan_in as f64).sqrt();
    // Round through f32 so checkpoints are lossless.
    (0..n)
        .map(|_| (rng.random_range(-bound..bound) as f32) as f64)
        .collect()
}

fn init_tensor_2d(dim: (usize, usize), fan_in: usize, seed: u64, ordinal: &mut u64) -> Array2<f64> {
    Array2::from_shape_vec(dim, init_values(dim.0 * dim.1, fan_in, seed, ordinal)).unwrap()
}

fn init_tensor_3d(
    dim: (usize, usize, usize),
    fan_in: usize,
    seed: u64,
    ordinal: &mut u64,
) -> Array3<f64> {
    Array3::from_shape_vec(dim, init_values(dim.0 * dim.1 * dim.2, fan_in, seed, ordinal)).unwrap()
}

impl Network {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self.params.iter().map(|p| p.zeros_like()).collect(),
        }
    }

    /// Number of parameter tensors (weight and bias per conv layer).
    pub fn n_tensors(&self) -> usize {
        self.params.len() * 2
    }

    /// Conv layers are named `conv1..conv5` plus `classifier`; tensor `2i` is
    /// `<name>.weight` and `2i+1` is `<name>.bias`.
    pub fn tensor_name(&self, i: usize) -> String {
        let layer = i / 2;
        let base = if layer + 1 == self.params.len() {
            "classifier".to_string()
        } else {
            format!("conv{}", layer + 1)
        };
        if i % 2 == 0 {
            format!("{base}.weight")
        } else {
            format!("{base}.bias")
        }
    }

    pub fn tensor_shape(&self, i: usize) -> Vec<usize> {
        let p = &self.params[i / 2];
        if i % 2 == 0 {
            p.weight_shape()
        } else {
            vec![p.bias_slice().len()]
        }
    }

    pub fn tensor_data(&self, i: usize) -> &[f64] {
        let p = &self.params[i / 2];
        if i % 2 == 0 {
            p.weight_slice()
        } else {
            p.bias_slice()
        }
    }

    pub fn tensor_data_mut(&mut self, i: usize) -> &mut [f64] {
        let p = &mut self.params[i / 2];
        if i % 2 == 0 {
            p.weight_slice_mut()
        } else {
            p.bias_slice_mut()
        }
    }

    /// Flat view of the gradient tensor matching [`Network::tensor_data`] `i`.
    pub fn gradient_tensor<'a>(&self, grads: &'a Gradients, i: usize) -> &'a [f64] {
        let p = &grads.layers[i / 2];
        if i % 2 == 0 {
            p.weight_slice()
        } else {
            p.bias_slice()
        }
    }

    /// Cross-entropy loss and class probabilities of one crop against
    /// `label`, together with the analytic parameter gradients.
    pub fn loss_and_gradients(
        &self,
        crop: &ArrayView2<f64>,
        label: usize,
    ) -> Result<(f64, Vec<f64>, Gradients), NetError> {
        let trace = self.forward_trace(crop)?;
        let logits: Vec<f64> = trace.logits.column(0).iter().cloned().collect();
        let probs = softmax(&logits);
        let loss = cross_entropy(&probs, label);
        let mut dlogits = Array2::zeros(trace.logits.dim());
        for (g, &p) in probs.iter().enumerate() {
            dlogits[[g, 0]] = p - f64::from(u8::from(g == label));
        }
        let grads = self.backward(&trace, &dlogits);
        Ok((loss, probs, grads))
    }

    fn check_crop(&self, crop: &ArrayView2<f64>) -> Result<(), NetError> {
        let expected = (self.spec.input_channels, self.spec.input_time);
        let found = (crop.nrows(), crop.ncols());
        if expected != found {
            return Err(NetError::ShapeMismatch { expected, found });
        }
        if crop.iter().any(|v| !v.is_finite()) {
            return Err(NetError::NonFiniteInput);
        }
        Ok(())
    }

    /// Forward pass returning softmax probabilities and the post-ELU
    /// activation maps of the requested analysis layers (1-based ids).
    pub fn forward(
        &self,
        crop: &ArrayView2<f64>,
        taps: &[usize],
    ) -> Result<ForwardOutput, NetError> {
        self.check_crop(crop)?;
        let n_analysis = self.spec.n_analysis_layers();
        for &t in taps {
            if t == 0 || t > n_analysis {
                return Err(NetError::Spec(SpecError::NoSuchAnalysisLayer(
                    t, n_analysis,
                )));
            }
        }
        let (logits, feats) = self.run(crop, false);
        let col: Vec<f64> = logits.column(0).iter().cloned().collect();
        let probabilities = softmax(&col);
        let analysis_indices = self.spec.analysis_layer_indices();
        let mut maps = Vec::with_capacity(taps.len());
        for &t in taps {
            let idx = analysis_indices[t - 1];
            let values = match &feats[idx] {
                Some(Feat::Maps(m)) => m.clone(),
                _ => unreachable!("analysis layers are map-shaped and recorded"),
            };
            maps.push(ActivationMap {
                layer: t,
                trial: 0,
                values,
            });
        }
        Ok(ForwardOutput {
            probabilities,
            taps: maps,
        })
    }

    /// Forward pass recording every intermediate, for backprop.
    pub(crate) fn forward_trace(&self, crop: &ArrayView2<f64>) -> Result<Trace, NetError> {
        self.check_crop(crop)?;
        let (logits, feats) = self.run(crop, true);
        Ok(Trace {
            input: crop.to_owned(),
            feats: feats.into_iter().map(|f| f.expect("recorded")).collect(),
            logits,
        })
    }

    /// Interpret the descriptor list. When `record` is false only analysis
    /// ELU outputs are kept (for taps); otherwise everything is.
    fn run(&self, crop: &ArrayView2<f64>, record: bool) -> (Array2<f64>, Vec<Option<Feat>>) {
        let mut feats: Vec<Option<Feat>> = Vec::with_capacity(self.spec.layers.len());
        let mut cur = Feat::Planes(Array3::zeros((0, 0, 0))); // replaced by layer 0
        let mut param_idx = 0usize;
        let mut logits = Array2::zeros((self.spec.n_classes, 1));
        for (index, layer) in self.spec.layers.iter().enumerate() {
            let keep;
            match layer {
                LayerDesc::TemporalConv { kernel, .. } => {
                    let p = &self.params[param_idx];
                    param_idx += 1;
                    if index == 0 {
                        let LayerParams::Temporal { w, b } = p else {
                            unreachable!()
                        };
                        cur = Feat::Planes(temporal_forward(crop, w, b, *kernel));
                    } else {
                        let LayerParams::Conv { w, b } = p else {
                            unreachable!()
                        };
                        let Feat::Maps(input) = &cur else {
                            unreachable!()
                        };
                        cur = Feat::Maps(conv_forward(input, w, b));
                    }
                    keep = record;
                }
                LayerDesc::SpatialConv { .. } => {
                    let p = &self.params[param_idx];
                    param_idx += 1;
                    let LayerParams::Spatial { w, b } = p else {
                        unreachable!()
                    };
                    let Feat::Planes(input) = &cur else {
                        unreachable!()
                    };
                    cur = Feat::Maps(spatial_forward(input, w, b));
                    keep = record;
                }
                LayerDesc::Elu => {
                    let Feat::Maps(input) = &cur else {
                        unreachable!()
                    };
                    cur = Feat::Maps(input.mapv(elu));
                    // Analysis taps read these even without a trace.
                    keep = true;
                }
                LayerDesc::MaxPool { size, stride } => {
                    let Feat::Maps(input) = &cur else {
                        unreachable!()
                    };
                    cur = Feat::Maps(pool_forward(input, *size, *stride));
                    keep = record;
                }
                LayerDesc::Classifier => {
                    let p = &self.params[param_idx];
                    param_idx += 1;
                    let LayerParams::Conv { w, b } = p else {
                        unreachable!()
                    };
                    let Feat::Maps(input) = &cur else {
                        unreachable!()
                    };
                    logits = conv_forward(input, w, b);
                    keep = record;
                    if keep {
                        feats.push(Some(Feat::Maps(logits.clone())));
                        continue;
                    }
                }
            }
            feats.push(keep.then(|| cur.clone()));
        }
        (logits, feats)
    }

    /// Backprop from `d(loss)/d(logits)`; returns parameter gradients.
    pub(crate) fn backward(&self, trace: &Trace, dlogits: &Array2<f64>) -> Gradients {
        let mut grads = self.zero_gradients();
        let mut param_idx = self.params.len();
        let mut grad = FeatGrad::Maps(dlogits.clone());
        for (index, layer) in self.spec.layers.iter().enumerate().rev() {
            let input_feat: &Feat = if index == 0 {
                // placeholder; layer 0 reads trace.input directly
                &trace.feats[0]
            } else {
                &trace.feats[index - 1]
            };
            match layer {
                LayerDesc::Classifier => {
                    param_idx -= 1;
                    let LayerParams::Conv { w, .. } = &self.params[param_idx] else {
                        unreachable!()
                    };
                    let LayerParams::Conv {
                        w: ref mut dw,
                        b: ref mut db,
                    } = grads.layers[param_idx]
                    else {
                        unreachable!()
                    };
                    let Feat::Maps(input) = input_feat else {
                        unreachable!()
                    };
                    let FeatGrad::Maps(dout) = &grad else {
                        unreachable!()
                    };
                    let din = conv_backward(input, w, dout, dw, db);
                    grad = FeatGrad::Maps(din);
                }
                LayerDesc::MaxPool { size, stride } => {
                    let Feat::Maps(input) = input_feat else {
                        unreachable!()
                    };
                    let FeatGrad::Maps(dout) = &grad else {
                        unreachable!()
                    };
                    grad = FeatGrad::Maps(pool_backward(input, dout, *size, *stride));
                }
                LayerDesc::Elu => {
                    let Feat::Maps(pre) = input_feat else {
                        unreachable!()
                    };
                    let FeatGrad::Maps(dout) = &grad else {
                        unreachable!()
                    };
                    let mut din = dout.clone();
                    din.zip_mut_with(pre, |d, &x| *d *= elu_grad(x));
                    grad = FeatGrad::Maps(din);
                }
                LayerDesc::TemporalConv { .. } => {
                    param_idx -= 1;
                    if index == 0 {
                        let LayerParams::Temporal {
                            w: ref mut dw,
                            b: ref mut db,
                        } = grads.layers[param_idx]
                        else {
                            unreachable!()
                        };
                        let FeatGrad::Planes(dout) = &grad else {
                            unreachable!()
                        };
                        temporal_backward(&trace.input.view(), dout, dw, db);
                        break;
                    } else {
                        let LayerParams::Conv { w, .. } = &self.params[param_idx] else {
                            unreachable!()
                        };
                        let LayerParams::Conv {
                            w: ref mut dw,
                            b: ref mut db,
                        } = grads.layers[param_idx]
                        else {
                            unreachable!()
                        };
                        let Feat::Maps(input) = input_feat else {
                            unreachable!()
                        };
                        let FeatGrad::Maps(dout) = &grad else {
                            unreachable!()
                        };
                        let din = conv_backward(input, w, dout, dw, db);
                        grad = FeatGrad::Maps(din);
                    }
                }
                LayerDesc::SpatialConv { .. } => {
                    param_idx -= 1;
                    let LayerParams::Spatial { w, .. } = &self.params[param_idx] else {
                        unreachable!()
                    };
                    let LayerParams::Spatial {
                        w: ref mut dw,
                        b: ref mut db,
                    } = grads.layers[param_idx]
                    else {
                        unreachable!()
                    };
                    let Feat::Planes(input) = input_feat else {
                        unreachable!()
                    };
                    let FeatGrad::Maps(dout) = &grad else {
                        unreachable!()
                    };
                    grad = FeatGrad::Planes(spatial_backward(input, w, dout, dw, db));
                }
            }
        }
        grads
    }
}

enum FeatGrad {
    Planes(Array3<f64>),
    Maps(Array2<f64>),
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|v| v / sum).collect()
}

fn temporal_forward(
    crop: &ArrayView2<f64>,
    w: &Array2<f64>,
    b: &Array1<f64>,
    kernel: usize,
) -> Array3<f64> {
    let (filters, channels) = (w.nrows(), crop.nrows());
    let out_len = crop.ncols() - kernel + 1;
    let mut out = Array3::zeros((filters, channels, out_len));
    for f in 0..filters {
        let wrow = w.row(f);
        let wrow = wrow.as_slice().unwrap();
        for c in 0..channels {
            let xrow = crop.row(c);
            let xrow = xrow.as_slice().unwrap();
            let mut orow = out.index_axis_mut(Axis(0), f);
            let mut orow = orow.index_axis_mut(Axis(0), c);
            let orow = orow.as_slice_mut().unwrap();
            orow.fill(b[f]);
            for (k, &wk) in wrow.iter().enumerate().take(kernel) {
                axpy(orow, &xrow[k..k + out_len], wk);
            }
        }
    }
    out
}

fn temporal_backward(
    input: &ArrayView2<f64>,
    dout: &Array3<f64>,
    dw: &mut Array2<f64>,
    db: &mut Array1<f64>,
) {
    let (filters, channels, out_len) = dout.dim();
    let kernel = dw.ncols();
    for f in 0..filters {
        let mut dwrow = dw.row_mut(f);
        let dwrow = dwrow.as_slice_mut().unwrap();
        for c in 0..channels {
            let xrow = input.row(c);
            let xrow = xrow.as_slice().unwrap();
            let drow = dout.index_axis(Axis(0), f);
            let drow = drow.index_axis(Axis(0), c);
            let drow = drow.as_slice().unwrap();
            for (k, dwk) in dwrow.iter_mut().enumerate().take(kernel) {
                *dwk += dot(drow, &xrow[k..k + out_len]);
            }
            db[f] += drow.iter().sum::<f64>();
        }
    }
}

fn spatial_forward(planes: &Array3<f64>, w: &Array3<f64>, b: &Array1<f64>) -> Array2<f64> {
    let (out_filters, in_filters, channels) = w.dim();
    let time = planes.dim().2;
    let mut out = Array2::zeros((out_filters, time));
    for g in 0..out_filters {
        let mut orow = out.row_mut(g);
        let orow = orow.as_slice_mut().unwrap();
        orow.fill(b[g]);
        for f in 0..in_filters {
            for c in 0..channels {
                let prow = planes.index_axis(Axis(0), f);
                let prow = prow.index_axis(Axis(0), c);
                axpy(orow, prow.as_slice().unwrap(), w[[g, f, c]]);
            }
        }
    }
    out
}

fn spatial_backward(
    input: &Array3<f64>,
    w: &Array3<f64>,
    dout: &Array2<f64>,
    dw: &mut Array3<f64>,
    db: &mut Array1<f64>,
) -> Array3<f64> {
    let (out_filters, in_filters, channels) = w.dim();
    let mut din = Array3::zeros(input.dim());
    for g in 0..out_filters {
        let drow = dout.row(g);
        let drow = drow.as_slice().unwrap();
        db[g] += drow.iter().sum::<f64>();
        for f in 0..in_filters {
            for c in 0..channels {
                let irow = input.index_axis(Axis(0), f);
                let irow = irow.index_axis(Axis(0), c);
                dw[[g, f, c]] += dot(drow, irow.as_slice().unwrap());
                let mut dirow = din.index_axis_mut(Axis(0), f);
                let mut dirow = dirow.index_axis_mut(Axis(0), c);
                axpy(dirow.as_slice_mut().unwrap(), drow, w[[g, f, c]]);
            }
        }
    }
    din
}

fn conv_forward(input: &Array2<f64>, w: &Array3<f64>, b: &Array1<f64>) -> Array2<f64> {
    let (out_filters, in_filters, kernel) = w.dim();
    let out_len = input.ncols() - kernel + 1;
    let mut out = Array2::zeros((out_filters, out_len));
    for g in 0..out_filters {
        let mut orow = out.row_mut(g);
        let orow = orow.as_slice_mut().unwrap();
        orow.fill(b[g]);
        for f in 0..in_filters {
            let irow = input.row(f);
            let irow = irow.as_slice().unwrap();
            for k in 0..kernel {
                axpy(orow, &irow[k..k + out_len], w[[g, f, k]]);
            }
        }
    }
    out
}

fn conv_backward(
    input: &Array2<f64>,
    w: &Array3<f64>,
    dout: &Array2<f64>,
    dw: &mut Array3<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    let (out_filters, in_filters, kernel) = w.dim();
    let out_len = dout.ncols();
    let mut din = Array2::zeros(input.dim());
    for g in 0..out_filters {
        let drow = dout.row(g);
        let drow = drow.as_slice().unwrap();
        db[g] += drow.iter().sum::<f64>();
        for f in 0..in_filters {
            let irow = input.row(f);
            let irow = irow.as_slice().unwrap();
            let mut dirow = din.row_mut(f);
            let dirow = dirow.as_slice_mut().unwrap();
            for k in 0..kernel {
                dw[[g, f, k]] += dot(drow, &irow[k..k + out_len]);
                axpy(&mut dirow[k..k + out_len], drow, w[[g, f, k]]);
            }
        }
    }
    din
}

fn pool_forward(input: &Array2<f64>, size: usize, stride: usize) -> Array2<f64> {
    let filters = input.nrows();
    let out_len = (input.ncols() - size) / stride + 1;
    let mut out = Array2::zeros((filters, out_len));
    for f in 0..filters {
        let irow = input.row(f);
        let irow = irow.as_slice().unwrap();
        let mut orow = out.row_mut(f);
        for (j, o) in orow.iter_mut().enumerate() {
            let window = &irow[j * stride..j * stride + size];
            *o = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        }
    }
    out
}

/// Gradient routes to the first maximal element of each window.
fn pool_backward(input: &Array2<f64>, dout: &Array2<f64>, size: usize, stride: usize) -> Array2<f64> {
    let mut din = Array2::zeros(input.dim());
    for f in 0..input.nrows() {
        let irow = input.row(f);
        let irow = irow.as_slice().unwrap();
        for (j, &d) in dout.row(f).iter().enumerate() {
            let base = j * stride;
            let window = &irow[base..base + size];
            let mut arg = 0;
            let mut best = window[0];
            for (i, &v) in window.iter().enumerate().skip(1) {
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            din[[f, base + arg]] += d;
        }
    }
    din
}

/// Cross-entropy of the true label under softmax logits.
pub(crate) fn cross_entropy(probabilities: &[f64], label: usize) -> f64 {
    -(probabilities[label].max(1e-300)).ln()
}
