//! Network architecture description, validation and shape inference.
//!
//! The architecture is the 5-conv-layer layout for multichannel time series:
//! a temporal convolution with no nonlinearity feeding a spatial convolution
//! that spans all channels (leaving only filter and time dimensions), then
//! three more temporal convolutions, every conv after the first followed by
//! ELU and optionally max-pooling, and a final classifier convolution with
//! softmax. The four ELUs mark the analysis layers 1-4 whose post-ELU
//! activations the probing pipeline taps.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("layer {index} ({name}): output time length would be {len}")]
    NonPositiveLength {
        index: usize,
        name: &'static str,
        len: i64,
    },
    #[error("layer {index} ({name}): {rule}")]
    LayoutRule {
        index: usize,
        name: &'static str,
        rule: String,
    },
    #[error("spec must contain exactly 5 convolutional layers before the classifier, got {0}")]
    ConvCount(usize),
    #[error("input must have at least one channel and two samples, got {channels}x{time}")]
    BadInput { channels: usize, time: usize },
    #[error("need at least 2 classes, got {0}")]
    BadClassCount(usize),
    #[error("analysis layer {0} does not exist (valid: 1..={1})")]
    NoSuchAnalysisLayer(usize, usize),
    #[error("unit {unit} out of range for analysis layer {layer} ({units} units)")]
    UnitOutOfRange {
        layer: usize,
        unit: usize,
        units: usize,
    },
    #[error("filter {filter} out of range for analysis layer {layer} ({filters} filters)")]
    FilterOutOfRange {
        layer: usize,
        filter: usize,
        filters: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerDesc {
    /// 1-D convolution along time. As the first layer it applies one shared
    /// kernel bank per channel; later instances convolve the filter maps.
    TemporalConv { kernel: usize, filters: usize },
    /// Convolution spanning all channels; collapses the channel dimension.
    SpatialConv { filters: usize },
    Elu,
    MaxPool { size: usize, stride: usize },
    /// Convolution over the full remaining length to `n_classes` logits,
    /// followed by softmax.
    Classifier,
}

impl LayerDesc {
    pub fn name(&self) -> &'static str {
        match self {
            LayerDesc::TemporalConv { .. } => "temporal_conv",
            LayerDesc::SpatialConv { .. } => "spatial_conv",
            LayerDesc::Elu => "elu",
            LayerDesc::MaxPool { .. } => "max_pool",
            LayerDesc::Classifier => "classifier",
        }
    }

    fn is_conv(&self) -> bool {
        matches!(
            self,
            LayerDesc::TemporalConv { .. } | LayerDesc::SpatialConv { .. }
        )
    }
}

/// Output shape of a descriptor during shape inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// `filters x channels x time` (before the spatial conv).
    Planes {
        filters: usize,
        channels: usize,
        time: usize,
    },
    /// `filters x time` (after the spatial conv).
    Maps { filters: usize, time: usize },
}

impl Shape {
    pub fn time(&self) -> usize {
        match *self {
            Shape::Planes { time, .. } => time,
            Shape::Maps { time, .. } => time,
        }
    }

    pub fn filters(&self) -> usize {
        match *self {
            Shape::Planes { filters, .. } => filters,
            Shape::Maps { filters, .. } => filters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_channels: usize,
    pub input_time: usize,
    pub n_classes: usize,
    pub layers: Vec<LayerDesc>,
}

/// Filter counts for the five conv layers of [`NetworkSpec::standard`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StandardParams {
    pub temporal_kernel: usize,
    pub filters: [usize; 5],
    pub pool_size: usize,
    pub pool_stride: usize,
}

impl Default for StandardParams {
    fn default() -> Self {
        StandardParams {
            temporal_kernel: 10,
            filters: [25, 25, 50, 100, 200],
            pool_size: 3,
            pool_stride: 3,
        }
    }
}

impl NetworkSpec {
    /// The canonical five-conv layout with the given sizes.
    pub fn standard(
        input_channels: usize,
        input_time: usize,
        n_classes: usize,
        p: &StandardParams,
    ) -> Self {
        let k = p.temporal_kernel;
        let pool = LayerDesc::MaxPool {
            size: p.pool_size,
            stride: p.pool_stride,
        };
        NetworkSpec {
            input_channels,
            input_time,
            n_classes,
            layers: vec![
                LayerDesc::TemporalConv {
                    kernel: k,
                    filters: p.filters[0],
                },
                LayerDesc::SpatialConv {
                    filters: p.filters[1],
                },
                LayerDesc::Elu,
                pool.clone(),
                LayerDesc::TemporalConv {
                    kernel: k,
                    filters: p.filters[2],
                },
                LayerDesc::Elu,
                pool.clone(),
                LayerDesc::TemporalConv {
                    kernel: k,
                    filters: p.filters[3],
                },
                LayerDesc::Elu,
                pool.clone(),
                LayerDesc::TemporalConv {
                    kernel: k,
                    filters: p.filters[4],
                },
                LayerDesc::Elu,
                pool,
                LayerDesc::Classifier,
            ],
        }
    }

    /// Desk-scale default: 522-sample window, kernel 10, filters
    /// 25/25/50/100/200, pool 3 stride 3.
    pub fn default_desk(input_channels: usize, n_classes: usize) -> Self {
        Self::standard(input_channels, 522, n_classes, &StandardParams::default())
    }

    /// Validate the layout and return the output shape of every descriptor.
    pub fn infer_shapes(&self) -> Result<Vec<Shape>, SpecError> {
        if self.input_channels == 0 || self.input_time < 2 {
            return Err(SpecError::BadInput {
                channels: self.input_channels,
                time: self.input_time,
            });
        }
        if self.n_classes < 2 {
            return Err(SpecError::BadClassCount(self.n_classes));
        }
        let rule = |index: usize, name: &'static str, rule: String| SpecError::LayoutRule {
            index,
            name,
            rule,
        };
        match self.layers.first() {
            Some(LayerDesc::TemporalConv { .. }) => {}
            other => {
                return Err(rule(
                    0,
                    other.map_or("missing", |l| l.name()),
                    "first layer must be a temporal convolution".into(),
                ))
            }
        }
        match self.layers.get(1) {
            Some(LayerDesc::SpatialConv { .. }) => {}
            other => {
                return Err(rule(
                    1,
                    other.map_or("missing", |l| l.name()),
                    "second layer must be the spatial convolution (no nonlinearity between)"
                        .into(),
                ))
            }
        }
        match self.layers.last() {
            Some(LayerDesc::Classifier) => {}
            other => {
                return Err(rule(
                    self.layers.len().saturating_sub(1),
                    other.map_or("missing", |l| l.name()),
                    "last layer must be the classifier".into(),
                ))
            }
        }
        let convs = self.layers.iter().filter(|l| l.is_conv()).count();
        if convs != 5 {
            return Err(SpecError::ConvCount(convs));
        }

        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut channels_present = true;
        let mut cur_filters = 0usize;
        let mut cur_time = self.input_time;
        for (index, layer) in self.layers.iter().enumerate() {
            let name = layer.name();
            match layer {
                LayerDesc::TemporalConv { kernel, filters } => {
                    if *kernel == 0 || *filters == 0 {
                        return Err(rule(index, name, "kernel and filters must be >= 1".into()));
                    }
                    let out = cur_time as i64 - *kernel as i64 + 1;
                    if out <= 0 {
                        return Err(SpecError::NonPositiveLength {
                            index,
                            name,
                            len: out,
                        });
                    }
                    if index > 0 && channels_present {
                        return Err(rule(
                            index,
                            name,
                            "temporal convolutions after the first require the spatial \
                             convolution to have collapsed the channel dimension"
                                .into(),
                        ));
                    }
                    if index > 0 && !matches!(self.layers.get(index + 1), Some(LayerDesc::Elu)) {
                        return Err(rule(
                            index,
                            name,
                            "every convolution after the first must be followed by elu".into(),
                        ));
                    }
                    cur_time = out as usize;
                    cur_filters = *filters;
                    if index == 0 {
                        shapes.push(Shape::Planes {
                            filters: cur_filters,
                            channels: self.input_channels,
                            time: cur_time,
                        });
                    } else {
                        shapes.push(Shape::Maps {
                            filters: cur_filters,
                            time: cur_time,
                        });
                    }
                }
                LayerDesc::SpatialConv { filters } => {
                    if index != 1 {
                        return Err(rule(
                            index,
                            name,
                            "the spatial convolution must be the second layer".into(),
                        ));
                    }
                    if *filters == 0 {
                        return Err(rule(index, name, "filters must be >= 1".into()));
                    }
                    if !matches!(self.layers.get(index + 1), Some(LayerDesc::Elu)) {
                        return Err(rule(
                            index,
                            name,
                            "every convolution after the first must be followed by elu".into(),
                        ));
                    }
                    channels_present = false;
                    cur_filters = *filters;
                    shapes.push(Shape::Maps {
                        filters: cur_filters,
                        time: cur_time,
                    });
                }
                LayerDesc::Elu => {
                    if index < 2 || self.layers[index - 1].is_conv() == false {
                        return Err(rule(
                            index,
                            name,
                            "elu must directly follow a convolution after the first".into(),
                        ));
                    }
                    shapes.push(Shape::Maps {
                        filters: cur_filters,
                        time: cur_time,
                    });
                }
                LayerDesc::MaxPool { size, stride } => {
                    if *size == 0 || *stride == 0 {
                        return Err(rule(index, name, "size and stride must be >= 1".into()));
                    }
                    if !matches!(self.layers.get(index.wrapping_sub(1)), Some(LayerDesc::Elu)) {
                        return Err(rule(index, name, "max-pool must follow elu".into()));
                    }
                    if *size > cur_time {
                        return Err(SpecError::NonPositiveLength {
                            index,
                            name,
                            len: cur_time as i64 - *size as i64 + 1,
                        });
                    }
                    cur_time = (cur_time - size) / stride + 1;
                    shapes.push(Shape::Maps {
                        filters: cur_filters,
                        time: cur_time,
                    });
                }
                LayerDesc::Classifier => {
                    if index + 1 != self.layers.len() {
                        return Err(rule(index, name, "classifier must be last".into()));
                    }
                    // Kernel spans the whole remaining length.
                    cur_filters = self.n_classes;
                    cur_time = 1;
                    shapes.push(Shape::Maps {
                        filters: cur_filters,
                        time: cur_time,
                    });
                }
            }
        }
        Ok(shapes)
    }

    /// Descriptor indices of the ELU layers, in order; analysis layer ids are
    /// their 1-based positions in this list.
    pub fn analysis_layer_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| matches!(l, LayerDesc::Elu).then_some(i))
            .collect()
    }

    pub fn n_analysis_layers(&self) -> usize {
        self.analysis_layer_indices().len()
    }

    /// `(filters, units)` of the post-ELU activation map of an analysis layer.
    pub fn analysis_layer_shape(&self, layer: usize) -> Result<(usize, usize), SpecError> {
        let shapes = self.infer_shapes()?;
        let indices = self.analysis_layer_indices();
        if layer == 0 || layer > indices.len() {
            return Err(SpecError::NoSuchAnalysisLayer(layer, indices.len()));
        }
        let shape = shapes[indices[layer - 1]];
        Ok((shape.filters(), shape.time()))
    }

    /// Classifier kernel length (the time length entering the classifier).
    pub fn classifier_kernel(&self) -> Result<usize, SpecError> {
        let shapes = self.infer_shapes()?;
        // Shape before the classifier descriptor.
        Ok(shapes[shapes.len() - 2].time())
    }
}
