//! Receptive-field arithmetic.
//!
//! Maps a unit of an analysis layer to the exact half-open interval of input
//! samples that can influence it, by composing the index geometry of every
//! descriptor on the path backwards: a valid convolution with kernel `k`
//! widens an interval `[a, b)` to `[a, b - 1 + k)`, a pool of size `s` and
//! stride `st` maps it to `[a*st, (b-1)*st + s)`, and ELU and the spatial
//! convolution leave time indices untouched.

use serde::{Deserialize, Serialize};

use super::spec::{LayerDesc, NetworkSpec, SpecError};

/// Half-open interval `[start, end)` of input sample indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceptiveField {
    pub start: usize,
    pub end: usize,
}

impl ReceptiveField {
    pub fn width(&self) -> usize {
        self.end - self.start
    }

    pub fn contains(&self, sample: usize) -> bool {
        sample >= self.start && sample < self.end
    }
}

/// Receptive field of `unit` at analysis layer `layer` (1-based).
pub fn receptive_field(
    spec: &NetworkSpec,
    layer: usize,
    unit: usize,
) -> Result<ReceptiveField, SpecError> {
    let (_, units) = spec.analysis_layer_shape(layer)?;
    if unit >= units {
        return Err(SpecError::UnitOutOfRange { layer, unit, units });
    }
    let elu_index = spec.analysis_layer_indices()[layer - 1];
    let (mut start, mut end) = (unit, unit + 1);
    for desc in spec.layers[..=elu_index].iter().rev() {
        match desc {
            LayerDesc::TemporalConv { kernel, .. } => {
                end = end - 1 + kernel;
            }
            LayerDesc::SpatialConv { .. } | LayerDesc::Elu => {}
            LayerDesc::MaxPool { size, stride } => {
                start *= stride;
                end = (end - 1) * stride + size;
            }
            LayerDesc::Classifier => unreachable!("classifier precedes no analysis layer"),
        }
    }
    Ok(ReceptiveField { start, end })
}
