use serde::{Deserialize, Serialize};

use crate::error::{Error, LayerRef, Result};

/// Bytes per trainable scalar on the wire.
pub const BYTES_PER_PARAM: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        kernel: (usize, usize),
        stride: usize,
        padding: Padding,
        filters: usize,
    },
    Dense {
        units: usize,
    },
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    Relu,
    Flatten,
    Softmax,
}

impl LayerSpec {
    pub fn conv(kernel: usize, filters: usize) -> Self {
        LayerSpec::Conv2d {
            kernel: (kernel, kernel),
            stride: 1,
            padding: Padding::Same,
            filters,
        }
    }

    pub fn dense(units: usize) -> Self {
        LayerSpec::Dense { units }
    }

    pub fn pool(window: usize) -> Self {
        LayerSpec::MaxPool2d {
            window,
            stride: window,
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. })
    }

    /// Output channels of a conv layer, or units of a dense layer.
    pub fn filter_count(&self) -> Option<usize> {
        match *self {
            LayerSpec::Conv2d { filters, .. } => Some(filters),
            LayerSpec::Dense { units } => Some(units),
            _ => None,
        }
    }

    fn with_filter_count(&self, count: usize) -> Self {
        match *self {
            LayerSpec::Conv2d {
                kernel,
                stride,
                padding,
                ..
            } => LayerSpec::Conv2d {
                kernel,
                stride,
                padding,
                filters: count,
            },
            LayerSpec::Dense { .. } => LayerSpec::Dense { units: count },
            ref other => other.clone(),
        }
    }
}

/// Activation shape of a single sample, height × width × channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape3 {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape3 {
    pub const fn new(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c }
    }

    pub fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Output extent and leading padding along one spatial axis.
pub(crate) fn conv_extent(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Some((out, total / 2))
        }
        Padding::Valid => (input >= kernel).then(|| ((input - kernel) / stride + 1, 0)),
    }
}

/// A sequential network topology.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawArchitecture")]
pub struct Architecture {
    input_shape: Shape3,
    layers: Vec<LayerSpec>,
    class_count: usize,
    #[serde(skip)]
    shapes: Vec<Shape3>,
}

#[derive(Deserialize)]
struct RawArchitecture {
    input_shape: Shape3,
    layers: Vec<LayerSpec>,
    class_count: usize,
}

impl TryFrom<RawArchitecture> for Architecture {
    type Error = Error;

    fn try_from(raw: RawArchitecture) -> Result<Self> {
        Architecture::new(raw.input_shape, raw.layers, raw.class_count)
    }
}

impl Architecture {
    /// Validates the layer stack by propagating shapes. The last layer must be
    /// a softmax whose width equals `class_count`.
    pub fn new(input_shape: Shape3, layers: Vec<LayerSpec>, class_count: usize) -> Result<Self> {
        if input_shape.is_empty() {
            return Err(Error::shape(LayerRef::Input, "input shape has a zero extent"));
        }
        if class_count == 0 {
            return Err(Error::invalid("class_count must be positive"));
        }
        let mut shapes = Vec::with_capacity(layers.len() + 1);
        shapes.push(input_shape);
        let mut cur = input_shape;
        for (i, layer) in layers.iter().enumerate() {
            let at = LayerRef::Layer(i);
            cur = match *layer {
                LayerSpec::Conv2d {
                    kernel: (kh, kw),
                    stride,
                    padding,
                    filters,
                } => {
                    if kh == 0 || kw == 0 || stride == 0 || filters == 0 {
                        return Err(Error::shape(at, "conv extents, stride and filters must be >= 1"));
                    }
                    let (oh, _) = conv_extent(cur.h, kh, stride, padding)
                        .ok_or_else(|| Error::shape(at, format!("kernel {kh} taller than input {}", cur.h)))?;
                    let (ow, _) = conv_extent(cur.w, kw, stride, padding)
                        .ok_or_else(|| Error::shape(at, format!("kernel {kw} wider than input {}", cur.w)))?;
                    Shape3::new(oh, ow, filters)
                }
                LayerSpec::Dense { units } => {
                    if units == 0 {
                        return Err(Error::shape(at, "dense layer needs at least one unit"));
                    }
                    if cur.h != 1 || cur.w != 1 {
                        return Err(Error::shape(
                            at,
                            format!("dense input must be flat, got {}x{}x{}", cur.h, cur.w, cur.c),
                        ));
                    }
                    Shape3::new(1, 1, units)
                }
                LayerSpec::MaxPool2d { window, stride } => {
                    if window == 0 || stride == 0 {
                        return Err(Error::shape(at, "pool window and stride must be >= 1"));
                    }
                    if cur.h < window || cur.w < window {
                        return Err(Error::shape(at, "pool window larger than input"));
                    }
                    Shape3::new((cur.h - window) / stride + 1, (cur.w - window) / stride + 1, cur.c)
                }
                LayerSpec::Relu => cur,
                LayerSpec::Flatten => Shape3::new(1, 1, cur.len()),
                LayerSpec::Softmax => {
                    if i + 1 != layers.len() {
                        return Err(Error::shape(at, "softmax is only supported as the final layer"));
                    }
                    cur
                }
            };
            shapes.push(cur);
        }
        if layers.last() != Some(&LayerSpec::Softmax) {
            return Err(Error::shape(
                LayerRef::Layer(layers.len().saturating_sub(1)),
                "network must end with a softmax layer",
            ));
        }
        if cur.len() != class_count {
            return Err(Error::shape(
                LayerRef::Layer(layers.len() - 1),
                format!("output width {} does not match class_count {class_count}", cur.len()),
            ));
        }
        Ok(Self {
            input_shape,
            layers,
            class_count,
            shapes,
        })
    }

    pub fn input_shape(&self) -> Shape3 {
        self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Input shape of layer `i`.
    pub fn input_of(&self, i: usize) -> Shape3 {
        self.shapes[i]
    }

    /// Output shape of layer `i`.
    pub fn output_of(&self, i: usize) -> Shape3 {
        self.shapes[i + 1]
    }

    pub fn trainable_layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_trainable())
            .map(|(i, _)| i)
    }

    /// The final trainable layer; it produces the class logits and is never pruned.
    pub fn classifier_index(&self) -> Option<usize> {
        self.trainable_layers().last()
    }

    pub fn prunable_layers(&self) -> Vec<usize> {
        let classifier = self.classifier_index();
        self.trainable_layers().filter(|&i| Some(i) != classifier).collect()
    }

    /// The next trainable layer after `i`, whose input channels follow layer `i`'s filters.
    pub fn successor(&self, i: usize) -> Option<usize> {
        (i + 1..self.layers.len()).find(|&j| self.layers[j].is_trainable())
    }

    /// Weight tensor shape of a trainable layer: `[filters, kh, kw, c_in]` for
    /// conv, `[units, inputs]` for dense.
    pub fn weight_shape(&self, i: usize) -> Option<Vec<usize>> {
        let input = self.input_of(i);
        match self.layers[i] {
            LayerSpec::Conv2d {
                kernel: (kh, kw),
                filters,
                ..
            } => Some(vec![filters, kh, kw, input.c]),
            LayerSpec::Dense { units } => Some(vec![units, input.len()]),
            _ => None,
        }
    }

    pub fn layer_macs(&self, i: usize) -> u64 {
        let input = self.input_of(i);
        let out = self.output_of(i);
        match self.layers[i] {
            LayerSpec::Conv2d {
                kernel: (kh, kw),
                filters,
                ..
            } => (out.h * out.w * kh * kw * input.c * filters) as u64,
            LayerSpec::Dense { units } => (input.len() * units) as u64,
            _ => 0,
        }
    }

    /// Multiply-accumulate count of one forward pass over one sample.
    pub fn macs(&self) -> u64 {
        (0..self.layers.len()).map(|i| self.layer_macs(i)).sum()
    }

    pub fn param_count(&self) -> u64 {
        self.trainable_layers()
            .map(|i| {
                let w: usize = self.weight_shape(i).unwrap_or_default().iter().product();
                (w + self.layers[i].filter_count().unwrap_or(0)) as u64
            })
            .sum()
    }

    /// Size of a full parameter (or gradient) transfer.
    pub fn param_bytes(&self) -> u64 {
        self.param_count() * BYTES_PER_PARAM
    }

    /// A copy with layer `i`'s filter count replaced.
    pub fn with_filter_count(&self, i: usize, count: usize) -> Result<Self> {
        let layer = self
            .layers
            .get(i)
            .ok_or_else(|| Error::invalid(format!("layer index {i} out of range")))?;
        if !layer.is_trainable() {
            return Err(Error::NotPrunable(i));
        }
        let mut layers = self.layers.clone();
        layers[i] = layer.with_filter_count(count);
        Self::new(self.input_shape, layers, self.class_count)
    }
}
