//! Named desk-scale model templates.

use crate::error::{Error, Result};
use crate::nn::{Architecture, LayerSpec, Padding, Shape3};

pub const TEMPLATE_NAMES: [&str; 2] = ["convnet-small", "convnet-celeba-shape"];

fn stem(filters: usize) -> LayerSpec {
    LayerSpec::Conv2d {
        kernel: (3, 3),
        stride: 2,
        padding: Padding::Same,
        filters,
    }
}

/// Four conv layers and one classifier.
pub fn convnet_small(input: Shape3, classes: usize) -> Result<Architecture> {
    use LayerSpec::*;
    Architecture::new(
        input,
        vec![
            stem(8),
            Relu,
            LayerSpec::pool(2),
            LayerSpec::conv(3, 16),
            Relu,
            LayerSpec::pool(2),
            LayerSpec::conv(3, 16),
            Relu,
            LayerSpec::conv(3, 16),
            Relu,
            LayerSpec::pool(2),
            Flatten,
            LayerSpec::dense(classes),
            Softmax,
        ],
        classes,
    )
}

/// Six conv layers and one classifier, the layer count of the face-attribute ConvNet.
pub fn convnet_celeba_shape(input: Shape3, classes: usize) -> Result<Architecture> {
    use LayerSpec::*;
    Architecture::new(
        input,
        vec![
            stem(8),
            Relu,
            LayerSpec::conv(3, 16),
            Relu,
            LayerSpec::pool(2),
            LayerSpec::conv(3, 16),
            Relu,
            LayerSpec::conv(3, 24),
            Relu,
            LayerSpec::pool(2),
            LayerSpec::conv(3, 24),
            Relu,
            LayerSpec::conv(3, 32),
            Relu,
            LayerSpec::pool(2),
            Flatten,
            LayerSpec::dense(classes),
            Softmax,
        ],
        classes,
    )
}

pub fn by_name(name: &str, input: Shape3, classes: usize) -> Result<Architecture> {
    match name {
        "convnet-small" => convnet_small(input, classes),
        "convnet-celeba-shape" => convnet_celeba_shape(input, classes),
        other => Err(Error::invalid(format!(
            "unknown model template `{other}` (expected one of {TEMPLATE_NAMES:?})"
        ))),
    }
}
