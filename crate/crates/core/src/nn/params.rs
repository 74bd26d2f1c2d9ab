use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, LayerRef, Result};
use crate::nn::{Architecture, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Weights of a concrete model, one slot per layer of its [`Architecture`]
/// (`None` for layers without parameters).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameters<T = f32> {
    layers: Vec<Option<LayerParams<T>>>,
}

/// A parameter-shaped update; for client reports this is the parameter delta
/// accumulated over local training.
pub type GradientDelta<T = f32> = Parameters<T>;

impl<T: Scalar> Parameters<T> {
    pub fn from_layers(layers: Vec<Option<LayerParams<T>>>) -> Self {
        Self { layers }
    }

    pub fn zeros(arch: &Architecture) -> Self {
        let layers = (0..arch.layers().len())
            .map(|i| {
                arch.weight_shape(i).map(|shape| {
                    let filters = shape[0];
                    LayerParams {
                        weight: Tensor::zeros(shape),
                        bias: Tensor::zeros(vec![filters]),
                    }
                })
            })
            .collect();
        Self { layers }
    }

    /// He-uniform initialisation: weights ~ U(-√(6/fan_in), √(6/fan_in)), zero bias.
    pub fn init<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Self {
        let mut params = Self::zeros(arch);
        for slot in params.layers.iter_mut().flatten() {
            let shape = slot.weight.shape();
            let fan_in: usize = shape[1..].iter().product();
            let limit = (6.0 / fan_in as f64).sqrt();
            for w in slot.weight.values_mut() {
                *w = T::from_f64_lossy(rng.random_range(-limit..limit));
            }
        }
        params
    }

    pub fn layers(&self) -> &[Option<LayerParams<T>>] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> Option<&LayerParams<T>> {
        self.layers.get(i).and_then(Option::as_ref)
    }

    pub fn layer_mut(&mut self, i: usize) -> Option<&mut LayerParams<T>> {
        self.layers.get_mut(i).and_then(Option::as_mut)
    }

    /// Verifies that every slot matches the architecture's expected shapes.
    pub fn check(&self, arch: &Architecture) -> Result<()> {
        if self.layers.len() != arch.layers().len() {
            return Err(Error::shape(
                LayerRef::Input,
                format!(
                    "parameters cover {} layers, architecture has {}",
                    self.layers.len(),
                    arch.layers().len()
                ),
            ));
        }
        for (i, slot) in self.layers.iter().enumerate() {
            let at = LayerRef::Layer(i);
            match (arch.weight_shape(i), slot) {
                (None, None) => {}
                (Some(shape), Some(p)) => {
                    if p.weight.shape() != shape.as_slice() {
                        return Err(Error::shape(
                            at,
                            format!("weight shape {:?}, expected {shape:?}", p.weight.shape()),
                        ));
                    }
                    if p.bias.shape() != [shape[0]] {
                        return Err(Error::shape(
                            at,
                            format!("bias shape {:?}, expected [{}]", p.bias.shape(), shape[0]),
                        ));
                    }
                }
                (Some(_), None) => return Err(Error::shape(at, "missing parameters")),
                (None, Some(_)) => return Err(Error::shape(at, "unexpected parameters")),
            }
        }
        Ok(())
    }

    fn congruent(&self, other: &Self) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::shape(LayerRef::Input, "parameter sets cover different layer counts"));
        }
        for (i, (a, b)) in self.layers.iter().zip(&other.layers).enumerate() {
            let ok = match (a, b) {
                (None, None) => true,
                (Some(a), Some(b)) => a.weight.shape() == b.weight.shape() && a.bias.shape() == b.bias.shape(),
                _ => false,
            };
            if !ok {
                return Err(Error::shape(LayerRef::Layer(i), "parameter sets are not congruent"));
            }
        }
        Ok(())
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flatten().flat_map(|p| [&p.weight, &p.bias])
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flatten()
            .flat_map(|p| [&mut p.weight, &mut p.bias])
    }

    pub fn scalars(&self) -> impl Iterator<Item = T> + '_ {
        self.tensors().flat_map(|t| t.values().iter().copied())
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(Tensor::is_finite)
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &Self, scale: T) -> Result<()> {
        self.congruent(other)?;
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            for (x, &y) in a.values_mut().iter_mut().zip(b.values()) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    /// `self - other`.
    pub fn delta_from(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.add_scaled(other, -T::one())?;
        Ok(out)
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.tensors_mut() {
            for x in t.values_mut() {
                *x *= factor;
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        Parameters {
            layers: self
                .layers
                .iter()
                .map(|slot| {
                    slot.as_ref().map(|p| LayerParams {
                        weight: p.weight.cast(),
                        bias: p.bias.cast(),
                    })
                })
                .collect(),
        }
    }
}

/// Weighted mean `Σ wᵢ·xᵢ / Σ wᵢ`, accumulated in item order.
pub fn weighted_mean<'a, T: Scalar>(items: impl IntoIterator<Item = (f64, &'a Parameters<T>)>) -> Result<Parameters<T>> {
    let items: Vec<_> = items.into_iter().collect();
    let total: f64 = items.iter().map(|(w, _)| *w).sum();
    if items.is_empty() || total <= 0.0 || !total.is_finite() {
        return Err(Error::invalid("weighted mean needs a positive total weight"));
    }
    let mut acc = items[0].1.clone();
    acc.scale(T::zero());
    for (w, p) in &items {
        acc.add_scaled(p, T::from_f64_lossy(*w / total))?;
    }
    Ok(acc)
}

/// One plain SGD step, `params - lr · grad`. `lr = 0` is the identity.
pub fn sgd_step<T: Scalar>(params: &Parameters<T>, grad: &GradientDelta<T>, lr: f64) -> Result<Parameters<T>> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::invalid(format!("learning rate must be finite and >= 0, got {lr}")));
    }
    let mut next = params.clone();
    next.add_scaled(grad, T::from_f64_lossy(-lr))?;
    Ok(next)
}
