//! Forward and backward passes for sequential conv/dense stacks.
//!
//! Activations are stored NHWC, row-major. Conv and dense layers both reduce
//! to one GEMM against a `[filters, fan_in]` weight matrix: conv through an
//! im2col patch matrix, dense directly on its (flat) input.

use crate::error::{Error, LayerRef, Result};
use crate::nn::arch::conv_extent;
use crate::nn::{Architecture, GradientDelta, LayerParams, LayerSpec, Parameters, Scalar, Shape3, Tensor};

enum Cache<T> {
    /// Patch matrix (conv) or the flat input (dense); the GEMM left operand.
    Linear { cols: Vec<T> },
    Pool { argmax: Vec<u32> },
    Relu { output: Vec<T> },
    Reshape,
}

struct ConvGeometry {
    kh: usize,
    kw: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
}

fn conv_geometry(layer: &LayerSpec, input: Shape3) -> Option<ConvGeometry> {
    match *layer {
        LayerSpec::Conv2d {
            kernel: (kh, kw),
            stride,
            padding,
            ..
        } => {
            let (_, pad_top) = conv_extent(input.h, kh, stride, padding)?;
            let (_, pad_left) = conv_extent(input.w, kw, stride, padding)?;
            Some(ConvGeometry {
                kh,
                kw,
                stride,
                pad_top,
                pad_left,
            })
        }
        _ => None,
    }
}

/// Yields `(dst_offset, src_offset)` pairs of channel runs for every valid
/// kernel tap of every output pixel. Both im2col and its adjoint use it.
fn for_each_patch_run(n: usize, input: Shape3, output: Shape3, g: &ConvGeometry, mut f: impl FnMut(usize, usize)) {
    let k = g.kh * g.kw * input.c;
    for b in 0..n {
        for oy in 0..output.h {
            for ox in 0..output.w {
                let row = ((b * output.h + oy) * output.w + ox) * k;
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= input.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad_left as isize;
                        if ix < 0 || ix >= input.w as isize {
                            continue;
                        }
                        let src = ((b * input.h + iy as usize) * input.w + ix as usize) * input.c;
                        f(row + (ky * g.kw + kx) * input.c, src);
                    }
                }
            }
        }
    }
}

fn im2col<T: Scalar>(x: &[T], n: usize, input: Shape3, output: Shape3, g: &ConvGeometry) -> Vec<T> {
    let k = g.kh * g.kw * input.c;
    let mut cols = vec![T::zero(); n * output.h * output.w * k];
    let c = input.c;
    for_each_patch_run(n, input, output, g, |dst, src| {
        cols[dst..dst + c].copy_from_slice(&x[src..src + c]);
    });
    cols
}

fn col2im<T: Scalar>(dcols: &[T], n: usize, input: Shape3, output: Shape3, g: &ConvGeometry) -> Vec<T> {
    let mut dx = vec![T::zero(); n * input.len()];
    let c = input.c;
    for_each_patch_run(n, input, output, g, |dst, src| {
        for (d, &v) in dx[src..src + c].iter_mut().zip(&dcols[dst..dst + c]) {
            *d += v;
        }
    });
    dx
}

/// `out[M×F] = cols[M×K] · Wᵀ + b`.
fn linear_forward<T: Scalar>(cols: &[T], rows: usize, p: &LayerParams<T>) -> Vec<T> {
    let filters = p.weight.shape()[0];
    let fan_in = p.weight.len() / filters;
    // Accumulates strictly in input order per output, so inputs whose weights
    // are all zero leave the result bit-identical to removing them.
    let w = p.weight.values();
    let mut wt = vec![T::zero(); fan_in * filters];
    for f in 0..filters {
        for j in 0..fan_in {
            wt[j * filters + f] = w[f * fan_in + j];
        }
    }
    let mut out = vec![T::zero(); rows * filters];
    for (row, x) in out.chunks_exact_mut(filters).zip(cols.chunks_exact(fan_in)) {
        for (&xj, wrow) in x.iter().zip(wt.chunks_exact(filters)) {
            for (o, &wv) in row.iter_mut().zip(wrow) {
                *o += xj * wv;
            }
        }
        for (o, &b) in row.iter_mut().zip(p.bias.values()) {
            *o += b;
        }
    }
    out
}

/// Returns parameter gradients and, if requested, the gradient w.r.t. `cols`.
fn linear_backward<T: Scalar>(
    cols: &[T],
    dy: &[T],
    rows: usize,
    p: &LayerParams<T>,
    want_input_grad: bool,
) -> (LayerParams<T>, Option<Vec<T>>) {
    let filters = p.weight.shape()[0];
    let fan_in = p.weight.len() / filters;
    let mut dw = vec![T::zero(); filters * fan_in];
    T::gemm(filters, rows, fan_in, dy, true, cols, false, T::zero(), &mut dw);
    let mut db = vec![T::zero(); filters];
    for row in dy.chunks_exact(filters) {
        for (d, &v) in db.iter_mut().zip(row) {
            *d += v;
        }
    }
    let dcols = want_input_grad.then(|| {
        let mut dc = vec![T::zero(); rows * fan_in];
        T::gemm(rows, filters, fan_in, dy, false, p.weight.values(), false, T::zero(), &mut dc);
        dc
    });
    let grads = LayerParams {
        weight: Tensor::from_parts_unchecked(p.weight.shape().to_vec(), dw),
        bias: Tensor::from_parts_unchecked(vec![filters], db),
    };
    (grads, dcols)
}

fn maxpool_forward<T: Scalar>(x: &[T], n: usize, input: Shape3, output: Shape3, window: usize, stride: usize) -> (Vec<T>, Vec<u32>) {
    let mut out = Vec::with_capacity(n * output.len());
    let mut argmax = Vec::with_capacity(n * output.len());
    for b in 0..n {
        for oy in 0..output.h {
            for ox in 0..output.w {
                for ch in 0..input.c {
                    let mut best_idx = 0usize;
                    let mut best = T::neg_infinity();
                    for dy in 0..window {
                        for dx in 0..window {
                            let idx = ((b * input.h + oy * stride + dy) * input.w + ox * stride + dx) * input.c + ch;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx as u32);
                }
            }
        }
    }
    (out, argmax)
}

fn check_finite<T: Scalar>(values: &[T], layer: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric {
            at: LayerRef::Layer(layer),
        })
    }
}

fn check_batch<T: Scalar>(arch: &Architecture, params: &Parameters<T>, batch: &Tensor<T>) -> Result<usize> {
    params.check(arch)?;
    let s = arch.input_shape();
    let shape = batch.shape();
    if shape.len() != 4 || shape[1..] != [s.h, s.w, s.c] {
        return Err(Error::shape(
            LayerRef::Input,
            format!("batch shape {shape:?} does not match input [n, {}, {}, {}]", s.h, s.w, s.c),
        ));
    }
    if shape[0] == 0 {
        return Err(Error::EmptySamples("batch has no samples".into()));
    }
    Ok(shape[0])
}

/// Runs layers `[0, upto)`, optionally recording what backward needs.
fn run_layers<T: Scalar>(
    arch: &Architecture,
    params: &Parameters<T>,
    n: usize,
    mut x: Vec<T>,
    upto: usize,
    record: bool,
) -> Result<(Vec<T>, Vec<Cache<T>>)> {
    let mut caches = Vec::with_capacity(if record { upto } else { 0 });
    for i in 0..upto {
        let layer = &arch.layers()[i];
        let input = arch.input_of(i);
        let output = arch.output_of(i);
        let (y, cache) = match *layer {
            LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. } => {
                let p = params.layer(i).expect("checked parameters");
                let cols = match conv_geometry(layer, input) {
                    Some(g) => im2col(&x, n, input, output, &g),
                    None => x,
                };
                let rows = n * output.h * output.w;
                let y = linear_forward(&cols, rows, p);
                (y, Cache::Linear { cols })
            }
            LayerSpec::MaxPool2d { window, stride } => {
                let (y, argmax) = maxpool_forward(&x, n, input, output, window, stride);
                (y, Cache::Pool { argmax })
            }
            LayerSpec::Relu => {
                for v in x.iter_mut() {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
                let cache = if record { Cache::Relu { output: x.clone() } } else { Cache::Reshape };
                (x, cache)
            }
            LayerSpec::Flatten => (x, Cache::Reshape),
            LayerSpec::Softmax => {
                softmax_rows(&mut x, output.len());
                (x, Cache::Reshape)
            }
        };
        check_finite(&y, i)?;
        x = y;
        if record {
            caches.push(cache);
        }
    }
    Ok((x, caches))
}

fn softmax_rows<T: Scalar>(x: &mut [T], width: usize) {
    for row in x.chunks_exact_mut(width) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
}

/// Class probabilities, shape `[n, class_count]`.
pub fn forward<T: Scalar>(arch: &Architecture, params: &Parameters<T>, batch: &Tensor<T>) -> Result<Tensor<T>> {
    let n = check_batch(arch, params, batch)?;
    let (probs, _) = run_layers(arch, params, n, batch.values().to_vec(), arch.layers().len(), false)?;
    Ok(Tensor::from_parts_unchecked(vec![n, arch.class_count()], probs))
}

/// Pre-softmax scores, shape `[n, class_count]`.
pub fn logits<T: Scalar>(arch: &Architecture, params: &Parameters<T>, batch: &Tensor<T>) -> Result<Tensor<T>> {
    let n = check_batch(arch, params, batch)?;
    let (z, _) = run_layers(arch, params, n, batch.values().to_vec(), arch.layers().len() - 1, false)?;
    Ok(Tensor::from_parts_unchecked(vec![n, arch.class_count()], z))
}

/// Mean cross-entropy over the batch and its exact gradient.
pub fn loss_and_grad<T: Scalar>(
    arch: &Architecture,
    params: &Parameters<T>,
    batch: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, GradientDelta<T>)> {
    let n = check_batch(arch, params, batch)?;
    let classes = arch.class_count();
    if labels.len() != n {
        return Err(Error::invalid(format!("{} labels for {n} samples", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
    }
    // Softmax is always the final layer; fold it into the loss.
    let upto = arch.layers().len() - 1;
    let (z, caches) = run_layers(arch, params, n, batch.values().to_vec(), upto, true)?;

    let inv_n = T::one() / T::from_usize(n).expect("batch size");
    let mut loss = T::zero();
    let mut dy = z;
    for (row, &label) in dy.chunks_exact_mut(classes).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[label];
        for v in row.iter_mut() {
            *v = (*v - lse).exp() * inv_n;
        }
        row[label] -= inv_n;
    }
    loss = loss * inv_n;
    if !loss.is_finite() {
        return Err(Error::Numeric {
            at: LayerRef::Layer(upto),
        });
    }

    let first_trainable = arch.trainable_layers().next().unwrap_or(usize::MAX);
    let mut grads = Parameters::zeros(arch);
    for i in (0..upto).rev() {
        let layer = &arch.layers()[i];
        let input = arch.input_of(i);
        let output = arch.output_of(i);
        // Nothing upstream of the first trainable layer needs a gradient.
        let want_dx = i > first_trainable;
        dy = match (&caches[i], layer) {
            (Cache::Linear { cols }, _) => {
                let p = params.layer(i).expect("checked parameters");
                let rows = n * output.h * output.w;
                let (g, dcols) = linear_backward(cols, &dy, rows, p, want_dx);
                *grads.layer_mut(i).expect("trainable slot") = g;
                match (dcols, conv_geometry(layer, input)) {
                    (None, _) => break,
                    (Some(dc), Some(geo)) => col2im(&dc, n, input, output, &geo),
                    (Some(dc), None) => dc,
                }
            }
            (Cache::Pool { argmax }, _) => {
                let mut dx = vec![T::zero(); n * input.len()];
                for (&idx, &g) in argmax.iter().zip(&dy) {
                    dx[idx as usize] += g;
                }
                dx
            }
            (Cache::Relu { output }, _) => {
                for (g, &y) in dy.iter_mut().zip(output) {
                    if y <= T::zero() {
                        *g = T::zero();
                    }
                }
                dy
            }
            (Cache::Reshape, _) => dy,
        };
    }
    if !grads.is_finite() {
        return Err(Error::Numeric { at: LayerRef::Input });
    }
    Ok((loss, grads))
}

/// Index of the largest entry per row; ties go to the lowest index.
pub fn argmax_rows<T: Scalar>(scores: &[T], width: usize) -> Vec<usize> {
    scores
        .chunks_exact(width)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

/// Top-1 accuracy and sample count.
pub fn evaluate<T: Scalar>(
    arch: &Architecture,
    params: &Parameters<T>,
    batch: &Tensor<T>,
    labels: &[usize],
) -> Result<(f64, usize)> {
    if labels.is_empty() {
        return Err(Error::EmptySamples("cannot evaluate on zero samples".into()));
    }
    if batch.shape().first() != Some(&labels.len()) {
        return Err(Error::invalid("labels and batch differ in length"));
    }
    let z = logits(arch, params, batch)?;
    let correct = argmax_rows(z.values(), arch.class_count())
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok((correct as f64 / labels.len() as f64, labels.len()))
}

#[cfg(test)]
#[path = "engine_tests.rs"]
mod tests;
