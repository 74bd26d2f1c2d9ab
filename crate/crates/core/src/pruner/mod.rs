//! Candidate generation by ℓ2-norm filter pruning, the width-multiplier
//! baseline, and the per-iteration budget schedule.

mod budget;

pub use budget::{budget_schedule, BudgetSchedule};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Architecture, LayerParams, Model, Parameters, Tensor};

/// A pruned model derived from a parent by shrinking one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub candidate_id: usize,
    pub pruned_layer_index: usize,
    pub model: Model,
    pub macs: u64,
    pub parent_macs: u64,
    /// Removed filter indices of the parent layer, smallest norm first.
    pub removed: Vec<usize>,
}

/// ℓ2 norm of every filter (conv) or unit (dense) of a layer, ascending, ties
/// by index. Biases are excluded.
pub fn filter_norms(params: &Parameters<f32>, layer_index: usize) -> Result<Vec<(usize, f64)>> {
    let layer = params.layer(layer_index).ok_or(Error::NotPrunable(layer_index))?;
    let filters = layer.weight.shape()[0];
    let row = layer.weight.len() / filters.max(1);
    let mut norms: Vec<(usize, f64)> = layer
        .weight
        .values()
        .chunks(row.max(1))
        .take(filters)
        .map(|w| w.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt())
        .enumerate()
        .collect();
    norms.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(norms)
}

fn select_rows(t: &Tensor<f32>, keep: &[usize]) -> Tensor<f32> {
    let rows = t.shape()[0];
    let row = t.len() / rows;
    let mut values = Vec::with_capacity(keep.len() * row);
    for &r in keep {
        values.extend_from_slice(&t.values()[r * row..(r + 1) * row]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = keep.len();
    Tensor::new(shape, values).expect("row selection of a valid tensor")
}

/// Drops the input columns of every row whose channel (column index modulo
/// `channels`) is not kept. Works for conv kernels with the channel innermost
/// and for dense layers fed by a flattened NHWC map.
fn select_input_channels(t: &Tensor<f32>, channels: usize, kept: &[bool], new_shape: Vec<usize>) -> Tensor<f32> {
    let rows = t.shape()[0];
    let row = t.len() / rows;
    let values = t
        .values()
        .chunks(row)
        .flat_map(|r| r.iter().enumerate().filter(|(j, _)| kept[j % channels]).map(|(_, &v)| v))
        .collect();
    Tensor::new(new_shape, values).expect("column selection of a valid tensor")
}

/// Removes `removed` filters from `layer_index` and the matching input slices
/// of its successor. Surviving weights are copied unchanged.
pub fn remove_filters(model: &Model, layer_index: usize, removed: &[usize]) -> Result<Model> {
    let arch = &model.arch;
    let count = arch.layers()[layer_index].filter_count().ok_or(Error::NotPrunable(layer_index))?;
    let mut kept = vec![true; count];
    for &f in removed {
        *kept.get_mut(f).ok_or_else(|| Error::invalid(format!("filter {f} out of range")))? = false;
    }
    let keep: Vec<usize> = (0..count).filter(|&f| kept[f]).collect();
    let new_arch = arch.with_filter_count(layer_index, keep.len())?;
    let mut params = model.params.clone();
    let layer = params.layer_mut(layer_index).expect("trainable layer has parameters");
    *layer = LayerParams {
        weight: select_rows(&layer.weight, &keep),
        bias: select_rows(&layer.bias, &keep),
    };
    if let Some(next) = arch.successor(layer_index) {
        let shape = new_arch.weight_shape(next).expect("successor is trainable");
        let slot = params.layer_mut(next).expect("trainable layer has parameters");
        slot.weight = select_input_channels(&slot.weight, count, &kept, shape);
    }
    Model::new(new_arch, params)
}

/// Prunes the smallest-norm filters of one layer until the whole model fits
/// `budget` MACs. `Ok(None)` when that is impossible with at least one filter
/// left, or when the layer is the classifier.
pub fn prune_layer_to_budget(model: &Model, layer_index: usize, budget: f64) -> Result<Option<Candidate>> {
    let arch = &model.arch;
    if layer_index >= arch.layers().len() {
        return Err(Error::invalid(format!("layer index {layer_index} out of range")));
    }
    let count = arch.layers()[layer_index].filter_count().ok_or(Error::NotPrunable(layer_index))?;
    let parent_macs = arch.macs();
    let candidate = |model: Model, removed: Vec<usize>| Candidate {
        candidate_id: 0,
        pruned_layer_index: layer_index,
        macs: model.macs(),
        parent_macs,
        model,
        removed,
    };
    if parent_macs as f64 <= budget {
        return Ok(Some(candidate(model.clone(), Vec::new())));
    }
    if arch.classifier_index() == Some(layer_index) {
        return Ok(None);
    }
    let Some(keep) = (1..count)
        .rev()
        .find(|&k| arch.with_filter_count(layer_index, k).is_ok_and(|a| a.macs() as f64 <= budget))
    else {
        return Ok(None);
    };
    let removed: Vec<usize> = filter_norms(&model.params, layer_index)?
        .into_iter()
        .take(count - keep)
        .map(|(f, _)| f)
        .collect();
    let pruned = remove_filters(model, layer_index, &removed)?;
    Ok(Some(candidate(pruned, removed)))
}

/// One candidate per prunable layer that can meet `budget`, numbered in
/// layer order.
pub fn generate_candidates(gm: &Model, budget: f64) -> Result<Vec<Candidate>> {
    let layers = gm.arch.prunable_layers();
    let found: Vec<Option<Candidate>> = layers
        .par_iter()
        .map(|&i| prune_layer_to_budget(gm, i, budget))
        .collect::<Result<_>>()?;
    let candidates: Vec<Candidate> = found
        .into_iter()
        .flatten()
        .enumerate()
        .map(|(id, mut c)| {
            c.candidate_id = id;
            c
        })
        .collect();
    if candidates.is_empty() {
        return Err(Error::BudgetInfeasible(format!(
            "no single-layer pruning of a {}-MAC model fits {budget:.1} MACs",
            gm.macs()
        )));
    }
    Ok(candidates)
}

/// Scales every non-classifier layer's filter count by `factor`
/// (rounded, at least one).
pub fn width_multiplier(arch: &Architecture, factor: f64) -> Result<Architecture> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(Error::invalid(format!("width factor must be in (0, 1], got {factor}")));
    }
    let mut out = arch.clone();
    for i in arch.prunable_layers() {
        let count = arch.layers()[i].filter_count().expect("prunable layers are trainable");
        let scaled = ((count as f64 * factor).round() as usize).max(1);
        out = out.with_filter_count(i, scaled)?;
    }
    Ok(out)
}
