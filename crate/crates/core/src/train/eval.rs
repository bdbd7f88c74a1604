use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, ConfusionCounts, MetricReport};
use crate::nn::{argmax_classes, forward_parse, upsample_labels, Mode, Models, EXTRACTOR_STRIDE};
use crate::scalar::Scalar;
use crate::tensor::{OpTrace, Tensor};

pub const EVAL_BATCH: usize = 16;

/// Full-resolution class maps `N × H × W` for an image batch, from `L ∘ E`
/// in eval mode, plus the trace of the forward pass.
pub fn predict_labels<T: Scalar>(models: &Models<T>, images: &Tensor<T>) -> Result<(Tensor<u8>, OpTrace)> {
    let mut e = models.extractor.clone();
    let mut l = models.labeler.clone();
    e.set_mode(Mode::Eval);
    l.set_mode(Mode::Eval);
    let (probs, trace) = forward_parse(&e, &l, images, &models.profile)?;
    let coarse = argmax_classes(&probs)?;
    Ok((upsample_labels(&coarse, EXTRACTOR_STRIDE, models.profile.input_hw)?, trace))
}

/// Confusion counts and scores of `L ∘ E` over a fully labeled dataset.
pub fn evaluate<T: Scalar>(models: &Models<T>, dataset: &Dataset) -> Result<(ConfusionCounts, MetricReport)> {
    if dataset.is_empty() {
        return Err(Error::Dataset("evaluation dataset is empty".into()));
    }
    if !dataset.is_labeled() {
        return Err(Error::Dataset("evaluation needs ground-truth labels for every sample".into()));
    }
    let mut counts = ConfusionCounts::new(models.profile.num_classes);
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let (pred, _) = predict_labels(models, &dataset.images(chunk)?)?;
        counts.add_maps(&pred, &dataset.labels(chunk)?)?;
    }
    let report = compute_metrics(&counts, 0)?;
    Ok((counts, report))
}
