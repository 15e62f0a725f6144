use crate::diffcore::Tensor;
use crate::error::Result;
use crate::nets::{Model, ParamVector};

use super::dataset::LabeledDataset;

/// Source of clustering features.
#[derive(Clone, Copy, Debug)]
pub enum Extractor<'a> {
    RawPixels,
    /// Penultimate activations of a trained model.
    ModelFeatures { model: &'a Model, params: &'a ParamVector },
}

const CHUNK: usize = 512;

/// One feature row per sample, `[N, width]`.
pub fn embed(data: &LabeledDataset, extractor: Extractor<'_>) -> Result<Tensor> {
    match extractor {
        Extractor::RawPixels => Tensor::new(vec![data.len(), data.image_len()], data.pixels().to_vec()),
        Extractor::ModelFeatures { model, params } => {
            let width = model.feature_width();
            let mut out = Vec::with_capacity(data.len() * width);
            let all: Vec<usize> = (0..data.len()).collect();
            for chunk in all.chunks(CHUNK) {
                let f = model.feature_matrix(params, &data.batch(chunk).inputs)?;
                out.extend_from_slice(f.data());
            }
            Tensor::new(vec![data.len(), width], out)
        }
    }
}
