use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// A batch of inputs `[n, ...image_shape]` with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBatch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        if inputs.shape().first().copied() != Some(labels.len()) {
            return Err(Error::ShapeMismatch {
                context: "batch inputs vs labels".into(),
                expected: vec![labels.len()],
                got: inputs.shape().to_vec(),
            });
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Images with values in `[0, 1]` and labels in `[0, class_count)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    image_shape: Vec<usize>,
    pixels: Vec<f64>,
    labels: Vec<usize>,
    class_count: usize,
}

impl LabeledDataset {
    pub fn new(image_shape: Vec<usize>, pixels: Vec<f64>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let per: usize = image_shape.iter().product();
        if labels.is_empty() {
            return Err(Error::InvalidArgument("dataset must hold at least one sample".into()));
        }
        if per == 0 || pixels.len() != per * labels.len() {
            return Err(Error::ShapeMismatch {
                context: "dataset pixels".into(),
                expected: vec![labels.len() * per],
                got: vec![pixels.len()],
            });
        }
        if class_count < 2 {
            return Err(Error::InvalidArgument(format!("class_count must be >= 2, got {class_count}")));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
            return Err(Error::InvalidLabel {
                index,
                label,
                classes: class_count,
            });
        }
        Ok(Self {
            image_shape,
            pixels,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> &[usize] {
        &self.image_shape
    }

    pub fn image_len(&self) -> usize {
        self.image_shape.iter().product()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub(crate) fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub(crate) fn labels_mut(&mut self) -> &mut [usize] {
        &mut self.labels
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Gathers the given samples into a batch, in the given order.
    pub fn batch(&self, indices: &[usize]) -> LabeledBatch {
        let n = self.image_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.image_shape);
        LabeledBatch {
            inputs: Tensor::from_parts(shape, data),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn full_batch(&self) -> LabeledBatch {
        let all: Vec<usize> = (0..self.len()).collect();
        self.batch(&all)
    }

    /// Sample indices of every class, in ascending order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.class_count];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn subset(&self, indices: &[usize]) -> Result<LabeledDataset> {
        let b = self.batch(indices);
        LabeledDataset::new(self.image_shape.clone(), b.inputs.into_data(), b.labels, self.class_count)
    }

    /// Splits off the first `n` samples as a second dataset.
    pub fn split_at(&self, n: usize) -> Result<(LabeledDataset, LabeledDataset)> {
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        Ok((self.subset(&head)?, self.subset(&tail)?))
    }

    /// The first `per_class` samples of every class, and the remainder with
    /// classes interleaved round-robin so every prefix is balanced.
    pub fn stratified_split(&self, per_class: usize) -> Result<(LabeledDataset, LabeledDataset)> {
        let by_class = self.class_indices();
        if let Some((class, idx)) = by_class.iter().enumerate().find(|(_, idx)| idx.len() <= per_class) {
            return Err(Error::ClassTooSmall {
                class,
                size: idx.len(),
                needed: per_class + 1,
            });
        }
        let head: Vec<usize> = by_class.iter().flat_map(|idx| idx[..per_class].iter().copied()).collect();
        let longest = by_class.iter().map(Vec::len).max().unwrap_or(0);
        let tail: Vec<usize> = (per_class..longest)
            .flat_map(|j| by_class.iter().filter_map(move |idx| idx.get(j).copied()))
            .collect();
        Ok((self.subset(&head)?, self.subset(&tail)?))
    }
}
