use super::TrainError;
use crate::nde::SpiralDataset;
use crate::tensor::Tensor;

/// Flattened images in `[0, 1]` with their class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    /// Shape `(n, features)`.
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl ImageDataset {
    pub fn new(images: Tensor, labels: Vec<usize>) -> Result<Self, TrainError> {
        if images.rank() != 2 || images.shape()[0] != labels.len() {
            return Err(TrainError::Data(format!(
                "{} labels for images of shape {:?}",
                labels.len(),
                images.shape()
            )));
        }
        Ok(ImageDataset { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.images.shape()[1]
    }

    /// The first `n` items, or all of them when `n` is `None` or too large.
    pub fn head(&self, n: Option<usize>) -> ImageDataset {
        match n {
            Some(n) if n < self.len() => {
                let rows: Vec<usize> = (0..n).collect();
                ImageDataset {
                    images: self.images.select_rows(&rows),
                    labels: self.labels[..n].to_vec(),
                }
            }
            _ => self.clone(),
        }
    }

    pub fn batch(&self, rows: &[usize]) -> (Tensor, Vec<usize>) {
        (self.images.select_rows(rows), rows.iter().map(|&r| self.labels[r]).collect())
    }
}

/// Training and evaluation data for one run.
#[derive(Clone, Debug)]
pub enum TrainData {
    Mnist { train: ImageDataset, test: ImageDataset },
    Spiral(SpiralDataset),
}
