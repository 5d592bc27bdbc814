//! Dataset ingestion and bit-exact model serialization.

pub mod cifar;
pub mod model_file;
pub mod synthetic;

use ndarray::{Array1, Array4, Axis};

use crate::element::Element;
use crate::error::{Error, Result};

pub use cifar::{load_cifar10_file, load_cifar10_test, load_cifar10_train, CIFAR10_CLASSES};
pub use model_file::{load_model, save_model, Provenance};
pub use synthetic::{synthetic_dataset, synthetic_dataset_split};

/// Labeled image batch with pixel intensities in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Dataset<E: Element> {
    pub images: Array4<E>,
    pub labels: Vec<usize>,
    pub class_names: Option<Vec<String>>,
    pub split: String,
}

impl<E: Element> Dataset<E> {
    pub fn new(
        images: Array4<E>,
        labels: Vec<usize>,
        class_names: Option<Vec<String>>,
        split: impl Into<String>,
    ) -> Result<Self> {
        if images.shape()[0] != labels.len() {
            return Err(Error::shape("dataset labels", &[images.shape()[0]], &[labels.len()]));
        }
        for (index, &v) in images.iter().enumerate() {
            if !(v >= E::zero() && v <= E::one()) {
                return Err(Error::PixelOutOfRange { index, value: v.as_f64() });
            }
        }
        Ok(Self { images, labels, class_names, split: split.into() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Image shape as `(channels, height, width)`.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m + 1)
    }

    /// Copy of the first `n` samples (or all, if fewer).
    pub fn take(&self, n: usize) -> Dataset<E> {
        let n = n.min(self.len());
        Dataset {
            images: self.images.slice(ndarray::s![..n, .., .., ..]).to_owned(),
            labels: self.labels[..n].to_vec(),
            class_names: self.class_names.clone(),
            split: self.split.clone(),
        }
    }

    /// Copy of the selected samples, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset<E> {
        Dataset {
            images: self.images.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            split: self.split.clone(),
        }
    }

    /// Mean pixel value per channel, over the whole dataset.
    pub fn channel_means(&self) -> Array1<E> {
        let (c, _, _) = self.image_shape();
        let mut means = Array1::zeros(c);
        for ch in 0..c {
            let view = self.images.index_axis(Axis(1), ch);
            let sum = view.iter().fold(E::zero(), |a, &v| a + v);
            means[ch] = sum / E::from_usize(view.len().max(1)).unwrap();
        }
        means
    }

    /// Mean image (per location and channel), the statistic used by
    /// mean-pixel-subtract pre-processing.
    pub fn mean_image(&self) -> ndarray::Array3<E> {
        let (c, h, w) = self.image_shape();
        let n = E::from_usize(self.len().max(1)).unwrap();
        let mut mean = ndarray::Array3::zeros((c, h, w));
        for img in self.images.axis_iter(Axis(0)) {
            mean += &img;
        }
        mean.mapv_inplace(|v| v / n);
        mean
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_validates_counts_and_range() {
        let ok = Dataset::new(Array4::<f32>::zeros((2, 1, 2, 2)), vec![0, 1], None, "t");
        assert!(ok.is_ok());
        let bad_count = Dataset::new(Array4::<f32>::zeros((2, 1, 2, 2)), vec![0], None, "t");
        assert!(bad_count.is_err());
        let bad_range =
            Dataset::new(Array4::from_elem((1, 1, 1, 1), 1.5f32), vec![0], None, "t");
        assert!(matches!(bad_range.unwrap_err(), Error::PixelOutOfRange { .. }));
    }

    #[test]
    fn channel_means_are_per_channel() {
        let mut images = Array4::<f64>::zeros((2, 2, 1, 1));
        images[[0, 0, 0, 0]] = 0.2;
        images[[1, 0, 0, 0]] = 0.4;
        images[[0, 1, 0, 0]] = 1.0;
        images[[1, 1, 0, 0]] = 0.0;
        let ds = Dataset::new(images, vec![0, 1], None, "t").unwrap();
        let m = ds.channel_means();
        approx::assert_abs_diff_eq!(m[0], 0.3, epsilon = 1e-12);
        approx::assert_abs_diff_eq!(m[1], 0.5, epsilon = 1e-12);
    }
}
