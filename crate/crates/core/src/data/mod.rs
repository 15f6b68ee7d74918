//! Datasets, image files, checkpoints and configuration files.

pub mod checkpoint;
pub mod config;
pub mod folder;
pub mod toy;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{parse_kv, KvMap};
pub use folder::{export_dataset, export_image, load_image_folder, FolderLoad};
pub use toy::{generate_toy_dataset, ToyDatasetSpec};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Labeled square RGB images with pixels in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub images: Vec<Tensor<T>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub image_size: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(images: Vec<Tensor<T>>, labels: Vec<usize>, num_classes: usize, image_size: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(img) = images.iter().find(|i| i.shape() != [image_size, image_size, 3]) {
            return Err(Error::shape(&[image_size, image_size, 3], img.shape()));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidLabel { label: y, num_classes });
        }
        Ok(Self {
            images,
            labels,
            num_classes,
            image_size,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            images: self.images.iter().map(Tensor::cast).collect(),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
            image_size: self.image_size,
        }
    }

    /// Per-class mean image; `None` for classes without samples.
    pub fn class_means(&self) -> Vec<Option<Tensor<T>>> {
        (0..self.num_classes)
            .map(|c| {
                let members: Vec<&Tensor<T>> =
                    self.images.iter().zip(&self.labels).filter(|(_, &y)| y == c).map(|(i, _)| i).collect();
                let first = members.first()?;
                let mut sum = vec![T::zero(); first.len()];
                for img in &members {
                    for (s, &v) in sum.iter_mut().zip(img.data()) {
                        *s = *s + v;
                    }
                }
                let n = T::of(members.len() as f64);
                Tensor::new(first.shape().to_vec(), sum.into_iter().map(|s| s / n).collect()).ok()
            })
            .collect()
    }
}
