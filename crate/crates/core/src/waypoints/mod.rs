//! Semantic waypoints: frozen features, their PCA projection, and the generator.

pub mod extractor;
pub mod generator;
pub mod pca;

pub use extractor::{FeatureExtractor, ToyFeatureExtractor};
pub use generator::{waypoint_generator_forward, WaypointGenerator};
pub use pca::{fit_pca, symmetric_eigen, PcaFit, PcaWarning, WaypointProjection};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Clean waypoint target `s_0` of an image: extract, center, project, normalize.
pub fn waypoint_target<T: Scalar, E: FeatureExtractor>(
    extractor: &E,
    proj: &WaypointProjection<T>,
    image: &Tensor<T>,
) -> Result<Tensor<T>> {
    proj.project_normalized(&extractor.extract(image)?)
}

/// `(phi - mean) · basis` for one image's features; see [`WaypointProjection::project`].
pub fn project_waypoint<T: Scalar>(phi: &Tensor<T>, proj: &WaypointProjection<T>) -> Result<Tensor<T>> {
    proj.project(phi)
}

/// Features of every image stacked into one `[images·N, D]` matrix for PCA.
pub fn stack_features<T: Scalar, E: FeatureExtractor>(extractor: &E, images: &[Tensor<T>]) -> Result<Tensor<T>> {
    let mut rows = 0;
    let mut data = Vec::new();
    for x in images {
        let phi = extractor.extract(x)?;
        rows += phi.rows();
        data.extend_from_slice(phi.data());
    }
    Tensor::new(vec![rows, extractor.feature_dim()], data)
}
