//! PNG/PPM folder ingestion and PNG export.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{ImageFormat, RgbImage};

use crate::data::checkpoint::atomic_write;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A loaded folder plus the files that could not be decoded.
#[derive(Debug, Clone)]
pub struct FolderLoad<T> {
    pub dataset: Dataset<T>,
    pub class_names: Vec<String>,
    pub skipped: Vec<(PathBuf, String)>,
}

fn image_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

/// Center-crops to a square, resizes bilinearly and maps `[0, 255]` to `[-1, 1]`.
fn to_tensor<T: Scalar>(img: RgbImage, size: usize) -> Result<Tensor<T>> {
    let (w, h) = img.dimensions();
    let side = w.min(h);
    let square = imageops::crop_imm(&img, (w - side) / 2, (h - side) / 2, side, side).to_image();
    let resized = if side as usize == size {
        square
    } else {
        imageops::resize(&square, size as u32, size as u32, FilterType::Triangle)
    };
    let data = resized.into_raw().into_iter().map(|v| T::of(v as f64 / 255.0 * 2.0 - 1.0)).collect();
    Tensor::new(vec![size, size, 3], data)
}

/// Reads `root/<class>/<file>` images; labels follow the sorted class-directory names.
///
/// Files that fail to decode are skipped, logged and listed in the result.
/// Regular files directly under `root` are ignored.
pub fn load_image_folder<T: Scalar>(root: &Path, image_size: usize) -> Result<FolderLoad<T>> {
    if image_size == 0 {
        return Err(Error::InvalidArgument("image size must be positive".into()));
    }
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    let class_names: Vec<String> =
        class_dirs.iter().map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned()).collect();
    let (mut images, mut labels, mut skipped) = (Vec::new(), Vec::new(), Vec::new());
    for (label, dir) in class_dirs.iter().enumerate() {
        for path in sorted_entries(dir)?.into_iter().filter(|p| p.is_file()) {
            match image::open(&path) {
                Ok(img) => {
                    images.push(to_tensor(img.to_rgb8(), image_size)?);
                    labels.push(label);
                }
                Err(e) => {
                    log::warn!("skipping {}: {e}", path.display());
                    skipped.push((path, e.to_string()));
                }
            }
        }
    }
    if images.is_empty() {
        return Err(Error::InsufficientData(format!("no readable images under {}", root.display())));
    }
    Ok(FolderLoad {
        dataset: Dataset::new(images, labels, class_names.len(), image_size)?,
        class_names,
        skipped,
    })
}

/// `[-1, 1]` to `[0, 255]`: clamp, scale, round half away from zero.
pub fn to_u8<T: Scalar>(v: T) -> u8 {
    let x = v.as_f64().clamp(-1.0, 1.0);
    ((x + 1.0) / 2.0 * 255.0).round() as u8
}

/// PNG bytes of an `[H, W, 3]` image.
pub fn encode_png<T: Scalar>(image: &Tensor<T>) -> Result<Vec<u8>> {
    let (h, w) = match image.shape() {
        &[h, w, 3] => (h, w),
        s => return Err(Error::Dimension(format!("expected [H, W, 3] image, got {s:?}"))),
    };
    let raw = image.data().iter().map(|&v| to_u8(v)).collect();
    let img = RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer matches dimensions");
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).map_err(|e| image_error(Path::new("<memory>"), e))?;
    Ok(buf.into_inner())
}

/// Writes an `[H, W, 3]` image in `[-1, 1]` as PNG.
pub fn export_image<T: Scalar>(image: &Tensor<T>, path: &Path) -> Result<()> {
    atomic_write(path, &encode_png(image)?)
}

/// Writes `dir/class_CCC/IIIII.png` for every sample, readable by [`load_image_folder`].
pub fn export_dataset<T: Scalar>(data: &Dataset<T>, dir: &Path) -> Result<()> {
    for c in 0..data.num_classes {
        fs::create_dir_all(dir.join(format!("class_{c:03}")))?;
    }
    for (i, (img, y)) in data.images.iter().zip(&data.labels).enumerate() {
        export_image(img, &dir.join(format!("class_{y:03}")).join(format!("{i:05}.png")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_mapping() {
        assert_eq!(to_u8(-1.0f64), 0);
        assert_eq!(to_u8(0.0f64), 128);
        assert_eq!(to_u8(2.0f64), 255);
        assert_eq!(to_u8(1.0f64), 255);
    }

    #[test]
    fn folder_round_trip_and_skips() {
        let dir = tempfile::tempdir().unwrap();
        let a = Tensor::<f64>::from_fn(&[4, 4, 3], |i| (i as f64 * 0.13).sin());
        fs::create_dir_all(dir.path().join("b")).unwrap();
        fs::create_dir_all(dir.path().join("a")).unwrap();
        export_image(&a, &dir.path().join("b/x.png")).unwrap();
        export_image(&Tensor::<f64>::full(&[4, 4, 3], 1.0), &dir.path().join("a/y.png")).unwrap();
        fs::write(dir.path().join("a/notes.txt"), "not an image").unwrap();
        fs::write(dir.path().join("top.txt"), "ignored").unwrap();
        let load = load_image_folder::<f64>(dir.path(), 4).unwrap();
        assert_eq!(load.class_names, ["a", "b"]);
        assert_eq!(load.dataset.labels, [0, 1]);
        assert_eq!(load.skipped.len(), 1);
        assert!(load.dataset.images[0].data().iter().all(|&v| v == 1.0));
        let back = &load.dataset.images[1];
        assert!(back.max_abs_diff(&a).unwrap() <= 1.0 / 255.0 + 1e-12);
    }

    #[test]
    fn one_pixel_white_image_scales_to_one() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("c")).unwrap();
        RgbImage::from_raw(1, 1, vec![255; 3]).unwrap().save(dir.path().join("c/w.png")).unwrap();
        let load = load_image_folder::<f64>(dir.path(), 1).unwrap();
        assert_eq!(load.dataset.images[0].data(), &[1.0; 3]);
        let load = load_image_folder::<f64>(dir.path(), 4).unwrap();
        assert!(load.dataset.images[0].data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn empty_folder_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_image_folder::<f64>(dir.path(), 4), Err(Error::InsufficientData(_))));
    }
}
