//! Class-per-folder image datasets and in-memory batches.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetEntry {
    /// Relative to the dataset root.
    pub path: PathBuf,
    pub label: usize,
}

/// `<root>/<class>/*.{png,jpg,jpeg}`; classes and files in sorted order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub classes: Vec<String>,
    pub entries: Vec<DatasetEntry>,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let read = fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    let mut paths = read
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    paths.sort();
    Ok(paths)
}

impl DatasetIndex {
    pub fn scan(root: &Path) -> Result<Self> {
        let mut classes = Vec::new();
        let mut entries = Vec::new();
        for dir in sorted_dir(root)?.into_iter().filter(|p| p.is_dir()) {
            let name = dir
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| Error::Dataset(format!("non-UTF-8 class folder {}", dir.display())))?
                .to_string();
            let label = classes.len();
            let files: Vec<_> = sorted_dir(&dir)?.into_iter().filter(|p| p.is_file() && is_image(p)).collect();
            if files.is_empty() {
                return Err(Error::Dataset(format!("class folder {} has no images", dir.display())));
            }
            for f in files {
                let path = f.strip_prefix(root).unwrap_or(&f).to_path_buf();
                entries.push(DatasetEntry { path, label });
            }
            classes.push(name);
        }
        if classes.is_empty() {
            return Err(Error::Dataset(format!("no class folders under {}", root.display())));
        }
        Ok(Self {
            root: root.to_path_buf(),
            classes,
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for e in &self.entries {
            counts[e.label] += 1;
        }
        counts
    }
}

/// `[3, size, size]` tensor in `[0, 1]` from an RGB image, bilinear resize.
pub fn image_to_tensor<T: Scalar>(img: &RgbImage, size: usize) -> Tensor<T> {
    let side = size as u32;
    let resized;
    let img = if img.dimensions() == (side, side) {
        img
    } else {
        resized = image::imageops::resize(img, side, side, FilterType::Triangle);
        &resized
    };
    let plane = size * size;
    let mut data = vec![T::zero(); 3 * plane];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = T::from_f64(px.0[c] as f64 / 255.0);
        }
    }
    Tensor::new(&[3, size, size], data).expect("3 planes")
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_rgb8())
}

pub fn load_image<T: Scalar>(path: &Path, size: usize) -> Result<Tensor<T>> {
    Ok(image_to_tensor(&read_rgb(path)?, size))
}

/// Decoded images held in memory.
#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub classes: Vec<String>,
    /// Each `[3, s, s]`.
    pub images: Vec<Tensor<T>>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(classes: Vec<String>, images: Vec<Tensor<T>>, labels: Vec<usize>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Dataset(format!("{} images but {} labels", images.len(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes.len()) {
            return Err(Error::Dataset(format!("label {bad} with {} classes", classes.len())));
        }
        if let Some(first) = images.first() {
            if let Some(img) = images.iter().find(|t| t.shape() != first.shape()) {
                return Err(Error::dim(format!("mixed image shapes {:?} and {:?}", first.shape(), img.shape())));
            }
        }
        Ok(Self { classes, images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Stacks the selected images into `[n, 3, s, s]`.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let first = indices.first().ok_or_else(|| Error::Dataset("empty batch".into()))?;
        let item = self.images[*first].shape().to_vec();
        let mut data = Vec::with_capacity(indices.len() * self.images[*first].len());
        for &i in indices {
            data.extend_from_slice(self.images[i].data());
        }
        let mut shape = vec![indices.len()];
        shape.extend(item);
        Ok((Tensor::new(&shape, data)?, indices.iter().map(|&i| self.labels[i]).collect()))
    }
}

/// Scans `root` and decodes every image to `[3, size, size]`.
pub fn load_dataset<T: Scalar>(root: &Path, size: usize) -> Result<(DatasetIndex, Dataset<T>)> {
    let index = DatasetIndex::scan(root)?;
    let images = index
        .entries
        .par_iter()
        .map(|e| load_image(&root.join(&e.path), size))
        .collect::<Result<Vec<_>>>()?;
    let data = Dataset::new(index.classes.clone(), images, index.labels())?;
    Ok((index, data))
}

/// Two separable classes: class 0 is warm with horizontal stripes, class 1
/// cool with a checkerboard; both carry pixel noise.
pub fn synthetic_dataset<T: Scalar>(count: usize, size: usize, seed: u64) -> Dataset<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = size * size;
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let label = i % 2;
        let period = rng.gen_range(3..6);
        let base: [f64; 3] = if label == 0 {
            [rng.gen_range(0.6..0.8), rng.gen_range(0.3..0.45), rng.gen_range(0.2..0.35)]
        } else {
            [rng.gen_range(0.2..0.35), rng.gen_range(0.35..0.5), rng.gen_range(0.6..0.8)]
        };
        let mut data = vec![T::zero(); 3 * plane];
        for y in 0..size {
            for x in 0..size {
                let on = if label == 0 {
                    (y / period) % 2 == 0
                } else {
                    ((x / period) + (y / period)) % 2 == 0
                };
                let texture = if on { 0.12 } else { -0.12 };
                for (c, b) in base.iter().enumerate() {
                    let v = b + texture + rng.gen_range(-0.05..0.05);
                    data[c * plane + y * size + x] = T::from_f64(v.clamp(0.0, 1.0));
                }
            }
        }
        images.push(Tensor::new(&[3, size, size], data).expect("3 planes"));
        labels.push(label);
    }
    Dataset::new(vec!["class0".into(), "class1".into()], images, labels).expect("consistent synthetic set")
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn write_png(path: &Path, color: [u8; 3], side: u32) {
        RgbImage::from_pixel(side, side, Rgb(color)).save(path).unwrap();
    }

    #[test]
    fn scans_sorted_class_folders() {
        let dir = tempfile::tempdir().unwrap();
        for (class, n) in [("others", 3), ("mpox", 2)] {
            fs::create_dir(dir.path().join(class)).unwrap();
            for i in 0..n {
                write_png(&dir.path().join(class).join(format!("{i}.png")), [10, 20, 30], 8);
            }
        }
        fs::write(dir.path().join("mpox/notes.txt"), "skip").unwrap();
        let idx = DatasetIndex::scan(dir.path()).unwrap();
        assert_eq!(idx.classes, ["mpox", "others"]);
        assert_eq!(idx.len(), 5);
        assert_eq!(idx.class_counts(), [2, 3]);
        assert_eq!(idx.entries[0].path, Path::new("mpox/0.png"));
        let (_, data) = load_dataset::<f32>(dir.path(), 4).unwrap();
        assert_eq!(data.images[0].shape(), &[3, 4, 4]);
        assert!((data.images[0].data()[0] - 10.0 / 255.0).abs() < 1e-6);
        assert!((data.images[0].data()[32] - 30.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn empty_root_and_empty_class_are_dataset_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(DatasetIndex::scan(dir.path()), Err(Error::Dataset(_))));
        fs::create_dir(dir.path().join("a")).unwrap();
        assert!(matches!(DatasetIndex::scan(dir.path()), Err(Error::Dataset(_))));
    }

    #[test]
    fn undecodable_file_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("a")).unwrap();
        fs::write(dir.path().join("a/broken.png"), b"not a png").unwrap();
        let err = load_dataset::<f32>(dir.path(), 4).unwrap_err();
        assert!(err.to_string().contains("broken.png"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn synthetic_is_seeded_and_balanced() {
        let a = synthetic_dataset::<f32>(8, 16, 1);
        let b = synthetic_dataset::<f32>(8, 16, 1);
        assert_eq!(a.labels, [0, 1, 0, 1, 0, 1, 0, 1]);
        assert!(a.images.iter().zip(&b.images).all(|(x, y)| x.data() == y.data()));
        let (batch, labels) = a.batch(&[3, 0]).unwrap();
        assert_eq!(batch.shape(), &[2, 3, 16, 16]);
        assert_eq!(labels, [1, 0]);
    }
}
