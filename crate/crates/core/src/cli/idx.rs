use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::tensor::Tensor;
use crate::train::ImageDataset;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },
    #[error("{path}: truncated, expected {expected} bytes, found {actual}")]
    Truncated { path: PathBuf, expected: usize, actual: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: label {label} at index {index} is outside 0..9")]
    BadLabel { path: PathBuf, index: usize, label: u8 },
}

fn read(path: &Path) -> Result<Vec<u8>, IdxError> {
    std::fs::read(path).map_err(|source| IdxError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn header(path: &Path, bytes: &[u8], magic: u32, dims: usize) -> Result<Vec<usize>, IdxError> {
    let header_len = 4 + 4 * dims;
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().expect("four bytes"));
    if bytes.len() >= 4 && word(0) != magic {
        return Err(IdxError::BadMagic {
            path: path.to_path_buf(),
            expected: magic,
            found: word(0),
        });
    }
    if bytes.len() < header_len {
        return Err(IdxError::Truncated {
            path: path.to_path_buf(),
            expected: header_len,
            actual: bytes.len(),
        });
    }
    let sizes: Vec<usize> = (1..=dims).map(|i| word(i) as usize).collect();
    let expected = header_len + sizes.iter().product::<usize>();
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(sizes)
}

/// Reads an IDX image/label pair; pixels are scaled to `[0, 1]` and each image
/// is flattened row-major.
pub fn load_mnist_idx(images: &Path, labels: &Path) -> Result<ImageDataset, IdxError> {
    let image_bytes = read(images)?;
    let sizes = header(images, &image_bytes, IMAGE_MAGIC, 3)?;
    let (n, pixels) = (sizes[0], sizes[1] * sizes[2]);
    let label_bytes = read(labels)?;
    let label_count = header(labels, &label_bytes, LABEL_MAGIC, 1)?[0];
    if n != label_count {
        return Err(IdxError::CountMismatch {
            images: n,
            labels: label_count,
        });
    }

    let data = image_bytes[16..16 + n * pixels].iter().map(|&b| b as f64 / 255.0).collect();
    let mut label_vec = Vec::with_capacity(n);
    for (index, &label) in label_bytes[8..8 + n].iter().enumerate() {
        if label > 9 {
            return Err(IdxError::BadLabel {
                path: labels.to_path_buf(),
                index,
                label,
            });
        }
        label_vec.push(label as usize);
    }
    let images = Tensor::new(vec![n, pixels], data).expect("sized from header");
    Ok(ImageDataset::new(images, label_vec).expect("counts checked"))
}

/// Training and test sets under the canonical MNIST file names.
pub fn load_mnist_dir(dir: &Path) -> Result<(ImageDataset, ImageDataset), IdxError> {
    let train = load_mnist_idx(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte"))?;
    let test = load_mnist_idx(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"))?;
    Ok((train, test))
}
