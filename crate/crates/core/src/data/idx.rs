use std::fs;
use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MNIST_CLASSES: usize = 10;

const IMAGES_MAGIC: u32 = 0x0803;
const LABELS_MAGIC: u32 = 0x0801;

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Parses an IDX header, returning the dimensions and the payload.
fn parse_idx<'a>(path: &Path, bytes: &'a [u8], magic: u32, rank: usize) -> Result<(Vec<usize>, &'a [u8])> {
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_be_bytes(b.try_into().expect("four bytes")))
            .ok_or_else(|| format_err(path, "truncated header"))
    };
    let found = word(0)?;
    if found != magic {
        return Err(format_err(path, format!("magic number {found:#010x}, expected {magic:#010x}")));
    }
    let dims = (1..=rank).map(|i| word(i).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let payload = &bytes[4 * (rank + 1)..];
    let expected: usize = dims.iter().product();
    if payload.len() != expected {
        return Err(format_err(
            path,
            format!("header promises {expected} bytes of data, file has {}", payload.len()),
        ));
    }
    Ok((dims, payload))
}

/// Reads an IDX image file and its label file. Pixels are scaled to `[0, 1]`
/// and shaped `N x 28 x 28 x 1`; labels become one-hot rows of width 10.
pub fn load_mnist_idx(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
    let img_bytes = read_file(images)?;
    let lbl_bytes = read_file(labels)?;
    let (idims, pixels) = parse_idx(images, &img_bytes, IMAGES_MAGIC, 3)?;
    let (ldims, classes) = parse_idx(labels, &lbl_bytes, LABELS_MAGIC, 1)?;
    if idims[0] != ldims[0] {
        return Err(Error::Validation(format!(
            "{} holds {} images but {} holds {} labels",
            images.display(),
            idims[0],
            labels.display(),
            ldims[0]
        )));
    }
    if let Some(bad) = classes.iter().find(|&&c| c as usize >= MNIST_CLASSES) {
        return Err(format_err(labels, format!("label {bad} is out of range")));
    }
    let n = idims[0];
    if n == 0 {
        return Err(format_err(images, "no samples"));
    }
    let inputs = Tensor::from_vec(
        &[n, idims[1], idims[2], 1],
        pixels.iter().map(|&b| f64::from(b) / 255.0).collect(),
    )?;
    let mut one_hot = vec![0.0; n * MNIST_CLASSES];
    for (row, &c) in one_hot.chunks_mut(MNIST_CLASSES).zip(classes) {
        row[c as usize] = 1.0;
    }
    Dataset::new(inputs, Tensor::from_vec(&[n, MNIST_CLASSES], one_hot)?, split)
}

/// Loads the standard file names from `dir`, returning `(train, test)`.
pub fn load_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_mnist_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
        Split::Train,
    )?;
    let test = load_mnist_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
        Split::Test,
    )?;
    Ok((train, test))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())).into())
}
