//! CIFAR-10 binary format ingestion.
//!
//! Each record is 3073 bytes: one label byte followed by 3072 pixel bytes in
//! channel-planar order (all red, all green, all blue), each plane row-major
//! 32×32. Pixels map to `[0,1]` as `byte / 255`.

use std::fs;
use std::path::Path;

use ndarray::Array4;

use super::Dataset;
use crate::element::Element;
use crate::error::{Error, Result};

pub const CIFAR10_CLASSES: [&str; 10] = [
    "airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck",
];

const RECORD_BYTES: usize = 3073;
const IMAGE_BYTES: usize = 3072;

/// Load one CIFAR-10 binary file (`data_batch_N.bin` or `test_batch.bin`).
pub fn load_cifar10_file<E: Element>(path: impl AsRef<Path>, split: &str) -> Result<Dataset<E>> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingFile { path: path.to_path_buf() });
    }
    let bytes = fs::read(path)?;
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::TruncatedRecord {
            path: path.to_path_buf(),
            len: bytes.len() as u64,
            record: RECORD_BYTES as u64,
        });
    }
    let n = bytes.len() / RECORD_BYTES;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * IMAGE_BYTES);
    for (record, chunk) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let label = chunk[0];
        if label >= 10 {
            return Err(Error::BadLabelByte { path: path.to_path_buf(), record, label });
        }
        labels.push(label as usize);
        data.extend(chunk[1..].iter().map(|&b| E::of(b as f64 / 255.0)));
    }
    let images = Array4::from_shape_vec((n, 3, 32, 32), data).expect("record arithmetic");
    Dataset::new(
        images,
        labels,
        Some(CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect()),
        split,
    )
}

/// Load and concatenate the five training batches from a directory laid out
/// like the upstream `cifar-10-batches-bin` archive.
pub fn load_cifar10_train<E: Element>(dir: impl AsRef<Path>) -> Result<Dataset<E>> {
    let dir = dir.as_ref();
    let mut images: Option<Array4<E>> = None;
    let mut labels = Vec::new();
    for i in 1..=5 {
        let part = load_cifar10_file::<E>(dir.join(format!("data_batch_{i}.bin")), "train")?;
        labels.extend(part.labels);
        images = Some(match images {
            None => part.images,
            Some(acc) => {
                ndarray::concatenate(ndarray::Axis(0), &[acc.view(), part.images.view()])
                    .expect("same image shape")
            }
        });
    }
    Dataset::new(
        images.expect("five batches"),
        labels,
        Some(CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect()),
        "train",
    )
}

/// Load `test_batch.bin` from a `cifar-10-batches-bin` directory.
pub fn load_cifar10_test<E: Element>(dir: impl AsRef<Path>) -> Result<Dataset<E>> {
    load_cifar10_file(dir.as_ref().join("test_batch.bin"), "test")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_records(records: &[(u8, u8)]) -> tempfile::NamedTempFile {
        // (label, fill byte) per record
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for &(label, fill) in records {
            let mut rec = vec![fill; RECORD_BYTES];
            rec[0] = label;
            f.write_all(&rec).unwrap();
        }
        f.flush().unwrap();
        f
    }

    #[test]
    fn single_record_loads_exactly() {
        let f = write_records(&[(3, 255)]);
        let ds = load_cifar10_file::<f32>(f.path(), "test").unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.labels, vec![3]);
        assert!(ds.images.iter().all(|&v| v == 1.0));
        assert_eq!(ds.image_shape(), (3, 32, 32));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(&vec![0u8; RECORD_BYTES + 5]).unwrap();
        f.flush().unwrap();
        let err = load_cifar10_file::<f32>(f.path(), "test").unwrap_err();
        assert!(matches!(err, Error::TruncatedRecord { .. }), "{err}");
    }

    #[test]
    fn bad_label_byte_is_rejected() {
        let f = write_records(&[(0, 10), (11, 0)]);
        let err = load_cifar10_file::<f32>(f.path(), "test").unwrap_err();
        assert!(matches!(err, Error::BadLabelByte { record: 1, label: 11, .. }), "{err}");
    }

    #[test]
    fn missing_file_is_a_distinct_error() {
        let err = load_cifar10_file::<f32>("/nonexistent/batch.bin", "test").unwrap_err();
        assert!(matches!(err, Error::MissingFile { .. }));
    }

    #[test]
    fn pixels_are_exact_byte_over_255() {
        let f = write_records(&[(1, 128)]);
        let ds = load_cifar10_file::<f64>(f.path(), "x").unwrap();
        assert_eq!(ds.images[[0, 0, 0, 0]], 128.0 / 255.0);
    }
}
