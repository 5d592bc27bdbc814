//! Self-describing model file: a human-readable JSON header followed by raw
//! little-endian tensor data and a SHA-256 payload checksum.
//!
//! Byte layout (all integers little-endian):
//!
//! | offset | size       | field                                  |
//! |--------|------------|----------------------------------------|
//! | 0      | 8          | magic `b"ADVGRADM"`                    |
//! | 8      | 4          | format version (`u32`, currently 1)    |
//! | 12     | 4          | header length `H` (`u32`, bytes)       |
//! | 16     | H          | JSON header (UTF-8)                    |
//! | 16+H   | P          | tensor payload, manifest order         |
//! | 16+H+P | 32         | SHA-256 over the payload bytes         |
//!
//! The header lists topology, pre-processing, dtype, provenance, and a tensor
//! manifest (name + shape per tensor). `P` is implied by the manifest and the
//! dtype width. Loading verifies magic, version, dtype, manifest/topology
//! consistency, payload length, and checksum before constructing anything.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array3, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Dataset;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::nn::{layers, Layer, Network};
use crate::preprocess::PreprocessTransform;

const MAGIC: &[u8; 8] = b"ADVGRADM";
const VERSION: u32 = 1;

/// Optional training metadata stored alongside the weights.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct Provenance {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub training_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dtype: String,
    input_shape: [usize; 3],
    num_classes: usize,
    layers: Vec<LayerSpec>,
    transform: TransformSpec,
    tensors: Vec<TensorSpec>,
    #[serde(default)]
    provenance: Provenance,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum LayerSpec {
    Conv2d {
        out_channels: usize,
        in_channels: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: [usize; 2],
    },
    Dense {
        out_features: usize,
        in_features: usize,
    },
    Relu,
    MaxPool2d {
        kernel: [usize; 2],
        stride: [usize; 2],
    },
    AvgPool2d {
        kernel: [usize; 2],
        stride: [usize; 2],
    },
    BatchNorm {
        channels: usize,
        eps: f64,
    },
    Flatten,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum TransformSpec {
    Identity,
    MeanPixelSubtract { shape: [usize; 3] },
    PerChannelNormalize { channels: usize },
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorSpec {
    name: String,
    shape: Vec<usize>,
}

fn layer_spec<E: Element>(layer: &Layer<E>) -> LayerSpec {
    match layer {
        Layer::Conv2d(c) => LayerSpec::Conv2d {
            out_channels: c.out_channels(),
            in_channels: c.in_channels(),
            kernel: [c.kernel().0, c.kernel().1],
            stride: [c.stride.0, c.stride.1],
            padding: [c.padding.0, c.padding.1],
        },
        Layer::Dense(d) => LayerSpec::Dense {
            out_features: d.out_features(),
            in_features: d.in_features(),
        },
        Layer::Relu => LayerSpec::Relu,
        Layer::MaxPool2d(p) => LayerSpec::MaxPool2d {
            kernel: [p.kernel.0, p.kernel.1],
            stride: [p.stride.0, p.stride.1],
        },
        Layer::AvgPool2d(p) => LayerSpec::AvgPool2d {
            kernel: [p.kernel.0, p.kernel.1],
            stride: [p.stride.0, p.stride.1],
        },
        Layer::BatchNorm(b) => LayerSpec::BatchNorm { channels: b.channels(), eps: b.eps.as_f64() },
        Layer::Flatten => LayerSpec::Flatten,
    }
}

/// All serialized tensors of a layer (trainable and frozen), with names.
fn layer_state<E: Element>(layer: &Layer<E>) -> Vec<(&'static str, &ArrayD<E>)> {
    match layer {
        Layer::Conv2d(c) => vec![("weights", &c.weights), ("bias", &c.bias)],
        Layer::Dense(d) => vec![("weights", &d.weights), ("bias", &d.bias)],
        Layer::BatchNorm(b) => vec![
            ("gamma", &b.gamma),
            ("beta", &b.beta),
            ("running_mean", &b.mean),
            ("running_var", &b.var),
        ],
        _ => Vec::new(),
    }
}

fn transform_state<E: Element>(t: &PreprocessTransform<E>) -> Vec<(&'static str, ArrayD<E>)> {
    match t {
        PreprocessTransform::Identity => Vec::new(),
        PreprocessTransform::MeanPixelSubtract { mean } => {
            vec![("transform.mean", mean.clone().into_dyn())]
        }
        PreprocessTransform::PerChannelNormalize { mean, std } => vec![
            ("transform.mean", mean.clone().into_dyn()),
            ("transform.std", std.clone().into_dyn()),
        ],
    }
}

/// Serialize a network, its pre-processing transform, and provenance to disk.
/// The file is written next to `path` and renamed into place, so a crashed
/// save never leaves a partial model behind.
pub fn save_model<E: Element>(
    network: &Network<E>,
    transform: &PreprocessTransform<E>,
    provenance: &Provenance,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut tensors: Vec<TensorSpec> = Vec::new();
    let mut payload: Vec<u8> = Vec::new();

    for (i, layer) in network.layers().iter().enumerate() {
        for (name, t) in layer_state(layer) {
            tensors.push(TensorSpec {
                name: format!("layer{i}.{name}"),
                shape: t.shape().to_vec(),
            });
            for &v in t.iter() {
                v.write_le(&mut payload);
            }
        }
    }
    for (name, t) in transform_state(transform) {
        tensors.push(TensorSpec { name: name.to_string(), shape: t.shape().to_vec() });
        for &v in t.iter() {
            v.write_le(&mut payload);
        }
    }

    let (c, h, w) = network.input_shape();
    let header = Header {
        dtype: E::DTYPE.name().to_string(),
        input_shape: [c, h, w],
        num_classes: network.num_classes(),
        layers: network.layers().iter().map(layer_spec).collect(),
        transform: match transform {
            PreprocessTransform::Identity => TransformSpec::Identity,
            PreprocessTransform::MeanPixelSubtract { mean } => {
                let s = mean.shape();
                TransformSpec::MeanPixelSubtract { shape: [s[0], s[1], s[2]] }
            }
            PreprocessTransform::PerChannelNormalize { mean, .. } => {
                TransformSpec::PerChannelNormalize { channels: mean.len() }
            }
        },
        tensors,
        provenance: provenance.clone(),
    };
    let header_json = serde_json::to_vec(&header)?;

    let mut bytes = Vec::with_capacity(16 + header_json.len() + payload.len() + 32);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    bytes.extend_from_slice(&payload);
    bytes.extend_from_slice(&Sha256::digest(&payload));

    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::ModelFormat(msg.into())
}

/// Load a model saved by [`save_model`]. The requested element type must
/// match the stored dtype.
pub fn load_model<E: Element>(
    path: impl AsRef<Path>,
) -> Result<(Network<E>, PreprocessTransform<E>, Provenance)> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingFile { path: path.to_path_buf() });
    }
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a model file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::ModelVersion { found: version, supported: VERSION });
    }
    let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + header_len + 32 {
        return Err(bad("file shorter than header declares"));
    }
    let header: Header = serde_json::from_slice(&bytes[16..16 + header_len])?;
    if header.dtype != E::DTYPE.name() {
        let found: &'static str = if header.dtype == "f64" { "f64" } else { "f32" };
        return Err(Error::DtypeMismatch { found, requested: E::DTYPE.name() });
    }

    let elem = E::DTYPE.size_bytes();
    let payload_len: usize =
        header.tensors.iter().map(|t| t.shape.iter().product::<usize>() * elem).sum();
    let expected_total = 16 + header_len + payload_len + 32;
    if bytes.len() != expected_total {
        return Err(bad(format!(
            "payload length mismatch: file has {} bytes, manifest implies {}",
            bytes.len(),
            expected_total
        )));
    }
    let payload = &bytes[16 + header_len..16 + header_len + payload_len];
    let stored = &bytes[16 + header_len + payload_len..];
    if Sha256::digest(payload).as_slice() != stored {
        return Err(Error::ChecksumMismatch);
    }

    // Cut the payload into tensors, manifest order.
    let mut tensors: Vec<ArrayD<E>> = Vec::with_capacity(header.tensors.len());
    let mut off = 0;
    for spec in &header.tensors {
        let count: usize = spec.shape.iter().product();
        let data: Vec<E> = payload[off..off + count * elem]
            .chunks_exact(elem)
            .map(E::read_le)
            .collect();
        off += count * elem;
        tensors.push(
            ArrayD::from_shape_vec(IxDyn(&spec.shape), data).expect("shape matches count"),
        );
    }
    let mut tensors = tensors.into_iter();
    let mut next = |what: &str, shape: &[usize]| -> Result<ArrayD<E>> {
        let t = tensors.next().ok_or_else(|| bad(format!("missing tensor for {what}")))?;
        if t.shape() != shape {
            return Err(Error::shape(format!("stored tensor for {what}"), shape, t.shape()));
        }
        Ok(t)
    };

    let mut layers_built: Vec<Layer<E>> = Vec::with_capacity(header.layers.len());
    for (i, spec) in header.layers.iter().enumerate() {
        let layer = match spec {
            LayerSpec::Conv2d { out_channels, in_channels, kernel, stride, padding } => {
                let w = next(
                    &format!("layer{i}.weights"),
                    &[*out_channels, *in_channels, kernel[0], kernel[1]],
                )?;
                let b = next(&format!("layer{i}.bias"), &[*out_channels])?;
                Layer::Conv2d(layers::Conv2d::new(
                    w,
                    b,
                    (stride[0], stride[1]),
                    (padding[0], padding[1]),
                )?)
            }
            LayerSpec::Dense { out_features, in_features } => {
                let w = next(&format!("layer{i}.weights"), &[*out_features, *in_features])?;
                let b = next(&format!("layer{i}.bias"), &[*out_features])?;
                Layer::Dense(layers::Dense::new(w, b)?)
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::MaxPool2d { kernel, stride } => Layer::MaxPool2d(layers::Pool2d {
                kernel: (kernel[0], kernel[1]),
                stride: (stride[0], stride[1]),
            }),
            LayerSpec::AvgPool2d { kernel, stride } => Layer::AvgPool2d(layers::Pool2d {
                kernel: (kernel[0], kernel[1]),
                stride: (stride[0], stride[1]),
            }),
            LayerSpec::BatchNorm { channels, eps } => {
                let g = next(&format!("layer{i}.gamma"), &[*channels])?;
                let be = next(&format!("layer{i}.beta"), &[*channels])?;
                let m = next(&format!("layer{i}.running_mean"), &[*channels])?;
                let v = next(&format!("layer{i}.running_var"), &[*channels])?;
                Layer::BatchNorm(layers::BatchNorm::new(g, be, m, v, E::of(*eps))?)
            }
            LayerSpec::Flatten => Layer::Flatten,
        };
        layers_built.push(layer);
    }

    let transform = match header.transform {
        TransformSpec::Identity => PreprocessTransform::Identity,
        TransformSpec::MeanPixelSubtract { shape } => {
            let mean = next("transform.mean", &shape)?;
            PreprocessTransform::mean_pixel_subtract(
                mean.into_dimensionality::<ndarray::Ix3>().expect("rank 3"),
            )?
        }
        TransformSpec::PerChannelNormalize { channels } => {
            let mean = next("transform.mean", &[channels])?;
            let std = next("transform.std", &[channels])?;
            PreprocessTransform::per_channel_normalize(
                mean.into_dimensionality::<ndarray::Ix1>().expect("rank 1"),
                std.into_dimensionality::<ndarray::Ix1>().expect("rank 1"),
            )?
        }
    };
    if tensors.next().is_some() {
        return Err(bad("manifest lists more tensors than the topology consumes"));
    }

    let [c, h, w] = header.input_shape;
    let network = Network::new((c, h, w), header.num_classes, layers_built)?;
    Ok((network, transform, header.provenance))
}

/// Convenience used by examples: a dataset-matched identity-transform tuple.
pub fn identity_transform<E: Element>() -> PreprocessTransform<E> {
    PreprocessTransform::Identity
}

/// Per-channel normalize transform with statistics taken from a dataset and
/// a fixed std.
pub fn standardize_transform<E: Element>(
    dataset: &Dataset<E>,
    std: f64,
) -> Result<PreprocessTransform<E>> {
    let means: Array1<E> = dataset.channel_means();
    let stds = Array1::from_elem(means.len(), E::of(std));
    PreprocessTransform::per_channel_normalize(means, stds)
}

/// Mean-pixel-subtract transform with the mean image of a dataset.
pub fn mean_image_transform<E: Element>(dataset: &Dataset<E>) -> Result<PreprocessTransform<E>> {
    let mean: Array3<E> = dataset.mean_image();
    PreprocessTransform::mean_pixel_subtract(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::random::{random_network, test_rng};

    fn params_equal<E: Element>(a: &Network<E>, b: &Network<E>) -> bool {
        a.layers().iter().zip(b.layers()).all(|(la, lb)| {
            layer_state(la)
                .iter()
                .zip(layer_state(lb).iter())
                .all(|((_, ta), (_, tb))| ta == tb)
        })
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = test_rng(21);
        for seed_use in 0..3 {
            let net = random_network::<f32>(&mut rng, 3, 6, 6, 4);
            let transform = match seed_use {
                0 => PreprocessTransform::Identity,
                1 => PreprocessTransform::mean_pixel_subtract(ndarray::Array3::from_elem(
                    (3, 6, 6),
                    0.47f32,
                ))
                .unwrap(),
                _ => PreprocessTransform::per_channel_normalize(
                    ndarray::Array1::from_vec(vec![0.5, 0.4, 0.3]),
                    ndarray::Array1::from_vec(vec![0.25, 0.2, 0.3]),
                )
                .unwrap(),
            };
            let prov = Provenance {
                training_seed: Some(7),
                epochs: Some(3),
                note: Some("fixture".into()),
            };
            let path = dir.path().join(format!("m{seed_use}.model"));
            save_model(&net, &transform, &prov, &path).unwrap();
            let (net2, t2, prov2) = load_model::<f32>(&path).unwrap();
            assert!(params_equal(&net, &net2));
            assert_eq!(prov, prov2);
            assert_eq!(transform.kind_name(), t2.kind_name());
        }
    }

    #[test]
    fn f64_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = test_rng(22);
        let net = random_network::<f64>(&mut rng, 1, 5, 5, 2);
        let path = dir.path().join("m.model");
        save_model(&net, &PreprocessTransform::Identity, &Provenance::default(), &path).unwrap();
        let (net2, _, _) = load_model::<f64>(&path).unwrap();
        assert!(params_equal(&net, &net2));
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = test_rng(23);
        let net = random_network::<f32>(&mut rng, 1, 5, 5, 2);
        let path = dir.path().join("m.model");
        save_model(&net, &PreprocessTransform::Identity, &Provenance::default(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() - 40; // inside payload, before the checksum
        bytes[mid] ^= 0xFF;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_model::<f32>(&path).unwrap_err(), Error::ChecksumMismatch));
    }

    #[test]
    fn future_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = test_rng(24);
        let net = random_network::<f32>(&mut rng, 1, 5, 5, 2);
        let path = dir.path().join("m.model");
        save_model(&net, &PreprocessTransform::Identity, &Provenance::default(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_model::<f32>(&path).unwrap_err(),
            Error::ModelVersion { found: 99, .. }
        ));
    }

    #[test]
    fn dtype_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = test_rng(25);
        let net = random_network::<f32>(&mut rng, 1, 5, 5, 2);
        let path = dir.path().join("m.model");
        save_model(&net, &PreprocessTransform::Identity, &Provenance::default(), &path).unwrap();
        assert!(matches!(
            load_model::<f64>(&path).unwrap_err(),
            Error::DtypeMismatch { found: "f32", requested: "f64" }
        ));
    }

    #[test]
    fn save_is_atomic_no_tmp_left_behind() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = test_rng(26);
        let net = random_network::<f32>(&mut rng, 1, 5, 5, 2);
        let path = dir.path().join("m.model");
        save_model(&net, &PreprocessTransform::Identity, &Provenance::default(), &path).unwrap();
        let entries: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(entries.len(), 1);
    }
}
