//! Random small-network fixtures.
//!
//! Used by the verification suites and the runnable examples: architectures
//! stay within five layers and a few hundred parameters so finite-difference
//! sweeps over every coordinate remain fast.

use ndarray::{Array4, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{BatchNorm, Conv2d, Dense, Layer, Network, Pool2d};
use crate::element::Element;

const MAX_PARAMS: usize = 500;

/// Seeded RNG for reproducible fixtures.
pub fn test_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal_tensor<E: Element>(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> ArrayD<E> {
    let dist = Normal::new(0.0, std).expect("valid std");
    ArrayD::from_shape_fn(IxDyn(shape), |_| E::of(dist.sample(rng)))
}

fn uniform_tensor<E: Element>(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> ArrayD<E> {
    let dist = Uniform::new(lo, hi).expect("valid range");
    ArrayD::from_shape_fn(IxDyn(shape), |_| E::of(dist.sample(rng)))
}

fn conv<E: Element>(
    rng: &mut ChaCha8Rng,
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> Layer<E> {
    let fan_in = (c_in * k * k) as f64;
    Layer::Conv2d(
        Conv2d::new(
            normal_tensor(rng, &[c_out, c_in, k, k], 1.0 / fan_in.sqrt()),
            uniform_tensor(rng, &[c_out], -0.1, 0.1),
            (stride, stride),
            (padding, padding),
        )
        .expect("valid conv"),
    )
}

fn dense<E: Element>(rng: &mut ChaCha8Rng, inf: usize, out: usize) -> Layer<E> {
    Layer::Dense(
        Dense::new(
            normal_tensor(rng, &[out, inf], 1.0 / (inf as f64).sqrt()),
            uniform_tensor(rng, &[out], -0.1, 0.1),
        )
        .expect("valid dense"),
    )
}

fn batchnorm<E: Element>(rng: &mut ChaCha8Rng, c: usize) -> Layer<E> {
    Layer::BatchNorm(
        BatchNorm::new(
            uniform_tensor(rng, &[c], 0.5, 1.5),
            uniform_tensor(rng, &[c], -0.5, 0.5),
            uniform_tensor(rng, &[c], -0.5, 0.5),
            uniform_tensor(rng, &[c], 0.5, 1.5),
            E::of(1e-5),
        )
        .expect("valid batchnorm"),
    )
}

/// A random architecture of at most five layers and [`MAX_PARAMS`] trainable
/// parameters, mapping `(c, h, w)` inputs to `classes` logits.
pub fn random_network<E: Element>(
    rng: &mut ChaCha8Rng,
    c: usize,
    h: usize,
    w: usize,
    classes: usize,
) -> Network<E> {
    loop {
        let template = rng.random_range(0..7u32);
        let kmax = 3.min(h).min(w);
        let k = rng.random_range(1..=kmax);
        let c2 = rng.random_range(1..=3usize);
        let spatial = |extent: usize, k: usize, s: usize, p: usize| (extent + 2 * p - k) / s + 1;
        let mut layers: Vec<Layer<E>> = Vec::new();
        let (mut ch, mut hh, mut ww) = (c, h, w);
        match template {
            0 => {}
            1 => {}
            2 => {
                let p = rng.random_range(0..=1usize);
                layers.push(conv(rng, c, c2, k, 1, p));
                layers.push(Layer::Relu);
                (ch, hh, ww) = (c2, spatial(h, k, 1, p), spatial(w, k, 1, p));
            }
            3 => {
                layers.push(conv(rng, c, c2, k, 1, 0));
                layers.push(Layer::Relu);
                (ch, hh, ww) = (c2, spatial(h, k, 1, 0), spatial(w, k, 1, 0));
                if hh >= 2 && ww >= 2 {
                    layers.push(Layer::MaxPool2d(Pool2d { kernel: (2, 2), stride: (2, 2) }));
                    (hh, ww) = (hh / 2, ww / 2);
                }
            }
            4 => {
                layers.push(conv(rng, c, c2, k, 1, 0));
                layers.push(batchnorm(rng, c2));
                layers.push(Layer::Relu);
                (ch, hh, ww) = (c2, spatial(h, k, 1, 0), spatial(w, k, 1, 0));
            }
            5 => {
                layers.push(conv(rng, c, c2, k, 1, 0));
                (ch, hh, ww) = (c2, spatial(h, k, 1, 0), spatial(w, k, 1, 0));
                if hh >= 2 && ww >= 2 {
                    layers.push(Layer::AvgPool2d(Pool2d { kernel: (2, 2), stride: (2, 2) }));
                    (hh, ww) = (hh / 2, ww / 2);
                }
            }
            _ => {
                let s = if h > k && w > k { 2 } else { 1 };
                layers.push(conv(rng, c, c2, k, s, 0));
                layers.push(Layer::Relu);
                (ch, hh, ww) = (c2, spatial(h, k, s, 0), spatial(w, k, s, 0));
            }
        }
        layers.push(Layer::Flatten);
        let flat = ch * hh * ww;
        if template == 1 {
            let hidden = rng.random_range(2..=6usize);
            layers.push(dense(rng, flat, hidden));
            layers.push(Layer::Relu);
            layers.push(dense(rng, hidden, classes));
        } else {
            layers.push(dense(rng, flat, classes));
        }
        // Flatten costs nothing; it is not counted against the layer budget.
        let counted = layers.iter().filter(|l| !matches!(l, Layer::Flatten)).count();
        if counted > 5 {
            continue;
        }
        let net = Network::new((c, h, w), classes, layers).expect("generated shapes are consistent");
        if net.num_parameters() <= MAX_PARAMS {
            return net;
        }
    }
}

/// Uniform `[0, 1)` image batch matching the network's input shape.
pub fn random_batch<E: Element>(rng: &mut ChaCha8Rng, net: &Network<E>, n: usize) -> Array4<E> {
    let (c, h, w) = net.input_shape();
    Array4::from_shape_fn((n, c, h, w), |_| E::of(rng.random::<f64>()))
}

/// Random labels valid for the network.
pub fn random_labels(rng: &mut ChaCha8Rng, net: &Network<impl Element>, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..net.num_classes())).collect()
}
