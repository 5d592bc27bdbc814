//! Deterministic synthetic datasets for desk-scale experiments.
//!
//! Every image is a shared Gaussian blob (class-independent nuisance
//! structure) plus a low-amplitude class-specific sign pattern spread over
//! all pixels, plus pixel noise. The pattern amplitude varies per sample, so
//! distances to the decision boundary span a range around the usual attack
//! budgets: the classes are cleanly linearly separable, yet a trained
//! classifier is genuinely fragile under norm-bounded perturbations, the way
//! natural-image models are.

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::element::Element;
use crate::error::{Error, Result};

/// Balanced, seeded, class-separable dataset of `n` images shaped
/// `(channels, height, width)`. Labels cycle through the classes, so any
/// prefix of the dataset is approximately balanced too.
pub fn synthetic_dataset<E: Element>(
    seed: u64,
    n: usize,
    num_classes: usize,
    shape: (usize, usize, usize),
) -> Result<Dataset<E>> {
    synthetic_dataset_split(seed, n, num_classes, shape, "synthetic")
}

/// Like [`synthetic_dataset`], but with an independent sample stream per
/// split name. Class prototypes depend only on the seed, so the splits come
/// from the same distribution without sharing any samples.
pub fn synthetic_dataset_split<E: Element>(
    seed: u64,
    n: usize,
    num_classes: usize,
    shape: (usize, usize, usize),
    split: &str,
) -> Result<Dataset<E>> {
    let (c, h, w) = shape;
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::config("synthetic.shape", "extents must be positive"));
    }
    if num_classes == 0 || n < num_classes {
        return Err(Error::config("synthetic.n", "need at least one sample per class"));
    }

    let d = c * h * w;
    // Class prototypes: one sign pattern per class, piecewise constant over
    // small pixel blocks so that convolution and pooling preserve it, and
    // supported on a shared sparse subset of blocks. The support fraction
    // balances the L∞ and L2 flip costs (per-pixel cost β versus
    // β·sqrt(support/2)) against the conventional budgets.
    let block = (h.min(w) / 8).max(1);
    let (bh, bw) = (h.div_ceil(block), w.div_ceil(block));
    let num_blocks = c * bh * bw;
    let mut proto_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x53_59_4e_54_48); // prototype domain
    let mut support: Vec<bool> = (0..num_blocks).map(|_| proto_rng.random::<f64>() < 0.2).collect();
    if !support.iter().any(|&b| b) {
        support[0] = true;
    }
    let patterns: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| {
            let signs: Vec<f64> = support
                .iter()
                .map(|&on| {
                    let sign = if proto_rng.random::<bool>() { 1.0 } else { -1.0 };
                    if on {
                        sign
                    } else {
                        0.0
                    }
                })
                .collect();
            let mut full = Vec::with_capacity(d);
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        full.push(signs[(ch * bh + y / block) * bw + x / block]);
                    }
                }
            }
            full
        })
        .collect();

    // Median per-pixel pattern amplitude, with a per-sample lognormal gain:
    // the distance from a sample to the nearest other class then spans a
    // range around the conventional attack budgets, so single-step attacks
    // flip part of the set and iterative ones flip almost all of it.
    let amp_median = 0.019;
    let amp_log_sigma = 0.22;
    let sigma_blob = 0.30 * h.min(w) as f64;
    let (cy0, cx0) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let noise = Normal::new(0.0, 0.01).expect("valid noise");
    let gain_dist = Normal::new(0.0, amp_log_sigma).expect("valid gain");

    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    let split_bytes = split.as_bytes();
    let take = split_bytes.len().min(23);
    key[8..8 + take].copy_from_slice(&split_bytes[..take]);
    key[31] = 0x5D; // sample-stream domain
    let mut rng = ChaCha8Rng::from_seed(key);

    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % num_classes;
        labels.push(k);
        // Nuisance structure shared by all classes: a centered blob with
        // per-sample position and channel gain jitter.
        let jy = cy0 + (rng.random::<f64>() - 0.5) * 0.10 * h as f64;
        let jx = cx0 + (rng.random::<f64>() - 0.5) * 0.10 * w as f64;
        let gain: f64 = gain_dist.sample(&mut rng);
        let amp: f64 = amp_median * gain.exp();
        for ch in 0..c {
            let ch_gain = 0.95 + 0.1 * rng.random::<f64>();
            for y in 0..h {
                for x in 0..w {
                    let d2 = (y as f64 - jy).powi(2) + (x as f64 - jx).powi(2);
                    let blob = 0.18 * ch_gain * (-d2 / (2.0 * sigma_blob * sigma_blob)).exp();
                    let v = 0.45 + blob
                        + amp * patterns[k][(ch * h + y) * w + x]
                        + noise.sample(&mut rng);
                    data.push(E::of(v.clamp(0.0, 1.0)));
                }
            }
        }
    }
    let images = Array4::from_shape_vec((n, c, h, w), data).expect("counted elements");
    Dataset::new(images, labels, None, split)
}
