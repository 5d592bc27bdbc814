//! Weight initialization schemes for trainable layers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::{Layer, Network};
use crate::element::Element;

/// Initialization scheme for convolution and dense weights. Biases are
/// zeroed; batch-norm tensors are left untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WeightInit {
    #[default]
    HeNormal,
    XavierUniform,
}

fn fill<E: Element>(tensor: &mut ndarray::ArrayD<E>, rng: &mut ChaCha8Rng, scheme: WeightInit, fan_in: usize, fan_out: usize) {
    match scheme {
        WeightInit::HeNormal => {
            let std = (2.0 / fan_in as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("valid std");
            for v in tensor.iter_mut() {
                *v = E::of(dist.sample(rng));
            }
        }
        WeightInit::XavierUniform => {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("valid range");
            for v in tensor.iter_mut() {
                *v = E::of(dist.sample(rng));
            }
        }
    }
}

/// Re-initialize every trainable weight in place, deterministically from the
/// seed. Layers are visited in order, so the result is independent of how the
/// network will later be executed.
pub fn initialize_weights<E: Element>(net: &mut Network<E>, scheme: WeightInit, seed: u64) {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Burn a draw so weight streams differ from unrelated consumers of the
    // same seed.
    let _: f64 = rng.random();
    for layer in net.layers_mut() {
        match layer {
            Layer::Conv2d(c) => {
                let s = c.weights.shape().to_vec();
                let fan_in = s[1] * s[2] * s[3];
                let fan_out = s[0] * s[2] * s[3];
                fill(&mut c.weights, &mut rng, scheme, fan_in, fan_out);
                c.bias.fill(E::zero());
            }
            Layer::Dense(d) => {
                let (out, inf) = (d.out_features(), d.in_features());
                fill(&mut d.weights, &mut rng, scheme, inf, out);
                d.bias.fill(E::zero());
            }
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::random::{random_batch, random_network, test_rng};

    #[test]
    fn same_seed_same_weights() {
        let mut rng = test_rng(3);
        let mut a = random_network::<f32>(&mut rng, 2, 6, 6, 3);
        let mut b = a.clone();
        initialize_weights(&mut a, WeightInit::HeNormal, 99);
        initialize_weights(&mut b, WeightInit::HeNormal, 99);
        for (la, lb) in a.layers().iter().zip(b.layers()) {
            for (pa, pb) in la.params().iter().zip(lb.params()) {
                assert_eq!(pa, &pb);
            }
        }
    }

    #[test]
    fn different_schemes_differ() {
        let mut rng = test_rng(4);
        let mut a = random_network::<f32>(&mut rng, 2, 6, 6, 3);
        let mut b = a.clone();
        initialize_weights(&mut a, WeightInit::HeNormal, 7);
        initialize_weights(&mut b, WeightInit::XavierUniform, 7);
        let x = random_batch(&mut rng, &a, 2);
        assert_ne!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
    }
}
