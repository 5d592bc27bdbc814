//! Plain SGD-with-momentum training for desk-scale victim models.
//!
//! Deterministic end to end: weight initialization, shuffle order, and
//! update arithmetic all derive from the config seed, so identical configs
//! produce bit-identical weights.

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::nn::init::{initialize_weights, WeightInit};
use crate::nn::{layers, Layer, Network, ParamGrads};

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub weight_init: WeightInit,
    /// Learning-rate multiplier applied at the start of each epoch listed in
    /// `lr_decay_epochs` (counted from 1).
    pub lr_decay_factor: f64,
    pub lr_decay_epochs: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
            weight_init: WeightInit::HeNormal,
            lr_decay_factor: 0.1,
            lr_decay_epochs: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "need at least one epoch"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "batch size must be positive"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("train.learning_rate", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) && self.momentum != 0.0 {
            return Err(Error::config("train.momentum", "must lie in [0, 1)"));
        }
        if !(self.lr_decay_factor > 0.0) {
            return Err(Error::config("train.lr_decay_factor", "must be positive"));
        }
        Ok(())
    }
}

/// Momentum buffers, one per trainable tensor.
#[derive(Debug, Clone)]
pub struct MomentumState<E: Element> {
    velocity: ParamGrads<E>,
}

impl<E: Element> MomentumState<E> {
    pub fn new(net: &Network<E>) -> Self {
        Self { velocity: net.zero_param_grads() }
    }
}

/// One classical-momentum update: `v <- mu*v + g; w <- w - lr*v`.
pub fn sgd_step<E: Element>(
    net: &mut Network<E>,
    grads: &ParamGrads<E>,
    lr: E,
    momentum: E,
    state: &mut MomentumState<E>,
) -> Result<()> {
    if grads.len() != net.layers().len() {
        return Err(Error::shape("gradients", &[net.layers().len()], &[grads.len()]));
    }
    for (li, layer) in net.layers_mut().iter_mut().enumerate() {
        let params = layer.params_mut();
        if grads[li].len() != params.len() {
            return Err(Error::shape(
                format!("layer {li} gradients"),
                &[params.len()],
                &[grads[li].len()],
            ));
        }
        for ((w, g), v) in params.into_iter().zip(&grads[li]).zip(&mut state.velocity[li]) {
            if g.shape() != w.shape() {
                return Err(Error::shape(format!("layer {li} gradient"), w.shape(), g.shape()));
            }
            v.zip_mut_with(g, |v, &g| *v = momentum * *v + g);
            w.zip_mut_with(v, |w, &v| *w = *w - lr * v);
        }
    }
    Ok(())
}

/// Train a network on a dataset. Weights are (re-)initialized from the
/// config seed; returns the trained network and the mean loss per epoch.
pub fn train<E: Element>(
    net: Network<E>,
    dataset: &Dataset<E>,
    config: &TrainConfig,
) -> Result<(Network<E>, Vec<f64>)> {
    train_with_transform(net, &crate::preprocess::PreprocessTransform::Identity, dataset, config)
}

/// Train with a model-specific pre-processing transform applied to every
/// batch before the first layer (the transform is part of the model and
/// should be saved with it).
pub fn train_with_transform<E: Element>(
    mut net: Network<E>,
    transform: &crate::preprocess::PreprocessTransform<E>,
    dataset: &Dataset<E>,
    config: &TrainConfig,
) -> Result<(Network<E>, Vec<f64>)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.image_shape() != net.input_shape() {
        let (c, h, w) = net.input_shape();
        let (dc, dh, dw) = dataset.image_shape();
        return Err(Error::shape("training images", &[c, h, w], &[dc, dh, dw]));
    }

    initialize_weights(&mut net, config.weight_init, config.seed);
    let mut state = MomentumState::new(&net);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5348_5546_464c_45); // shuffle domain
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    let mut lr = config.learning_rate;
    let momentum = E::of(config.momentum);
    let mut curve = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        if config.lr_decay_epochs.contains(&(epoch + 1)) {
            lr *= config.lr_decay_factor;
        }
        let lr_e = E::of(lr);
        indices.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch_idx in indices.chunks(config.batch_size) {
            let images = transform.apply(&dataset.images.select(Axis(0), batch_idx))?;
            let labels: Vec<usize> = batch_idx.iter().map(|&i| dataset.labels[i]).collect();
            let (loss, grads) = match net.loss_and_parameter_gradients(&images, &labels) {
                Ok(r) => r,
                Err(Error::NonFinite { .. }) => return Err(Error::Diverged { epoch }),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            loss_sum += loss.as_f64() * batch_idx.len() as f64;
            sgd_step(&mut net, &grads, lr_e, momentum, &mut state)?;
        }
        curve.push(loss_sum / dataset.len() as f64);
    }
    Ok((net, curve))
}

/// The reference desk-scale CNN: two conv/pool blocks and a two-layer head.
/// Roughly 270k parameters at CIFAR-10 scale — small enough for CPU
/// training, expressive enough that attacking it is meaningful.
pub fn reference_cnn<E: Element>(
    input_shape: (usize, usize, usize),
    num_classes: usize,
) -> Result<Network<E>> {
    let (c, h, w) = input_shape;
    let conv = |c_in: usize, c_out: usize| -> Result<Layer<E>> {
        Ok(Layer::Conv2d(layers::Conv2d::new(
            ndarray::ArrayD::zeros(ndarray::IxDyn(&[c_out, c_in, 3, 3])),
            ndarray::ArrayD::zeros(ndarray::IxDyn(&[c_out])),
            (1, 1),
            (1, 1),
        )?))
    };
    let pool = Layer::MaxPool2d(layers::Pool2d { kernel: (2, 2), stride: (2, 2) });
    let flat = 32 * (h / 4) * (w / 4);
    let dense = |inf: usize, out: usize| -> Result<Layer<E>> {
        Ok(Layer::Dense(layers::Dense::new(
            ndarray::ArrayD::zeros(ndarray::IxDyn(&[out, inf])),
            ndarray::ArrayD::zeros(ndarray::IxDyn(&[out])),
        )?))
    };
    Network::new(
        input_shape,
        num_classes,
        vec![
            conv(c, 16)?,
            Layer::Relu,
            pool.clone(),
            conv(16, 32)?,
            Layer::Relu,
            pool,
            Layer::Flatten,
            dense(flat, 128)?,
            Layer::Relu,
            dense(128, num_classes)?,
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_dataset;
    use crate::nn::layers::Dense;
    use ndarray::{ArrayD, IxDyn};

    fn scalar_net(w: f64) -> Network<f64> {
        Network::new(
            (1, 1, 1),
            2,
            vec![
                Layer::Flatten,
                Layer::Dense(
                    Dense::new(
                        ArrayD::from_shape_vec(IxDyn(&[2, 1]), vec![w, 0.0]).unwrap(),
                        ArrayD::from_shape_vec(IxDyn(&[2]), vec![0.0, 0.0]).unwrap(),
                    )
                    .unwrap(),
                ),
            ],
        )
        .unwrap()
    }

    fn linear_head(shape: (usize, usize, usize), classes: usize) -> Network<f32> {
        let flat = shape.0 * shape.1 * shape.2;
        Network::new(
            shape,
            classes,
            vec![
                Layer::Flatten,
                Layer::Dense(
                    Dense::new(
                        ArrayD::zeros(IxDyn(&[classes, flat])),
                        ArrayD::zeros(IxDyn(&[classes])),
                    )
                    .unwrap(),
                ),
            ],
        )
        .unwrap()
    }

    fn train_accuracy<E: Element>(net: &Network<E>, ds: &Dataset<E>) -> f64 {
        let preds = net.predict(&ds.images).unwrap();
        let correct = preds.iter().zip(&ds.labels).filter(|(p, t)| p == t).count();
        correct as f64 / ds.len() as f64
    }

    #[test]
    fn sgd_step_plain_update() {
        let mut net = scalar_net(1.0);
        let mut grads = net.zero_param_grads();
        grads[1][0][[0, 0]] = 0.5;
        let mut state = MomentumState::new(&net);
        sgd_step(&mut net, &grads, 0.1, 0.0, &mut state).unwrap();
        assert_eq!(net.layers()[1].params()[0][[0, 0]], 0.95);
    }

    #[test]
    fn sgd_step_zero_gradient_is_identity() {
        let mut net = scalar_net(1.3);
        let grads = net.zero_param_grads();
        let mut state = MomentumState::new(&net);
        sgd_step(&mut net, &grads, 0.1, 0.9, &mut state).unwrap();
        assert_eq!(net.layers()[1].params()[0][[0, 0]], 1.3);
    }

    #[test]
    fn momentum_matches_hand_unrolled_recurrence() {
        let mut net = scalar_net(1.0);
        let mut grads = net.zero_param_grads();
        let (lr, mu, g1, g2) = (0.1, 0.9, 0.5, -0.2);
        let mut state = MomentumState::new(&net);
        grads[1][0][[0, 0]] = g1;
        sgd_step(&mut net, &grads, lr, mu, &mut state).unwrap();
        grads[1][0][[0, 0]] = g2;
        sgd_step(&mut net, &grads, lr, mu, &mut state).unwrap();
        // v1 = g1; w1 = w0 - lr*v1; v2 = mu*v1 + g2; w2 = w1 - lr*v2
        let v1 = g1;
        let w1 = 1.0 - lr * v1;
        let v2 = mu * v1 + g2;
        let w2 = w1 - lr * v2;
        let got = net.layers()[1].params()[0][[0, 0]];
        assert!((got - w2).abs() < 1e-12, "{got} vs {w2}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut net = scalar_net(1.0);
        let mut grads = net.zero_param_grads();
        grads[1][0] = ArrayD::zeros(IxDyn(&[3, 1]));
        let mut state = MomentumState::new(&net);
        assert!(sgd_step(&mut net, &grads, 0.1, 0.0, &mut state).is_err());
    }

    #[test]
    fn separable_two_class_blobs_reach_99_percent() {
        let ds = synthetic_dataset::<f32>(5, 200, 2, (3, 16, 16)).unwrap();
        let net = linear_head((3, 16, 16), 2);
        let center = crate::data::model_file::mean_image_transform(&ds).unwrap();
        let config = TrainConfig {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.2,
            momentum: 0.9,
            seed: 1,
            ..Default::default()
        };
        let (trained, curve) = train_with_transform(net, &center, &ds, &config).unwrap();
        assert_eq!(curve.len(), 20);
        assert!(curve.iter().all(|l| l.is_finite()));
        let preds = trained.predict(&center.apply(&ds.images).unwrap()).unwrap();
        let acc =
            preds.iter().zip(&ds.labels).filter(|(p, t)| p == t).count() as f64 / ds.len() as f64;
        assert!(acc >= 0.99, "train accuracy {acc}");
    }

    #[test]
    fn linear_probe_hits_95_percent_on_ten_class_fixture() {
        // Separability oracle for the synthetic generator.
        let ds = synthetic_dataset::<f32>(11, 400, 10, (3, 16, 16)).unwrap();
        let net = linear_head((3, 16, 16), 10);
        let center = crate::data::model_file::mean_image_transform(&ds).unwrap();
        let config = TrainConfig {
            epochs: 40,
            batch_size: 32,
            learning_rate: 0.2,
            momentum: 0.9,
            seed: 2,
            ..Default::default()
        };
        let (trained, _) = train_with_transform(net, &center, &ds, &config).unwrap();
        let preds = trained.predict(&center.apply(&ds.images).unwrap()).unwrap();
        let acc =
            preds.iter().zip(&ds.labels).filter(|(p, t)| p == t).count() as f64 / ds.len() as f64;
        assert!(acc >= 0.95, "linear probe accuracy {acc}");
    }

    #[test]
    fn zero_learning_rate_keeps_initialization() {
        let ds = synthetic_dataset::<f32>(6, 40, 2, (1, 6, 6)).unwrap();
        let net = linear_head((1, 6, 6), 2);
        let config = TrainConfig {
            epochs: 3,
            learning_rate: 0.0,
            seed: 9,
            ..Default::default()
        };
        let (trained, _) = train(net.clone(), &ds, &config).unwrap();
        let mut reference = net;
        initialize_weights(&mut reference, config.weight_init, config.seed);
        for (a, b) in trained.layers().iter().zip(reference.layers()) {
            for (pa, pb) in a.params().iter().zip(b.params()) {
                assert_eq!(pa, &pb);
            }
        }
    }

    #[test]
    fn same_seed_same_weights_bitwise() {
        let ds = synthetic_dataset::<f32>(7, 60, 3, (1, 6, 6)).unwrap();
        let make = || {
            let net = linear_head((1, 6, 6), 3);
            let config = TrainConfig { epochs: 4, seed: 33, ..Default::default() };
            train(net, &ds, &config).unwrap()
        };
        let (a, curve_a) = make();
        let (b, curve_b) = make();
        assert_eq!(curve_a, curve_b);
        for (la, lb) in a.layers().iter().zip(b.layers()) {
            for (pa, pb) in la.params().iter().zip(lb.params()) {
                assert_eq!(pa, &pb);
            }
        }
    }

    #[test]
    fn divergence_reports_epoch() {
        let ds = synthetic_dataset::<f32>(8, 40, 2, (1, 6, 6)).unwrap();
        let net = linear_head((1, 6, 6), 2);
        // Finite as f64 but overflowing f32 parameters after one update.
        let config = TrainConfig {
            epochs: 5,
            learning_rate: 1e39,
            momentum: 0.0,
            seed: 3,
            ..Default::default()
        };
        match train(net, &ds, &config) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn reference_cnn_shape_and_size() {
        let net = reference_cnn::<f32>((3, 32, 32), 10).unwrap();
        assert_eq!(net.num_parameters(), 268_650);
        let net = reference_cnn::<f32>((3, 16, 16), 10).unwrap();
        let x = ndarray::Array4::zeros((1, 3, 16, 16));
        assert_eq!(net.forward(&x).unwrap().shape(), [1, 10]);
    }
}
