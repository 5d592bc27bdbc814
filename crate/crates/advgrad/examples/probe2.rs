//! Scratch probe for linear separability (temporary).

use advgrad::data::{model_file, synthetic_dataset};
use advgrad::nn::layers::Dense;
use advgrad::nn::{Layer, Network};
use advgrad::train::{train_with_transform, TrainConfig};
use advgrad::preprocess::PreprocessTransform;
use ndarray::{ArrayD, IxDyn};

fn main() {
    for (shape, classes, n, lr, epochs, center) in [
        ((3usize, 8, 8), 2usize, 200usize, 0.05, 40usize, true),
        ((3, 8, 8), 2, 200, 0.2, 40, true),
        ((3, 12, 12), 10, 400, 0.2, 60, true),
        ((3, 16, 16), 10, 400, 0.2, 60, true),
        ((3, 16, 16), 10, 400, 0.5, 60, true),
        ((3, 16, 16), 10, 400, 0.05, 60, false),
    ] {
        let ds = synthetic_dataset::<f32>(11, n, classes, shape).unwrap();
        let flat = shape.0 * shape.1 * shape.2;
        let tr = if center {
            model_file::mean_image_transform(&ds).unwrap()
        } else {
            PreprocessTransform::Identity
        };
        let net = Network::new(
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
        .unwrap();
        let cfg = TrainConfig {
            epochs,
            batch_size: 32,
            learning_rate: lr,
            momentum: 0.9,
            seed: 2,
            ..Default::default()
        };
        let (trained, curve) = train_with_transform(net, &tr, &ds, &cfg).unwrap();
        let preds = trained.predict(&tr.apply(&ds.images).unwrap()).unwrap();
        let acc = preds.iter().zip(&ds.labels).filter(|(p, t)| p == t).count() as f64 / n as f64;
        println!(
            "{shape:?} k={classes} n={n} lr={lr} epochs={epochs} center={center}: acc {:.3} (loss {:.4})",
            acc,
            curve.last().unwrap()
        );
    }
}
