//! Scratch probe for desk-model tuning (temporary).

use advgrad::attack::{AttackSpace, Norm};
use advgrad::data::synthetic_dataset_split;
use advgrad::eval::{clean_accuracy, robust_accuracy, EvalConfig};
use advgrad::preprocess::PreprocessTransform;
use advgrad::train::{reference_cnn, train_with_transform, TrainConfig};
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let train_ds = synthetic_dataset_split::<f32>(42, 10000, 10, (3, 32, 32), "train").unwrap();
    let test_ds = synthetic_dataset_split::<f32>(42, 2000, 10, (3, 32, 32), "test").unwrap();
    println!("data: {:?}", t0.elapsed());

    let net = reference_cnn::<f32>((3, 32, 32), 10).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 64,
        learning_rate: 0.02,
        momentum: 0.9,
        seed: 7,
        ..Default::default()
    };
    let id = advgrad::data::model_file::mean_image_transform(&train_ds).unwrap();
    let t1 = Instant::now();
    let (net, curve) = train_with_transform(net, &id, &train_ds, &cfg).unwrap();
    println!("train: {:?} curve {curve:.3?}", t1.elapsed());
    println!(
        "clean train {:.2}% test {:.2}%",
        clean_accuracy(&net, &id, &train_ds).unwrap() * 100.0,
        clean_accuracy(&net, &id, &test_ds).unwrap() * 100.0
    );

    let eval = |preset: &str, norm: Norm, samples: usize| {
        let mut c = EvalConfig::new(preset, norm, advgrad::attack::default_epsilon(norm));
        c.max_samples = Some(samples);
        c.seed = 1;
        let t = Instant::now();
        let r = robust_accuracy(&net, &id, &test_ds, &c).unwrap();
        println!(
            "{preset:>10} {:>4}: robust {:6.2}%  ({:?})",
            norm.name(),
            r.robust_accuracy * 100.0,
            t.elapsed()
        );
        r.robust_accuracy
    };

    for p in ["FGSM", "FGSM-10", "BIM-10", "BIM-50"] {
        eval(p, Norm::Linf, 500);
    }
    for p in ["FGM", "BIM-10", "BIM-50", "BIM-100", "PGD-50-10"] {
        eval(p, Norm::L2, 500);
    }

    // Quantization deltas.
    for (p, n) in [("FGSM", Norm::Linf), ("FGM", Norm::L2)] {
        let mut c = EvalConfig::new(p, n, advgrad::attack::default_epsilon(n));
        c.max_samples = Some(500);
        c.seed = 1;
        let base = robust_accuracy(&net, &id, &test_ds, &c).unwrap().robust_accuracy;
        c.post_quantize = true;
        let quant = robust_accuracy(&net, &id, &test_ds, &c).unwrap().robust_accuracy;
        println!("{p} quantize delta: {:.3}pp", (quant - base).abs() * 100.0);
    }

    // Criterion-6 style check: standardizing transform, input vs network space.
    let tr = advgrad::data::model_file::standardize_transform(&train_ds, 0.25).unwrap();
    let net2 = reference_cnn::<f32>((3, 32, 32), 10).unwrap();
    let t2 = Instant::now();
    let (net2, _) = train_with_transform(net2, &tr, &train_ds, &cfg).unwrap();
    println!("train std model: {:?}", t2.elapsed());
    println!(
        "std model clean test {:.2}%",
        clean_accuracy(&net2, &tr, &test_ds).unwrap() * 100.0
    );
    for norm in [Norm::Linf, Norm::L2] {
        let mut c = EvalConfig::new("BIM-10", norm, advgrad::attack::default_epsilon(norm));
        c.max_samples = Some(500);
        c.seed = 1;
        c.space = AttackSpace::InputSpace;
        let input = robust_accuracy(&net2, &tr, &test_ds, &c).unwrap().robust_accuracy;
        c.space = AttackSpace::NetworkSpace;
        let network = robust_accuracy(&net2, &tr, &test_ds, &c).unwrap().robust_accuracy;
        println!(
            "BIM-10 {}: input {:.2}% network {:.2}% gap {:.2}pp",
            norm.name(),
            input * 100.0,
            network * 100.0,
            (network - input) * 100.0
        );
    }
    println!("total: {:?}", t0.elapsed());
}
