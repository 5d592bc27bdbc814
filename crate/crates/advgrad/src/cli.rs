//! Command implementations behind the `advgrad` binary: train a desk-scale
//! victim, evaluate attack presets against a saved model, merge reports
//! across models, and inspect a model file.

use std::path::{Path, PathBuf};

use crate::config::{DatasetConfig, RunConfig, Split, TransformConfig};
use crate::data::{
    load_cifar10_test, load_cifar10_train, model_file, save_model, synthetic_dataset_split,
    Dataset, Provenance,
};
use crate::error::{Error, Result};
use crate::eval::{clean_accuracy, robust_accuracy, EvalConfig};
use crate::nn::Layer;
use crate::preprocess::PreprocessTransform;
use crate::report::{merge_runs, write_merged_outputs, write_run_outputs, RunReport};
use crate::train::{reference_cnn, train_with_transform};

fn load_dataset(config: &RunConfig, split: Split) -> Result<Dataset<f32>> {
    match &config.dataset {
        DatasetConfig::Cifar10 { path, split: configured } => {
            let split = if config.train.is_some() && split == Split::Train {
                Split::Train
            } else {
                *configured
            };
            match split {
                Split::Train => load_cifar10_train(path),
                Split::Test => load_cifar10_test(path),
            }
        }
        DatasetConfig::Synthetic { num_samples, num_classes, shape } => synthetic_dataset_split(
            config.seed,
            *num_samples,
            *num_classes,
            (shape[0], shape[1], shape[2]),
            match split {
                Split::Train => "train",
                Split::Test => "test",
            },
        ),
    }
}

fn model_path(config: &RunConfig) -> PathBuf {
    config
        .model
        .as_ref()
        .map(|m| m.path.clone())
        .unwrap_or_else(|| config.output_dir.join("model.bin"))
}

/// Train the reference CNN per the config, attach the configured transform,
/// save the model file, and print the clean accuracy.
pub fn cmd_train(config: &RunConfig) -> Result<()> {
    config.validate(false)?;
    let section = config
        .train
        .as_ref()
        .ok_or_else(|| Error::config("train", "config has no [train] section"))?;
    let dataset = load_dataset(config, Split::Train)?;
    let num_classes = dataset.num_classes();
    let net = reference_cnn::<f32>(dataset.image_shape(), num_classes)?;
    println!(
        "training reference cnn: {} samples, {} classes, {} parameters",
        dataset.len(),
        num_classes,
        net.num_parameters()
    );

    let transform: PreprocessTransform<f32> = match &section.transform {
        TransformConfig::Identity => PreprocessTransform::Identity,
        TransformConfig::MeanPixelSubtract => model_file::mean_image_transform(&dataset)?,
        TransformConfig::PerChannelNormalize { std } => {
            model_file::standardize_transform(&dataset, *std)?
        }
    };

    let train_config = section.to_train_config(config.seed);
    let started = std::time::Instant::now();
    let (trained, curve) = train_with_transform(net, &transform, &dataset, &train_config)?;
    for (epoch, loss) in curve.iter().enumerate() {
        println!("epoch {:>3}: mean loss {loss:.4}", epoch + 1);
    }
    let accuracy = clean_accuracy(&trained, &transform, &dataset)?;
    println!(
        "clean accuracy on {} split: {:.2}% ({:.1?})",
        dataset.split,
        accuracy * 100.0,
        started.elapsed()
    );

    let path = model_path(config);
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let provenance = Provenance {
        training_seed: Some(config.seed),
        epochs: Some(section.epochs),
        note: Some(format!("trained on {} ({} samples)", dataset.split, dataset.len())),
    };
    save_model(&trained, &transform, &provenance, &path)?;
    println!("model written to {}", path.display());
    Ok(())
}

/// Evaluate every configured preset against the saved model and write the
/// report set (JSON + CSV + confusion matrices) into the output directory.
pub fn cmd_evaluate(config: &RunConfig) -> Result<()> {
    config.validate(true)?;
    let section = config
        .evaluate
        .as_ref()
        .ok_or_else(|| Error::config("evaluate", "config has no [evaluate] section"))?;
    let path = model_path(config);
    let (net, transform, provenance) = model_file::load_model::<f32>(&path)?;
    if let Some(seed) = provenance.training_seed {
        log::info!("model {} (training seed {seed})", path.display());
    }
    let dataset = load_dataset(config, Split::Test)?;
    let epsilon = section
        .epsilon
        .unwrap_or_else(|| crate::attack::default_epsilon(section.norm));

    let mut reports = Vec::with_capacity(section.presets.len());
    for preset in &section.presets {
        let eval_config = EvalConfig {
            preset: preset.clone(),
            norm: section.norm,
            epsilon,
            alpha: section.alpha,
            space: section.space,
            post_quantize: section.post_quantize,
            seed: config.seed,
            batch_size: section.batch_size,
            max_samples: section.max_samples,
        };
        let report = robust_accuracy(&net, &transform, &dataset, &eval_config)?;
        println!(
            "{preset:>10}  {}  eps {:.5}  clean {:6.2}%  robust {:6.2}%  ({:.1?})",
            section.norm.name(),
            epsilon,
            report.clean_accuracy * 100.0,
            report.robust_accuracy * 100.0,
            report.duration
        );
        reports.push(report);
    }

    let model_name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    let run = RunReport::new(model_name, reports);
    write_run_outputs(&config.output_dir, &run)?;
    println!("reports written to {}", config.output_dir.display());
    Ok(())
}

/// Merge evaluate reports from several models into one comparison table with
/// the per-row maximum flagged.
pub fn cmd_report(inputs: &[PathBuf], output_dir: &Path) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::config("report.inputs", "need at least one report file"));
    }
    let runs: Vec<RunReport> = inputs
        .iter()
        .map(|p| RunReport::from_json_file(p))
        .collect::<Result<_>>()?;
    let merged = merge_runs(&runs)?;
    print!("{}", crate::report::merged_csv(&merged));
    write_merged_outputs(output_dir, &merged)?;
    println!("comparison written to {}", output_dir.display());
    Ok(())
}

/// Print the topology, transform, and provenance of a model file.
pub fn cmd_inspect_model(path: &Path) -> Result<()> {
    let (net, transform, provenance) = match model_file::load_model::<f32>(path) {
        Ok(loaded) => loaded,
        Err(Error::DtypeMismatch { .. }) => {
            let (net, transform, provenance) = model_file::load_model::<f64>(path)?;
            println!("dtype: f64");
            return print_model(&net, &transform, &provenance);
        }
        Err(e) => return Err(e),
    };
    println!("dtype: f32");
    print_model(&net, &transform, &provenance)
}

fn print_model<E: crate::element::Element>(
    net: &crate::nn::Network<E>,
    transform: &PreprocessTransform<E>,
    provenance: &Provenance,
) -> Result<()> {
    let (c, h, w) = net.input_shape();
    println!("input: {c}x{h}x{w}, {} classes", net.num_classes());
    println!("transform: {}", transform.kind_name());
    let shapes = net.activation_shapes();
    for (i, layer) in net.layers().iter().enumerate() {
        let params: usize = layer.params().iter().map(|p| p.len()).sum();
        let extra = match layer {
            Layer::Conv2d(conv) => format!(
                " {}x{} stride {:?} pad {:?}",
                conv.kernel().0,
                conv.kernel().1,
                conv.stride,
                conv.padding
            ),
            _ => String::new(),
        };
        println!(
            "layer {i:>2}: {:<10}{extra:<28} out {:?}  params {params}",
            layer.name(),
            shapes[i + 1]
        );
    }
    println!("total parameters: {}", net.num_parameters());
    if let Some(seed) = provenance.training_seed {
        println!("training seed: {seed}");
    }
    if let Some(epochs) = provenance.epochs {
        println!("epochs: {epochs}");
    }
    if let Some(note) = &provenance.note {
        println!("note: {note}");
    }
    Ok(())
}
