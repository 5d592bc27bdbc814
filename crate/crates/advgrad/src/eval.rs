//! The robustness evaluation protocol.
//!
//! Only samples the model classifies correctly on clean inputs are attacked;
//! a sample that is already misclassified counts as an attack success and its
//! clean prediction enters the confusion matrix. Accuracy is reported over
//! the full evaluated set, so robust accuracy can never exceed clean
//! accuracy.

use std::time::{Duration, Instant};

use ndarray::{Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::attack::{lookup_preset, AttackSpace, AttackTarget, Norm, ThreatModel};
use crate::data::Dataset;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::preprocess::{quantize_round_even, PreprocessTransform};

/// One evaluation run: a named attack preset, its threat parameters, and the
/// protocol switches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub preset: String,
    pub norm: Norm,
    pub epsilon: f64,
    /// Step size; defaults to ε for single-step presets and ε/4 otherwise.
    pub alpha: Option<f64>,
    pub space: AttackSpace,
    /// Quantize adversarial images back to the 0–255 grid and re-predict.
    /// Only defined when the attack operates in pixel space.
    pub post_quantize: bool,
    pub seed: u64,
    pub batch_size: usize,
    /// Evaluate only the first `max_samples` samples when set.
    #[serde(default)]
    pub max_samples: Option<usize>,
}

impl EvalConfig {
    pub fn new(preset: impl Into<String>, norm: Norm, epsilon: f64) -> Self {
        Self {
            preset: preset.into(),
            norm,
            epsilon,
            alpha: None,
            space: AttackSpace::InputSpace,
            post_quantize: false,
            seed: 0,
            batch_size: 128,
            max_samples: None,
        }
    }

    pub fn threat_model(&self) -> Result<ThreatModel> {
        let preset = lookup_preset(&self.preset)?;
        preset.threat_model(self.norm, self.epsilon, self.alpha, self.space)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("eval.batch_size", "batch size must be positive"));
        }
        if self.post_quantize && self.space == AttackSpace::NetworkSpace {
            return Err(Error::config(
                "eval.post_quantize",
                "quantization is defined on pixel space only; it is unsupported for network-space attacks",
            ));
        }
        self.threat_model().map(|_| ())
    }
}

/// Result of one evaluation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub clean_accuracy: f64,
    pub robust_accuracy: f64,
    /// `confusion[true][predicted]` on the evaluated samples; predictions are
    /// taken on the adversarial images (clean ones for samples that were
    /// already misclassified).
    pub confusion: Vec<Vec<u64>>,
    pub per_class_robust_accuracy: Vec<Option<f64>>,
    /// Normalized off-diagonal entropy per true class; `null` for classes
    /// without misclassifications. 0 = all errors into one class, 1 = spread
    /// uniformly over the other classes.
    pub misclassification_spread: Vec<Option<f64>>,
    pub num_samples: usize,
    pub num_classes: usize,
    pub config: EvalConfig,
    /// Wall-clock time; excluded from serialization so reports are
    /// byte-identical across reruns.
    #[serde(skip, default)]
    pub duration: Duration,
}

impl EvalReport {
    /// Internal consistency: row sums equal per-class counts (by
    /// construction), trace/total equals robust accuracy, robust never
    /// exceeds clean.
    pub fn check_consistency(&self) -> Result<()> {
        let total: u64 = self.confusion.iter().flatten().sum();
        if total as usize != self.num_samples {
            return Err(Error::config("report.confusion", "matrix total != sample count"));
        }
        let trace: u64 = (0..self.num_classes).map(|i| self.confusion[i][i]).sum();
        let ratio = trace as f64 / total as f64;
        if (ratio - self.robust_accuracy).abs() > 1e-12 {
            return Err(Error::config("report.robust_accuracy", "trace/total mismatch"));
        }
        if self.robust_accuracy > self.clean_accuracy + 1e-12 {
            return Err(Error::config("report.robust_accuracy", "exceeds clean accuracy"));
        }
        Ok(())
    }
}

/// Fraction of samples the model classifies correctly after pre-processing.
pub fn clean_accuracy<E: Element>(
    net: &Network<E>,
    transform: &PreprocessTransform<E>,
    dataset: &Dataset<E>,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let preds = clean_predictions(net, transform, dataset, 256)?;
    let correct = preds.iter().zip(&dataset.labels).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / dataset.len() as f64)
}

fn clean_predictions<E: Element>(
    net: &Network<E>,
    transform: &PreprocessTransform<E>,
    dataset: &Dataset<E>,
    batch_size: usize,
) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(dataset.len());
    let n = dataset.len();
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        let batch = dataset.images.slice(ndarray::s![start..end, .., .., ..]).to_owned();
        preds.extend(net.predict(&transform.apply(&batch)?)?);
        start = end;
    }
    Ok(preds)
}

/// Count matrix `counts[true][pred]`.
pub fn confusion_matrix(
    truths: &[usize],
    predictions: &[usize],
    num_classes: usize,
) -> Result<Vec<Vec<u64>>> {
    if truths.len() != predictions.len() {
        return Err(Error::shape("confusion inputs", &[truths.len()], &[predictions.len()]));
    }
    let mut m = vec![vec![0u64; num_classes]; num_classes];
    for (i, (&t, &p)) in truths.iter().zip(predictions).enumerate() {
        if t >= num_classes {
            return Err(Error::LabelOutOfRange { index: i, label: t, num_classes });
        }
        if p >= num_classes {
            return Err(Error::LabelOutOfRange { index: i, label: p, num_classes });
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Per true class, how spread out its misclassifications are: the entropy of
/// the off-diagonal row distribution normalized by `ln(num_classes - 1)`.
/// `None` for classes with no misclassifications.
pub fn misclassification_spread(confusion: &[Vec<u64>]) -> Vec<Option<f64>> {
    let c = confusion.len();
    confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let errors: u64 = row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).sum();
            if errors == 0 {
                return None;
            }
            if c <= 2 {
                // A single receiving class: maximally concentrated.
                return Some(0.0);
            }
            let mut h = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if j != i && v > 0 {
                    let p = v as f64 / errors as f64;
                    h -= p * p.ln();
                }
            }
            Some(h / ((c - 1) as f64).ln())
        })
        .collect()
}

/// Run the full protocol for one attack preset and produce a report.
pub fn robust_accuracy<E: Element>(
    net: &Network<E>,
    transform: &PreprocessTransform<E>,
    dataset: &Dataset<E>,
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let started = Instant::now();
    let eval_set = match config.max_samples {
        Some(m) => dataset.take(m),
        None => dataset.clone(),
    };
    let n = eval_set.len();
    let num_classes = net.num_classes();
    let preset = lookup_preset(&config.preset)?;
    let tm = config.threat_model()?;

    let clean_preds = clean_predictions(net, transform, &eval_set, config.batch_size)?;
    let clean_correct = clean_preds
        .iter()
        .zip(&eval_set.labels)
        .filter(|(p, t)| p == t)
        .count();

    // Final prediction per sample: clean prediction for initially-wrong
    // samples, adversarial prediction for the attacked ones.
    let mut final_preds = clean_preds.clone();
    let to_attack: Vec<usize> = (0..n).filter(|&i| clean_preds[i] == eval_set.labels[i]).collect();

    let target = AttackTarget::new(net, transform, config.space)?;
    for chunk in to_attack.chunks(config.batch_size) {
        let pixel_batch = eval_set.images.select(Axis(0), chunk);
        let labels: Vec<usize> = chunk.iter().map(|&i| eval_set.labels[i]).collect();
        let ids: Vec<u64> = chunk.iter().map(|&i| i as u64).collect();
        let attack_batch: Array4<E> = match config.space {
            AttackSpace::InputSpace => pixel_batch,
            AttackSpace::NetworkSpace => transform.apply(&pixel_batch)?,
        };
        let result = preset.run(&target, &attack_batch, &labels, &tm, config.seed, Some(&ids))?;
        let preds = if config.post_quantize {
            // Map back to the pixel grid, then through the normal inference
            // path again (pixel space is guaranteed here by validate()).
            let quantized = quantize_round_even(&result.adversarial)?;
            net.predict(&transform.apply(&quantized)?)?
        } else {
            result.predictions
        };
        for (j, &i) in chunk.iter().enumerate() {
            final_preds[i] = preds[j];
        }
    }

    let confusion = confusion_matrix(&eval_set.labels, &final_preds, num_classes)?;
    let robust_correct = final_preds
        .iter()
        .zip(&eval_set.labels)
        .filter(|(p, t)| p == t)
        .count();
    let per_class_robust_accuracy = (0..num_classes)
        .map(|k| {
            let count: u64 = confusion[k].iter().sum();
            if count == 0 {
                None
            } else {
                Some(confusion[k][k] as f64 / count as f64)
            }
        })
        .collect();
    let spread = misclassification_spread(&confusion);

    Ok(EvalReport {
        clean_accuracy: clean_correct as f64 / n as f64,
        robust_accuracy: robust_correct as f64 / n as f64,
        confusion,
        per_class_robust_accuracy,
        misclassification_spread: spread,
        num_samples: n,
        num_classes,
        config: config.clone(),
        duration: started.elapsed(),
    })
}
