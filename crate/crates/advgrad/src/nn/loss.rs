//! Softmax cross-entropy and its gradient with respect to the logits.

use ndarray::{Array1, Array2};

use crate::element::Element;
use crate::error::{Error, Result};

fn check_labels<E: Element>(logits: &Array2<E>, labels: &[usize]) -> Result<()> {
    let (n, classes) = (logits.nrows(), logits.ncols());
    if labels.len() != n {
        return Err(Error::shape("labels", &[n], &[labels.len()]));
    }
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::LabelOutOfRange { index: i, label: y, num_classes: classes });
        }
    }
    Ok(())
}

/// Row-wise softmax, stabilized by max subtraction so that no intermediate
/// overflows for |logit| up to 1e4 and beyond.
pub fn softmax<E: Element>(logits: &Array2<E>) -> Array2<E> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().copied().fold(E::neg_infinity(), E::max);
        let mut sum = E::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Per-sample negative log-likelihood of the true class.
pub fn per_sample_cross_entropy<E: Element>(
    logits: &Array2<E>,
    labels: &[usize],
) -> Result<Array1<E>> {
    check_labels(logits, labels)?;
    let mut out = Array1::zeros(logits.nrows());
    for (i, row) in logits.rows().into_iter().enumerate() {
        let m = row.iter().copied().fold(E::neg_infinity(), E::max);
        let mut sum = E::zero();
        for &v in row.iter() {
            sum += (v - m).exp();
        }
        // loss = logsumexp(z) - z[y], with the max folded out of both terms.
        out[i] = sum.ln() - (row[labels[i]] - m);
    }
    Ok(out)
}

/// Mean cross-entropy over the batch.
pub fn cross_entropy<E: Element>(logits: &Array2<E>, labels: &[usize]) -> Result<E> {
    if logits.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let per = per_sample_cross_entropy(logits, labels)?;
    let n = E::from_usize(per.len()).unwrap();
    Ok(per.iter().fold(E::zero(), |a, &b| a + b) / n)
}

/// Gradient of the cross-entropy loss with respect to the logits:
/// `softmax - onehot`, divided by the batch size when `mean` is set.
pub(crate) fn logit_gradients<E: Element>(
    logits: &Array2<E>,
    labels: &[usize],
    mean: bool,
) -> Result<Array2<E>> {
    check_labels(logits, labels)?;
    let mut g = softmax(logits);
    let n = E::from_usize(g.nrows()).unwrap();
    for (i, mut row) in g.rows_mut().into_iter().enumerate() {
        row[labels[i]] -= E::one();
        if mean {
            for v in row.iter_mut() {
                *v /= n;
            }
        }
    }
    Ok(g)
}

/// Row-wise arg-max with ties broken toward the lowest index.
pub fn argmax_rows<E: Element>(logits: &Array2<E>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn uniform_logits_give_ln_num_classes() {
        let loss = cross_entropy(&array![[0.0, 0.0]], &[0]).unwrap();
        assert_abs_diff_eq!(loss, std::f64::consts::LN_2, epsilon = 1e-12);
        let loss = cross_entropy(&array![[0.0, 0.0, 0.0, 0.0]], &[3]).unwrap();
        assert_abs_diff_eq!(loss, 4.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn saturated_correct_class_loss_is_near_zero() {
        let loss = cross_entropy(&array![[1000.0, 0.0]], &[0]).unwrap();
        assert!(loss >= 0.0 && loss < 1e-12, "loss = {loss}");
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let loss: f64 = cross_entropy(&array![[1e4, -1e4, 0.0]], &[1]).unwrap();
        assert!(loss.is_finite());
        assert_abs_diff_eq!(loss, 2e4, epsilon = 1e-6);
    }

    #[test]
    fn label_out_of_range_is_an_error() {
        let err = cross_entropy(&array![[0.0, 0.0]], &[2]).unwrap_err();
        assert!(matches!(err, crate::error::Error::LabelOutOfRange { label: 2, .. }));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let s = softmax(&array![[1.0, 2.0, 3.0], [-5.0, 0.0, 5.0], [1e4, 0.0, -1e4]]);
        for row in s.rows() {
            let sum: f64 = row.sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn mean_loss_averages_samples() {
        let logits = array![[0.0, 0.0], [1000.0, 0.0]];
        let per = per_sample_cross_entropy(&logits, &[0, 0]).unwrap();
        let mean = cross_entropy(&logits, &[0, 0]).unwrap();
        assert_abs_diff_eq!(mean, (per[0] + per[1]) / 2.0, epsilon = 1e-12);
    }
}
