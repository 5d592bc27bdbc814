//! Model-specific input transforms applied before the first layer, their
//! analytic effect on perturbation magnitudes, and integer re-quantization.
//!
//! All transforms are affine, so a perturbation added in pixel space arrives
//! at the first layer scaled by a per-channel factor
//! ([`PreprocessTransform::amplification_factor`]): standardizing transforms
//! with per-channel std below one make the network see perturbations larger
//! than the pixel-space budget.

use ndarray::{Array1, Array3, Array4, Axis};

use crate::element::Element;
use crate::error::{Error, Result};

/// Input normalization applied between the `[0,1]` pixel batch and the first
/// network layer.
#[derive(Debug, Clone)]
pub enum PreprocessTransform<E: Element> {
    /// Pixels are fed to the network unchanged.
    Identity,
    /// Subtract a per-location-and-channel mean image, shape `(c, h, w)`.
    MeanPixelSubtract { mean: Array3<E> },
    /// Standardize each channel with pre-calculated statistics, shapes `(c)`.
    PerChannelNormalize { mean: Array1<E>, std: Array1<E> },
}

impl<E: Element> PreprocessTransform<E> {
    pub fn mean_pixel_subtract(mean: Array3<E>) -> Result<Self> {
        if !mean.iter().all(|v| v.is_finite()) {
            return Err(Error::config("transform.mean", "mean must be finite"));
        }
        Ok(Self::MeanPixelSubtract { mean })
    }

    pub fn per_channel_normalize(mean: Array1<E>, std: Array1<E>) -> Result<Self> {
        if std.len() != mean.len() {
            return Err(Error::shape("transform std", &[mean.len()], std.shape()));
        }
        if !mean.iter().all(|v| v.is_finite()) || !std.iter().all(|v| v.is_finite()) {
            return Err(Error::config("transform", "statistics must be finite"));
        }
        if std.iter().any(|&s| s <= E::zero()) {
            return Err(Error::config("transform.std", "std entries must be strictly positive"));
        }
        Ok(Self::PerChannelNormalize { mean, std })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::MeanPixelSubtract { .. } => "mean-pixel-subtract",
            Self::PerChannelNormalize { .. } => "per-channel-normalize",
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Self::Identity)
    }

    fn check_shape(&self, shape: &[usize]) -> Result<()> {
        match self {
            Self::Identity => Ok(()),
            Self::MeanPixelSubtract { mean } => {
                if mean.shape() != &shape[1..] {
                    return Err(Error::shape("transform mean", mean.shape(), shape));
                }
                Ok(())
            }
            Self::PerChannelNormalize { mean, .. } => {
                if mean.len() != shape[1] {
                    return Err(Error::shape("transform mean", &[mean.len()], &shape[1..2]));
                }
                Ok(())
            }
        }
    }

    /// Map a pixel-space batch into the space the first layer expects.
    pub fn apply(&self, x: &Array4<E>) -> Result<Array4<E>> {
        self.check_shape(x.shape())?;
        match self {
            Self::Identity => Ok(x.clone()),
            Self::MeanPixelSubtract { mean } => Ok(x - &mean.view().insert_axis(Axis(0))),
            Self::PerChannelNormalize { mean, std } => {
                let c = mean.len();
                let m = mean.view().into_shape_with_order((1, c, 1, 1)).expect("1-d mean");
                let s = std.view().into_shape_with_order((1, c, 1, 1)).expect("1-d std");
                Ok((x - &m) / &s)
            }
        }
    }

    /// Map a network-space batch back to pixel space. Inverse of
    /// [`apply`](Self::apply) up to one rounding per element.
    pub fn invert(&self, z: &Array4<E>) -> Result<Array4<E>> {
        self.check_shape(z.shape())?;
        match self {
            Self::Identity => Ok(z.clone()),
            Self::MeanPixelSubtract { mean } => Ok(z + &mean.view().insert_axis(Axis(0))),
            Self::PerChannelNormalize { mean, std } => {
                let c = mean.len();
                let m = mean.view().into_shape_with_order((1, c, 1, 1)).expect("1-d mean");
                let s = std.view().into_shape_with_order((1, c, 1, 1)).expect("1-d std");
                Ok(z * &s + &m)
            }
        }
    }

    /// Per-channel factor by which [`apply`](Self::apply) scales an additive
    /// pixel-space perturbation: `apply(x + d) - apply(x) = factor * d`
    /// channel-wise, identically, because every transform is affine.
    pub fn amplification_factor(&self, channels: usize) -> Result<Array1<E>> {
        match self {
            Self::Identity => Ok(Array1::from_elem(channels, E::one())),
            Self::MeanPixelSubtract { mean } => {
                if mean.shape()[0] != channels {
                    return Err(Error::shape("transform mean", &[channels], mean.shape()));
                }
                Ok(Array1::from_elem(channels, E::one()))
            }
            Self::PerChannelNormalize { std, .. } => {
                if std.len() != channels {
                    return Err(Error::shape("transform std", &[channels], std.shape()));
                }
                Ok(std.mapv(|s| E::one() / s))
            }
        }
    }

    /// Element-wise image of the valid pixel box `[0,1]` under this
    /// transform; attacks in network space clip to it.
    pub fn valid_box(&self, shape: (usize, usize, usize)) -> Result<(Array3<E>, Array3<E>)> {
        let (c, h, w) = shape;
        let zeros = Array4::zeros((1, c, h, w));
        let ones = Array4::from_elem((1, c, h, w), E::one());
        let lo = self.apply(&zeros)?.index_axis_move(Axis(0), 0);
        let hi = self.apply(&ones)?.index_axis_move(Axis(0), 0);
        Ok((lo, hi))
    }

    pub fn convert<F: Element>(&self) -> PreprocessTransform<F> {
        let cast1 = |t: &Array1<E>| t.mapv(|v| F::of(v.as_f64()));
        match self {
            Self::Identity => PreprocessTransform::Identity,
            Self::MeanPixelSubtract { mean } => PreprocessTransform::MeanPixelSubtract {
                mean: mean.mapv(|v| F::of(v.as_f64())),
            },
            Self::PerChannelNormalize { mean, std } => PreprocessTransform::PerChannelNormalize {
                mean: cast1(mean),
                std: cast1(std),
            },
        }
    }
}

/// Snap pixels back to the 256-level integer grid: `v -> round(v * 255) / 255`
/// with exact ties resolved to the nearest even integer. Defined only on the
/// valid pixel range.
pub fn quantize_round_even<E: Element>(x: &Array4<E>) -> Result<Array4<E>> {
    for (index, &v) in x.iter().enumerate() {
        if !(v >= E::zero() && v <= E::one()) {
            return Err(Error::PixelOutOfRange { index, value: v.as_f64() });
        }
    }
    // The product is exact in f64 (at most 32 significant bits), so ties are
    // detected exactly and the tie-to-even rule is bit-reliable.
    Ok(x.mapv(|v| E::of((v.as_f64() * 255.0).round_ties_even() / 255.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_batch<E: Element>(v: f64) -> Array4<E> {
        Array4::from_elem((1, 1, 1, 1), E::of(v))
    }

    fn rgb_transform(std: f64) -> PreprocessTransform<f64> {
        PreprocessTransform::per_channel_normalize(
            Array1::from_elem(3, 0.5),
            Array1::from_elem(3, std),
        )
        .unwrap()
    }

    #[test]
    fn identity_is_identity() {
        let t = PreprocessTransform::<f64>::Identity;
        let x = scalar_batch(0.5);
        assert_eq!(t.apply(&x).unwrap(), x);
        assert_eq!(t.invert(&t.apply(&x).unwrap()).unwrap(), x);
    }

    #[test]
    fn mean_pixel_subtract_shifts() {
        let t = PreprocessTransform::mean_pixel_subtract(Array3::from_elem((1, 1, 1), 0.4)).unwrap();
        let z = t.apply(&scalar_batch::<f64>(0.5)).unwrap();
        assert_abs_diff_eq!(z[[0, 0, 0, 0]], 0.1, epsilon = 1e-12);
        let x = t.invert(&scalar_batch::<f64>(0.1)).unwrap();
        assert_abs_diff_eq!(x[[0, 0, 0, 0]], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn per_channel_normalize_standardizes() {
        let t = PreprocessTransform::per_channel_normalize(
            Array1::from_elem(1, 0.5f64),
            Array1::from_elem(1, 0.25),
        )
        .unwrap();
        let z = t.apply(&scalar_batch(0.75)).unwrap();
        assert_eq!(z[[0, 0, 0, 0]], 1.0);
        let x = t.invert(&scalar_batch(1.0)).unwrap();
        assert_eq!(x[[0, 0, 0, 0]], 0.75);
    }

    #[test]
    fn amplification_factors() {
        assert_eq!(
            rgb_transform(0.25).amplification_factor(3).unwrap(),
            Array1::from_elem(3, 4.0)
        );
        assert_eq!(
            PreprocessTransform::<f64>::Identity.amplification_factor(3).unwrap(),
            Array1::from_elem(3, 1.0)
        );
        let mps =
            PreprocessTransform::mean_pixel_subtract(Array3::<f64>::zeros((3, 2, 2))).unwrap();
        assert_eq!(mps.amplification_factor(3).unwrap(), Array1::from_elem(3, 1.0));
    }

    #[test]
    fn std_must_be_positive() {
        let r = PreprocessTransform::per_channel_normalize(
            Array1::from_elem(1, 0.5f32),
            Array1::from_elem(1, 0.0),
        );
        assert!(r.is_err());
    }

    #[test]
    fn affinity_holds_for_all_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mean3 = Array3::from_shape_fn((2, 3, 3), |_| rng.random::<f64>());
        let transforms = vec![
            PreprocessTransform::Identity,
            PreprocessTransform::mean_pixel_subtract(mean3).unwrap(),
            PreprocessTransform::per_channel_normalize(
                Array1::from_shape_fn(2, |_| rng.random::<f64>()),
                Array1::from_shape_fn(2, |_| 0.1 + rng.random::<f64>()),
            )
            .unwrap(),
        ];
        for t in &transforms {
            let factor = t.amplification_factor(2).unwrap();
            for _ in 0..20 {
                let x = Array4::from_shape_fn((2, 2, 3, 3), |_| rng.random::<f64>());
                let d = Array4::from_shape_fn((2, 2, 3, 3), |_| rng.random::<f64>() * 0.1 - 0.05);
                let lhs = t.apply(&(&x + &d)).unwrap() - t.apply(&x).unwrap();
                for ((_, c, _, _), (l, dv)) in
                    lhs.indexed_iter().map(|(i, &l)| (i, (l, d[i])))
                {
                    assert_abs_diff_eq!(l, factor[c] * dv, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn invert_apply_round_trip_within_one_unit_ulp() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = PreprocessTransform::per_channel_normalize(
            Array1::from_shape_fn(3, |_| rng.random::<f32>()),
            Array1::from_shape_fn(3, |_| 0.1f32 + rng.random::<f32>()),
        )
        .unwrap();
        for _ in 0..50 {
            let x = Array4::from_shape_fn((1, 3, 4, 4), |_| rng.random::<f32>());
            let r = t.invert(&t.apply(&x).unwrap()).unwrap();
            for (&a, &b) in x.iter().zip(r.iter()) {
                assert!((a - b).abs() <= f32::EPSILON * a.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn quantize_tie_goes_to_even() {
        let q = quantize_round_even(&scalar_batch::<f64>(0.5)).unwrap();
        assert_eq!(q[[0, 0, 0, 0]], 128.0 / 255.0);
    }

    #[test]
    fn quantize_endpoints_are_fixed() {
        assert_eq!(
            quantize_round_even(&scalar_batch::<f32>(0.0)).unwrap()[[0, 0, 0, 0]],
            0.0
        );
        assert_eq!(
            quantize_round_even(&scalar_batch::<f32>(1.0)).unwrap()[[0, 0, 0, 0]],
            1.0
        );
    }

    #[test]
    fn quantize_ordinary_nearest() {
        let q = quantize_round_even(&scalar_batch::<f64>(100.4 / 255.0)).unwrap();
        assert_eq!(q[[0, 0, 0, 0]], 100.0 / 255.0);
    }

    #[test]
    fn quantize_rejects_out_of_range() {
        assert!(quantize_round_even(&scalar_batch::<f64>(1.5)).is_err());
        assert!(quantize_round_even(&scalar_batch::<f64>(-0.1)).is_err());
    }

    #[test]
    fn quantize_idempotent_and_close() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x = Array4::from_shape_fn((4, 3, 8, 8), |_| rng.random::<f32>());
        let q1 = quantize_round_even(&x).unwrap();
        let q2 = quantize_round_even(&q1).unwrap();
        assert_eq!(q1, q2);
        for (&a, &b) in x.iter().zip(q1.iter()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
            assert!((0.0..=1.0).contains(&b));
        }
    }

    #[test]
    fn quantized_pair_norm_non_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        for _ in 0..50 {
            let x = Array4::from_shape_fn((1, 2, 5, 5), |_| rng.random::<f32>());
            let d = Array4::from_shape_fn((1, 2, 5, 5), |_| {
                (rng.random::<f32>() - 0.5) * 16.0 / 255.0
            });
            let xp = (&x + &d).mapv(|v| v.clamp(0.0, 1.0));
            let qx = quantize_round_even(&x).unwrap();
            let qp = quantize_round_even(&xp).unwrap();
            let linf_d = d.iter().fold(0.0f32, |a, &v| a.max(v.abs()));
            let linf_q = qx
                .iter()
                .zip(qp.iter())
                .fold(0.0f32, |a, (&u, &v)| a.max((u - v).abs()));
            assert!(linf_q <= linf_d + 1.0 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn valid_box_is_transform_image_of_unit_box() {
        let t = rgb_transform(0.25);
        let (lo, hi) = t.valid_box((3, 2, 2)).unwrap();
        assert_eq!(lo[[0, 0, 0]], (0.0 - 0.5) / 0.25);
        assert_eq!(hi[[0, 0, 0]], (1.0 - 0.5) / 0.25);
        let id = PreprocessTransform::<f32>::Identity;
        let (lo, hi) = id.valid_box((3, 2, 2)).unwrap();
        assert_eq!(lo[[1, 1, 1]], 0.0);
        assert_eq!(hi[[1, 1, 1]], 1.0);
    }
}
