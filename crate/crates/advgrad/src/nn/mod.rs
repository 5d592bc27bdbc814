//! Differentiable inference engine for small feed-forward convolutional
//! classifiers: forward pass, cross-entropy loss, and exact reverse-mode
//! gradients with respect to inputs and parameters.
//!
//! Networks are immutable once built; all batch operations process samples
//! independently (parallelized in fixed-size chunks with ordered reductions),
//! so results are bit-identical across batch sizes and worker counts.

pub mod init;
pub mod layers;
pub mod loss;
pub mod random;

use ndarray::parallel::prelude::*;
use ndarray::{Array1, Array2, Array4, ArrayD, Axis, IxDyn};

pub use layers::{BatchNorm, Conv2d, Dense, Layer, Pool2d};

use crate::element::Element;
use crate::error::{Error, Result};
use layers::Scratch;

/// Samples processed sequentially per parallel task. Fixed so that chunk
/// boundaries (and therefore all reduction orders) never depend on the
/// number of workers.
const SAMPLE_CHUNK: usize = 16;

/// Per-layer, per-tensor gradient buffers; indexed like
/// `network.layers[i].params()`.
pub type ParamGrads<E> = Vec<Vec<ArrayD<E>>>;

/// An ordered sequence of layers mapping `(channels, height, width)` images
/// to class logits.
#[derive(Debug, Clone)]
pub struct Network<E: Element> {
    layers: Vec<Layer<E>>,
    input_shape: (usize, usize, usize),
    num_classes: usize,
    /// Per-sample activation shapes; `shapes[0]` is the input, `shapes[i+1]`
    /// the output of layer `i`.
    shapes: Vec<Vec<usize>>,
}

impl<E: Element> Network<E> {
    pub fn new(
        input_shape: (usize, usize, usize),
        num_classes: usize,
        layers: Vec<Layer<E>>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("network.layers", "network must contain at least one layer"));
        }
        if num_classes == 0 {
            return Err(Error::config("network.num_classes", "need at least one class"));
        }
        let mut shapes = vec![vec![input_shape.0, input_shape.1, input_shape.2]];
        for (i, layer) in layers.iter().enumerate() {
            let out = layer.output_shape(shapes.last().unwrap()).map_err(|e| match e {
                Error::ShapeMismatch { context, expected, actual } => Error::ShapeMismatch {
                    context: format!("layer {i} ({context})"),
                    expected,
                    actual,
                },
                other => other,
            })?;
            shapes.push(out);
        }
        let final_shape = shapes.last().unwrap();
        if final_shape != &[num_classes] {
            return Err(Error::shape(
                "network output (expected [num_classes]; end with Flatten/Dense)",
                &[num_classes],
                final_shape,
            ));
        }
        Ok(Self { layers, input_shape, num_classes, shapes })
    }

    pub fn layers(&self) -> &[Layer<E>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<E>] {
        &mut self.layers
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Per-sample activation shapes, input first, logits last.
    pub fn activation_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().flat_map(|l| l.params()).map(|p| p.len()).sum()
    }

    /// Zero-filled gradient buffers matching every trainable tensor.
    pub fn zero_param_grads(&self) -> ParamGrads<E> {
        self.layers.iter().map(|l| l.zero_grads()).collect()
    }

    /// Rebuild the network at a different element precision.
    pub fn convert<F: Element>(&self) -> Network<F> {
        Network {
            layers: self.layers.iter().map(|l| l.convert()).collect(),
            input_shape: self.input_shape,
            num_classes: self.num_classes,
            shapes: self.shapes.clone(),
        }
    }

    fn check_batch(&self, batch: &Array4<E>) -> Result<()> {
        let (c, h, w) = self.input_shape;
        let s = batch.shape();
        if (s[1], s[2], s[3]) != (c, h, w) {
            return Err(Error::shape("input batch", &[s[0], c, h, w], s));
        }
        if !batch.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { layer: 0, what: "input batch", iteration: None });
        }
        Ok(())
    }

    /// Pre-softmax logits, one row per sample.
    pub fn forward(&self, batch: &Array4<E>) -> Result<Array2<E>> {
        let trace = self.forward_trace(batch)?;
        Ok(trace.logits())
    }

    /// Arg-max class per sample; ties break to the lowest class index.
    pub fn predict(&self, batch: &Array4<E>) -> Result<Vec<usize>> {
        Ok(loss::argmax_rows(&self.forward(batch)?))
    }

    /// Every intermediate activation of a forward pass, input batch first,
    /// logits last. Useful for inspecting feature maps.
    pub fn activations(&self, batch: &Array4<E>) -> Result<Vec<ArrayD<E>>> {
        Ok(self.forward_trace(batch)?.acts)
    }

    /// Forward pass keeping every intermediate activation (needed for
    /// reverse-mode differentiation).
    pub(crate) fn forward_trace(&self, batch: &Array4<E>) -> Result<Trace<E>> {
        self.check_batch(batch)?;
        let n = batch.shape()[0];
        let mut acts: Vec<ArrayD<E>> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(batch.to_owned().into_dyn());
        for (li, layer) in self.layers.iter().enumerate() {
            let in_shape = &self.shapes[li];
            let out_shape = &self.shapes[li + 1];
            let mut dims = vec![n];
            dims.extend_from_slice(out_shape);
            let mut out = ArrayD::<E>::zeros(IxDyn(&dims));
            {
                let input = acts.last().unwrap();
                out.axis_chunks_iter_mut(Axis(0), SAMPLE_CHUNK)
                    .into_par_iter()
                    .zip(input.axis_chunks_iter(Axis(0), SAMPLE_CHUNK).into_par_iter())
                    .for_each(|(mut oc, ic)| {
                        let mut scratch = Scratch::default();
                        for j in 0..oc.shape()[0] {
                            let x = ic.index_axis(Axis(0), j);
                            let mut y = oc.index_axis_mut(Axis(0), j);
                            layer.forward_sample(
                                x.as_slice().expect("contiguous activation"),
                                in_shape,
                                y.as_slice_mut().expect("contiguous activation"),
                                out_shape,
                                &mut scratch,
                            );
                        }
                    });
            }
            if !out.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { layer: li, what: "activations", iteration: None });
            }
            acts.push(out);
        }
        Ok(Trace { acts })
    }

    /// Gradient of the mean cross-entropy loss with respect to the input
    /// batch, computed by exact reverse-mode differentiation.
    pub fn input_gradient(&self, batch: &Array4<E>, labels: &[usize]) -> Result<Array4<E>> {
        let trace = self.forward_trace(batch)?;
        let dlogits = loss::logit_gradients(&trace.logits_view(), labels, true)?;
        let (gin, _) = self.backward(&trace, &dlogits, true, false, None)?;
        Ok(gin.expect("input gradient requested"))
    }

    /// Gradients of the mean cross-entropy loss with respect to every
    /// trainable parameter tensor.
    pub fn parameter_gradients(&self, batch: &Array4<E>, labels: &[usize]) -> Result<ParamGrads<E>> {
        Ok(self.loss_and_parameter_gradients(batch, labels)?.1)
    }

    /// Mean loss together with parameter gradients (one fused pass; used by
    /// the training loop).
    pub fn loss_and_parameter_gradients(
        &self,
        batch: &Array4<E>,
        labels: &[usize],
    ) -> Result<(E, ParamGrads<E>)> {
        let trace = self.forward_trace(batch)?;
        let logits = trace.logits_view();
        let loss = loss::cross_entropy(&logits, labels)?;
        let dlogits = loss::logit_gradients(&logits, labels, true)?;
        let (_, grads) = self.backward(&trace, &dlogits, false, true, None)?;
        Ok((loss, grads.expect("parameter gradients requested")))
    }

    /// Per-sample losses and the gradient of each sample's own loss with
    /// respect to that sample. This is the quantity attacks consume: scaling
    /// by the batch size is already undone.
    pub fn sample_losses_and_input_gradients(
        &self,
        batch: &Array4<E>,
        labels: &[usize],
        iteration: Option<usize>,
    ) -> Result<(Array1<E>, Array4<E>)> {
        let trace = self.forward_trace(batch).map_err(|e| tag_iteration(e, iteration))?;
        let logits = trace.logits_view();
        let losses = loss::per_sample_cross_entropy(&logits, labels)?;
        let dlogits = loss::logit_gradients(&logits, labels, false)?;
        let (gin, _) = self
            .backward(&trace, &dlogits, true, false, iteration)
            .map_err(|e| tag_iteration(e, iteration))?;
        Ok((losses, gin.expect("input gradient requested")))
    }

    /// Reverse-mode sweep from `dlogits` (one row per sample).
    ///
    /// Parameter gradients are accumulated per fixed-size chunk and reduced
    /// in chunk order, so the result does not depend on the worker count.
    fn backward(
        &self,
        trace: &Trace<E>,
        dlogits: &Array2<E>,
        want_input: bool,
        want_params: bool,
        iteration: Option<usize>,
    ) -> Result<(Option<Array4<E>>, Option<ParamGrads<E>>)> {
        let n = trace.acts[0].shape()[0];
        debug_assert_eq!(dlogits.shape(), [n, self.num_classes]);
        let num_layers = self.layers.len();
        let max_len = self.shapes.iter().map(|s| s.iter().product::<usize>()).max().unwrap();

        let mut input_grad = ArrayD::<E>::zeros(IxDyn(trace.acts[0].shape()));
        let chunk_accs: Result<Vec<Option<ParamGrads<E>>>> = input_grad
            .axis_chunks_iter_mut(Axis(0), SAMPLE_CHUNK)
            .into_par_iter()
            .enumerate()
            .map(|(ci, mut gin_chunk)| {
                let mut acc = if want_params { Some(self.zero_param_grads()) } else { None };
                let mut scratch = Scratch::default();
                let mut cur = vec![E::zero(); max_len];
                let mut next = vec![E::zero(); max_len];
                for j in 0..gin_chunk.shape()[0] {
                    let i = ci * SAMPLE_CHUNK + j;
                    let out_len = self.num_classes;
                    cur[..out_len].copy_from_slice(dlogits.row(i).as_slice().expect("contiguous"));
                    for li in (0..num_layers).rev() {
                        let in_shape = &self.shapes[li];
                        let out_shape = &self.shapes[li + 1];
                        let in_len: usize = in_shape.iter().product();
                        let out_len: usize = out_shape.iter().product();
                        let input = trace.acts[li].index_axis(Axis(0), i);
                        let input = input.as_slice().expect("contiguous activation");
                        let layer_grads =
                            acc.as_mut().map(|a| a[li].as_mut_slice());
                        if li == 0 {
                            let gin = if want_input {
                                let mut row = gin_chunk.index_axis_mut(Axis(0), j);
                                let slice = row.as_slice_mut().expect("contiguous gradient");
                                self.layers[li].backward_sample(
                                    input,
                                    in_shape,
                                    &cur[..out_len],
                                    out_shape,
                                    Some(slice),
                                    layer_grads,
                                    &mut scratch,
                                );
                                Some(row)
                            } else {
                                self.layers[li].backward_sample(
                                    input,
                                    in_shape,
                                    &cur[..out_len],
                                    out_shape,
                                    None,
                                    layer_grads,
                                    &mut scratch,
                                );
                                None
                            };
                            if let Some(row) = gin {
                                if !row.iter().all(|v| v.is_finite()) {
                                    return Err(Error::NonFinite {
                                        layer: li,
                                        what: "gradients",
                                        iteration,
                                    });
                                }
                            }
                        } else {
                            self.layers[li].backward_sample(
                                input,
                                in_shape,
                                &cur[..out_len],
                                out_shape,
                                Some(&mut next[..in_len]),
                                layer_grads,
                                &mut scratch,
                            );
                            if !next[..in_len].iter().all(|v| v.is_finite()) {
                                return Err(Error::NonFinite {
                                    layer: li,
                                    what: "gradients",
                                    iteration,
                                });
                            }
                            std::mem::swap(&mut cur, &mut next);
                        }
                    }
                }
                Ok(acc)
            })
            .collect();

        let param_grads = if want_params {
            let mut total = self.zero_param_grads();
            for acc in chunk_accs?.into_iter().flatten() {
                for (t, a) in total.iter_mut().flatten().zip(acc.into_iter().flatten()) {
                    *t += &a;
                }
            }
            Some(total)
        } else {
            chunk_accs?;
            None
        };

        let input_grad = if want_input {
            Some(
                input_grad
                    .into_dimensionality::<ndarray::Ix4>()
                    .expect("input batch is rank 4"),
            )
        } else {
            None
        };
        Ok((input_grad, param_grads))
    }
}

fn tag_iteration(e: Error, iteration: Option<usize>) -> Error {
    match (e, iteration) {
        (Error::NonFinite { layer, what, iteration: None }, Some(_)) => {
            Error::NonFinite { layer, what, iteration }
        }
        (e, _) => e,
    }
}

/// All activations of one forward pass, input first, logits last.
pub(crate) struct Trace<E: Element> {
    pub acts: Vec<ArrayD<E>>,
}

impl<E: Element> Trace<E> {
    pub fn logits(&self) -> Array2<E> {
        self.logits_view().to_owned()
    }

    pub fn logits_view(&self) -> Array2<E> {
        self.acts
            .last()
            .unwrap()
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("logits are rank 2")
            .to_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, IxDyn};

    fn dense_layer(w: Vec<Vec<f64>>, b: Vec<f64>) -> Layer<f64> {
        let rows = w.len();
        let cols = w[0].len();
        let flat: Vec<f64> = w.into_iter().flatten().collect();
        Layer::Dense(
            Dense::new(
                ArrayD::from_shape_vec(IxDyn(&[rows, cols]), flat).unwrap(),
                ArrayD::from_shape_vec(IxDyn(&[rows]), b).unwrap(),
            )
            .unwrap(),
        )
    }

    fn vector_input(values: &[f64]) -> (Network<f64>, Array4<f64>) {
        // (c,1,1) input shape so 1-D toy examples run through the rank-4 API.
        let net = Network::new(
            (values.len(), 1, 1),
            values.len(),
            vec![
                Layer::Flatten,
                dense_layer(
                    (0..values.len())
                        .map(|i| (0..values.len()).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                        .collect(),
                    vec![0.0; values.len()],
                ),
            ],
        )
        .unwrap();
        let batch = Array4::from_shape_vec((1, values.len(), 1, 1), values.to_vec()).unwrap();
        (net, batch)
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let (net, batch) = vector_input(&[0.3, 0.7]);
        let logits = net.forward(&batch).unwrap();
        assert_eq!(logits, array![[0.3, 0.7]]);
    }

    #[test]
    fn predict_argmax_and_tie_break() {
        let (net, batch) = vector_input(&[0.3, 0.7]);
        assert_eq!(net.predict(&batch).unwrap(), vec![1]);
        let (net, batch) = vector_input(&[0.5, 0.5]);
        assert_eq!(net.predict(&batch).unwrap(), vec![0]);
    }

    #[test]
    fn predict_batch_is_elementwise() {
        let net = Network::new(
            (3, 1, 1),
            3,
            vec![Layer::Flatten, dense_layer(
                vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
                vec![0.0; 3],
            )],
        )
        .unwrap();
        let batch = Array4::from_shape_vec(
            (3, 3, 1, 1),
            vec![0.9, 0.1, 0.0, 0.0, 0.2, 0.1, 0.1, 0.2, 0.9],
        )
        .unwrap();
        assert_eq!(net.predict(&batch).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn shape_mismatch_names_offending_layer() {
        let err = Network::new(
            (2, 1, 1),
            2,
            vec![Layer::Flatten, dense_layer(vec![vec![1.0, 0.0, 0.0]], vec![0.0])],
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("layer 1"), "{msg}");
    }

    #[test]
    fn zero_weight_network_has_zero_input_gradient() {
        let net = Network::new(
            (4, 1, 1),
            3,
            vec![Layer::Flatten, dense_layer(vec![vec![0.0; 4]; 3], vec![0.0; 3])],
        )
        .unwrap();
        let batch = Array4::from_shape_vec((2, 4, 1, 1), vec![0.3; 8]).unwrap();
        let g = net.input_gradient(&batch, &[0, 2]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dense_bias_gradient_is_softmax_minus_onehot() {
        let net = Network::new(
            (2, 1, 1),
            2,
            vec![Layer::Flatten, dense_layer(vec![vec![0.0; 2]; 2], vec![0.0; 2])],
        )
        .unwrap();
        let batch = Array4::from_shape_vec((1, 2, 1, 1), vec![0.4, 0.6]).unwrap();
        let grads = net.parameter_gradients(&batch, &[0]).unwrap();
        let bias_grad = &grads[1][1];
        assert_abs_diff_eq!(bias_grad[[0]], -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(bias_grad[[1]], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let (net, mut batch) = vector_input(&[0.3, 0.7]);
        batch[[0, 0, 0, 0]] = f64::NAN;
        assert!(matches!(
            net.forward(&batch).unwrap_err(),
            Error::NonFinite { what: "input batch", .. }
        ));
    }

    #[test]
    fn permuting_batch_permutes_outputs_and_gradients() {
        let mut rng = crate::nn::random::test_rng(7);
        let net = crate::nn::random::random_network::<f64>(&mut rng, 2, 5, 5, 3);
        let x = crate::nn::random::random_batch(&mut rng, &net, 4);
        let y = vec![0usize, 2, 1, 0];

        let logits = net.forward(&x).unwrap();
        let grads = net.input_gradient(&x, &y).unwrap();

        // Reverse the batch.
        let xr = {
            let mut v = x.clone();
            for i in 0..4 {
                v.index_axis_mut(Axis(0), i).assign(&x.index_axis(Axis(0), 3 - i));
            }
            v
        };
        let yr: Vec<usize> = y.iter().rev().copied().collect();
        let logits_r = net.forward(&xr).unwrap();
        let grads_r = net.input_gradient(&xr, &yr).unwrap();
        for i in 0..4 {
            assert_eq!(
                logits.index_axis(Axis(0), i),
                logits_r.index_axis(Axis(0), 3 - i)
            );
            assert_eq!(
                grads.index_axis(Axis(0), i),
                grads_r.index_axis(Axis(0), 3 - i)
            );
        }
    }

    #[test]
    fn forward_is_deterministic_and_batch_size_independent() {
        let mut rng = crate::nn::random::test_rng(11);
        let net = crate::nn::random::random_network::<f64>(&mut rng, 3, 6, 6, 4);
        let x = crate::nn::random::random_batch(&mut rng, &net, 33);
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(a, b);
        // Same rows when processed one sample at a time.
        for i in 0..5 {
            let xi = x.slice(ndarray::s![i..i + 1, .., .., ..]).to_owned();
            let li = net.forward(&xi).unwrap();
            assert_eq!(li.row(0), a.row(i));
        }
    }
}
