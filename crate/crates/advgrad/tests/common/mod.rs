//! Shared helpers for the integration suites: a central finite-difference
//! gradient oracle (deliberately built on the forward pass only, never on the
//! reverse-mode code it is checking) and fixture utilities.
#![allow(dead_code)]

use advgrad::element::Element;
use advgrad::nn::{loss, Layer, Network};
use ndarray::{Array4, ArrayD};

/// Mean cross-entropy loss computed through the public forward pass.
pub fn mean_loss<E: Element>(net: &Network<E>, x: &Array4<E>, y: &[usize]) -> f64 {
    let logits = net.forward(x).expect("forward");
    loss::cross_entropy(&logits, y).expect("loss").as_f64()
}

/// Central finite differences of the mean loss with respect to every input
/// coordinate.
pub fn fd_input_gradient(net: &Network<f64>, x: &Array4<f64>, y: &[usize], h: f64) -> Array4<f64> {
    let mut grad = Array4::zeros(x.raw_dim());
    let mut xp = x.clone();
    for idx in 0..x.len() {
        let orig = x.as_slice().unwrap()[idx];
        xp.as_slice_mut().unwrap()[idx] = orig + h;
        let lp = mean_loss(net, &xp, y);
        xp.as_slice_mut().unwrap()[idx] = orig - h;
        let lm = mean_loss(net, &xp, y);
        xp.as_slice_mut().unwrap()[idx] = orig;
        grad.as_slice_mut().unwrap()[idx] = (lp - lm) / (2.0 * h);
    }
    grad
}

/// Central finite differences with respect to every trainable parameter,
/// shaped like `Network::parameter_gradients` output.
pub fn fd_param_gradients(
    net: &Network<f64>,
    x: &Array4<f64>,
    y: &[usize],
    h: f64,
) -> Vec<Vec<ArrayD<f64>>> {
    let mut grads = net.zero_param_grads();
    let num_layers = net.layers().len();
    for li in 0..num_layers {
        let num_tensors = net.layers()[li].params().len();
        for ti in 0..num_tensors {
            let len = net.layers()[li].params()[ti].len();
            for idx in 0..len {
                let mut probe = net.clone();
                let orig = probe.layers()[li].params()[ti].as_slice().unwrap()[idx];
                probe.layers_mut()[li].params_mut()[ti].as_slice_mut().unwrap()[idx] = orig + h;
                let lp = mean_loss(&probe, x, y);
                probe.layers_mut()[li].params_mut()[ti].as_slice_mut().unwrap()[idx] = orig - h;
                let lm = mean_loss(&probe, x, y);
                grads[li][ti].as_slice_mut().unwrap()[idx] = (lp - lm) / (2.0 * h);
            }
        }
    }
    grads
}

/// Relative error with a floor on the denominator, the usual gradient-check
/// metric: tiny gradients are dominated by finite-difference noise, so they
/// are compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| rel_err(x, y)).fold(0.0, f64::max)
}

/// Finite differences are only meaningful where the loss is smooth over the
/// probe interval. Returns false when any ReLU input or max-pool decision
/// sits within `margin` of its kink, in which case the caller should draw a
/// fresh fixture.
pub fn kink_margin_ok(net: &Network<f64>, x: &Array4<f64>, margin: f64) -> bool {
    let acts = net.activations(x).expect("forward");
    for (li, layer) in net.layers().iter().enumerate() {
        match layer {
            Layer::Relu => {
                if acts[li].iter().any(|v| v.abs() < margin) {
                    return false;
                }
            }
            Layer::MaxPool2d(p) => {
                let input = &acts[li];
                let shape = input.shape();
                let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
                let (kh, kw) = p.kernel;
                let (sh, sw) = p.stride;
                let (oh, ow) = ((h - kh) / sh + 1, (w - kw) / sw + 1);
                let data = input.as_slice().unwrap();
                for s in 0..n {
                    for ci in 0..c {
                        let plane = &data[(s * c + ci) * h * w..(s * c + ci + 1) * h * w];
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut vals: Vec<f64> = Vec::with_capacity(kh * kw);
                                for ky in 0..kh {
                                    for kx in 0..kw {
                                        vals.push(plane[(oy * sh + ky) * w + (ox * sw + kx)]);
                                    }
                                }
                                vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
                                if vals.len() > 1 && (vals[0] - vals[1]).abs() < margin {
                                    return false;
                                }
                            }
                        }
                    }
                }
            }
            _ => {}
        }
    }
    true
}

pub fn flatten_params(grads: &[Vec<ArrayD<f64>>]) -> Vec<f64> {
    grads
        .iter()
        .flatten()
        .flat_map(|t| t.iter().copied())
        .collect()
}
