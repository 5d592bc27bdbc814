//! White-box untargeted attacks under L∞ and L2 budgets.
//!
//! All attacks share one iterate driver: a gradient step per the norm,
//! projection of the accumulated perturbation onto the ε-ball, then a clip to
//! the valid data range. The single-step attacks are literally one iteration
//! with step size ε, so the definitional collapses (FGSM ≡ one-step BIM,
//! zero-init PGD ≡ BIM) hold bit-exactly by construction.
//!
//! Every attack is a pure function of `(model, transform, x, y, threat
//! model, seed)`; randomness is derived per `(seed, sample id, restart)`, so
//! results never depend on batching or worker count.

pub mod presets;

use ndarray::{Array1, Array4, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::element::{sign, Element};
use crate::error::{Error, Result};
use crate::nn::{loss, Network};
use crate::preprocess::PreprocessTransform;

pub use presets::{default_epsilon, lookup_preset, preset_names, AttackPreset};

/// Perturbation norm of the threat model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    Linf,
    L2,
}

impl Norm {
    pub fn name(self) -> &'static str {
        match self {
            Norm::Linf => "linf",
            Norm::L2 => "l2",
        }
    }
}

/// Where the perturbation budget is measured: on `[0,1]` pixels with the
/// model-specific transform applied inside the model call, or directly on the
/// representation the first layer consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackSpace {
    #[serde(rename = "input")]
    InputSpace,
    #[serde(rename = "network")]
    NetworkSpace,
}

/// The attacker's constraint set and iteration schedule.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct ThreatModel {
    pub norm: Norm,
    pub epsilon: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub space: AttackSpace,
}

impl ThreatModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::config("threat.epsilon", "epsilon must be finite and >= 0"));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::config("threat.alpha", "alpha must be finite and >= 0"));
        }
        if self.iterations == 0 {
            return Err(Error::config("threat.iterations", "need at least one iteration"));
        }
        if self.iterations > 1 && self.alpha > self.epsilon {
            log::warn!(
                "step size {} exceeds budget {}; iterative steps will be clipped hard",
                self.alpha,
                self.epsilon
            );
        }
        Ok(())
    }
}

/// Output of one attack over a batch.
#[derive(Debug, Clone)]
pub struct AttackResult<E: Element> {
    /// Final iterate, inside the valid data range of the attack space.
    pub adversarial: Array4<E>,
    /// Per sample: does the model now predict something other than the label?
    pub success: Vec<bool>,
    /// Predicted class at the final iterate.
    pub predictions: Vec<usize>,
    /// Per-sample cross-entropy loss at the final iterate.
    pub loss: Array1<E>,
    /// Per-sample perturbation norm under the threat model's norm.
    pub perturbation_norm: Array1<E>,
}

/// A model as the attacker sees it: network, pre-processing, and the space
/// the perturbation lives in.
///
/// In [`AttackSpace::InputSpace`] the attack operates on `[0,1]` pixels and
/// the transform is applied inside every model call; gradients flow through
/// the (affine) transform via its amplification factor. In
/// [`AttackSpace::NetworkSpace`] the iterates live in the transform's image
/// and the network is called directly.
pub struct AttackTarget<'a, E: Element> {
    network: &'a Network<E>,
    transform: &'a PreprocessTransform<E>,
    space: AttackSpace,
    lo: Array4<E>,
    hi: Array4<E>,
    amplification: Array4<E>,
}

impl<'a, E: Element> AttackTarget<'a, E> {
    pub fn new(
        network: &'a Network<E>,
        transform: &'a PreprocessTransform<E>,
        space: AttackSpace,
    ) -> Result<Self> {
        let shape = network.input_shape();
        let (lo, hi) = match space {
            AttackSpace::InputSpace => (
                ndarray::Array3::zeros((shape.0, shape.1, shape.2)),
                ndarray::Array3::from_elem((shape.0, shape.1, shape.2), E::one()),
            ),
            AttackSpace::NetworkSpace => transform.valid_box(shape)?,
        };
        let amplification = transform
            .amplification_factor(shape.0)?
            .into_shape_with_order((1, shape.0, 1, 1))
            .expect("per-channel factor");
        Ok(Self {
            network,
            transform,
            space,
            lo: lo.insert_axis(Axis(0)),
            hi: hi.insert_axis(Axis(0)),
            amplification,
        })
    }

    pub fn space(&self) -> AttackSpace {
        self.space
    }

    pub fn network(&self) -> &Network<E> {
        self.network
    }

    pub fn transform(&self) -> &PreprocessTransform<E> {
        self.transform
    }

    /// Lower/upper bounds of the valid data range, broadcastable over the batch.
    pub fn valid_range(&self) -> (&Array4<E>, &Array4<E>) {
        (&self.lo, &self.hi)
    }

    /// Clamp a batch into the valid data range, element-wise.
    pub fn clip_valid(&self, x: &mut Array4<E>) {
        Zip::from(x)
            .and_broadcast(&self.lo)
            .and_broadcast(&self.hi)
            .for_each(|v, &l, &h| {
                if *v < l {
                    *v = l;
                } else if *v > h {
                    *v = h;
                }
            });
    }

    /// Model call in attack space: logits of the (possibly transformed) batch.
    pub fn forward(&self, x: &Array4<E>) -> Result<ndarray::Array2<E>> {
        match self.space {
            AttackSpace::InputSpace => self.network.forward(&self.transform.apply(x)?),
            AttackSpace::NetworkSpace => self.network.forward(x),
        }
    }

    pub fn predict(&self, x: &Array4<E>) -> Result<Vec<usize>> {
        Ok(loss::argmax_rows(&self.forward(x)?))
    }

    /// Per-sample losses and per-sample loss gradients at `x`, in attack space.
    fn losses_and_grads(
        &self,
        x: &Array4<E>,
        y: &[usize],
        iteration: Option<usize>,
    ) -> Result<(Array1<E>, Array4<E>)> {
        match self.space {
            AttackSpace::NetworkSpace => {
                self.network.sample_losses_and_input_gradients(x, y, iteration)
            }
            AttackSpace::InputSpace => {
                let z = self.transform.apply(x)?;
                let (losses, gz) =
                    self.network.sample_losses_and_input_gradients(&z, y, iteration)?;
                // Chain rule through the affine transform: per-channel scale.
                let gx = &gz * &self.amplification;
                Ok((losses, gx))
            }
        }
    }

    fn losses_and_predictions(
        &self,
        x: &Array4<E>,
        y: &[usize],
    ) -> Result<(Array1<E>, Vec<usize>)> {
        let logits = self.forward(x)?;
        let losses = loss::per_sample_cross_entropy(&logits, y)?;
        Ok((losses, loss::argmax_rows(&logits)))
    }
}

/// Per-coordinate clamp of a perturbation to `[-epsilon, epsilon]`.
pub fn clip_linf<E: Element>(delta: &Array4<E>, epsilon: E) -> Array4<E> {
    let mut out = delta.clone();
    clip_linf_mut(&mut out, epsilon);
    out
}

fn clip_linf_mut<E: Element>(delta: &mut Array4<E>, epsilon: E) {
    delta.mapv_inplace(|v| {
        if v > epsilon {
            epsilon
        } else if v < -epsilon {
            -epsilon
        } else {
            v
        }
    });
}

/// Per-sample projection onto the L2 ball of radius `epsilon`: inside the
/// ball the perturbation is untouched, outside it is radially rescaled.
pub fn project_l2<E: Element>(delta: &Array4<E>, epsilon: E) -> Array4<E> {
    let mut out = delta.clone();
    project_l2_mut(&mut out, epsilon);
    out
}

fn project_l2_mut<E: Element>(delta: &mut Array4<E>, epsilon: E) {
    for mut row in delta.axis_iter_mut(Axis(0)) {
        let norm = row.iter().fold(E::zero(), |a, &v| a + v * v).sqrt();
        if norm > epsilon {
            let scale = epsilon / norm;
            row.mapv_inplace(|v| v * scale);
        }
    }
}

fn sample_l2_norms<E: Element>(delta: &Array4<E>) -> Array1<E> {
    Array1::from_iter(
        delta
            .axis_iter(Axis(0))
            .map(|row| row.iter().fold(E::zero(), |a, &v| a + v * v).sqrt()),
    )
}

fn sample_linf_norms<E: Element>(delta: &Array4<E>) -> Array1<E> {
    Array1::from_iter(
        delta
            .axis_iter(Axis(0))
            .map(|row| row.iter().fold(E::zero(), |a, &v| a.max(v.abs()))),
    )
}

/// Per-sample perturbation norms under the given norm.
pub fn perturbation_norms<E: Element>(delta: &Array4<E>, norm: Norm) -> Array1<E> {
    match norm {
        Norm::Linf => sample_linf_norms(delta),
        Norm::L2 => sample_l2_norms(delta),
    }
}

/// Initialization of the first iterate.
pub enum PgdInit<'a, E: Element> {
    /// Independent per-sample draw inside the ε-ball, derived from
    /// `(seed, sample id, restart)`.
    Random { seed: u64, restart: u32 },
    /// Explicit perturbation (used by tests and the restart wrapper's
    /// degenerate cases).
    Delta(&'a Array4<E>),
}

/// RNG for one sample of one restart. The full 32-byte ChaCha seed keeps the
/// three components in separate words, so distinct tuples can never collide.
fn derive_rng(seed: u64, sample_id: u64, restart: u32) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&sample_id.to_le_bytes());
    key[16..20].copy_from_slice(&restart.to_le_bytes());
    key[20] = 0xA7; // domain tag: attack initialization
    ChaCha8Rng::from_seed(key)
}

fn random_ball_delta<E: Element>(
    norm: Norm,
    epsilon: f64,
    shape: (usize, usize, usize),
    rng: &mut ChaCha8Rng,
) -> Vec<E> {
    let d = shape.0 * shape.1 * shape.2;
    match norm {
        Norm::Linf => {
            let dist = Uniform::new_inclusive(-epsilon, epsilon).expect("valid range");
            (0..d).map(|_| E::of(dist.sample(rng))).collect()
        }
        Norm::L2 => {
            let dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let norm2 = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            let u: f64 = rng.random();
            if norm2 == 0.0 {
                return vec![E::zero(); d];
            }
            // Radius ε·u^(1/d) makes the draw uniform over the ball.
            let r = epsilon * u.powf(1.0 / d as f64);
            dir.into_iter().map(|v| E::of(v / norm2 * r)).collect()
        }
    }
}

struct IterateSpec<'a, E: Element> {
    alpha: E,
    iterations: usize,
    init: Option<PgdInit<'a, E>>,
}

/// The shared attack driver: optional random start, `iterations` gradient
/// steps, ε-ball projection, and valid-range clipping.
fn run_iterative<E: Element>(
    target: &AttackTarget<'_, E>,
    x: &Array4<E>,
    y: &[usize],
    tm: &ThreatModel,
    spec: IterateSpec<'_, E>,
    sample_ids: Option<&[u64]>,
) -> Result<AttackResult<E>> {
    tm.validate()?;
    let n = x.shape()[0];
    if y.len() != n {
        return Err(Error::shape("labels", &[n], &[y.len()]));
    }
    let own_ids: Vec<u64>;
    let ids: &[u64] = match sample_ids {
        Some(ids) if ids.len() == n => ids,
        Some(ids) => return Err(Error::shape("sample ids", &[n], &[ids.len()])),
        None => {
            own_ids = (0..n as u64).collect();
            &own_ids
        }
    };
    let eps = E::of(tm.epsilon);

    let mut adv = match &spec.init {
        None => x.clone(),
        Some(init) => {
            let mut adv = match init {
                PgdInit::Random { seed, restart } => {
                    let shape = target.network.input_shape();
                    let mut adv = x.clone();
                    for (i, mut row) in adv.axis_iter_mut(Axis(0)).enumerate() {
                        let mut rng = derive_rng(*seed, ids[i], *restart);
                        let delta = random_ball_delta::<E>(tm.norm, tm.epsilon, shape, &mut rng);
                        for (v, d) in row.iter_mut().zip(delta) {
                            *v += d;
                        }
                    }
                    adv
                }
                PgdInit::Delta(delta) => x + *delta,
            };
            target.clip_valid(&mut adv);
            adv
        }
    };

    for iter in 0..spec.iterations {
        let (_, grad) = target
            .losses_and_grads(&adv, y, Some(iter))
            .map_err(|e| attach_sample(e, ids))?;
        match tm.norm {
            Norm::Linf => {
                Zip::from(&mut adv).and(&grad).for_each(|v, &g| {
                    *v += spec.alpha * sign(g);
                });
            }
            Norm::L2 => {
                let norms = sample_l2_norms(&grad);
                for (i, (mut row, grow)) in
                    adv.axis_iter_mut(Axis(0)).zip(grad.axis_iter(Axis(0))).enumerate()
                {
                    // A zero gradient gives no usable direction; leave the
                    // sample where it is.
                    if norms[i] > E::zero() {
                        let scale = spec.alpha / norms[i];
                        Zip::from(&mut row).and(&grow).for_each(|v, &g| *v += g * scale);
                    }
                }
            }
        }
        let mut delta = &adv - x;
        match tm.norm {
            Norm::Linf => clip_linf_mut(&mut delta, eps),
            Norm::L2 => project_l2_mut(&mut delta, eps),
        }
        adv = x + &delta;
        // Range clipping moves coordinates toward x, so it can only shrink
        // the perturbation under either norm.
        target.clip_valid(&mut adv);
    }

    let (losses, predictions) = target.losses_and_predictions(&adv, y)?;
    let delta = &adv - x;
    let perturbation_norm = perturbation_norms(&delta, tm.norm);
    let success = predictions.iter().zip(y).map(|(p, t)| p != t).collect();
    Ok(AttackResult { adversarial: adv, success, predictions, loss: losses, perturbation_norm })
}

fn attach_sample(e: Error, ids: &[u64]) -> Error {
    // Engine errors carry no sample attribution; report the batch via its
    // first id so the failing evaluation chunk can be located.
    match e {
        e @ Error::NonFinite { .. } => Error::AttackFailed {
            sample: ids.first().copied().unwrap_or(0) as usize,
            source: Box::new(e),
        },
        e => e,
    }
}

/// Single-step sign attack (L∞): one step of size ε in the gradient sign
/// direction, then a clip to the valid range.
pub fn fgsm<E: Element>(
    target: &AttackTarget<'_, E>,
    x: &Array4<E>,
    y: &[usize],
    tm: &ThreatModel,
) -> Result<AttackResult<E>> {
    if tm.norm != Norm::Linf {
        return Err(Error::config("threat.norm", "fgsm is defined for the linf norm; use fgm for l2"));
    }
    run_iterative(
        target,
        x,
        y,
        tm,
        IterateSpec { alpha: E::of(tm.epsilon), iterations: 1, init: None },
        None,
    )
}

/// Single-step normalized-gradient attack (L2): one step of L2 length ε,
/// then a clip to the valid range. Zero-gradient samples are returned
/// unperturbed.
pub fn fgm<E: Element>(
    target: &AttackTarget<'_, E>,
    x: &Array4<E>,
    y: &[usize],
    tm: &ThreatModel,
) -> Result<AttackResult<E>> {
    if tm.norm != Norm::L2 {
        return Err(Error::config("threat.norm", "fgm is defined for the l2 norm; use fgsm for linf"));
    }
    run_iterative(
        target,
        x,
        y,
        tm,
        IterateSpec { alpha: E::of(tm.epsilon), iterations: 1, init: None },
        None,
    )
}

/// Iterative attack starting from the clean input: step of size α, clip the
/// accumulated perturbation to the ε-ball, clip to the valid range, repeat.
pub fn bim<E: Element>(
    target: &AttackTarget<'_, E>,
    x: &Array4<E>,
    y: &[usize],
    tm: &ThreatModel,
) -> Result<AttackResult<E>> {
    run_iterative(
        target,
        x,
        y,
        tm,
        IterateSpec { alpha: E::of(tm.alpha), iterations: tm.iterations, init: None },
        None,
    )
}

/// BIM from a random start inside the ε-ball.
pub fn pgd<E: Element>(
    target: &AttackTarget<'_, E>,
    x: &Array4<E>,
    y: &[usize],
    tm: &ThreatModel,
    seed: u64,
) -> Result<AttackResult<E>> {
    pgd_with_init(target, x, y, tm, PgdInit::Random { seed, restart: 0 }, None)
}

/// PGD with explicit initialization control; `sample_ids` feed the per-sample
/// seed derivation when the batch is a subset of a larger dataset.
pub fn pgd_with_init<E: Element>(
    target: &AttackTarget<'_, E>,
    x: &Array4<E>,
    y: &[usize],
    tm: &ThreatModel,
    init: PgdInit<'_, E>,
    sample_ids: Option<&[u64]>,
) -> Result<AttackResult<E>> {
    run_iterative(
        target,
        x,
        y,
        tm,
        IterateSpec { alpha: E::of(tm.alpha), iterations: tm.iterations, init: Some(init) },
        sample_ids,
    )
}

/// Which base attack a restart wrapper re-runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    /// One step of size ε (FGSM under L∞, FGM under L2). Under restarts the
    /// step starts from a random point in the ε-ball and the total
    /// perturbation is clipped back to the budget.
    FastGradient,
    /// α-steps for `iterations`, no random start on restart 0 — identical to
    /// PGD for restarts ≥ 1.
    Bim,
    /// Random start on every restart.
    Pgd,
}

impl AttackKind {
    fn spec<E: Element>(&self, tm: &ThreatModel, seed: u64, restart: u32) -> IterateSpec<'static, E> {
        let (alpha, iterations) = match self {
            AttackKind::FastGradient => (E::of(tm.epsilon), 1),
            AttackKind::Bim | AttackKind::Pgd => (E::of(tm.alpha), tm.iterations),
        };
        IterateSpec { alpha, iterations, init: Some(PgdInit::Random { seed, restart }) }
    }
}

/// Run `k` randomly-initialized repetitions of an attack and keep, per
/// sample, the first restart that misclassifies; if none does, the restart
/// with the highest final loss.
///
/// Samples that already succeeded are not re-attacked (later restarts could
/// never replace a first success), which keeps the result identical to the
/// exhaustive definition while skipping dead work.
pub fn with_restarts<E: Element>(
    kind: AttackKind,
    k: usize,
    target: &AttackTarget<'_, E>,
    x: &Array4<E>,
    y: &[usize],
    tm: &ThreatModel,
    seed: u64,
    sample_ids: Option<&[u64]>,
) -> Result<AttackResult<E>> {
    if k == 0 {
        return Err(Error::config("threat.restarts", "need at least one restart"));
    }
    let n = x.shape()[0];
    let own_ids: Vec<u64>;
    let ids: &[u64] = match sample_ids {
        Some(ids) => ids,
        None => {
            own_ids = (0..n as u64).collect();
            &own_ids
        }
    };

    // Per sample: (adversarial row, success, prediction, loss, norm).
    let mut best: Vec<Option<(Array1<E>, bool, usize, E, E)>> = vec![None; n];
    let mut active: Vec<usize> = (0..n).collect();

    for restart in 0..k as u32 {
        if active.is_empty() {
            break;
        }
        let xs = x.select(Axis(0), &active);
        let ys: Vec<usize> = active.iter().map(|&i| y[i]).collect();
        let ids_s: Vec<u64> = active.iter().map(|&i| ids[i]).collect();
        let res = run_iterative(
            target,
            &xs,
            &ys,
            tm,
            kind.spec::<E>(tm, seed, restart),
            Some(&ids_s),
        )?;
        let mut still_active = Vec::with_capacity(active.len());
        for (j, &i) in active.iter().enumerate() {
            let row = res
                .adversarial
                .index_axis(Axis(0), j)
                .to_owned()
                .into_shape_with_order(res.adversarial.len() / res.adversarial.shape()[0])
                .expect("flat row");
            let candidate =
                (row, res.success[j], res.predictions[j], res.loss[j], res.perturbation_norm[j]);
            match &best[i] {
                _ if res.success[j] => {
                    best[i] = Some(candidate);
                }
                None => {
                    best[i] = Some(candidate);
                    still_active.push(i);
                }
                Some((_, _, _, loss, _)) => {
                    if res.loss[j] > *loss {
                        best[i] = Some(candidate);
                    }
                    still_active.push(i);
                }
            }
        }
        active = still_active;
    }

    let (c, h, w) = target.network.input_shape();
    let mut adversarial = Array4::zeros((n, c, h, w));
    let mut success = vec![false; n];
    let mut predictions = vec![0usize; n];
    let mut loss = Array1::zeros(n);
    let mut perturbation_norm = Array1::zeros(n);
    for (i, slot) in best.into_iter().enumerate() {
        let (row, s, pred, l, p) = slot.expect("every sample ran at least one restart");
        adversarial
            .index_axis_mut(Axis(0), i)
            .assign(&row.into_shape_with_order((c, h, w)).expect("sample shape"));
        success[i] = s;
        predictions[i] = pred;
        loss[i] = l;
        perturbation_norm[i] = p;
    }
    Ok(AttackResult { adversarial, success, predictions, loss, perturbation_norm })
}
