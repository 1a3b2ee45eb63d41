//! Class weighting, the weighted cross-entropy loss, and the two
//! optimizers used by the training protocols.
//!
//! The loss does its exp/log arithmetic in `f64` regardless of the model
//! scalar type; softmax over 10 classes is cheap and this keeps the `f32`
//! path accurate near saturated logits.

use crate::error::{Error, Result};
use crate::layers::ParamSlot;
use crate::tensor::{Scalar, Tensor};

/// Per-class loss weights.
///
/// Inverse-frequency weighting: `w_c = N / (C_present * n_c)` where
/// `C_present` counts classes with at least one sample. Absent classes
/// get weight zero. The count-weighted mean of the result is exactly 1,
/// so the learning rate keeps its usual scale no matter how skewed the
/// class balance is.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassWeights<T> {
    w: Vec<T>,
}

impl<T: Scalar> ClassWeights<T> {
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        let present = counts.iter().filter(|&&c| c > 0).count();
        if total == 0 || present == 0 {
            return Err(Error::InvalidInput(
                "class weights need at least one sample".into(),
            ));
        }
        let w = counts
            .iter()
            .map(|&c| {
                if c == 0 {
                    T::zero()
                } else {
                    T::from_f64(total as f64 / (present as f64 * c as f64))
                }
            })
            .collect();
        Ok(ClassWeights { w })
    }

    /// All-ones weights; the loss then reduces to the plain mean
    /// cross-entropy.
    pub fn uniform(classes: usize) -> Self {
        ClassWeights {
            w: vec![T::one(); classes],
        }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.w
    }
}

/// Weighted softmax cross-entropy over a batch of logits.
///
/// Per sample `i` with target class `y`:
/// `loss_i = w_y * (logsumexp(x_i) - x_i[y])`, and the batch loss is
/// `sum_i loss_i / sum_i w_y_i` (a weighted mean). The returned gradient
/// is with respect to the logits:
/// `d/dx_i[c] = w_y * (softmax(x_i)[c] - [c == y]) / sum_j w_y_j`.
///
/// Fails if shapes disagree, a target is out of range, or every target in
/// the batch carries zero weight (the reduction would divide by zero).
pub fn weighted_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[usize],
    weights: &ClassWeights<T>,
) -> Result<(T, Tensor<T>)> {
    let (bsz, classes) = match *logits.shape() {
        [b, c] => (b, c),
        _ => {
            return Err(Error::InvalidShape(format!(
                "loss expects logits [batch, classes], got {:?}",
                logits.shape()
            )))
        }
    };
    if targets.len() != bsz {
        return Err(Error::InvalidShape(format!(
            "{bsz} logit rows but {} targets",
            targets.len()
        )));
    }
    if weights.len() != classes {
        return Err(Error::InvalidShape(format!(
            "{classes} classes but {} weights",
            weights.len()
        )));
    }

    let mut weight_sum = 0.0f64;
    for &y in targets {
        if y >= classes {
            return Err(Error::InvalidLabel(format!(
                "target class {y} out of range (classes: {classes})"
            )));
        }
        weight_sum += weights.as_slice()[y].to_f64();
    }
    if weight_sum <= 0.0 {
        return Err(Error::InvalidInput(
            "every target in the batch has zero class weight".into(),
        ));
    }

    let mut loss_sum = 0.0f64;
    let mut dlogits = vec![T::zero(); bsz * classes];
    for i in 0..bsz {
        let row = &logits.data()[i * classes..(i + 1) * classes];
        let y = targets[i];
        let wy = weights.as_slice()[y].to_f64();

        // logsumexp with max subtraction for stability
        let mut maxv = f64::NEG_INFINITY;
        for &v in row {
            maxv = maxv.max(v.to_f64());
        }
        let mut expsum = 0.0f64;
        for &v in row {
            expsum += (v.to_f64() - maxv).exp();
        }
        let lse = maxv + expsum.ln();
        loss_sum += wy * (lse - row[y].to_f64());

        let drow = &mut dlogits[i * classes..(i + 1) * classes];
        for (c, &v) in row.iter().enumerate() {
            let p = (v.to_f64() - lse).exp();
            let indicator = if c == y { 1.0 } else { 0.0 };
            drow[c] = T::from_f64(wy * (p - indicator) / weight_sum);
        }
    }

    let loss = T::from_f64(loss_sum / weight_sum);
    Ok((loss, Tensor::from_vec(&[bsz, classes], dlogits)?))
}

/// Which update rule [`Optimizer::step`] applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Plain gradient descent, no momentum, no weight decay.
    Sgd,
    /// Adam with beta1 = 0.9, beta2 = 0.999, eps = 1e-8 and bias
    /// correction.
    Adam,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!(
                "unknown optimizer {other:?} (expected \"sgd\" or \"adam\")"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Gradient-descent driver over a network's parameter slots.
///
/// Adam moment state is allocated for every parameter, frozen ones
/// included, and is keyed by slot position, so freezing a layer never
/// shifts another parameter's state. Frozen slots are skipped entirely:
/// their values and moments stay bit-identical across steps. The step
/// counter `t` increments once per [`step`] call.
pub struct Optimizer<T: Scalar> {
    kind: OptimizerKind,
    lr: f64,
    t: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::InvalidRange(format!(
                "learning rate must be positive and finite, got {lr}"
            )));
        }
        Ok(Optimizer {
            kind,
            lr,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, slots: &mut [ParamSlot<'_, T>]) -> Result<()> {
        if self.kind == OptimizerKind::Adam {
            if self.m.is_empty() {
                self.m = slots
                    .iter()
                    .map(|s| Tensor::zeros(s.value.shape()))
                    .collect::<Result<_>>()?;
                self.v = self.m.clone();
            } else if self.m.len() != slots.len() {
                return Err(Error::InvalidState(format!(
                    "optimizer state holds {} params, step got {}",
                    self.m.len(),
                    slots.len()
                )));
            }
        }
        self.t += 1;
        let lr = T::from_f64(self.lr);
        match self.kind {
            OptimizerKind::Sgd => {
                for slot in slots.iter_mut() {
                    if !slot.trainable {
                        continue;
                    }
                    for (p, &g) in slot.value.data_mut().iter_mut().zip(slot.grad.data()) {
                        *p = *p - lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                let b1 = T::from_f64(ADAM_BETA1);
                let b2 = T::from_f64(ADAM_BETA2);
                let one_minus_b1 = T::from_f64(1.0 - ADAM_BETA1);
                let one_minus_b2 = T::from_f64(1.0 - ADAM_BETA2);
                // bias corrections computed in f64 to keep beta^t accurate
                let bc1 = T::from_f64(1.0 - ADAM_BETA1.powi(self.t as i32));
                let bc2 = T::from_f64(1.0 - ADAM_BETA2.powi(self.t as i32));
                let eps = T::from_f64(ADAM_EPS);
                for (i, slot) in slots.iter_mut().enumerate() {
                    if !slot.trainable {
                        continue;
                    }
                    if self.m[i].shape() != slot.value.shape() {
                        return Err(Error::InvalidState(format!(
                            "optimizer state shape {:?} does not match param {:?} ({})",
                            self.m[i].shape(),
                            slot.value.shape(),
                            slot.name
                        )));
                    }
                    let md = self.m[i].data_mut();
                    let vd = self.v[i].data_mut();
                    let pd = slot.value.data_mut();
                    let gd = slot.grad.data();
                    for j in 0..pd.len() {
                        let g = gd[j];
                        md[j] = b1 * md[j] + one_minus_b1 * g;
                        vd[j] = b2 * vd[j] + one_minus_b2 * g * g;
                        let mhat = md[j] / bc1;
                        let vhat = vd[j] / bc2;
                        pd[j] = pd[j] - lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{Dense, LayerKind, LayerNode};

    #[test]
    fn class_weights_match_inverse_frequency() {
        let w = ClassWeights::<f64>::from_counts(&[45, 5]).unwrap();
        assert!((w.as_slice()[0] - 50.0 / (2.0 * 45.0)).abs() < 1e-12);
        assert!((w.as_slice()[1] - 5.0).abs() < 1e-12);
        // count-weighted mean is one
        let mean = 45.0 * w.as_slice()[0] + 5.0 * w.as_slice()[1];
        assert!((mean / 50.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn absent_class_gets_zero_weight() {
        let w = ClassWeights::<f64>::from_counts(&[10, 0, 30]).unwrap();
        assert_eq!(w.as_slice()[1], 0.0);
        assert!((w.as_slice()[0] - 40.0 / 20.0).abs() < 1e-12);
        assert!(ClassWeights::<f64>::from_counts(&[0, 0]).is_err());
    }

    #[test]
    fn confident_correct_logit_gives_near_zero_loss() {
        let logits = Tensor::from_vec(&[1, 2], vec![10.0, -10.0]).unwrap();
        let (loss, _) =
            weighted_cross_entropy(&logits, &[0], &ClassWeights::<f64>::uniform(2)).unwrap();
        let expected = (1.0 + (-20.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-15, "loss {loss} vs {expected}");
    }

    #[test]
    fn uniform_weights_reduce_to_mean_cross_entropy() {
        let logits =
            Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 0.5, -1.0, 0.0, 3.0]).unwrap();
        let (loss, _) =
            weighted_cross_entropy(&logits, &[1, 2], &ClassWeights::<f64>::uniform(3)).unwrap();
        // plain mean CE by hand
        let mut want = 0.0;
        for (row, y) in [([1.0, 2.0, 0.5], 1usize), ([-1.0, 0.0, 3.0], 2)] {
            let lse = row.iter().map(|v: &f64| v.exp()).sum::<f64>().ln();
            want += lse - row[y];
        }
        want /= 2.0;
        assert!((loss - want).abs() < 1e-12);
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let logits =
            Tensor::from_vec(&[2, 3], vec![0.3, -0.2, 1.0, 2.0, 0.1, -0.4]).unwrap();
        let w = ClassWeights::<f64>::from_counts(&[3, 5, 2]).unwrap();
        let (_, d) = weighted_cross_entropy(&logits, &[0, 2], &w).unwrap();
        for i in 0..2 {
            let s: f64 = d.data()[i * 3..(i + 1) * 3].iter().sum();
            assert!(s.abs() < 1e-12, "row {i} sums to {s}");
        }
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let logits = Tensor::from_vec(&[1, 3], vec![1000.0, -1000.0, 999.0]).unwrap();
        let (loss, d) =
            weighted_cross_entropy(&logits, &[2], &ClassWeights::<f64>::uniform(3)).unwrap();
        assert!(loss.is_finite());
        assert!(d.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn out_of_range_target_is_rejected() {
        let logits = Tensor::from_vec(&[1, 2], vec![0.0, 0.0]).unwrap();
        let w = ClassWeights::<f64>::uniform(2);
        assert!(weighted_cross_entropy(&logits, &[2], &w).is_err());
        assert!(weighted_cross_entropy(&logits, &[0, 1], &w).is_err());
    }

    #[test]
    fn all_zero_weight_batch_is_rejected() {
        let logits = Tensor::from_vec(&[1, 2], vec![0.0, 0.0]).unwrap();
        let w = ClassWeights::<f64>::from_counts(&[0, 7]).unwrap();
        // target class 0 has weight zero, and it is the whole batch
        assert!(weighted_cross_entropy(&logits, &[0], &w).is_err());
    }

    fn single_param_node(value: f32, grad: f32) -> LayerNode<f32> {
        let w = Tensor::from_vec(&[1, 1], vec![value]).unwrap();
        let b = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let mut dense = Dense::from_parts(w, b).unwrap();
        dense.dw = Tensor::from_vec(&[1, 1], vec![grad]).unwrap();
        LayerNode::new("p", LayerKind::Dense(dense))
    }

    #[test]
    fn sgd_takes_a_plain_step() {
        let mut node = single_param_node(1.0, 0.5);
        let mut opt = Optimizer::<f32>::new(OptimizerKind::Sgd, 0.1).unwrap();
        opt.step(&mut node.param_slots()).unwrap();
        let slots = node.param_slots();
        assert!((slots[0].value.data()[0] - 0.95).abs() < 1e-7);
    }

    #[test]
    fn adam_first_step_has_unit_scale() {
        // with bias correction the first update is lr * g/|g| regardless
        // of gradient magnitude (up to eps)
        for g in [0.001f32, 1.0, 50.0] {
            let mut node = single_param_node(0.0, g);
            let mut opt = Optimizer::<f32>::new(OptimizerKind::Adam, 0.1).unwrap();
            opt.step(&mut node.param_slots()).unwrap();
            let slots = node.param_slots();
            let got = slots[0].value.data()[0];
            assert!((got + 0.1).abs() < 1e-4, "g = {g}, step = {got}");
        }
    }

    #[test]
    fn adam_step_counter_advances_once_per_call() {
        let mut node = single_param_node(0.0, 1.0);
        let mut opt = Optimizer::<f32>::new(OptimizerKind::Adam, 0.01).unwrap();
        for want in 1..=5 {
            opt.step(&mut node.param_slots()).unwrap();
            assert_eq!(opt.steps_taken(), want);
        }
    }

    #[test]
    fn frozen_slot_is_bit_identical_after_steps() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut node = single_param_node(1.25, 10.0);
            node.trainable = false;
            let before = node.params()[0].1.clone();
            let mut opt = Optimizer::<f32>::new(kind, 0.5).unwrap();
            for _ in 0..10 {
                opt.step(&mut node.param_slots()).unwrap();
            }
            assert_eq!(node.params()[0].1, &before);
        }
    }

    #[test]
    fn nonpositive_learning_rate_is_rejected() {
        assert!(Optimizer::<f32>::new(OptimizerKind::Sgd, 0.0).is_err());
        assert!(Optimizer::<f32>::new(OptimizerKind::Adam, -1.0).is_err());
        assert!(Optimizer::<f32>::new(OptimizerKind::Adam, f64::NAN).is_err());
    }

    #[test]
    fn optimizer_kind_parses_config_tokens() {
        assert_eq!(OptimizerKind::parse("sgd").unwrap(), OptimizerKind::Sgd);
        assert_eq!(OptimizerKind::parse("adam").unwrap(), OptimizerKind::Adam);
        assert!(OptimizerKind::parse("adamw").is_err());
    }
}
