//! Segmentation losses, the feature distillation loss and the combined
//! training objective.
//!
//! All reductions accumulate in `f64` regardless of the tensor scalar type.
//! Gradients are returned with respect to the network outputs (logits or
//! penultimate features) so they can be fed straight into backpropagation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::LabelMap;
use crate::model::FeatureBlock;
use crate::tensor::{Real, Tensor};

/// Default smoothing constant of the soft Dice loss.
pub const DICE_SMOOTH: f64 = 1e-5;

/// A loss value and its gradient with respect to the loss input.
#[derive(Debug, Clone)]
pub struct Graded<T> {
    pub value: f64,
    pub grad: Tensor<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegLoss {
    Ce,
    CePlusDice,
}

impl SegLoss {
    pub fn uses_dice(self) -> bool {
        self == SegLoss::CePlusDice
    }
}

fn check_targets<T: Real>(scores: &Tensor<T>, targets: &[&LabelMap]) -> Result<()> {
    let [n, k, h, w] = scores.shape();
    if targets.len() != n {
        return Err(Error::ShapeMismatch {
            context: "loss targets".into(),
            expected: format!("{n} label maps"),
            actual: format!("{} label maps", targets.len()),
        });
    }
    for t in targets {
        if t.height() != h || t.width() != w {
            return Err(Error::ShapeMismatch {
                context: "loss target size".into(),
                expected: format!("{h}x{w}"),
                actual: format!("{}x{}", t.height(), t.width()),
            });
        }
        if let Some(&bad) = t.ids().iter().find(|&&id| id as usize >= k) {
            return Err(Error::validation(format!(
                "target id {bad} is not below the {k} predicted classes"
            )));
        }
    }
    Ok(())
}

/// Per-pixel softmax over the class axis.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Tensor<f64> {
    let [n, k, h, w] = logits.shape();
    let plane = h * w;
    let mut out = Tensor::<f64>::zeros([n, k, h, w]);
    for i in 0..n {
        let src = logits.item(i);
        let dst = out.item_mut(i);
        for px in 0..plane {
            let mut max = f64::NEG_INFINITY;
            for c in 0..k {
                max = max.max(src[c * plane + px].as_f64());
            }
            let mut sum = 0.0;
            for c in 0..k {
                let e = (src[c * plane + px].as_f64() - max).exp();
                dst[c * plane + px] = e;
                sum += e;
            }
            for c in 0..k {
                dst[c * plane + px] /= sum;
            }
        }
    }
    out
}

/// Mean over all pixels of `-log softmax(logits)[target]`.
pub fn cross_entropy<T: Real>(logits: &Tensor<T>, targets: &[&LabelMap]) -> Result<Graded<T>> {
    check_targets(logits, targets)?;
    let [n, k, h, w] = logits.shape();
    let plane = h * w;
    let count = (n * plane) as f64;
    let probs = softmax(logits);
    let mut grad = Tensor::<T>::zeros(logits.shape());
    let mut total = 0.0;
    for (i, target) in targets.iter().enumerate() {
        let z = logits.item(i);
        let p = probs.item(i);
        let g = grad.item_mut(i);
        for (px, &t) in target.ids().iter().enumerate() {
            let t = t as usize;
            let max = (0..k).map(|c| z[c * plane + px].as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let lse = (0..k).map(|c| (z[c * plane + px].as_f64() - max).exp()).sum::<f64>().ln();
            total += lse - (z[t * plane + px].as_f64() - max);
            for c in 0..k {
                let onehot = if c == t { 1.0 } else { 0.0 };
                g[c * plane + px] = T::from_f64((p[c * plane + px] - onehot) / count);
            }
        }
    }
    Ok(Graded {
        value: total / count,
        grad,
    })
}

/// Soft Dice terms for unchecked probabilities; gradient w.r.t. probabilities.
fn soft_dice_terms(probs: &Tensor<f64>, targets: &[&LabelMap], smooth: f64) -> Graded<f64> {
    let [n, k, h, w] = probs.shape();
    let plane = h * w;
    let mut inter = vec![0.0; k];
    let mut psum = vec![0.0; k];
    let mut tsum = vec![0.0; k];
    for (i, target) in targets.iter().enumerate() {
        let p = probs.item(i);
        for c in 0..k {
            psum[c] += p[c * plane..(c + 1) * plane].iter().sum::<f64>();
        }
        for (px, &t) in target.ids().iter().enumerate() {
            let t = t as usize;
            inter[t] += p[t * plane + px];
            tsum[t] += 1.0;
        }
    }
    let kf = k as f64;
    let mut value = 1.0;
    let mut ratio = vec![0.0; k];
    let mut denom = vec![0.0; k];
    for c in 0..k {
        denom[c] = psum[c] + tsum[c] + smooth;
        ratio[c] = (2.0 * inter[c] + smooth) / denom[c];
        value -= ratio[c] / kf;
    }
    let mut grad = Tensor::<f64>::zeros([n, k, h, w]);
    for (i, target) in targets.iter().enumerate() {
        let g = grad.item_mut(i);
        for c in 0..k {
            let base = ratio[c] / denom[c] / kf;
            g[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v = base);
        }
        for (px, &t) in target.ids().iter().enumerate() {
            let t = t as usize;
            g[t * plane + px] -= 2.0 / denom[t] / kf;
        }
    }
    Graded { value, grad }
}

/// `1 - mean_k (2 sum p_k t_k + s) / (sum p_k + sum t_k + s)` over the batch,
/// background included. Gradient is with respect to the probabilities.
pub fn soft_dice_loss<T: Real>(probs: &Tensor<T>, targets: &[&LabelMap], smooth: f64) -> Result<Graded<T>> {
    check_targets(probs, targets)?;
    let [n, k, h, w] = probs.shape();
    let plane = h * w;
    for i in 0..n {
        let p = probs.item(i);
        for px in 0..plane {
            let s: f64 = (0..k).map(|c| p[c * plane + px].as_f64()).sum();
            if (s - 1.0).abs() > 1e-5 {
                return Err(Error::validation(format!(
                    "probabilities at item {i}, pixel {px} sum to {s}, not 1"
                )));
            }
        }
    }
    let g = soft_dice_terms(&probs.map(|v| v.as_f64()), targets, smooth);
    Ok(Graded {
        value: g.value,
        grad: g.grad.map(T::from_f64),
    })
}

/// Soft Dice of `softmax(logits)`; gradient with respect to the logits.
pub fn soft_dice_from_logits<T: Real>(logits: &Tensor<T>, targets: &[&LabelMap], smooth: f64) -> Result<Graded<T>> {
    check_targets(logits, targets)?;
    let probs = softmax(logits);
    let dp = soft_dice_terms(&probs, targets, smooth);
    Ok(Graded {
        value: dp.value,
        grad: softmax_backward(&probs, &dp.grad).map(T::from_f64),
    })
}

/// Chain rule through the per-pixel softmax: `dz_j = p_j (g_j - sum_i p_i g_i)`.
fn softmax_backward(probs: &Tensor<f64>, dprobs: &Tensor<f64>) -> Tensor<f64> {
    let [n, k, h, w] = probs.shape();
    let plane = h * w;
    let mut out = Tensor::<f64>::zeros(probs.shape());
    for i in 0..n {
        let (p, g) = (probs.item(i), dprobs.item(i));
        let o = out.item_mut(i);
        for px in 0..plane {
            let dot: f64 = (0..k).map(|c| p[c * plane + px] * g[c * plane + px]).sum();
            for c in 0..k {
                o[c * plane + px] = p[c * plane + px] * (g[c * plane + px] - dot);
            }
        }
    }
    out
}

/// Mean squared error between teacher and student features.
///
/// The teacher block is a constant: the gradient is with respect to the
/// student features only.
pub fn kd_loss<T: Real>(teacher: &FeatureBlock<T>, student: &FeatureBlock<T>) -> Result<Graded<T>> {
    if teacher.shape() != student.shape() {
        return Err(Error::ShapeMismatch {
            context: "distillation features (teacher vs student)".into(),
            expected: format!("{:?}", teacher.shape()),
            actual: format!("{:?}", student.shape()),
        });
    }
    let count = teacher.data().len() as f64;
    let mut grad = Tensor::<T>::zeros(student.shape());
    let mut total = 0.0;
    for ((g, &t), &s) in grad.data_mut().iter_mut().zip(teacher.data()).zip(student.data()) {
        let d = s.as_f64() - t.as_f64();
        total += d * d;
        *g = T::from_f64(2.0 * d / count);
    }
    Ok(Graded {
        value: total / count,
        grad,
    })
}

/// Segmentation part of the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegComponents {
    pub ce: f64,
    /// Present only when soft Dice is enabled.
    pub dice: Option<f64>,
}

impl SegComponents {
    pub fn total(&self) -> f64 {
        self.ce + self.dice.unwrap_or(0.0)
    }
}

/// Total objective with its named components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub scalar: f64,
    /// Keys: `seg_ce`, `seg_dice` (when enabled) and `kd`.
    pub components: BTreeMap<String, f64>,
}

/// `seg_total + alpha * kd`.
pub fn total_loss(seg: SegComponents, kd: f64, alpha: f64) -> Result<LossValue> {
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::validation(format!("alpha must be non-negative, got {alpha}")));
    }
    let mut components = BTreeMap::new();
    components.insert("seg_ce".to_string(), seg.ce);
    if let Some(d) = seg.dice {
        components.insert("seg_dice".to_string(), d);
    }
    components.insert("kd".to_string(), kd);
    Ok(LossValue {
        scalar: seg.total() + alpha * kd,
        components,
    })
}

/// Objective value and gradients for one student step.
pub struct ObjectiveGrad<T> {
    pub loss: LossValue,
    pub d_logits: Tensor<T>,
    /// `None` when no distillation term is active.
    pub d_features: Option<Tensor<T>>,
}

/// Segmentation loss on `logits`, plus `alpha * kd_loss(teacher, student)`
/// when teacher features are supplied.
pub fn objective<T: Real>(
    logits: &Tensor<T>,
    targets: &[&LabelMap],
    seg_loss: SegLoss,
    smooth: f64,
    distill: Option<(&FeatureBlock<T>, &FeatureBlock<T>)>,
    alpha: f64,
) -> Result<ObjectiveGrad<T>> {
    let ce = cross_entropy(logits, targets)?;
    let mut d_logits = ce.grad;
    let dice = match seg_loss {
        SegLoss::Ce => None,
        SegLoss::CePlusDice => {
            let d = soft_dice_from_logits(logits, targets, smooth)?;
            d_logits.add_assign(&d.grad);
            Some(d.value)
        }
    };
    let (kd, d_features) = match distill {
        Some((teacher, student)) => {
            let kd = kd_loss(teacher, student)?;
            let mut g = kd.grad;
            g.scale(T::from_f64(alpha));
            (kd.value, (alpha != 0.0).then_some(g))
        }
        None => (0.0, None),
    };
    let loss = total_loss(SegComponents { ce: ce.value, dice }, kd, alpha)?;
    Ok(ObjectiveGrad {
        loss,
        d_logits,
        d_features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_case(rng: &mut ChaCha8Rng, n: usize, k: usize, h: usize, w: usize) -> (Tensor<f64>, Vec<LabelMap>) {
        let logits = Tensor::from_vec([n, k, h, w], (0..n * k * h * w).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
        let labels = (0..n)
            .map(|_| LabelMap::new(h, w, k, (0..h * w).map(|_| rng.gen_range(0..k) as u8).collect()).unwrap())
            .collect();
        (logits, labels)
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let logits = Tensor::<f64>::zeros([1, 2, 3, 3]);
        let lab = LabelMap::new(3, 3, 2, vec![1, 0, 1, 0, 0, 1, 1, 1, 0]).unwrap();
        let ce = cross_entropy(&logits, &[&lab]).unwrap();
        assert!((ce.value - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_give_zero() {
        let lab = LabelMap::new(2, 2, 3, vec![0, 1, 2, 1]).unwrap();
        let mut logits = Tensor::<f64>::zeros([1, 3, 2, 2]);
        for (px, &t) in lab.ids().iter().enumerate() {
            logits.data_mut()[t as usize * 4 + px] = 50.0;
        }
        assert!(cross_entropy(&logits, &[&lab]).unwrap().value < 1e-9);
    }

    #[test]
    fn cross_entropy_matches_per_pixel_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (logits, labels) = random_case(&mut rng, 1, 3, 8, 8);
        let got = cross_entropy(&logits, &[&labels[0]]).unwrap().value;
        let mut want = 0.0;
        for y in 0..8 {
            for x in 0..8 {
                let zs: Vec<f64> = (0..3).map(|c| logits.get(0, c, y, x)).collect();
                let denom: f64 = zs.iter().map(|z| z.exp()).sum();
                let t = labels[0].get(y, x) as usize;
                want += -(zs[t].exp() / denom).ln();
            }
        }
        assert!((got - want / 64.0).abs() < 1e-7);
    }

    #[test]
    fn cross_entropy_rejects_mismatched_targets() {
        let logits = Tensor::<f64>::zeros([1, 2, 2, 2]);
        let wrong_size = LabelMap::new(2, 3, 2, vec![0; 6]).unwrap();
        assert!(cross_entropy(&logits, &[&wrong_size]).is_err());
        let too_many_classes = LabelMap::new(2, 2, 3, vec![2; 4]).unwrap();
        assert!(cross_entropy(&logits, &[&too_many_classes]).is_err());
        assert!(cross_entropy(&logits, &[]).is_err());
    }

    fn onehot(lab: &LabelMap, k: usize, flip: bool) -> Tensor<f64> {
        let plane = lab.ids().len();
        let mut t = Tensor::<f64>::zeros([1, k, lab.height(), lab.width()]);
        for (px, &id) in lab.ids().iter().enumerate() {
            let c = if flip { (id as usize + 1) % k } else { id as usize };
            t.data_mut()[c * plane + px] = 1.0;
        }
        t
    }

    #[test]
    fn dice_extremes() {
        let lab = LabelMap::new(2, 2, 2, vec![0, 1, 1, 0]).unwrap();
        let perfect = soft_dice_loss(&onehot(&lab, 2, false), &[&lab], DICE_SMOOTH).unwrap();
        assert!(perfect.value.abs() < 1e-4);
        let disjoint = soft_dice_loss(&onehot(&lab, 2, true), &[&lab], DICE_SMOOTH).unwrap();
        assert!(disjoint.value > 0.999);
        let mut bad = onehot(&lab, 2, false);
        bad.data_mut()[0] = 0.5;
        assert!(soft_dice_loss(&bad, &[&lab], DICE_SMOOTH).is_err());
    }

    #[test]
    fn dice_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (logits, labels) = random_case(&mut rng, 1, 3, 8, 8);
        let probs = softmax(&logits);
        let got = soft_dice_loss(&probs, &[&labels[0]], DICE_SMOOTH).unwrap().value;
        let mut acc = 0.0;
        for c in 0..3 {
            let (mut i, mut p, mut t) = (0.0, 0.0, 0.0);
            for y in 0..8 {
                for x in 0..8 {
                    let pv = probs.get(0, c, y, x);
                    let tv = if labels[0].get(y, x) as usize == c { 1.0 } else { 0.0 };
                    i += pv * tv;
                    p += pv;
                    t += tv;
                }
            }
            acc += (2.0 * i + DICE_SMOOTH) / (p + t + DICE_SMOOTH);
        }
        assert!((got - (1.0 - acc / 3.0)).abs() < 1e-7);
    }

    #[test]
    fn kd_examples() {
        let a = Tensor::<f64>::zeros([1, 8, 4, 4]);
        let mut b = a.clone();
        assert_eq!(kd_loss(&a, &b).unwrap().value, 0.0);
        b.data_mut().iter_mut().for_each(|v| *v = 1.0);
        assert_eq!(kd_loss(&a, &b).unwrap().value, 1.0);
        let err = kd_loss(&a, &Tensor::zeros([1, 4, 4, 4])).unwrap_err().to_string();
        assert!(err.contains("[1, 8, 4, 4]") && err.contains("[1, 4, 4, 4]"), "{err}");

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = Tensor::from_vec([1, 8, 4, 4], (0..128).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let s = Tensor::from_vec([1, 8, 4, 4], (0..128).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let want = t.data().iter().zip(s.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 128.0;
        let got = kd_loss(&t, &s).unwrap().value;
        assert!((got - want).abs() < 1e-9);
        assert_eq!(got, kd_loss(&s, &t).unwrap().value);
        assert_eq!(kd_loss(&s, &s).unwrap().value, 0.0);
    }

    #[test]
    fn total_loss_examples() {
        let seg = SegComponents { ce: 0.5, dice: None };
        assert_eq!(total_loss(seg, 0.25, 2.0).unwrap().scalar, 1.0);
        assert_eq!(total_loss(seg, 0.25, 0.0).unwrap().scalar, 0.5);
        assert_eq!(total_loss(SegComponents { ce: 0.0, dice: None }, 0.0, 2.0).unwrap().scalar, 0.0);
        assert!(total_loss(seg, 0.25, -1.0).is_err());
        let with_dice = total_loss(SegComponents { ce: 0.5, dice: Some(0.1) }, 0.2, 2.0).unwrap();
        assert!((with_dice.scalar - 1.0).abs() < 1e-12);
        assert_eq!(with_dice.components["seg_dice"], 0.1);
    }

    #[test]
    fn cross_entropy_is_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (logits, labels) = random_case(&mut rng, 2, 4, 5, 5);
        let mut shifted = logits.clone();
        for i in 0..2 {
            for px in 0..25 {
                let s = rng.gen_range(-10.0..10.0);
                for c in 0..4 {
                    shifted.item_mut(i)[c * 25 + px] += s;
                }
            }
        }
        let refs: Vec<&LabelMap> = labels.iter().collect();
        let a = cross_entropy(&logits, &refs).unwrap().value;
        let b = cross_entropy(&shifted, &refs).unwrap().value;
        assert!((a - b).abs() < 1e-6);
    }
}
