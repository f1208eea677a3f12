//! Reconstruction and geometric losses with analytic gradients.
//!
//! Every pose loss averages over frames and returns its gradient with respect
//! to the predicted joint coordinates. Non-differentiable points (`|x|` at 0,
//! `‖x‖` at the origin) take the zero subgradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::skeleton::{Pose, Skeleton};
use crate::weighting::{BoneLambdas, JointWeights};

/// Shortest bone length accepted in reference data.
pub const MIN_REFERENCE_BONE: f64 = 1e-8;

/// Probability clamp applied before taking logarithms in the EOS loss.
pub const EOS_PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// `∂loss/∂pred`, one entry per frame and joint.
    pub grad: Vec<Pose>,
}

impl LossValue {
    fn zero(frames: usize, joints: usize) -> Self {
        LossValue {
            value: 0.0,
            grad: vec![Pose::zeros(joints); frames],
        }
    }

    fn accumulate(&mut self, other: &LossValue, coeff: f64) {
        self.value += coeff * other.value;
        for (g, o) in self.grad.iter_mut().zip(&other.grad) {
            for (a, b) in g.coords.iter_mut().zip(&o.coords) {
                *a = geom::add(*a, geom::scale(*b, coeff));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossCoefficients {
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default = "one")]
    pub eos_weight: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for LossCoefficients {
    fn default() -> Self {
        LossCoefficients {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            eos_weight: 1.0,
        }
    }
}

impl LossCoefficients {
    pub fn new(alpha: f64, beta: f64, gamma: f64, eos_weight: f64) -> Result<Self> {
        let c = LossCoefficients {
            alpha,
            beta,
            gamma,
            eos_weight,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("eos_weight", self.eos_weight),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

fn check_frames(pred: &[Pose], reference: &[Pose], joints: usize, context: &str) -> Result<()> {
    if pred.len() != reference.len() {
        return Err(Error::Shape {
            context: format!("{context}: frame count"),
            expected: reference.len(),
            found: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::invalid(format!("{context}: no frames")));
    }
    for (p, r) in pred.iter().zip(reference) {
        for f in [p, r] {
            if f.num_joints() != joints {
                return Err(Error::Shape {
                    context: format!("{context}: joint count"),
                    expected: joints,
                    found: f.num_joints(),
                });
            }
        }
    }
    Ok(())
}

/// `(1/T) Σ_t Σ_i w_i ‖p̂_i − p_i‖²`.
pub fn weighted_mse_loss(pred: &[Pose], reference: &[Pose], weights: &JointWeights) -> Result<LossValue> {
    let n = weights.w.len();
    check_frames(pred, reference, n, "weighted_mse_loss")?;
    let inv_t = 1.0 / pred.len() as f64;
    let mut out = LossValue::zero(pred.len(), n);
    for ((p, r), g) in pred.iter().zip(reference).zip(&mut out.grad) {
        for i in 0..n {
            let d = geom::sub(p.coords[i], r.coords[i]);
            out.value += weights.w[i] * geom::dot(d, d) * inv_t;
            g.coords[i] = geom::scale(d, 2.0 * weights.w[i] * inv_t);
        }
    }
    Ok(out)
}

fn reference_link(r: &Pose, child: usize, parent: usize, frame: usize) -> Result<(Vec3, f64)> {
    let b = geom::sub(r.coords[child], r.coords[parent]);
    let len = geom::norm(b);
    if !(len >= MIN_REFERENCE_BONE) {
        return Err(Error::DegenerateBone {
            joint: child,
            frame,
            length: len,
        });
    }
    Ok((b, len))
}

/// `(1/T) Σ_t Σ_i λ_i |‖b_i‖ − ‖b̂_i‖| / ‖b_i‖`, normalized by the reference length.
pub fn bone_length_loss(
    pred: &[Pose],
    reference: &[Pose],
    skeleton: &Skeleton,
    lambdas: &BoneLambdas,
) -> Result<LossValue> {
    let n = skeleton.num_joints();
    check_frames(pred, reference, n, "bone_length_loss")?;
    if lambdas.lambda.len() != skeleton.num_bones() {
        return Err(Error::Shape {
            context: "bone lambdas".into(),
            expected: skeleton.num_bones(),
            found: lambdas.lambda.len(),
        });
    }
    let inv_t = 1.0 / pred.len() as f64;
    let mut out = LossValue::zero(pred.len(), n);
    for (t, ((p, r), g)) in pred.iter().zip(reference).zip(&mut out.grad).enumerate() {
        for (k, (c, par)) in skeleton.bone_pairs().enumerate() {
            let (_, ref_len) = reference_link(r, c, par, t)?;
            let bh = geom::sub(p.coords[c], p.coords[par]);
            let pred_len = geom::norm(bh);
            let lam = lambdas.lambda[k];
            out.value += lam * (ref_len - pred_len).abs() / ref_len * inv_t;
            let diff = pred_len - ref_len;
            if diff != 0.0 && pred_len > 0.0 {
                let s = lam * diff.signum() / ref_len * inv_t / pred_len;
                let d = geom::scale(bh, s);
                g.coords[c] = geom::add(g.coords[c], d);
                g.coords[par] = geom::sub(g.coords[par], d);
            }
        }
    }
    Ok(out)
}

/// `(1/T) Σ_t Σ_i ‖b_i − b̂_i‖ / ‖b_i‖`.
pub fn bone_pose_loss(pred: &[Pose], reference: &[Pose], skeleton: &Skeleton) -> Result<LossValue> {
    let n = skeleton.num_joints();
    check_frames(pred, reference, n, "bone_pose_loss")?;
    let inv_t = 1.0 / pred.len() as f64;
    let mut out = LossValue::zero(pred.len(), n);
    for (t, ((p, r), g)) in pred.iter().zip(reference).zip(&mut out.grad).enumerate() {
        for (c, par) in skeleton.bone_pairs() {
            let (b, ref_len) = reference_link(r, c, par, t)?;
            let bh = geom::sub(p.coords[c], p.coords[par]);
            let e = geom::sub(bh, b);
            let dist = geom::norm(e);
            out.value += dist / ref_len * inv_t;
            if dist > 0.0 {
                let d = geom::scale(e, inv_t / (ref_len * dist));
                g.coords[c] = geom::add(g.coords[c], d);
                g.coords[par] = geom::sub(g.coords[par], d);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EosLoss {
    pub value: f64,
    /// Gradient with respect to the pre-sigmoid logits.
    pub grad_logits: Vec<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy of a probability sequence against 0/1 targets.
pub fn binary_cross_entropy(probs: &[f64], targets: &[f64]) -> Result<f64> {
    if probs.len() != targets.len() {
        return Err(Error::Shape {
            context: "binary_cross_entropy".into(),
            expected: targets.len(),
            found: probs.len(),
        });
    }
    if probs.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = probs
        .iter()
        .zip(targets)
        .map(|(&p, &y)| {
            // Clamp each log argument away from 0 only, so p == y scores exactly 0.
            -(y * p.max(EOS_PROB_CLAMP).ln() + (1.0 - y) * (1.0 - p).max(EOS_PROB_CLAMP).ln())
        })
        .sum();
    Ok(sum / probs.len() as f64)
}

/// Binary cross-entropy on sigmoid outputs, differentiated with respect to the
/// logits: `∂/∂z = (σ(z) − y) / steps`.
pub fn eos_classification_loss(logits: &[f64], targets: &[f64]) -> Result<EosLoss> {
    let probs: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    let value = binary_cross_entropy(&probs, targets)?;
    let inv = 1.0 / logits.len().max(1) as f64;
    Ok(EosLoss {
        value,
        grad_logits: probs
            .iter()
            .zip(targets)
            .map(|(p, y)| (p - y) * inv)
            .collect(),
    })
}

/// Combined pose loss together with its unweighted terms.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeLoss {
    pub total: LossValue,
    pub mse: f64,
    pub bone: f64,
    pub pose: f64,
}

/// `α·MSE_w + β·L_bone + γ·L_pose`. The EOS term lives with the model because
/// it needs decoder logits rather than poses.
pub fn composite_loss(
    pred: &[Pose],
    reference: &[Pose],
    skeleton: &Skeleton,
    weights: &JointWeights,
    lambdas: &BoneLambdas,
    coeffs: &LossCoefficients,
) -> Result<CompositeLoss> {
    coeffs.validate()?;
    let n = skeleton.num_joints();
    check_frames(pred, reference, n, "composite_loss")?;
    let mse = weighted_mse_loss(pred, reference, weights)?;
    let bone = bone_length_loss(pred, reference, skeleton, lambdas)?;
    let pose = bone_pose_loss(pred, reference, skeleton)?;
    let mut total = LossValue::zero(pred.len(), n);
    for (term, c) in [(&mse, coeffs.alpha), (&bone, coeffs.beta), (&pose, coeffs.gamma)] {
        if c != 0.0 {
            total.accumulate(term, c);
        }
    }
    Ok(CompositeLoss {
        total,
        mse: mse.value,
        bone: bone.value,
        pose: pose.value,
    })
}
