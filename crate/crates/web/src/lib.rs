//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each operation has a plain Rust function, used by the native tests, and a
//! `#[wasm_bindgen]` wrapper that turns errors into JS exceptions.

use rand::SeedableRng;
use signkit::losses::{bone_length_loss, bone_pose_loss, eos_classification_loss, sigmoid, weighted_mse_loss};
use signkit::posedata::{add_gaussian_noise, render_tokens, SynthConfig};
use signkit::skeleton::{compute_links, default_skeleton, reconstruct_pose, Pose};
use signkit::termination::{counter_target, eos_decision, EosPolarity};
use signkit::weighting::{BoneLambdas, JointWeights};
use signkit::{Error, Result, SeededRng};
use wasm_bindgen::prelude::*;

fn flatten(poses: &[Pose]) -> Vec<f64> {
    poses.iter().flat_map(|p| p.flat()).collect()
}

/// Joint trajectories of a rendered token sequence on the default skeleton.
#[wasm_bindgen]
pub struct Animation {
    joints: usize,
    parents: Vec<i32>,
    coords: Vec<f64>,
}

#[wasm_bindgen]
impl Animation {
    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn frames(&self) -> usize {
        self.coords.len() / (3 * self.joints)
    }

    /// Parent index per joint, -1 for the root.
    pub fn parents(&self) -> Vec<i32> {
        self.parents.clone()
    }

    /// Frame-major `x, y, z` per joint; `y` points up.
    pub fn coords(&self) -> Vec<f64> {
        self.coords.clone()
    }
}

fn parents() -> Vec<i32> {
    let skel = default_skeleton();
    (0..skel.num_joints())
        .map(|j| skel.parent(j).map_or(-1, |p| p as i32))
        .collect()
}

/// Names of the motion primitives a token list may use.
pub fn primitive_names() -> Vec<String> {
    SynthConfig::default().vocabulary
}

/// Renders whitespace-separated primitive names.
pub fn animate(tokens: &str) -> Result<Animation> {
    let tokens: Vec<String> = tokens.split_whitespace().map(str::to_string).collect();
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("no tokens given".into()));
    }
    let skel = default_skeleton();
    let frames = render_tokens(&skel, &SynthConfig::default(), &tokens)?;
    Ok(Animation {
        joints: skel.num_joints(),
        parents: parents(),
        coords: flatten(&frames),
    })
}

/// One perturbed pose and the three pose losses against its reference.
#[wasm_bindgen]
pub struct LossProbe {
    pub mse: f64,
    pub bone_length: f64,
    pub bone_pose: f64,
    reference: Vec<f64>,
    perturbed: Vec<f64>,
}

#[wasm_bindgen]
impl LossProbe {
    pub fn reference(&self) -> Vec<f64> {
        self.reference.clone()
    }

    pub fn perturbed(&self) -> Vec<f64> {
        self.perturbed.clone()
    }
}

/// Perturbs the middle frame of `token` and scores it.
///
/// `kind` is `noise` (Gaussian stddev `amount`), `shift` (sideways move by
/// `amount`), `scale` (factor `1 + amount` about the root) or `stretch` (left
/// forearm lengthened by a factor `1 + amount`).
pub fn probe_losses(token: &str, kind: &str, amount: f64, seed: u64) -> Result<LossProbe> {
    if !amount.is_finite() {
        return Err(Error::InvalidArgument("amount must be finite".into()));
    }
    let skel = default_skeleton();
    let frames = render_tokens(&skel, &SynthConfig::default(), &[token.to_string()])?;
    let reference = frames[frames.len() / 2].clone();
    let root = reference.coords[skel.root()];
    let perturbed = match kind {
        "noise" => add_gaussian_noise(&reference, amount.abs(), &mut SeededRng::seed_from_u64(seed))?,
        "shift" => reference.translated([amount, 0.0, 0.0]),
        "scale" => {
            let neg = [-root[0], -root[1], -root[2]];
            reference.translated(neg).scaled(1.0 + amount).translated(root)
        }
        "stretch" => {
            let wrist = (0..skel.num_joints())
                .find(|&j| skel.joint_name(j) == "left_wrist")
                .ok_or_else(|| Error::InvalidArgument("skeleton has no left_wrist".into()))?;
            let k = skel.bones().iter().position(|&b| b == wrist).expect("wrist is a bone");
            let mut links = compute_links(&reference, &skel)?;
            for c in links.links[k].iter_mut() {
                *c *= 1.0 + amount;
            }
            reconstruct_pose(&links, &skel)?
        }
        other => return Err(Error::InvalidArgument(format!("unknown perturbation `{other}`"))),
    };
    let (pred, refs) = ([perturbed], [reference]);
    let n = skel.num_joints();
    Ok(LossProbe {
        mse: weighted_mse_loss(&pred, &refs, &JointWeights::uniform(n))?.value,
        bone_length: bone_length_loss(&pred, &refs, &skel, &BoneLambdas::uniform(skel.num_bones()))?.value,
        bone_pose: bone_pose_loss(&pred, &refs, &skel)?.value,
        reference: flatten(&refs),
        perturbed: flatten(&pred),
    })
}

/// A synthetic EOS head over a sequence of `len` frames, plus `extra` frames
/// past the end.
#[wasm_bindgen]
pub struct EosCurve {
    /// First 1-based frame at which generation stops, 0 if it never does.
    pub stop_frame: usize,
    /// BCE of the head over the true `len` frames.
    pub loss: f64,
    continue_prob: Vec<f64>,
    counter: Vec<f64>,
}

#[wasm_bindgen]
impl EosCurve {
    /// Probability of continuing after each frame.
    pub fn continue_prob(&self) -> Vec<f64> {
        self.continue_prob.clone()
    }

    /// Ideal progress-counter values `t / len`.
    pub fn counter(&self) -> Vec<f64> {
        self.counter.clone()
    }
}

/// The head's continue logit at frame `t` is `sharpness * (len + offset - t - 0.5)`,
/// so `offset` moves its crossing early (negative) or late (positive).
/// Under `End` polarity the head emits the negated logit.
pub fn eos_curve(len: usize, extra: usize, sharpness: f64, offset: f64, tau: f64, end_polarity: bool) -> Result<EosCurve> {
    if len == 0 {
        return Err(Error::InvalidArgument("len must be at least 1".into()));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!("tau must lie in (0, 1), got {tau}")));
    }
    let polarity = if end_polarity { EosPolarity::End } else { EosPolarity::Continue };
    let sign = if end_polarity { -1.0 } else { 1.0 };
    let total = len + extra;
    let logits: Vec<f64> = (1..=total)
        .map(|t| sign * sharpness * (len as f64 + offset - t as f64 - 0.5))
        .collect();
    let continue_prob: Vec<f64> = logits.iter().map(|&z| polarity.continue_probability(sigmoid(z))).collect();
    let stop_frame = continue_prob
        .iter()
        .position(|&p| !eos_decision(p, tau))
        .map_or(0, |i| i + 1);
    let targets: Vec<f64> = (1..=len).map(|t| polarity.target(t, len)).collect();
    let loss = eos_classification_loss(&logits[..len], &targets)?.value;
    Ok(EosCurve {
        stop_frame,
        loss,
        continue_prob,
        counter: (1..=total).map(|t| counter_target(t, len)).collect(),
    })
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = primitiveNames)]
pub fn primitive_names_js() -> Vec<String> {
    primitive_names()
}

#[wasm_bindgen(js_name = animate)]
pub fn animate_js(tokens: &str) -> std::result::Result<Animation, JsError> {
    animate(tokens).map_err(js)
}

#[wasm_bindgen(js_name = probeLosses)]
pub fn probe_losses_js(token: &str, kind: &str, amount: f64, seed: u32) -> std::result::Result<LossProbe, JsError> {
    probe_losses(token, kind, amount, seed.into()).map_err(js)
}

#[wasm_bindgen(js_name = eosCurve)]
pub fn eos_curve_js(
    len: usize,
    extra: usize,
    sharpness: f64,
    offset: f64,
    tau: f64,
    end_polarity: bool,
) -> std::result::Result<EosCurve, JsError> {
    eos_curve(len, extra, sharpness, offset, tau, end_polarity).map_err(js)
}
